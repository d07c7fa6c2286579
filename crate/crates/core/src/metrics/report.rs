use std::fmt::Write as _;

use crate::data::MaskStack;
use crate::error::{Error, Result};

use super::overlap::{dice, hausdorff};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    Top,
    Mid,
    Low,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Top, Region::Mid, Region::Low];

    pub fn as_str(self) -> &'static str {
        match self {
            Region::Top => "top",
            Region::Mid => "mid",
            Region::Low => "low",
        }
    }
}

/// Base→apex thirds: the first `ceil(S/3)` slices are top, the last
/// `floor(S/3)` low, the rest mid.
pub fn assign_regions(slices: usize) -> Result<Vec<Region>> {
    if slices < 3 {
        return Err(Error::invalid(
            "assign_regions",
            format!("need at least 3 slices, got {slices}"),
        ));
    }
    let top = slices.div_ceil(3);
    let low = slices / 3;
    Ok((0..slices)
        .map(|s| {
            if s < top {
                Region::Top
            } else if s >= slices - low {
                Region::Low
            } else {
                Region::Mid
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Regression {
    pub slope: f64,
    pub intercept: f64,
    /// Pearson correlation; NaN when the automated areas are constant.
    pub r: f64,
}

/// Least-squares fit `auto = slope · manual + intercept` and Pearson R.
pub fn area_regression(manual: &[f64], auto: &[f64]) -> Result<Regression> {
    if manual.len() != auto.len() || manual.len() < 3 {
        return Err(Error::invalid(
            "area_regression",
            format!(
                "need two equal-length lists of at least 3, got {} and {}",
                manual.len(),
                auto.len()
            ),
        ));
    }
    let n = manual.len() as f64;
    let mx = manual.iter().sum::<f64>() / n;
    let my = auto.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&x, &y) in manual.iter().zip(auto) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::invalid(
            "area_regression",
            "manual areas are constant; R is undefined",
        ));
    }
    let slope = sxy / sxx;
    Ok(Regression {
        slope,
        intercept: my - slope * mx,
        r: if syy == 0.0 { f64::NAN } else { sxy / (sxx * syy).sqrt() },
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SliceMetrics {
    pub stack_id: String,
    pub slice: usize,
    pub region: Region,
    pub dice: f64,
    pub hd_mm: f64,
    pub manual_area_mm2: f64,
    pub auto_area_mm2: f64,
}

/// Per-slice metrics of a predicted stack against its ground truth.
pub fn evaluate_stack(pred: &MaskStack, truth: &MaskStack, spacing: (f64, f64)) -> Result<Vec<SliceMetrics>> {
    if pred.dims != truth.dims {
        return Err(Error::ShapeMismatch {
            op: "evaluate_stack",
            lhs: vec![pred.dims.0, pred.dims.1, pred.dims.2],
            rhs: vec![truth.dims.0, truth.dims.1, truth.dims.2],
        });
    }
    let (s, h, w) = truth.dims;
    let regions = assign_regions(s)?;
    let px = spacing.0 * spacing.1;
    (0..s)
        .map(|i| {
            let (p, t) = (pred.slice(i), truth.slice(i));
            Ok(SliceMetrics {
                stack_id: truth.id.clone(),
                slice: i,
                region: regions[i],
                dice: dice(p, t)?,
                hd_mm: hausdorff(p, t, h, w, spacing)?,
                manual_area_mm2: truth.area(i) as f64 * px,
                auto_area_mm2: pred.area(i) as f64 * px,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionSummary {
    /// `top`, `mid`, `low` or `all`.
    pub region: &'static str,
    pub count: usize,
    pub di_mean: f64,
    pub di_sd: f64,
    pub hd_mean: f64,
    pub hd_sd: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub slices: Vec<SliceMetrics>,
    pub regions: Vec<RegionSummary>,
    /// Absent when fewer than 3 slices or constant manual areas.
    pub regression: Option<Regression>,
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn summarize_group(region: &'static str, rows: &[&SliceMetrics]) -> RegionSummary {
    let di: Vec<f64> = rows.iter().map(|m| m.dice).collect();
    let hd: Vec<f64> = rows.iter().map(|m| m.hd_mm).collect();
    let (di_mean, di_sd) = mean_sd(&di);
    let (hd_mean, hd_sd) = mean_sd(&hd);
    RegionSummary {
        region,
        count: rows.len(),
        di_mean,
        di_sd,
        hd_mean,
        hd_sd,
    }
}

/// Aggregates per-slice rows into top/mid/low/all summaries and the area fit.
pub fn summarize(slices: Vec<SliceMetrics>) -> MetricsReport {
    let mut regions: Vec<RegionSummary> = Region::ALL
        .iter()
        .map(|&r| {
            let rows: Vec<&SliceMetrics> = slices.iter().filter(|m| m.region == r).collect();
            summarize_group(r.as_str(), &rows)
        })
        .collect();
    regions.push(summarize_group("all", &slices.iter().collect::<Vec<_>>()));
    let manual: Vec<f64> = slices.iter().map(|m| m.manual_area_mm2).collect();
    let auto: Vec<f64> = slices.iter().map(|m| m.auto_area_mm2).collect();
    MetricsReport {
        regression: area_regression(&manual, &auto).ok(),
        regions,
        slices,
    }
}

impl MetricsReport {
    pub fn mean_dice(&self) -> f64 {
        self.regions.last().map_or(f64::NAN, |r| r.di_mean)
    }

    /// `stack_id,slice,region,dice,hd_mm`, one row per slice.
    pub fn slices_csv(&self) -> String {
        let mut out = String::from("stack_id,slice,region,dice,hd_mm\n");
        for m in &self.slices {
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6}",
                m.stack_id,
                m.slice,
                m.region.as_str(),
                m.dice,
                m.hd_mm
            );
        }
        out
    }

    /// `region,di_mean,di_sd,hd_mean,hd_sd` for top, mid, low and all.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("region,di_mean,di_sd,hd_mean,hd_sd\n");
        for r in &self.regions {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6}",
                r.region, r.di_mean, r.di_sd, r.hd_mean, r.hd_sd
            );
        }
        out
    }

    /// Human-readable table with the conventions used for empty masks.
    pub fn text(&self, resize_note: &str) -> String {
        let mut out = String::from("region  n     DI mean (sd)       HD mean (sd) mm\n");
        for r in &self.regions {
            let _ = writeln!(
                out,
                "{:<6} {:>4}  {:.4} ({:.4})    {:.3} ({:.3})",
                r.region, r.count, r.di_mean, r.di_sd, r.hd_mean, r.hd_sd
            );
        }
        match &self.regression {
            Some(g) => {
                let _ = writeln!(
                    out,
                    "\narea regression (auto = slope * manual + intercept, mm^2): slope {:.4}, intercept {:.3}, R {:.4}",
                    g.slope, g.intercept, g.r
                );
            }
            None => out.push_str("\narea regression: undefined (constant manual areas or fewer than 3 slices)\n"),
        }
        out.push_str(
            "\nconventions: predictions thresholded at 0.5; Dice of two empty masks = 1; \
             Hausdorff of two empty masks = 0, of exactly one empty mask = image diagonal in mm; \
             SD is the sample standard deviation (0 for a single slice); \
             regions are base-to-apex thirds (top = first ceil(S/3), low = last floor(S/3)).\n",
        );
        if !resize_note.is_empty() {
            out.push_str(resize_note);
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(s: usize) -> [usize; 3] {
        let r = assign_regions(s).unwrap();
        Region::ALL.map(|g| r.iter().filter(|&&x| x == g).count())
    }

    #[test]
    fn region_rule() {
        assert_eq!(counts(12), [4, 4, 4]);
        assert_eq!(counts(3), [1, 1, 1]);
        assert_eq!(counts(10), [4, 3, 3]);
        assert_eq!(counts(11), [4, 4, 3]);
        assert!(assign_regions(2).is_err());
    }

    #[test]
    fn regression_identities() {
        let m = [1.0, 2.0, 5.0, 7.0];
        let g = area_regression(&m, &m).unwrap();
        assert!((g.slope - 1.0).abs() < 1e-12 && g.intercept.abs() < 1e-12 && (g.r - 1.0).abs() < 1e-12);
        let twice: Vec<f64> = m.iter().map(|v| 2.0 * v).collect();
        let g = area_regression(&m, &twice).unwrap();
        assert!((g.slope - 2.0).abs() < 1e-12 && (g.r - 1.0).abs() < 1e-12);
        assert!(area_regression(&[3.0; 4], &m).is_err());
    }

    #[test]
    fn regression_hand_oracle() {
        // manual mean 2, auto mean 31/15; sxx = 2, sxy = 2.1, syy = 2.2066...
        let g = area_regression(&[1.0, 2.0, 3.0], &[1.1, 1.9, 3.2]).unwrap();
        let my = 6.2 / 3.0;
        let syy: f64 = [1.1, 1.9, 3.2].iter().map(|y: &f64| (y - my) * (y - my)).sum();
        assert!((g.slope - 1.05).abs() < 1e-12);
        assert!((g.intercept - (my - 2.1)).abs() < 1e-12);
        assert!((g.r - 2.1 / (2.0 * syy).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn regional_means_recompose() {
        let truth = MaskStack::new(
            "t",
            (5, 2, 2),
            vec![1, 1, 0, 0, 1, 0, 0, 0, 1, 1, 1, 1, 0, 1, 0, 0, 1, 0, 0, 1],
        )
        .unwrap();
        let pred = MaskStack::new(
            "t",
            (5, 2, 2),
            vec![1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 1, 1, 0, 1, 1, 0, 0, 0, 0, 0],
        )
        .unwrap();
        let rows = evaluate_stack(&pred, &truth, (1.0, 1.0)).unwrap();
        let rep = summarize(rows);
        let weighted: f64 = rep.regions[..3].iter().map(|r| r.di_mean * r.count as f64).sum::<f64>() / 5.0;
        assert!((weighted - rep.mean_dice()).abs() < 1e-12);
        assert_eq!(rep.slices_csv().lines().count(), 6);
        assert_eq!(rep.summary_csv().lines().count(), 5);
    }
}
