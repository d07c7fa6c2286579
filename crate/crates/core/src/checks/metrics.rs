//! Dice and Hausdorff against brute-force oracles on seeded random masks.
//!
//! The oracles work on explicit pixel sets: Dice by set intersection, the
//! Hausdorff distance by all-pairs distances between foreground pixels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::metrics::{diagonal, dice, hausdorff};

use super::CheckResult;

pub const SUITE: &str = "metrics";
pub const PAIRS: usize = 200;
pub const SIZE: usize = 16;
pub const HAUSDORFF_TOLERANCE: f64 = 1e-9;

/// Foreground coordinates `(row, col)`.
fn points(mask: &[u8], width: usize) -> Vec<(usize, usize)> {
    mask.iter()
        .enumerate()
        .filter(|(_, &v)| v == 1)
        .map(|(i, _)| (i / width, i % width))
        .collect()
}

pub fn dice_oracle(a: &[u8], b: &[u8], width: usize) -> f64 {
    let pa = points(a, width);
    let pb = points(b, width);
    if pa.is_empty() && pb.is_empty() {
        return 1.0;
    }
    let common = pa.iter().filter(|p| pb.contains(p)).count();
    2.0 * common as f64 / (pa.len() + pb.len()) as f64
}

pub fn hausdorff_oracle(a: &[u8], b: &[u8], height: usize, width: usize, spacing: (f64, f64)) -> f64 {
    let pa = points(a, width);
    let pb = points(b, width);
    match (pa.is_empty(), pb.is_empty()) {
        (true, true) => return 0.0,
        (true, false) | (false, true) => {
            let (dy, dx) = (height as f64 * spacing.0, width as f64 * spacing.1);
            return (dy * dy + dx * dx).sqrt();
        }
        _ => {}
    }
    let dist = |p: (usize, usize), q: (usize, usize)| {
        let dy = (p.0 as f64 - q.0 as f64) * spacing.0;
        let dx = (p.1 as f64 - q.1 as f64) * spacing.1;
        (dy * dy + dx * dx).sqrt()
    };
    let directed = |from: &[(usize, usize)], to: &[(usize, usize)]| {
        from.iter()
            .map(|&p| to.iter().map(|&q| dist(p, q)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    directed(&pa, &pb).max(directed(&pb, &pa))
}

/// Mask with a given fill density; some pairs are forced empty.
fn random_mask(rng: &mut ChaCha8Rng, empty: bool) -> Vec<u8> {
    if empty {
        return vec![0; SIZE * SIZE];
    }
    let density = rng.random_range(0.02..0.6);
    (0..SIZE * SIZE)
        .map(|_| u8::from(rng.random::<f64>() < density))
        .collect()
}

/// `(a, b, spacing)` for case `i`; cases 0–2 are both-empty, a-empty and
/// b-empty, then every tenth pair has one side empty.
pub fn random_pair(i: usize) -> (Vec<u8>, Vec<u8>, (f64, f64)) {
    let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
    let (ea, eb) = match i {
        0 => (true, true),
        1 => (true, false),
        2 => (false, true),
        _ if i % 10 == 5 => (false, true),
        _ => (false, false),
    };
    let a = random_mask(&mut rng, ea);
    let b = random_mask(&mut rng, eb);
    let spacing = (rng.random_range(0.5..2.5), rng.random_range(0.5..2.5));
    (a, b, spacing)
}

pub fn suite() -> Vec<CheckResult> {
    let mut dice_bad = Vec::new();
    let mut hd_worst = 0.0f64;
    let mut hd_bad = Vec::new();
    let mut sym_bad = 0;
    for i in 0..PAIRS {
        let (a, b, spacing) = random_pair(i);
        match (
            dice(&a, &b),
            hausdorff(&a, &b, SIZE, SIZE, spacing),
            hausdorff(&b, &a, SIZE, SIZE, spacing),
        ) {
            (Ok(d), Ok(h), Ok(h_rev)) => {
                if d != dice_oracle(&a, &b, SIZE) {
                    dice_bad.push(i);
                }
                let err = (h - hausdorff_oracle(&a, &b, SIZE, SIZE, spacing)).abs();
                hd_worst = hd_worst.max(err);
                if err >= HAUSDORFF_TOLERANCE {
                    hd_bad.push(i);
                }
                if h != h_rev || dice(&b, &a).ok() != Some(d) {
                    sym_bad += 1;
                }
            }
            (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => {
                return vec![CheckResult::error(SUITE, format!("pair {i}"), &e)];
            }
        }
    }
    let empties = {
        let (e, f, s) = random_pair(1);
        hausdorff(&e, &f, SIZE, SIZE, s).ok() == Some(diagonal(SIZE, SIZE, s))
            && dice(&e, &e).ok() == Some(1.0)
            && hausdorff(&e, &e, SIZE, SIZE, s).ok() == Some(0.0)
            && dice(&e, &f).ok() == Some(0.0)
    };
    vec![
        CheckResult::new(
            SUITE,
            "dice vs set oracle",
            dice_bad.is_empty(),
            format!("{PAIRS} pairs {SIZE}x{SIZE}, exact mismatches {:?}", dice_bad),
        ),
        CheckResult::new(
            SUITE,
            "hausdorff vs all-pairs oracle",
            hd_bad.is_empty(),
            format!("{PAIRS} pairs, max |err| {hd_worst:.2e} mm < {HAUSDORFF_TOLERANCE:.0e}, failures {hd_bad:?}"),
        ),
        CheckResult::new(SUITE, "symmetry", sym_bad == 0, format!("{sym_bad} asymmetric pairs")),
        CheckResult::new(
            SUITE,
            "empty-mask conventions",
            empties,
            "both empty: dice 1, hd 0; one empty: dice 0, hd = diagonal",
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_hand_values() {
        let mut a = vec![0u8; 9];
        let mut b = vec![0u8; 9];
        a[0] = 1;
        b[8] = 1;
        assert_eq!(dice_oracle(&a, &b, 3), 0.0);
        let h = hausdorff_oracle(&a, &b, 3, 3, (1.0, 2.0));
        assert!((h - 20f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn edge_cases_are_covered() {
        let (a, b, _) = random_pair(0);
        assert!(a.iter().chain(&b).all(|&v| v == 0));
        let (a, b, _) = random_pair(1);
        assert!(a.iter().all(|&v| v == 0) && b.contains(&1));
    }
}
