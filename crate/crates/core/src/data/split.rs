use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.70, 0.15, 0.15];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}` (train, val, test)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetManifest {
    pub fn ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// One `<split>\t<id>` line per stack.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for split in Split::ALL {
            for id in self.ids(split) {
                out.push_str(split.as_str());
                out.push('\t');
                out.push_str(id);
                out.push('\n');
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = DatasetManifest {
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        };
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (split, id) = line
                .split_once('\t')
                .ok_or_else(|| Error::Config(format!("manifest line {}: expected `<split>\\t<id>`", n + 1)))?;
            let split: Split = split.parse()?;
            match split {
                Split::Train => m.train.push(id.to_string()),
                Split::Val => m.val.push(id.to_string()),
                Split::Test => m.test.push(id.to_string()),
            }
        }
        Ok(m)
    }
}

/// Shuffles `ids` with `seed` and cuts the result into train/val/test.
///
/// Each split first gets `floor(fraction · n)` ids; the leftover ids are
/// handed out one at a time to train, val, test, train, ...
pub fn split_dataset(ids: &[String], fractions: [f64; 3], seed: u64) -> Result<DatasetManifest> {
    if ids.len() < 3 {
        return Err(Error::Config(format!(
            "need at least 3 stacks to split, got {}",
            ids.len()
        )));
    }
    if fractions.iter().any(|f| f.is_nan() || *f < 0.0) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    let n = ids.len();
    let mut counts = fractions.map(|f| (f * n as f64 + 1e-9).floor() as usize);
    let mut k = 0;
    while counts.iter().sum::<usize>() < n {
        counts[k % 3] += 1;
        k += 1;
    }
    let mut order = ids.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = order.split_off(counts[0] + counts[1]);
    let val = order.split_off(counts[0]);
    Ok(DatasetManifest {
        train: order,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("id{i}")).collect()
    }

    #[test]
    fn counts_follow_rounding_rule() {
        let m = split_dataset(&ids(100), DEFAULT_FRACTIONS, 1).unwrap();
        assert_eq!((m.train.len(), m.val.len(), m.test.len()), (70, 15, 15));
        let m = split_dataset(&ids(10), DEFAULT_FRACTIONS, 1).unwrap();
        assert_eq!((m.train.len(), m.val.len(), m.test.len()), (8, 1, 1));
        let m = split_dataset(&ids(3), DEFAULT_FRACTIONS, 1).unwrap();
        assert_eq!((m.train.len(), m.val.len(), m.test.len()), (3, 0, 0));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(split_dataset(&ids(2), DEFAULT_FRACTIONS, 0).is_err());
        assert!(split_dataset(&ids(10), [0.5, 0.2, 0.2], 0).is_err());
    }

    #[test]
    fn manifest_text_round_trip() {
        let m = split_dataset(&ids(20), DEFAULT_FRACTIONS, 9).unwrap();
        assert_eq!(DatasetManifest::parse(&m.to_text()).unwrap(), m);
        assert!(DatasetManifest::parse("bogus\tx\n").is_err());
    }
}
