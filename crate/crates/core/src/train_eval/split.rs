use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::signal_io::ArrhythmiaClass;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for Fractions {
    fn default() -> Self {
        Self { train: 0.70, val: 0.15, test: 0.15 }
    }
}

/// Record-level split; lists are sorted by record id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub fractions: Fractions,
    pub seed: u64,
}

impl DatasetSplit {
    /// Fails with the first record id found in two lists.
    pub fn check_disjoint(&self) -> Result<(), TrainError> {
        let mut seen = HashSet::new();
        for id in self.train.iter().chain(&self.val).chain(&self.test) {
            if !seen.insert(id.as_str()) {
                return Err(TrainError::Leakage(id.clone()));
            }
        }
        Ok(())
    }
}

/// Stratified split. Within each class the record ids are sorted, shuffled
/// with a ChaCha8 stream derived from `seed`, and cut into
/// `round(n * val)` validation and `round(n * test)` test records; the rest
/// train.
pub fn split_dataset(
    records: &[(String, ArrhythmiaClass)],
    fractions: Fractions,
    seed: u64,
) -> Result<DatasetSplit, TrainError> {
    let f = [fractions.train, fractions.val, fractions.test];
    if f.iter().any(|v| !v.is_finite() || *v < 0.0) || ((f[0] + f[1] + f[2]) - 1.0).abs() > 1e-9 {
        return Err(TrainError::InvalidFractions(f));
    }
    let mut by_class: BTreeMap<ArrhythmiaClass, Vec<&str>> = BTreeMap::new();
    for (id, class) in records {
        by_class.entry(*class).or_default().push(id);
    }
    let mut split = DatasetSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        fractions,
        seed,
    };
    for class in ArrhythmiaClass::ALL {
        let mut ids = by_class.remove(&class).unwrap_or_default();
        ids.sort_unstable();
        ids.dedup();
        let n = ids.len();
        let n_val = (n as f64 * fractions.val).round() as usize;
        let n_test = (n as f64 * fractions.test).round() as usize;
        let too_small = |split: &'static str| TrainError::ClassTooSmall {
            class: class.to_string(),
            available: n,
            split,
        };
        if n_val == 0 && fractions.val > 0.0 || n_val > n {
            return Err(too_small("val"));
        }
        if n_test == 0 && fractions.test > 0.0 || n_val + n_test > n {
            return Err(too_small("test"));
        }
        if n_val + n_test == n {
            return Err(too_small("train"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(class.index() as u64 + 1);
        ids.shuffle(&mut rng);
        split.val.extend(ids[..n_val].iter().map(|s| s.to_string()));
        split.test.extend(ids[n_val..n_val + n_test].iter().map(|s| s.to_string()));
        split.train.extend(ids[n_val + n_test..].iter().map(|s| s.to_string()));
    }
    split.train.sort();
    split.val.sort();
    split.test.sort();
    split.check_disjoint()?;
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(per_class: usize) -> Vec<(String, ArrhythmiaClass)> {
        ArrhythmiaClass::ALL
            .into_iter()
            .flat_map(|c| (0..per_class).map(move |i| (format!("{c}_{i:03}"), c)))
            .collect()
    }

    #[test]
    fn exact_fractions() {
        let s = split_dataset(&records(100), Fractions::default(), 7).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (280, 60, 60));
        for c in ArrhythmiaClass::ALL {
            let count = |v: &[String]| v.iter().filter(|id| id.starts_with(c.as_str())).count();
            assert_eq!((count(&s.train), count(&s.val), count(&s.test)), (70, 15, 15));
        }
    }

    #[test]
    fn deterministic_and_seed_dependent() {
        let r = records(20);
        let a = split_dataset(&r, Fractions::default(), 1).unwrap();
        assert_eq!(a, split_dataset(&r, Fractions::default(), 1).unwrap());
        assert_ne!(a.test, split_dataset(&r, Fractions::default(), 2).unwrap().test);
    }

    #[test]
    fn too_small_class() {
        let r = records(3);
        assert!(matches!(
            split_dataset(&r, Fractions::default(), 0),
            Err(TrainError::ClassTooSmall { .. })
        ));
        let bad = Fractions { train: 0.5, val: 0.5, test: 0.5 };
        assert!(matches!(split_dataset(&r, bad, 0), Err(TrainError::InvalidFractions(_))));
    }

    #[test]
    fn leakage_detected() {
        let mut s = split_dataset(&records(10), Fractions::default(), 0).unwrap();
        s.test.push(s.train[0].clone());
        assert!(matches!(s.check_disjoint(), Err(TrainError::Leakage(_))));
    }
}
