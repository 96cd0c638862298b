use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartitionMode {
    /// Unstratified random split; `ratio` is the train fraction.
    Holdout { ratio: f64 },
    /// Folds stratified by each image's dominant category.
    KFold { k: usize },
}

/// Record indices, each list sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Holdout { train: Vec<usize>, test: Vec<usize> },
    KFold { folds: Vec<Vec<usize>> },
}

impl Split {
    /// `(train, test)` for fold `i`; for a holdout split `i` is ignored.
    pub fn train_test(&self, i: usize) -> (Vec<usize>, Vec<usize>) {
        match self {
            Split::Holdout { train, test } => (train.clone(), test.clone()),
            Split::KFold { folds } => {
                let mut train: Vec<usize> = folds
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .flat_map(|(_, f)| f.iter().copied())
                    .collect();
                train.sort_unstable();
                (train, folds[i].clone())
            }
        }
    }
}

pub fn partition(dataset: &Dataset, mode: PartitionMode, seed: u64) -> Result<Split> {
    let n = dataset.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match mode {
        PartitionMode::Holdout { ratio } => {
            if !(ratio > 0.0 && ratio < 1.0) {
                return Err(Error::invalid(format!("holdout ratio {ratio} not in (0, 1)")));
            }
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let n_train = ((n as f64) * ratio).round() as usize;
            let mut train = idx[..n_train].to_vec();
            let mut test = idx[n_train..].to_vec();
            train.sort_unstable();
            test.sort_unstable();
            Ok(Split::Holdout { train, test })
        }
        PartitionMode::KFold { k } => {
            if k < 2 {
                return Err(Error::invalid(format!("k-fold needs k >= 2, got {k}")));
            }
            if n < k {
                return Err(Error::invalid(format!("{n} images cannot fill {k} folds")));
            }
            // Unlabeled images form their own stratum after all categories.
            let mut strata: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (i, r) in dataset.records.iter().enumerate() {
                let key = r.dominant_category().unwrap_or(usize::MAX);
                strata.entry(key).or_default().push(i);
            }
            let mut folds = vec![Vec::new(); k];
            let mut next = 0usize;
            for members in strata.values_mut() {
                members.shuffle(&mut rng);
                for &i in members.iter() {
                    folds[next % k].push(i);
                    next += 1;
                }
            }
            for f in &mut folds {
                f.sort_unstable();
            }
            Ok(Split::KFold { folds })
        }
    }
}
