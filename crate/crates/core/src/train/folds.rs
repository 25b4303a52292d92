use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::train::TrainError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub val: Vec<String>,
}

/// Cross-validation plan; every case validates in exactly one fold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    pub fn fold(&self, index: usize) -> Result<&Fold, TrainError> {
        self.folds.get(index).ok_or(TrainError::FoldOutOfRange { fold: index, folds: self.folds.len() })
    }
}

/// Shuffles deterministically by `seed`, then deals cases round-robin into
/// `folds` validation sets; each training set is the complement.
pub fn kfold_split(case_ids: &[String], folds: usize, seed: u64) -> Result<FoldPlan, TrainError> {
    if folds == 0 || folds > case_ids.len() {
        return Err(TrainError::TooManyFolds { folds, cases: case_ids.len() });
    }
    let mut order: Vec<&String> = case_ids.iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val: Vec<Vec<String>> = vec![Vec::new(); folds];
    for (i, id) in order.iter().enumerate() {
        val[i % folds].push((*id).clone());
    }
    let folds = val
        .into_iter()
        .map(|v| {
            let train = order.iter().filter(|id| !v.contains(id)).map(|id| (*id).clone()).collect();
            Fold { train, val: v }
        })
        .collect();
    Ok(FoldPlan { folds })
}
