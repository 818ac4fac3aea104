use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::labels::LabeledCohort;
use super::DataError;

/// Patient ids of one cross-validation round.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Patient-level stratified k-fold split.
///
/// Patients are stratified by their patient-level label, shuffled within
/// each stratum, and dealt round-robin into `k` parts. Round `i` tests on
/// part `i` and validates on part `i + 1`; the rest trains. With `k = 2`
/// the non-test part is halved (stratified) into train and validation.
pub fn split_stratified_kfold(cohort: &LabeledCohort, k: usize, seed: u64) -> Result<Vec<Fold>, DataError> {
    if k < 2 {
        return Err(DataError::Invalid(format!("k must be at least 2, got {k}")));
    }
    let mut strata: [Vec<&str>; 2] = [Vec::new(), Vec::new()];
    for r in &cohort.records {
        strata[r.patient_label() as usize].push(&r.record.patient_id);
    }
    for (class, ids) in strata.iter_mut().enumerate() {
        if ids.len() < k {
            return Err(DataError::Invalid(format!(
                "class {class} has {} patients, fewer than k = {k}",
                ids.len()
            )));
        }
        ids.sort_unstable();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: Vec<Vec<String>> = vec![Vec::new(); k];
    let mut slot = 0;
    for ids in strata.iter_mut() {
        ids.shuffle(&mut rng);
        for id in ids.iter() {
            parts[slot % k].push(id.to_string());
            slot += 1;
        }
    }

    let folds = (0..k)
        .map(|i| {
            let test = parts[i].clone();
            if k == 2 {
                let other = &parts[1 - i];
                let (train, val) = halve_stratified(other, cohort);
                return Fold {
                    index: i,
                    train,
                    val,
                    test,
                };
            }
            let v = (i + 1) % k;
            let train = (0..k)
                .filter(|&j| j != i && j != v)
                .flat_map(|j| parts[j].iter().cloned())
                .collect();
            Fold {
                index: i,
                train,
                val: parts[v].clone(),
                test,
            }
        })
        .collect();
    Ok(folds)
}

fn halve_stratified(ids: &[String], cohort: &LabeledCohort) -> (Vec<String>, Vec<String>) {
    let label = |id: &String| cohort.find(id).map_or(0, |r| r.patient_label());
    let (mut train, mut val) = (Vec::new(), Vec::new());
    let mut n = 0;
    for class in [0u8, 1] {
        for id in ids.iter().filter(|id| label(id) == class) {
            if n % 2 == 0 { &mut train } else { &mut val }.push(id.clone());
            n += 1;
        }
    }
    (train, val)
}
