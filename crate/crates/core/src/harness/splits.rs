//! Patient-level stratified k-fold splitting and stratified train-set
//! subsampling for the train-fraction ablation.

use super::TrainError;
use crate::seeding::{self, domain};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// One cross-validation fold, split at patient granularity.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train_patient_ids: Vec<String>,
    pub val_patient_ids: Vec<String>,
}

/// Stratified k-fold at patient level.
///
/// Patients are grouped by class, shuffled within class, then dealt to
/// folds with one round-robin pointer that keeps running across classes;
/// each fold therefore gets floor or ceil of `n_class / k` per class and
/// fold sizes stay within one patient of each other.
///
/// A class needs at least 2 patients; below that no fold assignment can
/// give both a train and a validation side of the class. Classes with
/// fewer than k patients are allowed (some validation folds then lack the
/// class and their metrics come back undefined).
pub fn stratified_kfold(
    patient_ids: &[String],
    labels: &[u8],
    k: usize,
    seed: u64,
) -> Result<Vec<FoldSplit>, TrainError> {
    assert_eq!(patient_ids.len(), labels.len());
    if k < 2 {
        return Err(TrainError::BadFoldCount(k));
    }
    let mut by_class: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    for (&class, members) in &by_class {
        if members.len() < 2 {
            return Err(TrainError::ClassTooSmall {
                class,
                count: members.len(),
                k,
            });
        }
    }

    let mut fold_members: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut pointer = 0usize;
    for (&class, members) in &by_class {
        let mut shuffled = members.clone();
        let mut rng = seeding::stream(&[seed, domain::KFOLD, u64::from(class)]);
        shuffled.shuffle(&mut rng);
        for idx in shuffled {
            fold_members[pointer % k].push(idx);
            pointer += 1;
        }
    }

    Ok((0..k)
        .map(|fold_index| {
            let val: Vec<String> = fold_members[fold_index]
                .iter()
                .map(|&i| patient_ids[i].clone())
                .collect();
            let train: Vec<String> = (0..k)
                .filter(|&f| f != fold_index)
                .flat_map(|f| fold_members[f].iter().map(|&i| patient_ids[i].clone()))
                .collect();
            FoldSplit {
                fold_index,
                train_patient_ids: train,
                val_patient_ids: val,
            }
        })
        .collect())
}

/// Keep `floor(fraction * n)` training patients, stratified per class;
/// the remainder after per-class floors goes to the classes with the
/// largest fractional parts.
pub fn subsample_stratified(
    patient_ids: &[String],
    labels: &[u8],
    fraction: f64,
    seed: u64,
) -> Result<Vec<String>, TrainError> {
    assert_eq!(patient_ids.len(), labels.len());
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(TrainError::BadFraction(fraction));
    }
    if fraction == 1.0 {
        return Ok(patient_ids.to_vec());
    }
    let n = patient_ids.len();
    let target = ((fraction * n as f64).floor() as usize).max(1);

    let mut by_class: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    let classes: Vec<u8> = by_class.keys().copied().collect();
    let mut take: BTreeMap<u8, usize> = BTreeMap::new();
    let mut fractional: Vec<(f64, u8)> = Vec::new();
    let mut assigned = 0usize;
    for &c in &classes {
        let exact = fraction * by_class[&c].len() as f64;
        let floor = exact.floor() as usize;
        take.insert(c, floor);
        assigned += floor;
        fractional.push((exact - floor as f64, c));
    }
    // Largest fractional remainder first; ties favor the smaller class id.
    fractional.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut i = 0;
    while assigned < target {
        let c = fractional[i % fractional.len()].1;
        if take[&c] < by_class[&c].len() {
            *take.get_mut(&c).unwrap() += 1;
            assigned += 1;
        }
        i += 1;
    }
    // Guard: a class emptied entirely would break the weighted sampler.
    for &c in &classes {
        if take[&c] == 0 && !by_class[&c].is_empty() {
            *take.get_mut(&c).unwrap() = 1;
        }
    }

    let mut kept = Vec::new();
    for &c in &classes {
        let mut members = by_class[&c].clone();
        let mut rng = seeding::stream(&[seed, domain::SUBSAMPLE, u64::from(c)]);
        members.shuffle(&mut rng);
        kept.extend(members.into_iter().take(take[&c]));
    }
    kept.sort_unstable();
    Ok(kept.into_iter().map(|i| patient_ids[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i:03}")).collect()
    }

    #[test]
    fn folds_are_patient_disjoint_and_cover() {
        let patients = ids(23);
        let labels: Vec<u8> = (0..23).map(|i| u8::from(i % 3 == 0)).collect();
        let folds = stratified_kfold(&patients, &labels, 5, 7).unwrap();
        assert_eq!(folds.len(), 5);
        let mut seen_val: HashSet<String> = HashSet::new();
        for f in &folds {
            let train: HashSet<_> = f.train_patient_ids.iter().collect();
            let val: HashSet<_> = f.val_patient_ids.iter().collect();
            assert!(train.is_disjoint(&val), "leakage in fold {}", f.fold_index);
            assert_eq!(train.len() + val.len(), 23);
            for v in &f.val_patient_ids {
                assert!(seen_val.insert(v.clone()), "{v} validated twice");
            }
        }
        assert_eq!(seen_val.len(), 23);
    }

    #[test]
    fn ten_patients_four_positive_spread_over_five_folds() {
        let patients = ids(10);
        let labels = vec![1, 1, 1, 1, 0, 0, 0, 0, 0, 0];
        let folds = stratified_kfold(&patients, &labels, 5, 3).unwrap();
        for f in &folds {
            assert_eq!(f.val_patient_ids.len(), 2, "fold sizes must balance");
            let positives = f
                .val_patient_ids
                .iter()
                .filter(|p| {
                    let idx: usize = p[1..].parse().unwrap();
                    labels[idx] == 1
                })
                .count();
            assert!(positives <= 1, "round-robin caps positives per fold");
        }
    }

    #[test]
    fn balanced_eight_patients_two_folds() {
        let patients = ids(8);
        let labels = vec![0, 0, 0, 0, 1, 1, 1, 1];
        let folds = stratified_kfold(&patients, &labels, 2, 1).unwrap();
        for f in &folds {
            let (mut pos, mut neg) = (0, 0);
            for p in &f.val_patient_ids {
                let idx: usize = p[1..].parse().unwrap();
                if labels[idx] == 1 {
                    pos += 1;
                } else {
                    neg += 1;
                }
            }
            assert_eq!((pos, neg), (2, 2));
        }
    }

    #[test]
    fn same_seed_same_folds() {
        let patients = ids(15);
        let labels: Vec<u8> = (0..15).map(|i| u8::from(i % 2 == 0)).collect();
        assert_eq!(
            stratified_kfold(&patients, &labels, 3, 11).unwrap(),
            stratified_kfold(&patients, &labels, 3, 11).unwrap()
        );
        assert_ne!(
            stratified_kfold(&patients, &labels, 3, 11).unwrap(),
            stratified_kfold(&patients, &labels, 3, 12).unwrap()
        );
    }

    #[test]
    fn degenerate_class_is_named_in_error() {
        let patients = ids(6);
        let labels = vec![0, 0, 0, 0, 0, 1];
        match stratified_kfold(&patients, &labels, 3, 0) {
            Err(TrainError::ClassTooSmall { class: 1, count: 1, k: 3 }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn class_smaller_than_k_still_splits_with_capped_presence() {
        // 3 positives over 5 folds: two validation folds lack positives,
        // none holds more than one.
        let patients = ids(12);
        let labels = vec![1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0];
        let folds = stratified_kfold(&patients, &labels, 5, 2).unwrap();
        for f in &folds {
            let pos = f
                .val_patient_ids
                .iter()
                .filter(|p| labels[p[1..].parse::<usize>().unwrap()] == 1)
                .count();
            assert!(pos <= 1);
        }
    }

    #[test]
    fn per_fold_class_counts_within_one_of_proportional() {
        let patients = ids(48);
        let labels: Vec<u8> = (0..48).map(|i| u8::from(i % 5 < 2)).collect();
        let k = 5;
        let folds = stratified_kfold(&patients, &labels, k, 9).unwrap();
        let total_pos = labels.iter().filter(|&&y| y == 1).count();
        for f in &folds {
            let pos = f
                .val_patient_ids
                .iter()
                .filter(|p| labels[p[1..].parse::<usize>().unwrap()] == 1)
                .count();
            let lo = total_pos / k;
            let hi = lo + 1;
            assert!(pos == lo || pos == hi, "fold {} has {pos} positives", f.fold_index);
        }
    }

    #[test]
    fn subsample_forty_percent_of_85() {
        let patients = ids(85);
        let labels: Vec<u8> = (0..85).map(|i| u8::from(i < 25)).collect();
        let kept = subsample_stratified(&patients, &labels, 0.4, 5).unwrap();
        assert_eq!(kept.len(), 34);
        let pos = kept
            .iter()
            .filter(|p| labels[p[1..].parse::<usize>().unwrap()] == 1)
            .count();
        assert_eq!(pos, 10); // floor(0.4 * 25)
    }

    #[test]
    fn subsample_full_fraction_is_identity() {
        let patients = ids(9);
        let labels = vec![0, 1, 0, 1, 0, 1, 0, 1, 0];
        let kept = subsample_stratified(&patients, &labels, 1.0, 5).unwrap();
        assert_eq!(kept, patients);
    }

    #[test]
    fn subsample_is_deterministic() {
        let patients = ids(30);
        let labels: Vec<u8> = (0..30).map(|i| u8::from(i % 3 == 0)).collect();
        assert_eq!(
            subsample_stratified(&patients, &labels, 0.6, 8).unwrap(),
            subsample_stratified(&patients, &labels, 0.6, 8).unwrap()
        );
    }
}
