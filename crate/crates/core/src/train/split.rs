use std::collections::BTreeMap;

use crate::data::LabeledRecord;
use crate::error::{Error, Result};
use crate::nn::RngStream;

/// Index partition of a record list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Validation share of a class of `n`: `round(n·fraction)` half away from zero,
/// then clamped to `[1, n − 1]`.
pub fn validation_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1))
}

/// Class-stratified train/validation split. Records sharing a `group` key always
/// land on the same side; a group is stratified by its majority label (ties count as 1).
///
/// Both index lists are sorted ascending.
pub fn stratified_split(records: &[LabeledRecord], val_fraction: f64, seed: u64) -> Result<SplitIndices> {
    let labels = crate::data::require_labels(records)?;
    let groups: Vec<Option<&str>> = records.iter().map(|r| r.group.as_deref()).collect();
    stratified_split_by(&labels, &groups, val_fraction, seed)
}

/// [`stratified_split`] over bare labels and optional group keys.
pub fn stratified_split_by(labels: &[usize], groups: &[Option<&str>], val_fraction: f64, seed: u64) -> Result<SplitIndices> {
    if labels.len() != groups.len() {
        return Err(Error::dims("stratified_split", &[labels.len()], &[groups.len()]));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::validation("val_fraction must be in (0, 1)"));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::validation(format!("label {l} outside {{0, 1}}")));
    }
    for class in 0..2 {
        let n = labels.iter().filter(|&&l| l == class).count();
        if n < 2 {
            return Err(Error::validation(format!(
                "stratified split needs at least 2 records of class {class}, found {n}"
            )));
        }
    }

    // Units: one per group key, one per ungrouped record, in first-appearance order.
    let mut units: Vec<Vec<usize>> = Vec::new();
    let mut by_group: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        match g {
            Some(g) => {
                let u = *by_group.entry(g).or_insert_with(|| {
                    units.push(Vec::new());
                    units.len() - 1
                });
                units[u].push(i);
            }
            None => units.push(vec![i]),
        }
    }

    let mut rng = RngStream::new(seed);
    let mut validation = Vec::new();
    for class in 0..2 {
        let mut members: Vec<&Vec<usize>> = units
            .iter()
            .filter(|u| {
                let ones = u.iter().filter(|&&i| labels[i] == 1).count();
                usize::from(2 * ones >= u.len()) == class
            })
            .collect();
        let n: usize = members.iter().map(|u| u.len()).sum();
        if n == 0 {
            continue;
        }
        let target = validation_count(n, val_fraction);
        rng.shuffle(&mut members);
        let mut taken = 0;
        for u in members {
            if taken >= target {
                break;
            }
            taken += u.len();
            validation.extend_from_slice(u);
        }
    }
    validation.sort_unstable();
    let mut in_val = vec![false; labels.len()];
    validation.iter().for_each(|&i| in_val[i] = true);
    let train = (0..labels.len()).filter(|&i| !in_val[i]).collect();
    Ok(SplitIndices { train, validation })
}
