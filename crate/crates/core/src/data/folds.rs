use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::rng::{self, Purpose};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FoldGrouping {
    /// All images of a subject stay on one side of every split.
    #[default]
    Subject,
    /// Naive per-image split, for comparison only.
    Image,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Fold {
    pub id: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_folds(ds: &Dataset, k: usize, seed: u64, grouping: FoldGrouping) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {k}")));
    }
    let mut rng = rng::stream(seed, Purpose::Folds, 0, 0);
    let mut fold_of = vec![0usize; ds.len()];
    match grouping {
        FoldGrouping::Subject => {
            let mut subjects = ds.subjects_present();
            if subjects.len() < k {
                return Err(Error::invalid(format!("{} subjects cannot fill {k} folds", subjects.len())));
            }
            subjects.shuffle(&mut rng);
            let mut slot = vec![0usize; ds.subject_names.len()];
            for (pos, &s) in subjects.iter().enumerate() {
                slot[s] = pos % k;
            }
            for (i, s) in ds.samples.iter().enumerate() {
                fold_of[i] = slot[s.subject];
            }
        }
        FoldGrouping::Image => {
            if ds.len() < k {
                return Err(Error::invalid(format!("{} images cannot fill {k} folds", ds.len())));
            }
            let mut order: Vec<usize> = (0..ds.len()).collect();
            order.shuffle(&mut rng);
            for (pos, &i) in order.iter().enumerate() {
                fold_of[i] = pos % k;
            }
        }
    }
    Ok((0..k)
        .map(|id| {
            let (test, train) = (0..ds.len()).partition(|&i| fold_of[i] == id);
            Fold { id, train, test }
        })
        .collect())
}

/// Per class, holds out `ceil(fraction * n)` of the class's subjects (never
/// all of them) for validation, so every class with two or more subjects is
/// represented even when labels are sparse. All images of a (subject, class)
/// cell, hence every view of a capture, land on the same side. Returns
/// (train, validation) sample indices.
pub fn validation_split(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("validation fraction must lie in (0, 1), got {fraction}")));
    }
    let mut by_class: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); ds.num_classes()];
    for s in &ds.samples {
        by_class[s.label].insert(s.subject);
    }
    let mut held = BTreeSet::new();
    for (c, subjects) in by_class.into_iter().enumerate() {
        if subjects.len() < 2 {
            continue;
        }
        let mut subjects: Vec<usize> = subjects.into_iter().collect();
        let n = ((fraction * subjects.len() as f64).ceil() as usize).min(subjects.len() - 1);
        subjects.shuffle(&mut rng::stream(seed, Purpose::Folds, 1, c as u64));
        held.extend(subjects[..n].iter().map(|&s| (s, c)));
    }
    if held.is_empty() {
        return Err(Error::invalid("validation split needs a class with at least 2 subjects"));
    }
    Ok((0..ds.len()).partition(|&i| !held.contains(&(ds.samples[i].subject, ds.samples[i].label))))
}

#[derive(Debug, Clone)]
pub struct LabelSubsample {
    pub dataset: Dataset,
    pub kept_groups: usize,
    pub total_groups: usize,
    /// Classes left with no labeled group; their samples still feed the
    /// label-free objectives.
    pub dropped_classes: Vec<usize>,
}

/// Marks `ceil(fraction * n_c)` capture groups of each class `c` as labeled
/// and the rest as unlabeled. Whole groups are kept or dropped together.
pub fn subsample_labels(ds: &Dataset, fraction: f64, seed: u64) -> Result<LabelSubsample> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("label fraction must lie in (0, 1], got {fraction}")));
    }
    let groups = ds.groups();
    let mut by_class = vec![Vec::new(); ds.num_classes()];
    for (g, members) in groups.iter().enumerate() {
        by_class[ds.samples[members[0]].label].push(g);
    }
    let mut keep = vec![false; groups.len()];
    let mut dropped_classes = Vec::new();
    for (c, list) in by_class.iter_mut().enumerate() {
        let n = ((fraction * list.len() as f64) - 1e-9).ceil() as usize;
        if n == 0 {
            if !list.is_empty() || ds.class_counts()[c] > 0 {
                dropped_classes.push(c);
            }
            continue;
        }
        list.shuffle(&mut rng::stream(seed, Purpose::Labels, 0, c as u64));
        for &g in &list[..n] {
            keep[g] = true;
        }
    }
    let mut out = ds.clone();
    for (g, members) in groups.iter().enumerate() {
        for &i in members {
            out.samples[i].labeled = ds.samples[i].labeled && keep[g];
        }
    }
    Ok(LabelSubsample {
        kept_groups: keep.iter().filter(|&&k| k).count(),
        total_groups: groups.len(),
        dataset: out,
        dropped_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};

    fn ds(subjects: usize) -> Dataset {
        synth_generate(
            &SynthConfig {
                subjects,
                image_size: 16,
                ..SynthConfig::default()
            },
            0,
            None,
        )
        .unwrap()
    }

    #[test]
    fn subject_folds_partition_without_leakage() {
        let d = ds(12);
        let folds = split_folds(&d, 5, 3, FoldGrouping::Subject).unwrap();
        let mut seen = vec![0; d.len()];
        for f in &folds {
            let train: BTreeSet<usize> = f.train.iter().map(|&i| d.samples[i].subject).collect();
            let test: BTreeSet<usize> = f.test.iter().map(|&i| d.samples[i].subject).collect();
            assert!(train.is_disjoint(&test));
            assert!(test.len() == 2 || test.len() == 3);
            assert_eq!(f.train.len() + f.test.len(), d.len());
            for &i in &f.test {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert_eq!(folds, split_folds(&d, 5, 3, FoldGrouping::Subject).unwrap());
        assert_ne!(folds, split_folds(&d, 5, 4, FoldGrouping::Subject).unwrap());
    }

    #[test]
    fn ten_folds_of_140_subjects_hold_14_each() {
        let d = ds(140);
        for f in split_folds(&d, 10, 0, FoldGrouping::Subject).unwrap() {
            let test: BTreeSet<usize> = f.test.iter().map(|&i| d.samples[i].subject).collect();
            assert_eq!(test.len(), 14);
        }
    }

    #[test]
    fn too_few_subjects_is_an_error() {
        assert!(split_folds(&ds(3), 5, 0, FoldGrouping::Subject).is_err());
        assert!(split_folds(&ds(3), 5, 0, FoldGrouping::Image).is_ok());
        assert!(split_folds(&ds(3), 1, 0, FoldGrouping::Subject).is_err());
    }

    #[test]
    fn label_subsampling_counts() {
        let d = ds(50);
        let full = subsample_labels(&d, 1.0, 0).unwrap();
        assert_eq!(full.dataset, d);
        let half = subsample_labels(&d, 0.5, 0).unwrap();
        assert_eq!(half.dataset.labeled_subset().len(), 1000);
        assert_eq!(half.kept_groups, 200);
        let tenth = subsample_labels(&d, 0.1, 0).unwrap();
        let lab = tenth.dataset.labeled_subset();
        assert_eq!(lab.len(), 200);
        assert!(lab.class_counts().iter().all(|&c| c == 25));
        for g in tenth.dataset.groups() {
            let flags: BTreeSet<bool> = g.iter().map(|&i| tenth.dataset.samples[i].labeled).collect();
            assert_eq!(flags.len(), 1);
        }
        assert!(subsample_labels(&d, 0.0, 0).is_err());
        assert!(subsample_labels(&d, 1.5, 0).is_err());
    }

    #[test]
    fn validation_split_is_class_stratified() {
        let d = ds(40);
        let cell = |i: usize| (d.samples[i].subject, d.samples[i].label);
        let (train, val) = validation_split(&d, 0.1, 1).unwrap();
        assert_eq!(train.len() + val.len(), d.len());
        let vc: BTreeSet<(usize, usize)> = val.iter().map(|&i| cell(i)).collect();
        assert!(train.iter().all(|&i| !vc.contains(&cell(i))));
        for c in 0..d.num_classes() {
            assert_eq!(vc.iter().filter(|x| x.1 == c).count(), 4);
        }
        for g in d.groups() {
            assert!(g.iter().all(|i| val.contains(i)) || g.iter().all(|i| !val.contains(i)));
        }

        // sparse labels: every class still reaches validation
        let sparse = subsample_labels(&d, 0.1, 0).unwrap().dataset.labeled_subset();
        let (_, val) = validation_split(&sparse, 0.1, 1).unwrap();
        let classes: BTreeSet<usize> = val.iter().map(|&i| sparse.samples[i].label).collect();
        assert_eq!(classes.len(), sparse.num_classes());
        assert!(validation_split(&d, 1.0, 0).is_err());
    }
}
