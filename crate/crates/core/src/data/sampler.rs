use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::rng::{self, Purpose};
use crate::{Error, Result};

/// How capture groups are arranged into batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BatchComposition {
    /// Groups in uniformly random order.
    #[default]
    Random,
    /// Subjects in random order, each contributing all its groups
    /// consecutively. Captures of one subject with other labels then share
    /// a batch, so the view term must separate them by more than identity.
    SubjectBlocks,
}

/// Draws batches of whole capture groups: every selected group contributes
/// two distinct views (one when the dataset has a single view), so each
/// anchor has view positives beyond its own augmentation sibling.
#[derive(Debug, Clone)]
pub struct ContrastSampler {
    groups: Vec<Vec<usize>>,
    /// Subject of each entry of `groups`.
    subjects: Vec<usize>,
    composition: BatchComposition,
    per_group: usize,
    groups_per_batch: usize,
    /// Groups too small to supply `per_group` distinct views.
    pub skipped_groups: usize,
}

impl ContrastSampler {
    pub fn new(ds: &Dataset, batch_images: usize) -> Result<Self> {
        Self::with_composition(ds, batch_images, BatchComposition::Random)
    }

    pub fn with_composition(ds: &Dataset, batch_images: usize, composition: BatchComposition) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::invalid("cannot sample from an empty dataset"));
        }
        if batch_images < 2 {
            return Err(Error::invalid(format!("batch must hold at least 2 images, got {batch_images}")));
        }
        let per_group = if ds.num_views() >= 2 { 2 } else { 1 };
        if batch_images % per_group != 0 {
            return Err(Error::invalid(format!(
                "batch of {batch_images} images cannot be split into groups of {per_group} views"
            )));
        }
        let all = ds.groups();
        let total = all.len();
        let groups: Vec<Vec<usize>> = all.into_iter().filter(|g| g.len() >= per_group).collect();
        let groups_per_batch = batch_images / per_group;
        if groups_per_batch > groups.len() {
            return Err(Error::invalid(format!(
                "batch of {batch_images} images needs {groups_per_batch} capture groups, dataset has {}",
                groups.len()
            )));
        }
        Ok(Self {
            skipped_groups: total - groups.len(),
            subjects: groups.iter().map(|g| ds.samples[g[0]].subject).collect(),
            composition,
            groups,
            per_group,
            groups_per_batch,
        })
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.groups.len() / self.groups_per_batch
    }

    pub fn batch_images(&self) -> usize {
        self.groups_per_batch * self.per_group
    }

    fn take_views<R: Rng>(&self, group: &[usize], rng: &mut R, out: &mut Vec<usize>) {
        for i in index::sample(rng, group.len(), self.per_group) {
            out.push(group[i]);
        }
    }

    fn group_order<R: Rng>(&self, rng: &mut R) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.groups.len()).collect();
        order.shuffle(rng);
        if self.composition == BatchComposition::SubjectBlocks {
            let mut rank: Vec<usize> = self.subjects.clone();
            rank.sort_unstable();
            rank.dedup();
            rank.shuffle(rng);
            let mut position = std::collections::BTreeMap::new();
            for (p, s) in rank.into_iter().enumerate() {
                position.insert(s, p);
            }
            // Stable sort keeps the shuffled order within each subject.
            order.sort_by_key(|&g| position[&self.subjects[g]]);
        }
        order
    }

    /// All batches of one epoch: every eligible group appears once, groups
    /// left over after the last full batch are dropped.
    pub fn epoch(&self, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
        let order = self.group_order(&mut rng::stream(seed, Purpose::Sampler, epoch as u64, 0));
        let mut views = rng::stream(seed, Purpose::Sampler, epoch as u64, 1);
        order
            .chunks_exact(self.groups_per_batch)
            .map(|chunk| {
                let mut batch = Vec::with_capacity(self.batch_images());
                for &g in chunk {
                    self.take_views(&self.groups[g], &mut views, &mut batch);
                }
                batch
            })
            .collect()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<usize> {
        let mut batch = Vec::with_capacity(self.batch_images());
        let chosen: Vec<usize> = match self.composition {
            BatchComposition::Random => index::sample(rng, self.groups.len(), self.groups_per_batch).into_vec(),
            BatchComposition::SubjectBlocks => {
                // A random window over one block ordering, so batches that
                // straddle subjects occur as often as they do in an epoch.
                let order = self.group_order(rng);
                let start = rng.random_range(0..=order.len() - self.groups_per_batch);
                order[start..start + self.groups_per_batch].to_vec()
            }
        };
        for g in chosen {
            self.take_views(&self.groups[g], rng, &mut batch);
        }
        batch
    }
}

/// One batch of `n` sample indices; see [`ContrastSampler`].
pub fn sample_contrast_batch<R: Rng>(ds: &Dataset, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    Ok(ContrastSampler::new(ds, n)?.sample(rng))
}
