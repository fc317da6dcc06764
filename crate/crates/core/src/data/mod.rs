//! Multi-view labeled image collections.

mod folds;
mod manifest;
mod sampler;
mod synth;

pub use folds::{split_folds, subsample_labels, validation_split, Fold, FoldGrouping, LabelSubsample};
pub use manifest::{load_manifest, write_manifest};
pub use sampler::{sample_contrast_batch, BatchComposition, ContrastSampler};
pub use synth::{synth_generate, SynthConfig};

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use ndarray::Array4;

use crate::raster::Raster;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ImageRef {
    Path(PathBuf),
    Memory(Arc<Raster>),
}

/// One image. `label`, `view`, `instance` and `subject` index into the
/// owning dataset's name tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: ImageRef,
    pub label: usize,
    pub view: usize,
    pub instance: usize,
    pub subject: usize,
    /// Whether the label may be used by supervised objectives.
    pub labeled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub class_names: Vec<String>,
    pub view_names: Vec<String>,
    pub instance_names: Vec<String>,
    pub subject_names: Vec<String>,
}

impl Dataset {
    /// Checks name-table bounds and that every capture group is consistent
    /// in label and subject with at most one image per view.
    pub fn validate(&self) -> Result<()> {
        let mut seen: BTreeMap<usize, (usize, usize, Vec<usize>)> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            if s.label >= self.num_classes()
                || s.view >= self.num_views()
                || s.instance >= self.instance_names.len()
                || s.subject >= self.subject_names.len()
            {
                return Err(Error::Integrity(format!("sample {i} refers outside the dataset name tables")));
            }
            let entry = seen.entry(s.instance).or_insert((s.label, s.subject, Vec::new()));
            let name = &self.instance_names[s.instance];
            if entry.0 != s.label {
                return Err(Error::Integrity(format!(
                    "instance {name} mixes labels {} and {}",
                    self.class_names[entry.0], self.class_names[s.label]
                )));
            }
            if entry.1 != s.subject {
                return Err(Error::Integrity(format!(
                    "instance {name} mixes subjects {} and {}",
                    self.subject_names[entry.1], self.subject_names[s.subject]
                )));
            }
            if entry.2.contains(&s.view) {
                return Err(Error::Integrity(format!(
                    "instance {name} has more than one image for view {}",
                    self.view_names[s.view]
                )));
            }
            entry.2.push(s.view);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn num_views(&self) -> usize {
        self.view_names.len()
    }

    /// The middle entry of the left-to-right view ordering.
    pub fn frontal_view(&self) -> usize {
        self.num_views() / 2
    }

    /// Sample indices per capture group, in first-appearance order.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut order = Vec::new();
        let mut map: BTreeMap<usize, usize> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            let slot = *map.entry(s.instance).or_insert_with(|| {
                order.push(Vec::new());
                order.len() - 1
            });
            order[slot].push(i);
        }
        order
    }

    /// Groups with fewer members than there are views.
    pub fn incomplete_groups(&self) -> usize {
        self.groups().iter().filter(|g| g.len() < self.num_views()).count()
    }

    pub fn subjects_present(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.samples.iter().map(|s| s.subject).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes()];
        for s in &self.samples {
            c[s.label] += 1;
        }
        c
    }

    /// Keeps the given samples (and all name tables).
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            ..self.empty_like()
        }
    }

    pub fn labeled_subset(&self) -> Dataset {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.samples[i].labeled).collect();
        self.subset(&idx)
    }

    fn empty_like(&self) -> Dataset {
        Dataset {
            samples: Vec::new(),
            class_names: self.class_names.clone(),
            view_names: self.view_names.clone(),
            instance_names: self.instance_names.clone(),
            subject_names: self.subject_names.clone(),
        }
    }

    /// Loads every path-backed image into memory with the requested channel
    /// count. Missing or unreadable files are reported here.
    pub fn materialize(&mut self, channels: usize) -> Result<()> {
        for s in &mut self.samples {
            let raster = match &s.image {
                ImageRef::Path(p) => Raster::load_png(p)?,
                ImageRef::Memory(r) if r.channels == channels => continue,
                ImageRef::Memory(r) => (**r).clone(),
            };
            s.image = ImageRef::Memory(Arc::new(raster.with_channels(channels)?));
        }
        Ok(())
    }

    pub fn raster(&self, index: usize) -> Result<Arc<Raster>> {
        match &self.samples[index].image {
            ImageRef::Memory(r) => Ok(r.clone()),
            ImageRef::Path(p) => Ok(Arc::new(Raster::load_png(p)?)),
        }
    }
}

/// Stacks equally sized rasters into a channel-major `(C, N, H, W)` batch.
pub fn stack(images: &[Raster]) -> Array4<f32> {
    let first = &images[0];
    let (c, h, w) = (first.channels, first.height, first.width);
    let n = images.len();
    let mut out = Array4::<f32>::zeros((c, n, h, w));
    let dst = out.as_slice_mut().expect("fresh array");
    for (b, img) in images.iter().enumerate() {
        assert_eq!((img.channels, img.height, img.width), (c, h, w), "batch images differ in shape");
        for ch in 0..c {
            let off = (ch * n + b) * h * w;
            dst[off..off + h * w].copy_from_slice(img.plane(ch));
        }
    }
    out
}
