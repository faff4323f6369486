//! Datasets: synthetic generation, CSV/PGM ingestion, stratified splits and
//! histogram equalization.

mod image;
mod io;
mod patches;
mod split;
mod synthetic;

pub use image::{hist_equalize, read_pgm, write_pgm, GrayImage};
pub use io::{load_dataset, save_dataset, Manifest, SplitFiles};
pub use patches::{generate_patch_task, PatchBox, PatchTask, PatchTaskSpec};
pub use split::{stratified_split, stratified_split_counts, Split};
pub use synthetic::{generate_synthetic, GeneratorSpec, REFERENCE_CLASS_NAMES, REFERENCE_PREVALENCE};

use crate::error::{Error, Result};
use crate::numcore::{LabelMatrix, Matrix};

/// One labelled example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub features: Vec<f64>,
    pub labels: Vec<bool>,
}

/// Column-oriented collection of samples sharing `D` features and `C` labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    ids: Vec<String>,
    features: Matrix,
    labels: LabelMatrix,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        ids: Vec<String>,
        features: Matrix,
        labels: LabelMatrix,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if ids.len() != features.rows() || ids.len() != labels.rows() {
            return Err(Error::Shape(format!(
                "{} ids, {} feature rows, {} label rows",
                ids.len(),
                features.rows(),
                labels.rows()
            )));
        }
        if class_names.len() != labels.cols() {
            return Err(Error::Shape(format!(
                "{} class names for {} label columns",
                class_names.len(),
                labels.cols()
            )));
        }
        Ok(Dataset {
            ids,
            features,
            labels,
            class_names,
        })
    }

    pub fn from_samples(samples: &[Sample], class_names: Vec<String>) -> Result<Self> {
        let ids = samples.iter().map(|s| s.id.clone()).collect();
        let features = Matrix::from_rows(&samples.iter().map(|s| s.features.as_slice()).collect::<Vec<_>>())?;
        let labels = LabelMatrix::from_rows(&samples.iter().map(|s| s.labels.as_slice()).collect::<Vec<_>>())?;
        Dataset::new(ids, features, labels, class_names)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.cols()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &LabelMatrix {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn sample(&self, i: usize) -> Sample {
        Sample {
            id: self.ids[i].clone(),
            features: self.features.row(i).to_vec(),
            labels: self.labels.row(i).to_vec(),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            features: self.features.select_rows(indices),
            labels: self.labels.select_rows(indices),
            class_names: self.class_names.clone(),
        }
    }

    /// Per-class positive rate.
    pub fn prevalence(&self) -> Vec<f64> {
        let n = self.len().max(1) as f64;
        self.labels
            .column_counts()
            .into_iter()
            .map(|c| c as f64 / n)
            .collect()
    }
}

/// Default class names `class0..class{C-1}`.
pub fn default_class_names(num_classes: usize) -> Vec<String> {
    (0..num_classes).map(|k| format!("class{k}")).collect()
}
