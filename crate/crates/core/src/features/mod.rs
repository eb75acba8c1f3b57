//! Classical texture and landmark descriptors for the baselines.

mod ica;
mod texture;

use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::LandmarkSet;

pub use ica::train_filterbank;
pub use texture::{bsif_code, lbp_histogram, FilterBank, Provenance};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Descriptor {
    Lbp,
    Bsif,
    Landmark,
}

impl fmt::Display for Descriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Descriptor::Lbp => "lbp",
            Descriptor::Bsif => "bsif",
            Descriptor::Landmark => "landmark",
        })
    }
}

impl std::str::FromStr for Descriptor {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lbp" => Ok(Descriptor::Lbp),
            "bsif" => Ok(Descriptor::Bsif),
            "landmark" => Ok(Descriptor::Landmark),
            other => Err(Error::invalid(format!("unknown descriptor `{}`", other))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub descriptor: Descriptor,
}

impl FeatureVector {
    pub fn new(descriptor: Descriptor, values: Vec<f64>) -> Self {
        FeatureVector { values, descriptor }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Per-landmark Euclidean distances between two aligned landmark sets.
pub fn landmark_displacement_feature(l_i: &LandmarkSet, l_j: &LandmarkSet) -> Result<FeatureVector> {
    if l_i.len() != l_j.len() {
        return Err(Error::invalid(format!(
            "landmark counts differ: {} vs {}",
            l_i.len(),
            l_j.len()
        )));
    }
    let values = l_i
        .points()
        .iter()
        .zip(l_j.points())
        .map(|(a, b)| a.dist2(*b).sqrt())
        .collect();
    Ok(FeatureVector::new(Descriptor::Landmark, values))
}

/// Applies `f` to every item in parallel, keeping input order.
pub fn extract_all<T, F>(items: &[T], f: F) -> Result<Vec<FeatureVector>>
where
    T: Sync,
    F: Fn(&T) -> Result<FeatureVector> + Sync + Send,
{
    items.par_iter().map(f).collect()
}
