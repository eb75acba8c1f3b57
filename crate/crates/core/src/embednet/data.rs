use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{LandmarkSet, Point};
use crate::imaging::{normalize_image, FaceImage, Manifest, RgbImage, SampleKind};

/// A preprocessed image with its landmarks and class.
#[derive(Clone, Debug)]
pub struct Sample {
    pub path: String,
    pub subject: String,
    /// Index of `subject` in [`Dataset::classes`].
    pub class: usize,
    pub kind: SampleKind,
    pub image: FaceImage,
    pub landmarks: LandmarkSet,
}

impl Sample {
    pub fn is_real(&self) -> bool {
        self.kind == SampleKind::Real
    }
}

/// Images of a manifest, resized to the encoder input size.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    /// Sorted subject ids; a sample's class indexes this list.
    pub classes: Vec<String>,
}

impl Dataset {
    /// Loads every row (or only those of `subjects`) in manifest order.
    /// Classes are the sorted subject ids of the loaded rows.
    pub fn load(manifest: &Manifest, subjects: Option<&BTreeSet<String>>, size: usize) -> Result<Self> {
        let rows: Vec<_> = manifest
            .rows
            .iter()
            .filter(|r| subjects.is_none_or(|s| s.contains(&r.subject_id)))
            .collect();
        let classes: Vec<String> = rows
            .iter()
            .map(|r| r.subject_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let index: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let samples = rows
            .par_iter()
            .map(|r| {
                let raw = RgbImage::load_ppm(&manifest.resolve(&r.path))?;
                let lms = manifest.load_landmarks(r, None)?;
                let (sx, sy) = (size as f64 / raw.width as f64, size as f64 / raw.height as f64);
                let image = normalize_image(&raw, size, size)?;
                let landmarks = if sx == 1.0 && sy == 1.0 {
                    lms
                } else {
                    lms.map(|p| Point::new((p.x + 0.5) * sx - 0.5, (p.y + 0.5) * sy - 0.5))
                };
                Ok(Sample {
                    path: r.path.clone(),
                    subject: r.subject_id.clone(),
                    class: index[r.subject_id.as_str()],
                    kind: r.kind,
                    image,
                    landmarks,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { samples, classes })
    }

    pub fn from_samples(samples: Vec<Sample>, classes: Vec<String>) -> Result<Self> {
        if samples.iter().any(|s| s.class >= classes.len()) {
            return Err(Error::invalid("sample class outside the class list"));
        }
        Ok(Dataset { samples, classes })
    }

    pub fn reals(&self) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.samples[i].is_real()).collect()
    }

    pub fn morphs(&self) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| !self.samples[i].is_real()).collect()
    }

    pub fn index_of(&self, path: &str) -> Option<usize> {
        self.samples.iter().position(|s| s.path == path)
    }
}
