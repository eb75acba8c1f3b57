use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::LandmarkSet;

use super::image::FaceImage;

pub const MANIFEST_HEADER: [&str; 6] = [
    "path",
    "subject_id",
    "kind",
    "source_a",
    "source_b",
    "landmarks_path",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SampleKind {
    Real,
    Morph,
}

impl fmt::Display for SampleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SampleKind::Real => "real",
            SampleKind::Morph => "morph",
        })
    }
}

impl FromStr for SampleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(SampleKind::Real),
            "morph" => Ok(SampleKind::Morph),
            other => Err(Error::Format(format!("unknown sample kind `{}`", other))),
        }
    }
}

/// One manifest row. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub path: String,
    pub subject_id: String,
    pub kind: SampleKind,
    /// For morphs: image paths of the two sources.
    pub source_a: Option<String>,
    pub source_b: Option<String>,
    pub landmarks_path: String,
}

impl ManifestRow {
    pub fn is_real(&self) -> bool {
        self.kind == SampleKind::Real
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, rows: Vec<ManifestRow>) -> Self {
        Manifest {
            root: root.into(),
            rows,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
            return Err(Error::Format(format!(
                "manifest header must be `{}`",
                MANIFEST_HEADER.join(",")
            )));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let opt = |s: &str| (!s.is_empty()).then(|| s.to_string());
            let kind: SampleKind = rec[2].parse()?;
            let row = ManifestRow {
                path: rec[0].to_string(),
                subject_id: rec[1].to_string(),
                kind,
                source_a: opt(&rec[3]),
                source_b: opt(&rec[4]),
                landmarks_path: rec[5].to_string(),
            };
            if row.kind == SampleKind::Morph && (row.source_a.is_none() || row.source_b.is_none()) {
                return Err(Error::Format(format!("morph row `{}` lacks sources", row.path)));
            }
            rows.push(row);
        }
        Ok(Manifest { root, rows })
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(MANIFEST_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.path.as_str(),
                r.subject_id.as_str(),
                &r.kind.to_string(),
                r.source_a.as_deref().unwrap_or(""),
                r.source_b.as_deref().unwrap_or(""),
                r.landmarks_path.as_str(),
            ])?;
        }
        w.into_inner()
            .map_err(|e| Error::Format(format!("csv flush: {}", e)))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()?)?;
        Ok(())
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn load_image(&self, row: &ManifestRow) -> Result<FaceImage> {
        FaceImage::load_ppm(&self.resolve(&row.path))
    }

    pub fn load_landmarks(&self, row: &ManifestRow, k: Option<usize>) -> Result<LandmarkSet> {
        LandmarkSet::load(&self.resolve(&row.landmarks_path), k)
    }

    pub fn row_by_path(&self, path: &str) -> Option<&ManifestRow> {
        self.rows.iter().find(|r| r.path == path)
    }

    /// Subject ids in sorted order.
    pub fn subjects(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| r.subject_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn reals(&self) -> impl Iterator<Item = (usize, &ManifestRow)> {
        self.rows.iter().enumerate().filter(|(_, r)| r.is_real())
    }

    pub fn morphs(&self) -> impl Iterator<Item = (usize, &ManifestRow)> {
        self.rows.iter().enumerate().filter(|(_, r)| !r.is_real())
    }

    /// Row indices grouped by subject.
    pub fn by_subject(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut m: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.rows.iter().enumerate() {
            m.entry(r.subject_id.as_str()).or_default().push(i);
        }
        m
    }

    /// Rows whose subject is in `keep`, in original order.
    pub fn restrict(&self, keep: &BTreeSet<String>) -> Manifest {
        Manifest {
            root: self.root.clone(),
            rows: self
                .rows
                .iter()
                .filter(|r| keep.contains(&r.subject_id))
                .cloned()
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest::new(
            dir.path(),
            vec![
                ManifestRow {
                    path: "images/a.ppm".into(),
                    subject_id: "s000".into(),
                    kind: SampleKind::Real,
                    source_a: None,
                    source_b: None,
                    landmarks_path: "landmarks/a.txt".into(),
                },
                ManifestRow {
                    path: "images/m.ppm".into(),
                    subject_id: "s000".into(),
                    kind: SampleKind::Morph,
                    source_a: Some("images/a.ppm".into()),
                    source_b: Some("images/b.ppm".into()),
                    landmarks_path: "landmarks/m.txt".into(),
                },
            ],
        );
        let p = dir.path().join("manifest.csv");
        m.save(&p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("path,subject_id,kind,source_a,source_b,landmarks_path\n"));
        assert!(text.contains("images/a.ppm,s000,real,,,landmarks/a.txt"));
        assert_eq!(Manifest::load(&p).unwrap(), m);
    }

    #[test]
    fn rejects_wrong_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        fs::write(&p, "path,subject\nx,y\n").unwrap();
        assert!(Manifest::load(&p).is_err());
    }
}
