use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::imaging::FaceImage;

use super::{Descriptor, FeatureVector};

/// Neighbour offsets clockwise from the top-left; bit `b` belongs to entry `b`.
const LBP_NEIGHBORS: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
];

/// Normalized 256-bin histogram of 3x3 LBP codes over interior pixels, with
/// bit `b` set iff neighbour `b` ≥ centre.
pub fn lbp_histogram(image: &FaceImage) -> Result<FeatureVector> {
    let (w, h) = (image.width(), image.height());
    if w < 3 || h < 3 {
        return Err(Error::invalid("LBP needs an image of at least 3x3"));
    }
    let g = image.grayscale();
    let mut hist = vec![0.0; 256];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let c = g[y * w + x];
            let mut code = 0usize;
            for (b, (dx, dy)) in LBP_NEIGHBORS.iter().enumerate() {
                let n = g[(y as isize + dy) as usize * w + (x as isize + dx) as usize];
                if n >= c {
                    code |= 1 << b;
                }
            }
            hist[code] += 1.0;
        }
    }
    let total = ((w - 2) * (h - 2)) as f64;
    hist.iter_mut().for_each(|v| *v /= total);
    Ok(FeatureVector::new(Descriptor::Lbp, hist))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    File,
    Trained,
}

/// Zero-mean, linearly independent square filters.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    n_filters: usize,
    size: usize,
    coefficients: Vec<f64>,
    provenance: Provenance,
}

impl FilterBank {
    pub fn new(n_filters: usize, size: usize, coefficients: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if n_filters == 0 {
            return Err(Error::invalid("filter bank is empty"));
        }
        if n_filters > 16 {
            return Err(Error::invalid("at most 16 filters are supported"));
        }
        if size == 0 || size % 2 == 0 {
            return Err(Error::invalid("filter size must be odd"));
        }
        let d = size * size;
        if coefficients.len() != n_filters * d {
            return Err(Error::invalid(format!(
                "expected {} coefficients, got {}",
                n_filters * d,
                coefficients.len()
            )));
        }
        if coefficients.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("filter bank"));
        }
        for (i, f) in coefficients.chunks(d).enumerate() {
            let scale = f.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            if (f.iter().sum::<f64>() / d as f64).abs() > 1e-9 * scale {
                return Err(Error::invalid(format!("filter {} is not zero-mean", i)));
            }
        }
        let m = DMatrix::from_row_slice(n_filters, d, &coefficients);
        if n_filters > d || m.rank(1e-9 * m.norm().max(1.0)) < n_filters {
            return Err(Error::Degenerate("filters are linearly dependent".into()));
        }
        Ok(FilterBank {
            n_filters,
            size,
            coefficients,
            provenance,
        })
    }

    pub fn n_filters(&self) -> usize {
        self.n_filters
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn filter(&self, i: usize) -> &[f64] {
        let d = self.size * self.size;
        &self.coefficients[i * d..(i + 1) * d]
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// `BSIF n size` followed by the coefficients, one filter per line.
    pub fn to_text(&self) -> String {
        let mut s = format!("BSIF {} {}\n", self.n_filters, self.size);
        for i in 0..self.n_filters {
            let row: Vec<String> = self.filter(i).iter().map(|v| format!("{:?}", v)).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut tok = text.split_whitespace();
        if tok.next() != Some("BSIF") {
            return Err(Error::Format("filter bank must start with `BSIF`".into()));
        }
        let mut int = |what: &str| -> Result<usize> {
            tok.next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::Format(format!("bad or missing {}", what)))
        };
        let n = int("filter count")?;
        let size = int("filter size")?;
        let coefficients = text
            .split_whitespace()
            .skip(3)
            .map(|t| t.parse::<f64>().map_err(|_| Error::Format(format!("bad coefficient `{}`", t))))
            .collect::<Result<Vec<_>>>()?;
        FilterBank::new(n, size, coefficients, Provenance::File)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        FilterBank::parse(&fs::read_to_string(path)?)
    }
}

/// Normalized histogram of binarized filter responses. Filters are applied
/// by correlation with replicated borders; bit `b` is set iff the response
/// of filter `b` is positive. Windows are taken relative to their centre
/// pixel, which leaves zero-mean responses unchanged but makes flat regions
/// respond with an exact zero.
pub fn bsif_code(image: &FaceImage, bank: &FilterBank) -> Result<FeatureVector> {
    let (w, h) = (image.width(), image.height());
    let g = image.grayscale();
    let r = (bank.size / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut hist = vec![0.0; 1 << bank.n_filters];
    for y in 0..h {
        for x in 0..w {
            let centre = g[y * w + x];
            let mut code = 0usize;
            for b in 0..bank.n_filters {
                let f = bank.filter(b);
                let mut resp = 0.0;
                for i in 0..bank.size {
                    let yy = clamp(y as isize + i as isize - r, h);
                    for j in 0..bank.size {
                        let xx = clamp(x as isize + j as isize - r, w);
                        resp += f[i * bank.size + j] * (g[yy * w + xx] - centre);
                    }
                }
                if resp > 0.0 {
                    code |= 1 << b;
                }
            }
            hist[code] += 1.0;
        }
    }
    let total = (w * h) as f64;
    hist.iter_mut().for_each(|v| *v /= total);
    Ok(FeatureVector::new(Descriptor::Bsif, hist))
}
