use std::fmt::Write as _;
use std::fs;
use std::ops::{Add, Mul, Sub};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Default landmark count (the 68-point facial annotation scheme).
pub const DEFAULT_K: usize = 68;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist2(self, other: Point) -> f64 {
        let (dx, dy) = (self.x - other.x, self.y - other.y);
        dx * dx + dy * dy
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

/// Ordered facial keypoints in pixel coordinates. Index `i` always names the
/// same facial point. Also used for per-point offsets.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LandmarkSet {
    points: Vec<Point>,
}

impl LandmarkSet {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::invalid("landmark coordinates must be finite"));
        }
        Ok(LandmarkSet { points })
    }

    pub fn from_xy(coords: &[(f64, f64)]) -> Result<Self> {
        Self::new(coords.iter().map(|&(x, y)| Point::new(x, y)).collect())
    }

    pub fn zeros(k: usize) -> Self {
        LandmarkSet {
            points: vec![Point::default(); k],
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Point {
        self.points[i]
    }

    /// `x0, y0, x1, y1, ...`
    pub fn flatten(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    pub fn centroid(&self) -> Point {
        let n = self.points.len().max(1) as f64;
        let s = self.points.iter().fold(Point::default(), |a, &p| a + p);
        s * (1.0 / n)
    }

    fn check_k(&self, other: &LandmarkSet) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::invalid(format!(
                "landmark count mismatch: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        Ok(())
    }

    /// Point-wise sum (e.g. landmarks plus an offset set).
    pub fn offset_by(&self, delta: &LandmarkSet) -> Result<LandmarkSet> {
        self.check_k(delta)?;
        Ok(LandmarkSet {
            points: self.points.iter().zip(&delta.points).map(|(&a, &b)| a + b).collect(),
        })
    }

    pub fn translate(&self, d: Point) -> LandmarkSet {
        LandmarkSet {
            points: self.points.iter().map(|&p| p + d).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(Point) -> Point) -> LandmarkSet {
        LandmarkSet {
            points: self.points.iter().map(|&p| f(p)).collect(),
        }
    }

    /// `(1 - t) * self + t * other`, point-wise.
    pub fn lerp(&self, other: &LandmarkSet, t: f64) -> Result<LandmarkSet> {
        self.check_k(other)?;
        Ok(LandmarkSet {
            points: self
                .points
                .iter()
                .zip(&other.points)
                .map(|(&a, &b)| a * (1.0 - t) + b * t)
                .collect(),
        })
    }

    /// Euclidean norm of the flattened coordinate difference.
    pub fn l2_distance(&self, other: &LandmarkSet) -> Result<f64> {
        self.check_k(other)?;
        Ok(self
            .points
            .iter()
            .zip(&other.points)
            .map(|(&a, &b)| a.dist2(b))
            .sum::<f64>()
            .sqrt())
    }

    /// Max-abs of the flattened coordinate difference.
    pub fn linf_distance(&self, other: &LandmarkSet) -> Result<f64> {
        self.check_k(other)?;
        Ok(self
            .points
            .iter()
            .zip(&other.points)
            .map(|(&a, &b)| (a.x - b.x).abs().max((a.y - b.y).abs()))
            .fold(0.0, f64::max))
    }

    /// Plain-text form: one `x y` line per landmark.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for p in &self.points {
            // shortest round-trip representation
            writeln!(s, "{:?} {:?}", p.x, p.y).expect("write to string");
        }
        s
    }

    pub fn parse(text: &str, expected_k: Option<usize>) -> Result<Self> {
        let mut points = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let mut coord = || -> Result<f64> {
                it.next()
                    .ok_or_else(|| Error::Format(format!("line {}: expected `x y`", lineno + 1)))?
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("line {}: {}", lineno + 1, e)))
            };
            let (x, y) = (coord()?, coord()?);
            if it.next().is_some() {
                return Err(Error::Format(format!("line {}: trailing fields", lineno + 1)));
            }
            points.push(Point::new(x, y));
        }
        if let Some(k) = expected_k {
            if points.len() != k {
                return Err(Error::Format(format!(
                    "expected {} landmarks, found {}",
                    k,
                    points.len()
                )));
            }
        }
        Self::new(points)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path, expected_k: Option<usize>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?, expected_k)
    }
}

/// `K` i.i.d. zero-mean Gaussian 2-D offsets with the given per-coordinate
/// variance.
pub fn sample_perturbation<R: Rng + ?Sized>(rng: &mut R, variance: f64, k: usize) -> LandmarkSet {
    if variance <= 0.0 {
        return LandmarkSet::zeros(k);
    }
    let normal = Normal::new(0.0, variance.sqrt()).expect("finite std");
    LandmarkSet {
        points: (0..k)
            .map(|_| {
                let x = normal.sample(rng);
                Point::new(x, normal.sample(rng))
            })
            .collect(),
    }
}

/// Distance used when mining landmark neighbours.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MiningNorm {
    Linf,
    #[default]
    L2,
}

impl MiningNorm {
    pub fn distance(self, a: &LandmarkSet, b: &LandmarkSet) -> Result<f64> {
        match self {
            MiningNorm::Linf => a.linf_distance(b),
            MiningNorm::L2 => a.l2_distance(b),
        }
    }
}

impl std::str::FromStr for MiningNorm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" => Ok(MiningNorm::L2),
            "linf" | "l_inf" | "inf" => Ok(MiningNorm::Linf),
            other => Err(Error::Config(format!("unknown mining norm `{}`", other))),
        }
    }
}

/// Index of the pool entry closest to `query` among entries whose class
/// differs from `exclude`. Ties resolve to the lowest index.
pub fn nearest_neighbor<C: PartialEq>(
    query: &LandmarkSet,
    pool: &[(LandmarkSet, C)],
    exclude: &C,
    norm: MiningNorm,
) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, (lms, class)) in pool.iter().enumerate() {
        if class == exclude {
            continue;
        }
        let d = norm.distance(query, lms)?;
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::NoCandidate("no pool entry of a different class".into()))
}

/// `||l - l'|| / ||l - mean(l)||`, the landmark displacement normalized by the
/// spread of `l` about its centroid.
pub fn phi_g(l: &LandmarkSet, l_prime: &LandmarkSet) -> Result<f64> {
    let num = l.l2_distance(l_prime)?;
    let c = l.centroid();
    let den = l.points().iter().map(|&p| p.dist2(c)).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(Error::Degenerate("all landmarks coincide".into()));
    }
    Ok(num / den)
}

/// A synthetic 68-point frontal face layout centred in a `size x size` frame.
pub fn canonical_template(size: usize) -> LandmarkSet {
    let s = size as f64 / 112.0;
    let mut pts = Vec::with_capacity(DEFAULT_K);
    // jaw 0..=16
    for i in 0..17 {
        let t = std::f64::consts::PI * (i as f64 / 16.0);
        pts.push(Point::new(56.0 - 38.0 * t.cos(), 52.0 + 44.0 * t.sin()));
    }
    // brows 17..=26
    for i in 0..5 {
        pts.push(Point::new(24.0 + 6.5 * i as f64, 36.0 - 3.0 * (1.0 - ((i as f64 - 2.0) / 2.0).powi(2))));
    }
    for i in 0..5 {
        pts.push(Point::new(62.0 + 6.5 * i as f64, 36.0 - 3.0 * (1.0 - ((i as f64 - 2.0) / 2.0).powi(2))));
    }
    // nose bridge 27..=30, base 31..=35
    for i in 0..4 {
        pts.push(Point::new(56.0, 44.0 + 6.0 * i as f64));
    }
    for i in 0..5 {
        pts.push(Point::new(48.0 + 4.0 * i as f64, 65.0 + if i == 2 { 1.5 } else { 0.0 }));
    }
    // eyes 36..=41 and 42..=47
    for &cx in &[37.0, 75.0] {
        for i in 0..6 {
            let t = std::f64::consts::PI * i as f64 / 3.0;
            pts.push(Point::new(cx - 7.0 * t.cos(), 46.0 - 3.0 * t.sin()));
        }
    }
    // outer mouth 48..=59
    for i in 0..12 {
        let t = std::f64::consts::PI * i as f64 / 6.0;
        pts.push(Point::new(56.0 - 15.0 * t.cos(), 82.0 - 6.0 * t.sin()));
    }
    // inner mouth 60..=67
    for i in 0..8 {
        let t = std::f64::consts::PI * i as f64 / 4.0;
        pts.push(Point::new(56.0 - 9.0 * t.cos(), 82.0 - 2.5 * t.sin()));
    }
    LandmarkSet {
        points: pts.into_iter().map(|p| p * s).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn phi_g_hand_case() {
        let l = LandmarkSet::from_xy(&[(0.0, 0.0), (2.0, 0.0)]).unwrap();
        let lp = LandmarkSet::from_xy(&[(0.0, 0.0), (2.0, 2.0)]).unwrap();
        // numerator 2, centroid (1,0), offsets (-1,0),(1,0): denominator sqrt(2)
        let expected = 2.0 / 2f64.sqrt();
        assert!((phi_g(&l, &lp).unwrap() - expected).abs() < 1e-15);
        assert_eq!(phi_g(&l, &l).unwrap(), 0.0);
    }

    #[test]
    fn phi_g_point_reflection_is_two() {
        let l = canonical_template(112);
        let c = l.centroid();
        let r = l.map(|p| c * 2.0 - p);
        assert!((phi_g(&l, &r).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn phi_g_degenerate() {
        let l = LandmarkSet::from_xy(&[(1.0, 1.0), (1.0, 1.0)]).unwrap();
        assert!(matches!(phi_g(&l, &l), Err(Error::Degenerate(_))));
    }

    #[test]
    fn nearest_neighbor_cases() {
        let q = LandmarkSet::from_xy(&[(0.0, 0.0), (1.0, 1.0)]).unwrap();
        let a = LandmarkSet::from_xy(&[(0.0, 0.0), (1.0, 2.0)]).unwrap();
        let b = LandmarkSet::from_xy(&[(3.0, 3.0), (4.0, 4.0)]).unwrap();
        let pool = vec![(b.clone(), 1), (a.clone(), 2)];
        assert_eq!(nearest_neighbor(&q, &pool, &0, MiningNorm::L2).unwrap(), 1);
        let copy = vec![(b, 1), (q.clone(), 5), (q.clone(), 6)];
        assert_eq!(nearest_neighbor(&q, &copy, &0, MiningNorm::L2).unwrap(), 1);
        let same = vec![(a, 0)];
        assert!(matches!(
            nearest_neighbor(&q, &same, &0, MiningNorm::L2),
            Err(Error::NoCandidate(_))
        ));
    }

    #[test]
    fn perturbation_zero_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = sample_perturbation(&mut rng, 0.0, 5);
        assert!(z.flatten().iter().all(|&v| v == 0.0));
        let a = sample_perturbation(&mut ChaCha8Rng::seed_from_u64(9), 3.0, 68);
        let b = sample_perturbation(&mut ChaCha8Rng::seed_from_u64(9), 3.0, 68);
        assert_eq!(a, b);
    }

    #[test]
    fn perturbation_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let d = sample_perturbation(&mut rng, 3.0, 50_000);
        let v = d.flatten();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.05, "mean {}", mean);
        assert!((var - 3.0).abs() < 0.1, "var {}", var);
    }

    #[test]
    fn text_round_trip_is_exact() {
        let l = LandmarkSet::from_xy(&[(0.1, 1.0 / 3.0), (-5.5e-7, 1e10)]).unwrap();
        let back = LandmarkSet::parse(&l.to_text(), Some(2)).unwrap();
        assert_eq!(back, l);
        assert!(LandmarkSet::parse(&l.to_text(), Some(3)).is_err());
        assert!(LandmarkSet::parse("1 2 3\n", None).is_err());
        assert!(LandmarkSet::parse("1 x\n", None).is_err());
    }

    #[test]
    fn template_has_68_distinct_points() {
        let t = canonical_template(112);
        assert_eq!(t.len(), DEFAULT_K);
        for i in 0..t.len() {
            for j in 0..i {
                assert!(t.point(i).dist2(t.point(j)) > 0.5, "{} {}", i, j);
            }
        }
    }
}
