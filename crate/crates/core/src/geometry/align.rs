use std::ops::Range;

use super::landmarks::{LandmarkSet, Point};
use super::warp::resample;
use crate::error::{Error, Result};
use crate::imaging::FaceImage;

/// Landmark index ranges averaged into the three alignment anchors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignAnchors {
    pub left_eye: Range<usize>,
    pub right_eye: Range<usize>,
    pub mouth: Range<usize>,
}

impl Default for AlignAnchors {
    /// 68-point convention: eyes 36..42 and 42..48, mouth 48..68.
    fn default() -> Self {
        AlignAnchors {
            left_eye: 36..42,
            right_eye: 42..48,
            mouth: 48..68,
        }
    }
}

impl AlignAnchors {
    pub fn anchors(&self, l: &LandmarkSet) -> Result<[Point; 3]> {
        let mean = |r: &Range<usize>| -> Result<Point> {
            if r.is_empty() || r.end > l.len() {
                return Err(Error::invalid(format!(
                    "anchor range {:?} invalid for {} landmarks",
                    r,
                    l.len()
                )));
            }
            let s = l.points()[r.clone()].iter().fold(Point::default(), |a, &p| a + p);
            Ok(s * (1.0 / r.len() as f64))
        };
        Ok([mean(&self.left_eye)?, mean(&self.right_eye)?, mean(&self.mouth)?])
    }
}

/// `p -> [a -b; b a] p + t`: rotation, uniform scale and translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub a: f64,
    pub b: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Similarity {
    pub const IDENTITY: Similarity = Similarity {
        a: 1.0,
        b: 0.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn from_parts(scale: f64, angle: f64, t: Point) -> Self {
        Similarity {
            a: scale * angle.cos(),
            b: scale * angle.sin(),
            tx: t.x,
            ty: t.y,
        }
    }

    pub fn apply(&self, p: Point) -> Point {
        Point::new(
            self.a * p.x - self.b * p.y + self.tx,
            self.b * p.x + self.a * p.y + self.ty,
        )
    }

    pub fn inverse(&self) -> Result<Similarity> {
        let d = self.a * self.a + self.b * self.b;
        if d == 0.0 {
            return Err(Error::Degenerate("zero-scale similarity".into()));
        }
        let (a, b) = (self.a / d, -self.b / d);
        Ok(Similarity {
            a,
            b,
            tx: -(a * self.tx - b * self.ty),
            ty: -(b * self.tx + a * self.ty),
        })
    }

    /// Least-squares similarity taking `from[i]` to `to[i]`.
    pub fn estimate(from: &[Point], to: &[Point]) -> Result<Similarity> {
        if from.len() != to.len() || from.is_empty() {
            return Err(Error::invalid("similarity needs matched, nonempty point lists"));
        }
        let n = from.len() as f64;
        let cf = from.iter().fold(Point::default(), |a, &p| a + p) * (1.0 / n);
        let ct = to.iter().fold(Point::default(), |a, &p| a + p) * (1.0 / n);
        let (mut re, mut im, mut den) = (0.0, 0.0, 0.0);
        for (&f, &t) in from.iter().zip(to) {
            let (u, v) = (f - cf, t - ct);
            re += u.x * v.x + u.y * v.y;
            im += u.x * v.y - u.y * v.x;
            den += u.x * u.x + u.y * u.y;
        }
        if den <= 1e-12 {
            return Err(Error::Degenerate("anchor points coincide".into()));
        }
        let (a, b) = (re / den, im / den);
        if a * a + b * b <= 1e-24 {
            return Err(Error::Degenerate("anchors admit no similarity".into()));
        }
        Ok(Similarity {
            a,
            b,
            tx: ct.x - (a * cf.x - b * cf.y),
            ty: ct.y - (b * cf.x + a * cf.y),
        })
    }
}

/// Maps the eye and mouth anchors of `landmarks` onto those of `template` with
/// a least-squares similarity, resampling the image and moving every landmark.
pub fn align_face(
    image: &FaceImage,
    landmarks: &LandmarkSet,
    template: &LandmarkSet,
    anchors: &AlignAnchors,
) -> Result<(FaceImage, LandmarkSet, Similarity)> {
    if landmarks.len() != template.len() {
        return Err(Error::invalid("template landmark count differs"));
    }
    let from = anchors.anchors(landmarks)?;
    let to = anchors.anchors(template)?;
    let sim = Similarity::estimate(&from, &to)?;
    let inv = sim.inverse()?;
    let aligned = landmarks.map(|p| sim.apply(p));
    let out = if sim == Similarity::IDENTITY {
        image.clone()
    } else {
        resample(image, |p| inv.apply(p))
    };
    Ok((out, aligned, sim))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::landmarks::canonical_template;

    #[test]
    fn template_aligns_to_identity() {
        let t = canonical_template(112);
        let img = FaceImage::filled(112, 112, 0.2);
        let (out, l, sim) = align_face(&img, &t, &t, &AlignAnchors::default()).unwrap();
        assert!((sim.a - 1.0).abs() < 1e-12 && sim.b.abs() < 1e-12);
        assert!(sim.tx.abs() < 1e-9 && sim.ty.abs() < 1e-9);
        assert!(l.l2_distance(&t).unwrap() < 1e-9);
        assert!(out.max_abs_diff(&img) < 1e-12);
    }

    #[test]
    fn rotated_input_recovers_template() {
        let t = canonical_template(112);
        let c = Point::new(56.0, 56.0);
        let rot = t.map(|p| {
            let d = p - c;
            Point::new(c.x - d.y, c.y + d.x)
        });
        let img = FaceImage::filled(112, 112, 0.0);
        let (_, l, _) = align_face(&img, &rot, &t, &AlignAnchors::default()).unwrap();
        for (a, b) in l.points().iter().zip(t.points()) {
            assert!(a.dist2(*b).sqrt() < 1e-6);
        }
    }

    #[test]
    fn inverse_round_trip() {
        let s = Similarity::from_parts(1.3, 0.4, Point::new(3.0, -7.0));
        let inv = s.inverse().unwrap();
        let p = Point::new(12.5, 40.25);
        assert!(inv.apply(s.apply(p)).dist2(p) < 1e-20);
    }

    #[test]
    fn degenerate_anchors_rejected() {
        let l = LandmarkSet::zeros(68);
        let t = canonical_template(112);
        let img = FaceImage::filled(8, 8, 0.0);
        assert!(align_face(&img, &l, &t, &AlignAnchors::default()).is_err());
    }
}
