use crate::error::{Error, Result};
use crate::geometry::{warp_image, LandmarkSet, Point};

use super::image::{alpha_blend, FaceImage};

/// Which inputs are warped onto the averaged landmarks before blending.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WarpMode {
    /// Both faces are warped to the averaged geometry.
    #[default]
    Both,
    /// Only the first face is warped; the second is blended unwarped.
    FirstOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MorphOptions {
    pub alpha_warp: f64,
    pub alpha_blend: f64,
    pub warp_mode: WarpMode,
    /// Blend only inside the convex hull of the morph landmarks and keep the
    /// first (unwarped) image elsewhere.
    pub splice: bool,
    pub tps_lambda: f64,
}

impl Default for MorphOptions {
    fn default() -> Self {
        MorphOptions {
            alpha_warp: 0.5,
            alpha_blend: 0.5,
            warp_mode: WarpMode::Both,
            splice: false,
            tps_lambda: 0.0,
        }
    }
}

/// A generated morph and the subjects it was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct MorphRecord {
    pub image: FaceImage,
    pub landmarks: LandmarkSet,
    pub subject_a: String,
    pub subject_b: String,
    pub alpha_warp: f64,
    pub alpha_blend: f64,
}

/// Landmark-based morph: average the geometry with `alpha_warp`, warp the
/// faces onto it with a thin-plate spline, then alpha-blend with `alpha_blend`.
pub fn generate_morph(
    img_a: &FaceImage,
    lms_a: &LandmarkSet,
    img_b: &FaceImage,
    lms_b: &LandmarkSet,
    opts: &MorphOptions,
) -> Result<(FaceImage, LandmarkSet)> {
    for (name, v) in [("alpha_warp", opts.alpha_warp), ("alpha_blend", opts.alpha_blend)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("{} must lie in [0, 1]", name)));
        }
    }
    if lms_a.len() != lms_b.len() {
        return Err(Error::invalid("morph sources have different landmark counts"));
    }
    if !img_a.same_size(img_b) {
        return Err(Error::invalid("morph sources have different sizes"));
    }
    let target = lms_a.lerp(lms_b, opts.alpha_warp)?;
    let zero = LandmarkSet::zeros(target.len());
    let (warped_a, _) = warp_image(img_a, lms_a, &target, &zero, opts.tps_lambda)?;
    let warped_b = match opts.warp_mode {
        WarpMode::Both => warp_image(img_b, lms_b, &target, &zero, opts.tps_lambda)?.0,
        WarpMode::FirstOnly => img_b.clone(),
    };
    let blended = alpha_blend(&warped_a, &warped_b, opts.alpha_blend)?;
    let image = if opts.splice {
        let hull = convex_hull(target.points());
        FaceImage::from_fn(img_a.width(), img_a.height(), |c, x, y| {
            if inside_convex(&hull, Point::new(x as f64, y as f64)) {
                blended.get(c, x, y)
            } else {
                img_a.get(c, x, y)
            }
        })
    } else {
        blended
    };
    Ok((image, target))
}

/// Counter-clockwise convex hull (monotone chain).
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: Point, a: Point, b: Point| (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
    let mut lower: Vec<Point> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn inside_convex(hull: &[Point], p: Point) -> bool {
    if hull.len() < 3 {
        return false;
    }
    (0..hull.len()).all(|i| {
        let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
        (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x) >= 0.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::canonical_template;

    fn face(seed: f64, size: usize) -> FaceImage {
        FaceImage::from_fn(size, size, |c, x, y| {
            0.6 * ((x as f64 * 0.13 + seed).sin() * (y as f64 * 0.07 + c as f64).cos())
        })
    }

    fn lms_b() -> LandmarkSet {
        canonical_template(64).map(|p| Point::new(p.x * 1.04 - 1.0, p.y * 0.98 + 0.7))
    }

    #[test]
    fn degenerate_pair_returns_source() {
        let a = face(0.3, 64);
        let l = canonical_template(64);
        let (m, ml) = generate_morph(&a, &l, &a, &l, &MorphOptions::default()).unwrap();
        assert!(m.max_abs_diff(&a) < 1e-9);
        assert!(ml.l2_distance(&l).unwrap() < 1e-12);
    }

    #[test]
    fn zero_alphas_return_first_exactly() {
        let a = face(0.3, 64);
        let b = face(1.7, 64);
        let opts = MorphOptions {
            alpha_warp: 0.0,
            alpha_blend: 0.0,
            ..MorphOptions::default()
        };
        let (m, _) = generate_morph(&a, &canonical_template(64), &b, &lms_b(), &opts).unwrap();
        assert_eq!(m, a);
    }

    #[test]
    fn midpoint_landmarks() {
        let a = face(0.3, 64);
        let b = face(1.7, 64);
        let (la, lb) = (canonical_template(64), lms_b());
        let (_, ml) = generate_morph(&a, &la, &b, &lb, &MorphOptions::default()).unwrap();
        for i in 0..la.len() {
            let mid = (la.point(i) + lb.point(i)) * 0.5;
            assert!(ml.point(i).dist2(mid).sqrt() < 1e-9);
        }
    }

    #[test]
    fn swap_symmetry() {
        let a = face(0.3, 48);
        let b = face(1.7, 48);
        let (la, lb) = (canonical_template(48), canonical_template(48).map(|p| p * 1.03));
        let o1 = MorphOptions {
            alpha_warp: 0.3,
            alpha_blend: 0.6,
            ..MorphOptions::default()
        };
        let o2 = MorphOptions {
            alpha_warp: 0.7,
            alpha_blend: 0.4,
            ..MorphOptions::default()
        };
        let (m1, l1) = generate_morph(&a, &la, &b, &lb, &o1).unwrap();
        let (m2, l2) = generate_morph(&b, &lb, &a, &la, &o2).unwrap();
        assert!(m1.max_abs_diff(&m2) < 1e-9);
        assert!(l1.l2_distance(&l2).unwrap() < 1e-9);
    }

    #[test]
    fn splice_keeps_background() {
        let a = face(0.3, 64);
        let b = face(1.7, 64);
        let opts = MorphOptions {
            splice: true,
            ..MorphOptions::default()
        };
        let (m, ml) = generate_morph(&a, &canonical_template(64), &b, &lms_b(), &opts).unwrap();
        let hull = convex_hull(ml.points());
        assert!(!inside_convex(&hull, Point::new(0.0, 0.0)));
        for c in 0..3 {
            assert_eq!(m.get(c, 0, 0), a.get(c, 0, 0));
        }
    }

    #[test]
    fn rejects_bad_alpha() {
        let a = face(0.3, 16);
        let l = canonical_template(16);
        let opts = MorphOptions {
            alpha_blend: 1.5,
            ..MorphOptions::default()
        };
        assert!(generate_morph(&a, &l, &a, &l, &opts).is_err());
    }
}
