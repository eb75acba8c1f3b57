//! Thin-plate-spline interpolation between two landmark sets.

use nalgebra::DMatrix;

use super::landmarks::{LandmarkSet, Point};
use crate::error::{Error, Result};

/// Radial basis `U(r) = r^2 log(r^2)` evaluated from the squared distance,
/// with `U(0) = 0`.
#[inline]
pub fn tps_kernel(r2: f64) -> f64 {
    if r2 <= 0.0 {
        0.0
    } else {
        r2 * r2.ln()
    }
}

/// A fitted 2-D thin-plate spline mapping control points to targets.
#[derive(Clone, Debug, PartialEq)]
pub struct TpsTransform {
    control_points: Vec<Point>,
    /// Rows are the x and y outputs: `[c, a_x, a_y]` so that
    /// `out = c + a_x * x + a_y * y`.
    affine: [[f64; 3]; 2],
    /// One `(w_x, w_y)` pair per control point.
    kernel_weights: Vec<[f64; 2]>,
    lambda: f64,
}

impl TpsTransform {
    /// Identity transform over the given control points.
    pub fn identity(control: &LandmarkSet) -> Self {
        TpsTransform {
            control_points: control.points().to_vec(),
            affine: [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            kernel_weights: vec![[0.0; 2]; control.len()],
            lambda: 0.0,
        }
    }

    pub fn control_points(&self) -> &[Point] {
        &self.control_points
    }

    pub fn affine(&self) -> [[f64; 3]; 2] {
        self.affine
    }

    pub fn kernel_weights(&self) -> &[[f64; 2]] {
        &self.kernel_weights
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn apply(&self, p: Point) -> Point {
        let a = &self.affine;
        let mut x = a[0][0] + a[0][1] * p.x + a[0][2] * p.y;
        let mut y = a[1][0] + a[1][1] * p.x + a[1][2] * p.y;
        for (c, w) in self.control_points.iter().zip(&self.kernel_weights) {
            let u = tps_kernel(p.dist2(*c));
            x += w[0] * u;
            y += w[1] * u;
        }
        Point::new(x, y)
    }

    pub fn apply_all(&self, lms: &LandmarkSet) -> LandmarkSet {
        lms.map(|p| self.apply(p))
    }
}

/// Solves the TPS system taking `source[i]` to `target[i]`, regularizing the
/// kernel block with `lambda`.
pub fn tps_fit(source: &LandmarkSet, target: &LandmarkSet, lambda: f64) -> Result<TpsTransform> {
    let k = source.len();
    if k != target.len() {
        return Err(Error::invalid(format!(
            "landmark count mismatch: {} vs {}",
            k,
            target.len()
        )));
    }
    if k < 3 {
        return Err(Error::invalid("tps needs at least 3 control points"));
    }
    if !(lambda >= 0.0) {
        return Err(Error::invalid("tps regularization must be >= 0"));
    }
    check_configuration(source, lambda)?;

    let pts = source.points();
    let n = k + 3;
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..k {
        for j in 0..i {
            let u = tps_kernel(pts[i].dist2(pts[j]));
            a[(i, j)] = u;
            a[(j, i)] = u;
        }
        a[(i, i)] = lambda;
        let row = [1.0, pts[i].x, pts[i].y];
        for (c, &v) in row.iter().enumerate() {
            a[(i, k + c)] = v;
            a[(k + c, i)] = v;
        }
    }
    let mut rhs = DMatrix::<f64>::zeros(n, 2);
    for (i, p) in target.points().iter().enumerate() {
        rhs[(i, 0)] = p.x;
        rhs[(i, 1)] = p.y;
    }
    let lu = a.lu();
    let sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("thin-plate-spline system".into()))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("thin-plate-spline system".into()));
    }
    let kernel_weights = (0..k).map(|i| [sol[(i, 0)], sol[(i, 1)]]).collect();
    let affine = [
        [sol[(k, 0)], sol[(k + 1, 0)], sol[(k + 2, 0)]],
        [sol[(k, 1)], sol[(k + 1, 1)], sol[(k + 2, 1)]],
    ];
    Ok(TpsTransform {
        control_points: pts.to_vec(),
        affine,
        kernel_weights,
        lambda,
    })
}

/// Rejects control sets whose TPS system is singular: collinear points always,
/// coincident points when unregularized.
fn check_configuration(source: &LandmarkSet, lambda: f64) -> Result<()> {
    let pts = source.points();
    let c = source.centroid();
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in pts {
        let d = *p - c;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    let spread = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    if spread == 0.0 || det <= 1e-12 * spread * spread {
        return Err(Error::Singular("control points are collinear".into()));
    }
    if lambda == 0.0 {
        let tol = 1e-18 * spread;
        for i in 0..pts.len() {
            for j in 0..i {
                if pts[i].dist2(pts[j]) <= tol {
                    return Err(Error::Singular(format!(
                        "control points {} and {} coincide",
                        j, i
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Dense residual `max_i |T(source_i) - target_i|`.
pub fn max_residual(t: &TpsTransform, source: &LandmarkSet, target: &LandmarkSet) -> f64 {
    source
        .points()
        .iter()
        .zip(target.points())
        .map(|(&s, &d)| t.apply(s).dist2(d).sqrt())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::landmarks::canonical_template;

    fn square() -> LandmarkSet {
        LandmarkSet::from_xy(&[(0.0, 0.0), (10.0, 0.0), (0.0, 10.0), (10.0, 10.0), (4.0, 6.0)])
            .unwrap()
    }

    #[test]
    fn identity_fit() {
        let s = square();
        let t = tps_fit(&s, &s, 0.0).unwrap();
        let a = t.affine();
        assert!((a[0][1] - 1.0).abs() < 1e-12 && (a[1][2] - 1.0).abs() < 1e-12);
        assert!(a[0][0].abs() < 1e-10 && a[0][2].abs() < 1e-12);
        assert!(a[1][0].abs() < 1e-10 && a[1][1].abs() < 1e-12);
        assert!(t.kernel_weights().iter().all(|w| w[0].abs() < 1e-12 && w[1].abs() < 1e-12));
        let p = Point::new(3.3, 7.1);
        assert!(t.apply(p).dist2(p) < 1e-20);
    }

    #[test]
    fn translation_fit() {
        let s = canonical_template(112);
        let d = s.translate(Point::new(5.0, 0.0));
        let t = tps_fit(&s, &d, 0.0).unwrap();
        let a = t.affine();
        assert!((a[0][0] - 5.0).abs() < 1e-8, "{:?}", a);
        assert!(a[1][0].abs() < 1e-8);
        assert!(t.kernel_weights().iter().all(|w| w[0].abs() < 1e-8 && w[1].abs() < 1e-8));
        let mid = (s.point(0) + s.point(30)) * 0.5;
        let moved = t.apply(mid);
        assert!(moved.dist2(mid + Point::new(5.0, 0.0)).sqrt() < 1e-6);
    }

    #[test]
    fn collinear_and_duplicate_rejected() {
        let line = LandmarkSet::from_xy(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0), (3.0, 3.0)]).unwrap();
        assert!(matches!(tps_fit(&line, &line, 0.0), Err(Error::Singular(_))));
        let dup =
            LandmarkSet::from_xy(&[(0.0, 0.0), (5.0, 0.0), (0.0, 5.0), (5.0, 0.0)]).unwrap();
        assert!(matches!(tps_fit(&dup, &dup, 0.0), Err(Error::Singular(_))));
        // regularization makes duplicates solvable
        assert!(tps_fit(&dup, &dup, 1.0).is_ok());
    }

    #[test]
    fn too_few_points() {
        let two = LandmarkSet::from_xy(&[(0.0, 0.0), (1.0, 0.0)]).unwrap();
        assert!(tps_fit(&two, &two, 0.0).is_err());
    }

    #[test]
    fn side_conditions_hold() {
        let s = square();
        let d = LandmarkSet::from_xy(&[(0.5, 0.0), (10.0, 1.0), (0.0, 9.0), (11.0, 10.0), (5.0, 5.0)])
            .unwrap();
        let t = tps_fit(&s, &d, 0.0).unwrap();
        for axis in 0..2 {
            let w: Vec<f64> = t.kernel_weights().iter().map(|w| w[axis]).collect();
            let sum: f64 = w.iter().sum();
            let mx: f64 = w.iter().zip(s.points()).map(|(w, p)| w * p.x).sum();
            let my: f64 = w.iter().zip(s.points()).map(|(w, p)| w * p.y).sum();
            assert!(sum.abs() < 1e-8 && mx.abs() < 1e-8 && my.abs() < 1e-8);
        }
        assert!(max_residual(&t, &s, &d) < 1e-9);
    }
}
