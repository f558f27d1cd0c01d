//! Two explicit fields: a crack that stops just short of the top surface,
//! held together by a tiny strained triangle, and a small ball that is
//! displaced far away.

use crate::error::{Error, Result};
use crate::field::{graded, CrackSet, DisplacementField};

/// Cells per direction on the refined patch around the feature.
pub const PATCH_CELLS: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TriangleGeometry {
    /// Apex and the two upper corners, in thin-domain coordinates.
    pub apex: [f64; 2],
    pub left: [f64; 2],
    pub right: [f64; 2],
}

impl TriangleGeometry {
    pub fn new(h: f64, l: f64) -> Self {
        let h4 = h.powi(4);
        Self {
            apex: [l / 2.0, h / 2.0 - h4],
            left: [l / 2.0 - h4, h / 2.0],
            right: [l / 2.0 + h4, h / 2.0],
        }
    }

    /// Length of the vertical crack below the apex.
    pub fn crack_length(h: f64) -> f64 {
        h - h.powi(4)
    }
}

/// Displacement in thin-domain coordinates `X = (x1, h x2)`.
pub fn triangle_displacement(h: f64, l: f64, x: [f64; 2]) -> [f64; 2] {
    let g = TriangleGeometry::new(h, l);
    let t = g.apex;
    let d = [x[0] - t[0], x[1] - t[1]];
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let inside = d[1] >= (x[0] - t[0]).abs();
    if inside {
        // h^-1 (v^perp (x) v)(x - t) with v = (1, 1)/sqrt2, v^perp = (-1, 1)/sqrt2
        let vd = s * (d[0] + d[1]);
        [-s * vd / h, s * vd / h]
    } else if x[0] > l / 2.0 {
        [-d[1] / h, d[0] / h]
    } else {
        [0.0, 0.0]
    }
}

pub fn triangle_counterexample(h: f64, l: f64) -> Result<(DisplacementField, CrackSet)> {
    triangle_counterexample_with(h, l, PATCH_CELLS)
}

/// As [`triangle_counterexample`] with `patch` cells per direction over the
/// triangle's bounding box.
pub fn triangle_counterexample_with(h: f64, l: f64, patch: usize) -> Result<(DisplacementField, CrackSet)> {
    if !(h > 0.0 && h <= 1.0) || !(h.powi(4) < h / 2.0) {
        return Err(Error::InvalidThickness(h));
    }
    if !(l > 2.0 * h.powi(4)) {
        return Err(Error::InvalidInput("strip too short for the triangle".into()));
    }
    let h3 = h.powi(3);
    let h4 = h.powi(4);
    let xs = graded(&[0.0, l / 2.0 - h4, l / 2.0 + h4, l], &[2, patch, 2]);
    let ys = graded(&[-0.5, 0.5 - h3, 0.5], &[2, patch]);
    let field = DisplacementField::from_fn(l, h, xs, ys, |x1, x2| triangle_displacement(h, l, [x1, h * x2]))?;
    let mut crack = CrackSet::empty();
    crack.push(CrackSet::vertical(l / 2.0, -0.5, 0.5 - h3));
    Ok((field, crack))
}

/// Cells per direction across the ball's bounding box.
pub const BALL_CELLS: usize = 500;
/// Polygon resolution of the circular crack.
pub const BALL_SEGMENTS: usize = 10_000;

pub fn escaping_ball_example(h: f64, l: f64) -> Result<(DisplacementField, CrackSet)> {
    escaping_ball_example_with(h, l, BALL_CELLS, BALL_SEGMENTS)
}

pub fn escaping_ball_example_with(h: f64, l: f64, cells: usize, segments: usize) -> Result<(DisplacementField, CrackSet)> {
    if !(h > 0.0 && h <= 1.0) {
        return Err(Error::InvalidThickness(h));
    }
    let r = h * h;
    if !(r < (l / 2.0).min(0.5) / 2.0) {
        return Err(Error::BallTooLarge { radius: r });
    }
    let c = [l / 2.0, 0.0];
    let m = 1.25 * r;
    let xs = graded(&[0.0, c[0] - m, c[0] + m, l], &[2, cells, 2]);
    let ys = graded(&[-0.5, -m, m, 0.5], &[2, cells, 2]);
    let depth = -h.powi(-5);
    // membership is decided by the inscribed polygon so that the jump set of
    // the nodal field is exactly the crack
    let sector = 2.0 * std::f64::consts::PI / segments as f64;
    let apothem = r * (0.5 * sector).cos();
    let inside = |x1: f64, x2: f64| {
        let (dx, dy) = (x1 - c[0], x2 - c[1]);
        let th = dy.atan2(dx).rem_euclid(2.0 * std::f64::consts::PI);
        let k = (th / sector).floor();
        let phi = (k + 0.5) * sector;
        dx * phi.cos() + dy * phi.sin() < apothem
    };
    let field = DisplacementField::from_fn(l, h, xs, ys, |x1, x2| {
        if inside(x1, x2) {
            [0.0, depth]
        } else {
            [0.0, 0.0]
        }
    })?;
    Ok((field, CrackSet::circle(c, r, segments)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{evaluate_eh, unrescaled};
    use crate::tensor::isotropic_tensor;

    #[test]
    fn triangle_field_is_continuous_off_the_crack() {
        let (h, l) = (0.25, 1.0);
        let g = TriangleGeometry::new(h, l);
        for k in 0..=10 {
            let s = k as f64 / 10.0;
            // along both slanted edges
            for e in [g.left, g.right] {
                let p = [g.apex[0] + s * (e[0] - g.apex[0]), g.apex[1] + s * (e[1] - g.apex[1])];
                let eps = 1e-13;
                let a = triangle_displacement(h, l, [p[0], p[1] + eps]);
                let b = triangle_displacement(h, l, [p[0], p[1] - eps]);
                assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn triangle_energy_scaling_coarse() {
        let c = isotropic_tensor(1.0, 0.0).unwrap();
        let h = 0.125;
        let (f, crack) = triangle_counterexample_with(h, 1.0, 128).unwrap();
        let e = evaluate_eh(&f, &crack, &c, 1.0).unwrap();
        let (el, len) = unrescaled(&e, h, 1.0);
        assert!((el / h.powi(6) - 1.0).abs() < 0.1, "{}", el / h.powi(6));
        assert!((len - TriangleGeometry::crack_length(h)).abs() < 1e-15);
    }

    #[test]
    fn ball_example() {
        let c = isotropic_tensor(1.0, 1.0).unwrap();
        let h = 0.125;
        let (f, crack) = escaping_ball_example_with(h, 1.0, 200, 2000).unwrap();
        let e = evaluate_eh(&f, &crack, &c, 1.0).unwrap();
        assert!(e.elastic.abs() < 1e-9);
        assert!(e.total <= 2.0 * std::f64::consts::PI * h);
        let int = f.integrate(1);
        assert!((int / (-std::f64::consts::PI / h) - 1.0).abs() < 0.02, "{int}");
        assert!(matches!(escaping_ball_example(0.9, 1.0), Err(Error::BallTooLarge { .. })));
    }
}
