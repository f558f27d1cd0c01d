//! Segment trusses and the determinant of the elongation map
//! `(A, b) -> ((A p_i + b) . (p_i - q_i))_i` on infinitesimal rigid motions.
//!
//! Skew matrices are coordinatized by their axial vector: in 2D
//! `A x = a x^perp` with `x^perp = (-x2, x1)`, in 3D `A x = w x x`. With this
//! choice the truss rows are exactly `(p ^ v, v)` and `(p x v, v)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentPair {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl SegmentPair {
    pub fn new(p: &[f64], q: &[f64]) -> Self {
        Self {
            p: p.to_vec(),
            q: q.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }

    pub fn length(&self) -> f64 {
        self.p
            .iter()
            .zip(&self.q)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// The oriented line through `p` in direction `p - q`.
    pub fn line(&self) -> Option<OrientedLine> {
        let v: Vec<f64> = self.p.iter().zip(&self.q).map(|(a, b)| a - b).collect();
        OrientedLine::new(&self.p, &v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrientedLine {
    pub point: Vec<f64>,
    pub dir: Vec<f64>,
}

impl OrientedLine {
    /// Normalizes `dir`; `None` if it vanishes.
    pub fn new(point: &[f64], dir: &[f64]) -> Option<Self> {
        let n = norm(dir);
        if n == 0.0 || !n.is_finite() {
            return None;
        }
        Some(Self {
            point: point.to_vec(),
            dir: dir.iter().map(|d| d / n).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.point.len()
    }

    /// Equality in the oriented affine Grassmannian.
    pub fn same_as(&self, other: &OrientedLine) -> bool {
        if self.dim() != other.dim() {
            return false;
        }
        let dv: f64 = norm(&sub(&self.dir, &other.dir));
        if dv > 1e-12 {
            return false;
        }
        let d = sub(&self.point, &other.point);
        wedge_norm(&d, &self.dir) <= 1e-12 * (1.0 + norm(&d))
    }

    fn check_unit(&self) -> Result<()> {
        if (norm(&self.dir) - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput("line direction is not a unit vector".into()));
        }
        Ok(())
    }
}

/// Rows of the elongation map in the canonical `Skew(d) x R^d` basis.
#[derive(Clone, Debug, PartialEq)]
pub struct TrussMatrix {
    pub dim: usize,
    pub rows: DMatrix<f64>,
}

impl TrussMatrix {
    /// Applies the map to skew coordinates and translation.
    pub fn apply(&self, rigid: &RigidMotion) -> DVector<f64> {
        &self.rows * DVector::from_vec(rigid.coords())
    }
}

/// Infinitesimal rigid motion `x -> A x + b` with `A` given by axial coordinates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RigidMotion {
    pub skew: Vec<f64>,
    pub b: Vec<f64>,
}

impl RigidMotion {
    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn coords(&self) -> Vec<f64> {
        self.skew.iter().chain(&self.b).copied().collect()
    }

    pub fn from_coords(dim: usize, c: &[f64]) -> Self {
        let k = skew_dim(dim);
        Self {
            skew: c[..k].to_vec(),
            b: c[k..].to_vec(),
        }
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        match self.dim() {
            2 => {
                let a = self.skew[0];
                DMatrix::from_row_slice(2, 2, &[0.0, -a, a, 0.0])
            }
            _ => {
                let w = &self.skew;
                DMatrix::from_row_slice(3, 3, &[0.0, -w[2], w[1], w[2], 0.0, -w[0], -w[1], w[0], 0.0])
            }
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let m = self.matrix();
        (0..self.dim())
            .map(|i| (0..self.dim()).map(|j| m[(i, j)] * x[j]).sum::<f64>() + self.b[i])
            .collect()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.coords())
    }
}

pub fn skew_dim(d: usize) -> usize {
    d * (d - 1) / 2
}

pub fn required_count(d: usize) -> usize {
    d * (d + 1) / 2
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn wedge_norm(a: &[f64], b: &[f64]) -> f64 {
    if a.len() == 2 {
        (a[0] * b[1] - a[1] * b[0]).abs()
    } else {
        norm(&cross(a, b))
    }
}

fn cross(a: &[f64], b: &[f64]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn row(p: &[f64], v: &[f64]) -> Vec<f64> {
    if p.len() == 2 {
        vec![p[0] * v[1] - p[1] * v[0], v[0], v[1]]
    } else {
        let c = cross(p, v);
        vec![c[0], c[1], c[2], v[0], v[1], v[2]]
    }
}

fn common_dim<I: Iterator<Item = usize>>(mut dims: I) -> Result<usize> {
    let d = dims.next().ok_or(Error::WrongCount { expected: 3, got: 0 })?;
    if d != 2 && d != 3 {
        return Err(Error::DimensionMismatch);
    }
    if dims.any(|e| e != d) {
        return Err(Error::DimensionMismatch);
    }
    Ok(d)
}

pub fn truss_matrix(pairs: &[SegmentPair]) -> Result<TrussMatrix> {
    let d = common_dim(pairs.iter().flat_map(|p| [p.p.len(), p.q.len()]))?;
    let cols = skew_dim(d) + d;
    let mut m = DMatrix::zeros(pairs.len(), cols);
    for (i, pr) in pairs.iter().enumerate() {
        let v = sub(&pr.p, &pr.q);
        if norm(&v) == 0.0 {
            return Err(Error::DegeneratePair(i));
        }
        for (j, x) in row(&pr.p, &v).into_iter().enumerate() {
            m[(i, j)] = x;
        }
    }
    Ok(TrussMatrix { dim: d, rows: m })
}

pub fn truss_det(pairs: &[SegmentPair]) -> Result<f64> {
    let t = truss_matrix(pairs)?;
    let n = required_count(t.dim);
    if pairs.len() != n {
        return Err(Error::WrongCount {
            expected: n,
            got: pairs.len(),
        });
    }
    Ok(t.rows.determinant())
}

pub fn line_function_f(lines: &[OrientedLine]) -> Result<f64> {
    let d = common_dim(lines.iter().flat_map(|l| [l.point.len(), l.dir.len()]))?;
    let n = required_count(d);
    if lines.len() != n {
        return Err(Error::WrongCount {
            expected: n,
            got: lines.len(),
        });
    }
    let mut m = DMatrix::zeros(n, n);
    for (i, l) in lines.iter().enumerate() {
        l.check_unit()?;
        for (j, x) in row(&l.point, &l.dir).into_iter().enumerate() {
            m[(i, j)] = x;
        }
    }
    Ok(m.determinant())
}

const PAR_TOL: f64 = 1e-12;

fn cross2(a: &[f64], b: &[f64]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Intersection of two non-parallel 2D lines.
fn intersect(l1: &OrientedLine, l2: &OrientedLine) -> [f64; 2] {
    // l1.point + s l1.dir = l2.point + t l2.dir
    let d = sub(&l2.point, &l1.point);
    let s = cross2(&d, &l2.dir) / cross2(&l1.dir, &l2.dir);
    [l1.point[0] + s * l1.dir[0], l1.point[1] + s * l1.dir[1]]
}

/// Closed form `|p - q| |sin alpha| |sin beta|` for three plane lines, with
/// `L1` required to cross both others.
pub fn f2d_closed_form(l1: &OrientedLine, l2: &OrientedLine, l3: &OrientedLine) -> Result<f64> {
    for l in [l1, l2, l3] {
        if l.dim() != 2 || l.dir.len() != 2 {
            return Err(Error::DimensionMismatch);
        }
        l.check_unit()?;
    }
    let s12 = cross2(&l1.dir, &l2.dir);
    let s13 = cross2(&l1.dir, &l3.dir);
    let s23 = cross2(&l2.dir, &l3.dir);
    let par12 = s12.abs() <= PAR_TOL;
    let par13 = s13.abs() <= PAR_TOL;
    let par23 = s23.abs() <= PAR_TOL;
    if par12 && par13 && par23 {
        return Ok(0.0);
    }
    if par12 || par13 {
        return Err(Error::NeedsReordering);
    }
    let p = intersect(l1, l2);
    let q = intersect(l1, l3);
    let dist = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
    Ok(dist * s12.abs() * s13.abs())
}

/// Factorization of the 3D line function when the first three lines share
/// one direction.
pub fn f3d_factorization(lines: &[OrientedLine]) -> Result<f64> {
    if lines.len() != 6 {
        return Err(Error::WrongCount {
            expected: 6,
            got: lines.len(),
        });
    }
    if lines.iter().any(|l| l.dim() != 3 || l.dir.len() != 3) {
        return Err(Error::DimensionMismatch);
    }
    for l in lines {
        l.check_unit()?;
    }
    let v1 = lines[0].dir.clone();
    for l in &lines[1..3] {
        if norm(&sub(&l.dir, &v1)) > 1e-12 {
            return Err(Error::NotParallelTriple);
        }
    }
    // orthonormal basis (e, f) of v1^perp
    let pick = if v1[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let e = {
        let c = cross(&v1, &pick);
        let n = norm(&c);
        [c[0] / n, c[1] / n, c[2] / n]
    };
    let f = cross(&v1, &e);
    let proj = |x: &[f64]| -> [f64; 2] {
        [
            x[0] * e[0] + x[1] * e[1] + x[2] * e[2],
            x[0] * f[0] + x[1] * f[1] + x[2] * f[2],
        ]
    };
    let x1 = proj(&lines[0].point);
    let x2 = proj(&lines[1].point);
    let x3 = proj(&lines[2].point);
    let wedge = cross2(&sub(&x2, &x1), &sub(&x3, &x1)).abs();
    let mut factor = wedge;
    let mut projected = Vec::with_capacity(3);
    for (k, l) in lines[3..].iter().enumerate() {
        let vb = proj(&l.dir);
        let nv = norm(&vb);
        if nv <= 1e-12 {
            return Err(Error::DegenerateProjection(k + 3));
        }
        factor *= nv;
        projected.push(OrientedLine::new(&proj(&l.point), &vb).expect("nonzero"));
    }
    Ok(factor * line_function_f(&projected)?.abs())
}

/// Threshold below which a truss determinant is treated as singular.
pub fn singular_threshold(t: &TrussMatrix) -> f64 {
    let n = t.rows.nrows();
    let rmax = (0..n).map(|i| t.rows.row(i).norm()).fold(0.0, f64::max);
    1e-10 * rmax.powi(n as i32)
}

/// Result of inverting the truss map.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrussSolve {
    pub motion: RigidMotion,
    pub det: f64,
    /// `|det F|^-1 |F|^(N-1) |m|`, the cofactor bound on `|(A, b)|`.
    pub bound: f64,
}

pub fn solve_rigid_from_truss(pairs: &[SegmentPair], measurements: &[f64]) -> Result<TrussSolve> {
    let t = truss_matrix(pairs)?;
    let n = required_count(t.dim);
    if pairs.len() != n {
        return Err(Error::WrongCount {
            expected: n,
            got: pairs.len(),
        });
    }
    if measurements.len() != n {
        return Err(Error::WrongCount {
            expected: n,
            got: measurements.len(),
        });
    }
    let det = t.rows.determinant();
    let threshold = singular_threshold(&t);
    if !(det.abs() > threshold) {
        return Err(Error::SingularTruss { det, threshold });
    }
    let m = DVector::from_column_slice(measurements);
    let x = t
        .rows
        .clone()
        .lu()
        .solve(&m)
        .ok_or(Error::SingularTruss { det, threshold })?;
    let fnorm = t.rows.norm();
    let bound = fnorm.powi(n as i32 - 1) * m.norm() / det.abs();
    Ok(TrussSolve {
        motion: RigidMotion::from_coords(t.dim, x.as_slice()),
        det,
        bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line2(p: [f64; 2], v: [f64; 2]) -> OrientedLine {
        OrientedLine::new(&p, &v).unwrap()
    }

    fn rand_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()
    }

    #[test]
    fn unit_pair_row() {
        let t = truss_matrix(&[SegmentPair::new(&[1.0, 0.0], &[0.0, 0.0])]).unwrap();
        assert_eq!(t.rows.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn degenerate_pair_rejected() {
        let e = truss_matrix(&[SegmentPair::new(&[1.0, 0.0], &[1.0, 0.0])]);
        assert_eq!(e, Err(Error::DegeneratePair(0)));
    }

    #[test]
    fn forward_map_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for d in [2usize, 3] {
            let pairs: Vec<_> = (0..7)
                .map(|_| SegmentPair::new(&rand_vec(&mut rng, d), &rand_vec(&mut rng, d)))
                .collect();
            let t = truss_matrix(&pairs).unwrap();
            for _ in 0..100 {
                let c = rand_vec(&mut rng, skew_dim(d) + d);
                let rm = RigidMotion::from_coords(d, &c);
                let got = t.apply(&rm);
                for (i, pr) in pairs.iter().enumerate() {
                    let ap = rm.apply(&pr.p);
                    let v = sub(&pr.p, &pr.q);
                    let want: f64 = ap.iter().zip(&v).map(|(a, b)| a * b).sum();
                    assert!((got[i] - want).abs() < 1e-12 * (1.0 + want.abs()));
                }
            }
        }
    }

    #[test]
    fn rays_annihilate_rotations() {
        let pairs = vec![
            SegmentPair::new(&[1.0, 0.0], &[0.0, 0.0]),
            SegmentPair::new(&[0.0, 2.0], &[0.0, 0.0]),
            SegmentPair::new(&[1.0, 1.0], &[0.0, 0.0]),
        ];
        let t = truss_matrix(&pairs).unwrap();
        let out = t.apply(&RigidMotion { skew: vec![1.3], b: vec![0.0, 0.0] });
        assert!(out.norm() < 1e-15);
        assert!(truss_det(&pairs).unwrap().abs() <= 1e-12);
        assert!(matches!(
            solve_rigid_from_truss(&pairs, &[1.0, 0.0, 0.0]),
            Err(Error::SingularTruss { .. })
        ));
    }

    #[test]
    fn axes_configuration() {
        let l1 = line2([0.0, 0.0], [1.0, 0.0]);
        let l2 = line2([0.0, 0.0], [0.0, 1.0]);
        let l3 = line2([1.0, 0.0], [0.0, 1.0]);
        assert!((f2d_closed_form(&l1, &l2, &l3).unwrap() - 1.0).abs() < 1e-15);
        assert!((line_function_f(&[l1, l2, l3]).unwrap().abs() - 1.0).abs() < 1e-15);
        let pairs = vec![
            SegmentPair::new(&[1.0, 0.0], &[0.0, 0.0]),
            SegmentPair::new(&[0.0, 1.0], &[0.0, 0.0]),
            SegmentPair::new(&[1.0, 1.0], &[1.0, 0.0]),
        ];
        assert!((truss_det(&pairs).unwrap().abs() - 1.0).abs() < 1e-15);
        let mut doubled = pairs.clone();
        doubled[0].p = vec![2.0, 0.0];
        assert!((truss_det(&doubled).unwrap().abs() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn parallel_and_reordering() {
        let h = |y: f64| line2([0.0, y], [1.0, 0.0]);
        assert_eq!(f2d_closed_form(&h(0.0), &h(1.0), &h(2.0)).unwrap(), 0.0);
        let v = line2([0.0, 0.0], [0.0, 1.0]);
        assert_eq!(f2d_closed_form(&h(0.0), &h(1.0), &v), Err(Error::NeedsReordering));
        // the vertical line crosses both horizontals
        let f = f2d_closed_form(&v, &h(0.0), &h(1.0)).unwrap();
        let g = line_function_f(&[h(0.0), h(1.0), v]).unwrap().abs();
        assert!((f - g).abs() < 1e-12);
    }

    #[test]
    fn orientation_and_swap_flip_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut lines: Vec<_> = (0..3)
            .map(|_| OrientedLine::new(&rand_vec(&mut rng, 2), &rand_vec(&mut rng, 2)).unwrap())
            .collect();
        let f0 = line_function_f(&lines).unwrap();
        lines.swap(0, 2);
        assert!((line_function_f(&lines).unwrap() + f0).abs() < 1e-12);
        lines.swap(0, 2);
        lines[1].dir = lines[1].dir.iter().map(|x| -x).collect();
        assert!((line_function_f(&lines).unwrap() + f0).abs() < 1e-12);
    }

    #[test]
    fn representative_independence() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in [2usize, 3] {
            let mut lines: Vec<_> = (0..required_count(d))
                .map(|_| OrientedLine::new(&rand_vec(&mut rng, d), &rand_vec(&mut rng, d)).unwrap())
                .collect();
            let f0 = line_function_f(&lines).unwrap();
            let moved = lines[1].clone();
            let s = rng.gen_range(-3.0..3.0);
            lines[1].point = moved.point.iter().zip(&moved.dir).map(|(p, v)| p + s * v).collect();
            assert!(lines[1].same_as(&moved));
            assert!((line_function_f(&lines).unwrap() - f0).abs() < 1e-10);
        }
    }

    #[test]
    fn f3d_lifted_axes() {
        let e1 = [1.0, 0.0, 0.0];
        let lines = vec![
            OrientedLine::new(&[0.0, 0.0, 0.0], &e1).unwrap(),
            OrientedLine::new(&[0.0, 1.0, 0.0], &e1).unwrap(),
            OrientedLine::new(&[0.0, 0.0, 1.0], &e1).unwrap(),
            OrientedLine::new(&[0.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap(),
            OrientedLine::new(&[0.0, 0.0, 0.0], &[0.0, 0.0, 1.0]).unwrap(),
            OrientedLine::new(&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]).unwrap(),
        ];
        let f = f3d_factorization(&lines).unwrap();
        assert!((f - 1.0).abs() < 1e-12);
        assert!((line_function_f(&lines).unwrap().abs() - 1.0).abs() < 1e-12);

        let mut flat = lines.clone();
        flat[2].point = vec![0.0, 2.0, 0.0];
        assert!(f3d_factorization(&flat).unwrap().abs() < 1e-15);

        let mut bad = lines.clone();
        bad[1].dir = vec![0.0, 1.0, 0.0];
        assert_eq!(f3d_factorization(&bad), Err(Error::NotParallelTriple));
        let mut bad = lines;
        bad[4].dir = e1.to_vec();
        assert_eq!(f3d_factorization(&bad), Err(Error::DegenerateProjection(4)));
    }

    #[test]
    fn solve_recovers_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for d in [2usize, 3] {
            let pairs: Vec<_> = (0..required_count(d))
                .map(|_| SegmentPair::new(&rand_vec(&mut rng, d), &rand_vec(&mut rng, d)))
                .collect();
            let rm = RigidMotion::from_coords(d, &rand_vec(&mut rng, skew_dim(d) + d));
            let m = truss_matrix(&pairs).unwrap().apply(&rm);
            let s = solve_rigid_from_truss(&pairs, m.as_slice()).unwrap();
            for (a, b) in s.motion.coords().iter().zip(rm.coords()) {
                assert!((a - b).abs() < 1e-8 * (1.0 + b.abs()));
            }
            assert!(s.motion.norm() <= s.bound * (1.0 + 1e-12));
            let z = solve_rigid_from_truss(&pairs, &vec![0.0; required_count(d)]).unwrap();
            assert!(z.motion.norm() == 0.0);
        }
    }
}
