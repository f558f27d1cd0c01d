//! Plane elastic tensors in Voigt/Mandel form.
//!
//! A symmetric 2×2 strain is encoded as `xi = (F11, F22, sqrt(2) * sym F12)`,
//! which makes the Frobenius inner product of symmetric matrices the plain
//! Euclidean one. The tensor is then a symmetric 3×3 matrix `q` and
//! `F : C F = xi^T q xi`.

use nalgebra::{Matrix2, Matrix3, SymmetricEigen, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT2: f64 = std::f64::consts::SQRT_2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElasticTensor {
    q: Matrix3<f64>,
}

/// Minimizer of the relaxed bending problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BendingResult {
    pub a: f64,
    pub b_star: f64,
    pub c_star: f64,
}

/// Config-facing description of a tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum TensorSpec {
    Isotropic {
        mu: f64,
        lambda: f64,
    },
    Voigt([[f64; 3]; 3]),
}

impl TensorSpec {
    pub fn build(&self) -> Result<ElasticTensor> {
        match *self {
            TensorSpec::Isotropic { mu, lambda } => isotropic_tensor(mu, lambda),
            TensorSpec::Voigt(rows) => ElasticTensor::from_voigt(Matrix3::from_fn(|i, j| rows[i][j])),
        }
    }
}

/// Mandel vector of `sym F`.
pub fn voigt(f: &Matrix2<f64>) -> Vector3<f64> {
    Vector3::new(f[(0, 0)], f[(1, 1)], SQRT2 * 0.5 * (f[(0, 1)] + f[(1, 0)]))
}

impl ElasticTensor {
    /// Wraps a Voigt matrix. The matrix is symmetrized; positivity is checked
    /// lazily by [`coercivity_constant`].
    pub fn from_voigt(q: Matrix3<f64>) -> Result<Self> {
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite tensor entry".into()));
        }
        let asym = (q - q.transpose()).norm();
        if asym > 1e-12 * (1.0 + q.norm()) {
            return Err(Error::InvalidInput("Voigt matrix is not symmetric".into()));
        }
        Ok(Self {
            q: 0.5 * (q + q.transpose()),
        })
    }

    pub fn voigt_matrix(&self) -> &Matrix3<f64> {
        &self.q
    }

    pub fn scaled(&self, t: f64) -> Self {
        Self { q: self.q * t }
    }

    pub fn quadratic_form(&self, f: &Matrix2<f64>) -> f64 {
        let xi = voigt(f);
        xi.dot(&(self.q * xi))
    }

    /// Quadratic form on a strain given directly by its three components
    /// `(e11, e22, e12)` of the symmetric part.
    #[inline]
    pub fn form_sym(&self, e11: f64, e22: f64, e12: f64) -> f64 {
        let x = [e11, e22, SQRT2 * e12];
        let q = &self.q;
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += x[i] * q[(i, j)] * x[j];
            }
        }
        s
    }

    /// Stress-like action `C e` returned in tensor components
    /// `(s11, s22, s12)` so that `F : C e = F11 s11 + F22 s22 + 2 symF12 s12`.
    #[inline]
    pub fn apply_sym(&self, e11: f64, e22: f64, e12: f64) -> (f64, f64, f64) {
        let x = Vector3::new(e11, e22, SQRT2 * e12);
        let s = self.q * x;
        (s[0], s[1], s[2] / SQRT2)
    }

    pub fn coercivity_constant(&self) -> Result<f64> {
        let lmin = SymmetricEigen::new(self.q).eigenvalues.min();
        if lmin <= 1e-12 * self.q.norm() || lmin <= 0.0 {
            return Err(Error::NotCoercive(lmin));
        }
        Ok(0.25 * lmin)
    }

    /// Relaxed bending modulus: minimum of the form over `[[1, b], [0, c]]`.
    pub fn bending_constant(&self) -> Result<BendingResult> {
        self.coercivity_constant()?;
        let q = &self.q;
        // xi(b, c) = e1 + c e2 + (b / sqrt2) e3
        let k = Matrix2::new(
            q[(2, 2)] / 2.0,
            q[(2, 1)] / SQRT2,
            q[(1, 2)] / SQRT2,
            q[(1, 1)],
        );
        let r = Vector2::new(q[(2, 0)] / SQRT2, q[(1, 0)]);
        let x = k
            .lu()
            .solve(&(-r))
            .ok_or(Error::NotCoercive(0.0))?;
        let a = q[(0, 0)] + r.dot(&x);
        Ok(BendingResult {
            a,
            b_star: x[0],
            c_star: x[1],
        })
    }
}

pub fn quadratic_form(c: &ElasticTensor, f: &Matrix2<f64>) -> f64 {
    c.quadratic_form(f)
}

pub fn coercivity_constant(c: &ElasticTensor) -> Result<f64> {
    c.coercivity_constant()
}

pub fn bending_constant(c: &ElasticTensor) -> Result<BendingResult> {
    c.bending_constant()
}

/// `2 mu |sym F|^2 + lambda tr(F)^2`.
pub fn isotropic_tensor(mu: f64, lambda: f64) -> Result<ElasticTensor> {
    if !(mu > 0.0) || !(2.0 * mu + lambda > 0.0) || !lambda.is_finite() || !mu.is_finite() {
        return Err(Error::InvalidLame { mu, lambda });
    }
    let q = Matrix3::new(
        2.0 * mu + lambda,
        lambda,
        0.0,
        lambda,
        2.0 * mu + lambda,
        0.0,
        0.0,
        0.0,
        2.0 * mu,
    );
    ElasticTensor::from_voigt(q)
}

/// Stationarity residual of the bending problem at `(b, c)`.
pub fn bending_residual(c: &ElasticTensor, b: f64, cc: f64) -> f64 {
    let q = c.voigt_matrix();
    let xi = Vector3::new(1.0, cc, b / SQRT2);
    let g = q * xi;
    Vector2::new(g[2] / SQRT2, g[1]).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        let m = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        m * m.transpose() + Matrix3::identity() * 0.2
    }

    /// C_ijkl assembled from the Voigt matrix, contracted index by index.
    fn index_sum(q: &Matrix3<f64>, f: &Matrix2<f64>) -> f64 {
        let basis = |a: usize, i: usize, j: usize| -> f64 {
            match a {
                0 => (i == 0 && j == 0) as u8 as f64,
                1 => (i == 1 && j == 1) as u8 as f64,
                _ => (i != j) as u8 as f64 / SQRT2,
            }
        };
        let mut s = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        let mut cijkl = 0.0;
                        for a in 0..3 {
                            for b in 0..3 {
                                cijkl += q[(a, b)] * basis(a, i, j) * basis(b, k, l);
                            }
                        }
                        s += cijkl * f[(i, j)] * f[(k, l)];
                    }
                }
            }
        }
        s
    }

    #[test]
    fn isotropic_examples() {
        let c = isotropic_tensor(1.0, 0.0).unwrap();
        assert_eq!(c.quadratic_form(&Matrix2::new(0.0, 1.0, -1.0, 0.0)), 0.0);
        assert!((c.quadratic_form(&Matrix2::new(1.0, 0.0, 0.0, 0.0)) - 2.0).abs() < 1e-15);
        assert!((c.coercivity_constant().unwrap() - 0.5).abs() < 1e-14);
        let c = isotropic_tensor(1.0, 1.0).unwrap();
        assert!((c.quadratic_form(&Matrix2::identity()) - 8.0).abs() < 1e-14);
        assert!(isotropic_tensor(2.0, -1.0).unwrap().coercivity_constant().unwrap() > 0.0);
        assert!(matches!(isotropic_tensor(1.0, -2.5), Err(Error::InvalidLame { .. })));
        assert!(matches!(isotropic_tensor(0.0, 1.0), Err(Error::InvalidLame { .. })));
    }

    #[test]
    fn zero_tensor_not_coercive() {
        let c = ElasticTensor::from_voigt(Matrix3::zeros()).unwrap();
        assert!(matches!(c.coercivity_constant(), Err(Error::NotCoercive(_))));
        assert!(matches!(c.bending_constant(), Err(Error::NotCoercive(_))));
    }

    #[test]
    fn bending_isotropic() {
        let r = isotropic_tensor(1.0, 1.0).unwrap().bending_constant().unwrap();
        assert!((r.a - 8.0 / 3.0).abs() < 1e-14);
        assert!(r.b_star.abs() < 1e-15);
        assert!((r.c_star + 1.0 / 3.0).abs() < 1e-14);
        let r = isotropic_tensor(1.0, 0.0).unwrap().bending_constant().unwrap();
        assert!((r.a - 2.0).abs() < 1e-14 && r.b_star == 0.0 && r.c_star == 0.0);
    }

    #[test]
    fn index_sum_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let q = random_spd(&mut rng);
            let c = ElasticTensor::from_voigt(q).unwrap();
            let f = Matrix2::from_fn(|_, _| rng.gen_range(-2.0..2.0));
            let a = c.quadratic_form(&f);
            let b = index_sum(&q, &f);
            assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn optimality_against_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = ElasticTensor::from_voigt(random_spd(&mut rng)).unwrap();
        let r = c.bending_constant().unwrap();
        assert!(bending_residual(&c, r.b_star, r.c_star) <= 1e-12 * c.voigt_matrix().norm());
        for _ in 0..100 {
            let (b, cc) = (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            let v = c.quadratic_form(&Matrix2::new(1.0, b, 0.0, cc));
            assert!(r.a <= v + 1e-12);
        }
    }

    proptest! {
        #[test]
        fn form_depends_on_sym_part_only(a in -3.0..3.0f64, b in -3.0..3.0f64, c in -3.0..3.0f64, d in -3.0..3.0f64, mu in 0.1..5.0f64, la in -0.1..5.0f64) {
            let t = isotropic_tensor(mu, la).unwrap();
            let f = Matrix2::new(a, b, c, d);
            let s = 0.5 * (f + f.transpose());
            prop_assert_eq!(t.quadratic_form(&f), t.quadratic_form(&s));
        }

        #[test]
        fn bending_scales_linearly(mu in 0.1..5.0f64, la in 0.0..5.0f64, t in 0.01..100.0f64) {
            let c = isotropic_tensor(mu, la).unwrap();
            let a1 = c.bending_constant().unwrap().a;
            let a2 = c.scaled(t).bending_constant().unwrap().a;
            prop_assert!((a2 - t * a1).abs() <= 1e-12 * a2.abs());
        }

        #[test]
        fn bending_monotone(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q2 = random_spd(&mut rng);
            let m = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let q1 = q2 + m * m.transpose();
            let a1 = ElasticTensor::from_voigt(q1).unwrap().bending_constant().unwrap().a;
            let a2 = ElasticTensor::from_voigt(q2).unwrap().bending_constant().unwrap().a;
            prop_assert!(a1 >= a2 - 1e-12);
        }
    }
}
