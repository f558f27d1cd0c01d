//! Ambrosio–Tortorelli (AT2) regularization of the rescaled Griffith energy
//! with alternating minimization.
//!
//! Q1 elements on the tensor grid of the displacement field. Bulk and
//! damage-gradient terms use one midpoint quadrature point per cell; the
//! fidelity and `(1 - phi)^2 / (4 eps)` terms are lumped to the nodes. The
//! degradation on a cell is the mean of the nodal `phi^2` plus `k_eps`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::density;
use crate::error::{Error, Result};
use crate::field::{CrackSegment, CrackSet, DisplacementField};
use crate::linalg::{ksum, pcg, KahanSum};
use crate::tensor::ElasticTensor;

pub const DEFAULT_K_EPS: f64 = 1e-6;
pub const CG_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DamageField {
    pub phi: Vec<f64>,
    pub epsilon: f64,
    pub k_eps: f64,
}

impl DamageField {
    pub fn intact(n: usize, epsilon: f64, k_eps: f64) -> Self {
        Self {
            phi: vec![1.0; n],
            epsilon,
            k_eps,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SolveReport {
    pub energy_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct AtEnergy {
    pub bulk: f64,
    pub surface: f64,
    pub fidelity: f64,
    pub total: f64,
}

/// Starting damage for the alternating loop.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DamageInit {
    #[default]
    Intact,
    /// Uniform random values in `[0.9, 1]` from the given seed.
    Random { seed: u64 },
}

/// Static data of a phase-field problem: grid, target, material.
#[derive(Clone, Debug)]
pub struct PhaseFieldProblem {
    /// Grid carrier; its nodal values are the fidelity target `g`.
    pub target: DisplacementField,
    pub tensor: ElasticTensor,
    pub beta: f64,
    pub fidelity: f64,
    pub epsilon: f64,
    pub k_eps: f64,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub init: DamageInit,
}

impl PhaseFieldProblem {
    /// Problem with the default regularization `eps = 4 max(dx, h dy)`.
    pub fn new(target: DisplacementField, tensor: ElasticTensor, beta: f64, fidelity: f64) -> Self {
        let eps = default_epsilon(&target);
        Self {
            target,
            tensor,
            beta,
            fidelity,
            epsilon: eps,
            k_eps: DEFAULT_K_EPS,
            max_iter: 500,
            rel_tol: 1e-8,
            init: DamageInit::Intact,
        }
    }

    fn nodes(&self) -> usize {
        self.target.values.len()
    }

    fn check(&self, y: &DisplacementField, phi: &DamageField) -> Result<()> {
        if y.xs != self.target.xs || y.ys != self.target.ys || y.h != self.target.h {
            return Err(Error::ShapeMismatch("displacement grid differs from the problem grid".into()));
        }
        if phi.phi.len() != self.nodes() {
            return Err(Error::ShapeMismatch(format!(
                "damage has {} nodes, grid has {}",
                phi.phi.len(),
                self.nodes()
            )));
        }
        if !(phi.epsilon > 0.0) || !(phi.k_eps >= 0.0) {
            return Err(Error::InvalidInput("need epsilon > 0 and k_eps >= 0".into()));
        }
        Ok(())
    }
}

pub fn default_epsilon(f: &DisplacementField) -> f64 {
    let dx = f.xs.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let dy = f.ys.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    4.0 * dx.max(f.h * dy)
}

/// Lumped nodal areas.
fn lumped_mass(f: &DisplacementField) -> Vec<f64> {
    let w = f.xs.len();
    let mut m = vec![0.0; f.values.len()];
    for j in 0..f.ny() {
        for i in 0..f.nx() {
            let a = 0.25 * f.cell_area(i, j);
            for (p, q) in [(i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)] {
                m[q * w + p] += a;
            }
        }
    }
    m
}

/// Midpoint gradient weights of the four cell nodes `(i,j), (i+1,j), (i,j+1), (i+1,j+1)`.
#[inline]
fn grad_weights(dx: f64, dy: f64) -> ([f64; 4], [f64; 4]) {
    (
        [-0.5 / dx, 0.5 / dx, -0.5 / dx, 0.5 / dx],
        [-0.5 / dy, -0.5 / dy, 0.5 / dy, 0.5 / dy],
    )
}

#[inline]
fn cell_nodes(w: usize, i: usize, j: usize) -> [usize; 4] {
    [j * w + i, j * w + i + 1, (j + 1) * w + i, (j + 1) * w + i + 1]
}

fn degradation(phi: &[f64], nodes: &[usize; 4], k: f64) -> f64 {
    0.25 * nodes.iter().map(|&n| phi[n] * phi[n]).sum::<f64>() + k
}

/// Per-cell undegraded elastic energy `h^-2 1/2 G:CG |cell|`.
fn cell_elastic(y: &DisplacementField, c: &ElasticTensor) -> Vec<f64> {
    let (nx, ny) = (y.nx(), y.ny());
    let h2 = y.h * y.h;
    let mut out = vec![0.0; nx * ny];
    out.par_chunks_mut(nx).enumerate().for_each(|(j, row)| {
        for (i, s) in row.iter_mut().enumerate() {
            *s = density(c, &y.cell_scaled_gradient(i, j)) * y.cell_area(i, j) / h2;
        }
    });
    let _ = ny;
    out
}

pub fn at_energy(prob: &PhaseFieldProblem, y: &DisplacementField, phi: &DamageField) -> Result<AtEnergy> {
    prob.check(y, phi)?;
    let f = &prob.target;
    let w = f.xs.len();
    let nx = f.nx();
    let el = cell_elastic(y, &prob.tensor);
    let mass = lumped_mass(f);
    let mut bulk = KahanSum::new();
    let mut grad = KahanSum::new();
    for j in 0..f.ny() {
        for i in 0..nx {
            let nodes = cell_nodes(w, i, j);
            bulk.add(degradation(&phi.phi, &nodes, phi.k_eps) * el[j * nx + i]);
            let (dx, dy) = f.cell_size(i, j);
            let (g1, g2) = grad_weights(dx, dy);
            let mut d1 = 0.0;
            let mut d2 = 0.0;
            for k in 0..4 {
                d1 += g1[k] * phi.phi[nodes[k]];
                d2 += g2[k] * phi.phi[nodes[k]];
            }
            d2 /= f.h;
            grad.add((d1 * d1 + d2 * d2) * dx * dy);
        }
    }
    let eps = phi.epsilon;
    let well = ksum(mass.iter().zip(&phi.phi).map(|(m, p)| m * (1.0 - p) * (1.0 - p)));
    let surface = prob.beta * (well / (4.0 * eps) + eps * grad.value());
    let fidelity = prob.fidelity
        * ksum(mass.iter().enumerate().map(|(n, m)| {
            let (a, b) = (y.values[n], f.values[n]);
            m * ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
        }));
    let bulk = bulk.value();
    Ok(AtEnergy {
        bulk,
        surface,
        fidelity,
        total: bulk + surface + fidelity,
    })
}

/// Per-cell stiffness scale `h^-2 (deg + k) |cell|`.
fn cell_scales(prob: &PhaseFieldProblem, phi: &DamageField) -> Vec<f64> {
    let f = &prob.target;
    let (nx, w) = (f.nx(), f.xs.len());
    let h2 = f.h * f.h;
    let mut s = vec![0.0; nx * f.ny()];
    for j in 0..f.ny() {
        for i in 0..nx {
            let nodes = cell_nodes(w, i, j);
            s[j * nx + i] = degradation(&phi.phi, &nodes, phi.k_eps) * f.cell_area(i, j) / h2;
        }
    }
    s
}

/// `A y` for the elastic step, vectors interleaved as `(y1, y2)` per node.
fn elastic_apply(f: &DisplacementField, c: &ElasticTensor, scales: &[f64], mass2: &[f64], x: &[f64], out: &mut [f64]) {
    let (nx, ny, w) = (f.nx(), f.ny(), f.xs.len());
    let h = f.h;
    // stress per cell
    let mut sig = vec![[0.0f64; 3]; nx * ny];
    sig.par_chunks_mut(nx).enumerate().for_each(|(j, row)| {
        for (i, s) in row.iter_mut().enumerate() {
            let nodes = cell_nodes(w, i, j);
            let (dx, dy) = f.cell_size(i, j);
            let (g1, g2) = grad_weights(dx, dy);
            let mut g = [[0.0; 2]; 2];
            for k in 0..4 {
                let (a, b) = (x[2 * nodes[k]], x[2 * nodes[k] + 1]);
                g[0][0] += g1[k] * a;
                g[0][1] += g2[k] * a / h;
                g[1][0] += g1[k] * b;
                g[1][1] += g2[k] * b / h;
            }
            let (s11, s22, s12) = c.apply_sym(g[0][0], g[1][1], 0.5 * (g[0][1] + g[1][0]));
            let sc = scales[j * nx + i];
            *s = [sc * s11, sc * s22, sc * s12];
        }
    });
    out.par_chunks_mut(2).enumerate().for_each(|(n, o)| {
        let (i, j) = (n % w, n / w);
        let mut r = [mass2[n] * x[2 * n], mass2[n] * x[2 * n + 1]];
        // cells around node n; k is the node's local index in that cell
        for (ci, cj, k) in [(i as isize - 1, j as isize - 1, 3usize), (i as isize, j as isize - 1, 2), (i as isize - 1, j as isize, 1), (i as isize, j as isize, 0)] {
            if ci < 0 || cj < 0 || ci as usize >= nx || cj as usize >= ny {
                continue;
            }
            let (ci, cj) = (ci as usize, cj as usize);
            let (dx, dy) = f.cell_size(ci, cj);
            let (g1, g2) = grad_weights(dx, dy);
            let s = sig[cj * nx + ci];
            r[0] += s[0] * g1[k] + s[2] * g2[k] / h;
            r[1] += s[2] * g1[k] + s[1] * g2[k] / h;
        }
        o[0] = r[0];
        o[1] = r[1];
    });
}

fn elastic_diag(f: &DisplacementField, c: &ElasticTensor, scales: &[f64], mass2: &[f64]) -> Vec<f64> {
    let (nx, w) = (f.nx(), f.xs.len());
    let h = f.h;
    let mut d: Vec<f64> = mass2.iter().flat_map(|&m| [m, m]).collect();
    for j in 0..f.ny() {
        for i in 0..nx {
            let nodes = cell_nodes(w, i, j);
            let (dx, dy) = f.cell_size(i, j);
            let (g1, g2) = grad_weights(dx, dy);
            let sc = scales[j * nx + i];
            for k in 0..4 {
                d[2 * nodes[k]] += sc * c.form_sym(g1[k], 0.0, 0.5 * g2[k] / h);
                d[2 * nodes[k] + 1] += sc * c.form_sym(0.0, g2[k] / h, 0.5 * g1[k]);
            }
        }
    }
    d
}

/// Exact minimizer of the AT energy in `y` for fixed damage.
pub fn elastic_step(prob: &PhaseFieldProblem, phi: &DamageField, start: Option<&DisplacementField>) -> Result<DisplacementField> {
    if !(prob.fidelity > 0.0) {
        return Err(Error::SingularSystem);
    }
    let f = &prob.target;
    prob.check(f, phi)?;
    let scales = cell_scales(prob, phi);
    let mass2: Vec<f64> = lumped_mass(f).iter().map(|m| 2.0 * prob.fidelity * m).collect();
    let b: Vec<f64> = f
        .values
        .iter()
        .zip(&mass2)
        .flat_map(|(g, m)| [m * g[0], m * g[1]])
        .collect();
    let diag = elastic_diag(f, &prob.tensor, &scales, &mass2);
    let mut x: Vec<f64> = match start {
        Some(s) => s.values.iter().flat_map(|v| [v[0], v[1]]).collect(),
        None => f.values.iter().flat_map(|v| [v[0], v[1]]).collect(),
    };
    let rep = pcg(
        |v, o| elastic_apply(f, &prob.tensor, &scales, &mass2, v, o),
        &diag,
        &b,
        &mut x,
        CG_TOL,
        200_000,
    );
    if !rep.converged {
        log::warn!(
            "elastic CG stopped at relative residual {:e} after {} iterations",
            rep.relative_residual,
            rep.iterations
        );
    }
    let mut y = f.clone();
    for (n, v) in y.values.iter_mut().enumerate() {
        *v = [x[2 * n], x[2 * n + 1]];
    }
    Ok(y)
}

/// Nine-point stencil of the damage system, per node.
struct DamageSystem {
    w: usize,
    nodes: usize,
    /// `coef[n][3 * (dj + 1) + (di + 1)]`.
    coef: Vec<[f64; 9]>,
    rhs: Vec<f64>,
}

impl DamageSystem {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let w = self.w as isize;
        let n = self.nodes as isize;
        out.par_iter_mut().enumerate().for_each(|(p, o)| {
            let row = &self.coef[p];
            let mut s = 0.0;
            for dj in -1..=1isize {
                for di in -1..=1isize {
                    let c = row[(3 * (dj + 1) + (di + 1)) as usize];
                    if c != 0.0 {
                        let q = p as isize + dj * w + di;
                        if q >= 0 && q < n {
                            s += c * x[q as usize];
                        }
                    }
                }
            }
            *o = s;
        });
    }

    fn diag(&self) -> Vec<f64> {
        self.coef.iter().map(|r| r[4]).collect()
    }
}

fn damage_system(prob: &PhaseFieldProblem, y: &DisplacementField, eps: f64) -> DamageSystem {
    let f = &prob.target;
    let (nx, w) = (f.nx(), f.xs.len());
    let el = cell_elastic(y, &prob.tensor);
    let mass = lumped_mass(f);
    let beta = prob.beta;
    let mut coef = vec![[0.0; 9]; f.values.len()];
    let mut rhs = vec![0.0; f.values.len()];
    for (n, m) in mass.iter().enumerate() {
        let b = beta * m / (4.0 * eps);
        coef[n][4] += b;
        rhs[n] += b;
    }
    let off = |a: usize, b: usize| -> usize {
        let (ai, aj) = ((a % w) as isize, (a / w) as isize);
        let (bi, bj) = ((b % w) as isize, (b / w) as isize);
        (3 * (bj - aj + 1) + (bi - ai + 1)) as usize
    };
    for j in 0..f.ny() {
        for i in 0..nx {
            let nodes = cell_nodes(w, i, j);
            let we = 0.25 * el[j * nx + i];
            let (dx, dy) = f.cell_size(i, j);
            let (g1, g2) = grad_weights(dx, dy);
            let k = beta * eps * dx * dy;
            for a in 0..4 {
                coef[nodes[a]][4] += we;
                for b in 0..4 {
                    let v = k * (g1[a] * g1[b] + g2[a] * g2[b] / (f.h * f.h));
                    coef[nodes[a]][off(nodes[a], nodes[b])] += v;
                }
            }
        }
    }
    DamageSystem {
        w,
        nodes: f.values.len(),
        coef,
        rhs,
    }
}

/// Exact minimizer of the AT energy in `phi` over `[0, 1]` for fixed `y`.
pub fn damage_step(prob: &PhaseFieldProblem, y: &DisplacementField, phi: &DamageField) -> Result<DamageField> {
    prob.check(y, phi)?;
    let sys = damage_system(prob, y, phi.epsilon);
    let mut x = phi.phi.clone();
    let diag = sys.diag();
    pcg(|v, o| sys.apply(v, o), &diag, &sys.rhs, &mut x, CG_TOL, 100_000);
    if x.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        projected_gauss_seidel(&sys, &mut x);
    }
    Ok(DamageField {
        phi: x,
        epsilon: phi.epsilon,
        k_eps: phi.k_eps,
    })
}

fn projected_gauss_seidel(sys: &DamageSystem, x: &mut [f64]) {
    for v in x.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    let w = sys.w as isize;
    let n = sys.nodes as isize;
    for _sweep in 0..100_000 {
        let mut change: f64 = 0.0;
        for p in 0..sys.nodes {
            let row = &sys.coef[p];
            let mut s = sys.rhs[p];
            for dj in -1..=1isize {
                for di in -1..=1isize {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let c = row[(3 * (dj + 1) + (di + 1)) as usize];
                    if c != 0.0 {
                        let q = p as isize + dj * w + di;
                        if q >= 0 && q < n {
                            s -= c * x[q as usize];
                        }
                    }
                }
            }
            let nv = (s / row[4]).clamp(0.0, 1.0);
            change = change.max((nv - x[p]).abs());
            x[p] = nv;
        }
        if change < 1e-13 {
            break;
        }
    }
}

/// Alternating minimization from intact (or seeded random) damage.
pub fn minimize_alternating(prob: &PhaseFieldProblem) -> Result<(DisplacementField, DamageField, SolveReport)> {
    let n = prob.nodes();
    let mut phi = DamageField::intact(n, prob.epsilon, prob.k_eps);
    if let DamageInit::Random { seed } = prob.init {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in phi.phi.iter_mut() {
            *p = rng.gen_range(0.9..=1.0);
        }
    }
    let mut y = elastic_step(prob, &phi, None)?;
    let mut report = SolveReport::default();
    let mut e_prev = at_energy(prob, &y, &phi)?.total;
    report.energy_trace.push(e_prev);
    for it in 0..prob.max_iter {
        phi = damage_step(prob, &y, &phi)?;
        y = elastic_step(prob, &phi, Some(&y))?;
        let e = at_energy(prob, &y, &phi)?.total;
        report.energy_trace.push(e);
        report.iterations = it + 1;
        let dec = (e_prev - e) / e_prev.abs().max(1e-300);
        log::debug!("AT iteration {}: energy {e:.12e}, relative decrease {dec:e}", it + 1);
        e_prev = e;
        if dec < prob.rel_tol {
            report.converged = true;
            break;
        }
    }
    Ok((y, phi, report))
}

/// Valley-bottom edges of the damage field below `threshold`.
///
/// A node is an `x`-valley if `phi` does not increase towards its left
/// neighbour and strictly increases to the right (or the mirror image), and
/// that rise exceeds the slope of `phi` along `y`;
/// vertical edges join vertically adjacent `x`-valley nodes, and likewise
/// for horizontal edges. Collinear neighbouring edges are merged.
pub fn extract_crack(grid: &DisplacementField, phi: &DamageField, threshold: f64) -> CrackSet {
    let (nx, ny, w) = (grid.nx(), grid.ny(), grid.xs.len());
    let p = |i: usize, j: usize| phi.phi[j * w + i];
    let valley = |c: f64, a: Option<f64>, b: Option<f64>| -> bool {
        if c >= threshold {
            return false;
        }
        match (a, b) {
            (Some(a), Some(b)) => (c <= a && c < b) || (c < a && c <= b),
            (Some(a), None) => c < a,
            (None, Some(b)) => c < b,
            (None, None) => false,
        }
    };
    // steepest rise to a neighbour and half the central difference, in index units
    let rise = |c: f64, a: Option<f64>, b: Option<f64>| a.into_iter().chain(b).map(|v| v - c).fold(0.0, f64::max);
    let slope = |c: f64, a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) => 0.5 * (b - a).abs(),
        (Some(a), None) | (None, Some(a)) => (a - c).abs(),
        (None, None) => 0.0,
    };
    let nb_x = |i: usize, j: usize| ((i > 0).then(|| p(i - 1, j)), (i < nx).then(|| p(i + 1, j)));
    let nb_y = |i: usize, j: usize| ((j > 0).then(|| p(i, j - 1)), (j < ny).then(|| p(i, j + 1)));
    // a valley must rise faster than the field slopes across it, so the
    // flanks of a band are not read as valleys along it
    let xval = |i: usize, j: usize| {
        let ((l, r), (d, u)) = (nb_x(i, j), nb_y(i, j));
        let c = p(i, j);
        valley(c, l, r) && rise(c, l, r) > slope(c, d, u)
    };
    let yval = |i: usize, j: usize| {
        let ((l, r), (d, u)) = (nb_x(i, j), nb_y(i, j));
        let c = p(i, j);
        valley(c, d, u) && rise(c, d, u) > slope(c, l, r)
    };
    let mut crack = CrackSet::empty();
    for i in 0..=nx {
        let mut run: Option<usize> = None;
        for j in 0..=ny {
            let on = j < ny && xval(i, j) && xval(i, j + 1);
            match (on, run) {
                (true, None) => run = Some(j),
                (false, Some(s)) => {
                    crack.push(CrackSet::vertical(grid.xs[i], grid.ys[s], grid.ys[j]));
                    run = None;
                }
                _ => {}
            }
        }
    }
    for j in 0..=ny {
        let mut run: Option<usize> = None;
        for i in 0..=nx {
            let on = i < nx && yval(i, j) && yval(i + 1, j);
            match (on, run) {
                (true, None) => run = Some(i),
                (false, Some(s)) => {
                    crack.push(CrackSet::horizontal(grid.ys[j], grid.xs[s], grid.xs[i]));
                    run = None;
                }
                _ => {}
            }
        }
    }
    crack
}

/// Length-weighted mean abscissa of the vertical part of a crack.
pub fn mean_vertical_position(crack: &CrackSet) -> Option<f64> {
    let v: Vec<&CrackSegment> = crack.segments.iter().filter(|s| s.normal[0].abs() > 0.5).collect();
    let tot: f64 = v.iter().map(|s| s.length()).sum();
    (tot > 0.0).then(|| v.iter().map(|s| s.length() * s.a[0]).sum::<f64>() / tot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::add_rigid;
    use crate::tensor::isotropic_tensor;
    use nalgebra::{DMatrix, DVector};

    fn problem(nx: usize, ny: usize, h: f64, g: impl Fn(f64, f64) -> [f64; 2]) -> PhaseFieldProblem {
        let t = DisplacementField::uniform(1.0, h, nx, ny, g).unwrap();
        PhaseFieldProblem::new(t, isotropic_tensor(1.0, 1.0).unwrap(), 1.0, 10.0)
    }

    #[test]
    fn intact_rigid_has_zero_energy() {
        let p = problem(8, 8, 0.5, |_, _| [0.0; 2]);
        let y = add_rigid(&p.target, 0.3, [1.0, 2.0]);
        let mut q = p.clone();
        q.target = y.clone();
        let phi = DamageField::intact(y.values.len(), p.epsilon, p.k_eps);
        assert!(at_energy(&q, &y, &phi).unwrap().total.abs() < 1e-12);
        let ys = elastic_step(&q, &phi, None).unwrap();
        for (a, b) in ys.values.iter().zip(&y.values) {
            assert!((a[0] - b[0]).abs() < 1e-8 && (a[1] - b[1]).abs() < 1e-8);
        }
        let d = damage_step(&q, &ys, &phi).unwrap();
        assert!(d.phi.iter().all(|&v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn fully_broken_surface_term() {
        let p = problem(6, 6, 0.5, |x, y| [x * y, x]);
        let phi = DamageField {
            phi: vec![0.0; p.target.values.len()],
            epsilon: 0.1,
            k_eps: 0.0,
        };
        let e = at_energy(&p, &p.target, &phi).unwrap();
        assert!(e.bulk.abs() < 1e-15);
        assert!((e.surface - 1.0 / (4.0 * 0.1)).abs() < 1e-12);
    }

    #[test]
    fn elastic_step_matches_dense_solve() {
        let mut p = problem(8, 8, 0.5, |x, y| [(3.0 * x).sin() * y, x * x - y]);
        p.k_eps = 1e-3;
        let n = p.target.values.len();
        let phi = DamageField {
            phi: (0..n).map(|k| 0.5 + 0.5 * ((k as f64) * 0.7).sin().abs()).collect(),
            epsilon: p.epsilon,
            k_eps: p.k_eps,
        };
        let y = elastic_step(&p, &phi, None).unwrap();
        let scales = cell_scales(&p, &phi);
        let mass2: Vec<f64> = lumped_mass(&p.target).iter().map(|m| 2.0 * p.fidelity * m).collect();
        let mut a = DMatrix::<f64>::zeros(2 * n, 2 * n);
        let mut e = vec![0.0; 2 * n];
        let mut col = vec![0.0; 2 * n];
        for k in 0..2 * n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[k] = 1.0;
            elastic_apply(&p.target, &p.tensor, &scales, &mass2, &e, &mut col);
            for r in 0..2 * n {
                a[(r, k)] = col[r];
            }
        }
        let b = DVector::from_iterator(2 * n, p.target.values.iter().zip(&mass2).flat_map(|(g, m)| [m * g[0], m * g[1]]));
        let xd = a.cholesky().unwrap().solve(&b);
        for nn in 0..n {
            assert!((y.values[nn][0] - xd[2 * nn]).abs() < 1e-8);
            assert!((y.values[nn][1] - xd[2 * nn + 1]).abs() < 1e-8);
        }
    }

    #[test]
    fn steps_descend() {
        let p = problem(16, 8, 0.5, |x, _| [if x > 0.5 { 0.3 } else { -0.3 }, 0.0]);
        let phi0 = DamageField::intact(p.target.values.len(), p.epsilon, p.k_eps);
        let y0 = elastic_step(&p, &phi0, None).unwrap();
        let e0 = at_energy(&p, &y0, &phi0).unwrap().total;
        let phi1 = damage_step(&p, &y0, &phi0).unwrap();
        let e1 = at_energy(&p, &y0, &phi1).unwrap().total;
        let y1 = elastic_step(&p, &phi1, Some(&y0)).unwrap();
        let e2 = at_energy(&p, &y1, &phi1).unwrap().total;
        assert!(e1 <= e0 + 1e-12 && e2 <= e1 + 1e-12);
        assert!(phi1.phi.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn zero_target_stays_intact() {
        let p = problem(8, 4, 0.5, |_, _| [0.0; 2]);
        let (y, phi, rep) = minimize_alternating(&p).unwrap();
        assert!(y.values.iter().all(|v| v[0] == 0.0 && v[1] == 0.0));
        assert!(phi.phi.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert!(rep.converged);
    }

    #[test]
    fn singular_without_fidelity() {
        let mut p = problem(4, 4, 0.5, |_, _| [0.0; 2]);
        p.fidelity = 0.0;
        let phi = DamageField::intact(p.target.values.len(), 0.1, 1e-6);
        assert_eq!(elastic_step(&p, &phi, None).unwrap_err(), Error::SingularSystem);
    }

    #[test]
    fn extraction_of_simple_valley() {
        let g = DisplacementField::uniform(1.0, 0.5, 10, 4, |_, _| [0.0; 2]).unwrap();
        let w = g.xs.len();
        let mut phi = DamageField::intact(g.values.len(), 0.1, 1e-6);
        assert!(extract_crack(&g, &phi, 0.5).is_empty());
        for j in 0..=4 {
            phi.phi[j * w + 4] = 0.05;
            phi.phi[j * w + 3] = 0.6;
            phi.phi[j * w + 5] = 0.6;
        }
        let c = extract_crack(&g, &phi, 0.5);
        assert_eq!(c.segments.len(), 1);
        assert!((c.anisotropic_measure(0.5) - 1.0).abs() < 1e-15);
        assert!((c.segments[0].a[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn band_flanks_are_not_valleys() {
        // horizontal band with a smooth profile across it
        let g = DisplacementField::uniform(1.0, 0.5, 10, 8, |_, _| [0.0; 2]).unwrap();
        let w = g.xs.len();
        let mut phi = DamageField::intact(g.values.len(), 0.1, 1e-6);
        for j in 0..=8 {
            let d = (j as f64 - 4.0).abs();
            for i in 0..w {
                // weak dip along x at the middle column
                let dip = if i == 5 { 0.01 } else { 0.0 };
                phi.phi[j * w + i] = 1.0 - (-d / 1.5).exp() - dip;
            }
        }
        let c = extract_crack(&g, &phi, 0.5);
        assert_eq!(c.segments.len(), 1, "{c:?}");
        assert_eq!(c.segments[0].a[1], 0.0);
        assert!((c.segments[0].length() - 1.0).abs() < 1e-15);
    }
}
