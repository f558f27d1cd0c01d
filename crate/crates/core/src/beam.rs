//! One-dimensional brittle Euler–Bernoulli limit energy with a quadratic
//! fidelity term, its exact minimizer, and an exhaustive oracle.
//!
//! Discretization on nodes `x_k = k dx`, `dx = L / (n - 1)`:
//!
//! * bending: `pref * a * sum_k w_k (D2 v_k / dx^2)^2` over interior nodes,
//!   `D2 v_k = v_{k-1} - 2 v_k + v_{k+1}`, with `w_k = dx` except `1.5 dx` at
//!   the two nodes next to the ends (so that quadratics integrate exactly);
//! * u- and v-jumps live on interfaces `t` (between nodes `t` and `t + 1`); a
//!   v-jump drops the two stencils `D2_t`, `D2_{t+1}` that straddle it;
//! * slope jumps (kinks) live on interior nodes `k` and drop `D2_k` only;
//! * jumps cost `beta * (#(J_u ∪ J_v) + #J_v')`;
//! * fidelity uses trapezoidal weights.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ksum, BandedSpd};

pub const STANDARD_PREFACTOR: f64 = 1.0 / 24.0;

/// Energies closer than `TIE_TOL * (1 + E)` count as equal; ties go to fewer
/// jumps, then to the leftmost jump positions.
pub const TIE_TOL: f64 = 1e-9;

fn default_prefactor() -> f64 {
    STANDARD_PREFACTOR
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamProblem {
    pub a: f64,
    pub beta: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub g_u: Vec<f64>,
    pub g_v: Vec<f64>,
    pub fidelity_weight: f64,
    /// Multiplier of `a` in the bending term; `1/24` unless overridden.
    #[serde(default = "default_prefactor")]
    pub prefactor: f64,
}

impl BeamProblem {
    pub fn n(&self) -> usize {
        self.g_u.len()
    }

    pub fn dx(&self) -> f64 {
        self.l / (self.n() as f64 - 1.0)
    }

    pub fn grid(&self) -> Vec<f64> {
        let dx = self.dx();
        (0..self.n()).map(|k| k as f64 * dx).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.g_u.len() != self.g_v.len() {
            return Err(Error::GridMismatch(format!(
                "g_u has {} points, g_v has {}",
                self.g_u.len(),
                self.g_v.len()
            )));
        }
        if self.n() < 3 {
            return Err(Error::InvalidInput("need at least 3 grid points".into()));
        }
        if !(self.a > 0.0 && self.beta > 0.0 && self.l > 0.0 && self.fidelity_weight >= 0.0) {
            return Err(Error::InvalidInput(
                "need a > 0, beta > 0, L > 0, fidelity_weight >= 0".into(),
            ));
        }
        if !(self.prefactor > 0.0) {
            return Err(Error::InvalidInput("prefactor must be positive".into()));
        }
        Ok(())
    }

    /// Coefficient multiplying `(D2 v_k)^2` in the energy.
    fn alpha(&self, k: usize) -> f64 {
        let n = self.n();
        let dx = self.dx();
        let w = if n == 3 {
            2.0 * dx
        } else if k == 1 || k == n - 2 {
            1.5 * dx
        } else {
            dx
        };
        self.prefactor * self.a * w / dx.powi(4)
    }

    /// Trapezoidal weight of node `k`.
    fn trap(&self, k: usize) -> f64 {
        let dx = self.dx();
        if k == 0 || k + 1 == self.n() {
            0.5 * dx
        } else {
            dx
        }
    }

    fn fid(&self, k: usize) -> f64 {
        self.fidelity_weight * self.trap(k)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamState {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// Interfaces `t` (between nodes `t`, `t + 1`) where `u` jumps.
    pub j_u: Vec<usize>,
    /// Interfaces where `v` jumps.
    pub j_v: Vec<usize>,
    /// Interior nodes where `v'` jumps.
    pub j_vprime: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct BeamEnergy {
    pub elastic: f64,
    pub jump: f64,
    pub fidelity: f64,
    pub total: f64,
}

impl BeamState {
    pub fn zeros(prob: &BeamProblem) -> Self {
        let n = prob.n();
        Self {
            x: prob.grid(),
            u: vec![0.0; n],
            v: vec![0.0; n],
            j_u: vec![],
            j_v: vec![],
            j_vprime: vec![],
        }
    }

    pub fn jump_count(&self) -> usize {
        let mut iface: Vec<usize> = self.j_u.iter().chain(&self.j_v).copied().collect();
        iface.sort_unstable();
        iface.dedup();
        iface.len() + self.j_vprime.len()
    }

    /// Jump locations in physical coordinates, sorted.
    pub fn jump_positions(&self, prob: &BeamProblem) -> Vec<f64> {
        let dx = prob.dx();
        let mut p: Vec<f64> = self
            .j_u
            .iter()
            .chain(&self.j_v)
            .map(|&t| (t as f64 + 0.5) * dx)
            .chain(self.j_vprime.iter().map(|&k| k as f64 * dx))
            .collect();
        p.sort_by(f64::total_cmp);
        p.dedup();
        p
    }

    /// Largest violation of `u` being constant between its jumps.
    pub fn u_step_defect(&self) -> f64 {
        let mut d: f64 = 0.0;
        for t in 0..self.u.len().saturating_sub(1) {
            if !self.j_u.contains(&t) {
                d = d.max((self.u[t + 1] - self.u[t]).abs());
            }
        }
        d
    }

    /// Max-norm of the gradient of the `v` part of the energy.
    pub fn v_stationarity(&self, prob: &BeamProblem) -> f64 {
        let n = prob.n();
        let mut grad = vec![0.0; n];
        let active = active_stencils(n, &self.j_v, &self.j_vprime);
        for k in 1..n - 1 {
            if !active[k] {
                continue;
            }
            let d2 = self.v[k - 1] - 2.0 * self.v[k] + self.v[k + 1];
            let c = 2.0 * prob.alpha(k) * d2;
            grad[k - 1] += c;
            grad[k] -= 2.0 * c;
            grad[k + 1] += c;
        }
        for k in 0..n {
            grad[k] += 2.0 * prob.fid(k) * (self.v[k] - prob.g_v[k]);
        }
        grad.iter().fold(0.0, |m, g| m.max(g.abs()))
    }
}

/// `active[k]` is true when the stencil centred at `k` enters the energy.
fn active_stencils(n: usize, j_v: &[usize], j_vp: &[usize]) -> Vec<bool> {
    let mut act = vec![false; n];
    for a in act.iter_mut().take(n - 1).skip(1) {
        *a = true;
    }
    for &t in j_v {
        act[t] = false;
        if t + 1 < n {
            act[t + 1] = false;
        }
    }
    for &k in j_vp {
        act[k] = false;
    }
    act
}

pub fn beam_energy(state: &BeamState, prob: &BeamProblem) -> Result<BeamEnergy> {
    prob.validate()?;
    let n = prob.n();
    if state.u.len() != n || state.v.len() != n {
        return Err(Error::GridMismatch(format!(
            "state has {}/{} values, problem has {}",
            state.u.len(),
            state.v.len(),
            n
        )));
    }
    if state.j_u.iter().chain(&state.j_v).any(|&t| t + 1 >= n)
        || state.j_vprime.iter().any(|&k| k == 0 || k + 1 >= n)
    {
        return Err(Error::GridMismatch("jump index outside the grid".into()));
    }
    let active = active_stencils(n, &state.j_v, &state.j_vprime);
    let elastic = ksum((1..n - 1).filter(|&k| active[k]).map(|k| {
        let d2 = state.v[k - 1] - 2.0 * state.v[k] + state.v[k + 1];
        prob.alpha(k) * d2 * d2
    }));
    let fidelity = ksum((0..n).map(|k| {
        prob.fid(k) * ((state.u[k] - prob.g_u[k]).powi(2) + (state.v[k] - prob.g_v[k]).powi(2))
    }));
    let jump = prob.beta * state.jump_count() as f64;
    Ok(BeamEnergy {
        elastic,
        jump,
        fidelity,
        total: elastic + jump + fidelity,
    })
}

// ---------------------------------------------------------------------------
// exact solver

/// `a2 x^2 + a1 x + a0`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Q1 {
    a2: f64,
    a1: f64,
    a0: f64,
}

impl Q1 {
    fn min(&self) -> f64 {
        self.a0 - self.a1 * self.a1 / (4.0 * self.a2)
    }

    fn add_fid(self, f: f64, g: f64) -> Q1 {
        Q1 {
            a2: self.a2 + f,
            a1: self.a1 - 2.0 * f * g,
            a0: self.a0 + f * g * g,
        }
    }
}

/// Reduced cost of a kink-free piece in terms of its end values:
/// `xx x^2 + xy x y + yy y^2 + lx x + ly y + c`.
#[derive(Clone, Copy, Debug, Default)]
struct Piece {
    xx: f64,
    xy: f64,
    yy: f64,
    lx: f64,
    ly: f64,
    c: f64,
}

/// `min_x q(x) + piece(x, y)` as a quadratic in `y`.
fn combine(q: &Q1, p: &Piece) -> Q1 {
    let a = q.a2 + p.xx;
    let b = q.a1 + p.lx;
    Q1 {
        a2: p.yy - p.xy * p.xy / (4.0 * a),
        a1: p.ly - b * p.xy / (2.0 * a),
        a0: p.c + q.a0 - b * b / (4.0 * a),
    }
}

/// Assembles the banded system for nodes `lo..=hi` with the given stencil
/// mask and fidelity on the nodes flagged in `fid_mask`.
fn assemble(
    prob: &BeamProblem,
    lo: usize,
    hi: usize,
    stencil: impl Fn(usize) -> bool,
    fid_mask: impl Fn(usize) -> bool,
) -> (BandedSpd, Vec<f64>, f64) {
    let m = hi - lo + 1;
    let mut mat = BandedSpd::zeros(m, 2);
    let mut rhs = vec![0.0; m];
    let mut c = 0.0;
    for k in (lo + 1)..hi {
        if !stencil(k) {
            continue;
        }
        let al = prob.alpha(k);
        let s = [1.0, -2.0, 1.0];
        for i in 0..3 {
            for j in 0..=i {
                mat.add(k - 1 + i - lo, k - 1 + j - lo, al * s[i] * s[j]);
            }
        }
    }
    for k in lo..=hi {
        if fid_mask(k) {
            let f = prob.fid(k);
            mat.add(k - lo, k - lo, f);
            rhs[k - lo] += f * prob.g_v[k];
            c += f * prob.g_v[k] * prob.g_v[k];
        }
    }
    (mat, rhs, c)
}

fn piece_cost(prob: &BeamProblem, p: usize, q: usize) -> Piece {
    if q <= p + 1 {
        return Piece::default();
    }
    let (full, rhs, c) = assemble(prob, p, q, |_| true, |k| k != p && k != q);
    let m = q - p - 1;
    let mut inner = BandedSpd::zeros(m, 2);
    for i in 0..m {
        for j in i.saturating_sub(2)..=i {
            inner.add(i, j, full.get(i + 1, j + 1));
        }
    }
    let chol = inner.cholesky().expect("interior block is positive definite");
    let r_i: Vec<f64> = rhs[1..=m].to_vec();
    let col = |e: usize| -> Vec<f64> { (1..=m).map(|i| full.get(i, e)).collect() };
    let (cp, cq) = (col(0), col(m + 1));
    let (zp, zq, zr) = (chol.solve(&cp), chol.solve(&cq), chol.solve(&r_i));
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let s00 = full.get(0, 0) - d(&cp, &zp);
    let s01 = full.get(0, m + 1) - d(&cp, &zq);
    let s11 = full.get(m + 1, m + 1) - d(&cq, &zq);
    let rho0 = -d(&cp, &zr);
    let rho1 = -d(&cq, &zr);
    Piece {
        xx: s00,
        xy: 2.0 * s01,
        yy: s11,
        lx: -2.0 * rho0,
        ly: -2.0 * rho1,
        c: c - d(&r_i, &zr),
    }
}

#[derive(Clone, Debug)]
struct Cand {
    q: Q1,
    kinks: Vec<usize>,
}

/// Set `{x : d(x) <= 0}` for `d = A x^2 + B x + C` as disjoint closed intervals.
fn sublevel(a: f64, b: f64, c: f64, scale: f64) -> Vec<(f64, f64)> {
    let inf = f64::INFINITY;
    if a.abs() <= 1e-13 * scale {
        if b.abs() <= 1e-13 * scale {
            return if c <= 0.0 { vec![(-inf, inf)] } else { vec![] };
        }
        let r = -c / b;
        return if b > 0.0 { vec![(-inf, r)] } else { vec![(r, inf)] };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return if a > 0.0 { vec![] } else { vec![(-inf, inf)] };
    }
    let sq = disc.sqrt();
    let (r1, r2) = {
        let x1 = (-b - sq) / (2.0 * a);
        let x2 = (-b + sq) / (2.0 * a);
        (x1.min(x2), x1.max(x2))
    };
    if a > 0.0 {
        vec![(r1, r2)]
    } else {
        vec![(-inf, r1), (r2, inf)]
    }
}

fn intersect(a: &[(f64, f64)], b: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for &(l1, h1) in a {
        for &(l2, h2) in b {
            let (l, h) = (l1.max(l2), h1.min(h2));
            if l <= h {
                out.push((l, h));
            }
        }
    }
    out
}

/// Drops quadratics that are nowhere on the lower envelope.
fn prune(mut c: Vec<Cand>) -> Vec<Cand> {
    if c.len() <= 1 {
        return c;
    }
    c.sort_by(|x, y| x.kinks.cmp(&y.kinks));
    let mut keep = Vec::with_capacity(c.len());
    'outer: for i in 0..c.len() {
        let qi = c[i].q;
        let mut feas = vec![(f64::NEG_INFINITY, f64::INFINITY)];
        for (j, cj) in c.iter().enumerate() {
            if i == j {
                continue;
            }
            let qj = cj.q;
            let scale = qi.a2.abs() + qj.a2.abs() + qi.a1.abs() + qj.a1.abs() + 1e-300;
            let tol = 1e-12 * (1.0 + qi.a0.abs() + qj.a0.abs());
            let same = (qi.a2 - qj.a2).abs() <= 1e-13 * scale
                && (qi.a1 - qj.a1).abs() <= 1e-13 * scale
                && (qi.a0 - qj.a0).abs() <= tol;
            if same {
                if j < i {
                    continue 'outer;
                }
                continue;
            }
            let s = sublevel(qi.a2 - qj.a2, qi.a1 - qj.a1, qi.a0 - qj.a0 - tol, scale);
            feas = intersect(&feas, &s);
            if feas.is_empty() {
                continue 'outer;
            }
        }
        keep.push(i);
    }
    let mut out = Vec::with_capacity(keep.len());
    for (i, cand) in c.into_iter().enumerate() {
        if keep.contains(&i) {
            out.push(cand);
        }
    }
    out
}

/// Minimal v-cost of segment `b..=t` with exactly `s` kinks, plus kink set.
struct VTable {
    n: usize,
    cap: usize,
    val: Vec<f64>,
    kinks: Vec<Option<Vec<usize>>>,
}

impl VTable {
    fn idx(&self, b: usize, t: usize, s: usize) -> usize {
        (b * self.n + t) * (self.cap + 1) + s
    }

    fn get(&self, b: usize, t: usize, s: usize) -> f64 {
        self.val[self.idx(b, t, s)]
    }
}

fn build_vtable(prob: &BeamProblem, cap: usize) -> VTable {
    let n = prob.n();
    let mut pieces = vec![Piece::default(); n * n];
    for p in 0..n {
        for q in p + 1..n {
            pieces[p * n + q] = piece_cost(prob, p, q);
        }
    }
    let mut tab = VTable {
        n,
        cap,
        val: vec![f64::INFINITY; n * n * (cap + 1)],
        kinks: vec![None; n * n * (cap + 1)],
    };
    for b in 0..n {
        // h[j][k]: envelope for "j kinks, the last at node k" (k = b when j = 0)
        let mut h: Vec<Vec<Vec<Cand>>> = vec![vec![Vec::new(); n]; cap + 1];
        h[0][b] = vec![Cand {
            q: Q1 { a2: 0.0, a1: 0.0, a0: 0.0 }.add_fid(prob.fid(b), prob.g_v[b]),
            kinks: vec![],
        }];
        for k in b + 1..n.saturating_sub(1) {
            for j in 1..=cap {
                let mut cs = Vec::new();
                for kp in b..k {
                    for c in &h[j - 1][kp] {
                        let q = combine(&c.q, &pieces[kp * n + k]).add_fid(prob.fid(k), prob.g_v[k]);
                        let mut ks = c.kinks.clone();
                        ks.push(k);
                        cs.push(Cand { q, kinks: ks });
                    }
                }
                h[j][k] = prune(cs);
            }
        }
        let i0 = tab.idx(b, b, 0);
        tab.val[i0] = 0.0;
        tab.kinks[i0] = Some(vec![]);
        for t in b + 1..n {
            for s in 0..=cap {
                let mut best = f64::INFINITY;
                let mut arg: Option<&Vec<usize>> = None;
                for kp in b..t {
                    for c in &h[s][kp] {
                        let q = combine(&c.q, &pieces[kp * n + t]).add_fid(prob.fid(t), prob.g_v[t]);
                        let v = q.min();
                        let better = match arg {
                            None => true,
                            Some(a) => {
                                v < best - TIE_TOL * (1.0 + best.abs())
                                    || (v <= best + TIE_TOL * (1.0 + best.abs()) && c.kinks < *a)
                            }
                        };
                        if better {
                            best = v;
                            arg = Some(&c.kinks);
                        }
                    }
                }
                let i = tab.idx(b, t, s);
                tab.val[i] = best;
                tab.kinks[i] = arg.cloned();
            }
        }
    }
    tab
}

/// Weighted Potts cost of a constant fit to `g_u` on nodes `a..=t`.
struct UTable {
    sw: Vec<f64>,
    swg: Vec<f64>,
    swg2: Vec<f64>,
}

impl UTable {
    fn new(prob: &BeamProblem) -> Self {
        let n = prob.n();
        let mut t = UTable {
            sw: vec![0.0; n + 1],
            swg: vec![0.0; n + 1],
            swg2: vec![0.0; n + 1],
        };
        for k in 0..n {
            let w = prob.fid(k);
            let g = prob.g_u[k];
            t.sw[k + 1] = t.sw[k] + w;
            t.swg[k + 1] = t.swg[k] + w * g;
            t.swg2[k + 1] = t.swg2[k] + w * g * g;
        }
        t
    }

    fn mean(&self, prob: &BeamProblem, a: usize, t: usize) -> f64 {
        let w = self.sw[t + 1] - self.sw[a];
        if w > 0.0 {
            (self.swg[t + 1] - self.swg[a]) / w
        } else {
            prob.g_u[a]
        }
    }

    fn cost(&self, prob: &BeamProblem, a: usize, t: usize) -> f64 {
        // recomputed directly for accuracy; prefix sums only give the mean
        let m = self.mean(prob, a, t);
        ksum((a..=t).map(|k| prob.fid(k) * (prob.g_u[k] - m).powi(2)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Event {
    U,
    V,
    UV,
}

#[derive(Clone, Copy, Debug)]
struct Back {
    prev: (usize, usize, usize),
    t: usize,
    ev: Event,
    s: usize,
}

/// Global minimizer of the discrete limit energy with at most `max_jumps`
/// jumps in total.
pub fn solve_beam(prob: &BeamProblem, max_jumps: usize) -> Result<BeamState> {
    prob.validate()?;
    if prob.fidelity_weight == 0.0 {
        return Err(Error::TrivialProblem);
    }
    let n = prob.n();
    let cap = max_jumps.min(2 * n);
    let vt = build_vtable(prob, cap);
    let ut = UTable::new(prob);
    let mut ucost = vec![f64::INFINITY; n * n];
    for a in 0..n {
        for t in a..n {
            ucost[a * n + t] = ut.cost(prob, a, t);
        }
    }
    let beta = prob.beta;
    let sidx = |a: usize, b: usize, r: usize| (a * n + b) * (cap + 1) + r;
    let mut best = vec![f64::INFINITY; n * n * (cap + 1)];
    let mut back: Vec<Option<Back>> = vec![None; n * n * (cap + 1)];
    // doubled jump positions along the best path, for leftmost tie-breaking
    let mut keys: Vec<Vec<usize>> = vec![Vec::new(); n * n * (cap + 1)];
    best[sidx(0, 0, 0)] = 0.0;
    let tol = |x: f64| TIE_TOL * (1.0 + x.abs());
    let extend = |key: &[usize], t: usize, kinks: &[usize]| -> Vec<usize> {
        let mut k: Vec<usize> = key.iter().copied().chain(kinks.iter().map(|&j| 2 * j)).collect();
        if t != usize::MAX {
            k.push(2 * t + 1);
        }
        k.sort_unstable();
        k
    };
    let no_kinks: Vec<usize> = Vec::new();

    for f in 0..n {
        for a in 0..=f {
            for b in 0..=f {
                if a.max(b) != f {
                    continue;
                }
                for r in 0..cap {
                    let si = sidx(a, b, r);
                    let cur = best[si];
                    if !cur.is_finite() {
                        continue;
                    }
                    let key = keys[si].clone();
                    for t in f..n - 1 {
                        let mut relax = |na: usize, nb: usize, nr: usize, c: f64, ev: Event, s: usize, ks: &[usize]| {
                            let i = sidx(na, nb, nr);
                            let take = if !best[i].is_finite() || c < best[i] - tol(best[i]) {
                                true
                            } else if c <= best[i] + tol(best[i]) {
                                extend(&key, t, ks) < keys[i]
                            } else {
                                false
                            };
                            if take {
                                best[i] = c;
                                keys[i] = extend(&key, t, ks);
                                back[i] = Some(Back {
                                    prev: (a, b, r),
                                    t,
                                    ev,
                                    s,
                                });
                            }
                        };
                        let uc = ucost[a * n + t];
                        relax(t + 1, b, r + 1, cur + uc + beta, Event::U, 0, &no_kinks);
                        for s in 0..=(cap - r - 1) {
                            let vc = vt.get(b, t, s);
                            if !vc.is_finite() {
                                continue;
                            }
                            let ks = vt.kinks[vt.idx(b, t, s)].as_deref().unwrap_or(&[]);
                            let extra = beta * (1 + s) as f64;
                            relax(a, t + 1, r + 1 + s, cur + vc + extra, Event::V, s, ks);
                            relax(t + 1, t + 1, r + 1 + s, cur + uc + vc + extra, Event::UV, s, ks);
                        }
                    }
                }
            }
        }
    }

    // closing both open segments at the last node
    let mut fin: Option<(f64, usize, Vec<usize>, (usize, usize, usize), usize)> = None;
    for a in 0..n {
        for b in 0..n {
            for r in 0..=cap {
                let cur = best[sidx(a, b, r)];
                if !cur.is_finite() {
                    continue;
                }
                for s in 0..=(cap - r) {
                    let vc = vt.get(b, n - 1, s);
                    if !vc.is_finite() {
                        continue;
                    }
                    let e = cur + ucost[a * n + n - 1] + vc + beta * s as f64;
                    let jumps = r + s;
                    let ks = vt.kinks[vt.idx(b, n - 1, s)].as_deref().unwrap_or(&[]);
                    let key = extend(&keys[sidx(a, b, r)], usize::MAX, ks);
                    let better = match &fin {
                        None => true,
                        Some((be, bj, bk, _, _)) => {
                            e < be - tol(*be)
                                || (e <= be + tol(*be) && (jumps < *bj || (jumps == *bj && key < *bk)))
                        }
                    };
                    if better {
                        fin = Some((e, jumps, key, (a, b, r), s));
                    }
                }
            }
        }
    }
    let (_, _, _, mut st, last_s) = fin.ok_or_else(|| Error::InvalidInput("no feasible segmentation".into()))?;

    // walk back to collect segments
    let mut u_breaks = Vec::new();
    let mut v_segments: Vec<(usize, usize, usize)> = Vec::new();
    v_segments.push((st.1, n - 1, last_s));
    while st != (0, 0, 0) {
        let bk = back[sidx(st.0, st.1, st.2)].expect("reachable state has a predecessor");
        match bk.ev {
            Event::U => u_breaks.push(bk.t),
            Event::V => v_segments.push((bk.prev.1, bk.t, bk.s)),
            Event::UV => {
                u_breaks.push(bk.t);
                v_segments.push((bk.prev.1, bk.t, bk.s));
            }
        }
        st = bk.prev;
    }
    u_breaks.sort_unstable();
    v_segments.sort_unstable();

    let mut state = BeamState::zeros(prob);
    let mut start = 0;
    for &t in u_breaks.iter().chain(std::iter::once(&(n - 1))) {
        let m = ut.mean(prob, start, t);
        for k in start..=t {
            state.u[k] = m;
        }
        start = t + 1;
    }
    state.j_u = u_breaks;
    for &(b, t, s) in &v_segments {
        let ks = vt.kinks[vt.idx(b, t, s)].clone().unwrap_or_default();
        let vals = solve_v_segment(prob, b, t, &ks);
        state.v[b..=t].copy_from_slice(&vals);
        if t + 1 < n {
            state.j_v.push(t);
        }
        state.j_vprime.extend(ks);
    }
    state.j_vprime.sort_unstable();
    Ok(state)
}

/// Minimizer of the v-energy on nodes `b..=t` with kinks at `kinks`.
fn solve_v_segment(prob: &BeamProblem, b: usize, t: usize, kinks: &[usize]) -> Vec<f64> {
    if b == t {
        return vec![prob.g_v[b]];
    }
    let (mat, rhs, _) = assemble(prob, b, t, |k| !kinks.contains(&k), |_| true);
    mat.cholesky().expect("fidelity makes the segment system definite").solve(&rhs)
}

// ---------------------------------------------------------------------------
// oracle

/// Exhaustive minimizer used as an oracle for [`solve_beam`].
pub fn brute_force_beam(prob: &BeamProblem, max_jumps: usize) -> Result<BeamState> {
    prob.validate()?;
    let n = prob.n();
    if n > 16 {
        return Err(Error::TooLarge(n));
    }
    if prob.fidelity_weight == 0.0 {
        return Err(Error::TrivialProblem);
    }
    // items 0..n-1 are interfaces (state 0..4: none, u, v, uv), then kink nodes
    let n_if = n - 1;
    let mut iface = vec![0u8; n_if];
    let mut kink = vec![false; n];
    let mut best: Option<(f64, usize, Vec<usize>, BeamState)> = None;
    enumerate(prob, 0, max_jumps, &mut iface, &mut kink, &mut best);
    Ok(best.expect("empty configuration is always feasible").3)
}

fn enumerate(
    prob: &BeamProblem,
    pos: usize,
    budget: usize,
    iface: &mut Vec<u8>,
    kink: &mut Vec<bool>,
    best: &mut Option<(f64, usize, Vec<usize>, BeamState)>,
) {
    let n = prob.n();
    let n_if = n - 1;
    let total = n_if + (n - 2);
    if pos == total {
        let st = dense_state(prob, iface, kink);
        let e = beam_energy(&st, prob).expect("valid state").total;
        let jumps = st.jump_count();
        let key: Vec<usize> = st.jump_positions_key();
        let better = match best {
            None => true,
            Some((be, bj, bk, _)) => {
                let tol = TIE_TOL * (1.0 + be.abs());
                e < *be - tol || (e <= *be + tol && (jumps < *bj || (jumps == *bj && key < *bk)))
            }
        };
        if better {
            *best = Some((e, jumps, key, st));
        }
        return;
    }
    if pos < n_if {
        for s in 0..4u8 {
            if s > 0 && budget == 0 {
                break;
            }
            iface[pos] = s;
            enumerate(prob, pos + 1, if s > 0 { budget - 1 } else { budget }, iface, kink, best);
        }
        iface[pos] = 0;
    } else {
        let k = pos - n_if + 1;
        kink[k] = false;
        enumerate(prob, pos + 1, budget, iface, kink, best);
        if budget > 0 {
            kink[k] = true;
            enumerate(prob, pos + 1, budget - 1, iface, kink, best);
            kink[k] = false;
        }
    }
}

impl BeamState {
    /// Doubled physical positions (integers) used for leftmost tie-breaking.
    fn jump_positions_key(&self) -> Vec<usize> {
        let mut p: Vec<usize> = self
            .j_u
            .iter()
            .chain(&self.j_v)
            .map(|&t| 2 * t + 1)
            .chain(self.j_vprime.iter().map(|&k| 2 * k))
            .collect();
        p.sort_unstable();
        p.dedup();
        p
    }
}

fn dense_state(prob: &BeamProblem, iface: &[u8], kink: &[bool]) -> BeamState {
    let n = prob.n();
    let mut st = BeamState::zeros(prob);
    for (t, &s) in iface.iter().enumerate() {
        if s == 1 || s == 3 {
            st.j_u.push(t);
        }
        if s == 2 || s == 3 {
            st.j_v.push(t);
        }
    }
    st.j_vprime = (1..n - 1).filter(|&k| kink[k]).collect();
    // u: weighted segment means
    let mut start = 0;
    for &t in st.j_u.iter().chain(std::iter::once(&(n - 1))) {
        let w: f64 = (start..=t).map(|k| prob.fid(k)).sum();
        let m = (start..=t).map(|k| prob.fid(k) * prob.g_u[k]).sum::<f64>() / w;
        for k in start..=t {
            st.u[k] = m;
        }
        start = t + 1;
    }
    // v: one dense solve over the whole grid
    let active = active_stencils(n, &st.j_v, &st.j_vprime);
    let mut m = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for k in 1..n - 1 {
        if active[k] {
            let al = prob.alpha(k);
            let s = [1.0, -2.0, 1.0];
            for i in 0..3 {
                for j in 0..3 {
                    m[(k - 1 + i, k - 1 + j)] += al * s[i] * s[j];
                }
            }
        }
    }
    for k in 0..n {
        m[(k, k)] += prob.fid(k);
        rhs[k] = prob.fid(k) * prob.g_v[k];
    }
    let v = m.cholesky().expect("fidelity > 0 makes the system definite").solve(&rhs);
    st.v = v.iter().copied().collect();
    st
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem(n: usize, gu: impl Fn(f64) -> f64, gv: impl Fn(f64) -> f64, beta: f64, fw: f64) -> BeamProblem {
        let l = 1.0;
        let xs: Vec<f64> = (0..n).map(|k| k as f64 * l / (n as f64 - 1.0)).collect();
        BeamProblem {
            a: 2.0,
            beta,
            l,
            g_u: xs.iter().map(|&x| gu(x)).collect(),
            g_v: xs.iter().map(|&x| gv(x)).collect(),
            fidelity_weight: fw,
            prefactor: STANDARD_PREFACTOR,
        }
    }

    #[test]
    fn energy_examples() {
        let p = problem(41, |_| 0.0, |_| 0.0, 1.0, 0.0);
        let mut s = BeamState::zeros(&p);
        assert_eq!(beam_energy(&s, &p).unwrap().total, 0.0);
        s.v = s.x.iter().map(|x| x * x).collect();
        let e = beam_energy(&s, &p).unwrap();
        assert!((e.elastic - 1.0 / 3.0).abs() < 1e-12, "{}", e.elastic);
        s.v = s.x.iter().map(|&x| if x > 0.5 { 1.0 } else { 0.0 }).collect();
        s.j_v = vec![20];
        let e = beam_energy(&s, &p).unwrap();
        assert!((e.total - 1.0).abs() < 1e-14);
        // coincident u and v jumps count once
        s.j_u = vec![20];
        assert_eq!(beam_energy(&s, &p).unwrap().jump, 1.0);
        let mut bad = s.clone();
        bad.v.pop();
        assert!(matches!(beam_energy(&bad, &p), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn printed_prefactor_is_four_times_larger() {
        let mut p = problem(21, |_| 0.0, |_| 0.0, 1.0, 0.0);
        let mut s = BeamState::zeros(&p);
        s.v = s.x.iter().map(|x| x * x).collect();
        let e0 = beam_energy(&s, &p).unwrap().elastic;
        p.prefactor = 1.0 / 6.0;
        let e1 = beam_energy(&s, &p).unwrap().elastic;
        assert!((e1 / e0 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn trivial_problem_rejected() {
        let p = problem(8, |_| 0.0, |_| 1.0, 1.0, 0.0);
        assert_eq!(solve_beam(&p, 2), Err(Error::TrivialProblem));
        let big = problem(17, |_| 0.0, |_| 1.0, 1.0, 1.0);
        assert_eq!(brute_force_beam(&big, 1), Err(Error::TooLarge(17)));
    }

    #[test]
    fn smooth_target_large_beta_has_no_jumps() {
        let p = problem(40, |_| 0.0, |x| (3.0 * x).sin(), 1e6, 5.0);
        let s = solve_beam(&p, 4).unwrap();
        assert_eq!(s.jump_count(), 0);
        assert!(s.v_stationarity(&p) < 1e-9);
    }

    #[test]
    fn zero_target_gives_zero_state() {
        let p = problem(12, |_| 0.0, |_| 0.0, 0.5, 1.0);
        let s = solve_beam(&p, 3).unwrap();
        assert_eq!(beam_energy(&s, &p).unwrap().total, 0.0);
        let b = brute_force_beam(&p, 3).unwrap();
        assert_eq!(b.jump_count(), 0);
    }

    #[test]
    fn kink_target_gets_a_kink() {
        let mut p = problem(15, |_| 0.0, |x| (x - 0.5).abs(), 0.01, 1.0);
        p.a = 1e4;
        let s = solve_beam(&p, 2).unwrap();
        let b = brute_force_beam(&p, 2).unwrap();
        let es = beam_energy(&s, &p).unwrap();
        let eb = beam_energy(&b, &p).unwrap();
        assert_eq!((&s.j_v, &s.j_vprime), (&b.j_v, &b.j_vprime), "{es:?} {eb:?}");
        // a kink and a value jump both fit the corner exactly at cost beta;
        // the leftmost rule picks whichever sits first
        assert_eq!(s.jump_count(), 1);
        let pos = s.jump_positions(&p)[0];
        assert!((pos - 0.5).abs() <= p.dx());
        assert!((es.total - p.beta).abs() < 1e-6);
    }

    #[test]
    fn u_step_threshold() {
        let mk = |beta: f64| problem(16, |x| if x > 0.5 { 0.3 } else { 0.0 }, |_| 0.0, beta, 1.0);
        for beta in [0.001, 0.01, 0.02, 0.03, 0.05] {
            let p = mk(beta);
            let s = solve_beam(&p, 3).unwrap();
            let b = brute_force_beam(&p, 3).unwrap();
            assert_eq!(s.j_u, b.j_u, "beta = {beta}");
            let es = beam_energy(&s, &p).unwrap().total;
            let eb = beam_energy(&b, &p).unwrap().total;
            assert!((es - eb).abs() <= 1e-9 * (1.0 + eb));
            assert!(s.u_step_defect() == 0.0);
        }
    }

    #[test]
    fn matches_oracle_on_random_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let n = rng.gen_range(5..10);
            let p = BeamProblem {
                a: rng.gen_range(0.01..5.0),
                beta: rng.gen_range(0.01..0.5),
                l: 1.0,
                g_u: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                g_v: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                fidelity_weight: rng.gen_range(0.5..5.0),
                prefactor: STANDARD_PREFACTOR,
            };
            let s = solve_beam(&p, 3).unwrap();
            let b = brute_force_beam(&p, 3).unwrap();
            let es = beam_energy(&s, &p).unwrap().total;
            let eb = beam_energy(&b, &p).unwrap().total;
            assert!((es - eb).abs() <= 1e-9 * (1.0 + eb), "{es} vs {eb}");
            assert!(s.v_stationarity(&p) < 1e-9);
        }
    }

    #[test]
    fn envelope_pruning_keeps_minimum() {
        let cs: Vec<Cand> = (0..6)
            .map(|i| Cand {
                q: Q1 {
                    a2: 1.0 + i as f64 * 0.3,
                    a1: (i as f64 - 2.5),
                    a0: (i as f64 * 0.7).sin(),
                },
                kinks: vec![i],
            })
            .collect();
        let kept = prune(cs.clone());
        for k in 0..200 {
            let x = -5.0 + k as f64 * 0.05;
            let ev = |q: &Q1| q.a2 * x * x + q.a1 * x + q.a0;
            let m1 = cs.iter().map(|c| ev(&c.q)).fold(f64::INFINITY, f64::min);
            let m2 = kept.iter().map(|c| ev(&c.q)).fold(f64::INFINITY, f64::min);
            assert!((m1 - m2).abs() < 1e-12);
        }
        assert!(kept.len() < cs.len());
    }
}
