//! Recovery sequences for limit configurations and the sweep comparing
//! `E_h(y_h)` with the beam energy `E_0(y)`.
//!
//! For `y = (u, v)` depending on `x1` only, the recovery field is
//! `y_h = y - x2 h (v', 0) + 1/2 x2^2 h^2 g (b*, c*)` with `g` a segmentwise
//! mollification of `-v''`. Every jump of `u`, `v` or `v'` becomes a
//! full-height vertical crack.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beam::STANDARD_PREFACTOR;
use crate::energy::{evaluate_eh, EnergyBreakdown};
use crate::error::{Error, Result};
use crate::field::{graded, locate, CrackSet, DisplacementField};
use crate::linalg::KahanSum;
use crate::tensor::ElasticTensor;

/// Relative tolerance deciding whether a breakpoint carries a jump.
const JUMP_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sine {
    pub amplitude: f64,
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
}

/// `sum_k poly[k] x^k + sum amplitude sin(frequency x + phase)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Piece {
    #[serde(default)]
    pub poly: Vec<f64>,
    #[serde(default)]
    pub sines: Vec<Sine>,
}

impl Piece {
    pub fn poly(c: &[f64]) -> Self {
        Self {
            poly: c.to_vec(),
            sines: vec![],
        }
    }

    /// Derivative of order `d <= 2`.
    pub fn eval(&self, x: f64, d: u32) -> f64 {
        let mut s = 0.0;
        for (k, &c) in self.poly.iter().enumerate() {
            let k = k as i32;
            let f = match d {
                0 => 1.0,
                1 => k as f64,
                _ => (k * (k - 1)) as f64,
            };
            if f != 0.0 {
                s += c * f * x.powi(k - d as i32);
            }
        }
        for t in &self.sines {
            let arg = t.frequency * x + t.phase;
            s += t.amplitude
                * match d {
                    0 => arg.sin(),
                    1 => t.frequency * arg.cos(),
                    _ => -t.frequency * t.frequency * arg.sin(),
                };
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepProfile {
    #[serde(default)]
    pub breaks: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiecewiseProfile {
    #[serde(default)]
    pub breaks: Vec<f64>,
    pub pieces: Vec<Piece>,
}

/// A limit configuration: `u` piecewise constant, `v` piecewise smooth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitConfig {
    #[serde(rename = "L")]
    pub l: f64,
    pub u: StepProfile,
    pub v: PiecewiseProfile,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BreakKind {
    /// `v` jumps.
    Jump,
    /// `v` continuous, `v'` jumps.
    Kink,
    /// Only `v''` jumps.
    Smooth,
}

fn check_breaks(b: &[f64], l: f64, pieces: usize, what: &str) -> Result<()> {
    if pieces != b.len() + 1 {
        return Err(Error::InvalidInput(format!(
            "{what}: {} breaks need {} pieces, got {pieces}",
            b.len(),
            b.len() + 1
        )));
    }
    let mut prev = 0.0;
    for &x in b {
        if !(x > prev && x < l) {
            return Err(Error::InvalidInput(format!("{what}: breaks must increase strictly inside (0, L)")));
        }
        prev = x;
    }
    Ok(())
}

impl LimitConfig {
    pub fn smooth(l: f64, v: Piece) -> Self {
        Self {
            l,
            u: StepProfile {
                breaks: vec![],
                values: vec![0.0],
            },
            v: PiecewiseProfile {
                breaks: vec![],
                pieces: vec![v],
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l > 0.0 && self.l.is_finite()) {
            return Err(Error::InvalidInput("L must be positive".into()));
        }
        check_breaks(&self.u.breaks, self.l, self.u.values.len(), "u")?;
        check_breaks(&self.v.breaks, self.l, self.v.pieces.len(), "v")
    }

    fn piece_index(breaks: &[f64], x: f64) -> usize {
        breaks.partition_point(|&b| b <= x)
    }

    pub fn u(&self, x: f64) -> f64 {
        self.u.values[Self::piece_index(&self.u.breaks, x)]
    }

    /// `d`-th derivative of `v`; right-continuous at breaks.
    pub fn v(&self, x: f64, d: u32) -> f64 {
        self.v.pieces[Self::piece_index(&self.v.breaks, x)].eval(x, d)
    }

    pub fn break_kinds(&self) -> Vec<BreakKind> {
        self.v
            .breaks
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let (a, b) = (&self.v.pieces[k], &self.v.pieces[k + 1]);
                let close = |p: f64, q: f64| (p - q).abs() <= JUMP_TOL * (1.0 + p.abs().max(q.abs()));
                if !close(a.eval(x, 0), b.eval(x, 0)) {
                    BreakKind::Jump
                } else if !close(a.eval(x, 1), b.eval(x, 1)) {
                    BreakKind::Kink
                } else {
                    BreakKind::Smooth
                }
            })
            .collect()
    }

    /// Jump points of `y` (of `u` or `v`).
    pub fn jumps_y(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .u
            .breaks
            .iter()
            .zip(self.u.values.windows(2))
            .filter(|(_, w)| w[0] != w[1])
            .map(|(&x, _)| x)
            .collect();
        for (x, k) in self.v.breaks.iter().zip(self.break_kinds()) {
            if k == BreakKind::Jump {
                out.push(*x);
            }
        }
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    /// Points where `v'` jumps but `y` does not.
    pub fn kinks(&self) -> Vec<f64> {
        let jy = self.jumps_y();
        self.v
            .breaks
            .iter()
            .zip(self.break_kinds())
            .filter(|(x, k)| *k == BreakKind::Kink && !jy.contains(x))
            .map(|(&x, _)| x)
            .collect()
    }

    /// `J_y` union `J_{v'}`, sorted.
    pub fn crack_positions(&self) -> Vec<f64> {
        let mut p = self.jumps_y();
        p.extend(self.kinks());
        p.sort_by(f64::total_cmp);
        p
    }

    /// Ends of the intervals on which `v` is C^1.
    fn c1_segments(&self) -> Vec<f64> {
        let mut e = vec![0.0];
        for (x, k) in self.v.breaks.iter().zip(self.break_kinds()) {
            if k != BreakKind::Smooth {
                e.push(*x);
            }
        }
        e.push(self.l);
        e
    }

    /// `int_0^L |v''|^2`.
    pub fn bending_integral(&self) -> f64 {
        let mut cuts = vec![0.0];
        cuts.extend_from_slice(&self.v.breaks);
        cuts.push(self.l);
        let mut s = KahanSum::new();
        for w in cuts.windows(2) {
            let k = Self::piece_index(&self.v.breaks, 0.5 * (w[0] + w[1]));
            let p = &self.v.pieces[k];
            s.add(gauss(w[0], w[1], 64, |x| p.eval(x, 2).powi(2)));
        }
        s.value()
    }

    /// `E_0(y) = prefactor a int |v''|^2 + beta #(J_y u J_{v'})`.
    pub fn limit_energy(&self, c: &ElasticTensor, beta: f64, prefactor: f64) -> Result<f64> {
        let a = c.bending_constant()?.a;
        Ok(prefactor * a * self.bending_integral() + beta * self.crack_positions().len() as f64)
    }
}

const GL_X: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683_1,
    0.0,
    0.538_469_310_105_683_1,
    0.906_179_845_938_664,
];
const GL_W: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

/// Composite five-point Gauss–Legendre rule with `n` panels.
fn gauss(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let hw = 0.5 * (b - a) / n as f64;
    let mut s = KahanSum::new();
    for k in 0..n {
        let m = a + (2 * k + 1) as f64 * hw;
        for (x, w) in GL_X.iter().zip(GL_W) {
            s.add(w * hw * f(m + hw * x));
        }
    }
    s.value()
}

/// Nodal mollification of `-v''` and its achieved `L^2` error.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Smoothed {
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
    /// Interior breaks of C^1 regularity; a cell containing one takes the
    /// nodal value of the side it is on instead of interpolating across.
    pub cuts: Vec<f64>,
    /// Gaussian width; `None` when `g = 0` was returned.
    pub width: Option<f64>,
    pub error: f64,
}

impl Smoothed {
    pub fn eval(&self, x: f64) -> f64 {
        let i = locate(&self.nodes, x);
        interp(&self.nodes, &self.values, &self.cuts, i, x)
    }
}

/// Linear between nodes `i`, `i + 1`, or one-sided if a cut lies between them.
fn interp(nodes: &[f64], g: &[f64], cuts: &[f64], i: usize, x: f64) -> f64 {
    let (x0, x1) = (nodes[i], nodes[i + 1]);
    if let Some(&c) = cuts.iter().find(|&&c| c > x0 && c < x1) {
        return if x < c { g[i] } else { g[i + 1] };
    }
    let t = ((x - x0) / (x1 - x0)).clamp(0.0, 1.0);
    (1.0 - t) * g[i] + t * g[i + 1]
}

/// Samples of `-v''` on one C^1 interval, for discrete convolution.
struct SegmentSamples {
    a: f64,
    b: f64,
    xs: Vec<f64>,
    fs: Vec<f64>,
    dx: f64,
}

const SAMPLES: usize = 4000;

fn samples(y: &LimitConfig) -> Vec<SegmentSamples> {
    y.c1_segments()
        .windows(2)
        .map(|w| {
            let dx = (w[1] - w[0]) / SAMPLES as f64;
            let xs: Vec<f64> = (0..SAMPLES).map(|k| w[0] + (k as f64 + 0.5) * dx).collect();
            let fs = xs.iter().map(|&x| -y.v(x, 2)).collect();
            SegmentSamples { a: w[0], b: w[1], xs, fs, dx }
        })
        .collect()
}

fn mollify(y: &LimitConfig, segs: &[SegmentSamples], nodes: &[f64], width: f64) -> Vec<f64> {
    nodes
        .iter()
        .map(|&x| {
            let s = segs
                .iter()
                .find(|s| x >= s.a && x <= s.b)
                .unwrap_or(&segs[segs.len() - 1]);
            if width * 6.0 < s.dx {
                return -y.v(x.clamp(s.a, s.b), 2);
            }
            let lo = s.xs.partition_point(|&t| t < x - 6.0 * width);
            let hi = s.xs.partition_point(|&t| t <= x + 6.0 * width);
            let (mut num, mut den) = (0.0, 0.0);
            for k in lo..hi {
                let r = (s.xs[k] - x) / width;
                let w = (-0.5 * r * r).exp();
                num += w * s.fs[k];
                den += w;
            }
            if den > 0.0 {
                num / den
            } else {
                -y.v(x.clamp(s.a, s.b), 2)
            }
        })
        .collect()
}

/// `|| -v'' - g ||_{L^2(0, L)}` for the piecewise-linear `g` on `nodes`.
fn l2_error(y: &LimitConfig, nodes: &[f64], g: &[f64], c1_cuts: &[f64]) -> f64 {
    let mut s = KahanSum::new();
    for i in 0..nodes.len() - 1 {
        let (x0, x1) = (nodes[i], nodes[i + 1]);
        let mut cuts = vec![x0];
        cuts.extend(y.v.breaks.iter().copied().filter(|&b| b > x0 && b < x1));
        cuts.push(x1);
        for w in cuts.windows(2) {
            let k = LimitConfig::piece_index(&y.v.breaks, 0.5 * (w[0] + w[1]));
            let p = &y.v.pieces[k];
            s.add(gauss(w[0], w[1], 2, |x| (p.eval(x, 2) + interp(nodes, g, c1_cuts, i, x)).powi(2)));
        }
    }
    s.value().max(0.0).sqrt()
}

/// Segmentwise Gaussian smoothing of `-v''` with the widest kernel meeting
/// `|| -v'' - g ||_{L^2} <= eta`; never smooths across jumps of `v` or `v'`.
pub fn smooth_second_derivative(y: &LimitConfig, eta: f64, nodes: &[f64]) -> Result<Smoothed> {
    y.validate()?;
    if !(eta > 0.0) {
        return Err(Error::InvalidInput("eta must be positive".into()));
    }
    if nodes.len() < 2 || nodes[0] > 0.0 || *nodes.last().unwrap() < y.l {
        return Err(Error::InvalidInput("nodes must cover [0, L]".into()));
    }
    let norm = y.bending_integral().sqrt();
    if norm <= eta {
        return Ok(Smoothed {
            nodes: nodes.to_vec(),
            values: vec![0.0; nodes.len()],
            cuts: vec![],
            width: None,
            error: norm,
        });
    }
    let segs = samples(y);
    let ends = y.c1_segments();
    let cuts = ends[1..ends.len() - 1].to_vec();
    let err = |w: f64| {
        let g = mollify(y, &segs, nodes, w);
        let e = l2_error(y, nodes, &g, &cuts);
        (g, e)
    };
    // the error is not monotone in the width near unresolved kinks of v'',
    // so scan geometrically before bisecting
    let mut widths = vec![0.0];
    widths.extend((0..40).map(|k| y.l * 0.5f64.powi(k)).rev());
    let trial: Vec<(f64, f64)> = widths.iter().map(|&w| (w, err(w).1)).collect();
    let Some(k) = trial.iter().rposition(|t| t.1 <= eta) else {
        let best = trial.iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
        return Err(Error::CannotAchieveEta { eta, best });
    };
    let mut lo = trial[k].0;
    let mut best = err(lo);
    if k + 1 < trial.len() {
        let mut hi = trial[k + 1].0;
        for _ in 0..30 {
            let mid = 0.5 * (lo + hi);
            let (g, e) = err(mid);
            if e <= eta {
                lo = mid;
                best = (g, e);
            } else {
                hi = mid;
            }
        }
    }
    Ok(Smoothed {
        nodes: nodes.to_vec(),
        values: best.0,
        cuts,
        width: Some(lo),
        error: best.1,
    })
}

/// Grid resolution of recovery fields.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoveryGrid {
    /// Cells per length `h` along the strip.
    pub cells_per_h: usize,
    /// Cap on the cell width along the strip.
    pub max_dx: f64,
    /// Rows across the thickness: `max(min_ny, rows_per_inv_h / h)`.
    pub min_ny: usize,
    pub rows_per_inv_h: f64,
}

impl RecoveryGrid {
    pub fn ny(&self, h: f64) -> usize {
        self.min_ny.max((self.rows_per_inv_h / h).ceil() as usize).max(1)
    }
}

impl Default for RecoveryGrid {
    fn default() -> Self {
        Self {
            cells_per_h: 8,
            max_dx: 1.0 / 64.0,
            min_ny: 128,
            rows_per_inv_h: 8.0,
        }
    }
}

/// Nodes along the strip with every crack point at a cell centre.
fn strip_nodes(l: f64, cracks: &[f64], dx: f64) -> Result<Vec<f64>> {
    let mut anchors = vec![0.0];
    let mut counts = vec![];
    for &p in cracks {
        let (a, b) = (p - 0.5 * dx, p + 0.5 * dx);
        if a <= *anchors.last().unwrap() || b >= l {
            return Err(Error::InvalidInput(format!(
                "crack points closer than the cell width {dx} to each other or to the ends"
            )));
        }
        counts.push(((a - anchors.last().unwrap()) / dx).ceil() as usize);
        anchors.push(a);
        counts.push(1);
        anchors.push(b);
    }
    counts.push(((l - anchors.last().unwrap()) / dx).ceil() as usize);
    anchors.push(l);
    Ok(graded(&anchors, &counts))
}

pub fn build_recovery(y: &LimitConfig, h: f64, eta: f64, c: &ElasticTensor) -> Result<(DisplacementField, CrackSet)> {
    let (f, cr, _) = build_recovery_with(y, h, eta, c, RecoveryGrid::default())?;
    Ok((f, cr))
}

pub fn build_recovery_with(
    y: &LimitConfig,
    h: f64,
    eta: f64,
    c: &ElasticTensor,
    grid: RecoveryGrid,
) -> Result<(DisplacementField, CrackSet, Smoothed)> {
    y.validate()?;
    if !(h > 0.0 && h <= 1.0) {
        return Err(Error::InvalidThickness(h));
    }
    let bend = c.bending_constant()?;
    let cracks = y.crack_positions();
    let dx = (h / grid.cells_per_h.max(1) as f64).min(grid.max_dx);
    let xs = strip_nodes(y.l, &cracks, dx)?;
    let g = smooth_second_derivative(y, eta, &xs)?;
    let ny = grid.ny(h);
    let ys: Vec<f64> = (0..=ny).map(|j| -0.5 + j as f64 / ny as f64).collect();
    let mut values = Vec::with_capacity(xs.len() * ys.len());
    for &x2 in &ys {
        for (i, &x1) in xs.iter().enumerate() {
            let q = 0.5 * x2 * x2 * h * h * g.values[i];
            values.push([y.u(x1) - x2 * h * y.v(x1, 1) + q * bend.b_star, y.v(x1, 0) + q * bend.c_star]);
        }
    }
    let field = DisplacementField::new(y.l, h, xs, ys, values)?;
    Ok((field, CrackSet::full_vertical(&cracks), g))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub h: f64,
    pub eta: f64,
    pub e_h: f64,
    pub elastic: f64,
    pub jump: f64,
    pub e0: f64,
    /// `|E_h - E_0| / E_0` (absolute gap if `E_0 = 0`).
    pub gap: f64,
    pub smoothing_error: f64,
}

/// Pairs `(h_i, eta_i)` along a diagonal.
pub fn diagonal(hs: &[f64], etas: &[f64]) -> Vec<(f64, f64)> {
    hs.iter().copied().zip(etas.iter().copied()).collect()
}

/// All pairs `(h, eta)`.
pub fn product(hs: &[f64], etas: &[f64]) -> Vec<(f64, f64)> {
    hs.iter().flat_map(|&h| etas.iter().map(move |&e| (h, e))).collect()
}

pub fn gamma_sweep(y: &LimitConfig, pairs: &[(f64, f64)], c: &ElasticTensor, beta: f64) -> Result<Vec<SweepRow>> {
    gamma_sweep_with(y, pairs, c, beta, RecoveryGrid::default())
}

pub fn gamma_sweep_with(
    y: &LimitConfig,
    pairs: &[(f64, f64)],
    c: &ElasticTensor,
    beta: f64,
    grid: RecoveryGrid,
) -> Result<Vec<SweepRow>> {
    let e0 = y.limit_energy(c, beta, STANDARD_PREFACTOR)?;
    pairs
        .par_iter()
        .map(|&(h, eta)| {
            let (f, cr, g) = build_recovery_with(y, h, eta, c, grid)?;
            let EnergyBreakdown { elastic, jump, total } = evaluate_eh(&f, &cr, c, beta)?;
            let gap = if e0 != 0.0 { (total - e0).abs() / e0 } else { total.abs() };
            Ok(SweepRow {
                h,
                eta,
                e_h: total,
                elastic,
                jump,
                e0,
                gap,
                smoothing_error: g.error,
            })
        })
        .collect()
}
