//! Rigidity extraction for thin cracked strips.
//!
//! The strip is covered by overlapping rectangles `Q_z = (z - h, z + h) x
//! (-1/2, 1/2)` (rescaled), `z = h, 2h, ..., (floor(L/h) - 1) h`. Rectangles
//! carrying little crack are fitted by infinitesimal rigid motions; runs of
//! cracked rectangles are either bridged (a truss of crack-free segments
//! ties the neighbouring fits together) or severed. The fits are then
//! interpolated to piecewise rigid fields whose jump count is bounded by the
//! crack measure.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{cut_cells, CrackSegment, CrackSet, DisplacementField};
use crate::linalg::KahanSum;
use crate::truss::{solve_rigid_from_truss, SegmentPair};

pub const DEFAULT_DELTA0: f64 = 1.0 / 16.0;
pub const DEFAULT_KORN_C: f64 = 8.0;
pub const DEFAULT_BRIDGE_C: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompactnessParams {
    pub delta: f64,
    pub eta: f64,
    #[serde(default = "d_delta0")]
    pub delta0: f64,
    #[serde(default = "d_korn")]
    pub korn_c: f64,
    #[serde(default = "d_bridge")]
    pub bridge_c: f64,
}

fn d_delta0() -> f64 {
    DEFAULT_DELTA0
}
fn d_korn() -> f64 {
    DEFAULT_KORN_C
}
fn d_bridge() -> f64 {
    DEFAULT_BRIDGE_C
}

impl CompactnessParams {
    pub fn new(delta: f64, eta: f64) -> Self {
        Self {
            delta,
            eta,
            delta0: DEFAULT_DELTA0,
            korn_c: DEFAULT_KORN_C,
            bridge_c: DEFAULT_BRIDGE_C,
        }
    }

    /// `C(eta, N) = bridge_c (N + 2) / eta^2`.
    pub fn bridge_constant(&self, n: usize) -> f64 {
        self.bridge_c * (n as f64 + 2.0) / (self.eta * self.eta)
    }
}

/// Infinitesimal rigid motion `A (x1, h x2) + b`, `A = [[0, -a], [a, 0]]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Rigid {
    pub a: f64,
    pub b: [f64; 2],
}

impl Rigid {
    pub fn eval(&self, x1: f64, x2: f64, h: f64) -> [f64; 2] {
        [-self.a * h * x2 + self.b[0], self.a * x1 + self.b[1]]
    }

    /// `(|A_1 - A_2|_F^2 + |b_1 - b_2|^2)^(1/2)`.
    pub fn distance(&self, o: &Rigid) -> f64 {
        (2.0 * (self.a - o.a).powi(2) + (self.b[0] - o.b[0]).powi(2) + (self.b[1] - o.b[1]).powi(2)).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RigidFit {
    pub motion: Rigid,
    /// Minimal value of the least-squares functional.
    pub residual: f64,
    /// Cells excluded next to the crack.
    pub omega: Vec<usize>,
    /// Anisotropic perimeter of the excluded set against `korn_c` times the
    /// crack measure in the rectangle.
    pub omega_perimeter: f64,
    pub korn_budget_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Rectangle {
    pub z: f64,
    /// Cell columns `i0..i1` with centres inside `(z - h, z + h)`.
    pub cols: (usize, usize),
    /// Anisotropic crack measure inside `Q_z`; the physical length is `h` times this.
    pub crack_measure: f64,
    pub good: bool,
    pub fit: Option<RigidFit>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GoodBadPartition {
    pub h: f64,
    pub delta: f64,
    pub rects: Vec<Rectangle>,
}

impl GoodBadPartition {
    pub fn bad_count(&self) -> usize {
        self.rects.iter().filter(|r| !r.good).count()
    }
}

/// Crack measure inside the open rectangle; segments lying on its
/// vertical sides do not count.
fn open_measure(crack: &CrackSet, h: f64, x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
    let mut s = KahanSum::new();
    for seg in &crack.segments {
        let vertical = seg.a[0] == seg.b[0];
        if vertical && (seg.a[0] <= x0 || seg.a[0] >= x1) {
            continue;
        }
        let horizontal = seg.a[1] == seg.b[1];
        if horizontal && (seg.a[1] <= y0 || seg.a[1] >= y1) {
            continue;
        }
        s.add(seg.clipped_length(x0, x1, y0, y1) * seg.anisotropic_weight(h));
    }
    s.value()
}

pub fn rectangle_centers(l: f64, h: f64) -> Vec<f64> {
    let m = (l / h + 1e-9).floor() as usize;
    (1..m.max(1)).map(|k| k as f64 * h).collect()
}

pub fn classify_rectangles(field: &DisplacementField, crack: &CrackSet, delta: f64, delta0: f64) -> Result<GoodBadPartition> {
    if !(delta > 0.0 && delta <= delta0) {
        return Err(Error::InvalidInput(format!("delta must lie in (0, {delta0}]")));
    }
    field.validate()?;
    crack.validate(field.l)?;
    let h = field.h;
    let nx = field.nx();
    let rects = rectangle_centers(field.l, h)
        .into_iter()
        .map(|z| {
            let i0 = (0..nx).find(|&i| 0.5 * (field.xs[i] + field.xs[i + 1]) > z - h).unwrap_or(nx);
            let i1 = (0..nx).rev().find(|&i| 0.5 * (field.xs[i] + field.xs[i + 1]) < z + h).map_or(0, |i| i + 1);
            let m = open_measure(crack, h, z - h, z + h, -0.5, 0.5);
            Rectangle {
                z,
                cols: (i0, i1.max(i0)),
                crack_measure: m,
                good: m <= delta,
                fit: None,
            }
        })
        .collect();
    Ok(GoodBadPartition { h, delta, rects })
}

/// Cut cells dilated by one cell in all eight directions.
pub fn crack_neighbourhood(field: &DisplacementField, crack: &CrackSet) -> Vec<bool> {
    let (nx, ny) = (field.nx(), field.ny());
    let cuts = cut_cells(field, crack);
    let mut out = vec![false; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            if !cuts[j * nx + i].is_cut() {
                continue;
            }
            for jj in j.saturating_sub(1)..(j + 2).min(ny) {
                for ii in i.saturating_sub(1)..(i + 2).min(nx) {
                    out[jj * nx + ii] = true;
                }
            }
        }
    }
    out
}

/// Anisotropic perimeter inside the strip of a cell set restricted to the
/// columns `i0..i1`: vertical edges count their length, horizontal edges
/// their length over `h`.
pub fn anisotropic_perimeter(field: &DisplacementField, mask: &[bool], i0: usize, i1: usize) -> f64 {
    let (nx, ny) = (field.nx(), field.ny());
    let inside = |i: usize, j: usize| mask[j * nx + i];
    let mut s = KahanSum::new();
    for j in 0..ny {
        for i in i0..i1 {
            let (dx, dy) = field.cell_size(i, j);
            if i + 1 < i1 && inside(i, j) != inside(i + 1, j) {
                s.add(dy);
            }
            if j + 1 < ny && inside(i, j) != inside(i, j + 1) {
                s.add(dx / field.h);
            }
        }
    }
    s.value()
}

/// Weighted least squares for `(a, b1, b2)` over the given cells.
pub fn fit_rigid_cells(field: &DisplacementField, cells: &[(usize, usize)]) -> Option<(Rigid, f64)> {
    let h = field.h;
    let ih2 = 1.0 / (h * h);
    let mut m = Matrix3::<f64>::zeros();
    let mut r = Vector3::<f64>::zeros();
    for &(i, j) in cells {
        let w = field.cell_area(i, j);
        let (x1, x2) = field.cell_center(i, j);
        let y = field.cell_mean(i, j);
        let g = field.cell_scaled_gradient(i, j);
        // rows of the value model: y1 = -h x2 a + b1, y2 = x1 a + b2
        let rows = [[-h * x2, 1.0, 0.0], [x1, 0.0, 1.0]];
        for (k, row) in rows.iter().enumerate() {
            let v = Vector3::new(row[0], row[1], row[2]);
            m += w * ih2 * v * v.transpose();
            r += w * ih2 * v * y[k];
        }
        // |G - A|^2 = ... + (G12 + a)^2 + (G21 - a)^2
        m[(0, 0)] += 2.0 * w;
        r[0] += w * (g[1][0] - g[0][1]);
    }
    let p = m.cholesky()?.solve(&r);
    let motion = Rigid {
        a: p[0],
        b: [p[1], p[2]],
    };
    Some((motion, fit_objective(field, cells, &motion)))
}

fn fit_objective(field: &DisplacementField, cells: &[(usize, usize)], q: &Rigid) -> f64 {
    let h = field.h;
    let mut s = KahanSum::new();
    for &(i, j) in cells {
        let w = field.cell_area(i, j);
        let (x1, x2) = field.cell_center(i, j);
        let y = field.cell_mean(i, j);
        let g = field.cell_scaled_gradient(i, j);
        let m = q.eval(x1, x2, h);
        let val = (y[0] - m[0]).powi(2) + (y[1] - m[1]).powi(2);
        let grad = g[0][0].powi(2) + g[1][1].powi(2) + (g[0][1] + q.a).powi(2) + (g[1][0] - q.a).powi(2);
        s.add(w * (val / (h * h) + grad));
    }
    s.value()
}

/// Fits every good rectangle; rectangles whose cells are all excluded
/// become bad.
pub fn fit_rigid_motions(mut part: GoodBadPartition, field: &DisplacementField, crack: &CrackSet, korn_c: f64) -> Result<GoodBadPartition> {
    if (field.h - part.h).abs() > 0.0 {
        return Err(Error::ShapeMismatch("partition built for another thickness".into()));
    }
    let nx = field.nx();
    let near = crack_neighbourhood(field, crack);
    part.rects.par_iter_mut().for_each(|r| {
        if !r.good {
            return;
        }
        let (i0, i1) = r.cols;
        let mut cells = vec![];
        let mut omega = vec![];
        for j in 0..field.ny() {
            for i in i0..i1 {
                if near[j * nx + i] {
                    omega.push(j * nx + i);
                } else {
                    cells.push((i, j));
                }
            }
        }
        let Some((motion, residual)) = (!cells.is_empty()).then(|| fit_rigid_cells(field, &cells)).flatten() else {
            log::debug!("{}", Error::EmptyRectangle(r.z));
            r.good = false;
            return;
        };
        let omega_perimeter = anisotropic_perimeter(field, &near, i0, i1);
        r.fit = Some(RigidFit {
            motion,
            residual,
            omega,
            omega_perimeter,
            korn_budget_ok: omega_perimeter <= korn_c * r.crack_measure + 1e-12,
        });
    });
    Ok(part)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Severed,
    Bridged(Box<BridgeCertificate>),
    /// Crack budget below `(1 - eta)` yet no crack-free segment triple.
    NoSegmentsFound,
    /// The run touches an end of the strip.
    Unflanked,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BridgeCertificate {
    /// Segments in rescaled coordinates: two horizontal, one diagonal.
    pub segments: Vec<[[f64; 2]; 2]>,
    pub theta: f64,
    /// Rigid difference recovered by the truss from the field, if the truss
    /// is nonsingular.
    pub truss_difference: Option<Rigid>,
    pub truss_bound: Option<f64>,
    /// `|A_z - A_z'|` and `|b_z - b_z'|` from the fits.
    pub fit_difference: f64,
    /// `int |e(w)|^2` over the hull in physical coordinates, crack cells excluded.
    pub hull_energy: f64,
    pub constant: f64,
    /// `constant h^-1 sqrt(hull_energy)`.
    pub bound: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BridgeReport {
    /// Indices of the first and last bad rectangle of the run.
    pub run: (usize, usize),
    pub hull: (f64, f64),
    pub hull_crack: f64,
    pub verdict: Verdict,
}

/// Maximal runs of bad rectangles as inclusive index ranges.
pub fn bad_runs(part: &GoodBadPartition) -> Vec<(usize, usize)> {
    let mut out = vec![];
    let mut start = None;
    for (k, r) in part.rects.iter().enumerate() {
        match (r.good, start) {
            (false, None) => start = Some(k),
            (true, Some(s)) => {
                out.push((s, k - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, part.rects.len() - 1));
    }
    out
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

/// Closed segments `pq` and `rs` meet.
pub fn segments_meet(p: [f64; 2], q: [f64; 2], r: [f64; 2], s: [f64; 2]) -> bool {
    let (d1, d2) = (orient(r, s, p), orient(r, s, q));
    let (d3, d4) = (orient(p, q, r), orient(p, q, s));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(r, s, p))
        || (d2 == 0.0 && on_segment(r, s, q))
        || (d3 == 0.0 && on_segment(p, q, r))
        || (d4 == 0.0 && on_segment(p, q, s))
}

fn crack_free(crack: &CrackSet, p: [f64; 2], q: [f64; 2]) -> bool {
    !crack.segments.iter().any(|s: &CrackSegment| segments_meet(p, q, s.a, s.b))
}

/// Physical `int |e(w)|^2` over cells with centres in `(x0, x1)`, cut cells skipped.
fn hull_energy(field: &DisplacementField, crack: &CrackSet, x0: f64, x1: f64) -> f64 {
    let cuts = cut_cells(field, crack);
    let nx = field.nx();
    let mut s = KahanSum::new();
    for j in 0..field.ny() {
        for i in 0..nx {
            let (cx, _) = field.cell_center(i, j);
            if cx <= x0 || cx >= x1 || cuts[j * nx + i].is_cut() {
                continue;
            }
            let g = field.cell_scaled_gradient(i, j);
            let e12 = 0.5 * (g[0][1] + g[1][0]);
            s.add((g[0][0].powi(2) + g[1][1].powi(2) + 2.0 * e12 * e12) * field.cell_area(i, j));
        }
    }
    field.h * s.value()
}

/// Verdict for every maximal run of bad rectangles.
pub fn bridge_check(part: &GoodBadPartition, field: &DisplacementField, crack: &CrackSet, params: &CompactnessParams) -> Result<Vec<BridgeReport>> {
    let eta = params.eta;
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::InvalidInput("eta must lie in (0, 1)".into()));
    }
    let h = part.h;
    let mut out = vec![];
    for (k0, k1) in bad_runs(part) {
        let left = k0.checked_sub(1).map(|k| &part.rects[k]);
        let right = part.rects.get(k1 + 1);
        let (x0, x1) = (
            left.map_or(0.0, |r| r.z - h),
            right.map_or(field.l, |r| r.z + h),
        );
        let hull_crack = open_measure(crack, h, x0, x1, -0.5, 0.5);
        let (Some(lr), Some(rr)) = (left, right) else {
            out.push(BridgeReport { run: (k0, k1), hull: (x0, x1), hull_crack, verdict: Verdict::Unflanked });
            continue;
        };
        let verdict = if hull_crack >= 1.0 - eta {
            Verdict::Severed
        } else {
            let (fl, fr) = (lr.fit.as_ref().unwrap(), rr.fit.as_ref().unwrap());
            match bridge_segments(field, crack, lr.z, rr.z, eta, k1 - k0 + 1) {
                None => Verdict::NoSegmentsFound,
                Some((segments, theta)) => {
                    let n = k1 - k0 + 1;
                    let (truss_difference, truss_bound) = truss_estimate(field, &segments);
                    let fit_difference = fl.motion.distance(&fr.motion);
                    let hull_energy = hull_energy(field, crack, x0, x1);
                    let constant = params.bridge_constant(n);
                    let bound = constant * hull_energy.sqrt() / h;
                    Verdict::Bridged(Box::new(BridgeCertificate {
                        segments,
                        theta,
                        truss_difference,
                        truss_bound,
                        fit_difference,
                        hull_energy,
                        constant,
                        bound,
                        holds: fit_difference <= bound + 1e-10,
                    }))
                }
            }
        };
        out.push(BridgeReport { run: (k0, k1), hull: (x0, x1), hull_crack, verdict });
    }
    Ok(out)
}

/// Two crack-free horizontal segments from `z` to `z'` of maximal separation
/// (at least `eta / 2`) and one crack-free diagonal of slope `theta =
/// eta^2 / (N + 2)`, all in rescaled coordinates.
fn bridge_segments(field: &DisplacementField, crack: &CrackSet, z: f64, z2: f64, eta: f64, n: usize) -> Option<(Vec<[[f64; 2]; 2]>, f64)> {
    let heights: Vec<f64> = field.ys.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let free: Vec<f64> = heights.iter().copied().filter(|&y| crack_free(crack, [z, y], [z2, y])).collect();
    let (lo, hi) = (*free.first()?, *free.last()?);
    if hi - lo < 0.5 * eta {
        return None;
    }
    let theta = eta * eta / (n as f64 + 2.0);
    // physical slope theta is the same slope in the frame x / h
    let rise = theta * (z2 - z) / field.h;
    let mid = 0.5 * (lo + hi);
    let mut starts: Vec<f64> = heights.clone();
    starts.sort_by(|a, b| (a - mid).abs().total_cmp(&(b - mid).abs()));
    for s in starts {
        for sign in [1.0, -1.0] {
            let e = s + sign * rise;
            if e.abs() >= 0.5 || (e - lo).abs() < 1e-15 || (e - hi).abs() < 1e-15 {
                continue;
            }
            if crack_free(crack, [z, s], [z2, e]) {
                return Some((vec![[[z, lo], [z2, lo]], [[z, hi], [z2, hi]], [[z, s], [z2, e]]], theta));
            }
        }
    }
    None
}

/// Difference of rigid motions seen by the truss, from field samples at the
/// segment ends, in the frame `x / h`.
fn truss_estimate(field: &DisplacementField, segs: &[[[f64; 2]; 2]]) -> (Option<Rigid>, Option<f64>) {
    let h = field.h;
    let mut pairs = vec![];
    let mut meas = vec![];
    for s in segs {
        let (p, q) = (s[0], s[1]);
        let (pp, qq) = ([p[0] / h, p[1]], [q[0] / h, q[1]]);
        pairs.push(SegmentPair::new(&pp, &qq));
        let (wp, wq) = (field.sample(p[0], p[1]), field.sample(q[0], q[1]));
        meas.push((wq[0] - wp[0]) * (pp[0] - qq[0]) + (wq[1] - wp[1]) * (pp[1] - qq[1]));
    }
    match solve_rigid_from_truss(&pairs, &meas) {
        Ok(t) => (
            Some(Rigid {
                a: t.motion.skew[0] / h,
                b: [t.motion.b[0], t.motion.b[1]],
            }),
            Some(t.bound),
        ),
        Err(e) => {
            log::debug!("bridge truss unusable: {e}");
            (None, None)
        }
    }
}

/// Piecewise rigid fields along the strip.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PiecewiseRigidFields {
    /// Knots of the piecewise-linear `A_h`, `b_h` (value left and right of
    /// each knot; they differ only at jumps).
    pub knots: Vec<f64>,
    pub left: Vec<Rigid>,
    pub right: Vec<Rigid>,
    /// Jump points of `A_h`, ascending.
    pub jumps: Vec<f64>,
    /// Piecewise-constant averages on `[0, j1], [j1, j2], ..., [jk, L]`.
    pub bar: Vec<Rigid>,
    pub m_cert: usize,
    pub l: f64,
}

impl PiecewiseRigidFields {
    /// `A_h`, `b_h` at `x1` (right-continuous).
    pub fn eval_h(&self, x: f64) -> Rigid {
        let k = self.knots.partition_point(|&t| t <= x);
        if k == 0 {
            return self.left[0];
        }
        if k == self.knots.len() {
            return self.right[k - 1];
        }
        let (t0, t1) = (self.knots[k - 1], self.knots[k]);
        let s = (x - t0) / (t1 - t0);
        let (a, b) = (self.right[k - 1], self.left[k]);
        Rigid {
            a: (1.0 - s) * a.a + s * b.a,
            b: [(1.0 - s) * a.b[0] + s * b.b[0], (1.0 - s) * a.b[1] + s * b.b[1]],
        }
    }

    /// `Abar`, `bbar` at `x1` (right-continuous).
    pub fn eval_bar(&self, x: f64) -> Rigid {
        self.bar[self.jumps.partition_point(|&t| t <= x)]
    }

    /// `#(J_Abar u J_bbar)`.
    pub fn jump_count(&self) -> usize {
        self.bar.windows(2).filter(|w| w[0] != w[1]).count()
    }
}

/// Mean of the piecewise-linear `A_h`, `b_h` over `[a, b]`.
fn mean_over(f: &PiecewiseRigidFields, a: f64, b: f64) -> Rigid {
    let mut pts = vec![a];
    pts.extend(f.knots.iter().copied().filter(|&t| t > a && t < b));
    pts.push(b);
    let mut s = [KahanSum::new(), KahanSum::new(), KahanSum::new()];
    for w in pts.windows(2) {
        let len = w[1] - w[0];
        if len <= 0.0 {
            continue;
        }
        // just inside each end so jumps at the ends are taken from inside
        let eps = 1e-12 * len;
        let (p, q) = (f.eval_h(w[0] + eps), f.eval_h(w[1] - eps));
        s[0].add(0.5 * len * (p.a + q.a));
        s[1].add(0.5 * len * (p.b[0] + q.b[0]));
        s[2].add(0.5 * len * (p.b[1] + q.b[1]));
    }
    let len = b - a;
    Rigid {
        a: s[0].value() / len,
        b: [s[1].value() / len, s[2].value() / len],
    }
}

pub fn build_piecewise_fields(part: &GoodBadPartition, bridges: &[BridgeReport], crack_measure: f64, l: f64) -> Result<PiecewiseRigidFields> {
    let goods: Vec<(f64, Rigid)> = part
        .rects
        .iter()
        .filter_map(|r| r.fit.as_ref().filter(|_| r.good).map(|f| (r.z, f.motion)))
        .collect();
    if goods.is_empty() {
        return Err(Error::NoGoodRectangles);
    }
    let mut knots = vec![];
    let mut left = vec![];
    let mut right = vec![];
    let mut jumps = vec![];
    let severed: Vec<(f64, f64)> = bridges
        .iter()
        .filter(|b| b.verdict == Verdict::Severed)
        .map(|b| (part.rects[b.run.0].z, part.rects[b.run.1].z))
        .collect();
    for (k, &(z, m)) in goods.iter().enumerate() {
        if k > 0 {
            let zp = goods[k - 1].0;
            if let Some(&(s0, s1)) = severed.iter().find(|(s0, s1)| *s0 > zp && *s1 < z) {
                // constant halves with a jump at the centre of the component
                let c = 0.5 * (s0 + s1);
                let prev = goods[k - 1].1;
                knots.push(c);
                left.push(prev);
                right.push(m);
                jumps.push(c);
            }
        }
        knots.push(z);
        left.push(m);
        right.push(m);
    }
    let mut f = PiecewiseRigidFields {
        knots,
        left,
        right,
        jumps: jumps.clone(),
        bar: vec![],
        m_cert: (crack_measure + 1e-9).floor() as usize,
        l,
    };
    let mut ends = vec![0.0];
    ends.extend(&jumps);
    ends.push(l);
    f.bar = ends.windows(2).map(|w| mean_over(&f, w[0], w[1])).collect();
    let count = f.jump_count();
    if count > f.m_cert {
        return Err(Error::CertificateViolation {
            severed: count,
            certificate: f.m_cert,
        });
    }
    Ok(f)
}

#[derive(Clone, Debug, Serialize)]
pub struct Extraction {
    pub partition: GoodBadPartition,
    pub bridges: Vec<BridgeReport>,
    pub fields: PiecewiseRigidFields,
    /// `y - Abar (x1, h x2) - bbar`; meaningful off `omega`.
    pub residual: DisplacementField,
    /// Row-major cell mask of the excluded set.
    pub omega: Vec<bool>,
    pub omega_area: f64,
    pub omega_perimeter: f64,
}

impl Extraction {
    /// Largest nodal residual over nodes of cells outside the excluded set.
    pub fn max_residual_off_omega(&self) -> f64 {
        let f = &self.residual;
        let (nx, w) = (f.nx(), f.xs.len());
        let mut m: f64 = 0.0;
        for j in 0..f.ny() {
            for i in 0..nx {
                if self.omega[j * nx + i] {
                    continue;
                }
                for n in [j * w + i, j * w + i + 1, (j + 1) * w + i, (j + 1) * w + i + 1] {
                    m = m.max(f.values[n][0].abs()).max(f.values[n][1].abs());
                }
            }
        }
        m
    }

    /// `L^2` norm of the residual off the excluded set.
    pub fn residual_l2_off_omega(&self) -> f64 {
        let f = &self.residual;
        let nx = f.nx();
        let mut s = KahanSum::new();
        for j in 0..f.ny() {
            for i in 0..nx {
                if !self.omega[j * nx + i] {
                    let v = f.cell_mean(i, j);
                    s.add((v[0] * v[0] + v[1] * v[1]) * f.cell_area(i, j));
                }
            }
        }
        s.value().sqrt()
    }
}

pub fn compactness_extract(field: &DisplacementField, crack: &CrackSet, params: &CompactnessParams) -> Result<Extraction> {
    let part = classify_rectangles(field, crack, params.delta, params.delta0)?;
    let part = fit_rigid_motions(part, field, crack, params.korn_c)?;
    let bridges = bridge_check(&part, field, crack, params)?;
    let fields = build_piecewise_fields(&part, &bridges, crack.anisotropic_measure(field.h), field.l)?;
    let (nx, ny) = (field.nx(), field.ny());
    let h = field.h;
    let mut omega = vec![false; nx * ny];
    for r in &part.rects {
        if let Some(fit) = r.fit.as_ref().filter(|_| r.good) {
            for &c in &fit.omega {
                omega[c] = true;
            }
        } else {
            for j in 0..ny {
                for i in r.cols.0..r.cols.1 {
                    omega[j * nx + i] = true;
                }
            }
        }
    }
    let layer = ((field.l / h + 1e-9).floor() - 1.0) * h;
    for j in 0..ny {
        for i in 0..nx {
            if field.cell_center(i, j).0 > layer {
                omega[j * nx + i] = true;
            }
        }
    }
    let mut residual = field.clone();
    let w = field.xs.len();
    for (n, v) in residual.values.iter_mut().enumerate() {
        let (x1, x2) = (field.xs[n % w], field.ys[n / w]);
        let m = fields.eval_bar(x1).eval(x1, x2, h);
        v[0] -= m[0];
        v[1] -= m[1];
    }
    let omega_area = (0..nx * ny)
        .filter(|&c| omega[c])
        .map(|c| field.cell_area(c % nx, c / nx))
        .sum();
    let omega_perimeter = anisotropic_perimeter(field, &omega, 0, nx);
    Ok(Extraction {
        partition: part,
        bridges,
        fields,
        residual,
        omega,
        omega_area,
        omega_perimeter,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProfileFit {
    /// Column centres.
    pub x: Vec<f64>,
    /// `None` where every cell of the column is excluded.
    pub kappa: Vec<Option<f64>>,
    pub t: Vec<Option<f64>>,
    /// `L^2` norm of `W - (-x2 kappa + T)` over the fitted cells.
    pub residual: f64,
    /// The same relative to the `L^2` norm of `W`.
    pub relative_residual: f64,
}

/// Fits `W = h^-1 d1 y1 ~ -x2 kappa(x1) + T(x1)` column by column.
pub fn profile_fit(field: &DisplacementField, omega: &[bool]) -> Result<ProfileFit> {
    let (nx, ny) = (field.nx(), field.ny());
    if omega.len() != nx * ny {
        return Err(Error::ShapeMismatch(format!("mask has {} cells, grid has {}", omega.len(), nx * ny)));
    }
    let h = field.h;
    let cols: Vec<(f64, Option<(f64, f64)>, f64, f64)> = (0..nx)
        .into_par_iter()
        .map(|i| {
            let x = 0.5 * (field.xs[i] + field.xs[i + 1]);
            let pts: Vec<(f64, f64, f64)> = (0..ny)
                .filter(|&j| !omega[j * nx + i])
                .map(|j| {
                    let g = field.cell_gradient(i, j);
                    (field.cell_center(i, j).1, g[0][0] / h, field.cell_area(i, j))
                })
                .collect();
            let sw: f64 = pts.iter().map(|p| p.2).sum();
            if pts.is_empty() || sw <= 0.0 {
                return (x, None, 0.0, 0.0);
            }
            let mx = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
            let mw = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
            let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - mx).powi(2)).sum();
            let sxw: f64 = pts.iter().map(|p| p.2 * (p.0 - mx) * (p.1 - mw)).sum();
            let slope = if sxx > 0.0 { sxw / sxx } else { 0.0 };
            let kappa = -slope;
            let t = mw - slope * mx;
            let res: f64 = pts.iter().map(|p| p.2 * (p.1 - (t + slope * p.0)).powi(2)).sum();
            let norm: f64 = pts.iter().map(|p| p.2 * p.1 * p.1).sum();
            (x, Some((kappa, t)), res, norm)
        })
        .collect();
    let res: f64 = cols.iter().map(|c| c.2).sum();
    let norm: f64 = cols.iter().map(|c| c.3).sum();
    Ok(ProfileFit {
        x: cols.iter().map(|c| c.0).collect(),
        kappa: cols.iter().map(|c| c.1.map(|p| p.0)).collect(),
        t: cols.iter().map(|c| c.1.map(|p| p.1)).collect(),
        residual: res.sqrt(),
        relative_residual: if norm > 0.0 { (res / norm).sqrt() } else { 0.0 },
    })
}
