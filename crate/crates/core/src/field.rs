//! Gridded displacement fields on the rescaled strip `(0, L) x (-1/2, 1/2)`
//! and polygonal crack sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `n` equal cells on `[a, b]`, returned as `n + 1` nodes.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..=n)
        .map(|i| if i == n { b } else { a + (b - a) * i as f64 / n as f64 })
        .collect()
}

/// Piecewise-uniform nodes: `breaks` are the interval ends and `counts[i]`
/// the number of cells on `[breaks[i], breaks[i + 1]]`.
pub fn graded(breaks: &[f64], counts: &[usize]) -> Vec<f64> {
    assert_eq!(breaks.len(), counts.len() + 1);
    let mut xs = vec![breaks[0]];
    for (w, &n) in breaks.windows(2).zip(counts) {
        let seg = linspace(w[0], w[1], n.max(1));
        xs.extend_from_slice(&seg[1..]);
    }
    xs
}

/// Index `i` of the cell `[xs[i], xs[i+1]]` containing `x` (clamped).
pub fn locate(xs: &[f64], x: f64) -> usize {
    let n = xs.len() - 1;
    match xs.binary_search_by(|p| p.total_cmp(&x)) {
        Ok(i) => i.min(n - 1),
        Err(0) => 0,
        Err(i) => (i - 1).min(n - 1),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisplacementField {
    #[serde(rename = "L")]
    pub l: f64,
    pub h: f64,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Row-major nodal values, index `j * xs.len() + i`.
    pub values: Vec<[f64; 2]>,
}

impl DisplacementField {
    pub fn new(l: f64, h: f64, xs: Vec<f64>, ys: Vec<f64>, values: Vec<[f64; 2]>) -> Result<Self> {
        let f = Self { l, h, xs, ys, values };
        f.validate()?;
        Ok(f)
    }

    pub fn from_fn<F>(l: f64, h: f64, xs: Vec<f64>, ys: Vec<f64>, f: F) -> Result<Self>
    where
        F: Fn(f64, f64) -> [f64; 2],
    {
        let mut values = Vec::with_capacity(xs.len() * ys.len());
        for &y in &ys {
            for &x in &xs {
                values.push(f(x, y));
            }
        }
        Self::new(l, h, xs, ys, values)
    }

    pub fn uniform<F>(l: f64, h: f64, nx: usize, ny: usize, f: F) -> Result<Self>
    where
        F: Fn(f64, f64) -> [f64; 2],
    {
        Self::from_fn(l, h, linspace(0.0, l, nx), linspace(-0.5, 0.5, ny), f)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            values: vec![[0.0; 2]; self.values.len()],
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h <= 1.0) {
            return Err(Error::InvalidThickness(self.h));
        }
        if !(self.l > 0.0) {
            return Err(Error::InvalidInput(format!("length L = {} must be positive", self.l)));
        }
        if self.xs.len() < 3 || self.ys.len() < 3 {
            return Err(Error::ShapeMismatch("need at least 2 cells per direction".into()));
        }
        if self.values.len() != self.xs.len() * self.ys.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {}x{} node grid",
                self.values.len(),
                self.xs.len(),
                self.ys.len()
            )));
        }
        let inc = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]);
        if !inc(&self.xs) || !inc(&self.ys) {
            return Err(Error::InvalidInput("grid coordinates must increase".into()));
        }
        let tol = 1e-12;
        if (self.xs[0]).abs() > tol * self.l
            || (self.xs[self.xs.len() - 1] - self.l).abs() > tol * self.l
            || (self.ys[0] + 0.5).abs() > tol
            || (self.ys[self.ys.len() - 1] - 0.5).abs() > tol
        {
            return Err(Error::InvalidInput("grid must span (0, L) x (-1/2, 1/2)".into()));
        }
        if self.values.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
            return Err(Error::InvalidInput("non-finite nodal value".into()));
        }
        Ok(())
    }

    pub fn nx(&self) -> usize {
        self.xs.len() - 1
    }

    pub fn ny(&self) -> usize {
        self.ys.len() - 1
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> [f64; 2] {
        self.values[j * self.xs.len() + i]
    }

    #[inline]
    pub fn node_mut(&mut self, i: usize, j: usize) -> &mut [f64; 2] {
        let w = self.xs.len();
        &mut self.values[j * w + i]
    }

    pub fn cell_size(&self, i: usize, j: usize) -> (f64, f64) {
        (self.xs[i + 1] - self.xs[i], self.ys[j + 1] - self.ys[j])
    }

    pub fn cell_area(&self, i: usize, j: usize) -> f64 {
        let (a, b) = self.cell_size(i, j);
        a * b
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            0.5 * (self.xs[i] + self.xs[i + 1]),
            0.5 * (self.ys[j] + self.ys[j + 1]),
        )
    }

    /// Raw rescaled-coordinate derivatives `[[d1 y1, d2 y1], [d1 y2, d2 y2]]`
    /// of the bilinear interpolant at the cell midpoint.
    #[inline]
    pub fn cell_gradient(&self, i: usize, j: usize) -> [[f64; 2]; 2] {
        let (dx, dy) = self.cell_size(i, j);
        let a = self.node(i, j);
        let b = self.node(i + 1, j);
        let c = self.node(i, j + 1);
        let d = self.node(i + 1, j + 1);
        let mut g = [[0.0; 2]; 2];
        for k in 0..2 {
            g[k][0] = 0.5 * ((b[k] - a[k]) + (d[k] - c[k])) / dx;
            g[k][1] = 0.5 * ((c[k] - a[k]) + (d[k] - b[k])) / dy;
        }
        g
    }

    /// Scaled gradient `(d1 y, h^-1 d2 y)` at the cell midpoint.
    #[inline]
    pub fn cell_scaled_gradient(&self, i: usize, j: usize) -> [[f64; 2]; 2] {
        let mut g = self.cell_gradient(i, j);
        g[0][1] /= self.h;
        g[1][1] /= self.h;
        g
    }

    pub fn cell_mean(&self, i: usize, j: usize) -> [f64; 2] {
        let mut m = [0.0; 2];
        for (a, b) in [(i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)] {
            let v = self.node(a, b);
            m[0] += 0.25 * v[0];
            m[1] += 0.25 * v[1];
        }
        m
    }

    /// Midpoint-rule integral of one component over the strip.
    pub fn integrate(&self, comp: usize) -> f64 {
        let mut s = crate::linalg::KahanSum::new();
        for j in 0..self.ny() {
            for i in 0..self.nx() {
                s.add(self.cell_mean(i, j)[comp] * self.cell_area(i, j));
            }
        }
        s.value()
    }

    /// Bilinear interpolation at an arbitrary point.
    pub fn sample(&self, x: f64, y: f64) -> [f64; 2] {
        let i = locate(&self.xs, x);
        let j = locate(&self.ys, y);
        let (dx, dy) = self.cell_size(i, j);
        let s = ((x - self.xs[i]) / dx).clamp(0.0, 1.0);
        let t = ((y - self.ys[j]) / dy).clamp(0.0, 1.0);
        let a = self.node(i, j);
        let b = self.node(i + 1, j);
        let c = self.node(i, j + 1);
        let d = self.node(i + 1, j + 1);
        let mut out = [0.0; 2];
        for k in 0..2 {
            out[k] = (1.0 - s) * (1.0 - t) * a[k] + s * (1.0 - t) * b[k] + (1.0 - s) * t * c[k] + s * t * d[k];
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrackSegment {
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub normal: [f64; 2],
}

impl CrackSegment {
    /// Segment with the normal `(dir)^perp` rotated a quarter turn clockwise.
    pub fn new(a: [f64; 2], b: [f64; 2]) -> Self {
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let n = (dx * dx + dy * dy).sqrt();
        let normal = if n > 0.0 { [dy / n, -dx / n] } else { [1.0, 0.0] };
        Self { a, b, normal }
    }

    pub fn length(&self) -> f64 {
        ((self.b[0] - self.a[0]).powi(2) + (self.b[1] - self.a[1]).powi(2)).sqrt()
    }

    /// `|(nu1, nu2 / h)|`.
    pub fn anisotropic_weight(&self, h: f64) -> f64 {
        (self.normal[0].powi(2) + (self.normal[1] / h).powi(2)).sqrt()
    }

    pub fn midpoint(&self) -> [f64; 2] {
        [0.5 * (self.a[0] + self.b[0]), 0.5 * (self.a[1] + self.b[1])]
    }

    /// Length of the part inside the closed rectangle (Liang–Barsky).
    pub fn clipped_length(&self, x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
        match self.clip(x0, x1, y0, y1) {
            Some((t0, t1)) => (t1 - t0) * self.length(),
            None => 0.0,
        }
    }

    /// Parameter interval of the part inside the closed rectangle.
    pub fn clip(&self, x0: f64, x1: f64, y0: f64, y1: f64) -> Option<(f64, f64)> {
        let d = [self.b[0] - self.a[0], self.b[1] - self.a[1]];
        let mut t0: f64 = 0.0;
        let mut t1: f64 = 1.0;
        let checks = [
            (-d[0], self.a[0] - x0),
            (d[0], x1 - self.a[0]),
            (-d[1], self.a[1] - y0),
            (d[1], y1 - self.a[1]),
        ];
        for (p, q) in checks {
            if p == 0.0 {
                if q < 0.0 {
                    return None;
                }
            } else {
                let r = q / p;
                if p < 0.0 {
                    t0 = t0.max(r);
                } else {
                    t1 = t1.min(r);
                }
            }
        }
        if t1 > t0 {
            Some((t0, t1))
        } else {
            None
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CrackSet {
    pub segments: Vec<CrackSegment>,
}

impl CrackSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn push(&mut self, s: CrackSegment) {
        self.segments.push(s);
    }

    /// Vertical segment `{x} x (y0, y1)` with normal `e1`.
    pub fn vertical(x: f64, y0: f64, y1: f64) -> CrackSegment {
        CrackSegment {
            a: [x, y0],
            b: [x, y1],
            normal: [1.0, 0.0],
        }
    }

    /// Horizontal segment `(x0, x1) x {y}` with normal `e2`.
    pub fn horizontal(y: f64, x0: f64, x1: f64) -> CrackSegment {
        CrackSegment {
            a: [x0, y],
            b: [x1, y],
            normal: [0.0, 1.0],
        }
    }

    /// Full-height vertical cracks at the given abscissae.
    pub fn full_vertical(xs: &[f64]) -> Self {
        Self {
            segments: xs.iter().map(|&x| Self::vertical(x, -0.5, 0.5)).collect(),
        }
    }

    /// Closed regular polygon with `n` vertices on the circle, outward normals.
    pub fn circle(center: [f64; 2], r: f64, n: usize) -> Self {
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                [center[0] + r * t.cos(), center[1] + r * t.sin()]
            })
            .collect();
        let segments = (0..n)
            .map(|k| {
                let a = pts[k];
                let b = pts[(k + 1) % n];
                // counter-clockwise traversal: outward normal is (dy, -dx)
                CrackSegment::new(a, b)
            })
            .collect();
        Self { segments }
    }

    pub fn length(&self) -> f64 {
        self.segments.iter().map(|s| s.length()).sum()
    }

    /// `int |(nu1, nu2 / h)| dH^1`.
    pub fn anisotropic_measure(&self, h: f64) -> f64 {
        crate::linalg::ksum(self.segments.iter().map(|s| s.length() * s.anisotropic_weight(h)))
    }

    /// Anisotropic measure of the part inside a rectangle.
    pub fn clipped_measure(&self, h: f64, x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
        crate::linalg::ksum(
            self.segments
                .iter()
                .map(|s| s.clipped_length(x0, x1, y0, y1) * s.anisotropic_weight(h)),
        )
    }

    pub fn clipped_length(&self, x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
        crate::linalg::ksum(self.segments.iter().map(|s| s.clipped_length(x0, x1, y0, y1)))
    }

    /// Checks that all segments lie in the closed strip and normals are unit.
    pub fn validate(&self, l: f64) -> Result<()> {
        let tol = 1e-12 * (1.0 + l);
        for (k, s) in self.segments.iter().enumerate() {
            for p in [s.a, s.b] {
                if p[0] < -tol || p[0] > l + tol || p[1] < -0.5 - tol || p[1] > 0.5 + tol || !p[0].is_finite() || !p[1].is_finite() {
                    return Err(Error::CrackOutsideDomain(k));
                }
            }
            let nn = s.normal[0].hypot(s.normal[1]);
            if (nn - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!("crack segment {k} has a non-unit normal")));
            }
        }
        Ok(())
    }
}

/// Per-cell crack statistics.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CellCut {
    pub length: f64,
    /// `sum len |nu1|` and `sum len |nu2|`.
    pub nu1: f64,
    pub nu2: f64,
    /// Length-weighted centroid of the crack inside the cell.
    pub cx: f64,
    pub cy: f64,
}

impl CellCut {
    pub fn is_cut(&self) -> bool {
        self.length > 0.0
    }

    /// Crack mostly vertical (normal mostly along `e1`).
    pub fn vertical(&self) -> bool {
        self.nu1 >= self.nu2
    }
}

/// Crack statistics for every cell, row-major; cells touched only at a point
/// are not cut.
pub fn cut_cells(field: &DisplacementField, crack: &CrackSet) -> Vec<CellCut> {
    let (nx, ny) = (field.nx(), field.ny());
    let mut cuts = vec![CellCut::default(); nx * ny];
    for s in &crack.segments {
        let (xa, xb) = (s.a[0].min(s.b[0]), s.a[0].max(s.b[0]));
        let (ya, yb) = (s.a[1].min(s.b[1]), s.a[1].max(s.b[1]));
        let (i0, i1) = (locate(&field.xs, xa), locate(&field.xs, xb));
        let (j0, j1) = (locate(&field.ys, ya), locate(&field.ys, yb));
        // a segment on a grid line touches the cells on both sides
        let i0 = if i0 > 0 && xa <= field.xs[i0] { i0 - 1 } else { i0 };
        let j0 = if j0 > 0 && ya <= field.ys[j0] { j0 - 1 } else { j0 };
        let i1 = if i1 + 1 < nx && xb >= field.xs[i1 + 1] { i1 + 1 } else { i1 };
        let j1 = if j1 + 1 < ny && yb >= field.ys[j1 + 1] { j1 + 1 } else { j1 };
        let len = s.length();
        let dvec = [s.b[0] - s.a[0], s.b[1] - s.a[1]];
        for j in j0..=j1 {
            for i in i0..=i1 {
                if let Some((t0, t1)) = s.clip(field.xs[i], field.xs[i + 1], field.ys[j], field.ys[j + 1]) {
                    let l = (t1 - t0) * len;
                    if l <= 1e-14 * (field.xs[i + 1] - field.xs[i]).max(field.ys[j + 1] - field.ys[j]) {
                        continue;
                    }
                    let tm = 0.5 * (t0 + t1);
                    let c = &mut cuts[j * nx + i];
                    c.length += l;
                    c.nu1 += l * s.normal[0].abs();
                    c.nu2 += l * s.normal[1].abs();
                    c.cx += l * (s.a[0] + tm * dvec[0]);
                    c.cy += l * (s.a[1] + tm * dvec[1]);
                }
            }
        }
    }
    for c in cuts.iter_mut() {
        if c.length > 0.0 {
            c.cx /= c.length;
            c.cy /= c.length;
        }
    }
    cuts
}
