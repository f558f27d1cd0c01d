//! Output plumbing: atomic writes, tables and the nodal grid format.
//!
//! Binary grids are little-endian: the 8-byte magic `TBGRID1\0`, then
//! `nx, ny, ncomp` as u64, `L, h` as f64, the `nx + 1` abscissae, the
//! `ny + 1` ordinates, and the nodal values row-major (`j * (nx + 1) + i`)
//! with `ncomp` entries per node. `nx`, `ny` count cells. The CSV variant
//! carries the same header as its first two records, then one record per
//! node `x1, x2, c0, ...` in the same order.

use std::io::Write;
use std::path::Path;

use tempfile::NamedTempFile;
use thinbeam::field::DisplacementField;

use crate::error::CliError;

const MAGIC: &[u8; 8] = b"TBGRID1\0";

/// Writes via a temporary file in the target directory and renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::io(format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}

/// Shortest round-trip decimal; stable across runs and platforms.
pub fn num(x: f64) -> String {
    format!("{x}")
}

/// 16 significant digits, trailing zeros trimmed.
pub fn g16(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let e = format!("{x:.15e}");
    let exp: i32 = e.split('e').nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    if !(-5..16).contains(&exp) {
        return e;
    }
    let s = format!("{:.*}", (15 - exp).max(0) as usize, x);
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// A numeric table rendered as CSV or as a JSON array of records.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: vec![],
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|&v| num(v)))?;
        }
        w.into_inner().map_err(|e| CliError::io(e.to_string()))
    }

    pub fn to_json(&self) -> serde_json::Value {
        self.rows
            .iter()
            .map(|r| {
                let m: serde_json::Map<String, serde_json::Value> =
                    self.header.iter().cloned().zip(r.iter().map(|&v| serde_json::json!(v))).collect();
                serde_json::Value::Object(m)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub l: f64,
    pub h: f64,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub ncomp: usize,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn from_field(f: &DisplacementField) -> Self {
        Self {
            l: f.l,
            h: f.h,
            xs: f.xs.clone(),
            ys: f.ys.clone(),
            ncomp: 2,
            values: f.values.iter().flatten().copied().collect(),
        }
    }

    pub fn scalar(f: &DisplacementField, v: &[f64]) -> Self {
        Self {
            l: f.l,
            h: f.h,
            xs: f.xs.clone(),
            ys: f.ys.clone(),
            ncomp: 1,
            values: v.to_vec(),
        }
    }

    pub fn into_field(self) -> Result<DisplacementField, CliError> {
        if self.ncomp != 2 {
            return Err(CliError::config(format!("grid has {} components, a displacement needs 2", self.ncomp)));
        }
        let v = self.values.chunks(2).map(|c| [c[0], c[1]]).collect();
        Ok(DisplacementField::new(self.l, self.h, self.xs, self.ys, v)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(48 + 8 * (self.xs.len() + self.ys.len() + self.values.len()));
        b.extend_from_slice(MAGIC);
        for n in [self.xs.len() - 1, self.ys.len() - 1, self.ncomp] {
            b.extend_from_slice(&(n as u64).to_le_bytes());
        }
        for x in [self.l, self.h].iter().chain(&self.xs).chain(&self.ys).chain(&self.values) {
            b.extend_from_slice(&x.to_le_bytes());
        }
        b
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, CliError> {
        let bad = |m: &str| CliError::config(format!("malformed grid file: {m}"));
        if b.len() < 48 || &b[..8] != MAGIC {
            return Err(bad("missing header"));
        }
        let u = |k: usize| u64::from_le_bytes(b[8 + 8 * k..16 + 8 * k].try_into().unwrap()) as usize;
        let (nx, ny, ncomp) = (u(0), u(1), u(2));
        let count = (nx + 1) + (ny + 1) + (nx + 1) * (ny + 1) * ncomp;
        let body = &b[32..];
        if body.len() != 8 * (2 + count) {
            return Err(bad("length does not match header"));
        }
        let f: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let (xs_end, ys_end) = (2 + nx + 1, 2 + nx + 1 + ny + 1);
        Ok(Self {
            l: f[0],
            h: f[1],
            xs: f[2..xs_end].to_vec(),
            ys: f[xs_end..ys_end].to_vec(),
            ncomp,
            values: f[ys_end..].to_vec(),
        })
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(vec![]);
        w.write_record(["nx", "ny", "L", "h", "ncomp"])?;
        w.write_record([
            (self.xs.len() - 1).to_string(),
            (self.ys.len() - 1).to_string(),
            num(self.l),
            num(self.h),
            self.ncomp.to_string(),
        ])?;
        let mut head = vec!["x1".to_string(), "x2".to_string()];
        head.extend((0..self.ncomp).map(|k| format!("c{k}")));
        w.write_record(&head)?;
        let n = self.xs.len();
        for (k, vals) in self.values.chunks(self.ncomp).enumerate() {
            let mut r = vec![num(self.xs[k % n]), num(self.ys[k / n])];
            r.extend(vals.iter().map(|&v| num(v)));
            w.write_record(&r)?;
        }
        w.into_inner().map_err(|e| CliError::io(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self, CliError> {
        let bad = |m: String| CliError::config(format!("malformed grid csv: {m}"));
        let mut rd = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
        let recs: Vec<csv::StringRecord> = rd.records().collect::<Result<_, _>>().map_err(|e| bad(e.to_string()))?;
        if recs.len() < 3 {
            return Err(bad("missing header".into()));
        }
        let p = |s: &str| s.trim().parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
        let h = &recs[1];
        if h.len() != 5 {
            return Err(bad("header needs nx, ny, L, h, ncomp".into()));
        }
        let (nx, ny, ncomp) = (p(&h[0])? as usize, p(&h[1])? as usize, p(&h[4])? as usize);
        let rows = &recs[3..];
        if rows.len() != (nx + 1) * (ny + 1) {
            return Err(bad(format!("expected {} node rows, got {}", (nx + 1) * (ny + 1), rows.len())));
        }
        let mut xs = vec![0.0; nx + 1];
        let mut ys = vec![0.0; ny + 1];
        let mut values = Vec::with_capacity(rows.len() * ncomp);
        for (k, r) in rows.iter().enumerate() {
            if r.len() != 2 + ncomp {
                return Err(bad(format!("row {k} has {} fields", r.len())));
            }
            let (i, j) = (k % (nx + 1), k / (nx + 1));
            if j == 0 {
                xs[i] = p(&r[0])?;
            }
            if i == 0 {
                ys[j] = p(&r[1])?;
            }
            for c in 0..ncomp {
                values.push(p(&r[2 + c])?);
            }
        }
        Ok(Self {
            l: p(&h[2])?,
            h: p(&h[3])?,
            xs,
            ys,
            ncomp,
            values,
        })
    }
}

/// Reads a grid; `.csv` selects the text variant.
pub fn read_grid(path: &Path) -> Result<Grid, CliError> {
    let err = |e: std::io::Error| CliError::config(format!("cannot read {}: {e}", path.display()));
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        Grid::from_csv(&std::fs::read_to_string(path).map_err(err)?)
    } else {
        Grid::from_bytes(&std::fs::read(path).map_err(err)?)
    }
}
