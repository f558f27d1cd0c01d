use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Deserialize;

use thinbeam::beam::BeamProblem;
use thinbeam::compactness::{DEFAULT_BRIDGE_C, DEFAULT_DELTA0, DEFAULT_KORN_C};
use thinbeam::counterexamples::{escaping_ball_example_with, triangle_counterexample_with, BALL_CELLS, BALL_SEGMENTS, PATCH_CELLS};
use thinbeam::energy::CutCellPolicy;
use thinbeam::field::{CrackSegment, CrackSet, DisplacementField};
use thinbeam::recovery::{build_recovery_with, LimitConfig, RecoveryGrid};
use thinbeam::truss::{OrientedLine, SegmentPair};
use thinbeam::{ElasticTensor, TensorSpec};

use crate::error::CliError;
use crate::io::read_grid;

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BendingConfig {
    pub tensor: TensorSpec,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrussConfig {
    #[serde(default)]
    pub pairs: Vec<SegmentPair>,
    /// Elongations to invert; needs `pairs`.
    #[serde(default)]
    pub measurements: Option<Vec<f64>>,
    #[serde(default)]
    pub lines: Vec<OrientedLine>,
}

/// Crack segments given by endpoints.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrackInput {
    pub segments: Vec<[[f64; 2]; 2]>,
}

impl CrackInput {
    fn build(&self) -> CrackSet {
        let mut c = CrackSet::empty();
        for s in &self.segments {
            c.push(CrackSegment::new(s[0], s[1]));
        }
        c
    }
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Triangle {
        h: f64,
        #[serde(rename = "L")]
        l: f64,
        #[serde(default)]
        patch: Option<usize>,
    },
    Ball {
        h: f64,
        #[serde(rename = "L")]
        l: f64,
        #[serde(default)]
        cells: Option<usize>,
        #[serde(default)]
        segments: Option<usize>,
    },
    /// `A (x1, h x2) + b` with `A` the skew matrix of angle `a`.
    Rigid {
        h: f64,
        #[serde(rename = "L")]
        l: f64,
        nx: usize,
        ny: usize,
        a: f64,
        b: [f64; 2],
    },
    /// Two constant pieces separated by a full vertical crack at `x0`.
    Split {
        h: f64,
        #[serde(rename = "L")]
        l: f64,
        nx: usize,
        ny: usize,
        x0: f64,
        left: [f64; 2],
        right: [f64; 2],
    },
    Recovery {
        limit: LimitConfig,
        h: f64,
        eta: f64,
        #[serde(default)]
        grid: Option<RecoveryGrid>,
    },
    /// Nodal values from a grid file, plus an explicit crack.
    Grid {
        path: PathBuf,
        #[serde(default)]
        crack: CrackInput,
    },
}

impl FieldSpec {
    /// Builds the field; relative grid paths resolve against `base`.
    pub fn build(&self, c: &ElasticTensor, base: &Path) -> Result<(DisplacementField, CrackSet), CliError> {
        Ok(match self {
            FieldSpec::Triangle { h, l, patch } => triangle_counterexample_with(*h, *l, patch.unwrap_or(PATCH_CELLS))?,
            FieldSpec::Ball { h, l, cells, segments } => {
                escaping_ball_example_with(*h, *l, cells.unwrap_or(BALL_CELLS), segments.unwrap_or(BALL_SEGMENTS))?
            }
            FieldSpec::Rigid { h, l, nx, ny, a, b } => {
                let (a, b, h) = (*a, *b, *h);
                let f = DisplacementField::uniform(*l, h, *nx, *ny, |x1, x2| [-a * h * x2 + b[0], a * x1 + b[1]])?;
                (f, CrackSet::empty())
            }
            FieldSpec::Split { h, l, nx, ny, x0, left, right } => {
                let x0 = *x0;
                let f = DisplacementField::uniform(*l, *h, *nx, *ny, |x1, _| if x1 < x0 { *left } else { *right })?;
                (f, CrackSet::full_vertical(&[x0]))
            }
            FieldSpec::Recovery { limit, h, eta, grid } => {
                let (f, cr, _) = build_recovery_with(limit, *h, *eta, c, grid.unwrap_or_default())?;
                (f, cr)
            }
            FieldSpec::Grid { path, crack } => {
                let p = if path.is_relative() { base.join(path) } else { path.clone() };
                let g = read_grid(&p)?;
                (g.into_field()?, crack.build())
            }
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub tensor: TensorSpec,
    pub beta: f64,
    #[serde(default)]
    pub policy: CutCellPolicy,
    pub field: FieldSpec,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Solve2dConfig {
    pub tensor: TensorSpec,
    pub beta: f64,
    pub fidelity: f64,
    /// Target `g`; its crack, if any, is ignored.
    pub target: FieldSpec,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub k_eps: Option<f64>,
    #[serde(default)]
    pub max_iter: Option<usize>,
    #[serde(default)]
    pub rel_tol: Option<f64>,
    /// Start from a random damage field drawn from `--seed`.
    #[serde(default)]
    pub random_init: bool,
    #[serde(default = "half")]
    pub threshold: f64,
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamConfig {
    pub problem: BeamProblem,
    #[serde(default = "three")]
    pub max_jumps: usize,
}

fn three() -> usize {
    3
}

#[derive(Debug, Default, Deserialize, Clone, Copy)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    #[default]
    Diagonal,
    Product,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub tensor: TensorSpec,
    pub beta: f64,
    pub limit: LimitConfig,
    pub h: Vec<f64>,
    pub eta: Vec<f64>,
    #[serde(default)]
    pub mode: SweepMode,
    #[serde(default)]
    pub grid: Option<RecoveryGrid>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompactnessConfig {
    /// Only used by the `recovery` field preset.
    #[serde(default)]
    pub tensor: Option<TensorSpec>,
    pub field: FieldSpec,
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
