use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use thinbeam::beam::{beam_energy, solve_beam};
use thinbeam::checks::run_all;
use thinbeam::compactness::{compactness_extract, CompactnessParams};
use thinbeam::energy::{evaluate_eh_with, unrescaled};
use thinbeam::isotropic_tensor;
use thinbeam::phasefield::{at_energy, extract_crack, mean_vertical_position, minimize_alternating, DamageInit, PhaseFieldProblem};
use thinbeam::recovery::{diagonal, gamma_sweep_with, product};
use thinbeam::truss::{line_function_f, singular_threshold, solve_rigid_from_truss, truss_matrix};

use crate::config::{self, FieldSpec, SweepMode};
use crate::error::CliError;
use crate::io::{g16, write_atomic, Grid, Table};
use crate::{Cli, Command, Format};

/// Where artifacts go. A path with an extension names the primary table
/// and puts the other artifacts beside it.
struct Sink {
    dir: Option<PathBuf>,
    primary: Option<PathBuf>,
    format: Format,
    /// Grids as CSV instead of binary; only with an explicit `--format csv`.
    csv_grids: bool,
}

impl Sink {
    fn new(cli: &Cli) -> Self {
        let format = cli.format.unwrap_or(Format::Csv);
        let csv_grids = cli.format == Some(Format::Csv);
        let (dir, primary) = match &cli.out {
            None => (None, None),
            Some(p) if p.extension().is_some() => (Some(p.parent().map(Path::to_path_buf).unwrap_or_default()), Some(p.clone())),
            Some(p) => (Some(p.clone()), None),
        };
        Self {
            dir,
            primary,
            format,
            csv_grids,
        }
    }

    fn path(&self, name: &str) -> Option<PathBuf> {
        let dir = self.dir.as_ref()?;
        Some(match &self.primary {
            Some(p) => {
                let stem = p.file_stem().unwrap_or_default().to_string_lossy();
                dir.join(format!("{stem}.{name}"))
            }
            None => dir.join(name),
        })
    }

    fn table(&self, stem: &str, t: &Table, primary: bool) -> Result<(), CliError> {
        let ext = match self.format {
            Format::Csv => "csv",
            Format::Json => "json",
        };
        let target = match (&self.primary, primary) {
            (Some(p), true) => Some(p.clone()),
            _ => self.path(&format!("{stem}.{ext}")),
        };
        let Some(target) = target else { return Ok(()) };
        let bytes = match self.format {
            Format::Csv => t.to_csv()?,
            Format::Json => pretty(&t.to_json()),
        };
        write_atomic(&target, &bytes)
    }

    fn json(&self, name: &str, v: &impl Serialize) -> Result<(), CliError> {
        match self.path(name) {
            Some(p) => write_atomic(&p, &pretty(v)),
            None => Ok(()),
        }
    }

    fn grid(&self, stem: &str, g: &Grid) -> Result<(), CliError> {
        let name = format!("{stem}.{}", if self.csv_grids { "csv" } else { "tbgrid" });
        match self.path(&name) {
            Some(p) if self.csv_grids => write_atomic(&p, &g.to_csv()?),
            Some(p) => write_atomic(&p, &g.to_bytes()),
            None => Ok(()),
        }
    }
}

fn pretty(v: &impl Serialize) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).expect("serializable");
    b.push(b'\n');
    b
}

fn command_name(c: Command) -> &'static str {
    match c {
        Command::BendingConstant => "bending-constant",
        Command::TrussDet => "truss-det",
        Command::EvalEh => "eval-eh",
        Command::Solve2d => "solve-2d",
        Command::SolveBeam => "solve-beam",
        Command::GammaSweep => "gamma-sweep",
        Command::Compactness => "compactness",
        Command::PaperChecks => "paper-checks",
    }
}

fn print_summary(cli: &Cli, v: &Value) {
    let Value::Object(m) = v else {
        println!("{v}");
        return;
    };
    let scalar = |x: &Value| match x {
        Value::Number(n) => n.as_f64().map(g16).unwrap_or_else(|| n.to_string()),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    match cli.format {
        Some(Format::Json) => println!("{}", serde_json::to_string_pretty(v).expect("serializable")),
        Some(Format::Csv) => {
            let keys: Vec<&String> = m.keys().filter(|k| !m[*k].is_object() && !m[*k].is_array()).collect();
            println!("{}", keys.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(","));
            println!("{}", keys.iter().map(|k| scalar(&m[*k])).collect::<Vec<_>>().join(","));
        }
        None => {
            for (k, x) in m {
                println!("{k} = {}", scalar(x));
            }
        }
    }
}

fn config_path(cli: &Cli) -> Result<&Path, CliError> {
    cli.config
        .as_deref()
        .ok_or_else(|| CliError::config(format!("{} needs --config <path>", command_name(cli.command))))
}

fn base_dir(p: &Path) -> PathBuf {
    p.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Runs the selected command; returns the process exit code on success.
pub fn run(cli: &Cli) -> Result<u8, CliError> {
    let sink = Sink::new(cli);
    let (summary, code) = match cli.command {
        Command::BendingConstant => (bending(cli, &sink)?, 0),
        Command::TrussDet => (truss(cli, &sink)?, 0),
        Command::EvalEh => (eval_eh(cli, &sink)?, 0),
        Command::Solve2d => (solve_2d(cli, &sink)?, 0),
        Command::SolveBeam => (beam(cli, &sink)?, 0),
        Command::GammaSweep => (sweep(cli, &sink)?, 0),
        Command::Compactness => (compactness(cli, &sink)?, 0),
        Command::PaperChecks => return checks(cli, &sink),
    };
    let meta = json!({
        "command": command_name(cli.command),
        "seed": cli.seed,
        "version": env!("CARGO_PKG_VERSION"),
    });
    sink.json("meta.json", &meta)?;
    print_summary(cli, &summary);
    Ok(code)
}

fn bending(cli: &Cli, sink: &Sink) -> Result<Value, CliError> {
    let cfg: config::BendingConfig = config::load(config_path(cli)?)?;
    let c = cfg.tensor.build()?;
    let r = c.bending_constant()?;
    let v = json!({
        "a": r.a,
        "b_star": r.b_star,
        "c_star": r.c_star,
        "coercivity": c.coercivity_constant()?,
    });
    sink.json("bending.json", &v)?;
    Ok(v)
}

fn truss(cli: &Cli, sink: &Sink) -> Result<Value, CliError> {
    let cfg: config::TrussConfig = config::load(config_path(cli)?)?;
    if cfg.pairs.is_empty() && cfg.lines.is_empty() {
        return Err(CliError::config("truss-det needs `pairs` or `lines`"));
    }
    let mut v = json!({});
    if !cfg.pairs.is_empty() {
        let t = truss_matrix(&cfg.pairs)?;
        if t.rows.nrows() != t.rows.ncols() {
            return Err(CliError::config(format!(
                "{} pairs given, dimension {} needs {}",
                cfg.pairs.len(),
                t.dim,
                t.rows.ncols()
            )));
        }
        let det = t.rows.determinant();
        let threshold = singular_threshold(&t);
        v["dim"] = json!(t.dim);
        v["det"] = json!(det);
        v["threshold"] = json!(threshold);
        v["singular"] = json!(!(det.abs() > threshold));
        if let Some(m) = &cfg.measurements {
            v["solve"] = json!(solve_rigid_from_truss(&cfg.pairs, m)?);
        }
    } else if cfg.measurements.is_some() {
        return Err(CliError::config("`measurements` need `pairs`"));
    }
    if !cfg.lines.is_empty() {
        v["line_function"] = json!(line_function_f(&cfg.lines)?);
    }
    sink.json("truss.json", &v)?;
    Ok(v)
}

fn eval_eh(cli: &Cli, sink: &Sink) -> Result<Value, CliError> {
    let path = config_path(cli)?;
    let cfg: config::EvalConfig = config::load(path)?;
    let c = cfg.tensor.build()?;
    let (field, crack) = cfg.field.build(&c, &base_dir(path))?;
    let e = evaluate_eh_with(&field, &crack, &c, cfg.beta, cfg.policy)?;
    let (strain, length) = unrescaled(&e, field.h, cfg.beta);
    let v = json!({
        "h": field.h,
        "L": field.l,
        "nx": field.nx(),
        "ny": field.ny(),
        "elastic": e.elastic,
        "jump": e.jump,
        "total": e.total,
        "crack_measure": crack.anisotropic_measure(field.h),
        "strain_integral": strain,
        "crack_length": length,
    });
    sink.json("eval.json", &v)?;
    Ok(v)
}

fn solve_2d(cli: &Cli, sink: &Sink) -> Result<Value, CliError> {
    let path = config_path(cli)?;
    let cfg: config::Solve2dConfig = config::load(path)?;
    if !(cfg.threshold > 0.0 && cfg.threshold < 1.0) {
        return Err(CliError::config("threshold must lie in (0, 1)"));
    }
    let c = cfg.tensor.build()?;
    let (target, _) = cfg.target.build(&c, &base_dir(path))?;
    let mut prob = PhaseFieldProblem::new(target, c, cfg.beta, cfg.fidelity);
    if let Some(e) = cfg.epsilon {
        prob.epsilon = e;
    }
    if let Some(k) = cfg.k_eps {
        prob.k_eps = k;
    }
    if let Some(n) = cfg.max_iter {
        prob.max_iter = n;
    }
    if let Some(t) = cfg.rel_tol {
        prob.rel_tol = t;
    }
    if cfg.random_init {
        prob.init = DamageInit::Random { seed: cli.seed };
    }
    let (y, phi, report) = minimize_alternating(&prob)?;
    let energy = at_energy(&prob, &y, &phi)?;
    let crack = extract_crack(&prob.target, &phi, cfg.threshold);

    let mut trace = Table::new(&["iteration", "energy"]);
    for (k, e) in report.energy_trace.iter().enumerate() {
        trace.push(vec![k as f64, *e]);
    }
    sink.grid("y", &Grid::from_field(&y))?;
    sink.grid("phi", &Grid::scalar(&y, &phi.phi))?;
    sink.table("energy_trace", &trace, false)?;
    sink.json("crack.json", &crack)?;
    let v = json!({
        "iterations": report.iterations,
        "converged": report.converged,
        "epsilon": prob.epsilon,
        "bulk": energy.bulk,
        "surface": energy.surface,
        "fidelity": energy.fidelity,
        "total": energy.total,
        "crack_segments": crack.segments.len(),
        "crack_measure": crack.anisotropic_measure(y.h),
        "mean_vertical_position": mean_vertical_position(&crack),
        "min_phi": phi.phi.iter().copied().fold(f64::INFINITY, f64::min),
    });
    sink.json("summary.json", &v)?;
    Ok(v)
}

fn beam(cli: &Cli, sink: &Sink) -> Result<Value, CliError> {
    let cfg: config::BeamConfig = config::load(config_path(cli)?)?;
    let p = &cfg.problem;
    let s = solve_beam(p, cfg.max_jumps)?;
    let e = beam_energy(&s, p)?;
    let mut t = Table::new(&["x", "u", "v"]);
    for k in 0..s.x.len() {
        t.push(vec![s.x[k], s.u[k], s.v[k]]);
    }
    let dx = p.dx();
    let iface = |v: &[usize]| v.iter().map(|&t| (t as f64 + 0.5) * dx).collect::<Vec<_>>();
    let v = json!({
        "jump_count": s.jump_count(),
        "jumps": s.jump_positions(p),
        "jumps_u": iface(&s.j_u),
        "jumps_v": iface(&s.j_v),
        "kinks": s.j_vprime.iter().map(|&k| s.x[k]).collect::<Vec<_>>(),
        "elastic": e.elastic,
        "jump": e.jump,
        "fidelity": e.fidelity,
        "total": e.total,
    });
    sink.table("beam", &t, true)?;
    sink.json("beam.json", &v)?;
    Ok(v)
}

fn sweep(cli: &Cli, sink: &Sink) -> Result<Value, CliError> {
    let cfg: config::SweepConfig = config::load(config_path(cli)?)?;
    let pairs = match cfg.mode {
        SweepMode::Diagonal => {
            if cfg.h.len() != cfg.eta.len() {
                return Err(CliError::config("diagonal sweep needs as many `eta` as `h` values"));
            }
            diagonal(&cfg.h, &cfg.eta)
        }
        SweepMode::Product => product(&cfg.h, &cfg.eta),
    };
    if pairs.is_empty() {
        return Err(CliError::config("empty sweep"));
    }
    let c = cfg.tensor.build()?;
    let rows = gamma_sweep_with(&cfg.limit, &pairs, &c, cfg.beta, cfg.grid.unwrap_or_default())?;
    let mut t = Table::new(&["h", "eta", "e_h", "elastic", "jump", "e0", "gap", "smoothing_error"]);
    for r in &rows {
        t.push(vec![r.h, r.eta, r.e_h, r.elastic, r.jump, r.e0, r.gap, r.smoothing_error]);
    }
    sink.table("sweep", &t, true)?;
    Ok(json!({
        "rows": rows.len(),
        "e0": rows[0].e0,
        "final_gap": rows[rows.len() - 1].gap,
    }))
}

fn compactness(cli: &Cli, sink: &Sink) -> Result<Value, CliError> {
    let path = config_path(cli)?;
    let cfg: config::CompactnessConfig = config::load(path)?;
    let c = match (&cfg.tensor, &cfg.field) {
        (Some(t), _) => t.build()?,
        (None, FieldSpec::Recovery { .. }) => return Err(CliError::config("the recovery preset needs `tensor`")),
        (None, _) => isotropic_tensor(1.0, 0.0)?,
    };
    let (field, crack) = cfg.field.build(&c, &base_dir(path))?;
    let params = CompactnessParams {
        delta: cfg.delta,
        eta: cfg.eta,
        delta0: cfg.delta0,
        korn_c: cfg.korn_c,
        bridge_c: cfg.bridge_c,
    };
    let ex = compactness_extract(&field, &crack, &params)?;
    let f = &ex.fields;

    let mut bounds = vec![0.0];
    bounds.extend(&f.jumps);
    bounds.push(f.l);
    let mut steps = Table::new(&["x_start", "x_end", "a", "b1", "b2"]);
    for (k, r) in f.bar.iter().enumerate() {
        steps.push(vec![bounds[k], bounds[k + 1], r.a, r.b[0], r.b[1]]);
    }
    let mut knots = Table::new(&["x", "a_left", "b1_left", "b2_left", "a_right", "b1_right", "b2_right"]);
    for (k, &x) in f.knots.iter().enumerate() {
        let (l, r) = (f.left[k], f.right[k]);
        knots.push(vec![x, l.a, l.b[0], l.b[1], r.a, r.b[0], r.b[1]]);
    }
    sink.json("partition.json", &ex.partition)?;
    sink.table("steps", &steps, false)?;
    sink.table("fields", &knots, false)?;
    sink.json(
        "certificates.json",
        &json!({ "bridges": ex.bridges, "jumps": f.jumps, "m_cert": f.m_cert }),
    )?;
    sink.grid("residual", &Grid::from_field(&ex.residual))?;
    let bridged = ex
        .bridges
        .iter()
        .filter(|b| matches!(b.verdict, thinbeam::compactness::Verdict::Bridged(_)))
        .count();
    let v = json!({
        "rectangles": ex.partition.rects.len(),
        "bad": ex.partition.bad_count(),
        "runs": ex.bridges.len(),
        "bridged": bridged,
        "jumps": f.jump_count(),
        "m_cert": f.m_cert,
        "omega_area": ex.omega_area,
        "omega_perimeter": ex.omega_perimeter,
        "max_residual_off_omega": ex.max_residual_off_omega(),
        "residual_l2_off_omega": ex.residual_l2_off_omega(),
    });
    sink.json("summary.json", &v)?;
    Ok(v)
}

fn checks(cli: &Cli, sink: &Sink) -> Result<u8, CliError> {
    let results = run_all(cli.seed);
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} passed, {} failed (seed {})", results.len() - failed, failed, cli.seed);
    sink.json("checks.json", &json!({ "seed": cli.seed, "results": results }))?;
    Ok(if failed == 0 { 0 } else { 1 })
}
