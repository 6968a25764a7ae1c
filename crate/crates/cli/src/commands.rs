use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::Subcommand;
use regime_hjm::config::{Market, ModelConfig};
use regime_hjm::dynamics::{simulate_paths, step_count, Simulator};
use regime_hjm::linalg::uniform_grid;
use regime_hjm::market::{EnergyModel, ForwardCurveModel, RateModel};
use regime_hjm::noarb::{
    energy_drift_residual, generate_probes, martingale_test, rate_drift_residual, rate_probes, MartingaleReport,
    ResidualReport,
};
use regime_hjm::rates::{check_lambda_consistency, LambdaTerm};
use regime_hjm::regime::GeneratorMatrix;
use regime_hjm::{Error, Vector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::table::{num, CsvOut};

pub const CURVES_FILE: &str = "curves.csv";
pub const PATHS_FILE: &str = "paths.csv";
pub const SURFACE_FILE: &str = "surface.csv";
pub const REPORT_FILE: &str = "verify-report.json";

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Action {
    /// Solve the curve system and write curves.csv.
    Build,
    /// Simulate factor and regime paths.
    Simulate {
        /// Output file name inside the output directory.
        #[arg(long)]
        paths_out: Option<PathBuf>,
    },
    /// Check the drift condition and run the martingale tests.
    Verify {
        /// Curves CSV (same layout as curves.csv) replacing the solved u and c values.
        #[arg(long)]
        override_curves: Option<PathBuf>,
    },
    /// Forward curves along simulated path 0 at the given times.
    Surface {
        #[arg(long, value_delimiter = ',', required = true)]
        times: Vec<f64>,
    },
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::Build => "build",
            Action::Simulate { .. } => "simulate",
            Action::Verify { .. } => "verify",
            Action::Surface { .. } => "surface",
        }
    }
}

/// Accuracy figure recorded for one pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub stage: String,
    pub metric: String,
    pub value: f64,
    #[serde(default)]
    pub tolerance: Option<f64>,
}

impl Stage {
    fn new(stage: &str, metric: &str, value: f64, tolerance: Option<f64>) -> Self {
        Stage { stage: stage.into(), metric: metric.into(), value, tolerance }
    }
}

/// Files written by a run plus what the manifest should record about it.
#[derive(Debug, Default)]
pub struct Outcome {
    pub outputs: Vec<PathBuf>,
    pub stages: Vec<Stage>,
    /// Set when outputs were written but a verification threshold was missed.
    pub failure: Option<CliError>,
}

pub fn run(action: &Action, cfg: &ModelConfig, out: &Path) -> CliResult<Outcome> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    match action {
        Action::Build => build(cfg, out),
        Action::Simulate { paths_out } => simulate(cfg, out, paths_out.as_deref()),
        Action::Verify { override_curves } => verify(cfg, out, override_curves.as_deref()),
        Action::Surface { times } => surface(cfg, out, times),
    }
}

fn generator(cfg: &ModelConfig) -> CliResult<GeneratorMatrix> {
    Ok(match cfg.market {
        Market::Energy => cfg.energy_params()?.q,
        Market::Rates => cfg.rate_params()?.q,
    })
}

fn build(cfg: &ModelConfig, out: &Path) -> CliResult<Outcome> {
    let model = cfg.build_model()?;
    let path = out.join(CURVES_FILE);
    write_curves(&model, &path)?;
    Ok(Outcome { outputs: vec![path], stages: build_stages(cfg, &model)?, failure: None })
}

/// Largest gap between nodal values at step `h` and at step `2h`.
fn step_halving_gap(cfg: &ModelConfig, model: &ForwardCurveModel) -> CliResult<Option<f64>> {
    let Ok(coarse_grid) = uniform_grid(cfg.grid.x_max, 2.0 * cfg.grid.x_step) else {
        return Ok(None);
    };
    let gap = |a: f64, b: f64| (a - b).abs();
    let mut sup: f64 = 0.0;
    match model {
        ForwardCurveModel::Energy(fine) => {
            let coarse = EnergyModel::build(fine.params.clone(), &coarse_grid)?;
            for (j, (u, c)) in coarse.curves.u.iter().zip(&coarse.curves.c).enumerate() {
                let (uf, cf) = (&fine.curves.u[2 * j], &fine.curves.c[2 * j]);
                sup = u.iter().zip(uf.iter()).chain(c.iter().zip(cf.iter())).map(|(&a, &b)| gap(a, b)).fold(sup, f64::max);
            }
        }
        ForwardCurveModel::Rates(fine) => {
            let coarse = RateModel::build(fine.params.clone(), &coarse_grid)?;
            for (j, (u, c)) in coarse.curves.u.iter().zip(&coarse.curves.c).enumerate() {
                let (uf, cf) = (&fine.curves.u[2 * j], &fine.curves.c[2 * j]);
                sup = u.iter().zip(uf.iter()).chain(c.iter().zip(cf.iter())).map(|(&a, &b)| gap(a, b)).fold(sup, f64::max);
            }
        }
    }
    Ok(Some(sup))
}

fn build_stages(cfg: &ModelConfig, model: &ForwardCurveModel) -> CliResult<Vec<Stage>> {
    let mut stages = Vec::new();
    if let Some(gap) = step_halving_gap(cfg, model)? {
        // RK4 error at step h is about gap / 15
        stages.push(Stage::new("curves", "rk4_error_estimate", gap / 15.0, None));
    }
    if let ForwardCurveModel::Rates(m) = model {
        let wmin = m.curves.wtilde.iter().flat_map(|w| w.iter().copied()).fold(f64::INFINITY, f64::min);
        stages.push(Stage::new("wtilde", "min_value", wmin, Some(0.0)));
        if !m.params.lambda_terms.is_empty() {
            let terms: &[LambdaTerm] = &m.params.lambda_terms;
            let sup = check_lambda_consistency(&m.curves.v, terms).into_iter().fold(0.0, f64::max);
            stages.push(Stage::new("lambda_terms", "sup_residual", sup, Some(regime_hjm::rates::lambda_tolerance(&m.curves.v))));
        }
    }
    Ok(stages)
}

fn curve_header(d: usize) -> Vec<String> {
    let mut header = vec!["x".to_string(), "regime".to_string()];
    header.extend((1..=d).map(|i| format!("u_{i}")));
    header.push("c".into());
    header
}

fn write_curves(model: &ForwardCurveModel, path: &Path) -> CliResult<()> {
    let (n, d) = (model.n(), model.d());
    let mut w = CsvOut::create(path)?;
    w.row(curve_header(d))?;
    for z in 0..n {
        for (i, &x) in model.grid().iter().enumerate() {
            let (u, c): (Vec<f64>, f64) = match model {
                ForwardCurveModel::Energy(m) => (m.curves.u[i].column(z).iter().copied().collect(), m.curves.c[i][z]),
                ForwardCurveModel::Rates(m) => (m.curves.u[i].iter().copied().collect(), m.curves.c[i][z]),
            };
            let mut rec = vec![num(x), z.to_string()];
            rec.extend(u.into_iter().map(num));
            rec.push(num(c));
            w.row(rec)?;
        }
    }
    w.finish()
}

/// Replaces the solved `u` and `c` nodal values; stored derivatives are kept.
pub fn apply_curve_override(model: &mut ForwardCurveModel, path: &Path) -> CliResult<()> {
    let (n, d) = (model.n(), model.d());
    let invalid = |msg: String| CliError::Invalid(format!("{}: {msg}", path.display()));
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let header: Vec<String> = reader.headers().map_err(|e| invalid(e.to_string()))?.iter().map(str::to_string).collect();
    if header != curve_header(d) {
        return Err(invalid(format!("expected header {}", curve_header(d).join(","))));
    }
    let grid = model.grid().to_vec();
    let mut seen = vec![false; n * grid.len()];
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| invalid(e.to_string()))?;
        let field = |k: usize| -> CliResult<f64> {
            rec[k].trim().parse::<f64>().map_err(|_| invalid(format!("row {}: bad number {:?}", line + 1, &rec[k])))
        };
        let x = field(0)?;
        let z: usize = rec[1].trim().parse().map_err(|_| invalid(format!("row {}: bad regime {:?}", line + 1, &rec[1])))?;
        let i = grid.partition_point(|&g| g < x - 1e-9);
        if z >= n || i >= grid.len() || (grid[i] - x).abs() > 1e-9 {
            return Err(invalid(format!("row {}: (x = {x}, regime {z}) is not a grid node", line + 1)));
        }
        let u: Vec<f64> = (0..d).map(|k| field(2 + k)).collect::<CliResult<_>>()?;
        let c = field(2 + d)?;
        if u.iter().chain([&c]).any(|v| !v.is_finite()) {
            return Err(invalid(format!("row {}: non-finite value", line + 1)));
        }
        match model {
            ForwardCurveModel::Energy(m) => {
                m.curves.u[i].column_mut(z).copy_from_slice(&u);
                m.curves.c[i][z] = c;
            }
            ForwardCurveModel::Rates(m) => {
                if z > 0 && m.curves.u[i].as_slice() != u.as_slice() {
                    return Err(invalid(format!("row {}: u differs between regimes at x = {x}", line + 1)));
                }
                m.curves.u[i].copy_from_slice(&u);
                m.curves.c[i][z] = c;
            }
        }
        seen[z * grid.len() + i] = true;
    }
    if let Some(k) = seen.iter().position(|&s| !s) {
        return Err(invalid(format!("missing row for x = {}, regime {}", grid[k % grid.len()], k / grid.len())));
    }
    Ok(())
}

fn simulate(cfg: &ModelConfig, out: &Path, paths_out: Option<&Path>) -> CliResult<Outcome> {
    let spec = cfg.diffusion_spec()?;
    let q = generator(cfg)?;
    let sim = &cfg.sim;
    let paths = simulate_paths(&spec, &q, sim.dt, sim.horizon, sim.n_paths, sim.seed)?;
    let path = out.join(paths_out.unwrap_or(Path::new(PATHS_FILE)));
    let mut w = CsvOut::create(&path)?;
    let mut header = vec!["path_id".to_string(), "t".to_string(), "z".to_string()];
    header.extend((1..=spec.d()).map(|i| format!("y_{i}")));
    w.row(header)?;
    for (p, sample) in paths.iter().enumerate() {
        for ((t, y), z) in sample.times.iter().zip(&sample.y).zip(&sample.z) {
            let mut rec = vec![p.to_string(), num(*t), z.to_string()];
            rec.extend(y.iter().map(|&v| num(v)));
            w.row(rec)?;
        }
    }
    w.finish()?;
    let steps = step_count(sim.dt, sim.horizon)?;
    Ok(Outcome {
        outputs: vec![path],
        stages: vec![Stage::new("simulation", "steps_per_path", steps as f64, None)],
        failure: None,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualSection {
    pub tolerance: f64,
    pub passed: bool,
    pub report: ResidualReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MartingaleSection {
    pub z_max: f64,
    pub max_abs_z: f64,
    pub passed: bool,
    pub report: MartingaleReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub market: Market,
    pub passed: bool,
    pub residual: ResidualSection,
    pub martingale: MartingaleSection,
}

fn verify(cfg: &ModelConfig, out: &Path, override_curves: Option<&Path>) -> CliResult<Outcome> {
    let mut model = cfg.build_model()?;
    if let Some(p) = override_curves {
        apply_curve_override(&mut model, p)?;
    }
    let spec = cfg.diffusion_spec()?;
    let v = &cfg.verify;
    let residual = match &model {
        ForwardCurveModel::Energy(m) => {
            let probes = generate_probes(v.n_probes, m.n(), &spec.sqrt_mask(), v.probe_x_max, v.probe_seed, |_| true)?;
            energy_drift_residual(m, &probes)?
        }
        ForwardCurveModel::Rates(m) => {
            let probes = rate_probes(m, v.n_probes, v.probe_x_max, v.probe_seed)?;
            rate_drift_residual(m, &probes)?
        }
    };
    let tol = cfg.residual_tol();
    let mc = martingale_test(&model, &spec, &cfg.contracts(), &v.checkpoints, v.mc_paths, cfg.sim.dt, cfg.sim.seed)?;
    let max_abs_z = mc.max_abs_z();
    let residual = ResidualSection { tolerance: tol, passed: residual.sup_residual <= tol, report: residual };
    let martingale = MartingaleSection { z_max: v.z_max, max_abs_z, passed: max_abs_z <= v.z_max, report: mc };
    let report = VerifyReport {
        market: cfg.market,
        passed: residual.passed && martingale.passed,
        residual,
        martingale,
    };
    let path = out.join(REPORT_FILE);
    let text = serde_json::to_string_pretty(&report)?;
    std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;

    let stages = vec![
        Stage::new("drift_condition", "sup_residual", report.residual.report.sup_residual, Some(tol)),
        Stage::new("martingale", "max_abs_z", max_abs_z, Some(v.z_max)),
    ];
    let mut failures = Vec::new();
    if !report.residual.passed {
        failures.push(format!("sup residual {:e} exceeds {tol:e}", report.residual.report.sup_residual));
    }
    if !report.martingale.passed {
        failures.push(format!("max |z| = {max_abs_z:.3} exceeds {}", v.z_max));
    }
    let failure = (!failures.is_empty()).then(|| CliError::Verification(failures.join("; ")));
    Ok(Outcome { outputs: vec![path], stages, failure })
}

/// Step index of `t` on the simulation grid.
fn time_index(t: f64, dt: f64, horizon: f64) -> CliResult<usize> {
    const TOL: f64 = 1e-9;
    if !t.is_finite() || t < -TOL || t > horizon + TOL {
        return Err(Error::Range(format!("time {t} is outside [0, {horizon}]")).into());
    }
    let k = (t / dt).round();
    if (k * dt - t).abs() > TOL * t.max(1.0) {
        return Err(Error::Range(format!("time {t} is not a multiple of dt = {dt}")).into());
    }
    Ok(k as usize)
}

fn surface(cfg: &ModelConfig, out: &Path, times: &[f64]) -> CliResult<Outcome> {
    let sim_cfg = &cfg.sim;
    let steps: Vec<usize> = times.iter().map(|&t| time_index(t, sim_cfg.dt, sim_cfg.horizon)).collect::<CliResult<_>>()?;
    let model = cfg.build_model()?;
    let spec = cfg.diffusion_spec()?;
    let sim = Simulator::new(&spec, &generator(cfg)?, sim_cfg.dt, sim_cfg.horizon, sim_cfg.seed)?;
    let mut states: Vec<Option<(Vector, usize)>> = vec![None; sim.steps() + 1];
    sim.run_path(0, |k, _, y, z| {
        if steps.contains(&k) {
            states[k] = Some((Vector::from_column_slice(y), z));
        }
    })?;
    let path = out.join(SURFACE_FILE);
    let mut w = CsvOut::create(&path)?;
    w.row(vec!["t".into(), "x".into(), "f".into()])?;
    for &k in &steps {
        let (y, z) = states[k].as_ref().expect("visited every step");
        let t = num(sim.time(k));
        for &x in model.grid() {
            w.row(vec![t.clone(), num(x), num(model.forward_rate(x, y, *z)?)])?;
        }
    }
    w.finish()?;
    Ok(Outcome { outputs: vec![path], stages: Vec::new(), failure: None })
}
