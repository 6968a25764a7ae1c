//! No-arbitrage diagnostics: pointwise drift-condition residuals and Monte
//! Carlo martingale tests of discounted prices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{DiffusionSpec, Simulator};
use crate::error::{Error, Result};
use crate::linalg::{hermite_eval, Vector};
use crate::market::{EnergyModel, ForwardCurveModel, RateModel};
use crate::rates::{assemble_drift_diffusion, assemble_drift_diffusion_unchecked};

/// Relative floor on the standard error so deterministic cases give finite `z`.
pub const SE_FLOOR: f64 = 1e-6;

/// Absolute part of the floor, for contracts priced at zero.
const SE_FLOOR_ABS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub x: f64,
    pub y: Vec<f64>,
    pub z: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSample {
    pub x: f64,
    pub regime: usize,
    pub y: Vec<f64>,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub sup_residual: f64,
    pub samples: Vec<ResidualSample>,
}

impl ResidualReport {
    fn from_samples(samples: Vec<ResidualSample>) -> Self {
        let sup_residual = samples.iter().map(|s| s.residual.abs()).fold(0.0, f64::max);
        ResidualReport { sup_residual, samples }
    }
}

/// Random probes: regimes cycled in order, `x` uniform on `[0, x_max]`, `y_i`
/// uniform on `[-1, 1]` or on `[0, 1]` where `nonneg[i]` is set. Probes failing
/// `accept` are redrawn.
pub fn generate_probes<F>(
    n_probes: usize,
    n: usize,
    nonneg: &[bool],
    x_max: f64,
    seed: u64,
    accept: F,
) -> Result<Vec<Probe>>
where
    F: Fn(&Probe) -> bool,
{
    if n == 0 || nonneg.is_empty() {
        return Err(Error::Dimension("probes need n >= 1 and d >= 1".into()));
    }
    if !(x_max >= 0.0) {
        return Err(Error::Domain(format!("probe x range [0, {x_max}] is empty")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_probes);
    let mut attempts = 0usize;
    while out.len() < n_probes {
        attempts += 1;
        if attempts > 1000 * (n_probes + 1) {
            return Err(Error::Domain("could not draw admissible probes".into()));
        }
        let probe = Probe {
            x: rng.random_range(0.0..=x_max),
            y: nonneg
                .iter()
                .map(|&pos| if pos { rng.random_range(0.0..=1.0) } else { rng.random_range(-1.0..=1.0) })
                .collect(),
            z: out.len() % n,
        };
        if accept(&probe) {
            out.push(probe);
        }
    }
    Ok(out)
}

/// Probes for a rate model: factors with a linear diffusion loading are kept
/// nonnegative and `a(y, z)` must be positive semidefinite.
pub fn rate_probes(model: &RateModel, n_probes: usize, x_max: f64, seed: u64) -> Result<Vec<Probe>> {
    let nonneg: Vec<bool> = model.params.a_lin.iter().map(|a| a.iter().any(|&v| v != 0.0)).collect();
    generate_probes(n_probes, model.n(), &nonneg, x_max, seed, |p| {
        assemble_drift_diffusion(&Vector::from_column_slice(&p.y), p.z, &model.params).is_ok()
    })
}

fn check_probe(p: &Probe, d: usize, n: usize) -> Result<Vector> {
    if p.y.len() != d || p.z >= n {
        return Err(Error::Dimension(format!("probe (y of length {}, regime {}) does not fit d = {d}, n = {n}", p.y.len(), p.z)));
    }
    Ok(Vector::from_column_slice(&p.y))
}

/// Residual of `<u_z, b> = c_z' + <u_z', y> + r (<u_z, y> + c_z) - sum_j (<u_j - u_z, y> + c_j - c_z) q_zj`.
pub fn energy_drift_residual(model: &EnergyModel, probes: &[Probe]) -> Result<ResidualReport> {
    let (d, n) = (model.d(), model.n());
    let q = model.params.q.matrix();
    let r = model.params.r;
    let samples = probes
        .iter()
        .map(|p| {
            let y = check_probe(p, d, n)?;
            let z = p.z;
            let (u, c, du, dc) = model.curves_at(p.x)?;
            let uz = u.column(z);
            let lhs = uz.dot(&model.params.drift(&y, z));
            let level = |j: usize| u.column(j).dot(&y) + c[j];
            let jumps: f64 = (0..n).filter(|&j| j != z).map(|j| (level(j) - level(z)) * q[(z, j)]).sum();
            let rhs = dc[z] + du.column(z).dot(&y) + r * level(z) - jumps;
            Ok(ResidualSample { x: p.x, regime: z, y: p.y.clone(), lhs, rhs, residual: lhs - rhs })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResidualReport::from_samples(samples))
}

/// Residual of `<u, b> = c_z' + <u', y> + <u, a v> - sum_j (c_j - c_z) exp(W_z - W_j) q_zj`
/// with `v = int_0^x u` and `W_j = int_0^x c(s, e_j) ds`.
pub fn rate_drift_residual(model: &RateModel, probes: &[Probe]) -> Result<ResidualReport> {
    let (d, n) = (model.d(), model.n());
    let q = model.params.q.matrix();
    let samples = probes
        .iter()
        .map(|p| {
            let y = check_probe(p, d, n)?;
            let z = p.z;
            let (u, c, du, dc) = model.curves_at(p.x)?;
            let v = hermite_eval(&model.curves.grid, &model.curves.v, &model.curves.u, p.x)?;
            let w: Vec<f64> = (0..n).map(|j| model.integrate_c(0.0, p.x, j)).collect::<Result<_>>()?;
            let (b, a) = assemble_drift_diffusion_unchecked(&y, z, &model.params)?;
            let lhs = u.dot(&b);
            let jumps: f64 = (0..n)
                .filter(|&j| j != z)
                .map(|j| (c[j] - c[z]) * (w[z] - w[j]).exp() * q[(z, j)])
                .sum();
            let rhs = dc[z] + du.dot(&y) + u.dot(&(&a * &v)) - jumps;
            Ok(ResidualSample { x: p.x, regime: z, y: p.y.clone(), lhs, rhs, residual: lhs - rhs })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResidualReport::from_samples(samples))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Contract {
    /// Delivery over `[t1, t2]` in calendar time.
    Futures { t1: f64, t2: f64 },
    Bond { maturity: f64 },
}

impl Contract {
    pub fn id(&self) -> String {
        match self {
            Contract::Futures { t1, t2 } => format!("futures[{t1},{t2}]"),
            Contract::Bond { maturity } => format!("bond[{maturity}]"),
        }
    }

    fn first_maturity(&self) -> f64 {
        match *self {
            Contract::Futures { t1, .. } => t1,
            Contract::Bond { maturity } => maturity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointStat {
    pub t: f64,
    pub contract: String,
    pub mean_discounted: f64,
    pub std_error: f64,
    pub reference: f64,
    pub z_stat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub checkpoints: Vec<CheckpointStat>,
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
}

impl MartingaleReport {
    pub fn max_abs_z(&self) -> f64 {
        self.checkpoints.iter().map(|c| c.z_stat.abs()).fold(0.0, f64::max)
    }
}

/// Price of one contract at one checkpoint as `exp(sign * (ic[z] + <iu[z], y>)) ` or a scaled average.
struct Pricer {
    step: usize,
    ic: Vec<f64>,
    iu: Vec<Vector>,
    /// Futures: `1/(x2 - x1)`; bonds: use `exp(-integral)`.
    futures_scale: Option<f64>,
}

impl Pricer {
    fn price(&self, y: &[f64], z: usize) -> f64 {
        let integral = self.ic[z] + self.iu[z].iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
        match self.futures_scale {
            Some(s) => integral * s,
            None => (-integral).exp(),
        }
    }
}

fn checkpoint_step(t: f64, dt: f64) -> Result<usize> {
    let k = (t / dt).round();
    if t < 0.0 || (k * dt - t).abs() > 1e-9 {
        return Err(Error::Domain(format!("checkpoint {t} is not on the dt = {dt} grid")));
    }
    Ok(k as usize)
}

fn build_pricer(model: &ForwardCurveModel, contract: &Contract, t: f64, step: usize) -> Result<Pricer> {
    let n = model.n();
    match (model, *contract) {
        (ForwardCurveModel::Energy(m), Contract::Futures { t1, t2 }) => {
            if !(t1 < t2) {
                return Err(Error::DegenerateInterval { x1: t1, x2: t2 });
            }
            let (x1, x2) = (t1 - t, t2 - t);
            Ok(Pricer {
                step,
                ic: (0..n).map(|z| m.integrate_c(x1, x2, z)).collect::<Result<_>>()?,
                iu: (0..n).map(|z| m.integrate_u(x1, x2, z)).collect::<Result<_>>()?,
                futures_scale: Some(1.0 / (x2 - x1)),
            })
        }
        (ForwardCurveModel::Rates(m), Contract::Bond { maturity }) => {
            let tau = maturity - t;
            let iu = m.integrate_u(0.0, tau)?;
            Ok(Pricer {
                step,
                ic: (0..n).map(|z| m.integrate_c(0.0, tau, z)).collect::<Result<_>>()?,
                iu: vec![iu; n],
                futures_scale: None,
            })
        }
        _ => Err(Error::Domain(format!("contract {} does not belong to this market", contract.id()))),
    }
}

fn mean_se(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (count, sum) = xs.clone().fold((0usize, 0.0), |(c, s), x| (c + 1, s + x));
    let n = count as f64;
    let mean = sum / n;
    if count < 2 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Mean of discounted prices at each checkpoint against the time-0 price.
///
/// Energy prices are discounted with `exp(-r t)`, bonds with
/// `exp(-sum_k r(t_k) dt)` along the path. The standard error is floored at
/// `SE_FLOOR * |reference|`.
pub fn martingale_test(
    model: &ForwardCurveModel,
    spec: &DiffusionSpec,
    contracts: &[Contract],
    checkpoints: &[f64],
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<MartingaleReport> {
    if contracts.is_empty() || checkpoints.is_empty() || n_paths == 0 {
        return Err(Error::Domain("need at least one contract, checkpoint and path".into()));
    }
    let horizon = checkpoints.iter().copied().fold(0.0, f64::max);
    for c in contracts {
        if checkpoints.iter().any(|&t| t > c.first_maturity()) {
            return Err(Error::Domain(format!("checkpoints must not exceed the maturity of {}", c.id())));
        }
    }
    let q = match model {
        ForwardCurveModel::Energy(m) => m.params.q.clone(),
        ForwardCurveModel::Rates(m) => m.params.q.clone(),
    };
    let sim = Simulator::new(spec, &q, dt, horizon, seed)?;
    let y0 = spec.y0.clone();

    let mut pricers = Vec::new();
    let mut references = Vec::new();
    for &t in checkpoints {
        let step = checkpoint_step(t, dt)?;
        for c in contracts {
            let pricer = build_pricer(model, c, t, step)?;
            references.push(build_pricer(model, c, 0.0, 0)?.price(y0.as_slice(), spec.z0));
            pricers.push(pricer);
        }
    }

    let energy_r = match model {
        ForwardCurveModel::Energy(m) => Some(m.params.r),
        ForwardCurveModel::Rates(_) => None,
    };
    let (c0, u0) = match model {
        ForwardCurveModel::Rates(m) => (m.params.c0.clone(), m.params.u0.clone()),
        ForwardCurveModel::Energy(_) => (Vector::zeros(0), Vector::zeros(0)),
    };

    let per_path: Vec<Result<Vec<f64>>> = (0..n_paths)
        .into_par_iter()
        .map(|path| {
            let mut out = vec![0.0; pricers.len()];
            let mut short_integral = 0.0f64;
            sim.run_path(path, |k, t, y, z| {
                let discount = match energy_r {
                    Some(r) => (-r * t).exp(),
                    None => (-short_integral).exp(),
                };
                for (slot, pricer) in out.iter_mut().zip(&pricers) {
                    if pricer.step == k {
                        *slot = discount * pricer.price(y, z);
                    }
                }
                if energy_r.is_none() {
                    let r = c0[z] + u0.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
                    short_integral += r * dt;
                }
            })?;
            Ok(out)
        })
        .collect();
    let per_path: Vec<Vec<f64>> = per_path.into_iter().collect::<Result<_>>()?;

    let mut stats = Vec::with_capacity(pricers.len());
    let mut idx = 0;
    for &t in checkpoints {
        for c in contracts {
            let (mean, se) = mean_se(per_path.iter().map(|v| v[idx]));
            let reference = references[idx];
            let floor = SE_FLOOR * reference.abs() + SE_FLOOR_ABS;
            let se_eff = (se * se + floor * floor).sqrt();
            stats.push(CheckpointStat {
                t,
                contract: c.id(),
                mean_discounted: mean,
                std_error: se_eff,
                reference,
                z_stat: (mean - reference) / se_eff,
            });
            idx += 1;
        }
    }
    Ok(MartingaleReport { checkpoints: stats, n_paths, dt, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{DriftSpec, VolSpec};
    use crate::energy::EnergyCurveParams;
    use crate::linalg::{uniform_grid, Matrix};
    use crate::presets;
    use crate::rates::RateCurveParams;
    use crate::regime::GeneratorMatrix;

    fn grid() -> Vec<f64> {
        uniform_grid(10.0, 1e-3).unwrap()
    }

    fn energy_probes(n: usize) -> Vec<Probe> {
        generate_probes(200, n, &[true, true], 5.0, 17, |_| true).unwrap()
    }

    #[test]
    fn probes_cycle_regimes_and_respect_bounds() {
        let probes = generate_probes(10, 3, &[true, false], 2.0, 1, |_| true).unwrap();
        for (k, p) in probes.iter().enumerate() {
            assert_eq!(p.z, k % 3);
            assert!((0.0..=2.0).contains(&p.x));
            assert!((0.0..=1.0).contains(&p.y[0]));
            assert!((-1.0..=1.0).contains(&p.y[1]));
        }
        assert_eq!(probes, generate_probes(10, 3, &[true, false], 2.0, 1, |_| true).unwrap());
        assert!(generate_probes(3, 1, &[false], 1.0, 1, |_| false).is_err());
    }

    #[test]
    fn energy_residual_vanishes_for_constructed_model() {
        let m = EnergyModel::build(presets::energy_two_regime(), &grid()).unwrap();
        let rep = energy_drift_residual(&m, &energy_probes(2)).unwrap();
        assert_eq!(rep.samples.len(), 200);
        assert!(rep.sup_residual <= 1e-6, "{}", rep.sup_residual);
    }

    #[test]
    fn energy_residual_detects_wrong_discount_rate() {
        let mut m = EnergyModel::build(presets::energy_two_regime(), &grid()).unwrap();
        m.params.r += 0.05;
        let rep = energy_drift_residual(&m, &energy_probes(2)).unwrap();
        let inf_c = m.curves.c.iter().flat_map(|c| c.iter().copied()).fold(f64::INFINITY, f64::min);
        assert!(rep.sup_residual >= 0.04 * inf_c, "{} vs {}", rep.sup_residual, inf_c);
        assert!(rep.sup_residual >= 1e-3);
    }

    #[test]
    fn zero_energy_model_has_zero_residual() {
        let params = EnergyCurveParams {
            r: 0.1,
            q: presets::two_regime_generator(),
            beta0: vec![Vector::zeros(1); 2],
            beta_lin: vec![vec![Vector::zeros(1)]; 2],
            u0: Matrix::zeros(1, 2),
            c0: Vector::zeros(2),
        };
        let m = EnergyModel::build(params, &grid()).unwrap();
        let probes = generate_probes(50, 2, &[false], 10.0, 3, |_| true).unwrap();
        assert_eq!(energy_drift_residual(&m, &probes).unwrap().sup_residual, 0.0);
    }

    #[test]
    fn rate_residual_vanishes_for_constructed_model() {
        let m = RateModel::build(presets::rates_two_regime(), &grid()).unwrap();
        let probes = rate_probes(&m, 200, 5.0, 23).unwrap();
        let rep = rate_drift_residual(&m, &probes).unwrap();
        assert!(rep.sup_residual <= 1e-5, "{}", rep.sup_residual);
    }

    #[test]
    fn rate_residual_detects_shifted_regime_curve() {
        let mut m = RateModel::build(presets::rates_two_regime(), &grid()).unwrap();
        for c in m.curves.c.iter_mut() {
            c[1] += 0.01;
        }
        let probes = rate_probes(&m, 200, 5.0, 23).unwrap();
        let rep = rate_drift_residual(&m, &probes).unwrap();
        let min_regime0 = rep
            .samples
            .iter()
            .filter(|s| s.regime == 0)
            .map(|s| s.residual.abs())
            .fold(f64::INFINITY, f64::min);
        assert!(min_regime0 > 1e-3, "{min_regime0}");
    }

    #[test]
    fn classical_one_factor_check() {
        let params = RateCurveParams {
            q: GeneratorMatrix::zeros(1),
            u0: Vector::from_element(1, 1.0),
            c0: Vector::from_element(1, 0.03),
            beta_lin: vec![Vector::from_element(1, -0.7)],
            a_lin: vec![Matrix::zeros(1, 1)],
            beta0: vec![Vector::from_element(1, 0.02)],
            a0: vec![Matrix::from_element(1, 1, 0.01)],
            lambda_terms: vec![],
        };
        let m = RateModel::build(params, &grid()).unwrap();
        let probes = generate_probes(200, 1, &[false], 5.0, 5, |_| true).unwrap();
        let rep = rate_drift_residual(&m, &probes).unwrap();
        assert!(rep.sup_residual <= 1e-8, "{}", rep.sup_residual);
    }

    #[test]
    fn deterministic_energy_martingale_is_exact() {
        // constant drift, no noise, one regime: Euler is exact for y
        let params = EnergyCurveParams {
            r: 0.05,
            q: GeneratorMatrix::zeros(1),
            beta0: vec![Vector::from_element(1, 0.3)],
            beta_lin: vec![vec![Vector::zeros(1)]],
            u0: Matrix::from_element(1, 1, 0.8),
            c0: Vector::from_element(1, 1.2),
        };
        let spec = DiffusionSpec {
            drift: DriftSpec::Affine { beta0: params.beta0.clone(), beta_lin: params.beta_lin.clone() },
            vol: VolSpec::Matrix(vec![Matrix::zeros(1, 1)]),
            y0: Vector::from_element(1, 0.4),
            z0: 0,
        };
        let model = ForwardCurveModel::Energy(EnergyModel::build(params, &grid()).unwrap());
        let rep = martingale_test(&model, &spec, &[Contract::Futures { t1: 2.0, t2: 3.0 }], &[0.5, 1.0], 16, 1e-3, 1).unwrap();
        for c in &rep.checkpoints {
            assert!((c.mean_discounted - c.reference).abs() <= 1e-6, "{c:?}");
            assert!(c.z_stat.abs() < 4.0);
        }
    }

    #[test]
    fn energy_martingale_small_sample() {
        let model = ForwardCurveModel::Energy(EnergyModel::build(presets::energy_two_regime(), &grid()).unwrap());
        let spec = presets::energy_two_regime_diffusion();
        let rep = martingale_test(&model, &spec, &[Contract::Futures { t1: 2.0, t2: 3.0 }], &[0.5, 1.0], 10_000, 1e-3, 42).unwrap();
        assert_eq!(rep.checkpoints.len(), 2);
        assert!(rep.max_abs_z() <= 4.0, "{rep:?}");
    }

    #[test]
    fn martingale_input_errors() {
        let model = ForwardCurveModel::Energy(EnergyModel::build(presets::energy_two_regime(), &grid()).unwrap());
        let spec = presets::energy_two_regime_diffusion();
        let fut = [Contract::Futures { t1: 2.0, t2: 3.0 }];
        assert!(martingale_test(&model, &spec, &[Contract::Bond { maturity: 3.0 }], &[0.5], 10, 1e-3, 0).is_err());
        assert!(martingale_test(&model, &spec, &fut, &[2.5], 10, 1e-3, 0).is_err());
        assert!(martingale_test(&model, &spec, &fut, &[0.5], 0, 1e-3, 0).is_err());
        assert!(martingale_test(&model, &spec, &fut, &[0.5005], 10, 1e-2, 0).is_err());
    }

    #[test]
    fn martingale_is_reproducible() {
        let model = ForwardCurveModel::Rates(RateModel::build(presets::rates_two_regime(), &grid()).unwrap());
        let spec = presets::rates_two_regime_diffusion();
        let run = || martingale_test(&model, &spec, &[Contract::Bond { maturity: 3.0 }], &[0.5, 1.0], 2000, 1e-3, 9).unwrap();
        assert_eq!(run(), run());
    }
}
