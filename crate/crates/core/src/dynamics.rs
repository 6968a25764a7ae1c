//! Euler–Maruyama simulation of the factor process `Y` driven by the regime chain `Z`.
//!
//! The regime path is sampled exactly first; `Y` is then stepped on a uniform
//! grid with the regime frozen at its value at the start of each step.
//! Square-root loadings use full truncation: both drift and volatility see
//! `max(y_i, 0)` in every factor that enters under a square root.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{check_finite_matrix, check_finite_vector, Matrix, Vector};
use crate::rates::{assemble_drift_diffusion_unchecked, RateCurveParams};
use crate::regime::{sample_regime_path, GeneratorMatrix, RegimePath};

/// Tolerance for `horizon` being a whole number of steps.
const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum DriftSpec {
    /// `b(y, e_z) = beta0[z] + sum_i beta_lin[z][i] y_i`.
    Affine { beta0: Vec<Vector>, beta_lin: Vec<Vec<Vector>> },
    /// Drift of a rate model, including its lambda corrections.
    RateModel(Box<RateCurveParams>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum VolSpec {
    /// Constant `sigma(e_z)`.
    Matrix(Vec<Matrix>),
    /// `sigma(y, e_z) = sigma0[z] + sum_i sigma_lin[z][i] sqrt(max(y_i, 0))`.
    AffineSqrt { sigma0: Vec<Matrix>, sigma_lin: Vec<Vec<Matrix>> },
    /// Symmetric square root of the rate model's `a(y, z)`; negative
    /// eigenvalues are clipped to zero.
    DiffusionRoot(Box<RateCurveParams>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSpec {
    pub drift: DriftSpec,
    pub vol: VolSpec,
    pub y0: Vector,
    pub z0: usize,
}

impl DiffusionSpec {
    pub fn d(&self) -> usize {
        self.y0.len()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let d = self.d();
        if d == 0 {
            return Err(Error::Dimension("y0 must be non-empty".into()));
        }
        check_finite_vector(&self.y0, "y0")?;
        if self.z0 >= n {
            return Err(Error::Domain(format!("initial regime {} out of range for {n} regimes", self.z0)));
        }
        let bad = |what: &str| Err(Error::Dimension(format!("{what} does not match d = {d}, n = {n}")));
        match &self.drift {
            DriftSpec::Affine { beta0, beta_lin } => {
                if beta0.len() != n || beta_lin.len() != n {
                    return bad("affine drift");
                }
                for (b0, bl) in beta0.iter().zip(beta_lin) {
                    if b0.len() != d || bl.len() != d || bl.iter().any(|b| b.len() != d) {
                        return bad("affine drift");
                    }
                    check_finite_vector(b0, "drift")?;
                    for b in bl {
                        check_finite_vector(b, "drift")?;
                    }
                }
            }
            DriftSpec::RateModel(p) => {
                p.validate()?;
                if p.d() != d || p.n() != n {
                    return bad("rate-model drift");
                }
            }
        }
        match &self.vol {
            VolSpec::Matrix(s) => {
                if s.len() != n || s.iter().any(|m| m.shape() != (d, d)) {
                    return bad("volatility");
                }
                for m in s {
                    check_finite_matrix(m, "volatility")?;
                }
            }
            VolSpec::AffineSqrt { sigma0, sigma_lin } => {
                if sigma0.len() != n || sigma_lin.len() != n {
                    return bad("volatility");
                }
                for (s0, sl) in sigma0.iter().zip(sigma_lin) {
                    if s0.shape() != (d, d) || sl.len() != d || sl.iter().any(|m| m.shape() != (d, d)) {
                        return bad("volatility");
                    }
                    check_finite_matrix(s0, "volatility")?;
                    for m in sl {
                        check_finite_matrix(m, "volatility")?;
                    }
                }
            }
            VolSpec::DiffusionRoot(p) => {
                p.validate()?;
                if p.d() != d || p.n() != n {
                    return bad("rate-model diffusion");
                }
            }
        }
        Ok(())
    }

    /// Factors that enter the volatility under a square root and are therefore truncated at 0.
    pub fn sqrt_mask(&self) -> Vec<bool> {
        let d = self.d();
        match &self.vol {
            VolSpec::Matrix(_) => vec![false; d],
            VolSpec::AffineSqrt { sigma_lin, .. } => (0..d)
                .map(|i| sigma_lin.iter().any(|sl| sl[i].iter().any(|&s| s != 0.0)))
                .collect(),
            VolSpec::DiffusionRoot(p) => {
                let mut mask: Vec<bool> = p.a_lin.iter().map(|a| a.iter().any(|&s| s != 0.0)).collect();
                for term in &p.lambda_terms {
                    for poly in &term.lambda {
                        for m in &poly.0 {
                            for (i, &pw) in m.powers.iter().enumerate() {
                                mask[i] |= pw > 0 && term.a.iter().any(|&s| s != 0.0);
                            }
                        }
                    }
                }
                mask
            }
        }
    }
}

/// Flat per-regime coefficients for the stepping loop.
enum CompiledDrift {
    /// `b0[z*d + k]`, `bl[(z*d + i)*d + k]` is component `k` of `beta_i(e_z)`.
    Affine { b0: Vec<f64>, bl: Vec<f64> },
    Rate(Box<RateCurveParams>),
}

enum CompiledVol {
    /// `s0[z*d*d + k*d + l]`, `sl[((z*d + i)*d + k)*d + l]`.
    Affine { s0: Vec<f64>, sl: Vec<f64>, has_sqrt: bool },
    Root(Box<RateCurveParams>),
}

/// Precompiled simulation kernel.
pub struct Simulator {
    d: usize,
    q: GeneratorMatrix,
    drift: CompiledDrift,
    vol: CompiledVol,
    mask: Vec<bool>,
    y0: Vec<f64>,
    z0: usize,
    dt: f64,
    steps: usize,
    seed: u64,
}

/// Number of steps of size `dt` covering `horizon`.
pub fn step_count(dt: f64, horizon: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() || !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::Domain(format!("need dt > 0 and horizon > 0, got dt = {dt}, horizon = {horizon}")));
    }
    let m = (horizon / dt).round();
    if (m * dt - horizon).abs() > GRID_TOL {
        return Err(Error::Domain(format!("horizon {horizon} is not a multiple of dt = {dt}")));
    }
    Ok(m as usize)
}

/// Per-path random stream: the seed selects the key, the path index the stream.
pub fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

impl Simulator {
    pub fn new(spec: &DiffusionSpec, q: &GeneratorMatrix, dt: f64, horizon: f64, seed: u64) -> Result<Self> {
        let n = q.n();
        spec.validate(n)?;
        let steps = step_count(dt, horizon)?;
        let d = spec.d();
        let drift = match &spec.drift {
            DriftSpec::Affine { beta0, beta_lin } => CompiledDrift::Affine {
                b0: beta0.iter().flat_map(|b| b.iter().copied()).collect(),
                bl: beta_lin.iter().flatten().flat_map(|b| b.iter().copied()).collect(),
            },
            DriftSpec::RateModel(p) => CompiledDrift::Rate(p.clone()),
        };
        let row_major = |m: &Matrix| (0..d).flat_map(move |k| (0..d).map(move |l| m[(k, l)])).collect::<Vec<_>>();
        let vol = match &spec.vol {
            VolSpec::Matrix(s) => CompiledVol::Affine {
                s0: s.iter().flat_map(row_major).collect(),
                sl: vec![0.0; n * d * d * d],
                has_sqrt: false,
            },
            VolSpec::AffineSqrt { sigma0, sigma_lin } => CompiledVol::Affine {
                s0: sigma0.iter().flat_map(row_major).collect(),
                sl: sigma_lin.iter().flatten().flat_map(row_major).collect(),
                has_sqrt: true,
            },
            VolSpec::DiffusionRoot(p) => CompiledVol::Root(p.clone()),
        };
        Ok(Simulator {
            d,
            q: q.clone(),
            drift,
            vol,
            mask: spec.sqrt_mask(),
            y0: spec.y0.iter().copied().collect(),
            z0: spec.z0,
            dt,
            steps,
            seed,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    fn drift_into(&self, yt: &[f64], z: usize, out: &mut [f64]) {
        let d = self.d;
        match &self.drift {
            CompiledDrift::Affine { b0, bl } => {
                out.copy_from_slice(&b0[z * d..(z + 1) * d]);
                for (i, &yi) in yt.iter().enumerate() {
                    let row = &bl[(z * d + i) * d..(z * d + i + 1) * d];
                    for (o, &b) in out.iter_mut().zip(row) {
                        *o += b * yi;
                    }
                }
            }
            CompiledDrift::Rate(p) => {
                let (b, _) = assemble_drift_diffusion_unchecked(&Vector::from_column_slice(yt), z, p)
                    .expect("validated dimensions");
                out.copy_from_slice(b.as_slice());
            }
        }
    }

    /// Writes `sigma(y, z) dW` into `out`.
    fn diffusion_into(&self, yt: &[f64], z: usize, dw: &[f64], out: &mut [f64]) {
        let d = self.d;
        match &self.vol {
            CompiledVol::Affine { s0, sl, has_sqrt } => {
                let base = &s0[z * d * d..(z + 1) * d * d];
                for k in 0..d {
                    out[k] = (0..d).map(|l| base[k * d + l] * dw[l]).sum();
                }
                if *has_sqrt {
                    for (i, &yi) in yt.iter().enumerate() {
                        let root = yi.max(0.0).sqrt();
                        if root == 0.0 {
                            continue;
                        }
                        let m = &sl[(z * d + i) * d * d..(z * d + i + 1) * d * d];
                        for k in 0..d {
                            out[k] += root * (0..d).map(|l| m[k * d + l] * dw[l]).sum::<f64>();
                        }
                    }
                }
            }
            CompiledVol::Root(p) => {
                let (_, a) = assemble_drift_diffusion_unchecked(&Vector::from_column_slice(yt), z, p)
                    .expect("validated dimensions");
                let eig = a.symmetric_eigen();
                let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
                let root = &eig.eigenvectors * Matrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose();
                let s = root * Vector::from_column_slice(dw);
                out.copy_from_slice(s.as_slice());
            }
        }
    }

    /// Simulates path `path` and calls `visit(k, t_k, y_k, z_k)` at every grid node.
    ///
    /// `z_k` is the right-continuous regime at `t_k`, which also drives the step to `t_{k+1}`.
    pub fn run_path<F>(&self, path: usize, mut visit: F) -> Result<RegimePath>
    where
        F: FnMut(usize, f64, &[f64], usize),
    {
        let mut rng = path_rng(self.seed, path);
        let regime = sample_regime_path(&self.q, self.z0, self.horizon(), &mut rng)?;
        let d = self.d;
        let sqrt_dt = self.dt.sqrt();
        let mut y = self.y0.clone();
        let mut yt = vec![0.0; d];
        let mut drift = vec![0.0; d];
        let mut dw = vec![0.0; d];
        let mut diff = vec![0.0; d];
        let mut next_jump = 0;
        let mut z = regime.states[0];
        for k in 0..=self.steps {
            let t = self.time(k);
            while next_jump < regime.jump_times.len() && regime.jump_times[next_jump] <= t {
                next_jump += 1;
                z = regime.states[next_jump];
            }
            visit(k, t, &y, z);
            if k == self.steps {
                break;
            }
            for i in 0..d {
                yt[i] = if self.mask[i] { y[i].max(0.0) } else { y[i] };
            }
            self.drift_into(&yt, z, &mut drift);
            for w in dw.iter_mut() {
                *w = StandardNormal.sample(&mut rng);
                *w *= sqrt_dt;
            }
            self.diffusion_into(&yt, z, &dw, &mut diff);
            for i in 0..d {
                y[i] += drift[i] * self.dt + diff[i];
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Explosion { path, t: self.time(k + 1) });
            }
        }
        Ok(regime)
    }
}

/// One simulated trajectory on the uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub times: Vec<f64>,
    pub y: Vec<Vector>,
    pub z: Vec<usize>,
    pub regime_path: RegimePath,
}

/// Simulates `n_paths` independent paths; path `k` uses stream `k` of `seed`.
pub fn simulate_paths(
    spec: &DiffusionSpec,
    q: &GeneratorMatrix,
    dt: f64,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<PathSample>> {
    if n_paths == 0 {
        return Err(Error::Domain("n_paths must be >= 1".into()));
    }
    let sim = Simulator::new(spec, q, dt, horizon, seed)?;
    let results: Vec<Result<PathSample>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut times = Vec::with_capacity(sim.steps() + 1);
            let mut y = Vec::with_capacity(sim.steps() + 1);
            let mut z = Vec::with_capacity(sim.steps() + 1);
            let regime_path = sim.run_path(p, |_, t, yk, zk| {
                times.push(t);
                y.push(Vector::from_column_slice(yk));
                z.push(zk);
            })?;
            Ok(PathSample { times, y, z, regime_path })
        })
        .collect();
    // first failing path in index order, independent of scheduling
    results.into_iter().collect()
}

/// Right-continuous regime of a sampled path at `t`.
pub fn interpolate_regime(path: &PathSample, t: f64) -> Result<usize> {
    path.regime_path.state_at(t)
}
