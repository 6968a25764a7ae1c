//! Declarative JSON model configuration.
//!
//! Regime-dependent fields accept either one value shared by all regimes or a
//! list with one entry per regime. Regimes are 0-based.

use serde::{Deserialize, Serialize};

use crate::dynamics::{DiffusionSpec, DriftSpec, VolSpec};
use crate::energy::EnergyCurveParams;
use crate::error::{Error, Result};
use crate::linalg::{uniform_grid, Matrix, Vector, DEFAULT_STEP};
use crate::market::{EnergyModel, ForwardCurveModel, RateModel};
use crate::noarb::Contract;
use crate::rates::{LambdaTerm, Polynomial, RateCurveParams};
use crate::regime::validate_generator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Market {
    Energy,
    Rates,
}

/// One value for every regime, or one per regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerRegime<T> {
    ByRegime(Vec<T>),
    Shared(T),
}

impl<T: Clone> PerRegime<T> {
    pub fn expand(&self, n: usize, what: &str) -> Result<Vec<T>> {
        match self {
            PerRegime::Shared(v) => Ok(vec![v.clone(); n]),
            PerRegime::ByRegime(vs) if vs.len() == n => Ok(vs.clone()),
            PerRegime::ByRegime(vs) => Err(Error::Config(format!("{what} lists {} regimes, expected {n}", vs.len()))),
        }
    }

    fn is_shared(&self) -> bool {
        matches!(self, PerRegime::Shared(_))
    }
}

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VolConfig {
    Matrix { sigma: PerRegime<Rows> },
    AffineSqrt {
        #[serde(default)]
        sigma0: Option<PerRegime<Rows>>,
        /// One `d x d` matrix per factor.
        sigma_lin: PerRegime<Vec<Rows>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaTermConfig {
    pub b: Vec<f64>,
    pub a: Rows,
    pub lambda: PerRegime<Polynomial>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub x_max: f64,
    #[serde(default = "default_step")]
    pub x_step: f64,
}

fn default_step() -> f64 {
    DEFAULT_STEP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "default_probes")]
    pub n_probes: usize,
    #[serde(default = "default_probe_x")]
    pub probe_x_max: f64,
    #[serde(default = "default_probe_seed")]
    pub probe_seed: u64,
    #[serde(default = "default_checkpoints")]
    pub checkpoints: Vec<f64>,
    #[serde(default = "default_futures")]
    pub futures: Vec<[f64; 2]>,
    #[serde(default = "default_bonds")]
    pub bonds: Vec<f64>,
    /// Defaults to 1e-6 for energy and 1e-5 for rates.
    #[serde(default)]
    pub residual_tol: Option<f64>,
    #[serde(default = "default_z_max")]
    pub z_max: f64,
    #[serde(default = "default_mc_paths")]
    pub mc_paths: usize,
}

fn default_probes() -> usize {
    200
}
fn default_probe_x() -> f64 {
    5.0
}
fn default_probe_seed() -> u64 {
    7
}
fn default_checkpoints() -> Vec<f64> {
    vec![0.5, 1.0]
}
fn default_futures() -> Vec<[f64; 2]> {
    vec![[2.0, 3.0]]
}
fn default_bonds() -> Vec<f64> {
    vec![3.0]
}
fn default_z_max() -> f64 {
    4.0
}
fn default_mc_paths() -> usize {
    100_000
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            n_probes: default_probes(),
            probe_x_max: default_probe_x(),
            probe_seed: default_probe_seed(),
            checkpoints: default_checkpoints(),
            futures: default_futures(),
            bonds: default_bonds(),
            residual_tol: None,
            z_max: default_z_max(),
            mc_paths: default_mc_paths(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub market: Market,
    pub n: usize,
    pub d: usize,
    pub q_matrix: Rows,
    /// Constant discount rate (energy only).
    #[serde(default)]
    pub discount_r: Option<f64>,
    pub beta0: PerRegime<Vec<f64>>,
    /// `beta_1, ..., beta_d`, shared by all regimes.
    #[serde(default)]
    pub beta_lin: Option<Vec<Vec<f64>>>,
    /// Regime-dependent `beta_1, ..., beta_d` (energy only).
    #[serde(default)]
    pub beta_lin_by_regime: Option<Vec<Vec<Vec<f64>>>>,
    pub u0: PerRegime<Vec<f64>>,
    pub c0: Vec<f64>,
    #[serde(default)]
    pub a0: Option<PerRegime<Rows>>,
    #[serde(default)]
    pub a_lin: Option<Vec<Rows>>,
    #[serde(default)]
    pub lambda_terms: Vec<LambdaTermConfig>,
    #[serde(default)]
    pub vol: Option<VolConfig>,
    pub y0: Vec<f64>,
    #[serde(default)]
    pub z0: usize,
    pub grid: GridConfig,
    pub sim: SimConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

fn matrix(rows: &Rows, r: usize, c: usize, what: &str) -> Result<Matrix> {
    if rows.len() != r || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!("{what} must be {r}x{c}")));
    }
    Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn vector(v: &[f64], len: usize, what: &str) -> Result<Vector> {
    if v.len() != len {
        return Err(Error::Config(format!("{what} must have {len} entries, got {}", v.len())));
    }
    Ok(Vector::from_column_slice(v))
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Structural checks; parameter-level checks run when the parameters are built.
    pub fn validate(&self) -> Result<()> {
        let (n, d) = (self.n, self.d);
        if n == 0 || d == 0 {
            return Err(Error::Config("n and d must be >= 1".into()));
        }
        validate_generator(&matrix(&self.q_matrix, n, n, "q_matrix")?)?;
        if self.z0 >= n {
            return Err(Error::Config(format!("z0 = {} out of range for {n} regimes", self.z0)));
        }
        vector(&self.y0, d, "y0")?;
        match self.market {
            Market::Energy => {
                self.energy_params()?;
            }
            Market::Rates => {
                self.rate_params()?;
            }
        }
        self.diffusion_spec()?;
        self.grid()?;
        if self.sim.n_paths == 0 {
            return Err(Error::Config("sim.n_paths must be >= 1".into()));
        }
        crate::dynamics::step_count(self.sim.dt, self.sim.horizon)?;
        Ok(())
    }

    pub fn grid(&self) -> Result<Vec<f64>> {
        uniform_grid(self.grid.x_max, self.grid.x_step)
    }

    fn beta0_vectors(&self) -> Result<Vec<Vector>> {
        self.beta0
            .expand(self.n, "beta0")?
            .iter()
            .map(|b| vector(b, self.d, "beta0"))
            .collect()
    }

    fn shared_beta_lin(&self) -> Result<Vec<Vector>> {
        match &self.beta_lin {
            Some(bl) if bl.len() == self.d => bl.iter().map(|b| vector(b, self.d, "beta_lin")).collect(),
            Some(bl) => Err(Error::Config(format!("beta_lin needs {} vectors, got {}", self.d, bl.len()))),
            None => Ok(vec![Vector::zeros(self.d); self.d]),
        }
    }

    fn beta_lin_per_regime(&self) -> Result<Vec<Vec<Vector>>> {
        match &self.beta_lin_by_regime {
            Some(_) if self.beta_lin.is_some() => Err(Error::Config("give beta_lin or beta_lin_by_regime, not both".into())),
            Some(by) => {
                if by.len() != self.n {
                    return Err(Error::Config(format!("beta_lin_by_regime lists {} regimes, expected {}", by.len(), self.n)));
                }
                by.iter()
                    .map(|bl| {
                        if bl.len() != self.d {
                            return Err(Error::Config(format!("beta_lin_by_regime needs {} vectors per regime", self.d)));
                        }
                        bl.iter().map(|b| vector(b, self.d, "beta_lin_by_regime")).collect()
                    })
                    .collect()
            }
            None => Ok(vec![self.shared_beta_lin()?; self.n]),
        }
    }

    fn q(&self) -> Result<crate::regime::GeneratorMatrix> {
        validate_generator(&matrix(&self.q_matrix, self.n, self.n, "q_matrix")?)
    }

    pub fn energy_params(&self) -> Result<EnergyCurveParams> {
        if self.market != Market::Energy {
            return Err(Error::Config("not an energy config".into()));
        }
        if self.a0.is_some() || self.a_lin.is_some() || !self.lambda_terms.is_empty() {
            return Err(Error::Config("a0, a_lin and lambda_terms apply to rates only".into()));
        }
        let r = self.discount_r.ok_or_else(|| Error::Config("energy configs need discount_r".into()))?;
        let u0 = self.u0.expand(self.n, "u0")?;
        let mut u = Matrix::zeros(self.d, self.n);
        for (j, col) in u0.iter().enumerate() {
            u.set_column(j, &vector(col, self.d, "u0")?);
        }
        let p = EnergyCurveParams {
            r,
            q: self.q()?,
            beta0: self.beta0_vectors()?,
            beta_lin: self.beta_lin_per_regime()?,
            u0: u,
            c0: vector(&self.c0, self.n, "c0")?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn rate_params(&self) -> Result<RateCurveParams> {
        if self.market != Market::Rates {
            return Err(Error::Config("not a rates config".into()));
        }
        if self.beta_lin_by_regime.is_some() {
            return Err(Error::Config("rates require regime-independent beta_lin".into()));
        }
        if self.discount_r.is_some() {
            return Err(Error::Config("rates discount with the short rate; remove discount_r".into()));
        }
        let u0 = match &self.u0 {
            PerRegime::Shared(u) => vector(u, self.d, "u0")?,
            PerRegime::ByRegime(_) => return Err(Error::Config("rates require a single shared u0".into())),
        };
        let (n, d) = (self.n, self.d);
        let a0 = match &self.a0 {
            Some(a) => a.expand(n, "a0")?.iter().map(|m| matrix(m, d, d, "a0")).collect::<Result<_>>()?,
            None => vec![Matrix::zeros(d, d); n],
        };
        let a_lin = match &self.a_lin {
            Some(a) if a.len() == d => a.iter().map(|m| matrix(m, d, d, "a_lin")).collect::<Result<_>>()?,
            Some(a) => return Err(Error::Config(format!("a_lin needs {d} matrices, got {}", a.len()))),
            None => vec![Matrix::zeros(d, d); d],
        };
        let lambda_terms = self
            .lambda_terms
            .iter()
            .map(|t| {
                Ok(LambdaTerm {
                    b: vector(&t.b, d, "lambda_terms.b")?,
                    a: matrix(&t.a, d, d, "lambda_terms.a")?,
                    lambda: t.lambda.expand(n, "lambda_terms.lambda")?,
                })
            })
            .collect::<Result<_>>()?;
        let p = RateCurveParams {
            q: self.q()?,
            u0,
            c0: vector(&self.c0, n, "c0")?,
            beta_lin: self.shared_beta_lin()?,
            a_lin,
            beta0: self.beta0_vectors()?,
            a0,
            lambda_terms,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn diffusion_spec(&self) -> Result<DiffusionSpec> {
        let (n, d) = (self.n, self.d);
        let zero = || vec![Matrix::zeros(d, d); n];
        let vol = match &self.vol {
            Some(VolConfig::Matrix { sigma }) => VolSpec::Matrix(
                sigma.expand(n, "vol.sigma")?.iter().map(|m| matrix(m, d, d, "vol.sigma")).collect::<Result<_>>()?,
            ),
            Some(VolConfig::AffineSqrt { sigma0, sigma_lin }) => {
                let sigma0 = match sigma0 {
                    Some(s) => s.expand(n, "vol.sigma0")?.iter().map(|m| matrix(m, d, d, "vol.sigma0")).collect::<Result<_>>()?,
                    None => zero(),
                };
                let sigma_lin = sigma_lin
                    .expand(n, "vol.sigma_lin")?
                    .iter()
                    .map(|per_factor| {
                        if per_factor.len() != d {
                            return Err(Error::Config(format!("vol.sigma_lin needs {d} matrices per regime")));
                        }
                        per_factor.iter().map(|m| matrix(m, d, d, "vol.sigma_lin")).collect()
                    })
                    .collect::<Result<_>>()?;
                VolSpec::AffineSqrt { sigma0, sigma_lin }
            }
            None => match self.market {
                Market::Energy => VolSpec::Matrix(zero()),
                Market::Rates => VolSpec::DiffusionRoot(Box::new(self.rate_params()?)),
            },
        };
        let drift = match self.market {
            Market::Energy => {
                let p = self.energy_params()?;
                DriftSpec::Affine { beta0: p.beta0, beta_lin: p.beta_lin }
            }
            Market::Rates => {
                let p = self.rate_params()?;
                if p.lambda_terms.is_empty() {
                    DriftSpec::Affine { beta0: p.beta0.clone(), beta_lin: vec![p.beta_lin.clone(); n] }
                } else {
                    DriftSpec::RateModel(Box::new(p))
                }
            }
        };
        let spec = DiffusionSpec { drift, vol, y0: vector(&self.y0, d, "y0")?, z0: self.z0 };
        spec.validate(n)?;
        Ok(spec)
    }

    /// Runs the construction pipeline for the configured market.
    pub fn build_model(&self) -> Result<ForwardCurveModel> {
        let grid = self.grid()?;
        Ok(match self.market {
            Market::Energy => ForwardCurveModel::Energy(EnergyModel::build(self.energy_params()?, &grid)?),
            Market::Rates => ForwardCurveModel::Rates(RateModel::build(self.rate_params()?, &grid)?),
        })
    }

    pub fn contracts(&self) -> Vec<Contract> {
        match self.market {
            Market::Energy => self.verify.futures.iter().map(|&[t1, t2]| Contract::Futures { t1, t2 }).collect(),
            Market::Rates => self.verify.bonds.iter().map(|&maturity| Contract::Bond { maturity }).collect(),
        }
    }

    pub fn residual_tol(&self) -> f64 {
        self.verify.residual_tol.unwrap_or(match self.market {
            Market::Energy => 1e-6,
            Market::Rates => 1e-5,
        })
    }

    /// Whether regime `z` shares its `u` with all other regimes (always for rates).
    pub fn shared_u0(&self) -> bool {
        self.u0.is_shared()
    }
}
