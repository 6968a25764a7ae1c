//! Prices and curve quantities from solved models at a state `(y, z)`.

use crate::energy::{solve_energy_curves, EnergyCurveGrid, EnergyCurveParams};
use crate::error::{Error, Result};
use crate::linalg::{locate, quadrature, Matrix, Vector};
use crate::rates::{solve_rate_curves, RateCurveGrid, RateCurveParams};

fn lerp<T>(values: &[T], i: usize, s: f64) -> T
where
    T: Clone + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
{
    if s == 0.0 {
        values[i].clone()
    } else {
        values[i].clone() * (1.0 - s) + values[i + 1].clone() * s
    }
}

fn lerp_scalar(values: &[Vector], z: usize, i: usize, s: f64) -> f64 {
    if s == 0.0 {
        values[i][z]
    } else {
        values[i][z] * (1.0 - s) + values[i + 1][z] * s
    }
}

fn check_state(y: &Vector, z: usize, d: usize, n: usize) -> Result<()> {
    if y.len() != d {
        return Err(Error::Dimension(format!("y has length {}, expected {d}", y.len())));
    }
    if z >= n {
        return Err(Error::Domain(format!("regime {z} out of range for {n} regimes")));
    }
    Ok(())
}

/// `(beta_t, Sigma_t) = (<u, b>, u^T sigma)` for a loading vector `u`.
pub fn hjm_from_loading(u: &Vector, sigma: &Matrix, b: &Vector) -> Result<(f64, Vector)> {
    if b.len() != u.len() || sigma.nrows() != u.len() {
        return Err(Error::Dimension("loading, drift and volatility disagree in dimension".into()));
    }
    Ok((u.dot(b), sigma.tr_mul(u)))
}

/// Solved energy curves together with their parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyModel {
    pub params: EnergyCurveParams,
    pub curves: EnergyCurveGrid,
}

impl EnergyModel {
    pub fn build(params: EnergyCurveParams, grid: &[f64]) -> Result<Self> {
        let curves = solve_energy_curves(&params, grid)?;
        Ok(EnergyModel { params, curves })
    }

    pub fn n(&self) -> usize {
        self.params.n()
    }

    pub fn d(&self) -> usize {
        self.params.d()
    }

    pub fn u_at(&self, x: f64, z: usize) -> Result<Vector> {
        let (i, s) = locate(&self.curves.grid, x)?;
        Ok(lerp(&self.curves.u, i, s).column(z).into_owned())
    }

    pub fn c_at(&self, x: f64, z: usize) -> Result<f64> {
        let (i, s) = locate(&self.curves.grid, x)?;
        Ok(lerp_scalar(&self.curves.c, z, i, s))
    }

    /// `(u, c, u', c')` at `x`, all regimes.
    pub fn curves_at(&self, x: f64) -> Result<(Matrix, Vector, Matrix, Vector)> {
        let (i, s) = locate(&self.curves.grid, x)?;
        Ok((
            lerp(&self.curves.u, i, s),
            lerp(&self.curves.c, i, s),
            lerp(&self.curves.du, i, s),
            lerp(&self.curves.dc, i, s),
        ))
    }

    /// `g(x, y, e_z) = c(x, e_z) + <u(x, e_z), y>`.
    pub fn forward_rate(&self, x: f64, y: &Vector, z: usize) -> Result<f64> {
        check_state(y, z, self.d(), self.n())?;
        Ok(self.c_at(x, z)? + self.u_at(x, z)?.dot(y))
    }

    /// `int_a^b c(s, e_z) ds`.
    pub fn integrate_c(&self, a: f64, b: f64, z: usize) -> Result<f64> {
        let f: Vec<f64> = self.curves.c.iter().map(|c| c[z]).collect();
        quadrature(&self.curves.grid, &f, a, b)
    }

    /// `int_a^b u(s, e_z) ds`.
    pub fn integrate_u(&self, a: f64, b: f64, z: usize) -> Result<Vector> {
        let mut out = Vector::zeros(self.d());
        for k in 0..self.d() {
            let f: Vec<f64> = self.curves.u.iter().map(|u| u[(k, z)]).collect();
            out[k] = quadrature(&self.curves.grid, &f, a, b)?;
        }
        Ok(out)
    }

    /// Average of the forward curve over the delivery window `[x1, x2]`.
    pub fn futures_price(&self, x1: f64, x2: f64, y: &Vector, z: usize) -> Result<f64> {
        check_state(y, z, self.d(), self.n())?;
        if !(x1 < x2) || x1 < 0.0 {
            return Err(Error::DegenerateInterval { x1, x2 });
        }
        let total = self.integrate_c(x1, x2, z)? + self.integrate_u(x1, x2, z)?.dot(y);
        Ok(total / (x2 - x1))
    }
}

/// Solved rate curves together with their parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RateModel {
    pub params: RateCurveParams,
    pub curves: RateCurveGrid,
}

impl RateModel {
    pub fn build(params: RateCurveParams, grid: &[f64]) -> Result<Self> {
        let curves = solve_rate_curves(&params, grid)?;
        Ok(RateModel { params, curves })
    }

    pub fn n(&self) -> usize {
        self.params.n()
    }

    pub fn d(&self) -> usize {
        self.params.d()
    }

    pub fn u_at(&self, x: f64) -> Result<Vector> {
        let (i, s) = locate(&self.curves.grid, x)?;
        Ok(lerp(&self.curves.u, i, s))
    }

    pub fn c_at(&self, x: f64, z: usize) -> Result<f64> {
        let (i, s) = locate(&self.curves.grid, x)?;
        Ok(lerp_scalar(&self.curves.c, z, i, s))
    }

    /// `(u, c, u', c')` at `x`; `c` and `c'` hold all regimes.
    pub fn curves_at(&self, x: f64) -> Result<(Vector, Vector, Vector, Vector)> {
        let (i, s) = locate(&self.curves.grid, x)?;
        Ok((
            lerp(&self.curves.u, i, s),
            lerp(&self.curves.c, i, s),
            lerp(&self.curves.du, i, s),
            lerp(&self.curves.dc, i, s),
        ))
    }

    pub fn forward_rate(&self, x: f64, y: &Vector, z: usize) -> Result<f64> {
        check_state(y, z, self.d(), self.n())?;
        Ok(self.c_at(x, z)? + self.u_at(x)?.dot(y))
    }

    pub fn integrate_c(&self, a: f64, b: f64, z: usize) -> Result<f64> {
        let f: Vec<f64> = self.curves.c.iter().map(|c| c[z]).collect();
        quadrature(&self.curves.grid, &f, a, b)
    }

    pub fn integrate_u(&self, a: f64, b: f64) -> Result<Vector> {
        let mut out = Vector::zeros(self.d());
        for k in 0..self.d() {
            let f: Vec<f64> = self.curves.u.iter().map(|u| u[k]).collect();
            out[k] = quadrature(&self.curves.grid, &f, a, b)?;
        }
        Ok(out)
    }

    /// `P = exp(-int_0^tau f(x) dx)`.
    pub fn bond_price(&self, tau: f64, y: &Vector, z: usize) -> Result<f64> {
        check_state(y, z, self.d(), self.n())?;
        if tau < 0.0 {
            return Err(Error::Range(format!("maturity {tau} is negative")));
        }
        let integral = self.integrate_c(0.0, tau, z)? + self.integrate_u(0.0, tau)?.dot(y);
        Ok((-integral).exp())
    }

    /// `r = f(0) = c(0, e_z) + <u0, y>`.
    pub fn short_rate(&self, y: &Vector, z: usize) -> Result<f64> {
        self.forward_rate(0.0, y, z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ForwardCurveModel {
    Energy(EnergyModel),
    Rates(RateModel),
}

impl ForwardCurveModel {
    pub fn n(&self) -> usize {
        match self {
            ForwardCurveModel::Energy(m) => m.n(),
            ForwardCurveModel::Rates(m) => m.n(),
        }
    }

    pub fn d(&self) -> usize {
        match self {
            ForwardCurveModel::Energy(m) => m.d(),
            ForwardCurveModel::Rates(m) => m.d(),
        }
    }

    pub fn grid(&self) -> &[f64] {
        match self {
            ForwardCurveModel::Energy(m) => &m.curves.grid,
            ForwardCurveModel::Rates(m) => &m.curves.grid,
        }
    }

    pub fn forward_rate(&self, x: f64, y: &Vector, z: usize) -> Result<f64> {
        match self {
            ForwardCurveModel::Energy(m) => m.forward_rate(x, y, z),
            ForwardCurveModel::Rates(m) => m.forward_rate(x, y, z),
        }
    }

    /// Loading `u(x, e_z)`.
    pub fn loading(&self, x: f64, z: usize) -> Result<Vector> {
        match self {
            ForwardCurveModel::Energy(m) => m.u_at(x, z),
            ForwardCurveModel::Rates(m) => {
                check_state(&Vector::zeros(m.d()), z, m.d(), m.n())?;
                m.u_at(x)
            }
        }
    }

    /// HJM drift `<u, b>` and volatility `u^T sigma` at `(x, z)`.
    pub fn hjm_coefficients(&self, x: f64, z: usize, sigma: &Matrix, b: &Vector) -> Result<(f64, Vector)> {
        hjm_from_loading(&self.loading(x, z)?, sigma, b)
    }
}
