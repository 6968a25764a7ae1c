//! Energy-futures curves: `u' = L u`, `c' = M c + beta_0 (.) u`.
//!
//! State vectors are stored regime-by-column: `u` is a `d x n` matrix whose
//! column `j` is `u(x, e_j)`, `c` is an `n`-vector.

use crate::error::{Error, Result};
use crate::linalg::{check_finite_matrix, check_finite_vector, expm, rk4_solve, validate_grid, Matrix, Vector};
use crate::regime::GeneratorMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyCurveParams {
    /// Constant discount rate.
    pub r: f64,
    pub q: GeneratorMatrix,
    /// `beta0[j]` is the constant drift term `beta_0(e_j)`.
    pub beta0: Vec<Vector>,
    /// `beta_lin[j][i]` is `beta_{i+1}(e_j)`, the loading of `y_{i+1}` in the drift.
    pub beta_lin: Vec<Vec<Vector>>,
    /// `d x n` initial loadings.
    pub u0: Matrix,
    pub c0: Vector,
}

impl EnergyCurveParams {
    pub fn n(&self) -> usize {
        self.q.n()
    }

    pub fn d(&self) -> usize {
        self.u0.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, d) = (self.n(), self.d());
        if d == 0 {
            return Err(Error::Dimension("factor dimension d must be >= 1".into()));
        }
        if !(self.r > 0.0) || !self.r.is_finite() {
            return Err(Error::Domain(format!("discount rate must be > 0, got {}", self.r)));
        }
        if self.u0.ncols() != n || self.c0.len() != n {
            return Err(Error::Dimension(format!(
                "u0 is {}x{} and c0 has {} entries for {n} regimes",
                self.u0.nrows(),
                self.u0.ncols(),
                self.c0.len()
            )));
        }
        if self.beta0.len() != n || self.beta_lin.len() != n {
            return Err(Error::Dimension(format!("drift coefficients must be given for all {n} regimes")));
        }
        for (j, b) in self.beta0.iter().enumerate() {
            if b.len() != d {
                return Err(Error::Dimension(format!("beta_0(e_{j}) has length {}, expected {d}", b.len())));
            }
            check_finite_vector(b, "beta_0")?;
        }
        for (j, per_factor) in self.beta_lin.iter().enumerate() {
            if per_factor.len() != d || per_factor.iter().any(|b| b.len() != d) {
                return Err(Error::Dimension(format!("linear drift of regime {j} must be {d} vectors of length {d}")));
            }
            for b in per_factor {
                check_finite_vector(b, "beta_i")?;
            }
        }
        check_finite_matrix(&self.u0, "u0")?;
        check_finite_vector(&self.c0, "c0")?;
        Ok(())
    }

    /// Drift `b(y, e_z) = beta_0(e_z) + sum_i beta_i(e_z) y_i`.
    pub fn drift(&self, y: &Vector, z: usize) -> Vector {
        let mut b = self.beta0[z].clone();
        for (i, beta) in self.beta_lin[z].iter().enumerate() {
            b.axpy(y[i], beta, 1.0);
        }
        b
    }
}

fn check_state_shape(u: &Matrix, params: &EnergyCurveParams) -> Result<()> {
    if u.nrows() != params.d() || u.ncols() != params.n() {
        return Err(Error::Dimension(format!(
            "state is {}x{}, expected {}x{}",
            u.nrows(),
            u.ncols(),
            params.d(),
            params.n()
        )));
    }
    Ok(())
}

/// `(L u)_j = sum_i <beta_i(e_j), u_j> e_i - r u_j + (u Q^T)_j`.
pub fn apply_l(u: &Matrix, params: &EnergyCurveParams) -> Result<Matrix> {
    check_state_shape(u, params)?;
    let mut out = u * params.q.matrix().transpose() - u * params.r;
    for j in 0..params.n() {
        let col = u.column(j);
        for (i, beta) in params.beta_lin[j].iter().enumerate() {
            out[(i, j)] += beta.dot(&col);
        }
    }
    Ok(out)
}

/// `M c = Q c - r c`.
pub fn apply_m(c: &Vector, params: &EnergyCurveParams) -> Result<Vector> {
    if c.len() != params.n() {
        return Err(Error::Dimension(format!("c has {} entries, expected {}", c.len(), params.n())));
    }
    Ok(params.q.matrix() * c - c * params.r)
}

/// Forcing term `(<beta_0(e_1), u_1>, ..., <beta_0(e_n), u_n>)`.
fn beta0_dot_u(u: &Matrix, params: &EnergyCurveParams) -> Vector {
    Vector::from_fn(params.n(), |j, _| params.beta0[j].dot(&u.column(j)))
}

/// Solved energy curves with their `x`-derivatives taken from the ODE right-hand side.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyCurveGrid {
    pub grid: Vec<f64>,
    pub u: Vec<Matrix>,
    pub c: Vec<Vector>,
    pub du: Vec<Matrix>,
    pub dc: Vec<Vector>,
}

impl EnergyCurveGrid {
    pub fn x_max(&self) -> f64 {
        *self.grid.last().unwrap()
    }
}

fn pack(u: &Matrix, c: &Vector) -> Vector {
    Vector::from_iterator(u.len() + c.len(), u.iter().chain(c.iter()).copied())
}

fn unpack(state: &Vector, d: usize, n: usize) -> (Matrix, Vector) {
    let u = Matrix::from_column_slice(d, n, &state.as_slice()[..d * n]);
    let c = Vector::from_column_slice(&state.as_slice()[d * n..]);
    (u, c)
}

fn energy_rhs(u: &Matrix, c: &Vector, params: &EnergyCurveParams) -> (Matrix, Vector) {
    let du = apply_l(u, params).expect("shape checked by caller");
    let dc = apply_m(c, params).expect("shape checked by caller") + beta0_dot_u(u, params);
    (du, dc)
}

/// RK4 solution of the coupled `(u, c)` system started at `(u0, c0)`.
pub fn solve_energy_curves(params: &EnergyCurveParams, grid: &[f64]) -> Result<EnergyCurveGrid> {
    params.validate()?;
    validate_grid(grid)?;
    if grid[0] != 0.0 {
        return Err(Error::Domain(format!("curve grids must start at 0, got {}", grid[0])));
    }
    let (d, n) = (params.d(), params.n());
    let sol = rk4_solve(
        |_, state| {
            let (u, c) = unpack(state, d, n);
            let (du, dc) = energy_rhs(&u, &c, params);
            pack(&du, &dc)
        },
        &pack(&params.u0, &params.c0),
        grid,
    )?;

    let mut out = EnergyCurveGrid {
        grid: sol.grid,
        u: Vec::with_capacity(grid.len()),
        c: Vec::with_capacity(grid.len()),
        du: Vec::with_capacity(grid.len()),
        dc: Vec::with_capacity(grid.len()),
    };
    for state in &sol.values {
        let (u, c) = unpack(state, d, n);
        let (du, dc) = energy_rhs(&u, &c, params);
        out.u.push(u);
        out.c.push(c);
        out.du.push(du);
        out.dc.push(dc);
    }
    Ok(out)
}

/// Generator of the full linear system acting on `(vec(u), c)` with `vec`
/// stacking the regime columns of `u`.
pub fn energy_system_matrix(params: &EnergyCurveParams) -> Result<Matrix> {
    params.validate()?;
    let (d, n) = (params.d(), params.n());
    let dim = d * n + n;
    let mut g = Matrix::zeros(dim, dim);
    let q = params.q.matrix();
    for j in 0..n {
        for i in 0..d {
            let row = j * d + i;
            // sum_i <beta_i(e_j), u_j> e_i
            for k in 0..d {
                g[(row, j * d + k)] += params.beta_lin[j][i][k];
            }
            g[(row, row)] -= params.r;
            for l in 0..n {
                g[(row, l * d + i)] += q[(j, l)];
            }
        }
        let crow = d * n + j;
        for l in 0..n {
            g[(crow, d * n + l)] += q[(j, l)];
        }
        g[(crow, crow)] -= params.r;
        for k in 0..d {
            g[(crow, j * d + k)] += params.beta0[j][k];
        }
    }
    Ok(g)
}

fn require_scalar_factor(params: &EnergyCurveParams) -> Result<()> {
    if params.d() != 1 {
        return Err(Error::UnsupportedDimension(format!(
            "closed form needs d = 1, got d = {}",
            params.d()
        )));
    }
    Ok(())
}

/// `u(x) = exp(x (B - r I + Q)) u0` for one factor, `B = diag(beta_1(e_k))`.
pub fn closed_form_energy_u(params: &EnergyCurveParams, x: f64) -> Result<Vector> {
    require_scalar_factor(params)?;
    params.validate()?;
    let n = params.n();
    let b = Matrix::from_diagonal(&Vector::from_fn(n, |k, _| params.beta_lin[k][0][0]));
    let k = b - Matrix::identity(n, n) * params.r + params.q.matrix();
    Ok(expm(&(k * x))? * params.u0.row(0).transpose())
}

/// `c(x)` for one factor from the block exponential of the coupled system.
pub fn closed_form_energy_c(params: &EnergyCurveParams, x: f64) -> Result<Vector> {
    require_scalar_factor(params)?;
    let n = params.n();
    let g = energy_system_matrix(params)?;
    let state = expm(&(g * x))? * pack(&params.u0, &params.c0);
    Ok(state.rows(n, n).into_owned())
}
