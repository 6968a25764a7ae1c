//! Interest-rate curves: Riccati system for `v`, the `H` function, the
//! exponential transform `w~` and the regime-dependent level `c`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    check_finite_matrix, check_finite_vector, hermite_eval, rk4_solve, validate_grid, Matrix, Vector,
};
use crate::regime::GeneratorMatrix;

/// Largest admissible polynomial degree of a `Lambda_i`.
pub const MAX_LAMBDA_DEGREE: u32 = 4;

/// Symmetry tolerance for diffusion coefficient matrices.
const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coef: f64,
    /// Exponent of each factor `y_i`.
    pub powers: Vec<u32>,
}

/// Polynomial in `y` as a sum of monomials.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polynomial(pub Vec<Monomial>);

impl Polynomial {
    pub fn degree(&self) -> u32 {
        self.0.iter().map(|m| m.powers.iter().sum()).max().unwrap_or(0)
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        self.0
            .iter()
            .map(|m| {
                m.powers
                    .iter()
                    .zip(y)
                    .fold(m.coef, |acc, (&p, &yi)| acc * yi.powi(p as i32))
            })
            .sum()
    }
}

/// One correction term `Lambda_i(y, z) (b_i, a_i)` in the drift and diffusion.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaTerm {
    pub b: Vector,
    pub a: Matrix,
    /// `lambda[z]` is `Lambda_i(., e_z)`.
    pub lambda: Vec<Polynomial>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateCurveParams {
    pub q: GeneratorMatrix,
    pub u0: Vector,
    pub c0: Vector,
    /// `beta_lin[i]` is `beta_{i+1}`, shared by all regimes.
    pub beta_lin: Vec<Vector>,
    /// `a_lin[i]` is `A_{i+1}`, shared by all regimes.
    pub a_lin: Vec<Matrix>,
    pub beta0: Vec<Vector>,
    pub a0: Vec<Matrix>,
    pub lambda_terms: Vec<LambdaTerm>,
}

fn check_symmetric(m: &Matrix, what: &str) -> Result<()> {
    check_finite_matrix(m, what)?;
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > SYMMETRY_TOL * scale {
        return Err(Error::Domain(format!("{what} must be symmetric")));
    }
    Ok(())
}

/// Bound on the number of independent vanishing quadratics in `d` dimensions.
pub fn max_lambda_terms(d: usize) -> usize {
    (d + 1) * (d + 2) / 2
}

impl RateCurveParams {
    pub fn n(&self) -> usize {
        self.q.n()
    }

    pub fn d(&self) -> usize {
        self.u0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, d) = (self.n(), self.d());
        if d == 0 {
            return Err(Error::Dimension("factor dimension d must be >= 1".into()));
        }
        check_finite_vector(&self.u0, "u0")?;
        if self.c0.len() != n {
            return Err(Error::Dimension(format!("c0 has {} entries for {n} regimes", self.c0.len())));
        }
        check_finite_vector(&self.c0, "c0")?;
        if self.beta_lin.len() != d || self.beta_lin.iter().any(|b| b.len() != d) {
            return Err(Error::Dimension(format!("need {d} linear drift vectors of length {d}")));
        }
        if self.a_lin.len() != d || self.a_lin.iter().any(|a| a.shape() != (d, d)) {
            return Err(Error::Dimension(format!("need {d} linear diffusion matrices of size {d}x{d}")));
        }
        if self.beta0.len() != n || self.beta0.iter().any(|b| b.len() != d) {
            return Err(Error::Dimension(format!("beta_0 must give a length-{d} vector for each of {n} regimes")));
        }
        if self.a0.len() != n || self.a0.iter().any(|a| a.shape() != (d, d)) {
            return Err(Error::Dimension(format!("A_0 must give a {d}x{d} matrix for each of {n} regimes")));
        }
        for b in self.beta_lin.iter().chain(&self.beta0) {
            check_finite_vector(b, "drift coefficient")?;
        }
        for a in self.a_lin.iter().chain(&self.a0) {
            check_symmetric(a, "diffusion coefficient")?;
        }
        if self.lambda_terms.len() > max_lambda_terms(d) {
            return Err(Error::Dimension(format!(
                "{} lambda terms exceed the bound {} for d = {d}",
                self.lambda_terms.len(),
                max_lambda_terms(d)
            )));
        }
        for (k, term) in self.lambda_terms.iter().enumerate() {
            if term.b.len() != d || term.a.shape() != (d, d) || term.lambda.len() != n {
                return Err(Error::Dimension(format!("lambda term {k} has inconsistent dimensions")));
            }
            check_finite_vector(&term.b, "lambda term b")?;
            check_symmetric(&term.a, "lambda term a")?;
            for p in &term.lambda {
                if p.0.iter().any(|m| m.powers.len() != d || !m.coef.is_finite()) {
                    return Err(Error::Dimension(format!("lambda term {k} polynomial must have {d} exponents per monomial")));
                }
                if p.degree() > MAX_LAMBDA_DEGREE {
                    return Err(Error::Domain(format!(
                        "lambda term {k} has degree {} > {MAX_LAMBDA_DEGREE}",
                        p.degree()
                    )));
                }
            }
        }
        Ok(())
    }

    fn riccati_rhs(&self, v: &Vector) -> Vector {
        Vector::from_fn(self.d(), |i, _| {
            self.u0[i] + self.beta_lin[i].dot(v) - 0.5 * v.dot(&(&self.a_lin[i] * v))
        })
    }

    fn riccati_second(&self, v: &Vector, u: &Vector) -> Vector {
        Vector::from_fn(self.d(), |i, _| self.beta_lin[i].dot(u) - u.dot(&(&self.a_lin[i] * v)))
    }

    fn h_at(&self, v: &Vector) -> Vector {
        Vector::from_fn(self.n(), |z, _| self.beta0[z].dot(v) - 0.5 * v.dot(&(&self.a0[z] * v)))
    }

    fn dh_at(&self, v: &Vector, u: &Vector) -> Vector {
        Vector::from_fn(self.n(), |z, _| self.beta0[z].dot(u) - u.dot(&(&self.a0[z] * v)))
    }
}

/// Solution of the Riccati system with `u = v'` and `du = u'` from the analytic right-hand side.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub grid: Vec<f64>,
    pub v: Vec<Vector>,
    pub u: Vec<Vector>,
    pub du: Vec<Vector>,
}

fn check_curve_grid(grid: &[f64]) -> Result<()> {
    validate_grid(grid)?;
    if grid[0] != 0.0 {
        return Err(Error::Domain(format!("curve grids must start at 0, got {}", grid[0])));
    }
    Ok(())
}

/// `v' = u0 + sum_i <beta_i, v> e_i - 1/2 sum_i <v, A_i v> e_i`, `v(0) = 0`.
pub fn solve_riccati(params: &RateCurveParams, grid: &[f64]) -> Result<RiccatiSolution> {
    params.validate()?;
    check_curve_grid(grid)?;
    let sol = rk4_solve(|_, v| params.riccati_rhs(v), &Vector::zeros(params.d()), grid)?;
    let u: Vec<Vector> = sol.values.iter().map(|v| params.riccati_rhs(v)).collect();
    let du = sol.values.iter().zip(&u).map(|(v, u)| params.riccati_second(v, u)).collect();
    Ok(RiccatiSolution { grid: sol.grid, v: sol.values, u, du })
}

/// Absolute tolerance on `beta^2 + 2 u0 A` selecting the degenerate branch.
pub const DEGENERATE_TOL: f64 = 1e-12;

/// Closed-form `u(x)` for one factor.
///
/// With `D = beta^2 + 2 u0 A`: `A = 0` gives `u0 e^{beta x}`; `D = 0` gives
/// `-2 / (A (x - 2/beta)^2)`; `D > 0` with `g = sqrt(D)`, `K = (beta+g)/(beta-g)`
/// gives `-(2 g^2/A) K e^{-gx} / (1 - K e^{-gx})^2`; `D < 0` with `w = sqrt(-D)`
/// gives `-(w^2/(2A)) sec^2(w x/2 + atan(beta/w))`.
pub fn closed_form_rate_u(params: &RateCurveParams, x: f64) -> Result<f64> {
    if params.d() != 1 {
        return Err(Error::UnsupportedDimension(format!(
            "closed form needs d = 1, got d = {}",
            params.d()
        )));
    }
    let (u0, beta, a) = (params.u0[0], params.beta_lin[0][0], params.a_lin[0][(0, 0)]);
    Ok(riccati_scalar_u(u0, beta, a, x))
}

fn riccati_scalar_u(u0: f64, beta: f64, a: f64, x: f64) -> f64 {
    if u0 == 0.0 {
        return 0.0;
    }
    if a == 0.0 {
        return u0 * (beta * x).exp();
    }
    let disc = beta * beta + 2.0 * u0 * a;
    if disc.abs() <= DEGENERATE_TOL {
        let s = x - 2.0 / beta;
        return -2.0 / (a * s * s);
    }
    if disc > 0.0 {
        let g = disc.sqrt();
        let k = (beta + g) / (beta - g);
        let ke = k * (-g * x).exp();
        return -(2.0 * g * g / a) * ke / ((1.0 - ke) * (1.0 - ke));
    }
    let w = (-disc).sqrt();
    let cos = (0.5 * w * x + (beta / w).atan()).cos();
    -(w * w / (2.0 * a)) / (cos * cos)
}

/// `H(x, e_z) = <v(x), beta_0(e_z)> - 1/2 <v(x), A_0(e_z) v(x)>` at every node.
pub fn compute_h(v: &[Vector], beta0: &[Vector], a0: &[Matrix]) -> Result<Vec<Vector>> {
    if beta0.len() != a0.len() {
        return Err(Error::Dimension("beta_0 and A_0 cover different regime counts".into()));
    }
    let n = beta0.len();
    v.iter()
        .map(|v| {
            if beta0.iter().any(|b| b.len() != v.len()) || a0.iter().any(|a| a.shape() != (v.len(), v.len())) {
                return Err(Error::Dimension("v does not match the drift coefficients".into()));
            }
            Ok(Vector::from_fn(n, |z, _| beta0[z].dot(v) - 0.5 * v.dot(&(&a0[z] * v))))
        })
        .collect()
}

/// `K(x) = Q - C_0 - diag H(x)`.
fn k_matrix(q: &GeneratorMatrix, c0: &Vector, h: &Vector) -> Matrix {
    let mut k = q.matrix().clone();
    for z in 0..q.n() {
        k[(z, z)] -= c0[z] + h[z];
    }
    k
}

/// `w~' = (Q - C_0 - diag H(x)) w~`, `w~(0) = 1`; `h` is evaluated at RK4 stage points.
pub fn solve_wtilde<F>(h: F, q: &GeneratorMatrix, c0: &Vector, grid: &[f64]) -> Result<Vec<Vector>>
where
    F: Fn(f64) -> Vector,
{
    check_curve_grid(grid)?;
    let n = q.n();
    if c0.len() != n {
        return Err(Error::Dimension(format!("c0 has {} entries for {n} regimes", c0.len())));
    }
    let sol = rk4_solve(|x, w| k_matrix(q, c0, &h(x)) * w, &Vector::from_element(n, 1.0), grid)?;
    for (x, w) in sol.grid.iter().zip(&sol.values) {
        if let Some((z, &value)) = w.iter().enumerate().find(|(_, &wz)| !(wz > 0.0)) {
            return Err(Error::PositivityViolation { regime: z, x: *x, value });
        }
    }
    Ok(sol.values)
}

/// `c_z = -(w~'_z) / w~_z` and its derivative, with `w~'` taken from the ODE.
///
/// `dc_z = H'_z - (K K w~)_z / w~_z + c_z^2`.
pub fn extract_c(
    wtilde: &[Vector],
    h: &[Vector],
    dh: &[Vector],
    q: &GeneratorMatrix,
    c0: &Vector,
) -> Result<(Vec<Vector>, Vec<Vector>)> {
    if wtilde.len() != h.len() || h.len() != dh.len() {
        return Err(Error::Dimension("w~, H and H' must share the grid".into()));
    }
    let mut c = Vec::with_capacity(wtilde.len());
    let mut dc = Vec::with_capacity(wtilde.len());
    for (k, ((w, h), dh)) in wtilde.iter().zip(h).zip(dh).enumerate() {
        if let Some((z, &value)) = w.iter().enumerate().find(|(_, &wz)| !(wz > 0.0)) {
            return Err(Error::PositivityViolation { regime: z, x: k as f64, value });
        }
        let km = k_matrix(q, c0, h);
        let kw = &km * w;
        let kkw = &km * &kw;
        let cz = Vector::from_fn(w.len(), |z, _| -kw[z] / w[z]);
        dc.push(Vector::from_fn(w.len(), |z, _| dh[z] - kkw[z] / w[z] + cz[z] * cz[z]));
        c.push(cz);
    }
    Ok((c, dc))
}

/// Sup over the grid of `|<v, b_i> - 1/2 <v, a_i v>|` for each term.
pub fn check_lambda_consistency(v: &[Vector], terms: &[LambdaTerm]) -> Vec<f64> {
    terms
        .iter()
        .map(|t| {
            v.iter()
                .map(|v| (v.dot(&t.b) - 0.5 * v.dot(&(&t.a * v))).abs())
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Acceptance threshold for lambda terms against a solved `v`.
pub fn lambda_tolerance(v: &[Vector]) -> f64 {
    let sup = v.iter().map(|v| v.norm_squared()).fold(0.0, f64::max);
    1e-6 * (1.0 + sup)
}

/// `(b, a)` at `(y, z)` without checking that `a` admits a square root.
pub fn assemble_drift_diffusion_unchecked(y: &Vector, z: usize, params: &RateCurveParams) -> Result<(Vector, Matrix)> {
    let d = params.d();
    if y.len() != d {
        return Err(Error::Dimension(format!("y has length {}, expected {d}", y.len())));
    }
    if z >= params.n() {
        return Err(Error::Domain(format!("regime {z} out of range for {} regimes", params.n())));
    }
    let mut b = params.beta0[z].clone();
    let mut a = params.a0[z].clone();
    for i in 0..d {
        b.axpy(y[i], &params.beta_lin[i], 1.0);
        a += &params.a_lin[i] * y[i];
    }
    for term in &params.lambda_terms {
        let l = term.lambda[z].eval(y.as_slice());
        b.axpy(l, &term.b, 1.0);
        a += &term.a * l;
    }
    let a = (&a + a.transpose()) * 0.5;
    Ok((b, a))
}

/// `b = sum Lambda_i b_i + beta_0 + sum beta_i y_i`, `a = sum Lambda_i a_i + A_0 + sum A_i y_i`.
pub fn assemble_drift_diffusion(y: &Vector, z: usize, params: &RateCurveParams) -> Result<(Vector, Matrix)> {
    let (b, a) = assemble_drift_diffusion_unchecked(y, z, params)?;
    let min_eigenvalue = a.symmetric_eigenvalues().min();
    if min_eigenvalue < -1e-12 * a.amax().max(1.0) {
        return Err(Error::NotPositiveSemidefinite { y: y.iter().copied().collect(), regime: z, min_eigenvalue });
    }
    Ok((b, a))
}

/// Full set of solved rate curves.
#[derive(Debug, Clone, PartialEq)]
pub struct RateCurveGrid {
    pub grid: Vec<f64>,
    pub v: Vec<Vector>,
    pub u: Vec<Vector>,
    pub du: Vec<Vector>,
    pub h: Vec<Vector>,
    pub wtilde: Vec<Vector>,
    pub c: Vec<Vector>,
    pub dc: Vec<Vector>,
}

impl RateCurveGrid {
    pub fn x_max(&self) -> f64 {
        *self.grid.last().unwrap()
    }
}

/// Riccati, `H`, `w~` and `c` in sequence; lambda terms must vanish on the solved `v`.
pub fn solve_rate_curves(params: &RateCurveParams, grid: &[f64]) -> Result<RateCurveGrid> {
    let ric = solve_riccati(params, grid)?;
    let tol = lambda_tolerance(&ric.v);
    for (index, residual) in check_lambda_consistency(&ric.v, &params.lambda_terms).into_iter().enumerate() {
        if residual > tol {
            return Err(Error::LambdaInconsistent { index, residual, tolerance: tol });
        }
    }
    let h = compute_h(&ric.v, &params.beta0, &params.a0)?;
    let dh: Vec<Vector> = ric.v.iter().zip(&ric.u).map(|(v, u)| params.dh_at(v, u)).collect();
    let h_of = |x: f64| {
        let v = hermite_eval(&ric.grid, &ric.v, &ric.u, x).expect("stage points stay inside the grid");
        params.h_at(&v)
    };
    let wtilde = solve_wtilde(h_of, &params.q, &params.c0, &ric.grid)?;
    let (c, dc) = extract_c(&wtilde, &h, &dh, &params.q, &params.c0)?;
    Ok(RateCurveGrid {
        grid: ric.grid,
        v: ric.v,
        u: ric.u,
        du: ric.du,
        h,
        wtilde,
        c,
        dc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{expm, quadrature, uniform_grid, vanishing_quadratics};
    use crate::presets;
    use crate::regime::validate_generator;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn scalar(beta: f64, a: f64, u0: f64) -> RateCurveParams {
        RateCurveParams {
            q: GeneratorMatrix::zeros(1),
            u0: Vector::from_element(1, u0),
            c0: Vector::from_element(1, 0.0),
            beta_lin: vec![Vector::from_element(1, beta)],
            a_lin: vec![Matrix::from_element(1, 1, a)],
            beta0: vec![Vector::zeros(1)],
            a0: vec![Matrix::zeros(1, 1)],
            lambda_terms: vec![],
        }
    }

    fn sup_rk4_vs_closed(p: &RateCurveParams, x_max: f64) -> f64 {
        let grid = uniform_grid(x_max, 1e-3).unwrap();
        let sol = solve_riccati(p, &grid).unwrap();
        grid.iter()
            .zip(&sol.u)
            .map(|(&x, u)| (u[0] - closed_form_rate_u(p, x).unwrap()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn rotation_example_reproduces_circle_with_reflected_start() {
        let mut p = presets::rates_rotation();
        p.u0 = Vector::from_vec(vec![-1.0, 0.0]);
        // 2 pi is not a multiple of the step; close the grid with one short cell
        let mut grid = uniform_grid((2000.0 * PI).floor() / 1000.0, 1e-3).unwrap();
        grid.push(2.0 * PI);
        let sol = solve_riccati(&p, &grid).unwrap();
        let err = grid
            .iter()
            .zip(&sol.v)
            .map(|(&x, v)| (v[0] + x.sin()).abs().max((v[1] - 1.0 + x.cos()).abs()))
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn rotation_example_with_unit_start() {
        let p = presets::rates_rotation();
        let grid = uniform_grid(6.0, 1e-3).unwrap();
        let sol = solve_riccati(&p, &grid).unwrap();
        for (&x, v) in grid.iter().zip(&sol.v) {
            assert!((v[0] - x.sin()).abs() < 1e-8);
            assert!((v[1] - (x.cos() - 1.0)).abs() < 1e-8);
        }
    }

    #[test]
    fn initial_conditions() {
        let p = presets::rates_two_regime();
        let sol = solve_rate_curves(&p, &uniform_grid(1.0, 1e-3).unwrap()).unwrap();
        assert_eq!(sol.v[0], Vector::zeros(2));
        assert_eq!(sol.u[0], p.u0);
        assert!(sol.h[0].amax() == 0.0);
        assert_eq!(sol.wtilde[0], Vector::from_element(2, 1.0));
        assert!((&sol.c[0] - &p.c0).amax() < 1e-12);
    }

    #[test]
    fn exponential_branch() {
        let p = scalar(0.5, 0.0, 1.0);
        assert!((closed_form_rate_u(&p, 2.0).unwrap() - std::f64::consts::E).abs() < 1e-15);
        let grid = uniform_grid(4.0, 1e-3).unwrap();
        let sol = solve_riccati(&p, &grid).unwrap();
        for (&x, v) in grid.iter().zip(&sol.v) {
            assert!((v[0] - 2.0 * ((0.5 * x).exp() - 1.0)).abs() < 1e-10);
        }
        assert!(sup_rk4_vs_closed(&p, 10.0) < 1e-7);
    }

    #[test]
    fn degenerate_branch() {
        // beta^2 + 2 u0 A = 0.25 - 0.25
        let p = scalar(0.5, -0.125, 1.0);
        assert!((closed_form_rate_u(&p, 0.0).unwrap() - 1.0).abs() < 1e-14);
        assert!(sup_rk4_vs_closed(&p, 0.9) < 1e-7);
        // solution stays finite past the interval: pole at 2/beta = 4
        assert!(sup_rk4_vs_closed(&p, 3.0) < 1e-7);
    }

    #[test]
    fn real_discriminant_branch() {
        let p = scalar(0.3, 0.4, 0.2);
        assert!((closed_form_rate_u(&p, 0.0).unwrap() - 0.2).abs() < 1e-14);
        assert!(sup_rk4_vs_closed(&p, 5.0) < 1e-7);
        let p = scalar(-0.7, -0.3, 0.4);
        assert!(sup_rk4_vs_closed(&p, 5.0) < 1e-7);
    }

    #[test]
    fn complex_discriminant_branch() {
        let p = scalar(0.3, -0.4, 0.5);
        assert!((closed_form_rate_u(&p, 0.0).unwrap() - 0.5).abs() < 1e-14);
        assert!(sup_rk4_vs_closed(&p, 2.0) < 1e-7);
    }

    #[test]
    fn zero_start_stays_zero() {
        let p = scalar(0.3, 0.4, 0.0);
        assert_eq!(closed_form_rate_u(&p, 3.0).unwrap(), 0.0);
        assert_eq!(sup_rk4_vs_closed(&p, 3.0), 0.0);
    }

    #[test]
    fn closed_form_rejects_two_factors() {
        assert!(matches!(closed_form_rate_u(&presets::rates_two_regime(), 1.0), Err(Error::UnsupportedDimension(_))));
    }

    #[test]
    fn riccati_blowup_is_located() {
        let p = scalar(0.0, -8.0, 1.0);
        // v' = 1 + 4 v^2 explodes at x = pi/4
        match solve_riccati(&p, &uniform_grid(2.0, 1e-3).unwrap()) {
            Err(Error::Blowup { x }) => assert!((x - PI / 4.0).abs() < 0.01, "{x}"),
            other => panic!("expected blowup, got {other:?}"),
        }
    }

    #[test]
    fn h_examples() {
        let v = vec![Vector::zeros(2), Vector::from_vec(vec![1.0, 2.0])];
        let h = compute_h(&v, &[Vector::from_vec(vec![0.5, 0.0])], &[Matrix::identity(2, 2)]).unwrap();
        assert_eq!(h[0][0], 0.0);
        assert!((h[1][0] + 2.0).abs() < 1e-15);
        let h = compute_h(&v, &[Vector::from_vec(vec![0.5, 0.25])], &[Matrix::zeros(2, 2)]).unwrap();
        assert!((h[1][0] - 1.0).abs() < 1e-15);
        assert!(compute_h(&v, &[Vector::zeros(3)], &[Matrix::zeros(3, 3)]).is_err());
    }

    #[test]
    fn wtilde_decoupled() {
        let c0 = Vector::from_vec(vec![0.3, -0.2, 1.0]);
        let grid = uniform_grid(5.0, 1e-3).unwrap();
        let w = solve_wtilde(|_| Vector::zeros(3), &GeneratorMatrix::zeros(3), &c0, &grid).unwrap();
        for (&x, w) in grid.iter().zip(&w) {
            for z in 0..3 {
                assert!((w[z] - (-c0[z] * x).exp()).abs() < 1e-10 * (-c0[z] * x).exp().max(1.0));
            }
        }
        let (c, _) = extract_c(&w, &vec![Vector::zeros(3); grid.len()], &vec![Vector::zeros(3); grid.len()], &GeneratorMatrix::zeros(3), &c0).unwrap();
        assert!(c.iter().all(|c| (c - &c0).amax() < 1e-12));
    }

    #[test]
    fn wtilde_matches_closed_form_for_shared_h() {
        let q = validate_generator(&Matrix::from_row_slice(2, 2, &[-1.0, 1.0, 2.0, -2.0])).unwrap();
        let c0 = Vector::from_vec(vec![1.0, 1.5]);
        let grid = uniform_grid(10.0, 1e-3).unwrap();
        let h = |x: f64| 0.3 * x.sin() + 0.1 * x;
        let int_h = |x: f64| 0.3 * (1.0 - x.cos()) + 0.05 * x * x;
        let w = solve_wtilde(|x| Vector::from_element(2, h(x)), &q, &c0, &grid).unwrap();
        let base = q.matrix() - Matrix::from_diagonal(&c0);
        for (&x, w) in grid.iter().zip(&w).step_by(250) {
            let exact = expm(&(&base * x)).unwrap() * Vector::from_element(2, 1.0) * (-int_h(x)).exp();
            assert!((w - &exact).amax() < 1e-8 * exact.amax().max(1.0));
        }
    }

    #[test]
    fn wtilde_positivity_violation_is_reported() {
        let q = validate_generator(&Matrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0])).unwrap();
        // one RK4 step of size 1 on this stiff coupled system overshoots below zero
        let grid = vec![0.0, 1.0, 2.0];
        let res = solve_wtilde(|_| Vector::zeros(2), &q, &Vector::from_vec(vec![0.0, 5.0]), &grid);
        assert!(matches!(res, Err(Error::PositivityViolation { regime: 0, .. })));
    }

    #[test]
    fn c_matches_log_derivative_of_wtilde() {
        let p = presets::rates_two_regime();
        let grid = uniform_grid(5.0, 1e-3).unwrap();
        let sol = solve_rate_curves(&p, &grid).unwrap();
        for z in 0..2 {
            let logw: Vec<f64> = sol.wtilde.iter().map(|w| w[z].ln()).collect();
            let c: Vec<f64> = sol.c.iter().map(|c| c[z]).collect();
            for k in [1000, 2500, 5000] {
                let integral = quadrature(&grid, &c, 0.0, grid[k]).unwrap();
                assert!((integral + logw[k]).abs() < 1e-9);
            }
            // dc against a central difference of c
            for k in [100, 2000, 4900] {
                let fd = (c[k + 1] - c[k - 1]) / 2e-3;
                assert!((fd - sol.dc[k][z]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn lambda_consistency_on_circle() {
        let mut p = presets::rates_rotation();
        p.u0 = Vector::from_vec(vec![-1.0, 0.0]);
        let sol = solve_riccati(&p, &uniform_grid(6.2, 1e-3).unwrap()).unwrap();
        let term = |b2: f64| LambdaTerm {
            b: Vector::from_vec(vec![0.0, b2]),
            a: Matrix::identity(2, 2) * 2.0,
            lambda: vec![Polynomial::default()],
        };
        let zero = LambdaTerm { b: Vector::zeros(2), a: Matrix::zeros(2, 2), lambda: vec![Polynomial::default()] };
        let res = check_lambda_consistency(&sol.v, &[term(2.0), term(2.1), zero]);
        assert!(res[0] <= 1e-9, "{}", res[0]);
        assert!(res[1] > 1e-3);
        assert!((res[1] - 0.2).abs() < 1e-6);
        assert_eq!(res[2], 0.0);
        assert!(res[0] <= lambda_tolerance(&sol.v));
    }

    #[test]
    fn inconsistent_lambda_term_rejected() {
        let mut p = presets::rates_rotation();
        p.u0 = Vector::from_vec(vec![-1.0, 0.0]);
        p.lambda_terms.push(LambdaTerm {
            b: Vector::from_vec(vec![0.0, 2.1]),
            a: Matrix::identity(2, 2) * 2.0,
            lambda: vec![Polynomial(vec![Monomial { coef: 1.0, powers: vec![0, 0] }])],
        });
        let res = solve_rate_curves(&p, &uniform_grid(6.0, 1e-3).unwrap());
        assert!(matches!(res, Err(Error::LambdaInconsistent { index: 0, .. })));
    }

    #[test]
    fn circle_has_one_vanishing_quadratic() {
        let mut p = presets::rates_rotation();
        p.u0 = Vector::from_vec(vec![-1.0, 0.0]);
        let sol = solve_riccati(&p, &uniform_grid(6.2, 1e-3).unwrap()).unwrap();
        let pts: Vec<Vector> = sol.v.iter().step_by(100).cloned().collect();
        let basis = vanishing_quadratics(&pts).unwrap();
        assert_eq!(basis.len(), 1);
    }

    #[test]
    fn assemble_two_regime_example() {
        let p = presets::rates_two_regime();
        let y0 = Vector::from_vec(vec![0.1, 0.2]);
        let (b, a) = assemble_drift_diffusion(&y0, 0, &p).unwrap();
        assert!((b[0] - 0.09).abs() < 1e-15);
        assert!((b[1] - 0.2).abs() < 1e-15);
        assert!((a[(0, 0)] - 0.04 * 0.1).abs() < 1e-15);
        assert!((a[(1, 1)] - 0.0225 * 0.2).abs() < 1e-15);
        let (b0, a0) = assemble_drift_diffusion(&Vector::zeros(2), 1, &p).unwrap();
        assert_eq!(b0, p.beta0[1]);
        assert_eq!(a0, p.a0[1]);
    }

    #[test]
    fn assemble_rejects_negative_diffusion() {
        let p = presets::rates_two_regime();
        let res = assemble_drift_diffusion(&Vector::from_vec(vec![-0.5, 0.2]), 1, &p);
        match res {
            Err(Error::NotPositiveSemidefinite { regime, y, .. }) => {
                assert_eq!(regime, 1);
                assert_eq!(y, vec![-0.5, 0.2]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn assemble_includes_lambda_terms() {
        let mut p = presets::rates_two_regime();
        p.lambda_terms.push(LambdaTerm {
            b: Vector::from_vec(vec![1.0, 0.0]),
            a: Matrix::identity(2, 2),
            lambda: vec![
                Polynomial(vec![Monomial { coef: 2.0, powers: vec![1, 0] }]),
                Polynomial(vec![Monomial { coef: 0.5, powers: vec![0, 0] }]),
            ],
        });
        let y = Vector::from_vec(vec![0.3, 0.1]);
        let (b, a) = assemble_drift_diffusion(&y, 0, &p).unwrap();
        let (b_aff, a_aff) = assemble_drift_diffusion(&y, 0, &presets::rates_two_regime()).unwrap();
        assert!((b[0] - b_aff[0] - 0.6).abs() < 1e-15);
        assert!((&a - &a_aff - Matrix::identity(2, 2) * 0.6).amax() < 1e-15);
    }

    #[test]
    fn validation_errors() {
        let mut p = presets::rates_two_regime();
        p.a_lin[0][(0, 1)] = 0.1;
        assert!(matches!(p.validate(), Err(Error::Domain(_))));
        let mut p = presets::rates_two_regime();
        p.c0 = Vector::zeros(3);
        assert!(matches!(p.validate(), Err(Error::Dimension(_))));
        let mut p = presets::rates_rotation();
        let t = LambdaTerm { b: Vector::zeros(2), a: Matrix::zeros(2, 2), lambda: vec![Polynomial::default()] };
        p.lambda_terms = vec![t.clone(); 7];
        assert!(matches!(p.validate(), Err(Error::Dimension(_))));
        p.lambda_terms = vec![t.clone()];
        p.lambda_terms[0].lambda[0] = Polynomial(vec![Monomial { coef: 1.0, powers: vec![3, 2] }]);
        assert!(matches!(p.validate(), Err(Error::Domain(_))));
        p.lambda_terms = vec![t; 6];
        assert!(p.validate().is_ok());
    }

    #[test]
    fn polynomial_eval() {
        let p = Polynomial(vec![
            Monomial { coef: 2.0, powers: vec![2, 0] },
            Monomial { coef: -1.0, powers: vec![1, 1] },
            Monomial { coef: 0.5, powers: vec![0, 0] },
        ]);
        assert_eq!(p.degree(), 2);
        assert!((p.eval(&[3.0, 2.0]) - (18.0 - 6.0 + 0.5)).abs() < 1e-15);
        assert_eq!(Polynomial::default().eval(&[1.0]), 0.0);
    }

    fn random_params(rng: &mut ChaCha8Rng) -> RateCurveParams {
        let n = rng.random_range(1..=3);
        let d = rng.random_range(1..=2);
        let mut q = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    q[(i, j)] = rng.random_range(0.0..2.0);
                }
            }
            q[(i, i)] = -(0..n).filter(|&j| j != i).map(|j| q[(i, j)]).sum::<f64>();
        }
        let vec = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| Vector::from_fn(d, |_, _| rng.random_range(lo..hi));
        let psd = |rng: &mut ChaCha8Rng, s: f64| {
            let m = Matrix::from_fn(d, d, |_, _| rng.random_range(-s..s));
            &m * m.transpose()
        };
        RateCurveParams {
            q: validate_generator(&q).unwrap(),
            u0: vec(rng, 0.1, 1.0),
            c0: Vector::from_fn(n, |_, _| rng.random_range(-0.5..2.0)),
            beta_lin: (0..d).map(|_| vec(rng, -1.0, 0.2)).collect(),
            a_lin: (0..d).map(|_| psd(rng, 0.1)).collect(),
            beta0: (0..n).map(|_| vec(rng, -0.5, 0.5)).collect(),
            a0: (0..n).map(|_| psd(rng, 0.2)).collect(),
            lambda_terms: vec![],
        }
    }

    #[test]
    fn random_configs_keep_wtilde_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let grid = uniform_grid(5.0, 1e-3).unwrap();
        for _ in 0..50 {
            let p = random_params(&mut rng);
            let sol = solve_rate_curves(&p, &grid).unwrap();
            assert!(sol.wtilde.iter().all(|w| w.iter().all(|&x| x > 0.0)));
            assert!((&sol.c[0] - &p.c0).amax() <= 1e-12);
        }
    }

    #[test]
    fn two_regime_snapshot() {
        // frozen after the residual and step-halving checks
        let p = presets::rates_two_regime();
        let sol = solve_rate_curves(&p, &uniform_grid(10.0, 1e-3).unwrap()).unwrap();
        let expected = [
            (1000, [0.5911556221917701, 0.7282541216034334], [0.30196161265924976, 0.2690754066054911], [1.3273848019246426, 1.2919741193759229]),
            (5000, [0.9695855967418322, 2.4825860027778126], [0.0005609995198722912, 0.0005809615909709569], [1.7091927559437332, 1.6928500947969443]),
            (10000, [0.9786303702726997, 2.7674488869040292], [8.993249833201831e-8, 9.589723223719053e-8], [1.7639101002490603, 1.7627709022781506]),
        ];
        for (k, v, w, c) in expected {
            assert!((&sol.v[k] - Vector::from_row_slice(&v)).amax() < 1e-12);
            for (wz, expected) in sol.wtilde[k].iter().zip(w) {
                assert!((wz / expected - 1.0).abs() < 1e-10);
            }
            assert!((&sol.c[k] - Vector::from_row_slice(&c)).amax() < 1e-12);
        }
    }

    #[test]
    fn two_regime_step_halving() {
        let p = presets::rates_two_regime();
        let coarse = solve_rate_curves(&p, &uniform_grid(10.0, 1e-3).unwrap()).unwrap();
        let fine = solve_rate_curves(&p, &uniform_grid(10.0, 5e-4).unwrap()).unwrap();
        for k in 0..coarse.grid.len() {
            assert!((&coarse.v[k] - &fine.v[2 * k]).amax() < 1e-10);
            assert!((&coarse.c[k] - &fine.c[2 * k]).amax() < 1e-9);
        }
    }
}
