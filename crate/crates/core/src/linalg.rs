//! Dimension-generic numerical kernels: matrix exponential, fixed-step RK4,
//! composite Simpson quadrature on stored grids, and the nullspace of the
//! quadratic-monomial design matrix.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default RK4 step (years).
pub const DEFAULT_STEP: f64 = 1e-3;

/// Relative singular-value cutoff for the numerical nullspace.
pub const NULLSPACE_TOL: f64 = 1e-8;

/// Solutions whose magnitude exceeds this are treated as having blown up.
const BLOWUP_GUARD: f64 = 1e100;

// Padé [13/13] coefficients and the 1-norm bound below which no scaling is needed.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

pub(crate) fn check_finite_matrix(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} has non-finite entries")))
    }
}

pub(crate) fn check_finite_vector(v: &Vector, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} has non-finite entries")))
    }
}

fn one_norm(m: &Matrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a degree-13 Padé approximant.
pub fn expm(m: &Matrix) -> Result<Matrix> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "expm needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    check_finite_matrix(m, "expm input")?;
    let n = m.nrows();
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }

    let norm = one_norm(m);
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let a = m * 2f64.powi(-s);

    let ident = Matrix::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &PADE13;

    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &ident * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &ident * b[0];

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .ok_or_else(|| Error::Domain("singular Padé denominator in expm".into()))?;
    for _ in 0..s {
        r = &r * &r;
    }
    check_finite_matrix(&r, "expm result")?;
    Ok(r)
}

/// Checks that a grid is non-empty, finite and strictly increasing.
pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Domain("empty grid".into()));
    }
    if grid.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("grid has non-finite nodes".into()));
    }
    if let Some(w) = grid.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::Domain(format!(
            "grid not strictly increasing at {} -> {}",
            w[0], w[1]
        )));
    }
    Ok(())
}

/// Uniform grid `0, step, ..., x_max`. `x_max` must be an integer multiple of `step`.
pub fn uniform_grid(x_max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !step.is_finite() || !(x_max >= 0.0) || !x_max.is_finite() {
        return Err(Error::Domain(format!(
            "bad grid: x_max = {x_max}, step = {step}"
        )));
    }
    let m = (x_max / step).round();
    if (m * step - x_max).abs() > 1e-9 * x_max.max(1.0) {
        return Err(Error::Domain(format!(
            "x_max = {x_max} is not a multiple of step = {step}"
        )));
    }
    let m = m as usize;
    Ok((0..=m).map(|i| i as f64 * step).collect())
}

/// Vector-valued function sampled on a strictly increasing grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: Vec<f64>,
    pub values: Vec<Vector>,
}

impl GridFunction {
    pub fn new(grid: Vec<f64>, values: Vec<Vector>) -> Result<Self> {
        validate_grid(&grid)?;
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "{} values for {} grid nodes",
                values.len(),
                grid.len()
            )));
        }
        let dim = values[0].len();
        if values.iter().any(|v| v.len() != dim) {
            return Err(Error::Dimension("values of varying dimension".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, |v| v.len())
    }

    pub fn last(&self) -> &Vector {
        self.values.last().expect("grid functions are non-empty")
    }

    /// Component `k` at every node.
    pub fn component(&self, k: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[k]).collect()
    }

    /// Linear interpolation between nodes.
    pub fn eval(&self, x: f64) -> Result<Vector> {
        let (i, s) = locate(&self.grid, x)?;
        if s == 0.0 {
            return Ok(self.values[i].clone());
        }
        Ok(&self.values[i] * (1.0 - s) + &self.values[i + 1] * s)
    }

    /// Componentwise [`quadrature`] over `[a, b]`.
    pub fn integrate(&self, a: f64, b: f64) -> Result<Vector> {
        let mut out = Vector::zeros(self.dim());
        for k in 0..self.dim() {
            out[k] = quadrature(&self.grid, &self.component(k), a, b)?;
        }
        Ok(out)
    }
}

fn span_tol(grid: &[f64]) -> f64 {
    let scale = grid[0].abs().max(grid[grid.len() - 1].abs()).max(1.0);
    1e-12 * scale
}

/// Finds cell `i` and weight `s` in `[0, 1)` with `x = (1-s) grid[i] + s grid[i+1]`.
/// At the right end returns `(m, 0)`.
pub fn locate(grid: &[f64], x: f64) -> Result<(usize, f64)> {
    let m = grid.len() - 1;
    let tol = span_tol(grid);
    if !x.is_finite() || x < grid[0] - tol || x > grid[m] + tol {
        return Err(Error::Range(format!(
            "x = {x} outside grid span [{}, {}]",
            grid[0], grid[m]
        )));
    }
    if m == 0 || x <= grid[0] {
        return Ok((0, 0.0));
    }
    if x >= grid[m] {
        return Ok((m, 0.0));
    }
    // first index with grid[j] > x, so grid[j-1] <= x < grid[j]
    let j = grid.partition_point(|&g| g <= x);
    let i = j - 1;
    let s = (x - grid[i]) / (grid[i + 1] - grid[i]);
    Ok((i, s))
}

/// Cubic Hermite interpolation from nodal values and derivatives.
pub fn hermite_eval(grid: &[f64], values: &[Vector], derivs: &[Vector], x: f64) -> Result<Vector> {
    let (i, s) = locate(grid, x)?;
    if s == 0.0 {
        return Ok(values[i].clone());
    }
    let h = grid[i + 1] - grid[i];
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    Ok(&values[i] * h00 + &derivs[i] * (h10 * h) + &values[i + 1] * h01 + &derivs[i + 1] * (h11 * h))
}

/// Classical fourth-order Runge–Kutta, one step per grid interval.
///
/// `rhs(x, y)` is the vector field. A non-finite stage value or a solution
/// exceeding 1e100 in magnitude is reported as [`Error::Blowup`] at the start
/// of the offending step.
pub fn rk4_solve<F>(mut rhs: F, y0: &Vector, grid: &[f64]) -> Result<GridFunction>
where
    F: FnMut(f64, &Vector) -> Vector,
{
    validate_grid(grid)?;
    check_finite_vector(y0, "initial value")?;
    let mut values = Vec::with_capacity(grid.len());
    values.push(y0.clone());
    let finite = |v: &Vector| v.iter().all(|x| x.is_finite());

    for w in grid.windows(2) {
        let (x, h) = (w[0], w[1] - w[0]);
        let y = values.last().unwrap();
        let k1 = rhs(x, y);
        if !finite(&k1) {
            return Err(Error::Blowup { x });
        }
        let k2 = rhs(x + 0.5 * h, &(y + &k1 * (0.5 * h)));
        let k3 = rhs(x + 0.5 * h, &(y + &k2 * (0.5 * h)));
        let k4 = rhs(x + h, &(y + &k3 * h));
        let next = y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if !finite(&next) || next.amax() > BLOWUP_GUARD {
            return Err(Error::Blowup { x });
        }
        values.push(next);
    }
    Ok(GridFunction {
        grid: grid.to_vec(),
        values,
    })
}

/// Exact integral over `[a, b]` of the quadratic through three nodes.
fn quadratic_integral(x: [f64; 3], f: [f64; 3], a: f64, b: f64) -> f64 {
    let (h0, h2) = (x[0] - x[1], x[2] - x[1]);
    let d0 = (f[0] - f[1]) / h0;
    let d2 = (f[2] - f[1]) / h2;
    let c = (d0 - d2) / (h0 - h2);
    let bcoef = d0 - c * h0;
    let (ta, tb) = (a - x[1], b - x[1]);
    f[1] * (tb - ta) + 0.5 * bcoef * (tb * tb - ta * ta) + c / 3.0 * (tb * tb * tb - ta * ta * ta)
}

/// Integral over `[a, b]` inside cell `i` of the quadratic through the node
/// triple anchored at the even node `2 floor(i/2)`. Full pairs of cells thus
/// sum to Simpson's rule and every cell is treated the same regardless of the
/// integration bounds.
fn cell_integral(grid: &[f64], f: &[f64], i: usize, a: f64, b: f64) -> f64 {
    let m = grid.len() - 1;
    if m == 1 {
        let slope = (f[1] - f[0]) / (grid[1] - grid[0]);
        let fa = f[0] + slope * (a - grid[0]);
        let fb = f[0] + slope * (b - grid[0]);
        return 0.5 * (fa + fb) * (b - a);
    }
    let k = (i - i % 2).min(m - 2);
    quadratic_integral(
        [grid[k], grid[k + 1], grid[k + 2]],
        [f[k], f[k + 1], f[k + 2]],
        a,
        b,
    )
}

/// Composite Simpson's rule for nodal values `f` on `grid`, restricted to `[a, b]`.
///
/// Partial end cells are integrated with the local quadratic interpolant, so the
/// rule is exact for polynomials of degree two.
pub fn quadrature(grid: &[f64], f: &[f64], a: f64, b: f64) -> Result<f64> {
    if grid.len() != f.len() {
        return Err(Error::Dimension(format!(
            "{} values for {} grid nodes",
            f.len(),
            grid.len()
        )));
    }
    if grid.len() < 2 {
        return Err(Error::InsufficientData("quadrature needs at least two nodes".into()));
    }
    if !(a <= b) {
        return Err(Error::Range(format!("quadrature bounds reversed: [{a}, {b}]")));
    }
    let tol = span_tol(grid);
    let m = grid.len() - 1;
    if a < grid[0] - tol || b > grid[m] + tol {
        return Err(Error::Range(format!(
            "[{a}, {b}] outside grid span [{}, {}]",
            grid[0], grid[m]
        )));
    }
    let a = a.clamp(grid[0], grid[m]);
    let b = b.clamp(grid[0], grid[m]);
    if a == b {
        return Ok(0.0);
    }

    // snap bounds that coincide with nodes
    let snap = |x: f64| -> f64 {
        let (i, _) = locate(grid, x).expect("bounds already checked");
        if i < m && (grid[i + 1] - x).abs() <= tol {
            grid[i + 1]
        } else if (x - grid[i]).abs() <= tol {
            grid[i]
        } else {
            x
        }
    };
    let (a, b) = (snap(a), snap(b));
    let (ia, _) = locate(grid, a).expect("bounds already checked");
    let (ib, sb) = locate(grid, b).expect("bounds already checked");
    let last_cell = if sb == 0.0 { ib.saturating_sub(1) } else { ib };
    let mut total = 0.0;
    for i in ia.min(m - 1)..=last_cell.max(ia.min(m - 1)) {
        let lo = a.max(grid[i]);
        let hi = b.min(grid[i + 1]);
        if hi > lo {
            total += cell_integral(grid, f, i, lo, hi);
        }
    }
    Ok(total)
}

/// Number of monomials `{1, y_i, y_i y_j (i <= j)}` in `d` variables.
pub fn quadratic_monomial_count(d: usize) -> usize {
    1 + d + d * (d + 1) / 2
}

/// Monomials `1, y_1..y_d, y_1 y_1, y_1 y_2, .., y_d y_d` evaluated at `p`.
pub fn quadratic_monomials(p: &[f64]) -> Vec<f64> {
    let d = p.len();
    let mut out = Vec::with_capacity(quadratic_monomial_count(d));
    out.push(1.0);
    out.extend_from_slice(p);
    for i in 0..d {
        for j in i..d {
            out.push(p[i] * p[j]);
        }
    }
    out
}

/// Evaluates the quadratic polynomial with coefficients in [`quadratic_monomials`] order.
pub fn eval_quadratic(coeffs: &[f64], p: &[f64]) -> f64 {
    quadratic_monomials(p)
        .iter()
        .zip(coeffs)
        .map(|(m, c)| m * c)
        .sum()
}

/// Orthonormal basis of the quadratic polynomials vanishing (numerically) on
/// `points`: right singular vectors of the monomial design matrix whose
/// singular values fall below `NULLSPACE_TOL * sigma_max`.
pub fn vanishing_quadratics(points: &[Vector]) -> Result<Vec<Vector>> {
    if points.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 points, got {}",
            points.len()
        )));
    }
    let d = points[0].len();
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::Dimension("points of varying dimension".into()));
    }
    for p in points {
        check_finite_vector(p, "point")?;
    }
    let cols = quadratic_monomial_count(d);
    // pad with zero rows so the SVD yields a full set of right singular vectors
    let rows = points.len().max(cols);
    let mut design = Matrix::zeros(rows, cols);
    for (r, p) in points.iter().enumerate() {
        for (c, v) in quadratic_monomials(p.as_slice()).into_iter().enumerate() {
            design[(r, c)] = v;
        }
    }
    let svd = design.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let sigma_max = svd.singular_values.max();
    if sigma_max == 0.0 {
        return Ok((0..cols).map(|k| Vector::from_fn(cols, |i, _| f64::from(u8::from(i == k)))).collect());
    }
    Ok(svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s < NULLSPACE_TOL * sigma_max)
        .map(|(k, _)| v_t.row(k).transpose())
        .collect())
}
