//! Finite-state continuous-time Markov chain driving the regime switches.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{check_finite_matrix, expm, Matrix};

/// Absolute tolerance on generator row sums.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Validated intensity matrix: non-negative off-diagonal rates, zero row sums.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix(Matrix);

impl GeneratorMatrix {
    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    /// Total exit intensity `-q_ii` of regime `i`.
    pub fn exit_rate(&self, i: usize) -> f64 {
        -self.0[(i, i)]
    }

    /// Generator with no switching (every regime absorbing).
    pub fn zeros(n: usize) -> Self {
        GeneratorMatrix(Matrix::zeros(n, n))
    }
}

impl TryFrom<Matrix> for GeneratorMatrix {
    type Error = Error;

    fn try_from(q: Matrix) -> Result<Self> {
        validate_generator(&q)
    }
}

pub fn validate_generator(q: &Matrix) -> Result<GeneratorMatrix> {
    if !q.is_square() || q.nrows() == 0 {
        return Err(Error::Dimension(format!(
            "generator must be square and non-empty, got {}x{}",
            q.nrows(),
            q.ncols()
        )));
    }
    check_finite_matrix(q, "generator")?;
    let n = q.nrows();
    for i in 0..n {
        for j in 0..n {
            if i != j && q[(i, j)] < 0.0 {
                return Err(Error::InvalidIntensity {
                    row: i,
                    col: j,
                    value: q[(i, j)],
                });
            }
        }
        let sum: f64 = q.row(i).iter().sum();
        if sum.abs() > ROW_SUM_TOL {
            return Err(Error::NotConservative { row: i, sum });
        }
    }
    Ok(GeneratorMatrix(q.clone()))
}

/// `P(t) = exp(t Q)`; row `i` is the law of `Z_t` given `Z_0 = i`.
pub fn transition_probabilities(q: &GeneratorMatrix, t: f64) -> Result<Matrix> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("transition time must be >= 0, got {t}")));
    }
    expm(&(q.matrix() * t))
}

/// One realisation of the chain on `[0, horizon]`.
///
/// `states[0]` holds before the first jump and `states[k + 1]` after
/// `jump_times[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimePath {
    pub jump_times: Vec<f64>,
    pub states: Vec<usize>,
    pub horizon: f64,
}

impl RegimePath {
    pub fn constant(z0: usize, horizon: f64) -> Self {
        RegimePath {
            jump_times: Vec::new(),
            states: vec![z0],
            horizon,
        }
    }

    /// Right-continuous regime at `t`.
    pub fn state_at(&self, t: f64) -> Result<usize> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::Range(format!(
                "t = {t} outside [0, {}]",
                self.horizon
            )));
        }
        let k = self.jump_times.partition_point(|&s| s <= t);
        Ok(self.states[k])
    }

    pub fn final_state(&self) -> usize {
        *self.states.last().expect("paths hold at least the initial state")
    }
}

/// Event-driven sampling: exponential holding times by inverse CDF, then the
/// next regime with probability `q_ij / -q_ii`.
pub fn sample_regime_path<R: Rng + ?Sized>(
    q: &GeneratorMatrix,
    z0: usize,
    horizon: f64,
    rng: &mut R,
) -> Result<RegimePath> {
    let n = q.n();
    if z0 >= n {
        return Err(Error::Domain(format!("initial regime {z0} out of range for {n} regimes")));
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::Domain(format!("horizon must be > 0, got {horizon}")));
    }
    let mut path = RegimePath::constant(z0, horizon);
    let mut t = 0.0;
    let mut state = z0;
    loop {
        let lambda = q.exit_rate(state);
        if lambda <= 0.0 {
            break;
        }
        let u: f64 = rng.random();
        t += -(1.0 - u).ln() / lambda;
        if t > horizon {
            break;
        }
        let target = rng.random::<f64>() * lambda;
        let mut acc = 0.0;
        let mut next = None;
        for j in (0..n).filter(|&j| j != state) {
            let rate = q.rate(state, j);
            if rate <= 0.0 {
                continue;
            }
            acc += rate;
            next = Some(j);
            if target < acc {
                break;
            }
        }
        // `next` is set because lambda > 0 implies some positive off-diagonal rate
        state = next.expect("positive exit rate");
        path.jump_times.push(t);
        path.states.push(state);
    }
    Ok(path)
}
