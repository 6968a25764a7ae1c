//! Reference parameter sets: the two-regime, two-factor CIR-type example for
//! both markets, and the one-regime rotation example.

use crate::dynamics::{DiffusionSpec, DriftSpec, VolSpec};
use crate::energy::EnergyCurveParams;
use crate::linalg::{Matrix, Vector};
use crate::rates::RateCurveParams;
use crate::regime::{validate_generator, GeneratorMatrix};

pub const KAPPA1: f64 = 0.9;
pub const KAPPA2: f64 = 0.5;
pub const VOL1: f64 = 0.2;
pub const VOL2: f64 = 0.15;
pub const THETA: [f64; 2] = [0.6, 0.1];
pub const Y0: [f64; 2] = [0.1, 0.2];
pub const DISCOUNT_R: f64 = 0.1;

pub fn two_regime_generator() -> GeneratorMatrix {
    validate_generator(&Matrix::from_row_slice(2, 2, &[-1.0, 1.0, 2.0, -2.0])).expect("valid generator")
}

fn beta0() -> Vec<Vector> {
    THETA.iter().map(|&th| Vector::from_vec(vec![0.0, KAPPA2 * th])).collect()
}

fn beta_lin() -> Vec<Vector> {
    vec![Vector::from_vec(vec![-KAPPA1, 0.0]), Vector::from_vec(vec![KAPPA1, -KAPPA2])]
}

fn sqrt_vol() -> VolSpec {
    let s1 = Matrix::from_row_slice(2, 2, &[VOL1, 0.0, 0.0, 0.0]);
    let s2 = Matrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, VOL2]);
    VolSpec::AffineSqrt {
        sigma0: vec![Matrix::zeros(2, 2); 2],
        sigma_lin: vec![vec![s1, s2]; 2],
    }
}

pub fn energy_two_regime() -> EnergyCurveParams {
    EnergyCurveParams {
        r: DISCOUNT_R,
        q: two_regime_generator(),
        beta0: beta0(),
        beta_lin: vec![beta_lin(); 2],
        u0: Matrix::from_column_slice(2, 2, &[0.9, 0.6, 0.3, 0.2]),
        c0: Vector::from_vec(vec![1.0, 1.5]),
    }
}

pub fn energy_two_regime_diffusion() -> DiffusionSpec {
    DiffusionSpec {
        drift: DriftSpec::Affine { beta0: beta0(), beta_lin: vec![beta_lin(); 2] },
        vol: sqrt_vol(),
        y0: Vector::from_row_slice(&Y0),
        z0: 0,
    }
}

pub fn rates_two_regime() -> RateCurveParams {
    RateCurveParams {
        q: two_regime_generator(),
        u0: Vector::from_vec(vec![0.9, 0.6]),
        c0: Vector::from_vec(vec![1.0, 1.5]),
        beta_lin: beta_lin(),
        a_lin: vec![
            Matrix::from_row_slice(2, 2, &[VOL1 * VOL1, 0.0, 0.0, 0.0]),
            Matrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, VOL2 * VOL2]),
        ],
        beta0: beta0(),
        a0: vec![Matrix::zeros(2, 2); 2],
        lambda_terms: vec![],
    }
}

pub fn rates_two_regime_diffusion() -> DiffusionSpec {
    DiffusionSpec {
        drift: DriftSpec::Affine { beta0: beta0(), beta_lin: vec![beta_lin(); 2] },
        vol: sqrt_vol(),
        y0: Vector::from_row_slice(&Y0),
        z0: 0,
    }
}

/// One regime, no diffusion, drift matrix `B = [[0, -1], [1, 0]]` whose columns
/// are `beta_1` and `beta_2`, and `u0 = e_1`.
pub fn rates_rotation() -> RateCurveParams {
    RateCurveParams {
        q: GeneratorMatrix::zeros(1),
        u0: Vector::from_vec(vec![1.0, 0.0]),
        c0: Vector::zeros(1),
        beta_lin: vec![Vector::from_vec(vec![0.0, 1.0]), Vector::from_vec(vec![-1.0, 0.0])],
        a_lin: vec![Matrix::zeros(2, 2); 2],
        beta0: vec![Vector::zeros(2)],
        a0: vec![Matrix::zeros(2, 2)],
        lambda_terms: vec![],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        energy_two_regime().validate().unwrap();
        rates_two_regime().validate().unwrap();
        rates_rotation().validate().unwrap();
        energy_two_regime_diffusion().validate(2).unwrap();
        rates_two_regime_diffusion().validate(2).unwrap();
    }

    #[test]
    fn energy_drift_matches_sde() {
        let p = energy_two_regime();
        let y = Vector::from_row_slice(&Y0);
        let b = p.drift(&y, 0);
        assert!((b[0] - KAPPA1 * (Y0[1] - Y0[0])).abs() < 1e-15);
        assert!((b[1] - KAPPA2 * (THETA[0] - Y0[1])).abs() < 1e-15);
    }
}
