//! Shared fixtures for the benchmarks.

use nalgebra::{DMatrix, DVector};
use ofspi_core::excitation::{build_regression, collect, ExcitationSpec, RegressionData};
use ofspi_core::learner::SpiConfig;
use ofspi_core::plant::{LtiSystem, SimulatedPlant};
use ofspi_core::reconstruction::FilterBank;
use ofspi_core::Complex;

/// Filter bank with roots `-0.1, -0.2, -0.3` for the single-input,
/// single-output power system.
pub fn demo_bank() -> FilterBank {
    let roots: Vec<Complex<f64>> = [-0.1, -0.2, -0.3].iter().map(|&r| r.into()).collect();
    FilterBank::from_roots(&roots, 1, 1).expect("stable roots")
}

/// 200-sample demo regression starting from `x(0) = [5, 5, 5]`.
pub fn demo_regression() -> RegressionData {
    let mut plant = SimulatedPlant::new(LtiSystem::power_system(), DVector::from_element(3, 5.0))
        .expect("valid state");
    let log = collect(
        &mut plant,
        demo_bank(),
        &ExcitationSpec::default_for(1, 1),
        50,
        250,
    )
    .expect("collect");
    build_regression(&log).expect("nonempty log")
}

pub fn demo_config(delta: f64) -> SpiConfig {
    SpiConfig::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1), delta)
}

/// Deterministic Schur matrix of size `n` with spectral radius below 0.95.
pub fn schur_matrix(n: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |i, j| (((i * 31 + j * 17) % 13) as f64 - 6.0) / 13.0);
    let rho = ofspi_core::plant::spectral_radius(&m).expect("eigenvalues");
    m * (0.9 / rho.max(1e-12))
}
