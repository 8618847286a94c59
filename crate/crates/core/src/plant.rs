//! Ground-truth discrete-time LTI plant `x+ = A x + B u`, `y = C x`.
//!
//! The learner only ever sees a plant through [`IoPlant`], which maps an
//! input to the current output and advances time. The matrices and the hidden
//! state are crate-private; outside the crate they are reachable only through
//! [`crate::oracle`].

use nalgebra::{Complex, DMatrix, DVector, Schur};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpiError};
use crate::linalg::rank_with_tolerance;

/// Relative singular-value cutoff for the controllability / observability
/// rank tests.
pub const ASSUMPTION_RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() {
            return Err(SpiError::NotSquare {
                rows: a.nrows(),
                cols: a.ncols(),
            });
        }
        if b.nrows() != n {
            return Err(SpiError::dim("B rows", n, b.nrows()));
        }
        if c.ncols() != n {
            return Err(SpiError::dim("C cols", n, c.ncols()));
        }
        if n == 0 || b.ncols() == 0 || c.nrows() == 0 {
            return Err(SpiError::dim(
                "system dimensions",
                "n, m, p >= 1",
                format!("n={n} m={} p={}", b.ncols(), c.nrows()),
            ));
        }
        if a.iter()
            .chain(b.iter())
            .chain(c.iter())
            .any(|v| !v.is_finite())
        {
            return Err(SpiError::NonFinite("system matrices"));
        }
        Ok(Self { a, b, c })
    }

    /// Discretized three-state power system with a single input and the first
    /// state measured. Open-loop spectral radius is about 1.0176.
    pub fn power_system() -> Self {
        let a = DMatrix::from_row_slice(
            3,
            3,
            &[
                0.8825, 0.0014, 0.0470, //
                0.0894, 0.9049, 0.0023, //
                0.0028, 0.0571, 0.9995,
            ],
        );
        let b = DMatrix::from_column_slice(3, 1, &[0.0001, 0.1190, 0.0036]);
        let c = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        Self { a, b, c }
    }

    /// Looks up a built-in preset by name.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "power_system" => Some(Self::power_system()),
            _ => None,
        }
    }

    pub const PRESETS: &'static [&'static str] = &["power_system"];

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub(crate) fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub(crate) fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub(crate) fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub(crate) x: DVector<f64>,
    pub k: usize,
}

impl PlantState {
    pub fn new(x: DVector<f64>) -> Result<Self> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SpiError::NonFinite("plant state"));
        }
        Ok(Self { x, k: 0 })
    }

    pub fn zero(n: usize) -> Self {
        Self {
            x: DVector::zeros(n),
            k: 0,
        }
    }
}

/// One plant transition. The output is taken from the pre-step state.
pub fn step(
    sys: &LtiSystem,
    state: &PlantState,
    u: &DVector<f64>,
) -> Result<(PlantState, DVector<f64>)> {
    if u.len() != sys.input_dim() {
        return Err(SpiError::dim("plant input", sys.input_dim(), u.len()));
    }
    if state.x.len() != sys.state_dim() {
        return Err(SpiError::dim("plant state", sys.state_dim(), state.x.len()));
    }
    let y = &sys.c * &state.x;
    let x = &sys.a * &state.x + &sys.b * u;
    Ok((PlantState { x, k: state.k + 1 }, y))
}

/// What a data-driven learner is allowed to do with a plant.
pub trait IoPlant {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// Applies `u(k)`, returns `y(k)`, and advances to `k + 1`.
    fn apply(&mut self, u: &DVector<f64>) -> Result<DVector<f64>>;
}

/// An [`LtiSystem`] together with its hidden state.
#[derive(Debug, Clone)]
pub struct SimulatedPlant {
    sys: LtiSystem,
    state: PlantState,
}

impl SimulatedPlant {
    pub fn new(sys: LtiSystem, x0: DVector<f64>) -> Result<Self> {
        if x0.len() != sys.state_dim() {
            return Err(SpiError::dim("initial state", sys.state_dim(), x0.len()));
        }
        Ok(Self {
            state: PlantState::new(x0)?,
            sys,
        })
    }

    pub fn time(&self) -> usize {
        self.state.k
    }

    pub(crate) fn state(&self) -> &PlantState {
        &self.state
    }
}

impl IoPlant for SimulatedPlant {
    fn input_dim(&self) -> usize {
        self.sys.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.sys.output_dim()
    }

    fn apply(&mut self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let (next, y) = step(&self.sys, &self.state, u)?;
        self.state = next;
        Ok(y)
    }
}

/// All eigenvalues of a square matrix.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    if !m.is_square() {
        return Err(SpiError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(SpiError::NonFinite("eigenvalue input"));
    }
    if m.is_empty() {
        return Ok(Vec::new());
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, 100_000).ok_or(SpiError::EigenFailure)?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(m)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assumption1Report {
    pub controllable: bool,
    pub observable: bool,
}

impl Assumption1Report {
    pub fn holds(&self) -> bool {
        self.controllable && self.observable
    }
}

/// `[B, AB, ..., A^{n-1}B]`.
pub fn controllability_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let m = b.ncols();
    let mut out = DMatrix::zeros(n, n * m);
    let mut blk = b.clone();
    for i in 0..n {
        out.view_mut((0, i * m), (n, m)).copy_from(&blk);
        blk = a * blk;
    }
    out
}

/// Controllability and observability via rank tests at [`ASSUMPTION_RANK_TOL`].
pub fn check_assumption1(sys: &LtiSystem) -> Assumption1Report {
    let n = sys.state_dim();
    let ctrb = controllability_matrix(&sys.a, &sys.b);
    // observability of (A, C) is controllability of (A^T, C^T)
    let obsv = controllability_matrix(&sys.a.transpose(), &sys.c.transpose());
    Assumption1Report {
        controllable: rank_with_tolerance(&ctrb, ASSUMPTION_RANK_TOL) == n,
        observable: rank_with_tolerance(&obsv, ASSUMPTION_RANK_TOL) == n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reconstruction::companion_from_roots;

    fn scalar(a: f64, b: f64, c: f64) -> LtiSystem {
        LtiSystem::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, c),
        )
        .unwrap()
    }

    #[test]
    fn step_examples() {
        let sys = LtiSystem::power_system();
        let (s, y) = step(&sys, &PlantState::zero(3), &DVector::zeros(1)).unwrap();
        assert_eq!(s.x, DVector::zeros(3));
        assert_eq!(y, DVector::zeros(1));

        let s0 = PlantState::new(DVector::from_element(3, 5.0)).unwrap();
        let (_, y) = step(&sys, &s0, &DVector::zeros(1)).unwrap();
        assert_eq!(y[0], 5.0);

        let sys = scalar(0.5, 1.0, 1.0);
        let s0 = PlantState::new(DVector::from_element(1, 2.0)).unwrap();
        let (s1, y) = step(&sys, &s0, &DVector::from_element(1, 1.0)).unwrap();
        assert_eq!(s1.x[0], 2.0);
        assert_eq!(y[0], 2.0);
        assert_eq!(s1.k, 1);

        assert!(matches!(
            step(&sys, &s0, &DVector::zeros(2)),
            Err(SpiError::Dimension { .. })
        ));
    }

    #[test]
    fn rejects_inconsistent_dimensions() {
        assert!(LtiSystem::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(3, 1),
            DMatrix::zeros(1, 2)
        )
        .is_err());
        assert!(LtiSystem::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(1, 3)
        )
        .is_err());
        assert!(LtiSystem::new(
            DMatrix::zeros(2, 3),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(1, 3)
        )
        .is_err());
    }

    #[test]
    fn spectral_radius_examples() {
        let rho = spectral_radius(LtiSystem::power_system().a()).unwrap();
        assert!((rho - 1.0176).abs() < 1e-3, "rho = {rho}");
        assert!((spectral_radius(&DMatrix::identity(3, 3)).unwrap() - 1.0).abs() < 1e-14);
        let mr = companion_from_roots(&[(-0.1).into(), (-0.2).into(), (-0.3).into()]).unwrap();
        assert!((spectral_radius(&mr).unwrap() - 0.3).abs() < 1e-12);
        assert!(matches!(
            spectral_radius(&DMatrix::zeros(2, 3)),
            Err(SpiError::NotSquare { .. })
        ));
    }

    #[test]
    fn assumption1_examples() {
        let r = check_assumption1(&LtiSystem::power_system());
        assert!(r.controllable && r.observable);

        let sys = LtiSystem::new(
            DMatrix::identity(2, 2),
            DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        assert_eq!(
            check_assumption1(&sys),
            Assumption1Report {
                controllable: false,
                observable: true
            }
        );

        assert!(check_assumption1(&scalar(0.0, 1.0, 1.0)).holds());
    }

    #[test]
    fn open_loop_diverges() {
        let sys = LtiSystem::power_system();
        let mut plant = SimulatedPlant::new(sys, DVector::from_element(3, 5.0)).unwrap();
        let x0 = plant.state().x.norm();
        for _ in 0..300 {
            plant.apply(&DVector::zeros(1)).unwrap();
        }
        assert!(plant.state().x.norm() > 10.0 * x0);
    }

    #[test]
    fn step_is_linear() {
        // dyadic rationals keep every product exact
        let sys = LtiSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.5, 0.25, -0.125, 1.0]),
            DMatrix::from_column_slice(2, 1, &[1.0, 0.5]),
            DMatrix::from_row_slice(1, 2, &[1.0, -2.0]),
        )
        .unwrap();
        let s1 = PlantState::new(DVector::from_vec(vec![1.0, -3.0])).unwrap();
        let s2 = PlantState::new(DVector::from_vec(vec![0.25, 2.0])).unwrap();
        let u1 = DVector::from_element(1, 2.0);
        let u2 = DVector::from_element(1, -0.5);
        let (n1, y1) = step(&sys, &s1, &u1).unwrap();
        let (n2, y2) = step(&sys, &s2, &u2).unwrap();
        let s12 = PlantState::new(&s1.x * 3.0 + &s2.x).unwrap();
        let (n12, y12) = step(&sys, &s12, &(&u1 * 3.0 + &u2)).unwrap();
        assert_eq!(n12.x, n1.x * 3.0 + n2.x);
        assert_eq!(y12, y1 * 3.0 + y2);
    }
}
