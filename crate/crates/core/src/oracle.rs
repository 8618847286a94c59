//! Model-based ground truth used only to check learned results.
//!
//! Nothing in the learning path calls into this module. It is the one place
//! outside [`crate::plant`] that reads the true system matrices or the hidden
//! plant state.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpiError};
use crate::excitation::{excitation, ExcitationSpec};
use crate::linalg::{least_squares, numerical_rank, symmetrize};
use crate::plant::{spectral_radius, step, LtiSystem, PlantState, SimulatedPlant};
use crate::reconstruction::FilterBank;
use crate::tensor_ops::{kron, unvec, vec, SymMatrix};

/// Slack on the strict model-based step-size bound.
pub const STEP_BOUND_SLACK: f64 = 1e-12;
/// Horizon of the zero-initial-condition fit for the parameterization matrix.
pub const MBAR_SAMPLES: usize = 200;
pub const MBAR_RESIDUAL_TOL: f64 = 1e-10;
const MBAR_SEED: u64 = 0x5eed;

/// `(A, B, C)` of the true plant.
pub fn system_matrices(sys: &LtiSystem) -> (&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>) {
    (sys.a(), sys.b(), sys.c())
}

/// Current hidden state of a simulated plant.
pub fn hidden_state(plant: &SimulatedPlant) -> &DVector<f64> {
    &plant.state().x
}

/// Solves `At^T P At - P = -W` through `(I - At^T (x) At^T) vec(P) = vec(W)`,
/// with one step of iterative refinement.
pub fn dlyap(at: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<SymMatrix> {
    if !at.is_square() {
        return Err(SpiError::NotSquare {
            rows: at.nrows(),
            cols: at.ncols(),
        });
    }
    let n = at.nrows();
    if w.shape() != (n, n) {
        return Err(SpiError::dim(
            "dlyap weight",
            format!("{n}x{n}"),
            format!("{}x{}", w.nrows(), w.ncols()),
        ));
    }
    let rho = spectral_radius(at)?;
    if rho >= 1.0 {
        return Err(SpiError::NotSchur(rho));
    }
    let att = at.transpose();
    let op = DMatrix::identity(n * n, n * n) - kron(&att, &att);
    let lu = op.clone().lu();
    let rhs = vec(w);
    let mut x = lu.solve(&rhs).ok_or(SpiError::Singular("dlyap"))?;
    let resid = &rhs - &op * &x;
    if let Some(dx) = lu.solve(&resid) {
        x += dx;
    }
    SymMatrix::symmetrized(&unvec(x.as_slice(), n, n)?)
}

/// `|At^T P At - P + W|_F`.
pub fn dlyap_residual(at: &DMatrix<f64>, p: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    (at.transpose() * p * at - p + w).norm()
}

/// Value matrix of state gain `k` at scale `c`: solves the Lyapunov equation
/// for `c (A - B K)` with weight `C^T Q C + Qc + K^T R K`.
pub fn model_policy_evaluation(
    sys: &LtiSystem,
    k: &DMatrix<f64>,
    c: f64,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    qc: &DMatrix<f64>,
) -> Result<SymMatrix> {
    let (a, b, cm) = system_matrices(sys);
    let at = (a - b * k) * c;
    let w = cm.transpose() * q * cm + qc + k.transpose() * r * k;
    dlyap(&at, &symmetrize(&w))
}

/// `c^2 (R + c^2 B^T P B)^{-1} B^T P A`.
pub fn model_policy_improvement(
    sys: &LtiSystem,
    p: &DMatrix<f64>,
    r: &DMatrix<f64>,
    c: f64,
) -> Result<DMatrix<f64>> {
    let (a, b, _) = system_matrices(sys);
    let c2 = c * c;
    let inner = r + b.transpose() * p * b * c2;
    let rhs = b.transpose() * p * a;
    Ok(inner
        .lu()
        .solve(&rhs)
        .ok_or(SpiError::Singular("model policy improvement"))?
        * c2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelIterate {
    pub j: usize,
    pub gain: DMatrix<f64>,
    pub c: f64,
    /// `c (A - B K)`.
    pub a_tilde: DMatrix<f64>,
    /// Value of `gain` at scale `c`.
    pub value: SymMatrix,
}

impl ModelIterate {
    pub fn new(
        sys: &LtiSystem,
        gain: DMatrix<f64>,
        c: f64,
        q: &DMatrix<f64>,
        r: &DMatrix<f64>,
        qc: &DMatrix<f64>,
    ) -> Result<Self> {
        let (a, b, _) = system_matrices(sys);
        let a_tilde = (a - b * &gain) * c;
        let value = model_policy_evaluation(sys, &gain, c, q, r, qc)?;
        Ok(Self {
            j: 0,
            gain,
            c,
            a_tilde,
            value,
        })
    }
}

/// One model-based iteration with an externally chosen step `alpha`, which
/// must satisfy `0 < alpha < 1/rho(A - B K+) - c`.
pub fn model_spi_step(
    sys: &LtiSystem,
    it: &ModelIterate,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    qc: &DMatrix<f64>,
    alpha: f64,
) -> Result<ModelIterate> {
    let (a, b, _) = system_matrices(sys);
    let next = model_policy_improvement(sys, &it.value, r, it.c)?;
    let rho = spectral_radius(&(a - b * &next))?;
    let upper = 1.0 / rho - it.c;
    if !(alpha > 0.0 && alpha < upper + STEP_BOUND_SLACK) {
        return Err(SpiError::StepSizeBound { alpha, upper });
    }
    let mut out = ModelIterate::new(sys, next, it.c + alpha, q, r, qc)?;
    out.j = it.j + 1;
    Ok(out)
}

/// Largest admissible model step from `it`: `1/rho(A - B K+) - c`.
pub fn model_step_bound(sys: &LtiSystem, it: &ModelIterate, r: &DMatrix<f64>) -> Result<f64> {
    let (a, b, _) = system_matrices(sys);
    let next = model_policy_improvement(sys, &it.value, r, it.c)?;
    Ok(1.0 / spectral_radius(&(a - b * next))? - it.c)
}

/// `x = M r` map from reconstruction state to plant state.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterizationMatrix {
    pub mbar: DMatrix<f64>,
    /// `M^T (M M^T)^{-1}`.
    pub pinv: DMatrix<f64>,
    /// Largest `|x - M r|` on the fitting trajectory.
    pub fit_residual: f64,
}

impl ParameterizationMatrix {
    pub fn from_mbar(mbar: DMatrix<f64>) -> Result<Self> {
        let n = mbar.nrows();
        if numerical_rank(&mbar.transpose()) < n {
            return Err(SpiError::Parameterization(
                "matrix is not full row rank".into(),
            ));
        }
        let gram = &mbar * mbar.transpose();
        let inv = gram
            .cholesky()
            .ok_or_else(|| SpiError::Parameterization("M M^T is not positive definite".into()))?
            .inverse();
        let pinv = mbar.transpose() * inv;
        Ok(Self {
            mbar,
            pinv,
            fit_residual: 0.0,
        })
    }

    /// Projects an output-feedback gain onto the state: `K M+`.
    pub fn state_gain(&self, kbar: &DMatrix<f64>) -> DMatrix<f64> {
        kbar * &self.pinv
    }
}

/// Fits `M` from a zero-initial-condition simulation, where `x(k) = M r(k)`
/// holds exactly.
pub fn construct_mbar(sys: &LtiSystem, template: &FilterBank) -> Result<ParameterizationMatrix> {
    construct_mbar_with(
        sys,
        template,
        &ExcitationSpec::default_for(sys.input_dim(), MBAR_SEED),
        MBAR_SAMPLES,
    )
}

pub fn construct_mbar_with(
    sys: &LtiSystem,
    template: &FilterBank,
    spec: &ExcitationSpec,
    samples: usize,
) -> Result<ParameterizationMatrix> {
    let n = sys.state_dim();
    let nr = template.state_len();
    if template.inputs() != sys.input_dim() || template.outputs() != sys.output_dim() {
        return Err(SpiError::dim(
            "filter bank channels",
            format!("{} inputs, {} outputs", sys.input_dim(), sys.output_dim()),
            format!(
                "{} inputs, {} outputs",
                template.inputs(),
                template.outputs()
            ),
        ));
    }
    let mut fb = template.reset();
    let mut state = PlantState::zero(n);
    let mut xs = DMatrix::zeros(samples, n);
    let mut rs = DMatrix::zeros(samples, nr);
    for k in 0..samples {
        xs.row_mut(k).copy_from(&state.x.transpose());
        rs.row_mut(k)
            .copy_from(&fb.reconstruction_state().transpose());
        let u = excitation(k, spec);
        let (next, y) = step(sys, &state, &u)?;
        fb.advance(&u, &y)?;
        state = next;
    }
    if numerical_rank(&rs) < nr {
        return Err(SpiError::Parameterization(format!(
            "reconstruction samples have rank {} < {nr}; use a longer or richer excitation",
            numerical_rank(&rs)
        )));
    }
    // rs M^T = xs, one column of M^T per state
    let mut mbar = DMatrix::zeros(n, nr);
    for i in 0..n {
        let ls = least_squares(&rs, &xs.column(i).into_owned())?;
        mbar.row_mut(i).copy_from(&ls.solution.transpose());
    }
    let fit = &rs * mbar.transpose() - &xs;
    let scale = xs.amax().max(1.0);
    let fit_residual = fit.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
    if fit_residual > MBAR_RESIDUAL_TOL * scale {
        return Err(SpiError::Parameterization(format!(
            "fit residual {fit_residual:.3e} exceeds {MBAR_RESIDUAL_TOL:e} x {scale:.3e}"
        )));
    }
    let mut pm = ParameterizationMatrix::from_mbar(mbar)?;
    pm.fit_residual = fit_residual;
    Ok(pm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationCheck {
    /// `rho(A - B K M+)`.
    pub rho_actual: f64,
    /// `1 / c`.
    pub rho_bound: f64,
    pub pass: bool,
}

pub fn verify_iteration(
    sys: &LtiSystem,
    pm: &ParameterizationMatrix,
    kbar: &DMatrix<f64>,
    c: f64,
) -> Result<IterationCheck> {
    let (a, b, _) = system_matrices(sys);
    let rho_actual = spectral_radius(&(a - b * pm.state_gain(kbar)))?;
    let rho_bound = 1.0 / c;
    Ok(IterationCheck {
        rho_actual,
        rho_bound,
        pass: rho_actual < rho_bound,
    })
}

/// States `x(0..=steps)` under `u(k) = -K r(k)`, or the free response when
/// `gain` is `None`.
pub fn simulate_feedback(
    sys: &LtiSystem,
    x0: &DVector<f64>,
    template: &FilterBank,
    gain: Option<&DMatrix<f64>>,
    steps: usize,
) -> Result<Vec<DVector<f64>>> {
    let mut fb = template.reset();
    let mut state = PlantState::new(x0.clone())?;
    if x0.len() != sys.state_dim() {
        return Err(SpiError::dim("initial state", sys.state_dim(), x0.len()));
    }
    let mut out = Vec::with_capacity(steps + 1);
    out.push(state.x.clone());
    for _ in 0..steps {
        let r = fb.reconstruction_state();
        let u = match gain {
            Some(k) => -(k * &r),
            None => DVector::zeros(sys.input_dim()),
        };
        let (next, y) = step(sys, &state, &u)?;
        fb.advance(&u, &y)?;
        state = next;
        out.push(state.x.clone());
    }
    Ok(out)
}

/// `|x(k) - M r(k)|` for `k = 0..=steps` under the zero input.
pub fn reconstruction_errors(
    sys: &LtiSystem,
    pm: &ParameterizationMatrix,
    template: &FilterBank,
    x0: &DVector<f64>,
    steps: usize,
) -> Result<Vec<f64>> {
    let mut fb = template.reset();
    let mut state = PlantState::new(x0.clone())?;
    let u = DVector::zeros(sys.input_dim());
    let mut out = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        out.push((&state.x - &pm.mbar * fb.reconstruction_state()).norm());
        if k < steps {
            let (next, y) = step(sys, &state, &u)?;
            fb.advance(&u, &y)?;
            state = next;
        }
    }
    Ok(out)
}
