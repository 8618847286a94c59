//! Model-free stabilizing policy iteration on logged input/output data.
//!
//! Each pass evaluates the current gain by least squares on the data
//! matrices, improves the gain, then picks how far the scale coefficient
//! `c` may grow while keeping the value decrease certified on every sample.
//! Iteration stops once `c >= 1`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpiError};
use crate::excitation::{rank_condition, RegressionData};
use crate::linalg::least_squares;
use crate::tensor_ops::{kron_vec, mat_from_vecs, to_rows, triangular, unvec, vec, SymMatrix};

/// Samples with `|r|` below this carry no information and are skipped.
pub const MIN_STATE_NORM: f64 = 1e-12;
pub const DEFAULT_SAFETY: f64 = 0.9;
pub const DEFAULT_MAX_ITERATIONS: usize = 200;

/// `0.90, 0.89, ..., 0.01`.
pub fn default_beta_sequence() -> Vec<f64> {
    (1..=90).rev().map(|i| i as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpiConfig {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub delta: f64,
    pub beta_sequence: Vec<f64>,
    pub safety: f64,
    pub max_iterations: usize,
}

impl SpiConfig {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, delta: f64) -> Self {
        Self {
            q,
            r,
            delta,
            beta_sequence: default_beta_sequence(),
            safety: DEFAULT_SAFETY,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }

    /// Every violated domain constraint, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !is_positive_definite(&self.q) {
            out.push("Q must be symmetric positive definite".to_string());
        }
        if !is_positive_definite(&self.r) {
            out.push("R must be symmetric positive definite".to_string());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            out.push(format!("δ must lie in (0,1), got {}", self.delta));
        }
        if self.beta_sequence.is_empty() {
            out.push("beta sequence must not be empty".to_string());
        }
        if self.beta_sequence.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            out.push("beta sequence entries must lie in (0,1)".to_string());
        }
        if self.beta_sequence.windows(2).any(|w| w[1] >= w[0]) {
            out.push("beta sequence must be strictly decreasing".to_string());
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            out.push(format!(
                "safety fraction must lie in (0,1], got {}",
                self.safety
            ));
        }
        if self.max_iterations == 0 {
            out.push("max_iterations must be at least 1".to_string());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SpiError::Config(problems))
        }
    }
}

fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    if !m.is_square() || m.is_empty() || m.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let asym = (m - m.transpose()).amax();
    asym <= 1e-12 * m.amax().max(1.0) && m.clone().cholesky().is_some()
}

/// Least-squares estimates for one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedQuantities {
    pub p_bar: SymMatrix,
    /// `n_r x m`.
    pub y1: DMatrix<f64>,
    pub y2: SymMatrix,
    pub residual: f64,
}

/// `psi theta = phi` with the column partition sizes.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub psi: DMatrix<f64>,
    pub phi: DVector<f64>,
    pub state_len: usize,
    pub inputs: usize,
}

/// Builds the regression for gain `kbar` at scale `c` with regularizer
/// `qbar_c`. `dk` is `D_{K r}` for the same gain.
pub fn assemble_system(
    reg: &RegressionData,
    dk: &DMatrix<f64>,
    kbar: &DMatrix<f64>,
    c: f64,
    cfg: &SpiConfig,
    qbar_c: &SymMatrix,
) -> Result<LinearSystem> {
    let nr = reg.state_len();
    let m = reg.inputs;
    let p = reg.output_len();
    let rows = reg.rows();
    if !c.is_finite() || c <= 0.0 {
        return Err(SpiError::NonPositiveCoefficient(c));
    }
    if kbar.shape() != (m, nr) {
        return Err(SpiError::dim(
            "gain",
            format!("{m}x{nr}"),
            format!("{}x{}", kbar.nrows(), kbar.ncols()),
        ));
    }
    if dk.shape() != (rows, triangular(m)) {
        return Err(SpiError::dim(
            "D_Kr",
            format!("{rows}x{}", triangular(m)),
            format!("{}x{}", dk.nrows(), dk.ncols()),
        ));
    }
    if qbar_c.dim() != nr {
        return Err(SpiError::dim("regularizer", nr, qbar_c.dim()));
    }
    if cfg.q.shape() != (p, p) || cfg.r.shape() != (m, m) {
        return Err(SpiError::dim(
            "weights",
            format!("Q {p}x{p}, R {m}x{m}"),
            format!("Q {:?}, R {:?}", cfg.q.shape(), cfg.r.shape()),
        ));
    }

    let a = triangular(nr);
    let b = nr * m;
    let inv_c2 = 1.0 / (c * c);
    let mut psi = DMatrix::zeros(rows, a + b + triangular(m));
    psi.columns_mut(0, a)
        .copy_from(&(&reg.c_r + &reg.d_r * (1.0 - inv_c2)));
    // r^T Y1 K r = (K r (x) r)^T vec(Y1), so the block is -2 (K r (x) r) - 2 (u (x) r)
    for (t, r) in reg.states.iter().enumerate() {
        let kr = kbar * r;
        let row = kron_vec(kr.as_slice(), r.as_slice()) * -2.0;
        psi.view_mut((t, a), (1, b)).copy_from(&row.transpose());
    }
    let mid = psi.columns(a, b) - &reg.d_ur * 2.0;
    psi.columns_mut(a, b).copy_from(&mid);
    psi.columns_mut(a + b, triangular(m))
        .copy_from(&(dk - &reg.d_u));

    let weight = kbar.transpose() * &cfg.r * kbar + &**qbar_c;
    let phi = (&reg.d_yy * vec(&cfg.q) + &reg.d_rr * vec(&weight)) * -inv_c2;
    Ok(LinearSystem {
        psi,
        phi,
        state_len: nr,
        inputs: m,
    })
}

/// Solves the regression and unpacks `(P, Y1, Y2)`.
pub fn policy_evaluation(sys: &LinearSystem) -> Result<LearnedQuantities> {
    let nr = sys.state_len;
    let m = sys.inputs;
    let ls = least_squares(&sys.psi, &sys.phi)?;
    let theta = ls.solution.as_slice();
    let a = triangular(nr);
    let b = nr * m;
    Ok(LearnedQuantities {
        p_bar: mat_from_vecs(&theta[..a])?,
        y1: unvec(&theta[a..a + b], nr, m)?,
        y2: mat_from_vecs(&theta[a + b..])?,
        residual: ls.residual,
    })
}

/// Smallest `r^T P r` over informative samples, or `None` when there are none.
pub fn min_value(states: &[DVector<f64>], p_bar: &DMatrix<f64>) -> Option<f64> {
    states
        .iter()
        .filter(|r| r.norm() >= MIN_STATE_NORM)
        .map(|r| r.dot(&(p_bar * r)))
        .min_by(f64::total_cmp)
}

/// `r^T P r > 0` on every informative sample.
pub fn check_value_positivity(states: &[DVector<f64>], p_bar: &DMatrix<f64>) -> bool {
    states
        .iter()
        .filter(|r| r.norm() >= MIN_STATE_NORM)
        .all(|r| r.dot(&(p_bar * r)) > 0.0)
}

/// `c^2 (R + c^2 Y2)^{-1} Y1^T`.
pub fn policy_improvement(
    lq: &LearnedQuantities,
    r: &DMatrix<f64>,
    c: f64,
) -> Result<DMatrix<f64>> {
    let c2 = c * c;
    let inner = r + &*lq.y2 * c2;
    let lu = inner.lu();
    let k = lu
        .solve(&lq.y1.transpose())
        .ok_or(SpiError::SingularImprovement)?
        * c2;
    if k.iter().any(|v| !v.is_finite()) {
        return Err(SpiError::SingularImprovement);
    }
    Ok(k)
}

/// Per-sample terms of the step-size inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepTerm {
    pub k: usize,
    pub pi: f64,
    pub xi: f64,
}

/// `Pi(k) = r^T P r - r^T (K^T R K + Qc) r - y^T Q y` and
/// `Xi(k) = (1 - delta)(r^T (K^T R K + Qc) r + y^T Q y)` on each informative
/// sample, with `K` the improved gain.
pub fn step_terms(
    reg: &RegressionData,
    p_bar: &DMatrix<f64>,
    k_next: &DMatrix<f64>,
    cfg: &SpiConfig,
    qbar_c: &DMatrix<f64>,
) -> Vec<StepTerm> {
    let w = k_next.transpose() * &cfg.r * k_next + qbar_c;
    reg.states
        .iter()
        .zip(&reg.outputs)
        .zip(&reg.times)
        .filter(|((r, _), _)| r.norm() >= MIN_STATE_NORM)
        .map(|((r, y), &k)| {
            let cost = r.dot(&(&w * r)) + y.dot(&(&cfg.q * y));
            StepTerm {
                k,
                pi: r.dot(&(p_bar * r)) - cost,
                xi: (1.0 - cfg.delta) * cost,
            }
        })
        .collect()
}

/// Largest `alpha` with `((1 + alpha/c)^2 - 1) Pi <= Xi` when `gamma = Xi/Pi`,
/// scaled by `safety`.
pub fn step_from_ratio(gamma: f64, c: f64, safety: f64) -> f64 {
    safety * c * ((1.0 + gamma).sqrt() - 1.0)
}

/// Whether `alpha` satisfies the step-size inequality for one sample.
pub fn step_is_feasible(alpha: f64, c: f64, term: &StepTerm) -> bool {
    let g = 1.0 + alpha / c;
    (g * g - 1.0) * term.pi <= term.xi
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSize {
    pub alpha: f64,
    /// `min Xi/Pi`.
    pub gamma: f64,
    /// Sample attaining the minimum.
    pub binding_k: usize,
}

pub fn select_step_size(
    reg: &RegressionData,
    p_bar: &DMatrix<f64>,
    k_next: &DMatrix<f64>,
    cfg: &SpiConfig,
    qbar_c: &DMatrix<f64>,
    c: f64,
) -> Result<StepSize> {
    let terms = step_terms(reg, p_bar, k_next, cfg, qbar_c);
    if terms.is_empty() {
        return Err(SpiError::NoInformativeSamples);
    }
    if let Some(bad) = terms.iter().find(|t| t.pi.is_nan() || t.pi <= 0.0) {
        return Err(SpiError::NonPositivePi {
            k: bad.k,
            pi: bad.pi,
        });
    }
    let (gamma, binding_k) = terms
        .iter()
        .map(|t| (t.xi / t.pi, t.k))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("nonempty");
    Ok(StepSize {
        alpha: step_from_ratio(gamma, c, cfg.safety),
        gamma,
        binding_k,
    })
}

/// Least-squares estimates attached to an iteration record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub p_bar: Vec<Vec<f64>>,
    pub y1: Vec<Vec<f64>>,
    pub y2: Vec<Vec<f64>>,
    pub ls_residual: f64,
}

impl From<&LearnedQuantities> for EvaluationRecord {
    fn from(lq: &LearnedQuantities) -> Self {
        Self {
            p_bar: to_rows(&lq.p_bar),
            y1: to_rows(&lq.y1),
            y2: to_rows(&lq.y2),
            ls_residual: lq.residual,
        }
    }
}

/// State of iteration `j`: the gain in force, its scale coefficient, and
/// (except for the final record) the evaluation and step that produced the
/// next gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub j: usize,
    pub beta_tilde: f64,
    /// `alpha^j`; zero for `j = 0`.
    pub alpha: f64,
    /// `c_j = beta + sum alpha`.
    pub c: f64,
    pub gain: Vec<Vec<f64>>,
    pub evaluation: Option<EvaluationRecord>,
    pub step: Option<StepSize>,
}

impl IterationRecord {
    pub fn gain_matrix(&self) -> DMatrix<f64> {
        crate::tensor_ops::from_rows(&self.gain).expect("recorded gains are rectangular")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaAttempt {
    pub beta: f64,
    /// Smallest sampled value `r^T P r`.
    pub min_value: f64,
    pub accepted: bool,
}

/// Live loop state.
#[derive(Debug, Clone)]
pub struct IterationState {
    pub j: usize,
    pub beta_tilde: f64,
    pub alphas: Vec<f64>,
    pub c: f64,
    pub gain: DMatrix<f64>,
    pub qbar_c: SymMatrix,
    pub history: Vec<IterationRecord>,
}

impl IterationState {
    fn record(&self) -> IterationRecord {
        IterationRecord {
            j: self.j,
            beta_tilde: self.beta_tilde,
            alpha: *self.alphas.last().unwrap_or(&0.0),
            c: self.c,
            gain: to_rows(&self.gain),
            evaluation: None,
            step: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpiOutcome {
    pub gain: DMatrix<f64>,
    pub history: Vec<IterationRecord>,
    pub beta_attempts: Vec<BetaAttempt>,
    pub accepted_beta: f64,
    pub qbar_c: SymMatrix,
}

impl SpiOutcome {
    pub fn final_c(&self) -> f64 {
        self.history.last().map_or(0.0, |h| h.c)
    }

    /// Number of improvement steps taken.
    pub fn iterations(&self) -> usize {
        self.history.len().saturating_sub(1)
    }
}

/// Evaluate `kbar` at scale `c` with regularizer `qbar_c`.
pub fn evaluate(
    reg: &RegressionData,
    kbar: &DMatrix<f64>,
    c: f64,
    cfg: &SpiConfig,
    qbar_c: &SymMatrix,
) -> Result<LearnedQuantities> {
    let dk = reg.d_kbar(kbar)?;
    policy_evaluation(&assemble_system(reg, &dk, kbar, c, cfg, qbar_c)?)
}

/// Full loop: search `beta` until the zero gain's value is positive on the
/// data, freeze that value as the regularizer, then evaluate, improve and
/// step until `c >= 1`.
pub fn run_spi(cfg: &SpiConfig, reg: &RegressionData) -> Result<SpiOutcome> {
    cfg.validate()?;
    rank_condition(reg).into_result()?;
    let nr = reg.state_len();
    let m = reg.inputs;
    let zero_gain = DMatrix::zeros(m, nr);
    let zero_reg = SymMatrix::zeros(nr);

    let mut attempts = Vec::new();
    let mut accepted = None;
    for &beta in &cfg.beta_sequence {
        let lq = evaluate(reg, &zero_gain, beta, cfg, &zero_reg)?;
        let min = min_value(&reg.states, &lq.p_bar).ok_or(SpiError::NoInformativeSamples)?;
        let ok = check_value_positivity(&reg.states, &lq.p_bar);
        attempts.push(BetaAttempt {
            beta,
            min_value: min,
            accepted: ok,
        });
        if ok {
            accepted = Some((beta, lq.p_bar));
            break;
        }
    }
    let Some((beta, p0)) = accepted else {
        return Err(SpiError::NoStableCompression {
            tried: cfg.beta_sequence.clone(),
        });
    };

    let mut st = IterationState {
        j: 0,
        beta_tilde: beta,
        alphas: vec![0.0],
        c: beta,
        gain: zero_gain,
        qbar_c: p0,
        history: Vec::new(),
    };
    st.history.push(st.record());

    while st.c < 1.0 {
        if st.j >= cfg.max_iterations {
            return Err(SpiError::MaxIterations {
                cap: cfg.max_iterations,
                c: st.c,
                history: st.history,
            });
        }
        let lq = evaluate(reg, &st.gain, st.c, cfg, &st.qbar_c)?;
        let next = policy_improvement(&lq, &cfg.r, st.c)?;
        let step = select_step_size(reg, &lq.p_bar, &next, cfg, &st.qbar_c, st.c)?;
        let last = st.history.last_mut().expect("history starts nonempty");
        last.evaluation = Some((&lq).into());
        last.step = Some(step);

        st.j += 1;
        st.alphas.push(step.alpha);
        st.c += step.alpha;
        st.gain = next;
        st.history.push(st.record());
    }

    Ok(SpiOutcome {
        gain: st.gain,
        history: st.history,
        beta_attempts: attempts,
        accepted_beta: beta,
        qbar_c: st.qbar_c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::excitation::{build_regression, collect, ExcitationSpec};
    use crate::plant::{LtiSystem, SimulatedPlant};
    use crate::reconstruction::FilterBank;
    use nalgebra::Complex;

    fn demo_reg() -> RegressionData {
        let roots: Vec<Complex<f64>> = [-0.1, -0.2, -0.3].iter().map(|&r| r.into()).collect();
        let fb = FilterBank::from_roots(&roots, 1, 1).unwrap();
        let mut plant =
            SimulatedPlant::new(LtiSystem::power_system(), DVector::from_element(3, 5.0)).unwrap();
        let log = collect(&mut plant, fb, &ExcitationSpec::default_for(1, 1), 50, 250).unwrap();
        build_regression(&log).unwrap()
    }

    fn demo_cfg(delta: f64) -> SpiConfig {
        SpiConfig::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1), delta)
    }

    #[test]
    fn config_problems_are_listed_together() {
        let mut cfg = demo_cfg(1.5);
        cfg.r = -DMatrix::identity(1, 1);
        cfg.beta_sequence = vec![0.5, 0.6];
        let p = cfg.problems();
        assert_eq!(p.len(), 3, "{p:?}");
        assert!(p.iter().any(|s| s.contains("δ must lie in (0,1)")));
        assert!(demo_cfg(0.7).problems().is_empty());
    }

    #[test]
    fn default_betas() {
        let b = default_beta_sequence();
        assert_eq!(b.len(), 90);
        assert_eq!(b[0], 0.9);
        assert_eq!(b[1], 0.89);
        assert_eq!(*b.last().unwrap(), 0.01);
    }

    #[test]
    fn zero_gain_system_drops_gain_terms() {
        let reg = demo_reg();
        let cfg = demo_cfg(0.7);
        let k = DMatrix::zeros(1, 6);
        let dk = reg.d_kbar(&k).unwrap();
        let sys = assemble_system(&reg, &dk, &k, 1.0, &cfg, &SymMatrix::zeros(6)).unwrap();
        assert_eq!(sys.psi.columns(0, 21), reg.c_r);
        assert_eq!(sys.psi.columns(21, 6), &reg.d_ur * -2.0);
        assert_eq!(sys.psi.columns(27, 1), -&reg.d_u);
        assert_eq!(sys.phi, -&reg.d_yy * vec(&cfg.q));

        let sys = assemble_system(&reg, &dk, &k, 0.9, &cfg, &SymMatrix::zeros(6)).unwrap();
        assert_eq!(sys.psi.columns(21, 6), &reg.d_ur * -2.0);
        assert!(matches!(
            assemble_system(&reg, &dk, &k, 0.0, &cfg, &SymMatrix::zeros(6)),
            Err(SpiError::NonPositiveCoefficient(_))
        ));
    }

    #[test]
    fn middle_block_matches_kron_form() {
        let reg = demo_reg();
        let cfg = demo_cfg(0.7);
        let k = DMatrix::from_row_slice(1, 6, &[0.3, -0.1, 0.2, 0.5, 0.05, -0.4]);
        let dk = reg.d_kbar(&k).unwrap();
        let sys = assemble_system(&reg, &dk, &k, 0.8, &cfg, &SymMatrix::identity(6)).unwrap();
        let kt_i = crate::tensor_ops::kron(&k.transpose(), &DMatrix::identity(6, 6));
        let expect = &reg.d_rr * kt_i * -2.0 - &reg.d_ur * 2.0;
        assert!((sys.psi.columns(21, 6) - expect).amax() < 1e-9);
    }

    #[test]
    fn zero_rhs_gives_zero_solution() {
        let reg = demo_reg();
        let cfg = demo_cfg(0.7);
        let k = DMatrix::zeros(1, 6);
        let dk = reg.d_kbar(&k).unwrap();
        let mut sys = assemble_system(&reg, &dk, &k, 1.0, &cfg, &SymMatrix::zeros(6)).unwrap();
        sys.phi.fill(0.0);
        let lq = policy_evaluation(&sys).unwrap();
        assert_eq!(lq.p_bar.amax(), 0.0);
        assert_eq!(lq.y1.amax(), 0.0);
    }

    #[test]
    fn positivity_examples() {
        let states = vec![DVector::from_vec(vec![1.0, 2.0]), DVector::zeros(2)];
        assert!(check_value_positivity(&states, &DMatrix::identity(2, 2)));
        assert!(!check_value_positivity(&states, &-DMatrix::identity(2, 2)));
    }

    #[test]
    fn improvement_examples() {
        let lq = LearnedQuantities {
            p_bar: SymMatrix::identity(1),
            y1: DMatrix::from_element(1, 1, 1.0),
            y2: SymMatrix::identity(1),
            residual: 0.0,
        };
        let k = policy_improvement(&lq, &DMatrix::identity(1, 1), 1.0).unwrap();
        assert_eq!(k[(0, 0)], 0.5);
        let lq0 = LearnedQuantities {
            y1: DMatrix::zeros(1, 1),
            ..lq.clone()
        };
        assert_eq!(
            policy_improvement(&lq0, &DMatrix::identity(1, 1), 1.0).unwrap()[(0, 0)],
            0.0
        );
        let sing = LearnedQuantities {
            y2: SymMatrix::from_upper_fn(1, |_, _| -1.0),
            ..lq
        };
        assert!(matches!(
            policy_improvement(&sing, &DMatrix::identity(1, 1), 1.0),
            Err(SpiError::SingularImprovement)
        ));
    }

    #[test]
    fn step_ratio_examples() {
        assert_eq!(step_from_ratio(3.0, 1.0, 1.0), 1.0);
        assert_eq!(step_from_ratio(0.0, 0.7, 0.9), 0.0);
        let t = StepTerm {
            k: 0,
            pi: 1.0,
            xi: 3.0,
        };
        assert!(step_is_feasible(1.0, 1.0, &t));
        assert!(!step_is_feasible(1.01, 1.0, &t));
    }

    #[test]
    fn demo_run_terminates() {
        let reg = demo_reg();
        let out = run_spi(&demo_cfg(0.7), &reg).unwrap();
        assert!(out.final_c() >= 1.0);
        assert!(out.iterations() <= 30);
        assert!(out.beta_attempts.last().unwrap().accepted);
        for w in out.history.windows(2) {
            assert!(w[1].c > w[0].c);
            assert!(w[1].alpha > 0.0);
        }
        assert_eq!(out.history[0].alpha, 0.0);
        assert!(out.history.last().unwrap().evaluation.is_none());
    }
}
