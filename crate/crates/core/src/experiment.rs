//! Configured end-to-end experiments and their on-disk artifacts.
//!
//! A run produces, in its output directory:
//!
//! | file             | contents                                                        |
//! |------------------|-----------------------------------------------------------------|
//! | `iterations.csv` | `j,beta_tilde,alpha_j,c_j,ls_residual,rho_bound,rho_actual`     |
//! | `result.json`    | final gain, termination, history, open-loop data, verification  |
//! | `trajectory.csv` | `k`, open-loop states, closed-loop states under `u = -K r`      |
//! | `log.csv`        | the collected experiment log                                    |
//! | `config.toml`    | the effective configuration, replayable with `run`              |
//!
//! Every artifact is a deterministic function of the configuration.

use std::fs;
use std::path::Path;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpiError};
use crate::excitation::{
    build_regression, collect, default_k0, rank_condition, ExcitationSpec, ExperimentLog,
    RankReport, SineTerm, DEFAULT_SEED, DEFAULT_SINUSOIDS, DEFAULT_TRANSIENT_TOL,
};
use crate::learner::{
    default_beta_sequence, run_spi, BetaAttempt, IterationRecord, SpiConfig,
    DEFAULT_MAX_ITERATIONS, DEFAULT_SAFETY,
};
use crate::oracle::{
    construct_mbar, simulate_feedback, verify_iteration, IterationCheck, ParameterizationMatrix,
};
use crate::plant::{
    check_assumption1, eigenvalues, spectral_radius, Assumption1Report, LtiSystem, SimulatedPlant,
};
use crate::reconstruction::{default_roots, monic_poly_from_roots, FilterBank};
use crate::tensor_ops::{from_rows, to_rows};

pub const DEFAULT_SAMPLES: usize = 200;
/// First logged step of the demo; well past the derived lower bound.
pub const DEMO_K0: usize = 50;
pub const DEFAULT_TRAJECTORY_STEPS: usize = 600;
pub const DEFAULT_DELTA: f64 = 0.7;

type Rows = Vec<Vec<f64>>;

/// A filter root, written either as a real number or as `[re, im]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RootSpec {
    Real(f64),
    Complex([f64; 2]),
}

impl From<RootSpec> for Complex<f64> {
    fn from(r: RootSpec) -> Self {
        match r {
            RootSpec::Real(x) => Complex::new(x, 0.0),
            RootSpec::Complex([re, im]) => Complex::new(re, im),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Rows>,
    /// Initial state; zero when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

impl PlantConfig {
    pub fn build(&self) -> Result<LtiSystem> {
        match (&self.preset, &self.a, &self.b, &self.c) {
            (Some(name), None, None, None) => LtiSystem::preset(name).ok_or_else(|| {
                SpiError::Config(vec![format!(
                    "unknown plant preset {name:?} (available: {})",
                    LtiSystem::PRESETS.join(", ")
                )])
            }),
            (None, Some(a), Some(b), Some(c)) => {
                LtiSystem::new(from_rows(a)?, from_rows(b)?, from_rows(c)?)
            }
            _ => Err(SpiError::Config(vec![
                "plant needs either `preset` or all of `a`, `b`, `c`".into(),
            ])),
        }
    }

    pub fn initial_state(&self, n: usize) -> DVector<f64> {
        self.x0
            .as_ref()
            .map_or_else(|| DVector::zeros(n), |x| DVector::from_column_slice(x))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    /// Defaults to `-0.1, -0.2, ...` with one root per plant state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roots: Option<Vec<RootSpec>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcitationConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Sinusoids per input in the generated multisine.
    #[serde(default = "default_sinusoids")]
    pub sinusoids: usize,
    /// Explicit terms replace the generated multisine.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terms: Option<Vec<SineTerm>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<Vec<f64>>,
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_sinusoids() -> usize {
    DEFAULT_SINUSOIDS
}

impl Default for ExcitationConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            sinusoids: DEFAULT_SINUSOIDS,
            terms: None,
            bias: None,
        }
    }
}

impl ExcitationConfig {
    pub fn spec(&self, inputs: usize) -> ExcitationSpec {
        let mut spec = match &self.terms {
            Some(terms) => ExcitationSpec {
                inputs,
                terms: terms.clone(),
                bias: Vec::new(),
            },
            None => ExcitationSpec::multisine(inputs, self.sinusoids, self.seed),
        };
        if let Some(b) = &self.bias {
            spec.bias = b.clone();
        }
        spec
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectionConfig {
    /// First logged step; derived from the filter spectrum when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k0: Option<usize>,
    /// Logged intervals, so `ks = k0 + samples`.
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_samples() -> usize {
    DEFAULT_SAMPLES
}

impl Default for CollectionConfig {
    fn default() -> Self {
        Self {
            k0: None,
            samples: DEFAULT_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    /// Output weight, identity when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Rows>,
    /// Input weight, identity when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Rows>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_sequence: Option<Vec<f64>>,
    #[serde(default = "default_safety")]
    pub safety: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

fn default_safety() -> f64 {
    DEFAULT_SAFETY
}

fn default_max_iterations() -> usize {
    DEFAULT_MAX_ITERATIONS
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            q: None,
            r: None,
            delta: DEFAULT_DELTA,
            beta_sequence: None,
            safety: DEFAULT_SAFETY,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationConfig {
    #[serde(default = "default_true")]
    pub enabled: bool,
    /// Length of the open/closed-loop comparison; 0 skips it.
    #[serde(default = "default_trajectory_steps")]
    pub trajectory_steps: usize,
}

fn default_true() -> bool {
    true
}

fn default_trajectory_steps() -> usize {
    DEFAULT_TRAJECTORY_STEPS
}

impl Default for VerificationConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            trajectory_steps: DEFAULT_TRAJECTORY_STEPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub excitation: ExcitationConfig,
    #[serde(default)]
    pub collection: CollectionConfig,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default)]
    pub verification: VerificationConfig,
}

impl ExperimentConfig {
    /// Power-system preset from `x(0) = [5, 5, 5]` with unit weights,
    /// `delta = 0.7`, filter roots `-0.1, -0.2, -0.3`.
    pub fn demo() -> Self {
        Self {
            plant: PlantConfig {
                preset: Some("power_system".into()),
                a: None,
                b: None,
                c: None,
                x0: Some(vec![5.0, 5.0, 5.0]),
            },
            filter: FilterConfig {
                roots: Some(default_roots(3).into_iter().map(RootSpec::Real).collect()),
            },
            excitation: ExcitationConfig::default(),
            // the transient bound behind the derived k0 ignores the observer
            // constant, which is in the thousands here
            collection: CollectionConfig {
                k0: Some(DEMO_K0),
                samples: DEFAULT_SAMPLES,
            },
            learner: LearnerConfig {
                q: Some(vec![vec![1.0]]),
                r: Some(vec![vec![1.0]]),
                ..LearnerConfig::default()
            },
            verification: VerificationConfig::default(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    fn roots(&self, n: usize) -> Vec<Complex<f64>> {
        match &self.filter.roots {
            Some(r) => r.iter().map(|&x| x.into()).collect(),
            None => default_roots(n)
                .into_iter()
                .map(|x| Complex::new(x, 0.0))
                .collect(),
        }
    }

    fn spi_config(&self, m: usize, p: usize) -> Result<SpiConfig> {
        let weight = |rows: &Option<Rows>, d: usize| -> Result<DMatrix<f64>> {
            rows.as_ref()
                .map_or_else(|| Ok(DMatrix::identity(d, d)), |r| from_rows(r))
        };
        Ok(SpiConfig {
            q: weight(&self.learner.q, p)?,
            r: weight(&self.learner.r, m)?,
            delta: self.learner.delta,
            beta_sequence: self
                .learner
                .beta_sequence
                .clone()
                .unwrap_or_else(default_beta_sequence),
            safety: self.learner.safety,
            max_iterations: self.learner.max_iterations,
        })
    }

    /// Every problem with the configuration, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let sys = match self.plant.build() {
            Ok(s) => Some(s),
            Err(SpiError::Config(p)) => {
                out.extend(p);
                None
            }
            Err(e) => {
                out.push(format!("plant: {e}"));
                None
            }
        };
        if let Some(sys) = &sys {
            let (n, m, p) = (sys.state_dim(), sys.input_dim(), sys.output_dim());
            if let Some(x0) = &self.plant.x0 {
                if x0.len() != n {
                    out.push(format!(
                        "plant.x0 has {} entries, plant has {n} states",
                        x0.len()
                    ));
                }
                if x0.iter().any(|v| !v.is_finite()) {
                    out.push("plant.x0 must be finite".into());
                }
            }
            let roots = self.roots(n);
            if roots.len() != n {
                out.push(format!(
                    "filter.roots has {} entries, plant has {n} states",
                    roots.len()
                ));
            }
            if let Err(e) = monic_poly_from_roots(&roots) {
                out.push(format!("filter.roots: {e}"));
            }
            if let Err(e) = self.excitation.spec(m).validate() {
                out.push(format!("excitation: {e}"));
            }
            match self.spi_config(m, p) {
                Ok(cfg) => {
                    if cfg.q.shape() != (p, p) {
                        out.push(format!("learner.q must be {p}x{p}"));
                    }
                    if cfg.r.shape() != (m, m) {
                        out.push(format!("learner.r must be {m}x{m}"));
                    }
                    out.extend(cfg.problems());
                }
                Err(e) => out.push(format!("learner weights: {e}")),
            }
        } else {
            // domain checks that do not need the plant
            if !(self.learner.delta > 0.0 && self.learner.delta < 1.0) {
                out.push(format!("δ must lie in (0,1), got {}", self.learner.delta));
            }
        }
        if self.collection.samples == 0 {
            out.push("collection.samples must be positive".into());
        }
        if self.excitation.terms.is_none() && self.excitation.sinusoids == 0 {
            out.push("excitation.sinusoids must be positive".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(SpiError::Config(p))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopSummary {
    /// `[re, im]` pairs.
    pub eigenvalues: Vec<[f64; 2]>,
    pub spectral_radius: f64,
    pub assumption1: Assumption1Report,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Termination {
    pub reason: String,
    pub iterations: usize,
    pub c_final: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifiedIteration {
    pub j: usize,
    pub c: f64,
    #[serde(flatten)]
    pub check: IterationCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationSummary {
    pub mbar: Rows,
    pub fit_residual: f64,
    pub iterations: Vec<VerifiedIteration>,
    /// `K M+` for the final gain.
    pub final_state_gain: Rows,
    pub final_rho: f64,
    pub all_pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub final_gain: Rows,
    pub termination: Termination,
    pub k0: usize,
    pub ks: usize,
    pub rank: RankReport,
    pub accepted_beta: f64,
    pub beta_attempts: Vec<BetaAttempt>,
    pub history: Vec<IterationRecord>,
    pub open_loop: OpenLoopSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerificationSummary>,
    pub config: ExperimentConfig,
}

/// Open-loop and closed-loop states from the same initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub open_loop: Vec<DVector<f64>>,
    pub closed_loop: Vec<DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub result: ExperimentResult,
    pub log: ExperimentLog,
    pub trajectory: Option<Trajectory>,
}

/// Everything the pipeline needs, resolved from a validated configuration.
pub struct Setup {
    pub system: LtiSystem,
    pub bank: FilterBank,
    pub x0: DVector<f64>,
    pub spec: ExcitationSpec,
    pub k0: usize,
    pub ks: usize,
    pub spi: SpiConfig,
}

impl Setup {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let system = cfg.plant.build()?;
        let (n, m, p) = (system.state_dim(), system.input_dim(), system.output_dim());
        let bank = FilterBank::from_roots(&cfg.roots(n), m, p)?;
        let k0 = match cfg.collection.k0 {
            Some(k) => k,
            None => default_k0(spectral_radius(bank.companion())?, DEFAULT_TRANSIENT_TOL),
        };
        Ok(Self {
            x0: cfg.plant.initial_state(n),
            spec: cfg.excitation.spec(m),
            k0,
            ks: k0 + cfg.collection.samples,
            spi: cfg.spi_config(m, p)?,
            system,
            bank,
        })
    }

    pub fn collect_log(&self) -> Result<ExperimentLog> {
        let mut plant = SimulatedPlant::new(self.system.clone(), self.x0.clone())?;
        collect(&mut plant, self.bank.clone(), &self.spec, self.k0, self.ks)
    }
}

fn open_loop_summary(sys: &LtiSystem) -> Result<OpenLoopSummary> {
    let a = crate::oracle::system_matrices(sys).0;
    let mut eig: Vec<[f64; 2]> = eigenvalues(a)?.iter().map(|z| [z.re, z.im]).collect();
    eig.sort_by(|x, y| x[0].total_cmp(&y[0]).then(x[1].total_cmp(&y[1])));
    Ok(OpenLoopSummary {
        eigenvalues: eig,
        spectral_radius: spectral_radius(a)?,
        assumption1: check_assumption1(sys),
    })
}

fn verify_history(
    sys: &LtiSystem,
    pm: &ParameterizationMatrix,
    history: &[IterationRecord],
    final_gain: &DMatrix<f64>,
) -> Result<VerificationSummary> {
    let iterations = history
        .iter()
        .map(|h| {
            Ok(VerifiedIteration {
                j: h.j,
                c: h.c,
                check: verify_iteration(sys, pm, &from_rows(&h.gain)?, h.c)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (a, b, _) = crate::oracle::system_matrices(sys);
    let state_gain = pm.state_gain(final_gain);
    let final_rho = spectral_radius(&(a - b * &state_gain))?;
    Ok(VerificationSummary {
        mbar: to_rows(&pm.mbar),
        fit_residual: pm.fit_residual,
        all_pass: iterations.iter().all(|v| v.check.pass) && final_rho < 1.0,
        iterations,
        final_state_gain: to_rows(&state_gain),
        final_rho,
    })
}

/// Collect, learn, and optionally verify.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let setup = Setup::from_config(cfg)?;
    let open_loop = open_loop_summary(&setup.system)?;
    let log = setup.collect_log()?;
    let reg = build_regression(&log)?;
    let rank = rank_condition(&reg).into_result()?;
    let outcome = run_spi(&setup.spi, &reg)?;

    let verification = if cfg.verification.enabled {
        let pm = construct_mbar(&setup.system, &setup.bank)?;
        Some(verify_history(
            &setup.system,
            &pm,
            &outcome.history,
            &outcome.gain,
        )?)
    } else {
        None
    };
    let trajectory = match cfg.verification.trajectory_steps {
        0 => None,
        steps => Some(Trajectory {
            open_loop: simulate_feedback(&setup.system, &setup.x0, &setup.bank, None, steps)?,
            closed_loop: simulate_feedback(
                &setup.system,
                &setup.x0,
                &setup.bank,
                Some(&outcome.gain),
                steps,
            )?,
        }),
    };

    let result = ExperimentResult {
        final_gain: to_rows(&outcome.gain),
        termination: Termination {
            reason: "cumulative coefficient reached 1".into(),
            iterations: outcome.iterations(),
            c_final: outcome.final_c(),
        },
        k0: setup.k0,
        ks: setup.ks,
        rank,
        accepted_beta: outcome.accepted_beta,
        beta_attempts: outcome.beta_attempts,
        history: outcome.history,
        open_loop,
        verification,
        config: cfg.clone(),
    };
    Ok(ExperimentOutput {
        result,
        log,
        trajectory,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Iteration table with the fixed column order
/// `j,beta_tilde,alpha_j,c_j,ls_residual,rho_bound,rho_actual`.
pub fn iteration_csv(result: &ExperimentResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "j",
        "beta_tilde",
        "alpha_j",
        "c_j",
        "ls_residual",
        "rho_bound",
        "rho_actual",
    ])?;
    for (i, h) in result.history.iter().enumerate() {
        let rho = result
            .verification
            .as_ref()
            .and_then(|v| v.iterations.get(i))
            .map(|v| v.check.rho_actual);
        w.write_record([
            h.j.to_string(),
            h.beta_tilde.to_string(),
            h.alpha.to_string(),
            h.c.to_string(),
            opt(h.evaluation.as_ref().map(|e| e.ls_residual)),
            (1.0 / h.c).to_string(),
            opt(rho),
        ])?;
    }
    into_string(w)
}

pub fn trajectory_csv(t: &Trajectory) -> Result<String> {
    let n = t.open_loop.first().map_or(0, |x| x.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["k".to_string()];
    header.extend((0..n).map(|i| format!("open_x{i}")));
    header.extend((0..n).map(|i| format!("closed_x{i}")));
    w.write_record(&header)?;
    for (k, (o, c)) in t.open_loop.iter().zip(&t.closed_loop).enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(o.iter().chain(c.iter()).map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    into_string(w)
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| SpiError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes all artifacts of a run into `dir`, creating it if needed.
pub fn write_artifacts(out: &ExperimentOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("iterations.csv"), iteration_csv(&out.result)?)?;
    let mut json = serde_json::to_string_pretty(&out.result)?;
    json.push('\n');
    fs::write(dir.join("result.json"), json)?;
    if let Some(t) = &out.trajectory {
        fs::write(dir.join("trajectory.csv"), trajectory_csv(t)?)?;
    }
    out.log.write_csv(fs::File::create(dir.join("log.csv"))?)?;
    fs::write(dir.join("config.toml"), out.result.config.to_toml_string()?)?;
    Ok(())
}

pub fn load_result(path: &Path) -> Result<ExperimentResult> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub iterations: Vec<VerifiedIteration>,
    /// `rho(A - B K M+)` for the stored final gain.
    pub final_rho: f64,
    pub c_final: f64,
    /// Set when the stored run stopped with `c < 1`.
    pub non_terminated: bool,
    pub pass: bool,
}

/// Rebuilds the parameterization matrix for the configured plant and replays
/// the per-iteration checks over a stored result.
pub fn verify_result(result: &ExperimentResult, cfg: &ExperimentConfig) -> Result<VerifyReport> {
    let setup = Setup::from_config(cfg)?;
    let pm = construct_mbar(&setup.system, &setup.bank)?;
    let final_gain = from_rows(&result.final_gain)?;
    let summary = verify_history(&setup.system, &pm, &result.history, &final_gain)?;
    let c_final = result.history.last().map_or(0.0, |h| h.c);
    let non_terminated = c_final < 1.0;
    Ok(VerifyReport {
        pass: summary.all_pass && !non_terminated,
        iterations: summary.iterations,
        final_rho: summary.final_rho,
        c_final,
        non_terminated,
    })
}

/// Row of the sweep summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub delta: f64,
    pub directory: String,
    pub iterations: usize,
    pub c_final: f64,
    pub final_rho: Option<f64>,
    pub all_pass: Option<bool>,
}

/// Directory name used for one sweep member.
pub fn sweep_dir_name(delta: f64) -> String {
    format!("delta_{delta}")
}

/// Runs `cfg` once per `delta`, in parallel, each into its own subdirectory
/// of `dir`, then writes `sweep.csv`. Results come back in input order.
pub fn run_delta_sweep(
    cfg: &ExperimentConfig,
    deltas: &[f64],
    dir: &Path,
) -> Result<Vec<SweepEntry>> {
    let results: Vec<Result<SweepEntry>> = std::thread::scope(|s| {
        let handles: Vec<_> = deltas
            .iter()
            .map(|&delta| {
                s.spawn(move || {
                    let mut c = cfg.clone();
                    c.learner.delta = delta;
                    let out = run_experiment(&c)?;
                    let name = sweep_dir_name(delta);
                    write_artifacts(&out, &dir.join(&name))?;
                    Ok(SweepEntry {
                        delta,
                        directory: name,
                        iterations: out.result.termination.iterations,
                        c_final: out.result.termination.c_final,
                        final_rho: out.result.verification.as_ref().map(|v| v.final_rho),
                        all_pass: out.result.verification.as_ref().map(|v| v.all_pass),
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });
    let entries = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "delta",
        "directory",
        "iterations",
        "c_final",
        "final_rho",
        "all_pass",
    ])?;
    for e in &entries {
        w.write_record([
            e.delta.to_string(),
            e.directory.clone(),
            e.iterations.to_string(),
            e.c_final.to_string(),
            opt(e.final_rho),
            e.all_pass.map(|b| b.to_string()).unwrap_or_default(),
        ])?;
    }
    fs::create_dir_all(dir)?;
    fs::write(dir.join("sweep.csv"), into_string(w)?)?;
    Ok(entries)
}
