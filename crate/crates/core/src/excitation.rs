//! Exploration inputs, the data-collection experiment and the quadratic data
//! matrices built from its log.

use std::f64::consts::{PI, TAU};
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpiError};
use crate::linalg::numerical_rank;
use crate::plant::IoPlant;
use crate::reconstruction::FilterBank;
use crate::tensor_ops::{kron_vec, triangular, vecv};

/// Sinusoids per input channel in the default multisine.
pub const DEFAULT_SINUSOIDS: usize = 10;
pub const DEFAULT_SEED: u64 = 1;
/// Residual transient level targeted by [`default_k0`].
pub const DEFAULT_TRANSIENT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SineTerm {
    /// Input channel driven by this term.
    pub input: usize,
    pub amplitude: f64,
    /// Radians per step.
    pub frequency: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcitationSpec {
    pub inputs: usize,
    #[serde(default)]
    pub terms: Vec<SineTerm>,
    /// Per-input constant offset; empty means zero.
    #[serde(default)]
    pub bias: Vec<f64>,
}

impl ExcitationSpec {
    /// `count` unit-amplitude sinusoids per input with frequencies
    /// `pi t / (count m + 1)`, `t = 1..=count m`, dealt round-robin to the
    /// inputs. Phases are uniform on `[0, 2 pi)` from a seeded ChaCha stream.
    pub fn multisine(inputs: usize, count: usize, seed: u64) -> Self {
        let total = count * inputs;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let terms = (0..total)
            .map(|t| SineTerm {
                input: t % inputs.max(1),
                amplitude: 1.0,
                frequency: PI * (t + 1) as f64 / (total + 1) as f64,
                phase: rng.random_range(0.0..TAU),
            })
            .collect();
        Self {
            inputs,
            terms,
            bias: Vec::new(),
        }
    }

    pub fn default_for(inputs: usize, seed: u64) -> Self {
        Self::multisine(inputs, DEFAULT_SINUSOIDS, seed)
    }

    /// Constant input, useful as a non-exciting reference.
    pub fn constant(bias: Vec<f64>) -> Self {
        Self {
            inputs: bias.len(),
            terms: Vec::new(),
            bias,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs == 0 {
            return Err(SpiError::Excitation(
                "at least one input channel is required".into(),
            ));
        }
        if !self.bias.is_empty() && self.bias.len() != self.inputs {
            return Err(SpiError::Excitation(format!(
                "bias has {} entries for {} inputs",
                self.bias.len(),
                self.inputs
            )));
        }
        if self.bias.iter().any(|b| !b.is_finite()) {
            return Err(SpiError::Excitation("bias must be finite".into()));
        }
        for (i, t) in self.terms.iter().enumerate() {
            if t.input >= self.inputs {
                return Err(SpiError::Excitation(format!(
                    "term {i} drives input {} but only {} exist",
                    t.input, self.inputs
                )));
            }
            if !t.amplitude.is_finite() || t.amplitude == 0.0 {
                return Err(SpiError::Excitation(format!(
                    "term {i} amplitude must be finite and nonzero"
                )));
            }
            if !t.frequency.is_finite() || !t.phase.is_finite() {
                return Err(SpiError::Excitation(format!(
                    "term {i} frequency and phase must be finite"
                )));
            }
        }
        Ok(())
    }

    /// Number of distinct frequencies across all terms.
    pub fn distinct_frequencies(&self) -> usize {
        let mut f: Vec<f64> = self.terms.iter().map(|t| t.frequency).collect();
        f.sort_by(f64::total_cmp);
        f.dedup();
        f.len()
    }
}

/// `u_i(k) = sum_j a_ij sin(w_ij k + phi_ij) + bias_i`.
pub fn excitation(k: usize, spec: &ExcitationSpec) -> DVector<f64> {
    let mut u = if spec.bias.is_empty() {
        DVector::zeros(spec.inputs)
    } else {
        DVector::from_column_slice(&spec.bias)
    };
    let kf = k as f64;
    for t in &spec.terms {
        u[t.input] += t.amplitude * (t.frequency * kf + t.phase).sin();
    }
    u
}

/// Smallest `k >= 1` with `rho^k <= tol`.
pub fn default_k0(rho: f64, tol: f64) -> usize {
    if rho <= tol {
        return 1;
    }
    let mut k = ((tol.ln() / rho.ln()).ceil() as usize).max(1);
    while rho.powi(k as i32) > tol {
        k += 1;
    }
    while k > 1 && rho.powi(k as i32 - 1) <= tol {
        k -= 1;
    }
    k
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub k: usize,
    pub u: DVector<f64>,
    pub y: DVector<f64>,
    /// `r(k)`.
    pub r: DVector<f64>,
    /// `r(k+1)`.
    pub r_next: DVector<f64>,
}

/// Samples for `k = k0, ..., ks - 1`; the last `r_next` is `r(ks)`, so the
/// log covers reconstruction states over the closed interval `[k0, ks]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentLog {
    pub k0: usize,
    pub ks: usize,
    pub samples: Vec<Sample>,
}

impl ExperimentLog {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(m, p, n_r)` read from the first sample.
    pub fn dims(&self) -> Option<(usize, usize, usize)> {
        self.samples
            .first()
            .map(|s| (s.u.len(), s.y.len(), s.r.len()))
    }

    fn check(&self) -> Result<()> {
        let Some((m, p, nr)) = self.dims() else {
            return Err(SpiError::Log("log has no samples".into()));
        };
        if self.ks != self.k0 + self.samples.len() {
            return Err(SpiError::Log(format!(
                "{} samples do not span [{}, {})",
                self.samples.len(),
                self.k0,
                self.ks
            )));
        }
        for (t, s) in self.samples.iter().enumerate() {
            if s.k != self.k0 + t {
                return Err(SpiError::Log(format!(
                    "sample {t} has index {}, expected {}",
                    s.k,
                    self.k0 + t
                )));
            }
            if s.u.len() != m || s.y.len() != p || s.r.len() != nr || s.r_next.len() != nr {
                return Err(SpiError::Log(format!(
                    "sample k={} has inconsistent widths",
                    s.k
                )));
            }
            let finite =
                s.u.iter()
                    .chain(&s.y)
                    .chain(&s.r)
                    .chain(&s.r_next)
                    .all(|v| v.is_finite());
            if !finite {
                return Err(SpiError::Log(format!(
                    "sample k={} has non-finite entries",
                    s.k
                )));
            }
        }
        for w in self.samples.windows(2) {
            if w[0].r_next != w[1].r {
                return Err(SpiError::Log(format!(
                    "reconstruction state breaks between k={} and k={}",
                    w[0].k, w[1].k
                )));
            }
        }
        Ok(())
    }

    /// One CSV row per `k`: `k, u*, y*, r*, r_next*`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let (m, p, nr) = self
            .dims()
            .ok_or_else(|| SpiError::Log("log has no samples".into()))?;
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["k".to_string()];
        header.extend((0..m).map(|i| format!("u{i}")));
        header.extend((0..p).map(|i| format!("y{i}")));
        header.extend((0..nr).map(|i| format!("r{i}")));
        header.extend((0..nr).map(|i| format!("r_next{i}")));
        out.write_record(&header)?;
        for s in &self.samples {
            let mut row = vec![s.k.to_string()];
            row.extend(
                s.u.iter()
                    .chain(&s.y)
                    .chain(&s.r)
                    .chain(&s.r_next)
                    .map(|v| v.to_string()),
            );
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let count = |prefix: &str| {
            header
                .iter()
                .filter(|h| {
                    h.strip_prefix(prefix)
                        .is_some_and(|rest| rest.parse::<usize>().is_ok())
                })
                .count()
        };
        let (m, p, nr) = (count("u"), count("y"), count("r_next"));
        if header.len() != 1 + m + p + 2 * nr {
            return Err(SpiError::Log(format!(
                "unrecognized header: {:?}",
                header.iter().collect::<Vec<_>>()
            )));
        }
        let mut samples = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let k: usize = rec[0]
                .parse()
                .map_err(|_| SpiError::Log(format!("bad index {:?}", &rec[0])))?;
            let vals = rec
                .iter()
                .skip(1)
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| SpiError::Log(format!("bad number {v:?} at k={k}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut at = 0;
            let mut take = |len: usize| {
                let v = DVector::from_column_slice(&vals[at..at + len]);
                at += len;
                v
            };
            samples.push(Sample {
                k,
                u: take(m),
                y: take(p),
                r: take(nr),
                r_next: take(nr),
            });
        }
        let k0 = samples.first().map(|s| s.k).unwrap_or(0);
        let log = Self {
            k0,
            ks: k0 + samples.len(),
            samples,
        };
        log.check()?;
        Ok(log)
    }
}

/// Runs plant and filters in lockstep from time 0 under the exploration input
/// and records `k in [k0, ks)`.
pub fn collect<P: IoPlant>(
    plant: &mut P,
    fb: FilterBank,
    spec: &ExcitationSpec,
    k0: usize,
    ks: usize,
) -> Result<ExperimentLog> {
    spec.validate()?;
    if plant.input_dim() != spec.inputs || fb.inputs() != spec.inputs {
        return Err(SpiError::dim(
            "excitation inputs",
            plant.input_dim(),
            spec.inputs,
        ));
    }
    if fb.outputs() != plant.output_dim() {
        return Err(SpiError::dim(
            "filter outputs",
            plant.output_dim(),
            fb.outputs(),
        ));
    }
    if ks <= k0 {
        return Err(SpiError::Log(format!("empty horizon [{k0}, {ks})")));
    }
    let mut fb = fb;
    let mut samples = Vec::with_capacity(ks - k0);
    for k in 0..ks {
        let u = excitation(k, spec);
        let y = plant.apply(&u)?;
        let r = fb.reconstruction_state();
        fb.advance(&u, &y)?;
        if k >= k0 {
            samples.push(Sample {
                k,
                u,
                y,
                r,
                r_next: fb.reconstruction_state(),
            });
        }
    }
    Ok(ExperimentLog { k0, ks, samples })
}

/// Data matrices, one row per logged interval.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    pub c_r: DMatrix<f64>,
    pub d_rr: DMatrix<f64>,
    pub d_ur: DMatrix<f64>,
    pub d_yy: DMatrix<f64>,
    pub d_r: DMatrix<f64>,
    pub d_u: DMatrix<f64>,
    /// `r(k_t)` per row, kept for the gain-dependent blocks.
    pub states: Vec<DVector<f64>>,
    /// `y(k_t)` per row.
    pub outputs: Vec<DVector<f64>>,
    /// `k_t` per row.
    pub times: Vec<usize>,
    pub inputs: usize,
}

impl RegressionData {
    pub fn rows(&self) -> usize {
        self.states.len()
    }

    pub fn state_len(&self) -> usize {
        self.d_ur.ncols() / self.inputs.max(1)
    }

    pub fn output_len(&self) -> usize {
        (self.d_yy.ncols() as f64).sqrt().round() as usize
    }

    /// Rows `vecv(K r(k_t))`.
    pub fn d_kbar(&self, kbar: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        d_kbar_rows(&self.states, kbar, self.inputs, self.state_len())
    }
}

fn rows_to_matrix(
    rows: usize,
    cols: usize,
    mut f: impl FnMut(usize) -> DVector<f64>,
) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for t in 0..rows {
        m.row_mut(t).copy_from(&f(t).transpose());
    }
    m
}

pub fn build_regression(log: &ExperimentLog) -> Result<RegressionData> {
    log.check()?;
    let (m, p, nr) = log.dims().expect("checked nonempty");
    let s = &log.samples;
    let rows = s.len();
    Ok(RegressionData {
        c_r: rows_to_matrix(rows, triangular(nr), |t| {
            vecv(s[t].r_next.as_slice()) - vecv(s[t].r.as_slice())
        }),
        d_rr: rows_to_matrix(rows, nr * nr, |t| {
            kron_vec(s[t].r.as_slice(), s[t].r.as_slice())
        }),
        d_ur: rows_to_matrix(rows, m * nr, |t| {
            kron_vec(s[t].u.as_slice(), s[t].r.as_slice())
        }),
        d_yy: rows_to_matrix(rows, p * p, |t| {
            kron_vec(s[t].y.as_slice(), s[t].y.as_slice())
        }),
        d_r: rows_to_matrix(rows, triangular(nr), |t| vecv(s[t].r.as_slice())),
        d_u: rows_to_matrix(rows, triangular(m), |t| vecv(s[t].u.as_slice())),
        states: s.iter().map(|x| x.r.clone()).collect(),
        outputs: s.iter().map(|x| x.y.clone()).collect(),
        times: s.iter().map(|x| x.k).collect(),
        inputs: m,
    })
}

/// Rows `vecv(K r(k_t))` over the log, recomputed for each gain.
pub fn d_kbar(log: &ExperimentLog, kbar: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (m, _, nr) = log
        .dims()
        .ok_or_else(|| SpiError::Log("log has no samples".into()))?;
    let states: Vec<_> = log.samples.iter().map(|s| s.r.clone()).collect();
    d_kbar_rows(&states, kbar, m, nr)
}

fn d_kbar_rows(
    states: &[DVector<f64>],
    kbar: &DMatrix<f64>,
    m: usize,
    nr: usize,
) -> Result<DMatrix<f64>> {
    if kbar.shape() != (m, nr) {
        return Err(SpiError::dim(
            "gain",
            format!("{m}x{nr}"),
            format!("{}x{}", kbar.nrows(), kbar.ncols()),
        ));
    }
    Ok(rows_to_matrix(states.len(), triangular(m), |t| {
        vecv((kbar * &states[t]).as_slice())
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankReport {
    pub achieved: usize,
    pub required: usize,
    pub rows: usize,
    pub min_rows: usize,
    pub pass: bool,
}

impl RankReport {
    pub fn into_result(self) -> Result<Self> {
        if self.pass {
            Ok(self)
        } else {
            Err(SpiError::RankCondition {
                achieved: self.achieved,
                required: self.required,
                rows: self.rows,
                min_rows: self.min_rows,
            })
        }
    }
}

/// Unknown count `n_r(n_r+1)/2 + m(m+1)/2 + n_r m`.
pub const fn required_rank(nr: usize, m: usize) -> usize {
    triangular(nr) + triangular(m) + nr * m
}

/// Required rank plus a 20% margin, rounded up.
pub const fn min_rows(required: usize) -> usize {
    (required * 6).div_ceil(5)
}

/// Rank of `[D_r, D_ur, D_u]` against the unknown count.
pub fn rank_condition(reg: &RegressionData) -> RankReport {
    let nr = reg.state_len();
    let m = reg.inputs;
    let required = required_rank(nr, m);
    let rows = reg.rows();
    let mut stacked = DMatrix::zeros(rows, required);
    let a = reg.d_r.ncols();
    let b = reg.d_ur.ncols();
    stacked.columns_mut(0, a).copy_from(&reg.d_r);
    stacked.columns_mut(a, b).copy_from(&reg.d_ur);
    stacked
        .columns_mut(a + b, reg.d_u.ncols())
        .copy_from(&reg.d_u);
    let achieved = numerical_rank(&stacked);
    let min_rows = min_rows(required);
    RankReport {
        achieved,
        required,
        rows,
        min_rows,
        pass: achieved == required && rows >= min_rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{LtiSystem, SimulatedPlant};
    use crate::reconstruction::{companion_from_roots, FilterBank};
    use nalgebra::Complex;

    fn demo_bank() -> FilterBank {
        let roots: Vec<Complex<f64>> = [-0.1, -0.2, -0.3].iter().map(|&r| r.into()).collect();
        FilterBank::new(companion_from_roots(&roots).unwrap(), 1, 1).unwrap()
    }

    fn demo_log(x0: [f64; 3], k0: usize, ks: usize) -> ExperimentLog {
        let mut plant =
            SimulatedPlant::new(LtiSystem::power_system(), DVector::from_row_slice(&x0)).unwrap();
        collect(
            &mut plant,
            demo_bank(),
            &ExcitationSpec::default_for(1, DEFAULT_SEED),
            k0,
            ks,
        )
        .unwrap()
    }

    #[test]
    fn excitation_examples() {
        let single = ExcitationSpec {
            inputs: 1,
            terms: vec![SineTerm {
                input: 0,
                amplitude: 1.0,
                frequency: PI / 2.0,
                phase: 0.0,
            }],
            bias: vec![],
        };
        assert!((excitation(1, &single)[0] - 1.0).abs() < 1e-15);
        assert_eq!(excitation(3, &ExcitationSpec::constant(vec![0.0]))[0], 0.0);
        let two = ExcitationSpec {
            inputs: 1,
            terms: [1.0, 2.0]
                .iter()
                .map(|&w| SineTerm {
                    input: 0,
                    amplitude: 1.0,
                    frequency: w,
                    phase: 0.0,
                })
                .collect(),
            bias: vec![],
        };
        assert_eq!(excitation(0, &two)[0], 0.0);
    }

    #[test]
    fn multisine_is_seeded_and_valid() {
        let a = ExcitationSpec::multisine(2, 10, 3);
        assert_eq!(a, ExcitationSpec::multisine(2, 10, 3));
        assert_ne!(a, ExcitationSpec::multisine(2, 10, 4));
        assert_eq!(a.terms.len(), 20);
        assert_eq!(a.distinct_frequencies(), 20);
        assert!(a
            .terms
            .iter()
            .all(|t| t.frequency > 0.0 && t.frequency < PI));
        assert_eq!(a.terms.iter().filter(|t| t.input == 1).count(), 10);
        a.validate().unwrap();
    }

    #[test]
    fn validation_rejects_bad_terms() {
        let mut s = ExcitationSpec::multisine(1, 2, 0);
        s.terms[0].amplitude = 0.0;
        assert!(s.validate().is_err());
        let mut s = ExcitationSpec::multisine(1, 2, 0);
        s.terms[1].input = 3;
        assert!(s.validate().is_err());
        assert!(ExcitationSpec::constant(vec![f64::NAN]).validate().is_err());
    }

    #[test]
    fn k0_rule() {
        assert_eq!(default_k0(0.3, 1e-8), 16);
        assert!(0.3f64.powi(16) <= 1e-8 && 0.3f64.powi(15) > 1e-8);
        assert_eq!(default_k0(0.0, 1e-8), 1);
        assert_eq!(default_k0(0.5, 0.25), 2);
    }

    #[test]
    fn zero_experiment_gives_zero_log() {
        let mut plant = SimulatedPlant::new(LtiSystem::power_system(), DVector::zeros(3)).unwrap();
        let log = collect(
            &mut plant,
            demo_bank(),
            &ExcitationSpec::constant(vec![0.0]),
            2,
            10,
        )
        .unwrap();
        assert_eq!(log.len(), 8);
        for s in &log.samples {
            assert_eq!(s.u.amax(), 0.0);
            assert_eq!(s.y.amax(), 0.0);
            assert_eq!(s.r.amax(), 0.0);
        }
        let reg = build_regression(&log).unwrap();
        assert_eq!(reg.c_r, DMatrix::zeros(8, 21));
        assert_eq!(reg.d_rr, DMatrix::zeros(8, 36));
        let rep = rank_condition(&reg);
        assert_eq!((rep.achieved, rep.pass), (0, false));
    }

    #[test]
    fn single_sample_row() {
        let mut r = DVector::zeros(6);
        r[0] = 1.0;
        let log = ExperimentLog {
            k0: 0,
            ks: 1,
            samples: vec![Sample {
                k: 0,
                u: DVector::zeros(1),
                y: DVector::zeros(1),
                r: r.clone(),
                r_next: DVector::zeros(6),
            }],
        };
        let reg = build_regression(&log).unwrap();
        assert_eq!(reg.c_r.row(0).transpose(), -vecv(r.as_slice()));
    }

    #[test]
    fn demo_shapes_and_rank() {
        let log = demo_log([5.0; 3], 16, 216);
        assert_eq!(log.len(), 200);
        let reg = build_regression(&log).unwrap();
        assert_eq!(reg.d_u.ncols(), 1);
        assert_eq!(reg.d_ur.ncols(), 6);
        assert_eq!(reg.d_r.ncols(), 21);
        assert_eq!(reg.d_yy.ncols(), 1);
        assert_eq!(reg.rows(), 200);
        let rep = rank_condition(&reg);
        assert_eq!(rep.required, 28);
        assert_eq!(rep.min_rows, 34);
        assert!(rep.pass, "{rep:?}");
        assert_eq!(build_regression(&log).unwrap(), reg);
    }

    #[test]
    fn short_horizon_fails_rank() {
        let reg = build_regression(&demo_log([5.0; 3], 16, 21)).unwrap();
        let rep = rank_condition(&reg);
        assert!(!rep.pass);
        assert!(matches!(
            rep.into_result(),
            Err(SpiError::RankCondition { required: 28, .. })
        ));
    }

    #[test]
    fn value_difference_identity() {
        let log = demo_log([5.0; 3], 16, 60);
        let reg = build_regression(&log).unwrap();
        let p = crate::tensor_ops::SymMatrix::from_upper_fn(6, |i, j| {
            ((i * 7 + j * 3) % 5) as f64 - 1.5
        });
        let w = crate::tensor_ops::vecs(&p).unwrap();
        for (t, s) in log.samples.iter().enumerate() {
            let lhs = reg.c_r.row(t).transpose().dot(&w);
            let rhs = s.r_next.dot(&(&*p * &s.r_next)) - s.r.dot(&(&*p * &s.r));
            let scale = s.r_next.norm_squared() + s.r.norm_squared();
            assert!((lhs - rhs).abs() <= 1e-12 * scale.max(1.0));
        }
    }

    #[test]
    fn d_kbar_selector() {
        let log = demo_log([5.0; 3], 16, 40);
        assert_eq!(
            d_kbar(&log, &DMatrix::zeros(1, 6)).unwrap(),
            DMatrix::zeros(24, 1)
        );
        let mut e = DMatrix::zeros(1, 6);
        e[(0, 4)] = 1.0;
        let d = d_kbar(&log, &e).unwrap();
        for (t, s) in log.samples.iter().enumerate() {
            assert_eq!(d[(t, 0)], s.r[4] * s.r[4]);
        }
        assert!(d_kbar(&log, &DMatrix::zeros(6, 1)).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let log = demo_log([5.0; 3], 16, 30);
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let back = ExperimentLog::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, log);

        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines.remove(3);
        assert!(ExperimentLog::read_csv(lines.join("\n").as_bytes()).is_err());
    }
}
