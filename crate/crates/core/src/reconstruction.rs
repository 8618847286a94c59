//! Input/output filter bank that reconstructs the plant state.
//!
//! Each input and each output channel drives its own copy of a Schur
//! companion filter `M_r`:
//!
//! ```text
//! r_u(k+1) = (I_m (x) M_r) r_u(k) + u(k) (x) b
//! r_y(k+1) = (I_p (x) M_r) r_y(k) + y(k) (x) b
//! ```
//!
//! with `b = [0, ..., 0, 1]^T`. The concatenation `r(k) = [r_u; r_y]` has
//! length `n_r = n m + n p` and, after the initial-condition transient has
//! died out, determines `x(k)` linearly.
//!
//! Note: the identity factors are `I_m` on the input bank and `I_p` on the
//! output bank. Printed the other way round the recursion is only dimensionally
//! consistent when `m == p`.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Result, SpiError};
use crate::plant::spectral_radius;

/// Monic polynomial coefficients `[1, d_1, ..., d_n]` with the given roots.
///
/// Real roots contribute `(s - r)`; each conjugate pair contributes the real
/// quadratic `s^2 - 2 Re(z) s + |z|^2`, so all arithmetic stays real.
pub fn monic_poly_from_roots(roots: &[Complex<f64>]) -> Result<Vec<f64>> {
    for z in roots {
        if !z.re.is_finite() || !z.im.is_finite() {
            return Err(SpiError::NonFinite("filter roots"));
        }
        let modulus = z.norm();
        if modulus >= 1.0 {
            return Err(SpiError::UnstableRoot {
                re: z.re,
                im: z.im,
                modulus,
            });
        }
    }

    let mut factors: Vec<Vec<f64>> = Vec::new();
    let mut used = vec![false; roots.len()];
    for (i, z) in roots.iter().enumerate() {
        if used[i] {
            continue;
        }
        used[i] = true;
        if z.im == 0.0 {
            factors.push(vec![1.0, -z.re]);
            continue;
        }
        let partner = roots
            .iter()
            .enumerate()
            .position(|(j, w)| !used[j] && w.re == z.re && w.im == -z.im)
            .ok_or(SpiError::UnpairedRoot { re: z.re, im: z.im })?;
        used[partner] = true;
        factors.push(vec![1.0, -2.0 * z.re, z.re * z.re + z.im * z.im]);
    }

    let mut poly = vec![1.0];
    for f in &factors {
        let mut next = vec![0.0; poly.len() + f.len() - 1];
        for (i, &a) in poly.iter().enumerate() {
            for (j, &b) in f.iter().enumerate() {
                next[i + j] += a * b;
            }
        }
        poly = next;
    }
    Ok(poly)
}

/// Companion matrix of the monic polynomial with the given roots: ones on the
/// superdiagonal, last row `[-d_n, ..., -d_1]`.
pub fn companion_from_roots(roots: &[Complex<f64>]) -> Result<DMatrix<f64>> {
    let poly = monic_poly_from_roots(roots)?;
    let n = roots.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n.saturating_sub(1) {
        m[(i, i + 1)] = 1.0;
    }
    for j in 0..n {
        // column j holds -d_{n-j}
        m[(n - 1, j)] = -poly[n - j];
    }
    Ok(m)
}

/// Default filter spectrum: `-0.1, -0.2, ...` for up to nine states, evenly
/// spaced inside `(-0.9, 0)` beyond that.
pub fn default_roots(n: usize) -> Vec<f64> {
    if n <= 9 {
        (1..=n).map(|i| -(i as f64) / 10.0).collect()
    } else {
        (1..=n).map(|i| -0.9 * i as f64 / n as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    mr: DMatrix<f64>,
    inputs: usize,
    outputs: usize,
    ru: DVector<f64>,
    ry: DVector<f64>,
}

impl FilterBank {
    /// Zero-initialized bank for `inputs` input channels and `outputs` output
    /// channels. `mr` must be Schur.
    pub fn new(mr: DMatrix<f64>, inputs: usize, outputs: usize) -> Result<Self> {
        if !mr.is_square() {
            return Err(SpiError::NotSquare {
                rows: mr.nrows(),
                cols: mr.ncols(),
            });
        }
        let rho = spectral_radius(&mr)?;
        if rho >= 1.0 {
            return Err(SpiError::NotSchur(rho));
        }
        let n = mr.nrows();
        Ok(Self {
            mr,
            inputs,
            outputs,
            ru: DVector::zeros(n * inputs),
            ry: DVector::zeros(n * outputs),
        })
    }

    pub fn from_roots(roots: &[Complex<f64>], inputs: usize, outputs: usize) -> Result<Self> {
        Self::new(companion_from_roots(roots)?, inputs, outputs)
    }

    /// Same filter, states reset to zero.
    pub fn reset(&self) -> Self {
        Self {
            ru: DVector::zeros(self.ru.len()),
            ry: DVector::zeros(self.ry.len()),
            ..self.clone()
        }
    }

    pub fn companion(&self) -> &DMatrix<f64> {
        &self.mr
    }

    pub fn order(&self) -> usize {
        self.mr.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    /// `n_r = n m + n p`.
    pub fn state_len(&self) -> usize {
        self.ru.len() + self.ry.len()
    }

    pub fn input_state(&self) -> &DVector<f64> {
        &self.ru
    }

    pub fn output_state(&self) -> &DVector<f64> {
        &self.ry
    }

    /// Pure transition.
    pub fn filter_step(&self, u: &DVector<f64>, y: &DVector<f64>) -> Result<Self> {
        let mut next = self.clone();
        next.advance(u, y)?;
        Ok(next)
    }

    /// In-place transition.
    pub fn advance(&mut self, u: &DVector<f64>, y: &DVector<f64>) -> Result<()> {
        if u.len() != self.inputs {
            return Err(SpiError::dim("filter input", self.inputs, u.len()));
        }
        if y.len() != self.outputs {
            return Err(SpiError::dim("filter output", self.outputs, y.len()));
        }
        self.ru = bank_step(&self.mr, &self.ru, u);
        self.ry = bank_step(&self.mr, &self.ry, y);
        Ok(())
    }

    /// `[r_u; r_y]`.
    pub fn reconstruction_state(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.state_len());
        out.rows_mut(0, self.ru.len()).copy_from(&self.ru);
        out.rows_mut(self.ru.len(), self.ry.len())
            .copy_from(&self.ry);
        out
    }

    #[cfg(test)]
    pub(crate) fn with_states(mut self, ru: DVector<f64>, ry: DVector<f64>) -> Self {
        assert_eq!(ru.len(), self.ru.len());
        assert_eq!(ry.len(), self.ry.len());
        self.ru = ru;
        self.ry = ry;
        self
    }
}

/// `(I (x) M) r + s (x) b`, one `n`-block per channel of `s`.
fn bank_step(mr: &DMatrix<f64>, r: &DVector<f64>, drive: &DVector<f64>) -> DVector<f64> {
    let n = mr.nrows();
    let mut out = DVector::zeros(r.len());
    for (ch, &s) in drive.iter().enumerate() {
        let block = mr * r.rows(ch * n, n);
        out.rows_mut(ch * n, n).copy_from(&block);
        out[ch * n + n - 1] += s;
    }
    out
}
