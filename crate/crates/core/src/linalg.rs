//! Dense numerical helpers shared by the regression and verification paths.
//!
//! Data matrices in this crate mix quantities of very different magnitude
//! (filtered inputs next to squared filtered outputs), so rank decisions and
//! least-squares solves are made on the column-equilibrated matrix. Column
//! scaling leaves the exact rank and the exact solution unchanged.

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Result, SpiError};

/// Relative singular-value cutoff: `max(rows, cols) * eps`.
pub fn rank_cutoff(rows: usize, cols: usize) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON
}

/// Euclidean norms of each column, with zero columns mapped to 1 so they
/// stay zero after scaling.
fn column_scales(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        m.ncols(),
        m.column_iter().map(|c| {
            let n = c.norm();
            if n > 0.0 && n.is_finite() {
                n
            } else {
                1.0
            }
        }),
    )
}

fn equilibrate(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let scales = column_scales(m);
    let mut scaled = m.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col /= scales[j];
    }
    (scaled, scales)
}

/// Singular values of the column-equilibrated matrix, descending.
pub fn equilibrated_singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DVector::zeros(0);
    }
    let (scaled, _) = equilibrate(m);
    let mut sv = scaled.singular_values();
    sv.as_mut_slice()
        .sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    sv
}

/// Numerical rank of the column-equilibrated matrix.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = equilibrated_singular_values(m);
    let Some(&smax) = sv.iter().next() else {
        return 0;
    };
    if smax == 0.0 {
        return 0;
    }
    let tol = rank_cutoff(m.nrows(), m.ncols()) * smax;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Plain numerical rank (no equilibration) with an explicit relative cutoff.
pub fn rank_with_tolerance(m: &DMatrix<f64>, relative: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > relative * smax).count()
}

#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub solution: DVector<f64>,
    pub rank: usize,
    /// Euclidean norm of `a * x - b`.
    pub residual: f64,
}

/// Full-column-rank least squares via SVD on the equilibrated matrix.
///
/// Fails with [`SpiError::RankDeficient`] when the numerical rank is below
/// the number of columns.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<LeastSquares> {
    if a.nrows() != b.len() {
        return Err(SpiError::dim("least_squares rhs", a.nrows(), b.len()));
    }
    let unknowns = a.ncols();
    if a.nrows() == 0 {
        return Err(SpiError::RankDeficient {
            rank: 0,
            unknowns,
            gap: unknowns,
        });
    }
    let (scaled, scales) = equilibrate(a);
    let svd = SVD::new(scaled, true, true);
    let smax = svd.singular_values.max();
    let tol = rank_cutoff(a.nrows(), a.ncols()) * smax;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if smax == 0.0 || rank < unknowns {
        return Err(SpiError::RankDeficient {
            rank: if smax == 0.0 { 0 } else { rank },
            unknowns,
            gap: unknowns - if smax == 0.0 { 0 } else { rank },
        });
    }
    let z = svd
        .solve(b, tol)
        .map_err(|_| SpiError::Singular("least_squares"))?;
    let solution = z.component_div(&scales);
    let residual = (a * &solution - b).norm();
    Ok(LeastSquares {
        solution,
        rank,
        residual,
    })
}

/// Frobenius-norm relative difference `||a - b|| / ||b||` (absolute when `b = 0`).
pub fn relative_difference(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let d = (a - b).norm();
    let s = b.norm();
    if s == 0.0 {
        d
    } else {
        d / s
    }
}

/// `(M + M^T) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}
