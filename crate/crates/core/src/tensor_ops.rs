//! Vectorization and Kronecker utilities.
//!
//! `vecs` and `vecv` share one traversal order (row-major over the upper
//! triangle, `i <= j`), so that `vecs(P) . vecv(x) = x^T P x`. Every regression
//! in the learner relies on that identity.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SpiError};

pub type DenseMatrix = DMatrix<f64>;

/// A square matrix that is symmetric by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Builds from the upper triangle of `f(i, j)`, `i <= j`, mirrored below.
    pub fn from_upper_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymMatrix(m)
    }

    /// `(M + M^T) / 2`.
    pub fn symmetrized(m: &DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(SpiError::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        Ok(Self::from_upper_fn(m.nrows(), |i, j| {
            0.5 * (m[(i, j)] + m[(j, i)])
        }))
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

impl Deref for SymMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl AsRef<DMatrix<f64>> for SymMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Number of upper-triangle entries of an `a x a` matrix.
pub const fn triangular(a: usize) -> usize {
    a * (a + 1) / 2
}

/// Inverse of [`triangular`], if `len` is a triangular number.
pub fn triangular_root(len: usize) -> Option<usize> {
    // a ~ sqrt(2 len); check the neighbours exactly
    let guess = ((2 * len) as f64).sqrt() as usize;
    (guess.saturating_sub(1)..=guess + 1).find(|&a| triangular(a) == len)
}

/// Column stacking.
pub fn vec(m: &DMatrix<f64>) -> DVector<f64> {
    // nalgebra stores column-major, which is exactly the stacking order
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec`] for a `rows x cols` target.
pub fn unvec(v: &[f64], rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    if v.len() != rows * cols {
        return Err(SpiError::dim("unvec", rows * cols, v.len()));
    }
    Ok(DMatrix::from_column_slice(rows, cols, v))
}

/// Upper triangle, row-major, off-diagonals doubled. Only the upper triangle
/// of `m` is read.
pub fn vecs(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    if !m.is_square() {
        return Err(SpiError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    let a = m.nrows();
    let mut out = Vec::with_capacity(triangular(a));
    for i in 0..a {
        out.push(m[(i, i)]);
        for j in i + 1..a {
            out.push(2.0 * m[(i, j)]);
        }
    }
    Ok(DVector::from_vec(out))
}

/// Pairwise products `v_i v_j`, `i <= j`, row-major.
pub fn vecv(v: &[f64]) -> DVector<f64> {
    let a = v.len();
    let mut out = Vec::with_capacity(triangular(a));
    for i in 0..a {
        for j in i..a {
            out.push(v[i] * v[j]);
        }
    }
    DVector::from_vec(out)
}

/// Inverse of [`vecs`]: halves the off-diagonal entries back.
pub fn mat_from_vecs(w: &[f64]) -> Result<SymMatrix> {
    let a = triangular_root(w.len()).ok_or(SpiError::NotTriangular(w.len()))?;
    let mut idx = 0;
    let mut m = DMatrix::zeros(a, a);
    for i in 0..a {
        for j in i..a {
            let v = if i == j { w[idx] } else { 0.5 * w[idx] };
            m[(i, j)] = v;
            m[(j, i)] = v;
            idx += 1;
        }
    }
    Ok(SymMatrix(m))
}

/// Kronecker product `A (x) B`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = DMatrix::zeros(ra * rb, ca * cb);
    for i in 0..ra {
        for j in 0..ca {
            let aij = a[(i, j)];
            if aij != 0.0 {
                out.view_mut((i * rb, j * cb), (rb, cb))
                    .copy_from(&(b * aij));
            }
        }
    }
    out
}

/// Kronecker product of two vectors, `u (x) v`.
pub fn kron_vec(u: &[f64], v: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        u.len() * v.len(),
        u.iter().flat_map(|&ui| v.iter().map(move |&vj| ui * vj)),
    )
}

/// Row lists, the layout used in config files and JSON artifacts.
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
        return Err(SpiError::dim("matrix row", cols, bad.len()));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(SpiError::NonFinite("matrix entries"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn row_lists_round_trip() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(to_rows(&m), vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        assert_eq!(from_rows(&to_rows(&m)).unwrap(), m);
        assert!(from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn vec_examples() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(vec(&m).as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(vec(&DMatrix::from_element(1, 1, 7.5)).as_slice(), &[7.5]);
        assert_eq!(vec(&DMatrix::zeros(2, 3)), DVector::zeros(6));
    }

    #[test]
    fn vecs_examples() {
        assert_eq!(
            vecs(&DMatrix::identity(2, 2)).unwrap().as_slice(),
            &[1.0, 0.0, 1.0]
        );
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0]);
        assert_eq!(vecs(&m).unwrap().as_slice(), &[1.0, 4.0, 3.0]);
        assert_eq!(
            vecs(&DMatrix::identity(3, 3)).unwrap().as_slice(),
            &[1.0, 0.0, 0.0, 1.0, 0.0, 1.0]
        );
        assert!(matches!(
            vecs(&DMatrix::zeros(2, 3)),
            Err(SpiError::NotSquare { rows: 2, cols: 3 })
        ));
    }

    #[test]
    fn vecv_examples() {
        assert_eq!(vecv(&[1.0, 2.0]).as_slice(), &[1.0, 2.0, 4.0]);
        assert_eq!(vecv(&[0.0; 3]), DVector::zeros(6));
        assert_eq!(vecv(&[3.0]).as_slice(), &[9.0]);
    }

    #[test]
    fn mat_from_vecs_examples() {
        let m = mat_from_vecs(&[1.0, 4.0, 3.0]).unwrap();
        assert_eq!(*m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0]));
        assert_eq!(
            *mat_from_vecs(&[1.0, 0.0, 1.0]).unwrap(),
            DMatrix::identity(2, 2)
        );
        assert_eq!(
            *mat_from_vecs(&[5.0]).unwrap(),
            DMatrix::from_element(1, 1, 5.0)
        );
        assert!(matches!(
            mat_from_vecs(&[1.0, 2.0]),
            Err(SpiError::NotTriangular(2))
        ));
        assert!(mat_from_vecs(&[]).unwrap().is_empty());
    }

    #[test]
    fn kron_examples() {
        let nil = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let k = kron(&DMatrix::identity(2, 2), &nil);
        let mut expected = DMatrix::zeros(4, 4);
        expected[(0, 1)] = 1.0;
        expected[(2, 3)] = 1.0;
        assert_eq!(k, expected);

        let m = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 3.0, 0.5, 0.0, 4.0]);
        assert_eq!(kron(&DMatrix::from_element(1, 1, 2.0), &m), &m * 2.0);

        assert_eq!(
            kron_vec(&[1.0, 2.0], &[0.0, 1.0]).as_slice(),
            &[0.0, 1.0, 0.0, 2.0]
        );
        let as_mat = kron(
            &DMatrix::from_column_slice(2, 1, &[1.0, 2.0]),
            &DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
        );
        assert_eq!(as_mat.as_slice(), &[0.0, 1.0, 0.0, 2.0]);
    }

    #[test]
    fn triangular_roots() {
        for a in 0..50 {
            assert_eq!(triangular_root(triangular(a)), Some(a));
        }
        assert_eq!(triangular_root(4), None);
    }

    fn small_matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
        prop::collection::vec(-10.0f64..10.0, rows * cols)
            .prop_map(move |v| DMatrix::from_vec(rows, cols, v))
    }

    proptest! {
        #[test]
        fn kron_mixed_product(
            (a, b, c, d) in (1usize..4, 1usize..4, 1usize..4, 1usize..4, 1usize..4, 1usize..4)
                .prop_flat_map(|(ra, ca, rb, cb, cc, cd)| (
                    small_matrix(ra, ca),
                    small_matrix(rb, cb),
                    small_matrix(ca, cc),
                    small_matrix(cb, cd),
                ))
        ) {
            let lhs = kron(&a, &b) * kron(&c, &d);
            let rhs = kron(&(&a * &c), &(&b * &d));
            let scale = kron(&a.abs(), &b.abs()) * kron(&c.abs(), &d.abs());
            for (l, (r, s)) in lhs.iter().zip(rhs.iter().zip(scale.iter())) {
                prop_assert!((l - r).abs() <= 1e-12 * s.max(1e-300));
            }
        }

        #[test]
        fn vecs_round_trip_on_rationals(
            (dim, entries) in (1usize..7).prop_flat_map(|d| (Just(d), prop::collection::vec(-64i32..64, triangular(d))))
        ) {
            // entries are k/4 so halving and doubling are exact
            let mut it = entries.iter();
            let s = SymMatrix::from_upper_fn(dim, |_, _| *it.next().unwrap() as f64 / 4.0);
            let back = mat_from_vecs(vecs(&s).unwrap().as_slice()).unwrap();
            prop_assert_eq!(back, s);
        }
    }
}
