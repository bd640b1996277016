//! Small dense complex linear algebra used by the Hamiltonian and
//! propagation layers.
//!
//! Matrices are `ndarray::Array2<Complex64>` throughout the crate; the
//! Hermitian eigensolver is delegated to `faer`. All faer calls run with
//! sequential parallelism so results are bit-identical regardless of the
//! worker count chosen by the caller.

use faer::Mat;
use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use std::sync::Once;

use crate::error::{Error, Result};

static FAER_INIT: Once = Once::new();

fn faer_seq() {
    FAER_INIT.call_once(|| {
        faer::set_global_parallelism(faer::Par::Seq);
    });
}

/// Eigendecomposition of a Hermitian matrix.
///
/// Returns eigenvalues in ascending order and the matching eigenvectors as
/// columns. The input is validated to be Hermitian within `tol` relative to
/// its largest element.
pub fn eigh(h: &Array2<C64>, tol: f64) -> Result<(Array1<f64>, Array2<C64>)> {
    let n = h.nrows();
    if h.ncols() != n {
        return Err(Error::Validation(format!(
            "eigh expects a square matrix, got {}x{}",
            n,
            h.ncols()
        )));
    }
    let dev = hermiticity_deviation(h);
    if dev > tol {
        return Err(Error::Validation(format!(
            "matrix is not Hermitian: relative deviation {dev:.3e} exceeds {tol:.1e}"
        )));
    }
    faer_seq();
    let m = Mat::from_fn(n, n, |i, j| h[[i, j]]);
    let eig = m
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
    let u = eig.U();
    let s = eig.S();
    let mut vals: Vec<f64> = (0..n).map(|i| s[i].re).collect();
    let mut vecs = Array2::<C64>::zeros((n, n));
    for j in 0..n {
        for i in 0..n {
            vecs[[i, j]] = u[(i, j)];
        }
    }
    // faer returns ascending eigenvalues; enforce it anyway so downstream
    // level selection never depends on solver internals.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
    if order.windows(2).any(|w| w[0] > w[1]) {
        let sorted_vals: Vec<f64> = order.iter().map(|&k| vals[k]).collect();
        let mut sorted_vecs = Array2::<C64>::zeros((n, n));
        for (dst, &src) in order.iter().enumerate() {
            for i in 0..n {
                sorted_vecs[[i, dst]] = vecs[[i, src]];
            }
        }
        vals = sorted_vals;
        vecs = sorted_vecs;
    }
    Ok((Array1::from(vals), vecs))
}

/// Matrix product via faer (sequential).
pub fn mat_mul(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    assert_eq!(a.ncols(), b.nrows(), "dimension mismatch in mat_mul");
    faer_seq();
    let (m, k) = (a.nrows(), a.ncols());
    let n = b.ncols();
    let fa = Mat::from_fn(m, k, |i, j| a[[i, j]]);
    let fb = Mat::from_fn(k, n, |i, j| b[[i, j]]);
    let fc = fa * fb;
    Array2::from_shape_fn((m, n), |(i, j)| fc[(i, j)])
}

/// Conjugate transpose.
pub fn dagger(a: &Array2<C64>) -> Array2<C64> {
    let (m, n) = (a.nrows(), a.ncols());
    Array2::from_shape_fn((n, m), |(i, j)| a[[j, i]].conj())
}

/// Kronecker product with the first factor on the slow (major) index.
pub fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (ma, na) = (a.nrows(), a.ncols());
    let (mb, nb) = (b.nrows(), b.ncols());
    let mut out = Array2::<C64>::zeros((ma * mb, na * nb));
    for i in 0..ma {
        for j in 0..na {
            let aij = a[[i, j]];
            if aij == C64::new(0.0, 0.0) {
                continue;
            }
            for k in 0..mb {
                for l in 0..nb {
                    out[[i * mb + k, j * nb + l]] = aij * b[[k, l]];
                }
            }
        }
    }
    out
}

pub fn identity(n: usize) -> Array2<C64> {
    Array2::from_diag_elem(n, C64::new(1.0, 0.0))
}

/// max_ij |H_ij - conj(H_ji)| / max_ij |H_ij| (0 for the zero matrix).
pub fn hermiticity_deviation(h: &Array2<C64>) -> f64 {
    let mut scale = 0.0f64;
    let mut dev = 0.0f64;
    for i in 0..h.nrows() {
        for j in 0..h.ncols() {
            scale = scale.max(h[[i, j]].norm());
            dev = dev.max((h[[i, j]] - h[[j, i]].conj()).norm());
        }
    }
    if scale == 0.0 {
        0.0
    } else {
        dev / scale
    }
}

/// max_ij |(U U^dag - I)_ij|.
pub fn unitarity_deviation(u: &Array2<C64>) -> f64 {
    let p = mat_mul(u, &dagger(u));
    let n = p.nrows();
    let mut dev = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
            dev = dev.max((p[[i, j]] - target).norm());
        }
    }
    dev
}

/// y = M x for complex dense M.
pub fn mat_vec(m: &Array2<C64>, x: &[C64], y: &mut [C64]) {
    let (rows, cols) = (m.nrows(), m.ncols());
    debug_assert_eq!(cols, x.len());
    debug_assert_eq!(rows, y.len());
    let ms = m.as_slice().expect("matrix must be contiguous");
    for i in 0..rows {
        let row = &ms[i * cols..(i + 1) * cols];
        let mut acc = C64::new(0.0, 0.0);
        for j in 0..cols {
            acc += row[j] * x[j];
        }
        y[i] = acc;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn eigh_reconstructs_small_matrix() {
        let h = ndarray::array![
            [c(1.0, 0.0), c(0.5, -0.25), c(0.0, 0.1)],
            [c(0.5, 0.25), c(-2.0, 0.0), c(0.3, 0.0)],
            [c(0.0, -0.1), c(0.3, 0.0), c(0.7, 0.0)]
        ];
        let (vals, vecs) = eigh(&h, 1e-12).unwrap();
        assert!(vals.windows(2).into_iter().all(|w| w[0] <= w[1]));
        // H V = V diag(vals)
        let hv = mat_mul(&h, &vecs);
        for j in 0..3 {
            for i in 0..3 {
                let want = vecs[[i, j]] * vals[j];
                assert_abs_diff_eq!(hv[[i, j]].re, want.re, epsilon = 1e-12);
                assert_abs_diff_eq!(hv[[i, j]].im, want.im, epsilon = 1e-12);
            }
        }
        assert!(unitarity_deviation(&vecs) < 1e-13);
    }

    #[test]
    fn eigh_rejects_non_hermitian() {
        let h = ndarray::array![[c(0.0, 0.0), c(1.0, 0.0)], [c(0.5, 0.0), c(0.0, 0.0)]];
        assert!(eigh(&h, 1e-12).is_err());
    }

    #[test]
    fn kron_matches_block_structure() {
        let a = ndarray::array![[c(1.0, 0.0), c(2.0, 0.0)], [c(0.0, 0.0), c(-1.0, 0.0)]];
        let b = ndarray::array![[c(0.0, 1.0), c(3.0, 0.0)], [c(1.0, 0.0), c(0.0, 0.0)]];
        let k = kron(&a, &b);
        assert_eq!(k.dim(), (4, 4));
        assert_eq!(k[[0, 1]], c(3.0, 0.0));
        assert_eq!(k[[0, 2]], c(0.0, 2.0));
        assert_eq!(k[[2, 2]], c(0.0, -1.0));
        assert_eq!(k[[3, 2]], c(-1.0, 0.0));
    }

    #[test]
    fn mat_vec_agrees_with_mat_mul() {
        let a = ndarray::array![[c(1.0, 1.0), c(2.0, 0.0)], [c(0.0, -1.0), c(4.0, 0.5)]];
        let x = [c(1.0, 0.0), c(0.0, 2.0)];
        let mut y = [c(0.0, 0.0); 2];
        mat_vec(&a, &x, &mut y);
        let xm = Array2::from_shape_vec((2, 1), x.to_vec()).unwrap();
        let ym = mat_mul(&a, &xm);
        assert_abs_diff_eq!(y[0].re, ym[[0, 0]].re, epsilon = 1e-14);
        assert_abs_diff_eq!(y[1].im, ym[[1, 0]].im, epsilon = 1e-14);
    }
}
