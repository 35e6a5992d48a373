//! Dense kernels for the normal equations of the trainer: accumulation of
//! `JᵀJ` from row blocks of `J`, and a blocked Cholesky solve. Matrices are
//! row-major.

use crate::error::{Error, Result};

const PANEL: usize = 256;
const CHOL_BLOCK: usize = 64;

/// `c += a_blockᵀ · b_block` where both blocks are column ranges of the same
/// row-major `rows × p` matrix; `c` is a `p × p` row-major matrix.
#[allow(clippy::too_many_arguments)]
fn gemm_tn(j: &[f64], rows: usize, p: usize, c0: usize, nc: usize, d0: usize, nd: usize, c: &mut [f64]) {
    // SAFETY: the strides address elements inside `j` and `c` only: rows
    // `0..rows` and columns `c0..c0 + nc`, `d0..d0 + nd` of `j`, which is
    // `rows × p`, and the `nc × nd` block of `c` at (c0, d0), which is `p × p`.
    unsafe {
        matrixmultiply::dgemm(
            nc,
            rows,
            nd,
            1.0,
            j.as_ptr().add(c0),
            1,
            p as isize,
            j.as_ptr().add(d0),
            p as isize,
            1,
            1.0,
            c.as_mut_ptr().add(c0 * p + d0),
            p as isize,
            1,
        );
    }
}

/// Add `JᵀJ` of a row block to the upper triangle (block-wise) of `jtj`.
pub fn accumulate_normal(j: &[f64], rows: usize, p: usize, jtj: &mut [f64]) {
    debug_assert_eq!(j.len(), rows * p);
    debug_assert_eq!(jtj.len(), p * p);
    let mut c0 = 0;
    while c0 < p {
        let nc = PANEL.min(p - c0);
        let mut d0 = c0;
        while d0 < p {
            let nd = PANEL.min(p - d0);
            gemm_tn(j, rows, p, c0, nc, d0, nd, jtj);
            d0 += nd;
        }
        c0 += nc;
    }
}

/// Copy the block upper triangle written by [`accumulate_normal`] into the
/// lower triangle.
pub fn symmetrize_from_upper(m: &mut [f64], p: usize) {
    for i in 0..p {
        for k in 0..i {
            m[i * p + k] = m[k * p + i];
        }
    }
}

/// In-place lower Cholesky factor of a symmetric positive definite matrix.
/// Only the lower triangle is read; the strict upper triangle is left as
/// garbage.
pub fn cholesky_in_place(a: &mut [f64], n: usize) -> Result<()> {
    let mut k0 = 0;
    while k0 < n {
        let k1 = (k0 + CHOL_BLOCK).min(n);
        for jj in k0..k1 {
            let mut d = a[jj * n + jj];
            for t in k0..jj {
                d -= a[jj * n + t] * a[jj * n + t];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Singular(format!("pivot {jj} is {d}")));
            }
            let l = d.sqrt();
            a[jj * n + jj] = l;
            for i in jj + 1..n {
                let mut s = a[i * n + jj];
                for t in k0..jj {
                    s -= a[i * n + t] * a[jj * n + t];
                }
                a[i * n + jj] = s / l;
            }
        }
        let m = n - k1;
        if m > 0 {
            // SAFETY: A = L21 (rows k1.., cols k0..k1), B = L21ᵀ, C = A22, all
            // inside the `n × n` buffer.
            unsafe {
                matrixmultiply::dgemm(
                    m,
                    k1 - k0,
                    m,
                    -1.0,
                    a.as_ptr().add(k1 * n + k0),
                    n as isize,
                    1,
                    a.as_ptr().add(k1 * n + k0),
                    1,
                    n as isize,
                    1.0,
                    a.as_mut_ptr().add(k1 * n + k1),
                    n as isize,
                    1,
                );
            }
        }
        k0 = k1;
    }
    Ok(())
}

/// Solve `L Lᵀ x = b` with the factor from [`cholesky_in_place`].
pub fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let row = &l[i * n..i * n + i];
        let s: f64 = row.iter().zip(&b[..i]).map(|(a, x)| a * x).sum();
        b[i] = (b[i] - s) / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normal_matrix_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (rows, p) = (37, 300);
        let j: Vec<f64> = (0..rows * p).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut m = vec![0.0; p * p];
        accumulate_normal(&j[..20 * p], 20, p, &mut m);
        accumulate_normal(&j[20 * p..], rows - 20, p, &mut m);
        symmetrize_from_upper(&mut m, p);
        for a in (0..p).step_by(7) {
            for b in (0..p).step_by(11) {
                let naive: f64 = (0..rows).map(|r| j[r * p + a] * j[r * p + b]).sum();
                assert!((m[a * p + b] - naive).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn cholesky_solves_spd_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 150;
        let g: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut a = vec![0.0; n * n];
        accumulate_normal(&g, n, n, &mut a);
        symmetrize_from_upper(&mut a, n);
        for i in 0..n {
            a[i * n + i] += 1.0;
        }
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let b: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|k| a[i * n + k] * x_true[k]).sum())
            .collect();
        let reference = nalgebra::DMatrix::from_row_slice(n, n, &a)
            .cholesky()
            .unwrap()
            .solve(&nalgebra::DVector::from_column_slice(&b));
        let mut l = a.clone();
        cholesky_in_place(&mut l, n).unwrap();
        let mut x = b.clone();
        cholesky_solve(&l, n, &mut x);
        for i in 0..n {
            assert!((x[i] - x_true[i]).abs() < 1e-8);
            assert!((x[i] - reference[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let mut a = vec![1.0, 2.0, 2.0, 1.0];
        assert!(matches!(cholesky_in_place(&mut a, 2), Err(Error::Singular(_))));
    }
}
