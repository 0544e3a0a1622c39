//! Hermitian eigensolvers: dense (small problems) and block LOBPCG (matrix-free).

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CVec = Vec<Complex64>;

/// Eigenpairs of a dense Hermitian matrix, ascending.
pub fn dense_hermitian(h: &DMatrix<Complex64>) -> (Vec<f64>, Vec<CVec>) {
    let n = h.nrows();
    let real = h.iter().all(|z| z.im == 0.0);
    let (values, vectors): (Vec<f64>, Vec<CVec>) = if real {
        let hr = DMatrix::from_fn(n, n, |i, j| h[(i, j)].re);
        let eig = SymmetricEigen::new(hr);
        let vecs = (0..n)
            .map(|c| eig.eigenvectors.column(c).iter().map(|&v| Complex64::new(v, 0.0)).collect())
            .collect();
        (eig.eigenvalues.iter().copied().collect(), vecs)
    } else {
        let eig = SymmetricEigen::new(h.clone());
        let vecs = (0..n).map(|c| eig.eigenvectors.column(c).iter().copied().collect()).collect();
        (eig.eigenvalues.iter().copied().collect(), vecs)
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    (order.iter().map(|&i| values[i]).collect(), order.iter().map(|&i| vectors[i].clone()).collect())
}

#[derive(Debug, Clone, Copy)]
pub struct LobpcgOptions {
    /// Block size (number of simultaneously iterated vectors).
    pub block: usize,
    /// Number of lowest pairs that must converge.
    pub wanted: usize,
    /// Absolute residual tolerance `||H x - theta x||`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LobpcgOptions {
    fn default() -> Self {
        Self { block: 3, wanted: 1, tol: 1e-10, max_iter: 1000 }
    }
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn axpy(y: &mut [Complex64], alpha: Complex64, x: &[Complex64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Orthonormalize `vs[start..]` against everything before it (twice-iterated Gram–Schmidt),
/// dropping vectors that become numerically dependent.
fn orthonormalize_tail(vs: &mut Vec<CVec>, start: usize) {
    let mut i = start;
    while i < vs.len() {
        let before = norm(&vs[i]);
        if before == 0.0 {
            vs.remove(i);
            continue;
        }
        for _ in 0..2 {
            for j in 0..i {
                let (head, tail) = vs.split_at_mut(i);
                let c = dot(&head[j], &tail[0]);
                axpy(&mut tail[0], -c, &head[j]);
            }
        }
        let after = norm(&vs[i]);
        if after <= 1e-12 * before || !after.is_finite() {
            vs.remove(i);
            continue;
        }
        for z in vs[i].iter_mut() {
            *z /= after;
        }
        i += 1;
    }
}

fn combine(basis: &[CVec], coeffs: &DMatrix<Complex64>, rows: std::ops::Range<usize>, col: usize) -> CVec {
    let n = basis[0].len();
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for r in rows {
        let c = coeffs[(r, col)];
        if c != Complex64::new(0.0, 0.0) {
            axpy(&mut out, c, &basis[r]);
        }
    }
    out
}

/// Lowest eigenpairs of a Hermitian operator by preconditioned block LOBPCG.
///
/// `apply(x, y)` writes `H x` into `y`; `precond(r, w)` writes an approximate
/// inverse applied to `r` into `w`.
pub fn lobpcg<A, P>(mut apply: A, mut precond: P, init: Vec<CVec>, opts: LobpcgOptions) -> Result<(Vec<f64>, Vec<CVec>)>
where
    A: FnMut(&[Complex64], &mut [Complex64]),
    P: FnMut(&[Complex64], &mut [Complex64]),
{
    let dim = init[0].len();
    let zero = Complex64::new(0.0, 0.0);
    let mut x = init;
    orthonormalize_tail(&mut x, 0);
    let p_block = x.len();
    if p_block < opts.wanted {
        return Err(Error::InvalidParameter("initial block is rank deficient".into()));
    }
    let mut p: Vec<CVec> = Vec::new();
    let mut theta = vec![0.0; p_block];
    let mut worst = f64::INFINITY;

    for iter in 0..opts.max_iter {
        // Rayleigh–Ritz over span[X, W, P].
        let mut basis = x.clone();
        if iter > 0 {
            let mut w: Vec<CVec> = Vec::with_capacity(p_block);
            let mut ax = vec![zero; dim];
            for (i, xi) in x.iter().enumerate() {
                apply(xi, &mut ax);
                let mut r = ax.clone();
                axpy(&mut r, Complex64::new(-theta[i], 0.0), xi);
                let mut wi = vec![zero; dim];
                precond(&r, &mut wi);
                w.push(wi);
            }
            basis.extend(w);
            basis.extend(p.iter().cloned());
            orthonormalize_tail(&mut basis, p_block);
        }
        let m = basis.len();
        let mut abasis = Vec::with_capacity(m);
        for b in &basis {
            let mut y = vec![zero; dim];
            apply(b, &mut y);
            abasis.push(y);
        }
        let mut g = DMatrix::from_element(m, m, zero);
        for i in 0..m {
            for j in i..m {
                let v = dot(&basis[i], &abasis[j]);
                g[(i, j)] = v;
                g[(j, i)] = v.conj();
            }
            g[(i, i)] = Complex64::new(g[(i, i)].re, 0.0);
        }
        let (vals, vecs) = dense_hermitian(&g);
        let coeffs = DMatrix::from_fn(m, p_block, |r, c| vecs[c][r]);
        let new_x: Vec<CVec> = (0..p_block).map(|c| combine(&basis, &coeffs, 0..m, c)).collect();
        p = if m > p_block {
            (0..p_block).map(|c| combine(&basis, &coeffs, p_block..m, c)).collect()
        } else {
            Vec::new()
        };
        x = new_x;
        theta.copy_from_slice(&vals[..p_block]);

        // Residuals of the wanted pairs.
        worst = 0.0;
        let mut ax = vec![zero; dim];
        for i in 0..opts.wanted {
            apply(&x[i], &mut ax);
            axpy(&mut ax, Complex64::new(-theta[i], 0.0), &x[i]);
            worst = worst.max(norm(&ax));
        }
        if worst <= opts.tol {
            return Ok((theta, x));
        }
        // Keep the block orthonormal against drift.
        orthonormalize_tail(&mut x, 0);
        if x.len() < p_block {
            return Err(Error::EigenNonConvergence { iterations: iter + 1, residual: worst });
        }
    }
    Err(Error::EigenNonConvergence { iterations: opts.max_iter, residual: worst })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_like(n: usize) -> DMatrix<Complex64> {
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                Complex64::new(2.0 + 0.01 * i as f64, 0.0)
            } else if i + 1 == j {
                Complex64::new(-0.5, 0.3)
            } else if j + 1 == i {
                Complex64::new(-0.5, -0.3)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }

    #[test]
    fn dense_solver_sorts_and_handles_complex() {
        let h = laplacian_like(12);
        let (vals, vecs) = dense_hermitian(&h);
        for w in vals.windows(2) {
            assert!(w[0] <= w[1]);
        }
        let v = nalgebra::DVector::from_vec(vecs[0].clone());
        let r = &h * &v - v.clone() * Complex64::new(vals[0], 0.0);
        assert!(r.norm() < 1e-12);
    }

    #[test]
    fn lobpcg_agrees_with_dense() {
        let n = 60;
        let h = laplacian_like(n);
        let (dense_vals, _) = dense_hermitian(&h);
        let init: Vec<CVec> = (0..3)
            .map(|c| (0..n).map(|i| Complex64::new(((i * 7 + c * 3) % 11) as f64 + 1.0, 0.0)).collect())
            .collect();
        let hc = h.clone();
        let (vals, vecs) = lobpcg(
            |x, y| {
                let v = &hc * nalgebra::DVector::from_column_slice(x);
                y.copy_from_slice(v.as_slice());
            },
            |r, w| w.copy_from_slice(r),
            init,
            LobpcgOptions { wanted: 2, ..Default::default() },
        )
        .unwrap();
        assert!((vals[0] - dense_vals[0]).abs() < 1e-12);
        assert!((vals[1] - dense_vals[1]).abs() < 1e-12);
        assert!((norm(&vecs[0]) - 1.0).abs() < 1e-12);
    }
}
