//! Generalized symmetric eigen-solvers for the assembled structural matrices.
//!
//! Two paths are provided: a dense reduction through a Cholesky factor of the
//! mass matrix for small problems, and banded-Cholesky subspace iteration for
//! larger meshes. Both return the lowest eigenpairs of `K v = lambda M v`
//! with `M`-orthonormal vectors.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Symmetric positive-definite matrix stored as a lower band.
///
/// Row `i` holds columns `i - bw ..= i`; entries outside the matrix are zero.
#[derive(Debug, Clone)]
pub struct BandedSpd {
    pub n: usize,
    pub bw: usize,
    data: Vec<f64>,
}

impl BandedSpd {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (j + self.bw - i)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        if r - c > self.bw {
            0.0
        } else {
            self.data[self.idx(r, c)]
        }
    }

    /// Accumulate into the symmetric entry `(i, j)`; only the lower triangle
    /// is stored, callers may pass indices in either order.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        assert!(r - c <= self.bw, "entry outside band");
        let k = self.idx(r, c);
        self.data[k] += v;
    }

    /// `y = A x` using the symmetric band.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.n {
            let j0 = i.saturating_sub(self.bw);
            let mut acc = 0.0;
            for j in j0..i {
                let a = self.data[self.idx(i, j)];
                acc += a * x[j];
                y[j] += a * x[i];
            }
            acc += self.data[self.idx(i, i)] * x[i];
            y[i] += acc;
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in i.saturating_sub(self.bw)..=i {
                let v = self.data[self.idx(i, j)];
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    /// In-place banded Cholesky factor `A = L L^T`.
    pub fn cholesky(mut self) -> Result<BandedChol> {
        for i in 0..self.n {
            let j0 = i.saturating_sub(self.bw);
            for j in j0..=i {
                let k0 = j.saturating_sub(self.bw).max(j0);
                let mut sum = self.data[self.idx(i, j)];
                for k in k0..j {
                    sum -= self.data[self.idx(i, k)] * self.data[self.idx(j, k)];
                }
                if i == j {
                    if sum <= 0.0 {
                        return Err(Error::EigenNonConvergence(format!(
                            "matrix not positive definite at pivot {i}"
                        )));
                    }
                    let k = self.idx(i, i);
                    self.data[k] = sum.sqrt();
                } else {
                    let d = self.data[self.idx(j, j)];
                    let k = self.idx(i, j);
                    self.data[k] = sum / d;
                }
            }
        }
        Ok(BandedChol { factor: self })
    }
}

/// Banded Cholesky factor supporting `A x = b` solves.
pub struct BandedChol {
    factor: BandedSpd,
}

impl BandedChol {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let f = &self.factor;
        let n = f.n;
        // forward: L y = b
        for i in 0..n {
            let j0 = i.saturating_sub(f.bw);
            let mut acc = b[i];
            for j in j0..i {
                acc -= f.data[f.idx(i, j)] * b[j];
            }
            b[i] = acc / f.data[f.idx(i, i)];
        }
        // backward: L^T x = y
        for i in (0..n).rev() {
            let j1 = (i + f.bw).min(n - 1);
            let mut acc = b[i];
            for j in i + 1..=j1 {
                acc -= f.data[f.idx(j, i)] * b[j];
            }
            b[i] = acc / f.data[f.idx(i, i)];
        }
    }
}

/// Lowest `n_modes` eigenpairs of the dense generalized problem.
pub fn dense_generalized_eig(
    k: &DMatrix<f64>,
    m: &DMatrix<f64>,
    n_modes: usize,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = k.nrows();
    assert_eq!(m.nrows(), n);
    let lm = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::EigenNonConvergence("mass matrix not positive definite".into()))?;
    let l = lm.l();
    let lt = l.transpose();
    // A = Lm^-1 K Lm^-T, symmetric
    let mut a = l
        .solve_lower_triangular(k)
        .ok_or_else(|| Error::EigenNonConvergence("singular mass Cholesky factor".into()))?;
    a.transpose_mut();
    a = l
        .solve_lower_triangular(&a)
        .ok_or_else(|| Error::EigenNonConvergence("singular mass Cholesky factor".into()))?;
    let a = (&a + a.transpose()) * 0.5;
    let se = a.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| se.eigenvalues[i].partial_cmp(&se.eigenvalues[j]).unwrap());
    let n_modes = n_modes.min(n);
    let mut vals = Vec::with_capacity(n_modes);
    let mut vecs = DMatrix::zeros(n, n_modes);
    for (c, &i) in order.iter().take(n_modes).enumerate() {
        vals.push(se.eigenvalues[i]);
        let y = se.eigenvectors.column(i).into_owned();
        // v = Lm^-T y
        let v = lt
            .solve_upper_triangular(&y)
            .ok_or_else(|| Error::EigenNonConvergence("singular mass Cholesky factor".into()))?;
        vecs.set_column(c, &v);
    }
    Ok((vals, vecs))
}

/// Subspace iteration on banded `K`, `M` for the lowest `n_modes` eigenpairs.
pub fn subspace_iteration(
    k: &BandedSpd,
    m: &BandedSpd,
    n_modes: usize,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = k.n;
    let q = (2 * n_modes).max(n_modes + 8).min(n);
    let chol = k.clone().cholesky()?;

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut x = DMatrix::from_fn(n, q, |_, _| rng.random::<f64>() - 0.5);
    let mut prev = vec![f64::INFINITY; n_modes];
    let mut prev_res = vec![f64::INFINITY; n_modes];
    let mut tmp = vec![0.0; n];

    for _ in 0..max_iter {
        // Y = M X ; Xbar = K^-1 Y
        let mut y = DMatrix::zeros(n, q);
        let mut xbar = DMatrix::zeros(n, q);
        for c in 0..q {
            let col: Vec<f64> = x.column(c).iter().copied().collect();
            m.mul_vec(&col, &mut tmp);
            for r in 0..n {
                y[(r, c)] = tmp[r];
            }
            chol.solve_in_place(&mut tmp);
            for r in 0..n {
                xbar[(r, c)] = tmp[r];
            }
        }
        // Rayleigh-Ritz projection
        let kr = xbar.transpose() * &y;
        let mut mr = DMatrix::zeros(q, q);
        for c in 0..q {
            let col: Vec<f64> = xbar.column(c).iter().copied().collect();
            m.mul_vec(&col, &mut tmp);
            for r in 0..q {
                let mut acc = 0.0;
                for i in 0..n {
                    acc += xbar[(i, r)] * tmp[i];
                }
                mr[(r, c)] = acc;
            }
        }
        let kr = (&kr + kr.transpose()) * 0.5;
        let mr = (&mr + mr.transpose()) * 0.5;
        let (vals, qr) = dense_generalized_eig(&kr, &mr, q)?;
        x = &xbar * &qr;

        let lambda_converged = vals
            .iter()
            .take(n_modes)
            .zip(prev.iter())
            .all(|(v, p)| (v - p).abs() <= tol * v.abs().max(1e-30));
        let mut converged = false;
        if lambda_converged {
            // Eigenvalues settle before eigenvectors do. Keep iterating on
            // the residuals until they are tiny or hit their roundoff floor
            // (large stiffness entries bound how small they can get).
            let res: Vec<f64> = (0..n_modes)
                .map(|i| eig_residual(k, m, vals[i], &x.column(i).into_owned()))
                .collect();
            converged = res
                .iter()
                .zip(prev_res.iter())
                .all(|(r, p)| *r < 1e-9 || *r > 0.9 * p);
            prev_res.clear();
            prev_res.extend(res);
        } else {
            prev_res.clear();
            prev_res.resize(n_modes, f64::INFINITY);
        }
        prev.clear();
        prev.extend(vals.iter().take(n_modes));
        if converged {
            let vecs = x.columns(0, n_modes).into_owned();
            return Ok((prev.clone(), vecs));
        }
    }
    Err(Error::EigenNonConvergence(format!(
        "subspace iteration exceeded {max_iter} iterations"
    )))
}

/// Relative residual `||K v - lambda M v|| / ||K v||` for one eigenpair.
pub fn eig_residual(k: &BandedSpd, m: &BandedSpd, lambda: f64, v: &DVector<f64>) -> f64 {
    let n = k.n;
    let col: Vec<f64> = v.iter().copied().collect();
    let mut kv = vec![0.0; n];
    let mut mv = vec![0.0; n];
    k.mul_vec(&col, &mut kv);
    m.mul_vec(&col, &mut mv);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        let r = kv[i] - lambda * mv[i];
        num += r * r;
        den += kv[i] * kv[i];
    }
    (num / den.max(1e-300)).sqrt()
}
