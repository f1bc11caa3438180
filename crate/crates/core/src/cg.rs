//! Jacobi-preconditioned conjugate gradient for symmetric positive
//! (semi-)definite operators.

use std::time::Instant;

use rayon::prelude::*;

use crate::sparse::{axpy, dot, norm};

pub const DEFAULT_TOLERANCE: f64 = 1e-5;
pub const DEFAULT_MAX_ITERATIONS: usize = 2000;

pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    /// `y = A x`.
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgConfig {
    /// Target for `||A x - b|| / ||b||`.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Stop unconverged once this instant has passed.
    pub deadline: Option<Instant>,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            deadline: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CgStats {
    pub iterations: usize,
    /// True relative residual of the returned iterate.
    pub relative_residual: f64,
    pub converged: bool,
    /// Best relative residual reached so far, one entry per iteration.
    pub history: Vec<f64>,
}

/// Solve `A x = b` starting from zero. When the iteration limit is reached
/// the iterate with the smallest residual is returned with `converged = false`.
/// `diag` is the diagonal of `A`; non-positive entries are replaced by 1.
pub fn pcg(op: &dyn LinearOperator, diag: &[f64], b: &[f64], cfg: &CgConfig) -> (Vec<f64>, CgStats) {
    let n = op.dim();
    assert_eq!(b.len(), n);
    assert_eq!(diag.len(), n);
    let inv: Vec<f64> = diag
        .iter()
        .map(|&d| if d > 0.0 && d.is_finite() { 1.0 / d } else { 1.0 })
        .collect();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    let mut stats = CgStats::default();
    if bnorm == 0.0 {
        stats.converged = true;
        return (x, stats);
    }
    let precondition = |r: &[f64], z: &mut [f64]| {
        z.par_iter_mut()
            .zip(r.par_iter().zip(inv.par_iter()))
            .for_each(|(zi, (ri, mi))| *zi = ri * mi);
    };

    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut best = 1.0;
    let mut best_x = x.clone();

    while stats.iterations < cfg.max_iterations {
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            log::warn!("conjugate gradient breakdown: p^T A p = {pap:e}");
            break;
        }
        let a = rz / pap;
        axpy(a, &p, &mut x);
        axpy(-a, &ap, &mut r);
        stats.iterations += 1;
        let mut rel = norm(&r) / bnorm;
        let mut restart = false;
        if rel <= cfg.tolerance {
            // Guard against drift of the recursive residual.
            op.apply(&x, &mut ap);
            r.par_iter_mut()
                .zip(b.par_iter().zip(ap.par_iter()))
                .for_each(|(ri, (bi, ai))| *ri = bi - ai);
            rel = norm(&r) / bnorm;
            restart = true;
        }
        if rel < best {
            best = rel;
            best_x.copy_from_slice(&x);
        }
        stats.history.push(best);
        log::trace!("{{\"iter\":{},\"residual\":{rel:e}}}", stats.iterations);
        if rel <= cfg.tolerance {
            stats.converged = true;
            break;
        }
        if cfg.deadline.is_some_and(|d| Instant::now() >= d) {
            log::warn!("conjugate gradient stopped at the deadline after {} iterations", stats.iterations);
            break;
        }
        precondition(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = if restart { 0.0 } else { rz_new / rz };
        rz = rz_new;
        p.par_iter_mut()
            .zip(z.par_iter())
            .for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }

    if !stats.converged {
        x = best_x;
    }
    op.apply(&x, &mut ap);
    let resid: Vec<f64> = b.iter().zip(&ap).map(|(bi, ai)| bi - ai).collect();
    stats.relative_residual = norm(&resid) / bnorm;
    (x, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Dense(DMatrix<f64>);

    impl LinearOperator for Dense {
        fn dim(&self) -> usize {
            self.0.nrows()
        }
        fn apply(&self, x: &[f64], y: &mut [f64]) {
            let r = &self.0 * DVector::from_column_slice(x);
            y.copy_from_slice(r.as_slice());
        }
    }

    fn spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &m * m.transpose() + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn solves_dense_spd() {
        let a = spd(40, 1);
        let b: Vec<f64> = (0..40).map(|i| (i as f64).cos()).collect();
        let diag: Vec<f64> = (0..40).map(|i| a[(i, i)]).collect();
        let (x, stats) = pcg(&Dense(a.clone()), &diag, &b, &CgConfig { tolerance: 1e-10, max_iterations: 500, deadline: None });
        assert!(stats.converged);
        let exact = a.cholesky().unwrap().solve(&DVector::from_column_slice(&b));
        let err = (DVector::from_column_slice(&x) - exact).amax();
        assert!(err < 1e-6, "error {err}");
        assert!(stats.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn zero_rhs_takes_no_iterations() {
        let a = spd(5, 2);
        let (x, stats) = pcg(&Dense(a), &[1.0; 5], &[0.0; 5], &CgConfig::default());
        assert_eq!(x, vec![0.0; 5]);
        assert_eq!(stats.iterations, 0);
        assert!(stats.converged);
    }

    #[test]
    fn iteration_cap_returns_best_iterate() {
        let a = spd(60, 3);
        let b = vec![1.0; 60];
        let diag: Vec<f64> = (0..60).map(|i| a[(i, i)]).collect();
        let (_, stats) = pcg(&Dense(a), &diag, &b, &CgConfig { tolerance: 1e-14, max_iterations: 5, deadline: None });
        assert!(!stats.converged);
        assert_eq!(stats.iterations, 5);
        assert!((stats.relative_residual - stats.history[4]).abs() < 1e-9);
    }
}
