//! Small dense linear-algebra helpers shared by the GP and joint-model code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// First jitter tried after a plain factorization fails.
pub const JITTER_START: f64 = 1e-8;
/// Largest jitter tried before giving up.
pub const JITTER_MAX: f64 = 1e-2;

/// Cholesky factor of a symmetric positive-definite matrix, escalating a
/// diagonal jitter (relative to the mean diagonal) by ×10 from
/// [`JITTER_START`] to [`JITTER_MAX`] on failure.
///
/// Returns the factor and the relative jitter that was added (0 if none).
pub fn cholesky_jittered(
    m: &DMatrix<f64>,
    context: &str,
) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(ch) = m.clone().cholesky() {
        return Ok((ch, 0.0));
    }
    let n = m.nrows();
    let scale = if n == 0 {
        1.0
    } else {
        (m.diagonal().sum() / n as f64).abs().max(f64::MIN_POSITIVE)
    };
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * (1.0 + 1e-12) {
        let mut a = m.clone();
        for i in 0..n {
            a[(i, i)] += jitter * scale;
        }
        if let Some(ch) = a.cholesky() {
            return Ok((ch, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::numerical(context, JITTER_MAX))
}

pub fn chol_logdet(ch: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Solves `L w = b` for the lower-triangular factor `L`.
pub fn forward_solve(ch: &Cholesky<f64, Dyn>, b: &DVector<f64>) -> DVector<f64> {
    let l = ch.l_dirty();
    let n = b.len();
    let mut w = b.clone();
    for i in 0..n {
        let mut s = w[i];
        for k in 0..i {
            s -= l[(i, k)] * w[k];
        }
        w[i] = s / l[(i, i)];
    }
    w
}

/// Cholesky factorization backed by faer's blocked kernels, for the large
/// dense matrices in likelihood optimization. Same jitter escalation as
/// [`cholesky_jittered`].
pub struct SpdFactor {
    llt: faer::linalg::solvers::Llt<f64>,
    pub logdet: f64,
    pub jitter: f64,
}

impl SpdFactor {
    pub fn new(m: &DMatrix<f64>, context: &str) -> Result<Self> {
        let n = m.nrows();
        let view = faer::MatRef::from_column_major_slice(m.as_slice(), n, n);
        let scale = if n == 0 {
            1.0
        } else {
            (m.diagonal().sum() / n as f64).abs().max(f64::MIN_POSITIVE)
        };
        let mut jitter = 0.0;
        loop {
            let attempt = if jitter == 0.0 {
                view.llt(faer::Side::Lower)
            } else {
                let mut a = view.to_owned();
                for i in 0..n {
                    a[(i, i)] += jitter * scale;
                }
                a.llt(faer::Side::Lower)
            };
            if let Ok(llt) = attempt {
                let l = llt.L();
                let logdet = 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
                return Ok(Self { llt, logdet, jitter });
            }
            jitter = if jitter == 0.0 { JITTER_START } else { jitter * 10.0 };
            if jitter > JITTER_MAX * (1.0 + 1e-12) {
                return Err(Error::numerical(context, JITTER_MAX));
            }
        }
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        use faer::linalg::solvers::Solve;
        let rhs = faer::MatRef::from_column_major_slice(b.as_slice(), b.len(), 1);
        let x = self.llt.solve(rhs);
        DVector::from_fn(b.len(), |i, _| x[(i, 0)])
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        use faer::linalg::solvers::DenseSolveCore;
        let inv = self.llt.inverse();
        let n = inv.nrows();
        DMatrix::from_fn(n, n, |i, j| inv[(i, j)])
    }
}

/// Symmetrizes in place: `A <- (A + Aᵀ)/2`.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}
