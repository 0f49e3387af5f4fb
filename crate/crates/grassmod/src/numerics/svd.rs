use super::{CMatrix, NumericsError};
use num_complex::Complex64;

/// Thin SVD: `u` is rows×k, `s` has k = min(rows, cols) values descending,
/// `v` is cols×k, and u·diag(s)·vᴴ reconstructs the input.
#[derive(Clone, Debug)]
pub struct SvdResult {
    pub u: CMatrix,
    pub s: Vec<f64>,
    pub v: CMatrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> CMatrix {
        let k = self.s.len();
        let mut us = self.u.clone();
        for c in 0..k {
            for r in 0..us.rows() {
                us[(r, c)] *= self.s[c];
            }
        }
        us.matmul(&self.v.hermitian())
    }
}

const JACOBI_TOL: f64 = 1e-15;
const MAX_SWEEPS: usize = 60;

/// Thin SVD via one-sided Jacobi: rotate column pairs of a working copy
/// until all pairs are numerically orthogonal, then read off norms.
/// Accurate to machine precision on the small matrices used here.
pub fn svd(m: &CMatrix) -> Result<SvdResult, NumericsError> {
    if !m.is_finite() {
        return Err(NumericsError::NonFinite);
    }
    if m.rows() >= m.cols() {
        svd_tall(m)
    } else {
        let r = svd_tall(&m.hermitian())?;
        Ok(SvdResult { u: r.v, s: r.s, v: r.u })
    }
}

fn svd_tall(m: &CMatrix) -> Result<SvdResult, NumericsError> {
    let (rows, cols) = (m.rows(), m.cols());
    let mut b = m.clone();
    let mut v = CMatrix::identity(cols);

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = Complex64::new(0.0, 0.0);
                for r in 0..rows {
                    let bp = b[(r, p)];
                    let bq = b[(r, q)];
                    alpha += bp.norm_sqr();
                    beta += bq.norm_sqr();
                    gamma += bp.conj() * bq;
                }
                let scale = (alpha * beta).sqrt();
                if scale == 0.0 || gamma.norm() <= JACOBI_TOL * scale {
                    continue;
                }
                rotated = true;
                // Phase out gamma, then apply the real symmetric Jacobi rotation
                // that annihilates the off-diagonal of [[alpha, |g|], [|g|, beta]].
                let g_abs = gamma.norm();
                let phase = gamma / g_abs;
                let tau = (beta - alpha) / (2.0 * g_abs);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let ph = phase.conj();
                for r in 0..rows {
                    let bp = b[(r, p)];
                    let bq = b[(r, q)] * ph;
                    b[(r, p)] = bp * c - bq * s;
                    b[(r, q)] = bp * s + bq * c;
                }
                for r in 0..cols {
                    let vp = v[(r, p)];
                    let vq = v[(r, q)] * ph;
                    v[(r, p)] = vp * c - vq * s;
                    v[(r, q)] = vp * s + vq * c;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let sigmas: Vec<f64> = (0..cols)
        .map(|c| b.column(c).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &bb| sigmas[bb].partial_cmp(&sigmas[a]).unwrap().then(a.cmp(&bb)));

    let mut u = CMatrix::zeros(rows, cols);
    let mut v_sorted = CMatrix::zeros(cols, cols);
    let mut s_sorted = Vec::with_capacity(cols);
    let tiny = sigmas.iter().cloned().fold(0.0, f64::max) * 1e-14;
    for (dst, &src) in order.iter().enumerate() {
        s_sorted.push(sigmas[src]);
        if sigmas[src] > tiny && sigmas[src] > 0.0 {
            for r in 0..rows {
                u[(r, dst)] = b[(r, src)] / sigmas[src];
            }
        }
        for r in 0..cols {
            v_sorted[(r, dst)] = v[(r, src)];
        }
    }
    // Null-space columns of u (zero singular values) still need orthonormal
    // fill-in so uᴴu = I holds regardless of rank.
    complete_orthonormal(&mut u, &s_sorted);

    Ok(SvdResult { u, s: s_sorted, v: v_sorted })
}

fn complete_orthonormal(u: &mut CMatrix, s: &[f64]) {
    let rows = u.rows();
    let cols = u.cols();
    let max_s = s.iter().cloned().fold(0.0, f64::max);
    let tiny = if max_s > 0.0 { max_s * 1e-14 } else { 0.0 };
    for c in 0..cols {
        if s[c] > tiny && s[c] > 0.0 {
            continue;
        }
        // Try standard basis vectors, orthogonalize against filled columns.
        for cand in 0..rows {
            let mut col: Vec<Complex64> = (0..rows)
                .map(|r| Complex64::new(if r == cand { 1.0 } else { 0.0 }, 0.0))
                .collect();
            for k in 0..cols {
                if k == c || (s[k] <= tiny && k > c) {
                    continue;
                }
                let dot: Complex64 = (0..rows).map(|r| u[(r, k)].conj() * col[r]).sum();
                for r in 0..rows {
                    let ukr = u[(r, k)];
                    col[r] -= dot * ukr;
                }
            }
            let norm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if norm > 0.5 {
                for r in 0..rows {
                    u[(r, c)] = col[r] / norm;
                }
                break;
            }
        }
    }
}

const RANK_TOL: f64 = 1e-12;

/// Orthonormal basis of the input's column space (left singular vectors).
pub fn orthonormalize(m: &CMatrix) -> Result<CMatrix, NumericsError> {
    if m.rows() < m.cols() {
        return Err(NumericsError::InvalidArgument("orthonormalize needs rows >= cols"));
    }
    let r = svd(m)?;
    let smax = r.s[0];
    let smin = *r.s.last().unwrap();
    if smax == 0.0 || smin < RANK_TOL * smax {
        return Err(NumericsError::RankDeficient {
            ratio: if smax > 0.0 { smin / smax } else { 0.0 },
        });
    }
    Ok(r.u)
}
