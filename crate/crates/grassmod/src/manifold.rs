//! Grassmann manifold geometry: subspace points, tangent vectors, the
//! exponential/logarithmic maps, two subspace distances, and the sample
//! Karcher mean.
//!
//! A point of G(T, N_t) is stored as a T×N_t generator with orthonormal
//! columns; the actual object is its column space, so every operation here is
//! invariant to right-multiplication of a generator by a unitary matrix.

use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::numerics::{orthonormalize, sample_gaussian_matrix, svd, CMatrix, NumericsError};

/// Orthonormality slack accepted by [`GrassmannPoint::new`].
pub const POINT_TOL: f64 = 1e-10;
/// Tangency slack accepted by [`TangentVector::new`].
pub const TANGENT_TOL: f64 = 1e-8;
/// Smallest singular value of aᴴb below which the log map is refused.
pub const CUT_LOCUS_TOL: f64 = 1e-10;
/// Karcher mean defaults: step, gradient tolerance, iteration cap.
pub const KARCHER_TAU: f64 = 0.5;
pub const KARCHER_TOL: f64 = 1e-6;
pub const KARCHER_MAX_ITER: usize = 100;

#[derive(Debug, Error)]
pub enum ManifoldError {
    #[error("generator must be tall: rows > cols >= 1, got {rows}x{cols}")]
    NotTall { rows: usize, cols: usize },
    #[error("generator columns not orthonormal (defect {defect:.3e})")]
    NotOrthonormal { defect: f64 },
    #[error("delta is not tangent at the base point (defect {defect:.3e})")]
    NotTangent { defect: f64 },
    #[error("tangent vector based at a different point (distance {distance:.3e})")]
    BaseMismatch { distance: f64 },
    #[error("log map undefined: subspaces meet the cut locus (sigma_min {sigma_min:.3e})")]
    CutLocus { sigma_min: f64 },
    #[error("curve parameter must lie in [0, 1], got {0}")]
    BadCurveParameter(f64),
    #[error("mean of an empty point set")]
    EmptySet,
    #[error("points mix different Grassmannians")]
    MixedShapes,
    #[error("Karcher mean did not reach tolerance (residual {residual:.3e})")]
    NoConvergence {
        residual: f64,
        last: Box<GrassmannPoint>,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// A point of the Grassmannian: the column space of a tall orthonormal
/// generator.
#[derive(Debug, Clone)]
pub struct GrassmannPoint {
    generator: CMatrix,
}

impl GrassmannPoint {
    /// Wrap a generator, verifying shape and orthonormality.
    pub fn new(generator: CMatrix) -> Result<Self, ManifoldError> {
        let (rows, cols) = (generator.rows(), generator.cols());
        if cols < 1 || rows <= cols {
            return Err(ManifoldError::NotTall { rows, cols });
        }
        let gram = generator.hermitian().matmul(&generator);
        let defect = gram.sub(&CMatrix::identity(cols)).frobenius_norm();
        if !defect.is_finite() || defect > POINT_TOL {
            return Err(ManifoldError::NotOrthonormal { defect });
        }
        Ok(Self { generator })
    }

    /// Orthonormalize an arbitrary full-column-rank matrix and take its span.
    pub fn from_span(m: &CMatrix) -> Result<Self, ManifoldError> {
        Self::new(orthonormalize(m)?)
    }

    pub fn generator(&self) -> &CMatrix {
        &self.generator
    }

    /// Ambient dimension T (generator rows).
    pub fn ambient_dim(&self) -> usize {
        self.generator.rows()
    }

    /// Subspace dimension N_t (generator columns).
    pub fn subspace_dim(&self) -> usize {
        self.generator.cols()
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.ambient_dim() == other.ambient_dim()
            && self.subspace_dim() == other.subspace_dim()
    }
}

/// A tangent vector at a base point: a T×N_t matrix with baseᴴ·delta = 0.
#[derive(Debug, Clone)]
pub struct TangentVector {
    base: GrassmannPoint,
    delta: CMatrix,
}

impl TangentVector {
    pub fn new(base: GrassmannPoint, delta: CMatrix) -> Result<Self, ManifoldError> {
        if delta.rows() != base.ambient_dim() || delta.cols() != base.subspace_dim() {
            return Err(ManifoldError::NotTall {
                rows: delta.rows(),
                cols: delta.cols(),
            });
        }
        let defect = base.generator().hermitian().matmul(&delta).frobenius_norm();
        if !defect.is_finite() || defect > TANGENT_TOL {
            return Err(ManifoldError::NotTangent { defect });
        }
        Ok(Self { base, delta })
    }

    pub fn zero(base: GrassmannPoint) -> Self {
        let delta = CMatrix::zeros(base.ambient_dim(), base.subspace_dim());
        Self { base, delta }
    }

    pub fn base(&self) -> &GrassmannPoint {
        &self.base
    }

    pub fn delta(&self) -> &CMatrix {
        &self.delta
    }

    pub fn norm(&self) -> f64 {
        self.delta.frobenius_norm()
    }

    /// Scale the vector in place-free style (used to walk geodesics backwards).
    pub fn scale(&self, factor: f64) -> Self {
        Self {
            base: self.base.clone(),
            delta: self.delta.scale(factor),
        }
    }
}

/// Follow the geodesic leaving `base` with velocity `tangent` for time `t`.
///
/// With the thin SVD tΔ = UΣVᴴ the endpoint is base·V·cosΣ·Vᴴ + U·sinΣ·Vᴴ.
/// The delta is re-projected onto the tangent space first so the output is
/// orthonormal to machine precision even when the input carries the full
/// admitted tangency slack.
pub fn exp_map(
    base: &GrassmannPoint,
    tangent: &TangentVector,
    t: f64,
) -> Result<GrassmannPoint, ManifoldError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(ManifoldError::BadCurveParameter(t));
    }
    let distance = procrustes_distance(base, tangent.base());
    if distance > TANGENT_TOL {
        return Err(ManifoldError::BaseMismatch { distance });
    }
    let g = base.generator();
    let scaled = tangent.delta().scale(t);
    // strict tangent projection: delta - base (baseᴴ delta)
    let scaled = scaled.sub(&g.matmul(&g.hermitian().matmul(&scaled)));
    if scaled.frobenius_norm() < 1e-15 {
        return Ok(base.clone());
    }
    let dec = svd(&scaled)?;
    let n = base.subspace_dim();
    let cos_d = CMatrix::from_fn(n, n, |r, c| {
        if r == c {
            Complex64::new(dec.s[r].cos(), 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let sin_d = CMatrix::from_fn(n, n, |r, c| {
        if r == c {
            Complex64::new(dec.s[r].sin(), 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let vh = dec.v.hermitian();
    let stay = g.matmul(&dec.v).matmul(&cos_d).matmul(&vh);
    let go = dec.u.matmul(&sin_d).matmul(&vh);
    GrassmannPoint::new(stay.add(&go))
}

/// Invert the exponential map: the tangent at `a` whose unit-time geodesic
/// reaches `b`. Undefined when any principal angle reaches π/2.
pub fn log_map(a: &GrassmannPoint, b: &GrassmannPoint) -> Result<TangentVector, ManifoldError> {
    if !a.same_shape(b) {
        return Err(ManifoldError::MixedShapes);
    }
    let m = a.generator().hermitian().matmul(b.generator());
    let dec = svd(&m)?;
    let sigma_min = dec.s.last().copied().unwrap_or(0.0);
    if sigma_min < CUT_LOCUS_TOL {
        return Err(ManifoldError::CutLocus { sigma_min });
    }
    let n = a.subspace_dim();
    let inv_s = CMatrix::from_fn(n, n, |r, c| {
        if r == c {
            Complex64::new(1.0 / dec.s[r], 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let m_inv = dec.v.matmul(&inv_s).matmul(&dec.u.hermitian());
    // (b - a·m)·m⁻¹ has SVD U·S·Wᴴ; the log is U·atan(S)·Wᴴ
    let residual = b.generator().sub(&a.generator().matmul(&m)).matmul(&m_inv);
    let rd = svd(&residual)?;
    let atan_s = CMatrix::from_fn(n, n, |r, c| {
        if r == c {
            Complex64::new(rd.s[r].atan(), 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let delta = rd.u.matmul(&atan_s).matmul(&rd.v.hermitian());
    TangentVector::new(a.clone(), delta)
}

/// Arc-length distance √(Σ θ_k²) over the principal angles
/// θ_k = arccos σ_k(aᴴb). Defined everywhere, including the cut locus.
pub fn geodesic_distance(a: &GrassmannPoint, b: &GrassmannPoint) -> f64 {
    let m = a.generator().hermitian().matmul(b.generator());
    let dec = svd(&m).expect("finite generators have a finite Gram SVD");
    dec.s
        .iter()
        .map(|&s| s.clamp(-1.0, 1.0).acos().powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Chordal (projector embedding) distance: d² = N_t − ‖aᴴb‖_F².
///
/// Evaluated as ‖(I − aaᴴ)b‖_F, which is the same quantity but keeps full
/// relative accuracy near zero — the subtractive form bottoms out at √ε and
/// would report ~3e-8 for identical subspaces.
pub fn procrustes_distance(a: &GrassmannPoint, b: &GrassmannPoint) -> f64 {
    let ga = a.generator();
    let gb = b.generator();
    gb.sub(&ga.matmul(&ga.hermitian().matmul(gb))).frobenius_norm()
}

/// Span of a T×N_t i.i.d. complex Gaussian matrix — uniform on the
/// Grassmannian by left-rotation invariance of the Gaussian ensemble.
pub fn random_uniform_point(t_dim: usize, n_t: usize, rng: &mut ChaCha8Rng) -> GrassmannPoint {
    assert!(t_dim > n_t && n_t >= 1, "need T > N_t >= 1");
    loop {
        let g = sample_gaussian_matrix(t_dim, n_t, 1.0, rng);
        // rank deficiency has probability zero; retry absorbs the impossible
        if let Ok(p) = GrassmannPoint::from_span(&g) {
            return p;
        }
    }
}

fn mean_log_tangent(
    at: &GrassmannPoint,
    points: &[GrassmannPoint],
) -> Result<CMatrix, ManifoldError> {
    let mut acc = CMatrix::zeros(at.ambient_dim(), at.subspace_dim());
    for p in points {
        acc = acc.add(log_map(at, p)?.delta());
    }
    Ok(acc.scale(1.0 / points.len() as f64))
}

fn karcher_objective(at: &GrassmannPoint, points: &[GrassmannPoint]) -> f64 {
    points
        .iter()
        .map(|p| geodesic_distance(at, p).powi(2))
        .sum::<f64>()
        / points.len() as f64
}

/// Sample Karcher mean by tangent-space gradient descent.
///
/// Starts at `points[0]`, repeatedly averages the log maps and walks a `tau`
/// fraction of the mean tangent, halving the step whenever the monitored
/// objective (mean squared geodesic distance) would increase. Terminates when
/// the mean-tangent norm drops to `tol`; failure to do so within `max_iter`
/// iterations yields [`ManifoldError::NoConvergence`] carrying the last
/// iterate.
pub fn karcher_mean(
    points: &[GrassmannPoint],
    tau: f64,
    tol: f64,
    max_iter: usize,
) -> Result<GrassmannPoint, ManifoldError> {
    karcher_mean_from(points, 0, tau, tol, max_iter)
}

/// Karcher mean with a randomly selected starting point.
pub fn karcher_mean_seeded(
    points: &[GrassmannPoint],
    tau: f64,
    tol: f64,
    max_iter: usize,
    rng: &mut ChaCha8Rng,
) -> Result<GrassmannPoint, ManifoldError> {
    use rand::Rng;
    if points.is_empty() {
        return Err(ManifoldError::EmptySet);
    }
    let start = rng.gen_range(0..points.len());
    karcher_mean_from(points, start, tau, tol, max_iter)
}

fn karcher_mean_from(
    points: &[GrassmannPoint],
    start: usize,
    tau: f64,
    tol: f64,
    max_iter: usize,
) -> Result<GrassmannPoint, ManifoldError> {
    let first = points.first().ok_or(ManifoldError::EmptySet)?;
    if points.iter().any(|p| !p.same_shape(first)) {
        return Err(ManifoldError::MixedShapes);
    }
    let mut mu = points[start].clone();
    let mut objective = karcher_objective(&mu, points);
    for _ in 0..max_iter {
        let mean_delta = mean_log_tangent(&mu, points)?;
        let residual = mean_delta.frobenius_norm();
        if residual <= tol {
            return Ok(mu);
        }
        let tangent = TangentVector::new(mu.clone(), mean_delta)?;
        // walk toward the mean tangent; backtrack if the objective worsens
        let mut step = tau;
        let mut accepted = None;
        for _ in 0..30 {
            let candidate = exp_map(&mu, &tangent, step)?;
            let cand_obj = karcher_objective(&candidate, points);
            if cand_obj <= objective + 1e-12 {
                accepted = Some((candidate, cand_obj));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((candidate, cand_obj)) => {
                mu = candidate;
                objective = cand_obj;
            }
            None => {
                return Err(ManifoldError::NoConvergence {
                    residual,
                    last: Box::new(mu),
                })
            }
        }
    }
    let residual = mean_log_tangent(&mu, points)?.frobenius_norm();
    if residual <= tol {
        Ok(mu)
    } else {
        Err(ManifoldError::NoConvergence {
            residual,
            last: Box::new(mu),
        })
    }
}
