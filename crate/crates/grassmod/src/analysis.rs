//! Closed-form performance bounds for blind constellation detection:
//! the received-symbol distance tail law, K-means / DFS cluster-separability
//! lower bounds, and the DFS intra-cluster connectivity lower bound obtained
//! from a bin-packing argument on the manifold.
//!
//! Everything here is a pure function of [`AnalysisParams`]; no simulation.

use thiserror::Error;

use crate::numerics::{ln_gamma, reg_gamma_lower, reg_gamma_upper};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("invalid analysis parameters: {0}")]
    BadParams(&'static str),
    #[error("outside the formula's domain: {0}")]
    Domain(&'static str),
}

/// Operating point for every bound in this module.
///
/// `d` is always recomputed as 2·N_t·(T−N_t); it cannot be supplied. The disk
/// constant `a` is solved at construction so that a received symbol stays
/// within distance a/√ρ of its codeword with probability ≥ 1 − ε/N, which
/// makes it independent of ρ (the tail argument only sees √ρ·r).
#[derive(Debug, Clone)]
pub struct AnalysisParams {
    rho: f64,
    t: usize,
    n_t: usize,
    lambda_bar: f64,
    d: usize,
    l: usize,
    n: usize,
    gamma0: f64,
    a: f64,
    eta_d: f64,
    epsilon: f64,
    delta: f64,
}

impl AnalysisParams {
    pub fn new(
        rho: f64,
        t: usize,
        n_t: usize,
        lambda_bar: f64,
        l: usize,
        n: usize,
    ) -> Result<Self, AnalysisError> {
        if n_t == 0 || t <= n_t {
            return Err(AnalysisError::BadParams("need 0 < N_t < T"));
        }
        if !(rho > 0.0) || !(lambda_bar > 0.0) {
            return Err(AnalysisError::BadParams("rho and lambda_bar must be positive"));
        }
        if l < 2 || n == 0 {
            return Err(AnalysisError::BadParams("need L >= 2 and N >= 1"));
        }
        let d = 2 * n_t * (t - n_t);
        let (epsilon, delta) = (0.1, 0.1);
        let a = solve_disk_constant(t, n_t, lambda_bar, d, epsilon / n as f64);
        let mut p = AnalysisParams {
            rho,
            t,
            n_t,
            lambda_bar,
            d,
            l,
            n,
            gamma0: 0.0,
            a,
            eta_d: 0.5,
            epsilon,
            delta,
        };
        // Default DFS threshold: the largest value still inside the dense
        // regime used by the connectivity argument.
        p.gamma0 = p.disk_radius() / 10.0;
        Ok(p)
    }

    pub fn with_gamma0(mut self, gamma0: f64) -> Result<Self, AnalysisError> {
        if !(gamma0 >= 0.0) {
            return Err(AnalysisError::BadParams("gamma0 must be nonnegative"));
        }
        self.gamma0 = gamma0;
        Ok(self)
    }

    pub fn with_eta_d(mut self, eta_d: f64) -> Result<Self, AnalysisError> {
        if !(eta_d > 0.0 && eta_d <= 1.0) {
            return Err(AnalysisError::BadParams("eta_D must lie in (0, 1]"));
        }
        self.eta_d = eta_d;
        Ok(self)
    }

    /// Replace the constraint slacks; re-solves the disk constant.
    pub fn with_slacks(mut self, epsilon: f64, delta: f64) -> Result<Self, AnalysisError> {
        if !(epsilon > 0.0 && epsilon < 1.0) || !(delta > 0.0 && delta < 1.0) {
            return Err(AnalysisError::BadParams("slacks must lie in (0, 1)"));
        }
        self.epsilon = epsilon;
        self.delta = delta;
        self.a = solve_disk_constant(self.t, self.n_t, self.lambda_bar, self.d, epsilon / self.n as f64);
        Ok(self)
    }

    /// Manual override for the disk constant (diagnostics).
    pub fn with_disk_constant(mut self, a: f64) -> Result<Self, AnalysisError> {
        if !(a > 0.0) {
            return Err(AnalysisError::BadParams("disk constant must be positive"));
        }
        self.a = a;
        Ok(self)
    }

    pub fn at_rho(mut self, rho: f64) -> Result<Self, AnalysisError> {
        if !(rho > 0.0) {
            return Err(AnalysisError::BadParams("rho must be positive"));
        }
        self.rho = rho;
        Ok(self)
    }

    pub fn at_counts(mut self, l: usize, n: usize) -> Result<Self, AnalysisError> {
        if l < 2 || n == 0 {
            return Err(AnalysisError::BadParams("need L >= 2 and N >= 1"));
        }
        self.l = l;
        self.n = n;
        self.a = solve_disk_constant(self.t, self.n_t, self.lambda_bar, self.d, self.epsilon / n as f64);
        Ok(self)
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn lambda_bar(&self) -> f64 {
        self.lambda_bar
    }

    /// Real tangent dimension 2·N_t·(T−N_t).
    pub fn tangent_dim(&self) -> usize {
        self.d
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn gamma0(&self) -> f64 {
        self.gamma0
    }

    pub fn disk_constant(&self) -> f64 {
        self.a
    }

    pub fn eta_d(&self) -> f64 {
        self.eta_d
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Radius a/√ρ of the disk that holds a received symbol w.p. ≥ 1 − ε/N.
    pub fn disk_radius(&self) -> f64 {
        self.a / self.rho.sqrt()
    }
}

/// Bisection for the disk constant: smallest a with tail(a/√ρ) ≤ target,
/// where the tail argument Tλ̄²a²/N_t does not involve ρ.
fn solve_disk_constant(t: usize, n_t: usize, lambda_bar: f64, d: usize, target: f64) -> f64 {
    let s = t as f64 * lambda_bar * lambda_bar / n_t as f64;
    let tail = |a: f64| reg_gamma_upper(d as f64 / 2.0, s * a * a);
    let mut hi = 1.0;
    while tail(hi) > target {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if tail(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// P(d_p(Υ, X) > r) under the isotropic perturbation model: the squared
/// distance is a sum of D real Gaussian squares of variance N_t/(2ρTλ̄²)
/// each, so the tail is Q(D/2, ρTλ̄²r²/N_t).
pub fn distance_tail(r: f64, p: &AnalysisParams) -> f64 {
    assert!(r >= 0.0, "distance must be nonnegative");
    reg_gamma_upper(p.d as f64 / 2.0, tail_argument(r, p))
}

fn tail_argument(r: f64, p: &AnalysisParams) -> f64 {
    p.rho * p.t as f64 * p.lambda_bar * p.lambda_bar * r * r / p.n_t as f64
}

/// A separability lower bound together with its large-ρ expansion.
#[derive(Debug, Clone, Copy)]
pub struct SeparabilityBound {
    /// The exact product-form bound, guaranteed inside [0, 1].
    pub value: f64,
    /// First-order expansion 1 − N·e^{−x}·G(x); clamped to [0, 1].
    pub asymptote: f64,
    /// True when either form left the unit interval before clamping.
    pub clamped: bool,
}

/// K-means separability: all N symbols stay within d_min/2 of their
/// codewords, each with probability P(D/2, ρTλ̄²d²_min/(8N_t)).
pub fn kmeans_separability_bound(
    d_min: f64,
    p: &AnalysisParams,
) -> Result<SeparabilityBound, AnalysisError> {
    if !(d_min > 0.0) {
        return Err(AnalysisError::BadParams("d_min must be positive"));
    }
    Ok(separability_from_margin(d_min, p))
}

/// DFS separability: the deviation budget shrinks to (d_min − γ₀)/2 so that
/// no adjacency edge can cross between clusters. γ₀ = 0 recovers the K-means
/// bound; γ₀ ≥ d_min leaves no budget and the sufficient condition is void.
pub fn dfs_separability_bound(
    d_min: f64,
    p: &AnalysisParams,
) -> Result<SeparabilityBound, AnalysisError> {
    if !(d_min > 0.0) {
        return Err(AnalysisError::BadParams("d_min must be positive"));
    }
    if p.gamma0 >= d_min {
        return Err(AnalysisError::Domain("gamma0 >= d_min voids the separation margin"));
    }
    Ok(separability_from_margin(d_min - p.gamma0, p))
}

fn separability_from_margin(margin: f64, p: &AnalysisParams) -> SeparabilityBound {
    let half = p.d as f64 / 2.0;
    let x = p.rho * p.t as f64 * p.lambda_bar * p.lambda_bar * margin * margin
        / (8.0 * p.n_t as f64);
    let base = reg_gamma_lower(half, x);
    let value = base.powf(p.n as f64).clamp(0.0, 1.0);
    // e^{−x}·Σ_{m<D/2} x^m/m! summed in log space; equals Q(D/2, x) for the
    // integer half-dimensions produced by 2N_t(T−N_t)/2.
    let mut series = 0.0;
    for m in 0..(p.d / 2) {
        series += (-x + m as f64 * x.ln().max(f64::MIN) - ln_gamma(m as f64 + 1.0)).exp();
    }
    let raw = 1.0 - p.n as f64 * if x > 0.0 { series } else { 1.0 };
    SeparabilityBound {
        value,
        asymptote: raw.clamp(0.0, 1.0),
        clamped: raw < 0.0 || raw > 1.0,
    }
}

/// Probability that a received symbol lands in one specific bin of the ring
/// at distance r from its codeword: the bin-to-ring volume ratio times the
/// ring's radial mass. Monotone decreasing for r ≥ γ₀/2.
pub fn ring_bin_probability(r: f64, p: &AnalysisParams) -> Result<f64, AnalysisError> {
    let h = p.gamma0 / 2.0;
    if r < h {
        return Err(AnalysisError::Domain("ring radius below half the DFS threshold"));
    }
    if p.gamma0 == 0.0 {
        return Err(AnalysisError::Domain("zero-width ring"));
    }
    let d = p.d as f64;
    let half = d / 2.0;
    // r^D − (r−h)^D without cancellation: r^D·(1 − exp(D·ln(1−h/r))).
    let shell = r.powi(p.d as i32) * (-(d * (1.0 - h / r).max(0.0).ln()).exp_m1());
    let s = p.rho * p.t as f64 * p.lambda_bar * p.lambda_bar / (2.0 * p.n_t as f64);
    let mass = reg_gamma_upper(half, s * (r - h) * (r - h)) - reg_gamma_upper(half, s * r * r);
    Ok((p.gamma0 / 4.0).powi(p.d as i32) / p.eta_d / shell * mass)
}

/// Exact worst-bin probability: the minimizing bin sits on the disk rim.
pub fn min_bin_probability(p: &AnalysisParams) -> Result<f64, AnalysisError> {
    ring_bin_probability(p.disk_radius(), p)
}

/// Dense-regime (γ₀ → 0) expansion of [`min_bin_probability`],
/// c₀·γ₀^D·ρ^{D/2} with the rim exponent e^{−a²Tλ̄²/(2N_t)}.
pub fn min_bin_probability_asymptote(p: &AnalysisParams) -> f64 {
    rim_constant(p) * (p.gamma0 * p.rho.sqrt()).powi(p.d as i32)
}

fn rim_constant(p: &AnalysisParams) -> f64 {
    let d = p.d as f64;
    let s = p.t as f64 * p.lambda_bar * p.lambda_bar / p.n_t as f64;
    (1.0 / p.eta_d) * (1.0 - 2.5 * d).exp2() / (d * ln_gamma(d / 2.0).exp())
        * s.powf(d / 2.0)
        * (-p.a * p.a * s / 2.0).exp()
}

/// Connectivity lower bound: all M bins of the disk nonempty.
#[derive(Debug, Clone, Copy)]
pub struct ConnectivityBound {
    /// Asymptotic form 1 − M·e^{−c₀γ₀^D ρ^{D/2} N/L}, clamped to [0, 1].
    pub value: f64,
    /// Pre-asymptotic form 1 − M(1 − p_min/L)^N, clamped to [0, 1].
    pub exact: f64,
    /// True when either form left the unit interval before clamping.
    pub clamped: bool,
    /// Dense-regime check γ₀ ≤ (a/√ρ)/10; the bound is vacuous otherwise.
    pub assumption_ok: bool,
}

pub fn connectivity_bound(p: &AnalysisParams) -> Result<ConnectivityBound, AnalysisError> {
    if p.gamma0 <= 0.0 {
        return Err(AnalysisError::BadParams("connectivity needs gamma0 > 0"));
    }
    let radius = p.disk_radius();
    let m = p.eta_d * (4.0 * radius / p.gamma0).powi(p.d as i32);
    let p_min = if radius >= p.gamma0 / 2.0 {
        min_bin_probability(p)?
    } else {
        0.0 // threshold wider than the disk: the packing argument is void
    };
    let n = p.n as f64;
    let raw_exact = 1.0 - m * (n * (1.0 - p_min / p.l as f64).ln()).exp();
    let raw_asym = 1.0 - m * (-min_bin_probability_asymptote(p) * n / p.l as f64).exp();
    Ok(ConnectivityBound {
        value: raw_asym.clamp(0.0, 1.0),
        exact: raw_exact.clamp(0.0, 1.0),
        clamped: !(0.0..=1.0).contains(&raw_exact) || !(0.0..=1.0).contains(&raw_asym),
        assumption_ok: p.gamma0 <= radius / 10.0,
    })
}
