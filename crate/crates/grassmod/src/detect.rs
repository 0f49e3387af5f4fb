//! Blind constellation and symbol detection.
//!
//! Covers the exact symbol likelihood and genie-aided ML detection, the EM
//! soft-clustering algorithm with its closed-form M-step, Grassmann K-means,
//! DFS cluster discovery, evaluation of a fit against ground truth, and bit
//! decoding through a reference-point mapping.

use std::collections::HashSet;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::channel::{project_symbol, ChannelError, SymbolBlock, SystemParams};
use crate::constellation::{build_bit_mapping, Codebook, ConstellationError};
use crate::manifold::{
    geodesic_distance, karcher_mean, procrustes_distance, GrassmannPoint, ManifoldError,
    KARCHER_MAX_ITER, KARCHER_TAU, KARCHER_TOL,
};
use crate::numerics::{stream_rng, svd, CMatrix, NumericsError};

/// K-means keeps a tentative duplicate-centroid reseed only if the assignment
/// objective strictly improves beyond this slack.
const KMEANS_REVERT_SLACK: f64 = 1e-12;
/// EM keeps a tentative reseed only if the log-likelihood improves past this.
const EM_REVERT_SLACK: f64 = 1e-9;
/// Below this responsibility mass a mixture component is considered dead.
const EMPTY_MASS_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("need at least {l} symbols to fit {l} clusters, got {n}")]
    TooFewSymbols { n: usize, l: usize },
    #[error("initial codebook has {init} codewords, expected {l}")]
    InitSizeMismatch { init: usize, l: usize },
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error(transparent)]
    Constellation(#[from] ConstellationError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Subspace distance used for hard assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Geodesic,
    Procrustes,
}

impl Metric {
    pub fn distance(&self, a: &GrassmannPoint, b: &GrassmannPoint) -> f64 {
        match self {
            Metric::Geodesic => geodesic_distance(a, b),
            Metric::Procrustes => procrustes_distance(a, b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReseedReason {
    /// A K-means cluster lost all members.
    EmptyCluster,
    /// Two centroids collapsed onto (nearly) the same subspace.
    DuplicateCentroids,
    /// An EM component's total responsibility mass vanished.
    EmptyResponsibility,
}

/// One centroid reseed performed during a fit. Duplicate-centroid reseeds are
/// tentative: if the objective fails to improve on the next iteration they
/// are rolled back and flagged `reverted`.
#[derive(Debug, Clone)]
pub struct ReseedEvent {
    pub iteration: usize,
    pub cluster: usize,
    pub reason: ReseedReason,
    pub reverted: bool,
}

/// Outcome of a clustering fit: per-symbol assignments, the estimated
/// codebook, and the per-iteration objective values.
#[derive(Debug, Clone)]
pub struct ClusterAssignment {
    soft: Option<Vec<Vec<f64>>>,
    hard: Vec<usize>,
    estimated_codebook: Codebook,
    iterations: usize,
    objective_trace: Vec<f64>,
    reseed_events: Vec<ReseedEvent>,
}

impl ClusterAssignment {
    fn assemble(
        soft: Option<Vec<Vec<f64>>>,
        hard: Vec<usize>,
        centroids: Vec<GrassmannPoint>,
        iterations: usize,
        objective_trace: Vec<f64>,
        reseed_events: Vec<ReseedEvent>,
    ) -> Result<Self, DetectError> {
        let book = Codebook::new(centroids)?;
        assert!(hard.iter().all(|&lab| lab < book.len()));
        if let Some(rows) = &soft {
            assert!(rows
                .iter()
                .all(|r| (r.iter().sum::<f64>() - 1.0).abs() <= 1e-9));
        }
        Ok(ClusterAssignment {
            soft,
            hard,
            estimated_codebook: book,
            iterations,
            objective_trace,
            reseed_events,
        })
    }

    /// Responsibilities r_{i,l}; rows sum to one. Present for EM fits only.
    pub fn soft(&self) -> Option<&[Vec<f64>]> {
        self.soft.as_deref()
    }

    pub fn hard(&self) -> &[usize] {
        &self.hard
    }

    pub fn estimated_codebook(&self) -> &Codebook {
        &self.estimated_codebook
    }

    /// Number of clusters discovered or fitted.
    pub fn size_estimate(&self) -> usize {
        self.estimated_codebook.len()
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn objective_trace(&self) -> &[f64] {
        &self.objective_trace
    }

    pub fn reseed_events(&self) -> &[ReseedEvent] {
        &self.reseed_events
    }
}

/// How to obtain EM's initial codeword estimates.
#[derive(Debug, Clone)]
pub enum EmInit {
    /// Start from the given codewords (must match the component count).
    Book(Codebook),
    /// Project L symbols drawn without replacement from the block itself.
    RandomFromData { seed: u64 },
}

/// Exact log-density of a received matrix conditioned on a transmitted
/// codeword: −(ρT/N_t)·tr{yᴴ(I − κ·xxᴴ)y} − TN_t·ln(πN_t/(ρT))
/// − N_tN_r·ln(1 + ρT/N_t), with κ = 1/(1 + N_t/(ρT)).
pub fn log_likelihood(y: &CMatrix, x: &GrassmannPoint, params: &SystemParams) -> f64 {
    let rho_t = params.rho() * params.t() as f64;
    let gain = rho_t / params.n_t() as f64;
    let kappa = 1.0 / (1.0 + params.n_t() as f64 / rho_t);
    let energy = y.frobenius_norm().powi(2);
    let aligned = x.generator().hermitian().matmul(y).frobenius_norm().powi(2);
    -gain * (energy - kappa * aligned)
        - (params.t() * params.n_t()) as f64
            * (std::f64::consts::PI * params.n_t() as f64 / rho_t).ln()
        - (params.n_t() * params.n_r()) as f64 * (1.0 + gain).ln()
}

/// Genie-aided ML symbol detection over a known codebook: per symbol,
/// arg max of tr{yᴴxxᴴy}. Ties break to the lowest index.
pub fn ml_symbol_detect(block: &SymbolBlock, book: &Codebook) -> Vec<usize> {
    block
        .received()
        .iter()
        .map(|y| {
            let mut best = 0usize;
            let mut best_stat = f64::NEG_INFINITY;
            for (idx, x) in book.codewords().iter().enumerate() {
                let stat = x.generator().hermitian().matmul(y).frobenius_norm().powi(2);
                if stat > best_stat {
                    best_stat = stat;
                    best = idx;
                }
            }
            best
        })
        .collect()
}

/// Per-symbol nearest estimated codeword under the chosen metric.
/// Ties break to the lowest index.
pub fn hard_assign(
    block: &SymbolBlock,
    book_hat: &Codebook,
    metric: Metric,
) -> Result<Vec<usize>, DetectError> {
    let projections = block.projections()?;
    Ok(projections
        .iter()
        .map(|p| nearest_index(p, book_hat.codewords(), metric))
        .collect())
}

fn nearest_index(point: &GrassmannPoint, codewords: &[GrassmannPoint], metric: Metric) -> usize {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (idx, c) in codewords.iter().enumerate() {
        let d = metric.distance(point, c);
        if d < best_d {
            best_d = d;
            best = idx;
        }
    }
    best
}

fn distance_matrix(
    points: &[GrassmannPoint],
    centroids: &[GrassmannPoint],
    metric: Metric,
) -> Vec<Vec<f64>> {
    points
        .iter()
        .map(|p| centroids.iter().map(|c| metric.distance(p, c)).collect())
        .collect()
}

fn argmin_row(row: &[f64]) -> usize {
    let mut best = 0usize;
    let mut best_v = f64::INFINITY;
    for (idx, &v) in row.iter().enumerate() {
        if v < best_v {
            best_v = v;
            best = idx;
        }
    }
    best
}

fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0usize;
    let mut best_v = f64::NEG_INFINITY;
    for (idx, &v) in row.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = idx;
        }
    }
    best
}

/// Karcher mean with graceful degradation: a non-converged mean returns its
/// last iterate, any other failure keeps the previous centroid.
fn cluster_mean(members: &[GrassmannPoint], previous: &GrassmannPoint, tol: f64) -> GrassmannPoint {
    match karcher_mean(members, KARCHER_TAU, tol, KARCHER_MAX_ITER) {
        Ok(mean) => mean,
        Err(ManifoldError::NoConvergence { last, .. }) => *last,
        Err(_) => previous.clone(),
    }
}

struct DupCandidate {
    pair: (usize, usize),
    victim: usize,
}

/// Detect a pair of centroids that collapsed onto one cluster. A pair is
/// suspect when its geodesic separation falls below a multiple of the member
/// spread: 2.5× the smaller spread when the smaller cluster has at least 5
/// members (two genuinely distinct clusters keep a larger gap), else 6× the
/// bigger spread (a starved centroid riding on a populated one). Returns the
/// closest qualifying pair; the victim is the lower-count side.
fn find_dup(
    centroids: &[GrassmannPoint],
    labels: &[usize],
    dmat: &[Vec<f64>],
    blacklist: &HashSet<(usize, usize)>,
) -> Option<DupCandidate> {
    let l = centroids.len();
    let mut counts = vec![0usize; l];
    for &lab in labels {
        counts[lab] += 1;
    }
    let mut spread = vec![0.0f64; l];
    for c in 0..l {
        if counts[c] > 0 {
            let total: f64 = labels
                .iter()
                .enumerate()
                .filter(|(_, &lab)| lab == c)
                .map(|(i, _)| dmat[i][c])
                .sum();
            spread[c] = total / counts[c] as f64;
        }
    }
    let mut best: Option<(f64, DupCandidate)> = None;
    for a in 0..l {
        for b in (a + 1)..l {
            if blacklist.contains(&(a, b)) {
                continue;
            }
            let d = geodesic_distance(&centroids[a], &centroids[b]);
            let (small, big) = if counts[a] <= counts[b] { (a, b) } else { (b, a) };
            let thr = if counts[small] >= 5 {
                2.5 * spread[a].min(spread[b]).max(1e-6)
            } else {
                6.0 * spread[big].max(1e-6)
            };
            if d <= thr && best.as_ref().map_or(true, |(bd, _)| d < *bd) {
                best = Some((d, DupCandidate { pair: (a, b), victim: small }));
            }
        }
    }
    best.map(|(_, cand)| cand)
}

struct PendingReseed {
    cluster: usize,
    saved: GrassmannPoint,
    objective: f64,
    pair: (usize, usize),
    event: usize,
}

/// Grassmann K-means: initialize with L distinct symbols drawn without
/// replacement, then alternate nearest-centroid assignment (geodesic metric)
/// with per-cluster Karcher means until the labels stop changing. `tol`
/// controls only the Karcher inner loop.
pub fn kmeans_fit(
    block: &SymbolBlock,
    l: usize,
    rng: &mut ChaCha8Rng,
    max_iter: usize,
    tol: f64,
) -> Result<ClusterAssignment, DetectError> {
    let projections = block.projections()?;
    let n = projections.len();
    if n < l {
        return Err(DetectError::TooFewSymbols { n, l });
    }
    let init: Vec<GrassmannPoint> = rand::seq::index::sample(rng, n, l)
        .iter()
        .map(|i| projections[i].clone())
        .collect();
    kmeans_core(projections, init, max_iter, tol)
}

/// K-means from explicit starting centroids (shared-initialization studies).
pub fn kmeans_fit_with_init(
    block: &SymbolBlock,
    init: &[GrassmannPoint],
    max_iter: usize,
    tol: f64,
) -> Result<ClusterAssignment, DetectError> {
    kmeans_core(block.projections()?, init.to_vec(), max_iter, tol)
}

fn kmeans_core(
    projections: &[GrassmannPoint],
    mut centroids: Vec<GrassmannPoint>,
    max_iter: usize,
    tol: f64,
) -> Result<ClusterAssignment, DetectError> {
    let n = projections.len();
    let l = centroids.len();
    if n < l {
        return Err(DetectError::TooFewSymbols { n, l });
    }
    assert!(max_iter >= 1 && l >= 1);
    let mut labels: Option<Vec<usize>> = None;
    let mut blacklist: HashSet<(usize, usize)> = HashSet::new();
    let mut pending: Option<PendingReseed> = None;
    let mut events: Vec<ReseedEvent> = Vec::new();
    let mut trace: Vec<f64> = Vec::new();
    let mut iterations = 0;
    for it in 0..max_iter {
        iterations = it + 1;
        let mut dmat = distance_matrix(projections, &centroids, Metric::Geodesic);
        let mut newlab: Vec<usize> = dmat.iter().map(|row| argmin_row(row)).collect();
        let mut objective: f64 = newlab
            .iter()
            .enumerate()
            .map(|(i, &lab)| dmat[i][lab] * dmat[i][lab])
            .sum();
        if let Some(p) = pending.take() {
            // keep the tentative reseed only on strict improvement
            if objective >= p.objective - KMEANS_REVERT_SLACK {
                centroids[p.cluster] = p.saved;
                blacklist.insert(p.pair);
                events[p.event].reverted = true;
                dmat = distance_matrix(projections, &centroids, Metric::Geodesic);
                newlab = dmat.iter().map(|row| argmin_row(row)).collect();
                objective = newlab
                    .iter()
                    .enumerate()
                    .map(|(i, &lab)| dmat[i][lab] * dmat[i][lab])
                    .sum();
            }
        }
        trace.push(objective);
        let mut structural = false;
        for c in 0..l {
            let members: Vec<GrassmannPoint> = (0..n)
                .filter(|&i| newlab[i] == c)
                .map(|i| projections[i].clone())
                .collect();
            if members.is_empty() {
                // farthest symbol from the dead centroid restarts the cluster
                let far = argmax_row(&dmat.iter().map(|row| row[c]).collect::<Vec<_>>());
                centroids[c] = projections[far].clone();
                events.push(ReseedEvent {
                    iteration: it,
                    cluster: c,
                    reason: ReseedReason::EmptyCluster,
                    reverted: false,
                });
                structural = true;
                continue;
            }
            centroids[c] = cluster_mean(&members, &centroids[c], tol);
        }
        if !structural {
            if let Some(dup) = find_dup(&centroids, &newlab, &dmat, &blacklist) {
                // tentatively reseed at the worst-served symbol
                let served: Vec<f64> = (0..n).map(|i| dmat[i][newlab[i]]).collect();
                let far = argmax_row(&served);
                events.push(ReseedEvent {
                    iteration: it,
                    cluster: dup.victim,
                    reason: ReseedReason::DuplicateCentroids,
                    reverted: false,
                });
                pending = Some(PendingReseed {
                    cluster: dup.victim,
                    saved: centroids[dup.victim].clone(),
                    objective,
                    pair: dup.pair,
                    event: events.len() - 1,
                });
                centroids[dup.victim] = projections[far].clone();
                structural = true;
            }
        }
        let converged = labels.as_deref() == Some(newlab.as_slice()) && !structural;
        labels = Some(newlab);
        if converged {
            break;
        }
    }
    ClusterAssignment::assemble(
        None,
        labels.expect("max_iter >= 1"),
        centroids,
        iterations,
        trace,
        events,
    )
}

/// EM for the codeword mixture. The E-step computes responsibilities in log
/// space with per-row max subtraction; the M-step is closed-form: with
/// responsibilities fixed, each codeword maximizes the Rayleigh quotient
/// tr{μᴴ(Σᵢ r_{i,ℓ}·y_i y_iᴴ)μ} over orthonormal frames, so the update is
/// the dominant N_t-dimensional eigenspace of that weighted scatter matrix.
/// Priors stay fixed at 1/L. `objective_trace` records the mixture
/// log-likelihood up to an additive constant of the dataset; it is
/// non-decreasing across iterations.
pub fn em_fit(
    block: &SymbolBlock,
    l: usize,
    init: EmInit,
    params: &SystemParams,
    max_iter: usize,
    tol: f64,
) -> Result<ClusterAssignment, DetectError> {
    let ys = block.received();
    let n = ys.len();
    if n < l {
        return Err(DetectError::TooFewSymbols { n, l });
    }
    assert!(max_iter >= 1);
    let n_t = params.n_t();
    let projections: Vec<GrassmannPoint> = match block.projections() {
        Ok(p) => p.to_vec(),
        Err(_) => ys
            .iter()
            .map(|y| project_symbol(y, n_t))
            .collect::<Result<_, _>>()?,
    };
    let mut centroids: Vec<GrassmannPoint> = match init {
        EmInit::Book(book) => {
            if book.len() != l {
                return Err(DetectError::InitSizeMismatch { init: book.len(), l });
            }
            book.codewords().to_vec()
        }
        EmInit::RandomFromData { seed } => {
            let mut rng = stream_rng(seed, &[]);
            rand::seq::index::sample(&mut rng, n, l)
                .iter()
                .map(|i| projections[i].clone())
                .collect()
        }
    };
    let rho_t = params.rho() * params.t() as f64;
    // alignment gain (ρT/N_t)·κ of the exact log-density
    let c1 = (rho_t / n_t as f64) / (1.0 + n_t as f64 / rho_t);
    // y·yᴴ is reused by every M-step
    let outer: Vec<CMatrix> = ys.iter().map(|y| y.matmul(&y.hermitian())).collect();
    // per-symbol dominant-subspace energy, the ceiling of any ‖cᴴy‖²
    let dominant: Vec<f64> = projections
        .iter()
        .zip(ys)
        .map(|(p, y)| {
            p.generator()
                .hermitian()
                .matmul(y)
                .frobenius_norm()
                .powi(2)
                .max(f64::MIN_POSITIVE)
        })
        .collect();
    let mut blacklist: HashSet<(usize, usize)> = HashSet::new();
    let mut pending: Option<PendingReseed> = None;
    let mut events: Vec<ReseedEvent> = Vec::new();
    let mut trace: Vec<f64> = Vec::new();
    let mut prev_ll = f64::NEG_INFINITY;
    let mut iterations = 0;
    let mut last_g: Vec<Vec<f64>> = Vec::new();
    let mut last_resp: Vec<Vec<f64>> = Vec::new();
    for it in 0..max_iter {
        iterations = it + 1;
        let (mut g, mut resp, mut ll) = em_e_step(ys, &centroids, c1);
        if let Some(p) = pending.take() {
            if ll <= p.objective + EM_REVERT_SLACK {
                centroids[p.cluster] = p.saved;
                blacklist.insert(p.pair);
                events[p.event].reverted = true;
                let redo = em_e_step(ys, &centroids, c1);
                g = redo.0;
                resp = redo.1;
                ll = redo.2;
            }
        }
        trace.push(ll);
        last_g = g;
        last_resp = resp;
        if ll - prev_ll < tol * (1.0 + ll.abs()) && it > 0 {
            break;
        }
        prev_ll = ll;
        for c in 0..l {
            let mass: f64 = last_resp.iter().map(|row| row[c]).sum();
            if mass < EMPTY_MASS_TOL {
                // revive the component at the least-explained symbol
                let starved = least_explained(&last_g, &dominant, c1);
                centroids[c] = projections[starved].clone();
                events.push(ReseedEvent {
                    iteration: it,
                    cluster: c,
                    reason: ReseedReason::EmptyResponsibility,
                    reverted: false,
                });
                continue;
            }
            let mut scatter = CMatrix::zeros(params.t(), params.t());
            for i in 0..n {
                scatter = scatter.add(&outer[i].scale(last_resp[i][c]));
            }
            let dec = svd(&scatter)?;
            centroids[c] = GrassmannPoint::from_span(&dec.u.leading_columns(n_t))?;
        }
        let labels: Vec<usize> = last_g.iter().map(|row| argmax_row(row)).collect();
        let dmat = distance_matrix(&projections, &centroids, Metric::Geodesic);
        if let Some(dup) = find_dup(&centroids, &labels, &dmat, &blacklist) {
            let starved = least_explained(&last_g, &dominant, c1);
            events.push(ReseedEvent {
                iteration: it,
                cluster: dup.victim,
                reason: ReseedReason::DuplicateCentroids,
                reverted: false,
            });
            pending = Some(PendingReseed {
                cluster: dup.victim,
                saved: centroids[dup.victim].clone(),
                objective: ll,
                pair: dup.pair,
                event: events.len() - 1,
            });
            centroids[dup.victim] = projections[starved].clone();
        }
    }
    let hard: Vec<usize> = last_g.iter().map(|row| argmax_row(row)).collect();
    ClusterAssignment::assemble(Some(last_resp), hard, centroids, iterations, trace, events)
}

fn em_e_step(
    ys: &[CMatrix],
    centroids: &[GrassmannPoint],
    c1: f64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, f64) {
    let g: Vec<Vec<f64>> = ys
        .iter()
        .map(|y| {
            centroids
                .iter()
                .map(|c| c1 * c.generator().hermitian().matmul(y).frobenius_norm().powi(2))
                .collect()
        })
        .collect();
    let mut resp = vec![vec![0.0f64; centroids.len()]; ys.len()];
    let mut ll = 0.0;
    for (i, row) in g.iter().enumerate() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (c, &v) in row.iter().enumerate() {
            resp[i][c] = (v - m).exp();
            z += resp[i][c];
        }
        for r in &mut resp[i] {
            *r /= z;
        }
        ll += m + z.ln();
    }
    (g, resp, ll)
}

/// Least-explained symbol: the one whose best component captures the
/// smallest share of its dominant-subspace energy. The normalization keeps
/// a weak channel draw from masking an uncovered cluster.
fn least_explained(g: &[Vec<f64>], dominant: &[f64], c1: f64) -> usize {
    let mut best = 0usize;
    let mut best_share = f64::INFINITY;
    for (i, row) in g.iter().enumerate() {
        let peak = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let share = peak / (c1 * dominant[i]);
        if share < best_share {
            best_share = share;
            best = i;
        }
    }
    best
}

/// Shannon entropy (nats) of one responsibility row.
pub fn responsibility_entropy(row: &[f64]) -> f64 {
    -row.iter()
        .filter(|&&r| r > 0.0)
        .map(|&r| r * r.ln())
        .sum::<f64>()
}

/// Cluster discovery by depth-first search over the proximity graph with
/// edges where the pairwise Procrustes distance is at most `gamma0`.
/// Components are found with an explicit stack (recursion depth would be N),
/// restarting from the lowest-index unlabeled symbol, and each component's
/// codeword is its Karcher mean. The component partition is invariant to
/// symbol order; labels are canonical in discovery order.
pub fn dfs_fit(block: &SymbolBlock, gamma0: f64) -> Result<ClusterAssignment, DetectError> {
    let projections = block.projections()?;
    let n = projections.len();
    let dmat: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| procrustes_distance(&projections[i], &projections[j]))
                .collect()
        })
        .collect();
    let mut labels = vec![usize::MAX; n];
    let mut components = 0usize;
    let mut stack: Vec<usize> = Vec::new();
    for start in 0..n {
        if labels[start] != usize::MAX {
            continue;
        }
        let comp = components;
        components += 1;
        labels[start] = comp;
        stack.push(start);
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if labels[j] == usize::MAX && dmat[i][j] <= gamma0 {
                    labels[j] = comp;
                    stack.push(j);
                }
            }
        }
    }
    let mut centroids = Vec::with_capacity(components);
    for c in 0..components {
        let members: Vec<GrassmannPoint> = (0..n)
            .filter(|&i| labels[i] == c)
            .map(|i| projections[i].clone())
            .collect();
        let seed = members[0].clone();
        centroids.push(cluster_mean(&members, &seed, KARCHER_TOL));
    }
    let objective: f64 = (0..n)
        .map(|i| geodesic_distance(&projections[i], &centroids[labels[i]]).powi(2))
        .sum();
    ClusterAssignment::assemble(None, labels, centroids, 1, vec![objective], Vec::new())
}

/// How a fit scored against the ground truth.
#[derive(Debug, Clone)]
pub struct DetectionReport {
    pub success: bool,
    pub symbol_error_rate: f64,
    pub size_estimate: usize,
    /// matching[e] = true-codeword index paired with estimated codeword e.
    pub matching: Vec<Option<usize>>,
}

/// Score a fit: greedily match estimated to true codewords by ascending
/// Procrustes distance (pairs accepted only within `match_tol`), then count
/// symbols whose label maps to their true index. Success requires the right
/// cluster count, a complete matching, and zero symbol errors.
pub fn evaluate(
    assignment: &ClusterAssignment,
    block: &SymbolBlock,
    book_true: &Codebook,
    match_tol: f64,
) -> DetectionReport {
    let est = assignment.estimated_codebook().codewords();
    let truth = book_true.codewords();
    let mut pairs: Vec<(f64, usize, usize)> = est
        .iter()
        .enumerate()
        .flat_map(|(i, e)| {
            truth
                .iter()
                .enumerate()
                .map(move |(j, t)| (procrustes_distance(e, t), i, j))
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_true = vec![false; truth.len()];
    let mut matching: Vec<Option<usize>> = vec![None; est.len()];
    for (d, i, j) in pairs {
        if d > match_tol {
            break;
        }
        if matching[i].is_some() || used_true[j] {
            continue;
        }
        matching[i] = Some(j);
        used_true[j] = true;
    }
    let truths = block.true_indices();
    let errors = assignment
        .hard()
        .iter()
        .zip(truths)
        .filter(|(&lab, &want)| matching.get(lab).copied().flatten() != Some(want))
        .count();
    let n = truths.len().max(1);
    let complete =
        matching.len() == truth.len() && matching.iter().all(|m| m.is_some());
    DetectionReport {
        success: assignment.size_estimate() == book_true.len() && complete && errors == 0,
        symbol_error_rate: errors as f64 / n as f64,
        size_estimate: assignment.size_estimate(),
        matching,
    }
}

/// Recover the transmitted bit stream from a fit: estimated codewords are
/// ranked by distance to the shared reference point and each symbol's label
/// rank emits its bit word. Fails if the cluster count is not a power of two
/// or the reference distances have adjacent gaps below `min_gap`.
pub fn decode_bits(
    assignment: &ClusterAssignment,
    mapping_reference: &GrassmannPoint,
    min_gap: f64,
) -> Result<Vec<bool>, DetectError> {
    let mapping = build_bit_mapping(
        assignment.estimated_codebook(),
        mapping_reference,
        min_gap,
    )?;
    let mut bits = Vec::with_capacity(assignment.hard().len() * mapping.bits_per_symbol());
    for &lab in assignment.hard() {
        bits.extend(mapping.bits_for_index(lab));
    }
    Ok(bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{project_block, transmit_block, IndexSource};
    use crate::constellation::pack_codebook;
    use crate::manifold::random_uniform_point;
    use crate::numerics::sample_gaussian_matrix;

    fn packed_book(l: usize, seed: u64) -> Codebook {
        let mut rng = stream_rng(seed, &[91]);
        pack_codebook(l, 4, 2, 4, 400, &mut rng).unwrap()
    }

    fn sim_block(
        book: &Codebook,
        snr_db: f64,
        n_r: usize,
        n: usize,
        seed: u64,
    ) -> (SymbolBlock, SystemParams) {
        let params = SystemParams::with_snr_db(2, n_r, 4, snr_db, book.len(), n).unwrap();
        let mut rng = stream_rng(seed, &[17]);
        let mut block = transmit_block(book, &params, &IndexSource::Uniform, &mut rng).unwrap();
        project_block(&mut block, params.n_t()).unwrap();
        (block, params)
    }

    fn noiseless_block(
        book: &Codebook,
        indices: Vec<usize>,
        n_r: usize,
        seed: u64,
    ) -> (SymbolBlock, SystemParams) {
        let n = indices.len();
        let params = SystemParams::with_snr_db(2, n_r, 4, 300.0, book.len(), n).unwrap();
        let mut rng = stream_rng(seed, &[23]);
        let mut block =
            transmit_block(book, &params, &IndexSource::Fixed(indices), &mut rng).unwrap();
        project_block(&mut block, params.n_t()).unwrap();
        (block, params)
    }

    #[test]
    fn likelihood_argmax_matches_trace_statistic() {
        let book = packed_book(8, 11);
        let (block, params) = sim_block(&book, 12.0, 4, 60, 12);
        for y in block.received() {
            let by_ll = argmax_row(
                &book
                    .codewords()
                    .iter()
                    .map(|x| log_likelihood(y, x, &params))
                    .collect::<Vec<_>>(),
            );
            let by_trace = argmax_row(
                &book
                    .codewords()
                    .iter()
                    .map(|x| x.generator().hermitian().matmul(y).frobenius_norm().powi(2))
                    .collect::<Vec<_>>(),
            );
            assert_eq!(by_ll, by_trace);
        }
    }

    #[test]
    fn likelihood_invariant_to_codeword_rotation() {
        let mut rng = stream_rng(31, &[1]);
        let x = random_uniform_point(4, 2, &mut rng);
        let y = sample_gaussian_matrix(4, 4, 1.0, &mut rng);
        let params = SystemParams::with_snr_db(2, 4, 4, 20.0, 2, 2).unwrap();
        // unitary factor of a random 2x2 via its span
        let q = svd(&sample_gaussian_matrix(2, 2, 1.0, &mut rng)).unwrap().u;
        let rotated = GrassmannPoint::new(x.generator().matmul(&q)).unwrap();
        let a = log_likelihood(&y, &x, &params);
        let b = log_likelihood(&y, &rotated, &params);
        assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn ml_detect_noiseless_and_trivial_cases() {
        let book = packed_book(8, 13);
        let indices: Vec<usize> = (0..64).map(|i| i % 8).collect();
        let (block, _) = noiseless_block(&book, indices.clone(), 4, 14);
        assert_eq!(ml_symbol_detect(&block, &book), indices);

        // two orthogonal codewords: the transmitted one wins outright
        let e0 = CMatrix::from_fn(4, 2, |r, c| {
            Complex64::new(if r == c { 1.0 } else { 0.0 }, 0.0)
        });
        let e1 = CMatrix::from_fn(4, 2, |r, c| {
            Complex64::new(if r == c + 2 { 1.0 } else { 0.0 }, 0.0)
        });
        let ortho = Codebook::new(vec![
            GrassmannPoint::new(e0).unwrap(),
            GrassmannPoint::new(e1).unwrap(),
        ])
        .unwrap();
        let (one, _) = noiseless_block(&ortho, vec![0, 0], 4, 15);
        assert_eq!(ml_symbol_detect(&one, &ortho), vec![0, 0]);
    }

    use num_complex::Complex64;

    #[test]
    fn ml_detect_agrees_with_exhaustive_likelihood() {
        let book = packed_book(8, 17);
        let (block, params) = sim_block(&book, 10.0, 4, 1000, 18);
        let fast = ml_symbol_detect(&block, &book);
        for (y, &lab) in block.received().iter().zip(&fast) {
            let lls: Vec<f64> = book
                .codewords()
                .iter()
                .map(|x| log_likelihood(y, x, &params))
                .collect();
            assert_eq!(lab, argmax_row(&lls));
        }
    }

    #[test]
    fn hard_assign_noiseless_self_codebook() {
        let book = packed_book(8, 19);
        let indices: Vec<usize> = (0..40).map(|i| i % 8).collect();
        let (block, _) = noiseless_block(&book, indices.clone(), 4, 20);
        for metric in [Metric::Geodesic, Metric::Procrustes] {
            assert_eq!(hard_assign(&block, &book, metric).unwrap(), indices);
        }
    }

    #[test]
    fn hard_assign_rotation_invariant() {
        let book = packed_book(8, 23);
        let (block, _) = sim_block(&book, 15.0, 4, 50, 24);
        let base = hard_assign(&block, &book, Metric::Procrustes).unwrap();
        // rotating generators w.r.t. which distances are measured is a no-op
        let mut rng = stream_rng(25, &[3]);
        let rotated: Vec<GrassmannPoint> = book
            .codewords()
            .iter()
            .map(|c| {
                let q = svd(&sample_gaussian_matrix(2, 2, 1.0, &mut rng)).unwrap().u;
                GrassmannPoint::new(c.generator().matmul(&q)).unwrap()
            })
            .collect();
        let spun = Codebook::new(rotated).unwrap();
        assert_eq!(hard_assign(&block, &spun, Metric::Procrustes).unwrap(), base);
    }

    #[test]
    fn trace_statistic_sandwiched_by_extreme_singular_values() {
        // exact in the noise-free limit where the received matrix has rank
        // N_t: the trace statistic is a convex combination of the squared
        // dominant singular values
        let mut rng = stream_rng(29, &[5]);
        for _ in 0..1000 {
            let mu = random_uniform_point(4, 2, &mut rng);
            let h = sample_gaussian_matrix(2, 4, 1.0, &mut rng);
            let y = mu.generator().matmul(&h);
            let cand = random_uniform_point(4, 2, &mut rng);
            let dec = svd(&y).unwrap();
            let proj = project_symbol(&y, 2).unwrap();
            let tr = cand.generator().hermitian().matmul(&y).frobenius_norm().powi(2);
            let dp2 = procrustes_distance(&proj, &cand).powi(2);
            let base = 2.0 - dp2;
            assert!(dec.s[1] * dec.s[1] * base <= tr + 1e-9, "lower bound");
            assert!(tr <= dec.s[0] * dec.s[0] * base + 1e-9, "upper bound");
        }
    }

    #[test]
    fn em_true_book_init_is_a_fixed_point() {
        let book = packed_book(8, 37);
        let (block, params) = sim_block(&book, 40.0, 4, 200, 38);
        // the first M-step still polishes the codewords against this block's
        // noise realization, so a relative tolerance is the fair yardstick
        let fit = em_fit(&block, 8, EmInit::Book(book.clone()), &params, 50, 1e-4).unwrap();
        assert!(fit.iterations() <= 2, "iterations = {}", fit.iterations());
        // responsibilities are essentially one-hot at this SNR
        for row in fit.soft().unwrap() {
            let peak = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(peak >= 1.0 - 1e-6);
        }
        let report = evaluate(&fit, &block, &book, book.d_min() / 2.0);
        assert!(report.success);
    }

    #[test]
    fn em_single_symbol_single_component() {
        let book = packed_book(2, 41);
        let (block, _) = sim_block(&book, 20.0, 4, 2, 42);
        let solo = SymbolBlock::from_parts(
            vec![block.received()[0].clone()],
            vec![block.true_indices()[0]],
        )
        .unwrap();
        let params = SystemParams::with_snr_db(2, 4, 4, 20.0, 2, 2).unwrap();
        let fit = em_fit(
            &solo,
            1,
            EmInit::RandomFromData { seed: 43 },
            &params,
            50,
            1e-8,
        )
        .unwrap();
        let expect = project_symbol(&solo.received()[0], 2).unwrap();
        let got = &fit.estimated_codebook().codewords()[0];
        assert!(procrustes_distance(got, &expect) <= 1e-10);
    }

    #[test]
    fn em_objective_monotone_small_scale() {
        let book = packed_book(4, 47);
        for seed in 0..5u64 {
            let (block, params) = sim_block(&book, 20.0, 4, 120, 480 + seed);
            let fit = em_fit(
                &block,
                4,
                EmInit::RandomFromData { seed: 90 + seed },
                &params,
                50,
                1e-8,
            )
            .unwrap();
            let trace = fit.objective_trace();
            for w in trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-6, "trace dipped: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn responsibilities_harden_at_high_snr() {
        let book = packed_book(8, 53);
        let (block, params) = sim_block(&book, 40.0, 4, 240, 54);
        let fit = em_fit(&block, 8, EmInit::Book(book.clone()), &params, 50, 1e-8).unwrap();
        let worst = fit
            .soft()
            .unwrap()
            .iter()
            .map(|row| responsibility_entropy(row))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(worst <= 1e-3, "max row entropy {worst} nats");
    }

    #[test]
    fn kmeans_recovers_one_symbol_per_codeword() {
        let book = packed_book(8, 59);
        let (block, _) = noiseless_block(&book, (0..8).collect(), 4, 60);
        let mut rng = stream_rng(61, &[9]);
        let fit = kmeans_fit(&block, 8, &mut rng, 50, 1e-6).unwrap();
        let report = evaluate(&fit, &block, &book, 1e-8);
        assert!(report.success);
        assert_eq!(report.symbol_error_rate, 0.0);
        for w in fit.objective_trace().windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn kmeans_objective_never_increases() {
        let book = packed_book(8, 67);
        for seed in 0..4u64 {
            let (block, _) = sim_block(&book, 18.0, 4, 240, 680 + seed);
            let mut rng = stream_rng(69 + seed, &[11]);
            let fit = kmeans_fit(&block, 8, &mut rng, 50, 1e-6).unwrap();
            for w in fit.objective_trace().windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "objective rose: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn dfs_extreme_thresholds() {
        let book = packed_book(8, 71);
        let (block, _) = sim_block(&book, 25.0, 4, 64, 72);
        let all = dfs_fit(&block, 2f64.sqrt() + 1e-9).unwrap();
        assert_eq!(all.size_estimate(), 1);
        let singletons = dfs_fit(&block, 1e-12).unwrap();
        assert_eq!(singletons.size_estimate(), block.len());
    }

    #[test]
    fn dfs_matches_union_find_oracle() {
        fn uf_find(parent: &mut Vec<usize>, mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        let book = packed_book(4, 73);
        for inst in 0..100u64 {
            let (block, _) = sim_block(&book, 14.0, 4, 30, 7300 + inst);
            let gamma0 = 0.35 + 0.01 * (inst % 30) as f64;
            let fit = dfs_fit(&block, gamma0).unwrap();
            let projections = block.projections().unwrap();
            let n = projections.len();
            let mut parent: Vec<usize> = (0..n).collect();
            for i in 0..n {
                for j in (i + 1)..n {
                    if procrustes_distance(&projections[i], &projections[j]) <= gamma0 {
                        let (a, b) = (uf_find(&mut parent, i), uf_find(&mut parent, j));
                        if a != b {
                            parent[a] = b;
                        }
                    }
                }
            }
            // same partition: equal label <=> same union-find root
            for i in 0..n {
                for j in (i + 1)..n {
                    let together = uf_find(&mut parent, i) == uf_find(&mut parent, j);
                    assert_eq!(fit.hard()[i] == fit.hard()[j], together);
                }
            }
        }
    }

    #[test]
    fn dfs_partition_invariant_to_symbol_order() {
        let book = packed_book(8, 79);
        let (block, _) = sim_block(&book, 22.0, 4, 48, 80);
        let fit = dfs_fit(&block, 0.5).unwrap();
        // reverse the block
        let rev_received: Vec<CMatrix> = block.received().iter().rev().cloned().collect();
        let rev_truth: Vec<usize> = block.true_indices().iter().rev().copied().collect();
        let mut rev = SymbolBlock::from_parts(rev_received, rev_truth).unwrap();
        project_block(&mut rev, 2).unwrap();
        let rfit = dfs_fit(&rev, 0.5).unwrap();
        let n = block.len();
        for i in 0..n {
            for j in (i + 1)..n {
                let same = fit.hard()[i] == fit.hard()[j];
                let rsame = rfit.hard()[n - 1 - i] == rfit.hard()[n - 1 - j];
                assert_eq!(same, rsame);
            }
        }
    }

    #[test]
    fn evaluate_rejects_wrong_cluster_count() {
        let book = packed_book(8, 83);
        let (block, _) = sim_block(&book, 25.0, 4, 64, 84);
        let fit = dfs_fit(&block, 2f64.sqrt() + 1e-9).unwrap();
        let report = evaluate(&fit, &block, &book, book.d_min() / 2.0);
        assert!(!report.success);
        assert_eq!(report.size_estimate, 1);
    }

    #[test]
    fn greedy_matching_equals_hungarian_on_separated_instances() {
        let l = 8usize;
        let mut rng = stream_rng(87, &[13]);
        for _ in 0..100 {
            let truth: Vec<GrassmannPoint> =
                (0..l).map(|_| random_uniform_point(4, 2, &mut rng)).collect();
            let book = match Codebook::new(truth.clone()) {
                Ok(b) => b,
                Err(_) => continue,
            };
            let tol = book.d_min() / 4.0;
            // perturb each codeword by a small fraction of the tolerance
            let est: Vec<GrassmannPoint> = truth
                .iter()
                .map(|t| {
                    let jitter = sample_gaussian_matrix(4, 2, (tol * 0.05).powi(2), &mut rng);
                    GrassmannPoint::from_span(&t.generator().add(&jitter)).unwrap()
                })
                .collect();
            let cost: Vec<Vec<f64>> = est
                .iter()
                .map(|e| truth.iter().map(|t| procrustes_distance(e, t)).collect())
                .collect();
            // greedy, as evaluate() runs it
            let mut pairs: Vec<(f64, usize, usize)> = (0..l)
                .flat_map(|i| (0..l).map(move |j| (i, j)))
                .map(|(i, j)| (cost[i][j], i, j))
                .collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (mut ue, mut ut) = (vec![false; l], vec![false; l]);
            let mut greedy_cost = 0.0;
            for (d, i, j) in pairs {
                if d > tol || ue[i] || ut[j] {
                    continue;
                }
                ue[i] = true;
                ut[j] = true;
                greedy_cost += d;
            }
            // exhaustive assignment oracle over all 8! permutations
            let mut perm: Vec<usize> = (0..l).collect();
            let mut best = f64::INFINITY;
            permute(&mut perm, 0, &mut |p| {
                let total: f64 = p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
                if total < best {
                    best = total;
                }
            });
            assert!((greedy_cost - best).abs() <= 1e-9, "{greedy_cost} vs {best}");
        }
    }

    fn permute(items: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
        if k == items.len() {
            visit(items);
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            permute(items, k + 1, visit);
            items.swap(k, i);
        }
    }

    #[test]
    fn decode_bits_noiseless_roundtrip() {
        let book = packed_book(8, 89);
        let reference = crate::constellation::fourier_reference(4, 2);
        let mapping = build_bit_mapping(&book, &reference, 1e-6).unwrap();
        // step coprime to 8 so every codeword appears in the block
        let indices: Vec<usize> = (0..40).map(|i| (i * 3 + 1) % 8).collect();
        let bits: Vec<bool> = indices
            .iter()
            .flat_map(|&idx| mapping.bits_for_index(idx))
            .collect();
        let (block, _) = noiseless_block(&book, indices, 4, 90);
        let mut rng = stream_rng(91, &[15]);
        let fit = kmeans_fit(&block, 8, &mut rng, 50, 1e-6).unwrap();
        let decoded = decode_bits(&fit, &reference, 1e-6).unwrap();
        assert_eq!(decoded, bits);
    }

    #[test]
    fn decode_bits_invariant_to_cluster_relabeling() {
        let book = packed_book(8, 97);
        let indices: Vec<usize> = (0..48).map(|i| (i * 5) % 8).collect();
        let (block, _) = noiseless_block(&book, indices, 4, 98);
        let mut rng = stream_rng(99, &[19]);
        let fit = kmeans_fit(&block, 8, &mut rng, 50, 1e-6).unwrap();
        let reference = crate::constellation::fourier_reference(4, 2);
        let bits = decode_bits(&fit, &reference, 1e-6).unwrap();
        // rotate cluster identities: relabel l -> (l+3) % 8 and permute book
        let l = fit.size_estimate();
        let shifted_hard: Vec<usize> = fit.hard().iter().map(|&x| (x + 3) % l).collect();
        let mut shifted_cents = vec![None; l];
        for (i, c) in fit.estimated_codebook().codewords().iter().enumerate() {
            shifted_cents[(i + 3) % l] = Some(c.clone());
        }
        let relabeled = ClusterAssignment::assemble(
            None,
            shifted_hard,
            shifted_cents.into_iter().map(Option::unwrap).collect(),
            fit.iterations(),
            fit.objective_trace().to_vec(),
            Vec::new(),
        )
        .unwrap();
        assert_eq!(decode_bits(&relabeled, &reference, 1e-6).unwrap(), bits);
    }

    #[test]
    fn too_few_symbols_refused() {
        let book = packed_book(8, 101);
        let (block, params) = sim_block(&book, 20.0, 4, 8, 102);
        let small = SymbolBlock::from_parts(
            block.received()[..4].to_vec(),
            block.true_indices()[..4].to_vec(),
        )
        .unwrap();
        let err = em_fit(
            &small,
            8,
            EmInit::RandomFromData { seed: 1 },
            &params,
            50,
            1e-8,
        )
        .unwrap_err();
        assert!(matches!(err, DetectError::TooFewSymbols { n: 4, l: 8 }));
    }
}
