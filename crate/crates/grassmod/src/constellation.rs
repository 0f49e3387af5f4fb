//! Grassmann codebooks: max-min subspace packing, the packing distance bound,
//! the truncated-Fourier reference point, and the distance-ordered bit-symbol
//! mapping that survives channel rotation.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifold::{
    exp_map, log_map, procrustes_distance, random_uniform_point, GrassmannPoint, ManifoldError,
};
use crate::numerics::{stream_rng, CMatrix};

#[derive(Debug, Error)]
pub enum ConstellationError {
    #[error("invalid packing dimensions: L={l}, T={t}, N_t={n_t} (need L >= 2, T > N_t >= 1)")]
    BadDimensions { l: usize, t: usize, n_t: usize },
    #[error("constellation size {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("codewords mix different Grassmannians")]
    MixedShapes,
    #[error("codebook contains coincident codewords")]
    DuplicateCodewords,
    #[error("empty codebook")]
    Empty,
    #[error("reference distances collide: adjacent gap {gap:.3e} < required {min_gap:.3e}")]
    Tie { gap: f64, min_gap: f64 },
    #[error("no candidates supplied")]
    NoCandidates,
    #[error("malformed codebook file: {0}")]
    BadFile(String),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
}

/// An ordered set of subspace codewords with its recomputed minimum pairwise
/// Procrustes distance. A singleton book has `d_min = ∞` (empty pair set).
#[derive(Debug, Clone)]
pub struct Codebook {
    codewords: Vec<GrassmannPoint>,
    d_min: f64,
}

impl Codebook {
    pub fn new(codewords: Vec<GrassmannPoint>) -> Result<Self, ConstellationError> {
        let first = codewords.first().ok_or(ConstellationError::Empty)?;
        if codewords
            .iter()
            .any(|c| c.ambient_dim() != first.ambient_dim() || c.subspace_dim() != first.subspace_dim())
        {
            return Err(ConstellationError::MixedShapes);
        }
        let d_min = min_pairwise(&codewords);
        if d_min <= 0.0 {
            return Err(ConstellationError::DuplicateCodewords);
        }
        Ok(Self { codewords, d_min })
    }

    pub fn codewords(&self) -> &[GrassmannPoint] {
        &self.codewords
    }

    pub fn len(&self) -> usize {
        self.codewords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codewords.is_empty()
    }

    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    pub fn ambient_dim(&self) -> usize {
        self.codewords[0].ambient_dim()
    }

    pub fn subspace_dim(&self) -> usize {
        self.codewords[0].subspace_dim()
    }

    pub fn to_json(&self) -> String {
        let file = CodebookFile {
            t: self.ambient_dim(),
            nt: self.subspace_dim(),
            codewords: self
                .codewords
                .iter()
                .map(|c| {
                    let g = c.generator();
                    (0..g.rows())
                        .flat_map(|r| (0..g.cols()).map(move |col| (r, col)))
                        .map(|(r, col)| [g[(r, col)].re, g[(r, col)].im])
                        .collect()
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("codebook serialization is infallible")
    }

    /// Parse a serialized codebook; `d_min` is always recomputed, never read.
    pub fn from_json(text: &str) -> Result<Self, ConstellationError> {
        let file: CodebookFile =
            serde_json::from_str(text).map_err(|e| ConstellationError::BadFile(e.to_string()))?;
        let mut codewords = Vec::with_capacity(file.codewords.len());
        for flat in &file.codewords {
            if flat.len() != file.t * file.nt {
                return Err(ConstellationError::BadFile(format!(
                    "codeword has {} entries, expected {}",
                    flat.len(),
                    file.t * file.nt
                )));
            }
            let g = CMatrix::from_fn(file.t, file.nt, |r, c| {
                let [re, im] = flat[r * file.nt + c];
                Complex64::new(re, im)
            });
            codewords.push(GrassmannPoint::new(g)?);
        }
        Self::new(codewords)
    }
}

#[derive(Serialize, Deserialize)]
struct CodebookFile {
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "Nt")]
    nt: usize,
    codewords: Vec<Vec<[f64; 2]>>,
}

fn min_pairwise(points: &[GrassmannPoint]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            best = best.min(procrustes_distance(&points[i], &points[j]));
        }
    }
    best
}

/// Literature bound on the squared minimum distance of an L-point packing:
/// 4·N_t·(1/L)^{1/(T·N_t)}.
pub fn min_distance_bound(l: usize, t: usize, n_t: usize) -> f64 {
    assert!(l >= 2 && t > n_t && n_t >= 1);
    4.0 * n_t as f64 * (1.0 / l as f64).powf(1.0 / (t as f64 * n_t as f64))
}

const PACK_STEP_START: f64 = 0.1;
const PACK_STEP_END: f64 = 1e-3;

fn pack_once(l: usize, t: usize, n_t: usize, iterations: usize, seed: u64) -> Codebook {
    let mut rng = stream_rng(seed, &[]);
    let mut points: Vec<GrassmannPoint> =
        (0..l).map(|_| random_uniform_point(t, n_t, &mut rng)).collect();
    let decay = if iterations > 1 {
        (PACK_STEP_END / PACK_STEP_START).powf(1.0 / (iterations - 1) as f64)
    } else {
        1.0
    };
    let mut step = PACK_STEP_START;
    for _ in 0..iterations {
        // locate the single worst pair and push both endpoints apart
        let (mut bi, mut bj, mut bd) = (0, 1, f64::INFINITY);
        for i in 0..l {
            for j in i + 1..l {
                let d = procrustes_distance(&points[i], &points[j]);
                if d < bd {
                    (bi, bj, bd) = (i, j, d);
                }
            }
        }
        // a cut-locus pair is already maximally separated: nothing to do
        if let (Ok(tij), Ok(tji)) = (
            log_map(&points[bi], &points[bj]),
            log_map(&points[bj], &points[bi]),
        ) {
            if let (Ok(a), Ok(b)) = (
                exp_map(&points[bi], &tij.scale(-step), 1.0),
                exp_map(&points[bj], &tji.scale(-step), 1.0),
            ) {
                points[bi] = a;
                points[bj] = b;
            }
        }
        step *= decay;
    }
    Codebook::new(points).expect("repelled points cannot coincide")
}

/// Build a codebook by max-min repulsion: the best of `restarts` independent
/// runs, each repeatedly moving the closest pair apart along their connecting
/// geodesic with a geometrically shrinking step.
pub fn pack_codebook(
    l: usize,
    t: usize,
    n_t: usize,
    restarts: usize,
    iterations: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Codebook, ConstellationError> {
    if l < 2 || t <= n_t || n_t < 1 {
        return Err(ConstellationError::BadDimensions { l, t, n_t });
    }
    if !l.is_power_of_two() {
        return Err(ConstellationError::NotPowerOfTwo(l));
    }
    let restarts = restarts.max(1);
    let seeds: Vec<u64> = (0..restarts).map(|_| rng.gen()).collect();
    let runs: Vec<Codebook> = seeds
        .par_iter()
        .map(|&s| pack_once(l, t, n_t, iterations, s))
        .collect();
    // d_min is maximized over restarts; the first best wins on exact ties
    Ok(runs
        .into_iter()
        .reduce(|best, cand| if cand.d_min() > best.d_min() { cand } else { best })
        .expect("restarts >= 1"))
}

/// First N_t columns of the unitary T-point DFT matrix,
/// entry (j,k) = e^{−2πi·jk/T}/√T.
pub fn fourier_reference(t: usize, n_t: usize) -> GrassmannPoint {
    assert!(t > n_t && n_t >= 1);
    let scale = 1.0 / (t as f64).sqrt();
    let g = CMatrix::from_fn(t, n_t, |j, k| {
        let phase = -2.0 * std::f64::consts::PI * (j * k) as f64 / t as f64;
        Complex64::new(phase.cos() * scale, phase.sin() * scale)
    });
    GrassmannPoint::new(g).expect("DFT columns are orthonormal")
}

/// Bit-symbol mapping: codewords ranked by distance to a public reference
/// point; rank ℓ carries the log₂L-bit binary encoding of ℓ. The ordering is
/// a channel-rotation invariant, so the receiver can rebuild it blindly.
#[derive(Debug, Clone)]
pub struct BitMapping {
    reference: GrassmannPoint,
    order: Vec<usize>,
    bits_per_symbol: usize,
}

impl BitMapping {
    pub fn reference(&self) -> &GrassmannPoint {
        &self.reference
    }

    /// `order[rank]` = codeword index holding that rank.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    pub fn rank_of(&self, codeword_index: usize) -> usize {
        self.order
            .iter()
            .position(|&i| i == codeword_index)
            .expect("index out of mapping range")
    }

    pub fn index_at_rank(&self, rank: usize) -> usize {
        self.order[rank]
    }

    /// MSB-first binary word for a codeword index.
    pub fn bits_for_index(&self, codeword_index: usize) -> Vec<bool> {
        let rank = self.rank_of(codeword_index);
        (0..self.bits_per_symbol)
            .rev()
            .map(|b| (rank >> b) & 1 == 1)
            .collect()
    }

    pub fn index_for_bits(&self, bits: &[bool]) -> Result<usize, ConstellationError> {
        if bits.len() != self.bits_per_symbol {
            return Err(ConstellationError::NotPowerOfTwo(bits.len()));
        }
        let rank = bits.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize);
        Ok(self.order[rank])
    }
}

/// Rank codewords by Procrustes distance to `reference`, refusing mappings
/// whose adjacent sorted distances are closer than `min_gap` (irrecoverable
/// under noise).
pub fn build_bit_mapping(
    book: &Codebook,
    reference: &GrassmannPoint,
    min_gap: f64,
) -> Result<BitMapping, ConstellationError> {
    let l = book.len();
    if !l.is_power_of_two() || l < 2 {
        return Err(ConstellationError::NotPowerOfTwo(l));
    }
    let mut by_distance: Vec<(usize, f64)> = book
        .codewords()
        .iter()
        .enumerate()
        .map(|(i, c)| (i, procrustes_distance(c, reference)))
        .collect();
    by_distance.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    for w in by_distance.windows(2) {
        let gap = w[1].1 - w[0].1;
        if gap < min_gap {
            return Err(ConstellationError::Tie { gap, min_gap });
        }
    }
    Ok(BitMapping {
        reference: reference.clone(),
        order: by_distance.into_iter().map(|(i, _)| i).collect(),
        bits_per_symbol: l.trailing_zeros() as usize,
    })
}

fn reference_gap_score(book: &Codebook, reference: &GrassmannPoint) -> f64 {
    let mut d: Vec<f64> = book
        .codewords()
        .iter()
        .map(|c| procrustes_distance(c, reference))
        .collect();
    d.sort_by(f64::total_cmp);
    d.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

/// Among candidate codebooks, pick the one whose sorted distances to the
/// reference are most spread out (largest minimum adjacent gap).
pub fn select_codebook_for_reference(
    candidates: &[Codebook],
    reference: &GrassmannPoint,
) -> Result<Codebook, ConstellationError> {
    candidates
        .iter()
        .max_by(|a, b| {
            reference_gap_score(a, reference).total_cmp(&reference_gap_score(b, reference))
        })
        .cloned()
        .ok_or(ConstellationError::NoCandidates)
}

/// Dual scheme: fix the codebook, search the reference candidate list.
pub fn select_reference_for_codebook(
    book: &Codebook,
    candidates: &[GrassmannPoint],
) -> Result<GrassmannPoint, ConstellationError> {
    candidates
        .iter()
        .max_by(|a, b| reference_gap_score(book, a).total_cmp(&reference_gap_score(book, b)))
        .cloned()
        .ok_or(ConstellationError::NoCandidates)
}
