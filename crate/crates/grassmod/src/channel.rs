//! Block-fading non-coherent MIMO simulation.
//!
//! Each transmitted symbol is a T×N_t subspace generator X; the receiver sees
//! Y = XH + √(N_t/(ρT))·W with H, W i.i.d. complex Gaussian. The channel
//! rotates row spaces only, so the column space of Y at high SNR is the
//! transmitted point — extracted here by dominant-subspace projection.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constellation::Codebook;
use crate::manifold::{GrassmannPoint, ManifoldError};
use crate::numerics::{sample_gaussian_matrix, svd, CMatrix, NumericsError};

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("invalid system parameters: {0}")]
    BadParams(&'static str),
    #[error("codebook shape does not match system parameters")]
    ShapeMismatch,
    #[error("fixed index {index} out of range for L={l}")]
    BadIndex { index: usize, l: usize },
    #[error("degenerate symbol: sigma_{{N_t}}/sigma_1 = {ratio:.3e}")]
    DegenerateSymbol { ratio: f64 },
    #[error("projections not computed; call project_block first")]
    MissingProjections,
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Static system configuration. `rho` is linear transmit SNR; external
/// interfaces speak dB and convert at the boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams {
    n_t: usize,
    n_r: usize,
    t: usize,
    rho: f64,
    l: usize,
    n: usize,
}

impl SystemParams {
    pub fn new(
        n_t: usize,
        n_r: usize,
        t: usize,
        rho: f64,
        l: usize,
        n: usize,
    ) -> Result<Self, ChannelError> {
        if n_t < 1 || n_r < n_t {
            return Err(ChannelError::BadParams("need N_r >= N_t >= 1"));
        }
        if t < n_t {
            return Err(ChannelError::BadParams("need T >= N_t"));
        }
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(ChannelError::BadParams("need finite rho > 0"));
        }
        if l < 2 {
            return Err(ChannelError::BadParams("need L >= 2"));
        }
        if n < l {
            return Err(ChannelError::BadParams("need N >= L"));
        }
        Ok(Self { n_t, n_r, t, rho, l, n })
    }

    pub fn with_snr_db(
        n_t: usize,
        n_r: usize,
        t: usize,
        snr_db: f64,
        l: usize,
        n: usize,
    ) -> Result<Self, ChannelError> {
        Self::new(n_t, n_r, t, 10f64.powf(snr_db / 10.0), l, n)
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }
    pub fn n_r(&self) -> usize {
        self.n_r
    }
    pub fn t(&self) -> usize {
        self.t
    }
    pub fn rho(&self) -> f64 {
        self.rho
    }
    pub fn l(&self) -> usize {
        self.l
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn snr_db(&self) -> f64 {
        10.0 * self.rho.log10()
    }

    /// Per-entry noise amplitude √(N_t/(ρT)).
    pub fn noise_scale(&self) -> f64 {
        (self.n_t as f64 / (self.rho * self.t as f64)).sqrt()
    }

    /// Copy with a different linear SNR (sweeps).
    pub fn at_rho(&self, rho: f64) -> Result<Self, ChannelError> {
        Self::new(self.n_t, self.n_r, self.t, rho, self.l, self.n)
    }

    /// Copy with a different block length (sweeps).
    pub fn at_block_len(&self, n: usize) -> Result<Self, ChannelError> {
        Self::new(self.n_t, self.n_r, self.t, self.rho, self.l, n)
    }
}

/// How transmitted codeword indices are drawn.
#[derive(Debug, Clone)]
pub enum IndexSource {
    Uniform,
    /// Cycles through the given sequence.
    Fixed(Vec<usize>),
}

/// One simulated block: N received T×N_r matrices, the ground-truth indices
/// (evaluation only — detectors never see them), and the projected Grassmann
/// symbols once [`project_block`] has run.
#[derive(Debug, Clone)]
pub struct SymbolBlock {
    received: Vec<CMatrix>,
    true_indices: Vec<usize>,
    projections: Vec<GrassmannPoint>,
}

impl SymbolBlock {
    /// Assemble a block from already-materialized symbols (testing, replay).
    pub fn from_parts(received: Vec<CMatrix>, true_indices: Vec<usize>) -> Result<Self, ChannelError> {
        if received.len() != true_indices.len() {
            return Err(ChannelError::ShapeMismatch);
        }
        Ok(SymbolBlock { received, true_indices, projections: Vec::new() })
    }

    pub fn received(&self) -> &[CMatrix] {
        &self.received
    }

    pub fn true_indices(&self) -> &[usize] {
        &self.true_indices
    }

    pub fn projections(&self) -> Result<&[GrassmannPoint], ChannelError> {
        if self.projections.is_empty() {
            Err(ChannelError::MissingProjections)
        } else {
            Ok(&self.projections)
        }
    }

    pub fn len(&self) -> usize {
        self.received.len()
    }

    pub fn is_empty(&self) -> bool {
        self.received.is_empty()
    }

    /// Debug/replay export: params, ground truth, and raw received entries.
    pub fn to_json(&self, params: &SystemParams) -> String {
        let file = BlockFile {
            n_t: params.n_t,
            n_r: params.n_r,
            t: params.t,
            snr_db: params.snr_db(),
            l: params.l,
            n: params.n,
            true_indices: self.true_indices.clone(),
            received: self
                .received
                .iter()
                .map(|y| {
                    (0..y.rows())
                        .flat_map(|r| (0..y.cols()).map(move |c| (r, c)))
                        .map(|(r, c)| [y[(r, c)].re, y[(r, c)].im])
                        .collect()
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("block serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<(SystemParams, Self), ChannelError> {
        let file: BlockFile = serde_json::from_str(text)
            .map_err(|_| ChannelError::BadParams("malformed block file"))?;
        let params =
            SystemParams::with_snr_db(file.n_t, file.n_r, file.t, file.snr_db, file.l, file.n)?;
        let mut received = Vec::with_capacity(file.received.len());
        for flat in &file.received {
            if flat.len() != file.t * file.n_r {
                return Err(ChannelError::BadParams("received entry count mismatch"));
            }
            received.push(CMatrix::from_fn(file.t, file.n_r, |r, c| {
                let [re, im] = flat[r * file.n_r + c];
                Complex64::new(re, im)
            }));
        }
        Ok((
            params,
            Self {
                received,
                true_indices: file.true_indices,
                projections: Vec::new(),
            },
        ))
    }
}

#[derive(Serialize, Deserialize)]
struct BlockFile {
    n_t: usize,
    n_r: usize,
    t: usize,
    snr_db: f64,
    l: usize,
    n: usize,
    true_indices: Vec<usize>,
    received: Vec<Vec<[f64; 2]>>,
}

/// Simulate one block, also returning each symbol's noiseless part XH
/// (diagnostics; the plain [`transmit_block`] discards it).
pub fn transmit_block_detailed(
    book: &Codebook,
    params: &SystemParams,
    index_source: &IndexSource,
    rng: &mut ChaCha8Rng,
) -> Result<(SymbolBlock, Vec<CMatrix>), ChannelError> {
    if book.ambient_dim() != params.t
        || book.subspace_dim() != params.n_t
        || book.len() != params.l
    {
        return Err(ChannelError::ShapeMismatch);
    }
    if let IndexSource::Fixed(seq) = index_source {
        if seq.is_empty() {
            return Err(ChannelError::BadParams("empty fixed index sequence"));
        }
        if let Some(&bad) = seq.iter().find(|&&i| i >= params.l) {
            return Err(ChannelError::BadIndex { index: bad, l: params.l });
        }
    }
    let sigma = params.noise_scale();
    let mut received = Vec::with_capacity(params.n);
    let mut true_indices = Vec::with_capacity(params.n);
    let mut signals = Vec::with_capacity(params.n);
    for i in 0..params.n {
        let idx = match index_source {
            IndexSource::Uniform => rng.gen_range(0..params.l),
            IndexSource::Fixed(seq) => seq[i % seq.len()],
        };
        let h = sample_gaussian_matrix(params.n_t, params.n_r, 1.0, rng);
        let w = sample_gaussian_matrix(params.t, params.n_r, 1.0, rng);
        let signal = book.codewords()[idx].generator().matmul(&h);
        received.push(signal.add(&w.scale(sigma)));
        signals.push(signal);
        true_indices.push(idx);
    }
    Ok((
        SymbolBlock {
            received,
            true_indices,
            projections: Vec::new(),
        },
        signals,
    ))
}

/// Simulate one block of N symbols through the fading channel.
pub fn transmit_block(
    book: &Codebook,
    params: &SystemParams,
    index_source: &IndexSource,
    rng: &mut ChaCha8Rng,
) -> Result<SymbolBlock, ChannelError> {
    transmit_block_detailed(book, params, index_source, rng).map(|(block, _)| block)
}

/// Dominant N_t-dimensional column subspace of a received matrix.
pub fn project_symbol(y: &CMatrix, n_t: usize) -> Result<GrassmannPoint, ChannelError> {
    let dec = svd(y)?;
    if dec.s.len() < n_t || n_t == 0 {
        return Err(ChannelError::BadParams("need at least N_t singular values"));
    }
    let ratio = dec.s[n_t - 1] / dec.s[0].max(f64::MIN_POSITIVE);
    if !(ratio >= 1e-12) {
        return Err(ChannelError::DegenerateSymbol { ratio });
    }
    Ok(GrassmannPoint::new(dec.u.leading_columns(n_t))?)
}

/// Fill `block.projections` from the received matrices.
pub fn project_block(block: &mut SymbolBlock, n_t: usize) -> Result<(), ChannelError> {
    let mut projections = Vec::with_capacity(block.received.len());
    for y in &block.received {
        projections.push(project_symbol(y, n_t)?);
    }
    block.projections = projections;
    Ok(())
}

/// Isotropic surrogate for a received symbol: span(x + (1/λ̄)√(N_t/(ρT))·W).
/// Same first-order perturbation statistics as the true channel, without the
/// channel-dependent shaping.
pub fn approx_received(
    x: &GrassmannPoint,
    params: &SystemParams,
    lambda_bar: f64,
    rng: &mut ChaCha8Rng,
) -> GrassmannPoint {
    assert!(lambda_bar > 0.0);
    let scale = params.noise_scale() / lambda_bar;
    let w = sample_gaussian_matrix(x.ambient_dim(), x.subspace_dim(), 1.0, rng);
    GrassmannPoint::from_span(&x.generator().add(&w.scale(scale)))
        .expect("noise perturbation keeps full rank almost surely")
}

/// Monte Carlo mean singular value λ̄ of an N_t×N_r i.i.d. CN(0,1) channel,
/// averaged over all N_t values per draw.
pub fn estimate_lambda_bar(
    params: &SystemParams,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    assert!(samples >= 100, "need at least 100 Monte Carlo samples");
    let mut acc = 0.0;
    for _ in 0..samples {
        let h = sample_gaussian_matrix(params.n_t, params.n_r, 1.0, rng);
        let dec = svd(&h).expect("finite Gaussian draw");
        acc += dec.s.iter().sum::<f64>() / params.n_t as f64;
    }
    acc / samples as f64
}
