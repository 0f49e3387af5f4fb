//! Seeded Monte Carlo experiment harness: sweep configs in, CSV/SVG out.
//!
//! Every trial owns an RNG stream derived from (seed, grid index, trial
//! index), trials run on the rayon pool, and aggregation folds outcomes in
//! index order, so scheduling can never change a byte of the output.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::PathBuf;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{
    connectivity_bound, dfs_separability_bound, distance_tail, kmeans_separability_bound,
    AnalysisError, AnalysisParams,
};
use crate::channel::{
    approx_received, estimate_lambda_bar, project_block, transmit_block, ChannelError,
    IndexSource, SystemParams,
};
use crate::constellation::{
    build_bit_mapping, fourier_reference, min_distance_bound, pack_codebook,
    select_codebook_for_reference, Codebook, ConstellationError,
};
use crate::detect::{
    decode_bits, dfs_fit, em_fit, evaluate, kmeans_fit, ml_symbol_detect, DetectError, EmInit,
};
use crate::manifold::procrustes_distance;
use crate::numerics::stream_rng;

/// DFS adjacency threshold used when a config does not override it; sized
/// for the default operating points (cluster radii ≲ 0.15, d_min ≈ 1.05).
pub const DEFAULT_DFS_GAMMA0: f64 = 0.3;

const FIT_MAX_ITER: usize = 100;
const FIT_TOL: f64 = 1e-6;
const PACK_RESTARTS: usize = 8;
const PACK_ITERATIONS: usize = 600;
const LAMBDA_SAMPLES: usize = 20_000;
/// Candidate codebooks packed for the bit pipeline; the one with the most
/// spread-out reference spectrum carries the mapping.
const BIT_BOOK_CANDIDATES: u64 = 4;

pub const CSV_HEADER: &str = "sweep_value,detector,success_prob,ci_lo,ci_hi,symbol_error_rate,mean_iterations,bound_value,trials,seed\n";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Constellation(#[from] ConstellationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Convergence,
    SnrSweep,
    SizeSweep,
    DatasetSweep,
    ThresholdSweep,
    DistributionCheck,
    BitsEndToEnd,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::SnrSweep => "snr_sweep",
            ExperimentKind::SizeSweep => "size_sweep",
            ExperimentKind::DatasetSweep => "dataset_sweep",
            ExperimentKind::ThresholdSweep => "threshold_sweep",
            ExperimentKind::DistributionCheck => "distribution_check",
            ExperimentKind::BitsEndToEnd => "bits_end_to_end",
        }
    }

    fn axis(&self) -> &'static str {
        match self {
            ExperimentKind::Convergence
            | ExperimentKind::SnrSweep
            | ExperimentKind::BitsEndToEnd => "snr_db",
            ExperimentKind::SizeSweep => "l",
            ExperimentKind::DatasetSweep => "n",
            ExperimentKind::ThresholdSweep => "gamma0",
            ExperimentKind::DistributionCheck => "r",
        }
    }
}

/// System defaults for a run; the sweep axis overrides one field per point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamsConfig {
    pub n_t: usize,
    pub n_r: usize,
    pub t: usize,
    pub snr_db: f64,
    pub l: usize,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: String,
    pub grid: Vec<f64>,
}

/// Optional knobs forwarded to [`AnalysisParams`]; unset fields keep the
/// analysis-module defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AnalysisOverrides {
    #[serde(default)]
    pub gamma0: Option<f64>,
    #[serde(default)]
    pub eta_d: Option<f64>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub disk_constant: Option<f64>,
    /// Substitute the packing-literature d_min bound for the codebook's own.
    #[serde(default)]
    pub use_packing_bound: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub params: ParamsConfig,
    pub sweep: SweepSpec,
    pub trials: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// SVG plot alongside the CSV (on unless a config opts out).
    #[serde(default = "default_emit_svg")]
    pub emit_svg: bool,
    #[serde(default)]
    pub analysis: AnalysisOverrides,
}

fn default_emit_svg() -> bool {
    true
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let cfg = |msg: String| Err(ExperimentError::Config(msg));
        if self.trials == 0 {
            return cfg("trials must be >= 1".into());
        }
        if self.sweep.grid.is_empty() {
            return cfg("sweep grid must be non-empty".into());
        }
        if self.sweep.grid.windows(2).any(|w| !(w[0] < w[1])) {
            return cfg("sweep grid must be strictly ascending".into());
        }
        let want = self.experiment.axis();
        if self.sweep.axis != want {
            return cfg(format!(
                "experiment {} sweeps axis {want}, config says {}",
                self.experiment.as_str(),
                self.sweep.axis
            ));
        }
        match want {
            "l" => {
                for &v in &self.sweep.grid {
                    if v.fract() != 0.0 || v < 2.0 || !(v as usize).is_power_of_two() {
                        return cfg(format!("constellation size {v} must be a power of two"));
                    }
                }
            }
            "n" => {
                for &v in &self.sweep.grid {
                    if v.fract() != 0.0 || (v as usize) < self.params.l {
                        return cfg(format!("dataset size {v} must be an integer >= L"));
                    }
                }
            }
            "gamma0" => {
                if self.sweep.grid[0] <= 0.0 {
                    return cfg("gamma0 grid must be positive".into());
                }
            }
            "r" => {
                if self.sweep.grid[0] < 0.0 {
                    return cfg("distance grid must be nonnegative".into());
                }
            }
            _ => {}
        }
        self.base_params()?;
        Ok(())
    }

    fn base_params(&self) -> Result<SystemParams, ExperimentError> {
        let p = &self.params;
        Ok(SystemParams::with_snr_db(p.n_t, p.n_r, p.t, p.snr_db, p.l, p.n)?)
    }

    /// System parameters at one grid point.
    fn params_at(&self, value: f64) -> Result<SystemParams, ExperimentError> {
        let p = &self.params;
        let sys = match self.experiment.axis() {
            "snr_db" => SystemParams::with_snr_db(p.n_t, p.n_r, p.t, value, p.l, p.n)?,
            "l" => SystemParams::with_snr_db(p.n_t, p.n_r, p.t, p.snr_db, value as usize, p.n)?,
            "n" => self.base_params()?.at_block_len(value as usize)?,
            _ => self.base_params()?,
        };
        Ok(sys)
    }

    /// DFS threshold in effect for this run (override or default).
    pub fn dfs_gamma0(&self) -> f64 {
        self.analysis.gamma0.unwrap_or(DEFAULT_DFS_GAMMA0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Detector {
    Kmeans,
    Dfs,
    Em,
    MlGenie,
    /// Fading-channel sample series of the distribution check.
    Channel,
    /// Isotropic-model sample series of the distribution check.
    Surrogate,
}

impl Detector {
    pub fn as_str(&self) -> &'static str {
        match self {
            Detector::Kmeans => "kmeans",
            Detector::Dfs => "dfs",
            Detector::Em => "em",
            Detector::MlGenie => "ml_genie",
            Detector::Channel => "channel",
            Detector::Surrogate => "surrogate",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ResultRow {
    pub sweep_value: f64,
    pub detector: Detector,
    pub success_prob: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub symbol_error_rate: f64,
    pub mean_iterations: f64,
    pub bound_value: Option<f64>,
    pub trials: usize,
    pub seed: u64,
}

impl ResultRow {
    fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            self.sweep_value,
            self.detector.as_str(),
            self.success_prob,
            self.ci_lo,
            self.ci_hi,
            self.symbol_error_rate,
            self.mean_iterations,
            self.bound_value.map(|b| b.to_string()).unwrap_or_default(),
            self.trials,
            self.seed
        )
    }
}

/// 95% Wilson score interval.
pub fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    assert!(trials > 0 && successes <= trials);
    let z = 1.959963984540054_f64;
    let n = trials as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let center = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Run the configured experiment and write `<output_dir>/<experiment>.csv`
/// (plus an SVG beside it when requested). The CSV file is opened before any
/// simulation so an unwritable directory fails fast.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ResultRow>, ExperimentError> {
    config.validate()?;
    fs::create_dir_all(&config.output_dir)?;
    let csv_path = config.output_dir.join(format!("{}.csv", config.experiment.as_str()));
    let mut csv = fs::File::create(&csv_path)?;

    let rows = compute_rows(config)?;

    let mut text = String::from(CSV_HEADER);
    for row in &rows {
        text.push_str(&row.csv_line());
    }
    csv.write_all(text.as_bytes())?;
    csv.flush()?;
    if config.emit_svg {
        let svg = emit_plot(&rows, &PlotSpec::for_experiment(config))?;
        fs::write(
            config.output_dir.join(format!("{}.svg", config.experiment.as_str())),
            svg,
        )?;
    }
    Ok(rows)
}

fn compute_rows(config: &ExperimentConfig) -> Result<Vec<ResultRow>, ExperimentError> {
    match config.experiment {
        ExperimentKind::DistributionCheck => distribution_rows(config),
        ExperimentKind::BitsEndToEnd => bits_rows(config),
        _ => detector_rows(config),
    }
}

fn detectors_for(kind: ExperimentKind) -> &'static [Detector] {
    match kind {
        ExperimentKind::Convergence => &[Detector::Kmeans, Detector::Em],
        ExperimentKind::ThresholdSweep => &[Detector::Dfs, Detector::MlGenie],
        _ => &[Detector::Kmeans, Detector::Dfs, Detector::Em, Detector::MlGenie],
    }
}

struct Outcome {
    success: bool,
    ser: f64,
    iterations: f64,
}

/// Codebooks per constellation size, all derived from the run seed only.
struct BookCache {
    seed: u64,
    t: usize,
    n_t: usize,
    books: HashMap<usize, Codebook>,
}

impl BookCache {
    fn new(seed: u64, t: usize, n_t: usize) -> Self {
        BookCache { seed, t, n_t, books: HashMap::new() }
    }

    fn get(&mut self, l: usize) -> Result<&Codebook, ExperimentError> {
        if !self.books.contains_key(&l) {
            let mut rng = stream_rng(
                self.seed,
                &[0xB00C, l as u64, self.t as u64, self.n_t as u64],
            );
            let book =
                pack_codebook(l, self.t, self.n_t, PACK_RESTARTS, PACK_ITERATIONS, &mut rng)?;
            self.books.insert(l, book);
        }
        Ok(&self.books[&l])
    }
}

/// Analysis parameters for one operating point, with the config's overrides
/// applied on top of the module defaults.
pub fn analysis_at(
    config: &ExperimentConfig,
    sys: &SystemParams,
    lambda_bar: f64,
    gamma0: f64,
) -> Result<AnalysisParams, ExperimentError> {
    let mut p = AnalysisParams::new(sys.rho(), sys.t(), sys.n_t(), lambda_bar, sys.l(), sys.n())?;
    let o = &config.analysis;
    if o.epsilon.is_some() || o.delta.is_some() {
        let eps = o.epsilon.unwrap_or(p.epsilon());
        let del = o.delta.unwrap_or(p.delta());
        p = p.with_slacks(eps, del)?;
    }
    if let Some(eta) = o.eta_d {
        p = p.with_eta_d(eta)?;
    }
    if let Some(a) = o.disk_constant {
        p = p.with_disk_constant(a)?;
    }
    p = p.with_gamma0(gamma0)?;
    Ok(p)
}

fn bound_for(
    detector: Detector,
    config: &ExperimentConfig,
    sys: &SystemParams,
    book: &Codebook,
    lambda_bar: f64,
    gamma0: f64,
) -> Option<f64> {
    let d_min = if config.analysis.use_packing_bound {
        min_distance_bound(sys.l(), sys.t(), sys.n_t()).sqrt()
    } else {
        book.d_min()
    };
    let params = analysis_at(config, sys, lambda_bar, gamma0).ok()?;
    match detector {
        Detector::Kmeans => Some(kmeans_separability_bound(d_min, &params).ok()?.value),
        // Success needs separation and connectivity together; a union bound
        // combines the two lower bounds.
        Detector::Dfs => {
            let sep = dfs_separability_bound(d_min, &params).ok()?.value;
            // Once the threshold covers the disk diameter, in-disk points
            // are mutually adjacent and connectivity only needs every point
            // to land in its disk (prob >= 1 - epsilon by the choice of a);
            // the bin-counting bound is for thresholds below that scale.
            let con = if gamma0 >= 2.0 * params.disk_radius() {
                1.0 - params.epsilon()
            } else {
                connectivity_bound(&params).ok()?.exact
            };
            Some((sep + con - 1.0).clamp(0.0, 1.0))
        }
        _ => None,
    }
}

fn detector_rows(config: &ExperimentConfig) -> Result<Vec<ResultRow>, ExperimentError> {
    let detectors = detectors_for(config.experiment);
    let mut cache = BookCache::new(config.seed, config.params.t, config.params.n_t);
    let needs_bounds = detectors.contains(&Detector::Kmeans) || detectors.contains(&Detector::Dfs);
    let lambda_bar = if needs_bounds {
        let sys = config.base_params()?;
        estimate_lambda_bar(&sys, LAMBDA_SAMPLES, &mut stream_rng(config.seed, &[0xABBA]))
    } else {
        1.0
    };

    let mut rows = Vec::new();
    for (g, &value) in config.sweep.grid.iter().enumerate() {
        let sys = config.params_at(value)?;
        let book = cache.get(sys.l())?.clone();
        let gamma0 = if config.experiment == ExperimentKind::ThresholdSweep {
            value
        } else {
            config.dfs_gamma0()
        };

        let outcomes: Vec<Vec<Outcome>> = (0..config.trials)
            .into_par_iter()
            .map(|trial| run_detector_trial(config, &sys, &book, detectors, gamma0, g, trial))
            .collect::<Result<_, _>>()?;

        for (d, &detector) in detectors.iter().enumerate() {
            let successes = outcomes.iter().filter(|o| o[d].success).count();
            let (ci_lo, ci_hi) = wilson_interval(successes, config.trials);
            let ser =
                outcomes.iter().map(|o| o[d].ser).sum::<f64>() / config.trials as f64;
            let iters =
                outcomes.iter().map(|o| o[d].iterations).sum::<f64>() / config.trials as f64;
            rows.push(ResultRow {
                sweep_value: value,
                detector,
                success_prob: successes as f64 / config.trials as f64,
                ci_lo,
                ci_hi,
                symbol_error_rate: ser,
                mean_iterations: iters,
                bound_value: bound_for(detector, config, &sys, &book, lambda_bar, gamma0),
                trials: config.trials,
                seed: config.seed,
            });
        }
    }
    Ok(rows)
}

fn run_detector_trial(
    config: &ExperimentConfig,
    sys: &SystemParams,
    book: &Codebook,
    detectors: &[Detector],
    gamma0: f64,
    g: usize,
    trial: usize,
) -> Result<Vec<Outcome>, ExperimentError> {
    let ids = |k: u64| [g as u64, trial as u64, k];
    let mut rng = stream_rng(config.seed, &ids(0));
    let mut block = transmit_block(book, sys, &IndexSource::Uniform, &mut rng)?;
    project_block(&mut block, sys.n_t())?;
    let match_tol = book.d_min() / 2.0;

    let mut outcomes = Vec::with_capacity(detectors.len());
    for &det in detectors {
        let outcome = match det {
            Detector::Kmeans => {
                let mut r = stream_rng(config.seed, &ids(1));
                let fit = kmeans_fit(&block, sys.l(), &mut r, FIT_MAX_ITER, FIT_TOL)?;
                let rep = evaluate(&fit, &block, book, match_tol);
                Outcome {
                    success: rep.success,
                    ser: rep.symbol_error_rate,
                    iterations: fit.iterations() as f64,
                }
            }
            Detector::Em => {
                let seed = stream_rng(config.seed, &ids(2)).gen::<u64>();
                let fit = em_fit(
                    &block,
                    sys.l(),
                    EmInit::RandomFromData { seed },
                    sys,
                    FIT_MAX_ITER,
                    FIT_TOL,
                )?;
                let rep = evaluate(&fit, &block, book, match_tol);
                Outcome {
                    success: rep.success,
                    ser: rep.symbol_error_rate,
                    iterations: fit.iterations() as f64,
                }
            }
            Detector::Dfs => {
                let fit = dfs_fit(&block, gamma0)?;
                let rep = evaluate(&fit, &block, book, match_tol);
                Outcome {
                    success: rep.success,
                    ser: rep.symbol_error_rate,
                    iterations: fit.iterations() as f64,
                }
            }
            Detector::MlGenie => {
                let labels = ml_symbol_detect(&block, book);
                let errors = labels
                    .iter()
                    .zip(block.true_indices())
                    .filter(|(a, b)| a != b)
                    .count();
                Outcome {
                    success: errors == 0,
                    ser: errors as f64 / labels.len() as f64,
                    iterations: 0.0,
                }
            }
            _ => unreachable!("sample series never run as detectors"),
        };
        outcomes.push(outcome);
    }
    Ok(outcomes)
}

/// Distance-law check: empirical exceedance of the true channel and of the
/// isotropic surrogate on the configured radius grid, with the closed-form
/// tail attached as the bound column. The error column holds the absolute
/// empirical-vs-formula gap.
fn distribution_rows(config: &ExperimentConfig) -> Result<Vec<ResultRow>, ExperimentError> {
    let sys = config.base_params()?;
    let mut cache = BookCache::new(config.seed, config.params.t, config.params.n_t);
    let book = cache.get(sys.l())?.clone();
    let lambda_bar =
        estimate_lambda_bar(&sys, LAMBDA_SAMPLES, &mut stream_rng(config.seed, &[0xABBA]));
    let params = analysis_at(config, &sys, lambda_bar, config.dfs_gamma0())?;

    let samples: Vec<(Vec<f64>, Vec<f64>)> = (0..config.trials)
        .into_par_iter()
        .map(|trial| -> Result<(Vec<f64>, Vec<f64>), ExperimentError> {
            let mut rng = stream_rng(config.seed, &[0, trial as u64, 0]);
            let mut block = transmit_block(&book, &sys, &IndexSource::Uniform, &mut rng)?;
            project_block(&mut block, sys.n_t())?;
            let channel: Vec<f64> = block
                .projections()?
                .iter()
                .zip(block.true_indices())
                .map(|(p, &idx)| procrustes_distance(p, &book.codewords()[idx]))
                .collect();
            let mut rng = stream_rng(config.seed, &[0, trial as u64, 1]);
            let surrogate: Vec<f64> = (0..sys.n())
                .map(|_| {
                    let idx = rng.gen_range(0..sys.l());
                    let x = &book.codewords()[idx];
                    procrustes_distance(x, &approx_received(x, &sys, lambda_bar, &mut rng))
                })
                .collect();
            Ok((channel, surrogate))
        })
        .collect::<Result<_, _>>()?;

    let channel: Vec<f64> = samples.iter().flat_map(|s| s.0.iter().copied()).collect();
    let surrogate: Vec<f64> = samples.iter().flat_map(|s| s.1.iter().copied()).collect();

    let mut rows = Vec::new();
    for &r in &config.sweep.grid {
        let tail = distance_tail(r, &params);
        for (detector, set) in [(Detector::Channel, &channel), (Detector::Surrogate, &surrogate)] {
            let exceed = set.iter().filter(|&&d| d > r).count();
            let (ci_lo, ci_hi) = wilson_interval(exceed, set.len());
            let p = exceed as f64 / set.len() as f64;
            rows.push(ResultRow {
                sweep_value: r,
                detector,
                success_prob: p,
                ci_lo,
                ci_hi,
                symbol_error_rate: (p - tail).abs(),
                mean_iterations: 0.0,
                bound_value: Some(tail),
                trials: config.trials,
                seed: config.seed,
            });
        }
    }
    Ok(rows)
}

/// Bit pipeline: random payloads through mapping → channel → blind K-means →
/// bit recovery, with a genie ML reference. `success` means the trial's BER
/// stayed within 1e-2; the error column reports the mean BER itself.
fn bits_rows(config: &ExperimentConfig) -> Result<Vec<ResultRow>, ExperimentError> {
    let reference = fourier_reference(config.params.t, config.params.n_t);
    // Packing only controls d_min; the reference spectrum is luck, and a book
    // with near-tied reference distances cannot carry bits under estimation
    // noise. Pack a few candidates and keep the most separable one.
    let candidates: Vec<Codebook> = (0..BIT_BOOK_CANDIDATES)
        .map(|c| {
            let mut rng = stream_rng(
                config.seed,
                &[
                    0xB00C,
                    config.params.l as u64,
                    config.params.t as u64,
                    config.params.n_t as u64,
                    c,
                ],
            );
            pack_codebook(
                config.params.l,
                config.params.t,
                config.params.n_t,
                PACK_RESTARTS,
                PACK_ITERATIONS,
                &mut rng,
            )
        })
        .collect::<Result<_, _>>()?;
    let book = select_codebook_for_reference(&candidates, &reference)?;
    // Half the true book's smallest reference-distance gap: the true mapping
    // is valid by construction, and an estimated book only decodes if its
    // distances to the reference stay within half a gap of the truth.
    let mut ref_dists: Vec<f64> =
        book.codewords().iter().map(|c| procrustes_distance(c, &reference)).collect();
    ref_dists.sort_by(f64::total_cmp);
    let min_gap =
        ref_dists.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min) / 2.0;
    let mapping = build_bit_mapping(&book, &reference, min_gap)?;
    let bits_per_symbol = mapping.bits_per_symbol();

    let mut rows = Vec::new();
    for (g, &snr_db) in config.sweep.grid.iter().enumerate() {
        let sys = config.params_at(snr_db)?;
        let results: Vec<(f64, f64)> = (0..config.trials)
            .into_par_iter()
            .map(|trial| -> Result<(f64, f64), ExperimentError> {
                let ids = |k: u64| [g as u64, trial as u64, k];
                let mut rng = stream_rng(config.seed, &ids(0));
                let payload: Vec<bool> =
                    (0..sys.n() * bits_per_symbol).map(|_| rng.gen::<bool>()).collect();
                let indices: Vec<usize> = payload
                    .chunks(bits_per_symbol)
                    .map(|c| mapping.index_for_bits(c))
                    .collect::<Result<_, _>>()?;
                let mut block =
                    transmit_block(&book, &sys, &IndexSource::Fixed(indices), &mut rng)?;
                project_block(&mut block, sys.n_t())?;

                let mut r = stream_rng(config.seed, &ids(1));
                let fit = kmeans_fit(&block, sys.l(), &mut r, FIT_MAX_ITER, FIT_TOL)?;
                // An estimated book whose reference distances collapse cannot
                // carry bits; score the trial as coin-flip decoding.
                let blind_ber = match decode_bits(&fit, &reference, min_gap) {
                    Ok(decoded) => ber(&payload, &decoded),
                    Err(_) => 0.5,
                };

                let genie: Vec<bool> = ml_symbol_detect(&block, &book)
                    .iter()
                    .flat_map(|&lab| mapping.bits_for_index(lab))
                    .collect();
                Ok((blind_ber, ber(&payload, &genie)))
            })
            .collect::<Result<_, _>>()?;

        for (detector, idx) in [(Detector::Kmeans, 0usize), (Detector::MlGenie, 1)] {
            let bers: Vec<f64> = results.iter().map(|r| if idx == 0 { r.0 } else { r.1 }).collect();
            let ok = bers.iter().filter(|&&b| b <= 1e-2).count();
            let (ci_lo, ci_hi) = wilson_interval(ok, config.trials);
            rows.push(ResultRow {
                sweep_value: snr_db,
                detector,
                success_prob: ok as f64 / config.trials as f64,
                ci_lo,
                ci_hi,
                symbol_error_rate: bers.iter().sum::<f64>() / config.trials as f64,
                mean_iterations: 0.0,
                bound_value: None,
                trials: config.trials,
                seed: config.seed,
            });
        }
    }
    Ok(rows)
}

fn ber(sent: &[bool], got: &[bool]) -> f64 {
    assert_eq!(sent.len(), got.len());
    sent.iter().zip(got).filter(|(a, b)| a != b).count() as f64 / sent.len() as f64
}

pub struct PlotSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
}

impl PlotSpec {
    pub fn for_experiment(config: &ExperimentConfig) -> Self {
        let y = match config.experiment {
            ExperimentKind::DistributionCheck => "exceedance probability",
            ExperimentKind::BitsEndToEnd => "P(BER <= 1e-2)",
            _ => "success probability",
        };
        PlotSpec {
            title: config.experiment.as_str().to_string(),
            x_label: config.sweep.axis.clone(),
            y_label: y.to_string(),
        }
    }
}

const PLOT_W: f64 = 720.0;
const PLOT_H: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

fn series_color(d: Detector) -> &'static str {
    match d {
        Detector::Kmeans | Detector::Channel => "#1f77b4",
        Detector::Dfs | Detector::Surrogate => "#ff7f0e",
        Detector::Em => "#2ca02c",
        Detector::MlGenie => "#d62728",
    }
}

/// Deterministic, self-contained SVG line chart: one polyline per detector
/// series, CI whiskers, dashed bound overlays where rows carry a bound.
pub fn emit_plot(rows: &[ResultRow], spec: &PlotSpec) -> Result<String, ExperimentError> {
    if rows.is_empty() {
        return Err(ExperimentError::Config("cannot plot an empty result set".into()));
    }
    let mut series: Vec<(Detector, Vec<&ResultRow>)> = Vec::new();
    for row in rows {
        match series.iter_mut().find(|(d, _)| *d == row.detector) {
            Some((_, list)) => list.push(row),
            None => series.push((row.detector, vec![row])),
        }
    }
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for row in rows {
        x_min = x_min.min(row.sweep_value);
        x_max = x_max.max(row.sweep_value);
    }
    if x_min == x_max {
        x_min -= 0.5;
        x_max += 0.5;
    }
    let x_px = |v: f64| MARGIN_L + (v - x_min) / (x_max - x_min) * (PLOT_W - MARGIN_L - MARGIN_R);
    let y_px = |v: f64| PLOT_H - MARGIN_B - v.clamp(0.0, 1.0) * (PLOT_H - MARGIN_T - MARGIN_B);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PLOT_W}\" height=\"{PLOT_H}\" viewBox=\"0 0 {PLOT_W} {PLOT_H}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{PLOT_W}\" height=\"{PLOT_H}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>",
        (MARGIN_L + PLOT_W - MARGIN_R) / 2.0,
        spec.title
    );
    // axes
    let _ = writeln!(
        svg,
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>",
        MARGIN_L,
        PLOT_H - MARGIN_B,
        PLOT_W - MARGIN_R,
        PLOT_H - MARGIN_B
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>",
        MARGIN_L, MARGIN_T, MARGIN_L, PLOT_H - MARGIN_B
    );
    for k in 0..=4 {
        let v = k as f64 / 4.0;
        let y = y_px(v);
        let _ = writeln!(
            svg,
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#cccccc\" stroke-width=\"0.5\"/>",
            MARGIN_L,
            PLOT_W - MARGIN_R
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{v}</text>",
            MARGIN_L - 6.0,
            y + 4.0
        );
    }
    let mut x_ticks: Vec<f64> = rows.iter().map(|r| r.sweep_value).collect();
    x_ticks.sort_by(f64::total_cmp);
    x_ticks.dedup();
    for &v in &x_ticks {
        let x = x_px(v);
        let _ = writeln!(
            svg,
            "<text x=\"{x:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{v}</text>",
            PLOT_H - MARGIN_B + 16.0
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
        (MARGIN_L + PLOT_W - MARGIN_R) / 2.0,
        PLOT_H - 12.0,
        spec.x_label
    );
    let _ = writeln!(
        svg,
        "<text x=\"16\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2})\">{}</text>",
        (MARGIN_T + PLOT_H - MARGIN_B) / 2.0,
        (MARGIN_T + PLOT_H - MARGIN_B) / 2.0,
        spec.y_label
    );

    for (s, (detector, list)) in series.iter().enumerate() {
        let color = series_color(*detector);
        // CI whiskers first so the line draws on top.
        for row in list {
            let x = x_px(row.sweep_value);
            let _ = writeln!(
                svg,
                "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"{color}\" stroke-width=\"1\" opacity=\"0.6\"/>",
                y_px(row.ci_lo),
                y_px(row.ci_hi)
            );
        }
        let pts: Vec<String> = list
            .iter()
            .map(|r| format!("{:.2},{:.2}", x_px(r.sweep_value), y_px(r.success_prob)))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
            pts.join(" ")
        );
        if list.iter().any(|r| r.bound_value.is_some()) {
            let path: Vec<String> = list
                .iter()
                .filter_map(|r| {
                    r.bound_value.map(|b| {
                        format!("{:.2} {:.2}", x_px(r.sweep_value), y_px(b))
                    })
                })
                .collect();
            let _ = writeln!(
                svg,
                "<path d=\"M {}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1\" stroke-dasharray=\"6 3\"/>",
                path.join(" L ")
            );
        }
        let ly = MARGIN_T + 14.0 * s as f64;
        let _ = writeln!(
            svg,
            "<line x1=\"{:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            PLOT_W - MARGIN_R - 110.0,
            PLOT_W - MARGIN_R - 90.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            PLOT_W - MARGIN_R - 84.0,
            ly + 4.0,
            detector.as_str()
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(dir: &std::path::Path) -> ExperimentConfig {
        ExperimentConfig {
            experiment: ExperimentKind::SnrSweep,
            params: ParamsConfig { n_t: 2, n_r: 4, t: 4, snr_db: 20.0, l: 4, n: 32 },
            sweep: SweepSpec { axis: "snr_db".into(), grid: vec![15.0, 25.0] },
            trials: 3,
            seed: 7,
            output_dir: dir.to_path_buf(),
            emit_svg: false,
            analysis: AnalysisOverrides::default(),
        }
    }

    fn row(v: f64, det: Detector, bound: Option<f64>) -> ResultRow {
        ResultRow {
            sweep_value: v,
            detector: det,
            success_prob: 0.5 + 0.1 * v,
            ci_lo: 0.4,
            ci_hi: 0.9,
            symbol_error_rate: 0.01,
            mean_iterations: 3.0,
            bound_value: bound,
            trials: 10,
            seed: 1,
        }
    }

    #[test]
    fn config_json_uses_the_documented_field_names() {
        let text = r#"{
            "experiment": "snr_sweep",
            "params": {"n_t": 2, "n_r": 4, "t": 4, "snr_db": 20.0, "l": 8, "n": 400},
            "sweep": {"axis": "snr_db", "grid": [10.0, 15.0, 20.0]},
            "trials": 5,
            "seed": 42,
            "output_dir": "/tmp/out",
            "emit_svg": true,
            "analysis": {"gamma0": 0.25}
        }"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(cfg.experiment, ExperimentKind::SnrSweep);
        assert_eq!(cfg.params.l, 8);
        assert_eq!(cfg.sweep.grid.len(), 3);
        assert_eq!(cfg.analysis.gamma0, Some(0.25));
        assert!(cfg.validate().is_ok());
        let round: ExperimentConfig =
            serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(round.seed, cfg.seed);

        // Plots are on unless a config opts out.
        let minimal = text.replace(r#""emit_svg": true,"#, "");
        assert!(ExperimentConfig::from_json(&minimal).unwrap().emit_svg);
    }

    #[test]
    fn config_validation_rejects_bad_sweeps() {
        let dir = std::env::temp_dir();
        let mut c = tiny_config(&dir);
        c.trials = 0;
        assert!(c.validate().is_err());
        let mut c = tiny_config(&dir);
        c.sweep.grid = vec![];
        assert!(c.validate().is_err());
        let mut c = tiny_config(&dir);
        c.sweep.grid = vec![25.0, 15.0];
        assert!(c.validate().is_err());
        let mut c = tiny_config(&dir);
        c.sweep.axis = "gamma0".into();
        assert!(c.validate().is_err());
        let mut c = tiny_config(&dir);
        c.experiment = ExperimentKind::SizeSweep;
        c.sweep.axis = "l".into();
        c.sweep.grid = vec![3.0, 6.0];
        assert!(c.validate().is_err());
    }

    #[test]
    fn wilson_interval_brackets_the_point_estimate() {
        let (lo, hi) = wilson_interval(90, 100);
        assert!(lo < 0.9 && 0.9 < hi);
        assert!(lo > 0.8 && hi < 0.96);
        let (lo, hi) = wilson_interval(0, 10);
        assert!(lo < 1e-12);
        assert!(hi > 0.1 && hi < 0.35);
        let (lo, hi) = wilson_interval(10, 10);
        assert!(hi > 1.0 - 1e-12);
        assert!(lo > 0.65 && lo < 0.9);
    }

    #[test]
    fn unwritable_output_dir_fails_before_any_simulation() {
        let blocker = std::env::temp_dir().join("grassmod_blocker_file");
        fs::write(&blocker, b"x").unwrap();
        let mut c = tiny_config(&blocker.join("sub"));
        c.trials = 1_000_000; // would take hours if simulation ran first
        let started = std::time::Instant::now();
        match run_experiment(&c) {
            Err(ExperimentError::Io(_)) => {}
            other => panic!("expected an I/O error, got {other:?}"),
        }
        assert!(started.elapsed() < std::time::Duration::from_secs(5));
    }

    #[test]
    fn plot_draws_one_polyline_per_series_and_is_deterministic() {
        let rows = vec![row(1.0, Detector::Kmeans, None), row(2.0, Detector::Kmeans, None)];
        let spec = PlotSpec {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
        };
        let svg = emit_plot(&rows, &spec).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert_eq!(svg.matches("stroke-dasharray").count(), 0);
        assert_eq!(svg, emit_plot(&rows, &spec).unwrap());
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));

        let with_bound = vec![
            row(1.0, Detector::Kmeans, Some(0.8)),
            row(2.0, Detector::Kmeans, Some(0.9)),
            row(1.0, Detector::Dfs, None),
            row(2.0, Detector::Dfs, None),
        ];
        let svg = emit_plot(&with_bound, &spec).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("stroke-dasharray").count(), 1);
        assert!(matches!(emit_plot(&[], &spec), Err(ExperimentError::Config(_))));
    }

    #[test]
    fn csv_lines_have_ten_columns_and_empty_bounds() {
        let line = row(25.0, Detector::MlGenie, None).csv_line();
        assert_eq!(line.trim_end().split(',').count(), 10);
        assert!(line.contains(",,"), "missing bound must serialize as empty");
        let line = row(25.0, Detector::Kmeans, Some(0.75)).csv_line();
        assert!(line.contains(",0.75,"));
        assert_eq!(CSV_HEADER.trim_end().split(',').count(), 10);
    }
}
