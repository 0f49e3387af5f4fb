//! Monte Carlo checks of the detection stack at realistic scale.

use rayon::prelude::*;

use grassmod::channel::{project_block, transmit_block, IndexSource, SystemParams};
use grassmod::constellation::{build_bit_mapping, fourier_reference, pack_codebook, Codebook};
use grassmod::detect::{
    decode_bits, em_fit, evaluate, hard_assign, kmeans_fit, kmeans_fit_with_init, log_likelihood,
    ml_symbol_detect, EmInit, Metric,
};
use grassmod::manifold::{procrustes_distance, GrassmannPoint};
use grassmod::numerics::stream_rng;

fn paper_book() -> Codebook {
    let mut rng = stream_rng(0xb00c, &[1]);
    pack_codebook(8, 4, 2, 8, 600, &mut rng).unwrap()
}

fn sim(
    book: &Codebook,
    snr_db: f64,
    n_r: usize,
    n: usize,
    seed: u64,
) -> (grassmod::channel::SymbolBlock, SystemParams) {
    let params = SystemParams::with_snr_db(2, n_r, 4, snr_db, book.len(), n).unwrap();
    let mut rng = stream_rng(seed, &[2]);
    let mut block = transmit_block(book, &params, &IndexSource::Uniform, &mut rng).unwrap();
    project_block(&mut block, params.n_t()).unwrap();
    (block, params)
}

/// Greedy bipartite matching between two codeword sets; true when every
/// codeword pairs off within `tol`.
fn books_match(a: &[GrassmannPoint], b: &[GrassmannPoint], tol: f64) -> bool {
    let mut pairs: Vec<(f64, usize, usize)> = a
        .iter()
        .enumerate()
        .flat_map(|(i, x)| {
            b.iter()
                .enumerate()
                .map(move |(j, y)| (procrustes_distance(x, y), i, j))
        })
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    let (mut ua, mut ub) = (vec![false; a.len()], vec![false; b.len()]);
    let mut matched = 0;
    for (d, i, j) in pairs {
        if d > tol {
            break;
        }
        if ua[i] || ub[j] {
            continue;
        }
        ua[i] = true;
        ub[j] = true;
        matched += 1;
    }
    matched == a.len() && a.len() == b.len()
}

#[test]
fn kmeans_success_rate_at_high_snr() {
    let book = paper_book();
    let successes: usize = (0..200u64)
        .into_par_iter()
        .map(|trial| {
            let (block, _) = sim(&book, 25.0, 4, 400, 500 + trial);
            let mut rng = stream_rng(9000 + trial, &[3]);
            let fit = kmeans_fit(&block, 8, &mut rng, 50, 1e-6).unwrap();
            let report = evaluate(&fit, &block, &book, book.d_min() / 2.0);
            usize::from(report.success)
        })
        .sum();
    let rate = successes as f64 / 200.0;
    eprintln!("kmeans success rate at 25 dB: {rate:.3}");
    assert!(rate >= 0.9, "success rate {rate}");
}

#[test]
fn hard_assign_tracks_ml_for_well_conditioned_channels() {
    let book = paper_book();
    let (block, _) = sim(&book, 25.0, 10, 1000, 77);
    let ml = ml_symbol_detect(&block, &book);
    let by_distance = hard_assign(&block, &book, Metric::Procrustes).unwrap();
    let agree = ml
        .iter()
        .zip(&by_distance)
        .filter(|(a, b)| a == b)
        .count();
    let frac = agree as f64 / ml.len() as f64;
    eprintln!("hard_assign vs ml agreement: {frac:.4}");
    assert!(frac >= 0.99, "agreement {frac}");
}

#[test]
fn true_codeword_likelihood_dominates_at_high_snr() {
    let book = paper_book();
    assert!(book.d_min() > 1.0);
    let wins: usize = (0..1000u64)
        .into_par_iter()
        .map(|trial| {
            let (block, params) = sim(&book, 30.0, 4, 8, 3000 + trial);
            let truth = block.true_indices()[0];
            let y = &block.received()[0];
            let lls: Vec<f64> = book
                .codewords()
                .iter()
                .map(|x| log_likelihood(y, x, &params))
                .collect();
            let best = lls
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            usize::from(best == truth)
        })
        .sum();
    eprintln!("true codeword won {wins}/1000 likelihood contests");
    assert_eq!(wins, 1000);
}

#[test]
fn em_objective_monotone_over_many_seeds() {
    let book = paper_book();
    let violations: usize = (0..100u64)
        .into_par_iter()
        .map(|trial| {
            let (block, params) = sim(&book, 20.0, 4, 400, 11_000 + trial);
            let fit = em_fit(
                &block,
                8,
                EmInit::RandomFromData { seed: 600 + trial },
                &params,
                50,
                1e-8,
            )
            .unwrap();
            let dipped = fit
                .objective_trace()
                .windows(2)
                .any(|w| w[1] < w[0] - 1e-6);
            usize::from(dipped)
        })
        .sum();
    assert_eq!(violations, 0, "{violations} runs had a decreasing objective");
}

#[test]
fn em_matches_kmeans_from_identical_init() {
    let book = paper_book();
    let results: Vec<(bool, usize, usize)> = (0..100u64)
        .into_par_iter()
        .map(|trial| {
            let (block, params) = sim(&book, 30.0, 4, 400, 21_000 + trial);
            let projections = block.projections().unwrap();
            let mut rng = stream_rng(31_000 + trial, &[4]);
            let init: Vec<GrassmannPoint> =
                rand::seq::index::sample(&mut rng, projections.len(), 8)
                    .iter()
                    .map(|i| projections[i].clone())
                    .collect();
            let km = kmeans_fit_with_init(&block, &init, 50, 1e-6).unwrap();
            let em = em_fit(
                &block,
                8,
                EmInit::Book(Codebook::new(init).unwrap()),
                &params,
                50,
                1e-8,
            )
            .unwrap();
            let matched = books_match(
                em.estimated_codebook().codewords(),
                km.estimated_codebook().codewords(),
                0.05,
            );
            (matched, km.iterations(), em.iterations())
        })
        .collect();
    let matched = results.iter().filter(|r| r.0).count();
    eprintln!("identical-init em/kmeans matched in {matched}/100 trials");
    assert!(matched >= 95, "matched only {matched}/100");
}

#[test]
fn kmeans_converges_in_fewer_iterations_than_em() {
    let book = paper_book();
    let iters: Vec<(usize, usize)> = (0..100u64)
        .into_par_iter()
        .map(|trial| {
            let (block, params) = sim(&book, 20.0, 4, 400, 41_000 + trial);
            let projections = block.projections().unwrap();
            let mut rng = stream_rng(51_000 + trial, &[5]);
            let init: Vec<GrassmannPoint> =
                rand::seq::index::sample(&mut rng, projections.len(), 8)
                    .iter()
                    .map(|i| projections[i].clone())
                    .collect();
            let km = kmeans_fit_with_init(&block, &init, 50, 1e-6).unwrap();
            let em = em_fit(
                &block,
                8,
                EmInit::Book(Codebook::new(init).unwrap()),
                &params,
                50,
                1e-8,
            )
            .unwrap();
            (km.iterations(), em.iterations())
        })
        .collect();
    let median = |mut xs: Vec<usize>| -> f64 {
        xs.sort_unstable();
        let n = xs.len();
        if n % 2 == 0 {
            (xs[n / 2 - 1] + xs[n / 2]) as f64 / 2.0
        } else {
            xs[n / 2] as f64
        }
    };
    let med_km = median(iters.iter().map(|x| x.0).collect());
    let med_em = median(iters.iter().map(|x| x.1).collect());
    eprintln!("median iterations: kmeans {med_km}, em {med_em}");
    assert!(med_km < med_em, "kmeans {med_km} vs em {med_em}");
}

#[test]
fn end_to_end_bit_error_rate_within_budget() {
    let book = paper_book();
    let reference = fourier_reference(4, 2);
    let mapping = build_bit_mapping(&book, &reference, 1e-4).unwrap();
    let bits_per_symbol = mapping.bits_per_symbol();
    let total_symbols = 100_000usize.div_ceil(bits_per_symbol);
    // stay well clear of any mapping gap: min_gap from the actual book
    let mut ref_d: Vec<f64> = book
        .codewords()
        .iter()
        .map(|c| procrustes_distance(c, &reference))
        .collect();
    ref_d.sort_by(f64::total_cmp);
    let min_gap = ref_d
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);

    let mut source = stream_rng(0xb175, &[6]);
    let bits: Vec<bool> = (0..total_symbols * bits_per_symbol)
        .map(|_| rand::Rng::gen_bool(&mut source, 0.5))
        .collect();
    let indices: Vec<usize> = bits
        .chunks(bits_per_symbol)
        .map(|w| mapping.index_for_bits(w).unwrap())
        .collect();
    let params = SystemParams::with_snr_db(2, 4, 4, 25.0, 8, total_symbols).unwrap();
    let mut rng = stream_rng(0xcafe, &[7]);
    let mut block =
        transmit_block(&book, &params, &IndexSource::Fixed(indices), &mut rng).unwrap();
    project_block(&mut block, 2).unwrap();
    let mut fit_rng = stream_rng(0xf17, &[8]);
    let fit = kmeans_fit(&block, 8, &mut fit_rng, 50, 1e-6).unwrap();
    let decoded = decode_bits(&fit, &reference, min_gap / 2.0).unwrap();
    assert_eq!(decoded.len(), bits.len());
    let errors = decoded.iter().zip(&bits).filter(|(a, b)| a != b).count();
    let ber = errors as f64 / bits.len() as f64;
    eprintln!("end-to-end BER at 25 dB: {ber:.2e} over {} bits", bits.len());
    assert!(ber <= 1e-2, "BER {ber}");
}
