use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use grassmod::analysis::{
    connectivity_bound, dfs_separability_bound, kmeans_separability_bound, min_bin_probability,
    min_bin_probability_asymptote,
};
use grassmod::channel::estimate_lambda_bar;
use grassmod::constellation::{min_distance_bound, pack_codebook};
use grassmod::experiment::{analysis_at, run_experiment, ExperimentConfig};
use grassmod::numerics::stream_rng;

#[derive(Parser)]
#[command(
    name = "grassmod",
    version,
    about = "Blind detection experiments for non-coherent Grassmannian constellations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured Monte Carlo experiment; writes CSV (and optional SVG).
    Run {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's trial count.
        #[arg(long)]
        trials: Option<usize>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip the SVG plot (CSV only).
        #[arg(long)]
        no_svg: bool,
    },
    /// Pack a codebook by repulsion descent and write it as JSON.
    Pack {
        /// Constellation size (a power of two).
        #[arg(long = "L")]
        l: usize,
        /// Coherence block length.
        #[arg(long = "T")]
        t: usize,
        /// Transmit antennas (subspace dimension).
        #[arg(long = "Nt")]
        n_t: usize,
        #[arg(long, default_value_t = 8)]
        restarts: usize,
        #[arg(long, default_value_t = 600)]
        iterations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path for the codebook JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the closed-form performance bounds for a config without running trials.
    Bounds {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run { config, seed, trials, out, no_svg } => {
            let mut cfg = ExperimentConfig::from_json(&fs::read_to_string(&config)?)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if no_svg {
                cfg.emit_svg = false;
            }
            let rows = run_experiment(&cfg)?;
            println!(
                "wrote {} rows to {}",
                rows.len(),
                cfg.output_dir.join(format!("{}.csv", cfg.experiment.as_str())).display()
            );
            Ok(())
        }
        Command::Pack { l, t, n_t, restarts, iterations, seed, out } => {
            let mut rng = stream_rng(seed, &[0xB00C, l as u64, t as u64, n_t as u64]);
            let book = pack_codebook(l, t, n_t, restarts, iterations, &mut rng)?;
            fs::write(&out, book.to_json())?;
            println!(
                "packed L={l} T={t} Nt={n_t}: d_min = {:.6}, literature packing figure = {:.6}",
                book.d_min(),
                min_distance_bound(l, t, n_t).sqrt()
            );
            Ok(())
        }
        Command::Bounds { config } => {
            let cfg = ExperimentConfig::from_json(&fs::read_to_string(&config)?)?;
            print_bounds(&cfg)
        }
    }
}

fn print_bounds(cfg: &ExperimentConfig) -> Result<(), Box<dyn std::error::Error>> {
    let p = &cfg.params;
    let sys = grassmod::channel::SystemParams::with_snr_db(p.n_t, p.n_r, p.t, p.snr_db, p.l, p.n)?;
    let lambda_bar =
        estimate_lambda_bar(&sys, 20_000, &mut stream_rng(cfg.seed, &[0xABBA]));
    let (d_min, d_min_src) = if cfg.analysis.use_packing_bound {
        (min_distance_bound(p.l, p.t, p.n_t).sqrt(), "literature packing figure")
    } else {
        let mut rng =
            stream_rng(cfg.seed, &[0xB00C, p.l as u64, p.t as u64, p.n_t as u64]);
        let book = pack_codebook(p.l, p.t, p.n_t, 8, 600, &mut rng)?;
        (book.d_min(), "packed codebook")
    };
    let gamma0 = cfg.dfs_gamma0();
    let ap = analysis_at(cfg, &sys, lambda_bar, gamma0)?;

    println!(
        "system      T={} Nt={} Nr={} snr={} dB (rho={}) L={} N={}",
        p.t,
        p.n_t,
        p.n_r,
        p.snr_db,
        sys.rho(),
        p.l,
        p.n
    );
    println!("lambda_bar  {lambda_bar:.6}  (20000-sample estimate)");
    println!("d_min       {d_min:.6}  ({d_min_src})");
    println!(
        "disk        a = {:.6}, radius a/sqrt(rho) = {:.6}",
        ap.disk_constant(),
        ap.disk_radius()
    );
    println!("gamma0      {gamma0}");

    let km = kmeans_separability_bound(d_min, &ap)?;
    println!(
        "kmeans separability   >= {:.6}  (asymptote {:.6}, clamped: {})",
        km.value, km.asymptote, km.clamped
    );
    match dfs_separability_bound(d_min, &ap) {
        Ok(b) => println!(
            "dfs separability      >= {:.6}  (asymptote {:.6}, clamped: {})",
            b.value, b.asymptote, b.clamped
        ),
        Err(e) => println!("dfs separability      n/a ({e})"),
    }
    match min_bin_probability(&ap) {
        Ok(pm) => println!(
            "min bin probability   {:.6e}  (asymptote {:.6e})",
            pm,
            min_bin_probability_asymptote(&ap)
        ),
        Err(e) => println!("min bin probability   n/a ({e})"),
    }
    let con = connectivity_bound(&ap)?;
    println!(
        "dfs connectivity      >= {:.6}  (exact {:.6}, clamped: {}, threshold in regime: {})",
        con.value, con.exact, con.clamped, con.assumption_ok
    );
    Ok(())
}
