use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cfjed::config::{PermMethod, SystemConfig};
use cfjed::harness::{preset, run_scenario, sweep_overhead, write_sweep_csv, JED, LMMSE, PRESETS, SIMO};
use cfjed::pilots::{build_etf, build_mub, check_ambiguity, coherence, welch_bound};
use cfjed::Result;

#[derive(Parser)]
#[command(name = "cfjed", about = "Joint channel estimation and data detection for cell-free MU-MIMO")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    perm: Option<PermMethod>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a preset (fig2..fig7) or a TOML config.
    Run {
        scenario: String,
        #[command(flatten)]
        o: Overrides,
    },
    /// Pilot-overhead sweep over T.
    Sweep {
        #[arg(default_value = "fig7")]
        scenario: String,
        #[arg(long, value_delimiter = ',', default_value = "16,32,64,128")]
        t: Vec<usize>,
        #[command(flatten)]
        o: Overrides,
    },
    /// Pilot frame construction.
    Frames {
        #[command(subcommand)]
        action: FramesCmd,
    },
    /// Short end-to-end smoke run.
    Selftest,
}

#[derive(Subcommand)]
enum FramesCmd {
    /// Build a frame and write it as CSV.
    Build {
        #[arg(long)]
        t: usize,
        #[arg(long)]
        u: usize,
        /// Build an N-block MUB instead of an ETF.
        #[arg(long)]
        mub: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "frame.csv")]
        out: PathBuf,
    },
}

fn load(scenario: &str, o: &Overrides) -> Result<(String, SystemConfig)> {
    let (name, mut cfg) = match preset(scenario) {
        Some(cfg) => (scenario.to_string(), cfg),
        None => {
            let path = Path::new(scenario);
            let cfg = SystemConfig::load(path)?;
            (path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(), cfg)
        }
    };
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(t) = o.trials {
        cfg.trials = t;
    }
    if let Some(p) = o.perm {
        cfg.perm = p;
    }
    cfg.validate()?;
    Ok((name, cfg))
}

fn summarize(report: &cfjed::eval::MetricsReport) {
    println!("{}: {} trials, {} failed", report.scenario, report.trials, report.failed_trials);
    for det in [JED, LMMSE, SIMO] {
        let med = |m| cfjed::eval::median(report.get(det, m));
        println!(
            "  {det:>6}: median rmsse {:.4}  ber {:.3e}  mi {:.3}  mse {:.4}",
            med("rmsse"),
            med("ber"),
            med("mi"),
            med("mse")
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { scenario, o } => {
            let (name, cfg) = load(&scenario, &o)?;
            let report = run_scenario(&cfg, &name, &o.out_dir, o.workers)?;
            summarize(&report);
        }
        Command::Sweep { scenario, t, o } => {
            let (_, cfg) = load(&scenario, &o)?;
            let rows = sweep_overhead(&cfg, &t, o.workers)?;
            std::fs::create_dir_all(&o.out_dir)?;
            write_sweep_csv(&rows, BufWriter::new(File::create(o.out_dir.join("sweep.csv"))?))?;
            write_sweep_csv(&rows, std::io::stdout())?;
        }
        Command::Frames { action: FramesCmd::Build { t, u, mub, seed, out } } => {
            let frame = match mub {
                Some(n) => build_mub(t, n)?,
                None => build_etf(t, u, &mut ChaCha8Rng::seed_from_u64(seed))?,
            };
            frame.write_csv(BufWriter::new(File::create(&out)?))?;
            let mu = coherence(&frame.f.view());
            println!(
                "{}x{} frame: coherence {mu:.6}, welch bound {:.6}, unambiguous {}",
                frame.t(),
                frame.u(),
                welch_bound(frame.t(), frame.u())?,
                check_ambiguity(&frame.f.view())?
            );
        }
        Command::Selftest => {
            let cfg = SystemConfig {
                b: 16,
                u: 16,
                k: 40,
                t: 8,
                n_cells: 2,
                trials: 2,
                ..preset("fig4").expect("fig4 preset")
            };
            let dir = std::env::temp_dir().join("cfjed-selftest");
            let report = run_scenario(&cfg, "selftest", &dir, None)?;
            summarize(&report);
            println!("presets: {}", PRESETS.join(", "));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
