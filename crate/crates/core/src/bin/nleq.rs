use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nleq::channel::{read_frames_csv, simulate, write_frames_csv, SymbolFrame};
use nleq::config::ConfigFile;
use nleq::constellation::Constellation;
use nleq::framing::split_protocol;
use nleq::trainer::{self, equalize, sweep_csv, write_run_directory, write_scatter, RunResult};
use nleq::{file_header, Error, Mlp, Result};

#[derive(Parser)]
#[command(name = "nleq", version, about = "Train and evaluate nonlinear channel equalizers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output path (file for `generate`, directory otherwise).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the master seed from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate channel frames and write them as CSV.
    Generate(Common),
    /// Train one variant and write its results directory.
    Train(Common),
    /// Train every (nonlinearity, variant) cell of the sweep section.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Maximum number of cells trained concurrently.
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Export (tx_point, y) pairs of an equalizer checkpoint.
    Scatter {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Frame CSV; the second frame is the evaluation frame.
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        bits_per_symbol: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load(common: &Common) -> Result<ConfigFile> {
    let mut cfg = ConfigFile::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn frames_for(cfg: &ConfigFile, c: &Constellation) -> Result<Vec<SymbolFrame>> {
    match &cfg.data.path {
        Some(path) => read_frames_csv(path, c),
        None => Ok(simulate(c, &cfg.channel, cfg.data.n_frames, cfg.data.frame_len)?.frames),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(common) => {
            let cfg = load(&common)?;
            let quiet = cli.quiet || cfg.quiet;
            let c = Constellation::make_ask(cfg.constellation.bits_per_symbol)?;
            let sim = simulate(&c, &cfg.channel, cfg.data.n_frames, cfg.data.frame_len)?;
            let out = common
                .out
                .clone()
                .unwrap_or_else(|| cfg.out_dir.join("frames.csv"));
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            write_frames_csv(&out, &sim.frames, cfg.channel.seed)?;
            if !quiet {
                println!(
                    "wrote {} frames of {} symbols to {} (empirical SNR {:.3} dB)",
                    sim.frames.len(),
                    cfg.data.frame_len,
                    out.display(),
                    sim.empirical_snr_db()
                );
            }
            Ok(())
        }
        Command::Train(common) => {
            let cfg = load(&common)?;
            let quiet = cli.quiet || cfg.quiet;
            let exp = cfg.experiment();
            let c = exp.constellation()?;
            let frames = frames_for(&cfg, &c)?;
            let run = trainer::train(&exp, &frames)?;
            let dir = cfg.out_dir.join(exp.variant.name());
            let (_, eval) = split_protocol(&frames)?;
            write_run_directory(&dir, &run, eval, &file_header(exp.seed))?;
            if !quiet {
                print_summary(&run, &dir);
            }
            Ok(())
        }
        Command::Sweep { common, threads } => {
            let cfg = load(&common)?;
            let quiet = cli.quiet || cfg.quiet;
            let section = cfg
                .sweep
                .clone()
                .ok_or_else(|| Error::InvalidParameter(format!("{}: missing [sweep] section", common.config.display())))?;
            let base = cfg.experiment();
            let c = base.constellation()?;
            let cells = trainer::sweep(&base, &section.nl_a3_values, &section.variants, threads)?;
            std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
            let header = file_header(base.seed);
            for cell in &cells {
                let dir = cfg
                    .out_dir
                    .join(format!("a3_{:02}_{}", cell.point_index, cell.variant));
                match &cell.outcome {
                    Ok(run) => {
                        // Regenerate the cell's frames to export its scatter.
                        let frames = nleq::channel::generate_frames(&c, &run.config.channel, base.n_frames, base.frame_len)?;
                        let (_, eval) = split_protocol(&frames)?;
                        write_run_directory(&dir, run, eval, &header)?;
                        if !quiet {
                            print_summary(run, &dir);
                        }
                    }
                    Err(e) => {
                        if !quiet {
                            eprintln!("cell a3={} {} failed: {e}", cell.nl_a3, cell.variant);
                        }
                    }
                }
            }
            let path = cfg.out_dir.join("sweep.csv");
            std::fs::write(&path, sweep_csv(&cells, &header)).map_err(|e| Error::io(&path, e))?;
            let ok = cells.iter().filter(|c| c.outcome.is_ok()).count();
            if !quiet {
                println!("{ok}/{} cells succeeded; summary in {}", cells.len(), path.display());
            }
            if ok == 0 {
                return Err(Error::InvalidState("every sweep cell failed".into()));
            }
            Ok(())
        }
        Command::Scatter {
            checkpoint,
            data,
            out,
            bits_per_symbol,
        } => scatter(&checkpoint, &data, &out, bits_per_symbol, cli.quiet),
    }
}

fn scatter(checkpoint: &Path, data: &Path, out: &Path, bits_per_symbol: usize, quiet: bool) -> Result<()> {
    let model = Mlp::load(checkpoint)?;
    let c = Constellation::make_ask(bits_per_symbol)?;
    let frames = read_frames_csv(data, &c)?;
    let (_, eval) = split_protocol(&frames)?;
    let eq = equalize(&model, &eval[0], model.input_len()).map_err(|e| match e {
        Error::InvalidParameter(msg) => Error::InvalidParameter(format!("{}: {msg}", checkpoint.display())),
        other => other,
    })?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let header = format!("# nleq {} checkpoint={}", nleq::VERSION, checkpoint.display());
    write_scatter(&out.join("scatter.csv"), &eq.targets, &eq.output, &header)?;
    write_scatter(&out.join("scatter_raw.csv"), &eq.targets, &eq.raw, &header)?;
    if !quiet {
        println!("wrote {} points to {}", eq.output.len(), out.display());
    }
    Ok(())
}

fn print_summary(run: &RunResult, dir: &Path) {
    let s = run.summary();
    let air = s.air_symbolwise.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
    println!(
        "{} a3={} BER={:.5} AIR={air} GMI={:.4} best_epoch={} ({:.1}s) -> {}",
        run.config.variant,
        run.config.channel.nl_a3,
        s.ber,
        s.gmi_bitwise,
        run.best_epoch,
        run.wall_clock_seconds,
        dir.display()
    );
}
