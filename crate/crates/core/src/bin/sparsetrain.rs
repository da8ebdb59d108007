use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sparsetrain::harness::checkpoint::Checkpoint;
use sparsetrain::harness::earlystop::run_earlystop_sweep;
use sparsetrain::harness::metrics::write_atomic;
use sparsetrain::harness::overhead::{measure_overhead, write_overhead};
use sparsetrain::harness::report::report;
use sparsetrain::harness::ticket::{run_ticket_from_dir, InitSource, TicketSpec};
use sparsetrain::harness::{compress_iterative, load_data, presets, Datasets, Method, RunConfig, Trainer};
use sparsetrain::verify;
use sparsetrain::Result;

#[derive(Parser)]
#[command(name = "sparsetrain", version, about = "Sparse training runs, ablations and self-checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML run config; defaults to the MNIST preset of --method.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sparsity: Option<f64>,
    /// Shorten the run, rescaling every schedule.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TicketInit {
    Original,
    Fresh,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run.
    Train(RunArgs),
    /// Retrain the final mask of a finished run with frozen structure.
    Ticket {
        /// Directory of the source run (holds final.ckpt and init.bin).
        #[arg(long)]
        source: PathBuf,
        #[arg(long, value_enum, default_value = "original")]
        init: TicketInit,
        #[arg(long, default_value_t = 2)]
        epoch_multiplier: usize,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Dynamic runs with reallocation switched off after each stop epoch.
    Earlystop {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        stops: Vec<usize>,
    },
    /// Per-epoch wall time relative to a fixed-mask sparse run.
    Overhead {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "dynamic_sparse,set,deepr")]
        methods: Vec<Method>,
        #[arg(long, default_value_t = 10)]
        timing_epochs: usize,
    },
    /// Dense pretraining followed by gradual magnitude pruning.
    Compress(RunArgs),
    /// Summaries across finished run directories.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out_dir: PathBuf,
    },
    /// Oracle, conservation, setpoint, gradient and zero-growth checks.
    Verify {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn build_config(a: &RunArgs, default_method: Method) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => presets::mnist(a.method.unwrap_or(default_method)),
    };
    if let Some(m) = a.method {
        if m != cfg.method {
            cfg = cfg.with_method(m, Some(&presets::mnist(m)));
        }
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.sparsity {
        cfg.sparsity = s;
    }
    if let Some(e) = a.epochs {
        cfg = cfg.rescaled(e);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn data_for(cfg: &RunConfig, dir: Option<&Path>) -> Result<Datasets> {
    load_data(&cfg.data, cfg.seed, dir)
}

fn out_or_default(out: &Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    out.clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{}_s{}_seed{}", cfg.method, cfg.sparsity, cfg.seed)))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(a) => {
            let cfg = build_config(&a, Method::DynamicSparse)?;
            let data = data_for(&cfg, a.data_dir.as_deref())?;
            let dir = out_or_default(&a.out_dir, &cfg);
            let mut t = Trainer::new(cfg)?;
            t.set_out_dir(&dir)?;
            t.run(&data)?;
            println!("{}: final test accuracy {:.4} ({})", t.cfg.method, t.log.final_accuracy(), dir.display());
        }
        Command::Ticket {
            source,
            init,
            epoch_multiplier,
            data_dir,
            out_dir,
        } => {
            let ck = Checkpoint::load(&source.join("final.ckpt"))?;
            let spec = TicketSpec {
                init: match init {
                    TicketInit::Original => InitSource::OriginalSnapshot,
                    TicketInit::Fresh => InitSource::FreshRandom,
                },
                epoch_multiplier,
            };
            let data = data_for(&ck.meta.config, data_dir.as_deref())?;
            let dir = out_dir.unwrap_or_else(|| source.join(format!("ticket_{:?}", spec.init).to_lowercase()));
            let t = run_ticket_from_dir(&source, &spec, &data, Some(&dir))?;
            println!("ticket ({:?}): final test accuracy {:.4}", spec.init, t.log.final_accuracy());
        }
        Command::Earlystop { run, stops } => {
            let cfg = build_config(&run, Method::DynamicSparse)?;
            let data = data_for(&cfg, run.data_dir.as_deref())?;
            let dir = run.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs/earlystop"));
            for r in run_earlystop_sweep(&cfg, &stops, &data, Some(&dir))? {
                println!("stop {:>4}: acc {:.4} ({} steps)", r.stop_epoch, r.final_test_acc, r.realloc_steps);
            }
        }
        Command::Overhead {
            run,
            methods,
            timing_epochs,
        } => {
            let base = build_config(&run, Method::StaticSparse)?.with_method(Method::StaticSparse, None);
            let data = data_for(&base, run.data_dir.as_deref())?;
            let others: Vec<RunConfig> = methods
                .iter()
                .map(|&m| base.with_method(m, Some(&presets::mnist(m).rescaled(base.epochs))))
                .collect();
            let rows = measure_overhead(&base, &others, timing_epochs, &data)?;
            for r in &rows {
                println!("{:<16} {:.3}s  ratio {:.3} ± {:.3}", r.method.name(), r.median_epoch_seconds, r.ratio, r.ratio_std);
            }
            if let Some(d) = &run.out_dir {
                std::fs::create_dir_all(d)?;
                write_overhead(&rows, &d.join("overhead.csv"))?;
            }
        }
        Command::Compress(a) => {
            let cfg = build_config(&a, Method::CompressedSparse)?;
            let data = data_for(&cfg, a.data_dir.as_deref())?;
            let dir = out_or_default(&a.out_dir, &cfg);
            let mut t = Trainer::new(cfg)?;
            t.set_out_dir(&dir)?;
            while t.epoch < t.cfg.epochs {
                t.run_epoch(&data)?;
            }
            let events = compress_iterative(&mut t, &data)?;
            let mut w = csv::Writer::from_writer(Vec::new());
            for e in &events {
                w.serialize(e)?;
                println!(
                    "event {:>2} (epoch {}): scheduled {:.4}, actual {:.4}",
                    e.event,
                    e.epoch,
                    e.scheduled_sparsity,
                    1.0 - e.active as f64 / e.dense as f64
                );
            }
            write_atomic(&dir.join("compression.csv"), &w.into_inner().map_err(|e| e.into_error())?)?;
            println!("final test accuracy {:.4}", t.log.final_accuracy());
        }
        Command::Report { runs, out_dir } => {
            let out = report(&runs, &out_dir)?;
            for f in out.files {
                println!("{}", f.display());
            }
        }
        Command::Verify { seed } => {
            let results = verify::run_all(seed)?;
            for r in &results {
                println!("{r}");
            }
            return Ok(results.iter().all(|r| r.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    // the self-checks provoke dead-tensor warnings on purpose
    let level = if matches!(cli.command, Command::Verify { .. }) { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
