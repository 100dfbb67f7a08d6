use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use roughflow::cli::{self, CliError, Stage, StageResult, SweepAxis, SweepSpec};
use roughflow::datastore;

#[derive(Parser)]
#[command(
    name = "roughflow",
    version,
    about = "Rough-channel LBM data and PINN surrogate pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (`section.key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory holding every stage's artifacts.
    #[arg(long, default_value = "run")]
    out_dir: PathBuf,
    /// Redo the stage even when its manifest matches the config.
    #[arg(long)]
    force: bool,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate wall profiles and the solid mask.
    Surface(Common),
    /// Run the lattice Boltzmann solver and store snapshots.
    Simulate(Common),
    /// Build the labeled dataset and collocation set.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Snapshot manifest to sample from instead of the run's own.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train the surrogate.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset manifest to train on instead of the run's own.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score the model against the held-out snapshot, or compare two
    /// snapshot files with --pred/--ref.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, requires = "reference")]
        pred: Option<PathBuf>,
        #[arg(long = "ref", requires = "pred")]
        reference: Option<PathBuf>,
        /// Also write the report CSV here.
        #[arg(long, alias = "report")]
        out: Option<PathBuf>,
    },
    /// Run the pipeline once per value of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Re, amplitude, collocation_count, activation, learning_rate or strategy.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Stop each leg after `simulate`.
        #[arg(long)]
        lbm_only: bool,
        /// Run legs concurrently.
        #[arg(long)]
        parallel: bool,
        /// Report path (default: <out-dir>/sweep.csv).
        #[arg(long, alias = "report")]
        out: Option<PathBuf>,
    },
}

fn config(c: &Common) -> Result<datastore::RunConfig, CliError> {
    let path = c
        .config
        .as_deref()
        .ok_or_else(|| CliError::Input("--config is required".into()))?;
    cli::load_config(path, c.seed)
}

fn threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("ROUGHFLOW_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Input(format!(
            "ROUGHFLOW_THREADS = `{v}` is not a positive integer"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Input(e.to_string()))
}

fn report(r: &StageResult) {
    for w in &r.warnings {
        eprintln!("warning: {}", w.replace('\n', " "));
    }
    println!(
        "{}: {} ({})",
        r.stage.name(),
        r.summary,
        r.manifest.display()
    );
}

fn stage(
    stage: Stage,
    c: &Common,
    f: impl FnOnce(&datastore::RunConfig, &Path, bool) -> Result<StageResult, CliError>,
) -> Result<(), CliError> {
    let cfg = config(c)?;
    let r = f(&cfg, &c.out_dir, c.force)?;
    debug_assert_eq!(r.stage, stage);
    report(&r);
    Ok(())
}

fn run(cmd: Command) -> Result<(), CliError> {
    threads()?;
    match cmd {
        Command::Surface(c) => stage(Stage::Surface, &c, cli::run_surface),
        Command::Simulate(c) => stage(Stage::Simulate, &c, cli::run_simulate),
        Command::Sample { common, data } => stage(Stage::Sample, &common, |cfg, run, force| {
            cli::run_sample(cfg, run, force, data.as_deref())
        }),
        Command::Train { common, data } => stage(Stage::Train, &common, |cfg, run, force| {
            cli::run_train(cfg, run, force, data.as_deref())
        }),
        Command::Evaluate {
            common,
            pred,
            reference,
            out,
        } => match (pred, reference) {
            (Some(p), Some(r)) => {
                let csv = cli::compare_snapshot_files(&p, &r)?;
                match out {
                    Some(o) => datastore::write_atomic(&o, csv.as_bytes())?,
                    None => print!("{csv}"),
                }
                Ok(())
            }
            _ => stage(Stage::Evaluate, &common, |cfg, run, force| {
                cli::run_evaluate(cfg, run, force, out.as_deref())
            }),
        },
        Command::Sweep {
            common,
            axis,
            values,
            lbm_only,
            parallel,
            out,
        } => {
            let cfg = config(&common)?;
            let axis = SweepAxis::parse(&axis)
                .ok_or_else(|| CliError::Input(format!("unknown sweep axis `{axis}`")))?;
            let spec = SweepSpec {
                axis,
                values,
                lbm_only,
                parallel,
            };
            let rep = cli::run_sweep(&cfg, &spec, &common.out_dir, common.force)?;
            let path = out.unwrap_or_else(|| common.out_dir.join("sweep.csv"));
            datastore::write_atomic(&path, rep.to_csv().as_bytes())?;
            if let Some(fit) = rep.fit_csv() {
                datastore::write_atomic(&path.with_extension("fit.csv"), fit.as_bytes())?;
            }
            for leg in &rep.legs {
                if let Err((s, e)) = &leg.outcome {
                    eprintln!(
                        "warning: leg {} failed in {}: {}",
                        leg.value,
                        s.name(),
                        e.replace('\n', " ")
                    );
                }
            }
            if let Some((m, b)) = rep.fit {
                println!("sweep: MAE_omega = {b:e} + {m:e} * h");
            }
            println!("sweep: {} legs ({})", rep.legs.len(), path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = match &cli.command {
        Command::Surface(_) => "surface",
        Command::Simulate(_) => "simulate",
        Command::Sample { .. } => "sample",
        Command::Train { .. } => "train",
        Command::Evaluate { .. } => "evaluate",
        Command::Sweep { .. } => "sweep",
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {name}: {}", e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
