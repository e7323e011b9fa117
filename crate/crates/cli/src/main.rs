use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use timeception::config::CliConfig;
use timeception::data::{
    alter_dataset, read_features, write_features, AlterationSpec, Granularity,
};
use timeception::gradcheck::gradient_suite;
use timeception::layer::{dump_kernels, write_kernel_csv, MultiScaleMode};
use timeception::model::{build_model, load_checkpoint, Model};
use timeception::train::{
    evaluate, run_stacking_experiment, run_suite, stacking_csv, train,
    TrainOptions,
};
use timeception::{Element, Error, Precision, Rng};

#[derive(Parser)]
#[command(name = "timeception", version, about = "Timeception layers, models and desk experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentName {
    Extent,
    Scale,
    Stacking,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (TCFT).
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "train")]
        split: Split,
    },
    /// Train a model and write a checkpoint and run report.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_model: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Evaluated after training and included in the report.
        #[arg(long)]
        eval_data: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Print the parameter table (CSV) of a configuration.
    ParamCount {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Alter the temporal extents of every sample in a dataset.
    Alter {
        #[arg(long)]
        data: PathBuf,
        /// a (2 segments), b (4), c (8) or d (16).
        #[arg(long)]
        granularity: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Reads the `alteration` section for explicit actions or amount.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Keep every segment (identity alteration).
        #[arg(long)]
        keep_all: bool,
    },
    /// Finite-difference check of every op and a tiny model.
    Gradcheck {
        /// Probe every coordinate and every conv configuration.
        #[arg(long)]
        full: bool,
    },
    /// Run a controlled experiment and write its tables to a directory.
    Experiment {
        #[arg(long, value_enum)]
        name: ExperimentName,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write every learned temporal kernel of a checkpoint as CSV.
    DumpKernels {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// A failure and the process exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Format { .. } | Error::Io { .. } | Error::Csv(_) | Error::UndefinedMetric(_) => 2,
            Error::Numerical(_) => 3,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn load_config(path: Option<&Path>) -> Result<CliConfig, Error> {
    match path {
        Some(p) => CliConfig::load(p),
        None => CliConfig::from_json("{}"),
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn generate(cfg: &CliConfig, split: Split) -> Result<timeception::data::FeatureDataset, Error> {
    match split {
        Split::Train => cfg.train_split(),
        Split::Test => cfg.test_split(),
    }
}

fn gen_data(config: Option<&Path>, out: &Path, split: Split) -> CmdResult {
    let cfg = load_config(config)?;
    let ds = generate(&cfg, split)?;
    write_features(out, &ds)?;
    let sidecar = out.with_extension("config.json");
    write_json(
        &sidecar,
        &json!({ "config": cfg, "seed": ds.seed, "content_sha256": ds.content_hash() }),
    )?;
    log::info!("wrote {} samples to {}", ds.len(), out.display());
    Ok(())
}

fn train_typed<T: Element>(
    cfg: &CliConfig,
    data: &Path,
    out_model: &Path,
    report: &Path,
    eval_data: Option<&Path>,
) -> CmdResult {
    let model_cfg = cfg.model_config()?;
    let train_set = read_features(data)?;
    let eval_set = eval_data.map(read_features).transpose()?;
    let mut model: Model<T> = build_model(&model_cfg, &mut Rng::new(cfg.hparams.seed))?;
    let opts = TrainOptions {
        eval_set: eval_set.as_ref(),
        checkpoint: Some(out_model.to_path_buf()),
    };
    let run = train(&mut model, &train_set, &cfg.hparams, &opts)?;
    write_json(
        report,
        &json!({ "config": cfg, "data_sha256": train_set.content_hash(), "report": run }),
    )?;
    Ok(())
}

fn eval_typed<T: Element>(model: &Path, data: &Path, report: &Path) -> CmdResult {
    let model: Model<T> = load_checkpoint(model)?;
    let ds = read_features(data)?;
    let eval = evaluate(&model, &ds)?;
    write_json(
        report,
        &json!({ "model": model.config, "data_sha256": ds.content_hash(), "eval": eval }),
    )?;
    println!("mAP {:.4}", eval.map);
    Ok(())
}

fn checkpoint_precision(path: &Path) -> Result<Precision, Error> {
    // the checkpoint header records the training precision
    let model: Model<f64> = load_checkpoint(path)?;
    Ok(model.config.precision)
}

fn alter(
    data: &Path,
    granularity: &str,
    seed: u64,
    out: &Path,
    config: Option<&Path>,
    keep_all: bool,
) -> CmdResult {
    let g = Granularity::from_letter(granularity).ok_or_else(|| {
        Error::Config(format!("granularity must be a, b, c or d, got {granularity:?}"))
    })?;
    let spec = if keep_all {
        AlterationSpec::keep_all(g)
    } else {
        match load_config(config)?.alteration {
            Some(spec) if spec.granularity != g => {
                return Err(Error::Config(format!(
                    "config alteration is {}, flag asks for {}",
                    spec.granularity.name(),
                    g.name()
                ))
                .into())
            }
            Some(spec) => spec,
            None => AlterationSpec::seeded(g),
        }
    };
    let ds = read_features(data)?;
    let altered = alter_dataset(&ds, &spec, seed)?;
    write_features(out, &altered)?;
    Ok(())
}

fn gradcheck(full: bool) -> CmdResult {
    let cases = gradient_suite(full)?;
    let mut failed = 0;
    for case in &cases {
        let status = if case.passed() { "ok" } else { "FAIL" };
        if !case.passed() {
            failed += 1;
        }
        println!(
            "{status:4} {:48} rel {:.3e} ({} coords)",
            case.name, case.report.max_rel_error, case.report.coords_checked
        );
    }
    if failed > 0 {
        return Err(Failure {
            code: 3,
            message: format!("{failed} of {} gradient checks failed", cases.len()),
        });
    }
    println!("{} gradient checks passed", cases.len());
    Ok(())
}

fn experiment(name: ExperimentName, config: Option<&Path>, out: &Path) -> CmdResult {
    let cfg = load_config(config)?;
    fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    write_text(&out.join("config.json"), &(cfg.to_json() + "\n"))?;
    let model_cfg = cfg.model_config()?;
    if let ExperimentName::Stacking = name {
        let rows = run_stacking_experiment(&model_cfg.timeception)?;
        write_text(&out.join("stacking.csv"), &stacking_csv(&rows))?;
        write_json(&out.join("stacking.json"), &json!({ "config": cfg, "rows": rows }))?;
        print!("{}", stacking_csv(&rows));
        return Ok(());
    }
    let data = cfg.experiment_data()?;
    let modes: Vec<MultiScaleMode> = match name {
        ExperimentName::Extent => vec![MultiScaleMode::MultiKernel, MultiScaleMode::Fixed],
        _ => cfg.experiment.modes.clone(),
    };
    let suite = run_suite(&model_cfg, &modes, &cfg.experiment.seeds, &data, &cfg.hparams)?;
    match name {
        ExperimentName::Extent => {
            let table = suite.extent_table(MultiScaleMode::MultiKernel, MultiScaleMode::Fixed)?;
            write_text(&out.join("extent.csv"), &table.to_csv())?;
            write_json(
                &out.join("extent.json"),
                &json!({ "config": cfg, "table": table, "cells": suite.cells }),
            )?;
            print!("{}", table.to_csv());
        }
        _ => {
            let table = suite.scale_table();
            write_text(&out.join("scale.csv"), &table.to_csv())?;
            write_json(
                &out.join("scale.json"),
                &json!({ "config": cfg, "table": table, "cells": suite.cells }),
            )?;
            print!("{}", table.to_csv());
        }
    }
    Ok(())
}

fn dump(model: &Path, out: &Path) -> CmdResult {
    let model: Model<f64> = load_checkpoint(model)?;
    let rows = dump_kernels(&model.stack, &model.store);
    let file = fs::File::create(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    write_kernel_csv(&rows, file)?;
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::GenData { config, out, split } => gen_data(config.as_deref(), &out, split),
        Command::Train {
            config,
            data,
            out_model,
            report,
            eval_data,
        } => {
            let cfg = load_config(config.as_deref())?;
            let eval_data = eval_data.as_deref();
            match cfg.hparams.precision {
                Precision::F32 => train_typed::<f32>(&cfg, &data, &out_model, &report, eval_data),
                Precision::F64 => train_typed::<f64>(&cfg, &data, &out_model, &report, eval_data),
            }
        }
        Command::Eval {
            model,
            data,
            report,
        } => match checkpoint_precision(&model)? {
            Precision::F32 => eval_typed::<f32>(&model, &data, &report),
            Precision::F64 => eval_typed::<f64>(&model, &data, &report),
        },
        Command::ParamCount { config } => {
            let cfg = load_config(config.as_deref())?;
            let report = cfg.model_config()?.param_report()?;
            print!("{}", report.to_csv());
            Ok(())
        }
        Command::Alter {
            data,
            granularity,
            seed,
            out,
            config,
            keep_all,
        } => alter(&data, &granularity, seed, &out, config.as_deref(), keep_all),
        Command::Gradcheck { full } => gradcheck(full),
        Command::Experiment { name, config, out } => experiment(name, config.as_deref(), &out),
        Command::DumpKernels { model, out } => dump(&model, &out),
    }
}

fn init_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("TC_THREADS") else {
        return Ok(());
    };
    let threads: usize = value.parse().map_err(|_| Failure {
        code: 1,
        message: format!("TC_THREADS must be a positive integer, got {value:?}"),
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure {
            code: 1,
            message: format!("thread pool: {e}"),
        })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match init_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
