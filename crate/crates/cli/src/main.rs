mod config;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use crisp_nam::checkpoint::{fingerprint, Checkpoint};
use crisp_nam::data::{load_csv, load_features_csv};
use crisp_nam::interpret::{importance, shape_function, DEFAULT_GRID_SIZE, DEFAULT_TOP_N};
use crisp_nam::synth::{generate, SynthConfig};
use crisp_nam::train::{cross_validate_fixed, nested_cv, Candidate};
use crisp_nam::{export, Error, FittedModel, Result};
use log::info;

use crate::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "crisp-nam",
    version,
    about = "Interpretable additive models for competing-risks survival data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the two-risk synthetic benchmark as CSV.
    Synth {
        #[arg(long, default_value_t = 30_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10.0)]
        gamma_t: f64,
        #[arg(long, default_value_t = 0.5)]
        censor_fraction: f64,
        #[arg(long, default_value_t = 4)]
        dim_per_group: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model and write a checkpoint plus the training log.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `data.train`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint path; defaults to `<output_dir>/model.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a labelled CSV with a checkpoint and write the metric report.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Nested cross-validation; writes per-fold metrics, a summary and the search trials.
    Cv {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Shape functions, rug values and feature importances.
    Explain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_GRID_SIZE)]
        grid_size: usize,
        /// Shapes for the N most important features per risk; 0 for all.
        #[arg(long, default_value_t = DEFAULT_TOP_N)]
        top_n: usize,
    },
    /// Cumulative incidence curves for new subjects up to a horizon.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        horizon: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 1 } else { 2 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            n,
            seed,
            gamma_t,
            censor_fraction,
            dim_per_group,
            out,
        } => {
            let cfg = SynthConfig {
                n,
                gamma_t,
                censor_fraction,
                seed,
                dim_per_group,
            };
            let ds = generate(&cfg)?;
            export::write_dataset(create(&out)?, &fingerprint(&cfg)?, &ds)?;
            info!("wrote {} rows to {}", ds.len(), out.display());
        }
        Command::Train { config, data, out } => {
            let mut cfg = RunConfig::load(&config)?;
            if data.is_some() {
                cfg.data.train = data;
            }
            let raw = load_csv(
                cfg.train_path()?,
                &cfg.data.time_col,
                &cfg.data.event_col,
                &cfg.data.schema,
            )?;
            let (model, fit) = FittedModel::train(&raw, &cfg.model, &cfg.train_config())?;
            info!(
                "best epoch {} of {}, validation loss {:.6}",
                fit.best_epoch,
                fit.log.len(),
                fit.best_val_loss
            );
            let ckpt = Checkpoint::new(model, &cfg)?;
            fs::create_dir_all(&cfg.output_dir)?;
            let path = out.unwrap_or_else(|| cfg.output_dir.join("model.json"));
            ckpt.save(&path)?;
            export::write_training_log(
                create(&cfg.output_dir.join("training_log.jsonl"))?,
                &ckpt.fingerprint,
                &fit.log,
            )?;
            info!("checkpoint written to {}", path.display());
            if let Some(test) = &cfg.data.test {
                let m = &ckpt.model;
                let held_out = load_csv(test, &cfg.data.time_col, &cfg.data.event_col, &m.preprocessor.schema())?
                    .with_num_risks(m.num_risks())?;
                let report = m.evaluate(&held_out, &cfg.metrics)?;
                let out = cfg.output_dir.join("test_metrics.csv");
                export::write_metrics(create(&out)?, &ckpt.fingerprint, [(None, &report)])?;
                info!("test-set metrics written to {}", out.display());
            }
        }
        Command::Evaluate { model, data, out } => {
            let ckpt = Checkpoint::load(&model)?;
            let cfg = stored_config(&ckpt);
            let m = &ckpt.model;
            let raw = load_csv(&data, &cfg.data.time_col, &cfg.data.event_col, &m.preprocessor.schema())?
                .with_num_risks(m.num_risks())?;
            let report = m.evaluate(&raw, &cfg.metrics)?;
            export::write_metrics(create(&out)?, &ckpt.fingerprint, [(None, &report)])?;
            info!("metric report written to {}", out.display());
        }
        Command::Cv { config, data } => {
            let mut cfg = RunConfig::load(&config)?;
            if data.is_some() {
                cfg.data.train = data;
            }
            let raw = load_csv(
                cfg.train_path()?,
                &cfg.data.time_col,
                &cfg.data.event_col,
                &cfg.data.schema,
            )?;
            let base = cfg.train_config();
            let report = if cfg.cv.search {
                nested_cv(
                    &raw,
                    &cfg.search,
                    &base,
                    cfg.cv.outer_folds,
                    cfg.cv.inner_folds,
                    cfg.seed,
                    &cfg.metrics,
                )?
            } else {
                let candidate = Candidate {
                    arch: cfg.model.clone(),
                    learning_rate: base.learning_rate,
                    weight_decay: base.weight_decay,
                };
                cross_validate_fixed(&raw, &candidate, &base, cfg.cv.outer_folds, cfg.seed, &cfg.metrics)?
            };
            let fp = fingerprint(&cfg)?;
            fs::create_dir_all(&cfg.output_dir)?;
            export::write_metrics(
                create(&cfg.output_dir.join("cv_metrics.csv"))?,
                &fp,
                report.folds.iter().map(|f| (Some(f.fold), &f.report)),
            )?;
            export::write_summary(create(&cfg.output_dir.join("cv_summary.csv"))?, &fp, &report.summary())?;
            if cfg.cv.search {
                export::write_trials(
                    create(&cfg.output_dir.join("cv_trials.csv"))?,
                    &fp,
                    report
                        .folds
                        .iter()
                        .filter_map(|f| f.search.as_ref().map(|s| (f.fold, s)))
                        .flat_map(|(fold, s)| s.trials.iter().map(move |t| (fold, t))),
                )?;
            }
            info!("cross-validation results written to {}", cfg.output_dir.display());
        }
        Command::Explain {
            model,
            data,
            out_dir,
            grid_size,
            top_n,
        } => {
            let ckpt = Checkpoint::load(&model)?;
            let m = &ckpt.model;
            let raw = load_features_csv(&data, &m.preprocessor.schema())?;
            let x = m.transform(&raw)?;
            let columns = m.preprocessor.output_columns();
            let table = importance(&m.params, x.view(), &m.preprocessor.feature_names())?;
            let mut curves = Vec::new();
            for k in 0..m.num_risks() {
                let chosen = if top_n == 0 {
                    &table.rankings[k][..]
                } else {
                    table.top(k, top_n)
                };
                for &i in chosen {
                    curves.push(shape_function(&m.params, &columns, x.view(), i, k, grid_size)?);
                }
            }
            fs::create_dir_all(&out_dir)?;
            let fp = &ckpt.fingerprint;
            export::write_importance(create(&out_dir.join("importance.csv"))?, fp, &table)?;
            export::write_shapes(create(&out_dir.join("shapes.csv"))?, fp, &curves)?;
            export::write_rug(create(&out_dir.join("rug.csv"))?, fp, &curves)?;
            info!("explanations written to {}", out_dir.display());
        }
        Command::Predict {
            model,
            data,
            horizon,
            out,
        } => {
            let ckpt = Checkpoint::load(&model)?;
            let raw = load_features_csv(&data, &ckpt.model.preprocessor.schema())?;
            let curves = ckpt.model.predict_cif(&raw, horizon)?;
            export::write_cif(create(&out)?, &ckpt.fingerprint, &curves, horizon)?;
            info!("CIF curves for {} subjects written to {}", curves.len(), out.display());
        }
    }
    Ok(())
}

/// The run config recorded in a checkpoint, or defaults if it is not one of ours.
fn stored_config(ckpt: &Checkpoint) -> RunConfig {
    serde_json::from_value(ckpt.config.clone()).unwrap_or_default()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}
