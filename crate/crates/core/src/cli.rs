//! The `eqprop` command line: `train`, `eval`, `gradcheck` and `relax-diag`.
//!
//! Every command reads a [`RunConfig`], applies the command-line overrides, and
//! echoes the materialized config into the output directory before doing any work.

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{Precision, RunConfig, Splits};
use crate::data::LabeledDataset;
use crate::energy::Parameters;
use crate::gradients::{estimator_errors, fd_loss_gradient_oracle};
use crate::numerics::{Scalar, Tensor};
use crate::relaxation::{relax_free, RelaxationConfig, Scheduler};
use crate::topology::NetworkTopology;
use crate::training::{
    evaluate, export_weight_histograms, hash_config, one_hot, train_epoch, write_histograms_csv,
    AugmentConfig, Checkpoint, Model, Normalization, OptimizerState,
};
use crate::{Error, Result};

/// Exit status when a verification gate fails (as opposed to an error).
pub const EXIT_GATE_FAILED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "eqprop", version, about = "Equilibrium Propagation for convolutional Hopfield networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train, writing metrics, checkpoints and weight histograms.
    Train(CommonArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(CommonArgs),
    /// Compare both estimators with the finite-difference oracle over the configured betas.
    Gradcheck(CommonArgs),
    /// Free-phase residual and energy traces under both schedulers.
    RelaxDiag(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Checkpoint to resume from (train) or to load (eval, relax-diag).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
}

/// Parse `args` (including the program name), run, and return the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Train(a) => {
            let cfg = resolve(a)?;
            match cfg.precision {
                Precision::F32 => cmd_train::<f32>(&cfg, a.checkpoint.as_deref()),
                Precision::F64 => cmd_train::<f64>(&cfg, a.checkpoint.as_deref()),
            }
        }
        Command::Eval(a) => {
            let path = a
                .checkpoint
                .as_deref()
                .ok_or_else(|| Error::Config("eval needs --checkpoint".into()))?;
            let ck = Checkpoint::load(path)?;
            let mut cfg = resolve(a)?;
            if a.precision.is_none() {
                cfg.precision = if ck.precision == f32::NAME { Precision::F32 } else { Precision::F64 };
            }
            match cfg.precision {
                Precision::F32 => cmd_eval::<f32>(&cfg, &ck),
                Precision::F64 => cmd_eval::<f64>(&cfg, &ck),
            }
        }
        Command::Gradcheck(a) => {
            let cfg = resolve(a)?;
            if cfg.precision == Precision::F32 {
                eprintln!("note: gradcheck always runs in 64-bit");
            }
            cmd_gradcheck(&cfg)
        }
        Command::RelaxDiag(a) => {
            let cfg = resolve(a)?;
            let ck = a.checkpoint.as_deref().map(Checkpoint::load).transpose()?;
            match cfg.precision {
                Precision::F32 => cmd_relax_diag::<f32>(&cfg, ck.as_ref()),
                Precision::F64 => cmd_relax_diag::<f64>(&cfg, ck.as_ref()),
            }
        }
    }
}

fn resolve(a: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(d) = &a.out_dir {
        cfg.out_dir = d.clone();
    }
    if let Some(s) = a.seed {
        cfg.training.seed = s;
    }
    if let Some(p) = a.precision {
        cfg.precision = p;
    }
    for w in cfg.training.validate()? {
        eprintln!("warning: {w}");
    }
    Ok(cfg)
}

fn normalization(cfg: &RunConfig, train: &LabeledDataset) -> Option<Normalization> {
    let aug = &cfg.training.augment;
    aug.normalize.then(|| Normalization::fit(train, aug.input_scale))
}

fn topology_for(cfg: &RunConfig, splits: &Splits) -> Result<NetworkTopology> {
    cfg.topology.build(splits.train.image_shape(), splits.train.class_count)
}

#[derive(Serialize)]
struct MetricsRow<'a> {
    epoch: usize,
    split: &'a str,
    loss: f64,
    accuracy: f64,
    free_residual: f64,
    nudge_residual: Option<f64>,
    wall_time_s: f64,
}

fn csv_error(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv output: {e}"))
}

/// Appends to `path`, writing the header only when the file is new.
fn append_csv(path: &Path) -> Result<csv::Writer<fs::File>> {
    let exists = path.exists() && fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    Ok(csv::WriterBuilder::new().has_headers(!exists).from_writer(file))
}

fn create_csv(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(csv_error)
}

pub fn cmd_train<T: Scalar>(cfg: &RunConfig, resume: Option<&Path>) -> Result<i32> {
    let text = cfg.echo(&cfg.out_dir)?;
    let hash = hash_config(&text);
    let splits = cfg.data.load()?;
    let topology = topology_for(cfg, &splits)?;
    let tc = &cfg.training;

    let (mut model, mut opt, start, norm) = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            ck.check_topology(&topology)?;
            if ck.config_hash != hash {
                eprintln!("note: resuming a checkpoint written under a different config");
            }
            let (m, o) = ck.restore::<T>()?;
            (m, o, ck.epoch, ck.normalization.clone())
        }
        None => {
            let m = Model::<T>::init(topology, tc.init_gain, tc.seed);
            let o = OptimizerState::new(&m.params);
            let n = normalization(cfg, &splits.train);
            (m, o, 0, n)
        }
    };
    let mut metrics = append_csv(&cfg.out_dir.join("metrics.csv"))?;
    let ck_path = cfg.out_dir.join("checkpoint.json");
    for epoch in start..tc.epochs {
        let t0 = Instant::now();
        let m = match train_epoch(&mut model, &splits.train, tc, &mut opt, epoch, norm.as_ref()) {
            Ok(m) => m,
            Err(e) => {
                let diag = cfg.out_dir.join("diagnostic_checkpoint.json");
                Checkpoint::capture(&model, &opt, epoch, tc.seed, hash.clone(), norm.clone()).save(&diag)?;
                eprintln!("training aborted; state saved to {}", diag.display());
                return Err(e);
            }
        };
        let train_time = t0.elapsed().as_secs_f64();
        metrics
            .serialize(MetricsRow {
                epoch: epoch + 1,
                split: "train",
                loss: m.loss,
                accuracy: m.accuracy,
                free_residual: m.free_residual,
                nudge_residual: Some(m.nudge_residual),
                wall_time_s: train_time,
            })
            .map_err(csv_error)?;
        let mut line = format!("epoch {:>3}  train loss {:.4} acc {:.4}", epoch + 1, m.loss, m.accuracy);
        let eval_sets = splits.validation.iter().chain(std::iter::once(&splits.test));
        for data in eval_sets {
            let t1 = Instant::now();
            let e = evaluate(&model, data, &tc.relaxation, norm.as_ref(), cfg.eval.batch_size)?;
            metrics
                .serialize(MetricsRow {
                    epoch: epoch + 1,
                    split: data.split.label(),
                    loss: e.loss,
                    accuracy: e.accuracy,
                    free_residual: e.free_residual,
                    nudge_residual: None,
                    wall_time_s: t1.elapsed().as_secs_f64(),
                })
                .map_err(csv_error)?;
            line += &format!("  {} loss {:.4} acc {:.4}", data.split.label(), e.loss, e.accuracy);
        }
        metrics.flush().map_err(|e| Error::io("flushing metrics", e))?;
        println!("{line}");
        let done = epoch + 1;
        if done == tc.epochs || (cfg.output.checkpoint_every > 0 && done % cfg.output.checkpoint_every == 0) {
            Checkpoint::capture(&model, &opt, done, tc.seed, hash.clone(), norm.clone()).save(&ck_path)?;
        }
    }
    if start >= tc.epochs {
        Checkpoint::capture(&model, &opt, start, tc.seed, hash.clone(), norm.clone()).save(&ck_path)?;
    }
    let hists = export_weight_histograms(&model.params, cfg.output.histogram_bins)?;
    let hpath = cfg.out_dir.join("weight_histograms.csv");
    let file = fs::File::create(&hpath).map_err(|e| Error::io(format!("creating {}", hpath.display()), e))?;
    write_histograms_csv(&hists, file)?;
    Ok(0)
}

pub fn cmd_eval<T: Scalar>(cfg: &RunConfig, ck: &Checkpoint) -> Result<i32> {
    cfg.echo(&cfg.out_dir)?;
    let splits = cfg.data.load()?;
    let topology = topology_for(cfg, &splits)?;
    ck.check_topology(&topology)?;
    let (model, _) = ck.restore::<T>()?;
    let t0 = Instant::now();
    let e = evaluate(
        &model,
        &splits.test,
        &cfg.training.relaxation,
        ck.normalization.as_ref(),
        cfg.eval.batch_size,
    )?;
    let mut w = create_csv(&cfg.out_dir.join("eval.csv"))?;
    w.serialize(MetricsRow {
        epoch: ck.epoch,
        split: "test",
        loss: e.loss,
        accuracy: e.accuracy,
        free_residual: e.free_residual,
        nudge_residual: None,
        wall_time_s: t0.elapsed().as_secs_f64(),
    })
    .map_err(csv_error)?;
    w.flush().map_err(|e| Error::io("flushing eval.csv", e))?;
    println!("test loss {:.6} accuracy {:.6} (epoch {})", e.loss, e.accuracy, ck.epoch);
    Ok(0)
}

/// First `n` training samples with their one-hot targets, prepared as the network sees them.
fn sample_batch<T: Scalar>(
    topology: &NetworkTopology,
    data: &LabeledDataset,
    n: usize,
    norm: Option<&Normalization>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let n = n.clamp(1, data.len());
    let shape = data.image_shape();
    let per = shape.iter().product::<usize>();
    let aug = AugmentConfig {
        normalize: norm.is_some(),
        ..AugmentConfig::none()
    };
    let mut rng = crate::training::epoch_rng(0, 0);
    let mut vals = Vec::with_capacity(n * per);
    for i in 0..n {
        let img = crate::training::augment(&data.images.data()[i * per..(i + 1) * per], shape, &mut rng, &aug, norm);
        vals.extend(img.into_iter().map(|v| T::lit(v as f64)));
    }
    let [c, h, w] = topology.input_shape();
    let input = Tensor::new(vec![n, c, h, w], vals)?;
    let target = one_hot(topology, &data.labels[..n])?;
    Ok((input, target))
}

#[derive(Serialize)]
struct GradcheckRow<'a> {
    param_id: &'a str,
    estimator: &'a str,
    beta: f64,
    max_rel_error: f64,
}

pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<i32> {
    cfg.echo(&cfg.out_dir)?;
    let gc = &cfg.gradcheck;
    if gc.betas.is_empty() || gc.betas.iter().any(|&b| !(b > 0.0)) {
        return Err(Error::Config("gradcheck.betas must be a non-empty list of positive values".into()));
    }
    let splits = cfg.data.load()?;
    let topology = topology_for(cfg, &splits)?;
    let count = topology.param_count();
    if count > gc.max_params {
        return Err(Error::Config(format!(
            "gradcheck refuses a network with {count} parameters (cap {}); the finite-difference \
             oracle relaxes the net twice per parameter",
            gc.max_params
        )));
    }
    let model = Model::<f64>::init(topology, cfg.training.init_gain, cfg.training.seed);
    let norm = normalization(cfg, &splits.train);
    let (input, target) = sample_batch(&model.topology, &splits.train, gc.batch, norm.as_ref())?;
    let oracle = fd_loss_gradient_oracle(&model.topology, &model.params, &input, &target, &gc.oracle)?;
    let errors = estimator_errors(
        &model.topology,
        &model.params,
        &input,
        &target,
        &gc.betas,
        &oracle,
        &gc.oracle,
    )?;

    let mut w = create_csv(&cfg.out_dir.join("gradcheck.csv"))?;
    for be in &errors {
        for (label, map, max) in [
            ("cep", &be.cep, be.cep_max()),
            ("ep_onesided", &be.ep_onesided, be.ep_max()),
        ] {
            for (id, &err) in map {
                w.serialize(GradcheckRow {
                    param_id: id,
                    estimator: label,
                    beta: be.beta,
                    max_rel_error: err,
                })
                .map_err(csv_error)?;
            }
            w.serialize(GradcheckRow {
                param_id: "all",
                estimator: label,
                beta: be.beta,
                max_rel_error: max,
            })
            .map_err(csv_error)?;
        }
        println!(
            "beta {:<6} cep {:.3e}  ep_onesided {:.3e}",
            be.beta,
            be.cep_max(),
            be.ep_max()
        );
    }
    w.flush().map_err(|e| Error::io("flushing gradcheck.csv", e))?;
    if errors.len() < 2 {
        println!("single beta: ratio test skipped");
        return Ok(0);
    }
    let mut pass = true;
    for pair in errors.windows(2) {
        let cep = pair[0].cep_max() / pair[1].cep_max();
        let ep = pair[0].ep_max() / pair[1].ep_max();
        let ok = (gc.cep_ratio_band.0..=gc.cep_ratio_band.1).contains(&cep);
        pass &= ok;
        println!(
            "beta {} -> {}: cep ratio {cep:.3} [{}]  ep_onesided ratio {ep:.3} (reported)",
            pair[0].beta,
            pair[1].beta,
            if ok { "ok" } else { "OUT OF BAND" }
        );
    }
    Ok(if pass { 0 } else { EXIT_GATE_FAILED })
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    scheduler: &'a str,
    steps: usize,
    tolerance: f64,
    steps_to_tolerance: Option<usize>,
    final_residual: f64,
}

pub fn cmd_relax_diag<T: Scalar>(cfg: &RunConfig, ck: Option<&Checkpoint>) -> Result<i32> {
    cfg.echo(&cfg.out_dir)?;
    let splits = cfg.data.load()?;
    let topology = topology_for(cfg, &splits)?;
    let (model, norm) = match ck {
        Some(ck) => {
            ck.check_topology(&topology)?;
            let (m, _) = ck.restore::<T>()?;
            (m, ck.normalization.clone())
        }
        None => (
            Model::<T>::init(topology, cfg.training.init_gain, cfg.training.seed),
            normalization(cfg, &splits.train),
        ),
    };
    diagnose(&model.topology, &model.params, &splits.train, cfg, norm.as_ref())
}

fn diagnose<T: Scalar>(
    topology: &NetworkTopology,
    params: &Parameters<T>,
    data: &LabeledDataset,
    cfg: &RunConfig,
    norm: Option<&Normalization>,
) -> Result<i32> {
    let (input, _) = sample_batch::<T>(topology, data, cfg.training.batch_size, norm)?;
    let tol = cfg.training.relaxation.residual_tolerance;
    let mut summary = create_csv(&cfg.out_dir.join("relax_diag_summary.csv"))?;
    for (name, scheduler) in [("sync", Scheduler::Synchronous), ("async", Scheduler::Asynchronous)] {
        let rc = RelaxationConfig {
            scheduler,
            ..cfg.training.relaxation
        };
        let res = relax_free(topology, params, &input, &rc, None)?;
        let path = cfg.out_dir.join(format!("relax_{name}.csv"));
        let file = fs::File::create(&path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        res.trace
            .write_csv(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        let reached = res.trace.steps_to_tolerance(tol);
        summary
            .serialize(SummaryRow {
                scheduler: name,
                steps: res.trace.steps(),
                tolerance: tol,
                steps_to_tolerance: reached,
                final_residual: res.trace.final_residual(),
            })
            .map_err(csv_error)?;
        match reached {
            Some(s) => println!("{name:>5}: residual < {tol:e} after {s} steps"),
            None => println!(
                "{name:>5}: residual {:.3e} after {} steps, tolerance {tol:e} not reached",
                res.trace.final_residual(),
                res.trace.steps()
            ),
        }
    }
    summary.flush().map_err(|e| Error::io("flushing summary", e))?;
    Ok(0)
}
