//! Command-line front end. Exit codes: 0 success, 1 runtime failure,
//! 2 usage or configuration error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use super::checkpoint;
use super::config::Config;
use super::data::{self, Dataset, Normalizer};
use super::demos::{self, LstmLm};
use super::{fit, fit_with, predictive_moments, ElboConfig, KlScale, StepStats};
use crate::error::{Error, Result};
use crate::layers::{Ctx, Estimator, Layer, Sequential};
use crate::tensor::Tensor;

#[derive(Parser, Debug)]
#[command(name = "bayes-layers", version, about = "Train and query toy Bayesian models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Config file of `key = value` lines
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training data; synthetic toy data when omitted
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint to write (training) or read (predict, sample)
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Variational MLP regression
    TrainBnn(Common),
    /// Three-layer sparse deep GP regression
    TrainDeepGp(Common),
    /// Coupling-flow density estimation
    TrainFlow(Common),
    /// Bayesian LSTM language model on token sequences
    TrainLstm(Common),
    /// Predictive mean and stddev on a 1-D grid, as CSV `x,mean,stddev`
    Predict(PredictArgs),
    /// Draw samples from a trained generative model
    Sample(SampleArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RegressionTask {
    Bnn,
    DeepGp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GenerativeTask {
    Flow,
    Lstm,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub task: RegressionTask,
    #[arg(long, default_value_t = -3.0, allow_negative_numbers = true)]
    pub x_min: f64,
    #[arg(long, default_value_t = 3.0, allow_negative_numbers = true)]
    pub x_max: f64,
    #[arg(long, default_value_t = 61)]
    pub points: usize,
    /// Monte-Carlo forward passes per grid point
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    /// Write CSV here instead of standard output
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub task: GenerativeTask,
    #[arg(long, default_value_t = 100)]
    pub num: usize,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

const TRAIN_KEYS: &[&str] = &[
    "seed",
    "steps",
    "learning_rate",
    "final_learning_rate",
    "batch_size",
    "mc_samples",
    "kl_scale",
    "prefetch",
    "log_every",
    "num_examples",
];
const REGRESSION_KEYS: &[&str] = &["feature_columns", "target_columns", "normalize", "noise_scale", "data_noise"];

fn task_keys(task: &str) -> Vec<&'static str> {
    let extra: &[&str] = match task {
        "bnn" => &["hidden", "estimator"],
        "deep-gp" => &["inducing"],
        "flow" => &["layers", "hidden", "feature_columns", "data_noise"],
        "lstm" => &["units", "vocab", "period", "seq_len", "token_noise", "sample_length"],
        _ => &[],
    };
    let mut keys = TRAIN_KEYS.to_vec();
    if matches!(task, "bnn" | "deep-gp") {
        keys.extend_from_slice(REGRESSION_KEYS);
    }
    keys.extend_from_slice(extra);
    keys
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    run_with(args, &mut stdout.lock())
}

pub fn run_with<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidArgument(_) => 2,
                _ => 1,
            }
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::TrainBnn(c) => train_regression(RegressionTask::Bnn, &c, out),
        Command::TrainDeepGp(c) => train_regression(RegressionTask::DeepGp, &c, out),
        Command::TrainFlow(c) => train_flow(&c, out),
        Command::TrainLstm(c) => train_lstm(&c, out),
        Command::Predict(a) => predict(&a, out),
        Command::Sample(a) => sample(&a, out),
    }
}

/// Config file merged with command-line overrides.
struct Settings {
    cfg: Config,
    seed: u64,
    steps: u64,
}

fn settings(common: &Common, task: &str) -> Result<Settings> {
    let cfg = match &common.config {
        Some(p) => Config::load(p).map_err(|e| Error::InvalidArgument(e.to_string()))?,
        None => Config::default(),
    };
    cfg.ensure_known(&task_keys(task))?;
    Ok(Settings {
        seed: common.seed.map_or_else(|| cfg.get_or("seed", 0), Ok)?,
        steps: common.steps.map_or_else(|| cfg.get_or("steps", 2000), Ok)?,
        cfg,
    })
}

fn list<T: std::str::FromStr>(cfg: &Config, key: &str, default: &str) -> Result<Vec<T>> {
    cfg.raw(key)
        .unwrap_or(default)
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::InvalidArgument(format!("config key `{key}`: bad list item `{s}`")))
        })
        .collect()
}

fn elbo_config(s: &Settings, n: usize, default_lr: f64) -> Result<ElboConfig> {
    let cfg = &s.cfg;
    let kl_scale = match cfg.raw("kl_scale") {
        None | Some("one_over_n") => KlScale::OneOverN,
        Some(v) => KlScale::Constant(v.parse().map_err(|_| {
            Error::InvalidArgument(format!("config key `kl_scale`: expected `one_over_n` or a number, got `{v}`"))
        })?),
    };
    let elbo = ElboConfig {
        num_train_examples: n,
        batch_size: cfg.get_or("batch_size", n)?.min(n),
        mc_samples: cfg.get_or("mc_samples", 1)?,
        kl_scale,
        learning_rate: cfg.get_or("learning_rate", default_lr)?,
        final_learning_rate: cfg.get("final_learning_rate")?,
        max_steps: s.steps,
        seed: s.seed,
        prefetch: cfg.get_or("prefetch", 0)?,
    };
    elbo.validate()?;
    Ok(elbo)
}

fn checkpoint_path(common: &Common, default: &str) -> PathBuf {
    common.checkpoint.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn step_logger<'a>(out: &'a mut dyn Write, every: u64) -> impl FnMut(&StepStats) + 'a {
    move |s: &StepStats| {
        if every > 0 && s.step % every == 0 {
            let _ = writeln!(out, "{s}");
        }
    }
}

fn regression_model(task: RegressionTask, cfg: &Config) -> Result<Sequential> {
    let noise = cfg.get_or("noise_scale", 0.1)?;
    match task {
        RegressionTask::Bnn => {
            let estimator = match cfg.raw("estimator").unwrap_or("reparameterization") {
                "reparameterization" => Estimator::Reparameterization,
                "flipout" => Estimator::Flipout,
                other => return Err(Error::InvalidArgument(format!("unknown estimator `{other}`"))),
            };
            demos::bnn_model(&list(cfg, "hidden", "32")?, noise, estimator)
        }
        RegressionTask::DeepGp => demos::deep_gp_model(cfg.get_or("inducing", 10)?, noise),
    }
}

fn regression_data(common: &Common, s: &Settings) -> Result<Dataset> {
    match &common.data {
        Some(p) => {
            let f: Vec<String> = list(&s.cfg, "feature_columns", "x")?;
            let t: Vec<String> = list(&s.cfg, "target_columns", "y")?;
            let f: Vec<&str> = f.iter().map(String::as_str).collect();
            let t: Vec<&str> = t.iter().map(String::as_str).collect();
            data::load_csv(p, &f, &t, s.cfg.get_or("normalize", false)?)
        }
        None => Ok(demos::toy_regression(
            s.cfg.get_or("num_examples", 256)?,
            s.cfg.get_or("data_noise", 0.1)?,
            s.seed,
        )),
    }
}

/// Runs one forward pass so lazily-built layers create their parameters.
fn build(model: &mut dyn Layer, x: &Tensor, seed: u64) -> Result<()> {
    let mut ctx = Ctx::new(seed);
    model.call(ctx.input(x), &mut ctx)?;
    Ok(())
}

fn normalizer_entries(prefix: &str, n: &Option<Normalizer>) -> Vec<(String, Tensor)> {
    n.iter()
        .flat_map(|n| {
            [
                (format!("data/{prefix}_mean"), Tensor::vector(&n.mean)),
                (format!("data/{prefix}_std"), Tensor::vector(&n.std)),
            ]
        })
        .collect()
}

fn normalizer_from(prefix: &str, entries: &[(String, Tensor)]) -> Option<Normalizer> {
    let get = |k: &str| {
        entries
            .iter()
            .find(|(n, _)| *n == format!("data/{prefix}_{k}"))
            .map(|(_, t)| t.to_vec())
    };
    Some(Normalizer {
        mean: get("mean")?,
        std: get("std")?,
    })
}

fn task_name(task: RegressionTask) -> &'static str {
    match task {
        RegressionTask::Bnn => "bnn",
        RegressionTask::DeepGp => "deep-gp",
    }
}

fn train_regression(task: RegressionTask, common: &Common, out: &mut dyn Write) -> Result<()> {
    let s = settings(common, task_name(task))?;
    let data = regression_data(common, &s)?;
    if data.x.shape()[1] != 1 && task == RegressionTask::DeepGp {
        log::info!("deep GP on {} input features", data.x.shape()[1]);
    }
    let elbo = elbo_config(&s, data.len(), 1e-2)?;
    let mut model = regression_model(task, &s.cfg)?;
    build(&mut model, &data.x, s.seed)?;
    let every = s.cfg.get_or("log_every", 1)?;
    fit(&mut model, &data, &elbo, None, step_logger(out, every))?;
    let mut entries = crate::layers::named_parameters(&mut model);
    entries.extend(normalizer_entries("feature", &data.feature_norm));
    entries.extend(normalizer_entries("target", &data.target_norm));
    checkpoint::save(&checkpoint_path(common, &format!("{}.ckpt", task_name(task))), &entries)
}

fn load_into(model: &mut dyn Layer, path: &Path) -> Result<Vec<(String, Tensor)>> {
    let entries = checkpoint::load(path)?;
    checkpoint::restore(model, &entries)?;
    Ok(entries)
}

fn open_output<'a>(path: &Option<PathBuf>, out: &'a mut dyn Write) -> Result<Box<dyn Write + 'a>> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(fs::File::create(p)?)),
        None => Box::new(out),
    })
}

fn predict(a: &PredictArgs, out: &mut dyn Write) -> Result<()> {
    if a.points < 2 || !(a.x_max > a.x_min) {
        return Err(Error::InvalidArgument("predict needs --points >= 2 and --x-max > --x-min".into()));
    }
    let name = task_name(a.task);
    let s = settings(&a.common, name)?;
    let mut model = regression_model(a.task, &s.cfg)?;
    let path = checkpoint_path(&a.common, &format!("{name}.ckpt"));
    let entries = checkpoint::load(&path)?;
    let fnorm = normalizer_from("feature", &entries);
    let tnorm = normalizer_from("target", &entries);
    let dims = fnorm.as_ref().map_or(1, |n| n.mean.len());
    if dims != 1 {
        return Err(Error::InvalidArgument(format!("predict needs one input feature, model has {dims}")));
    }
    let grid: Vec<f64> = (0..a.points)
        .map(|i| a.x_min + (a.x_max - a.x_min) * i as f64 / (a.points - 1) as f64)
        .collect();
    let raw = Tensor::new(&[a.points, 1], grid.clone())?;
    let x = fnorm.as_ref().map_or(raw.clone(), |n| n.apply(&raw));
    build(&mut model, &x, s.seed)?;
    checkpoint::restore(&mut model, &entries)?;
    let (mut mean, mut sd) = predictive_moments(&mut model, &x, a.samples, s.seed)?;
    if let Some(n) = &tnorm {
        mean = n.invert(&mean);
        sd = sd.map(|v| v * n.std[0]);
    }
    let mut w = open_output(&a.output, out)?;
    writeln!(w, "x,mean,stddev")?;
    for (i, x) in grid.iter().enumerate() {
        writeln!(w, "{x},{},{}", mean.data()[i], sd.data()[i])?;
    }
    w.flush()?;
    Ok(())
}

fn flow_setup(common: &Common, s: &Settings) -> Result<(Tensor, Sequential)> {
    let x = match &common.data {
        Some(p) => {
            let f: Vec<String> = list(&s.cfg, "feature_columns", "x0,x1")?;
            let f: Vec<&str> = f.iter().map(String::as_str).collect();
            data::load_csv(p, &f, &[], false)?.x
        }
        None => demos::two_moons(
            s.cfg.get_or("num_examples", 512)?,
            s.cfg.get_or("data_noise", 0.05)?,
            s.seed,
        ),
    };
    let flow = demos::flow_model(
        x.shape()[1],
        s.cfg.get_or("layers", 6)?,
        &list(&s.cfg, "hidden", "32,32")?,
        s.seed,
    )?;
    Ok((x, flow))
}

fn train_flow(common: &Common, out: &mut dyn Write) -> Result<()> {
    let s = settings(common, "flow")?;
    let (x, mut flow) = flow_setup(common, &s)?;
    let n = x.shape()[0];
    let elbo = elbo_config(&s, n, 5e-3)?;
    build(&mut flow, &x, s.seed)?;
    let every = s.cfg.get_or("log_every", 1)?;
    fit_with(
        &mut flow,
        &elbo,
        |m, step| {
            let idx = data::batch_indices(n, elbo.batch_size, elbo.seed, step);
            let xb = crate::tensor::Tape::new().constant(data::gather_rows(&x, &idx));
            Ok((demos::flow_log_prob(m, &xb)?.mean().neg(), 0.0))
        },
        step_logger(out, every),
    )?;
    let mut entries = crate::layers::named_parameters(&mut flow);
    entries.push(("meta/dims".into(), Tensor::scalar(x.shape()[1] as f64)));
    checkpoint::save(&checkpoint_path(common, "flow.ckpt"), &entries)
}

fn read_token_file(path: &Path) -> Result<Vec<Vec<usize>>> {
    let text = fs::read_to_string(path)?;
    let mut seqs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let seq = line
            .split_whitespace()
            .map(|t| {
                t.parse().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line: i as u64 + 1,
                    message: format!("`{t}` is not a token id"),
                })
            })
            .collect::<Result<Vec<usize>>>()?;
        seqs.push(seq);
    }
    if seqs.is_empty() || seqs.iter().any(|s| s.len() < 2 || s.len() != seqs[0].len()) {
        return Err(Error::InvalidArgument(format!(
            "{}: need equal-length sequences of at least two tokens",
            path.display()
        )));
    }
    Ok(seqs)
}

fn lstm_setup(common: &Common, s: &Settings) -> Result<(Vec<Vec<usize>>, LstmLm)> {
    let vocab = s.cfg.get_or("vocab", 4)?;
    let seqs = match &common.data {
        Some(p) => read_token_file(p)?,
        None => demos::periodic_sequences(
            s.cfg.get_or("num_examples", 32)?,
            s.cfg.get_or("seq_len", 12)?,
            vocab,
            s.cfg.get_or("period", vocab)?,
            s.cfg.get_or("token_noise", 0.0)?,
            s.seed,
        ),
    };
    if let Some(bad) = seqs.iter().flatten().find(|&&t| t >= vocab) {
        return Err(Error::InvalidArgument(format!("token {bad} outside vocabulary of {vocab}")));
    }
    Ok((seqs, demos::lstm_lm(s.cfg.get_or("units", 16)?, vocab)))
}

fn train_lstm(common: &Common, out: &mut dyn Write) -> Result<()> {
    let s = settings(common, "lstm")?;
    let (seqs, mut lm) = lstm_setup(common, &s)?;
    let elbo = elbo_config(&s, seqs.len(), 1e-2)?;
    lm.loss(&seqs[..1], seqs.len(), s.seed, 0)?;
    let every = s.cfg.get_or("log_every", 1)?;
    fit_with(
        &mut lm,
        &elbo,
        |m, step| {
            let idx = data::batch_indices(seqs.len(), elbo.batch_size, elbo.seed, step);
            let batch: Vec<Vec<usize>> = idx.iter().map(|&i| seqs[i].clone()).collect();
            m.loss(&batch, elbo.num_train_examples, elbo.seed, step)
        },
        step_logger(out, every),
    )?;
    checkpoint::save(&checkpoint_path(common, "lstm.ckpt"), &crate::layers::named_parameters(&mut lm))
}

fn sample(a: &SampleArgs, out: &mut dyn Write) -> Result<()> {
    match a.task {
        GenerativeTask::Flow => {
            let s = settings(&a.common, "flow")?;
            let path = checkpoint_path(&a.common, "flow.ckpt");
            let entries = checkpoint::load(&path)?;
            let dims = entries
                .iter()
                .find(|(n, _)| n == "meta/dims")
                .map(|(_, t)| t.item() as usize)
                .ok_or_else(|| Error::Checkpoint("flow checkpoint lacks `meta/dims`".into()))?;
            let mut flow = demos::flow_model(dims, s.cfg.get_or("layers", 6)?, &list(&s.cfg, "hidden", "32,32")?, s.seed)?;
            build(&mut flow, &Tensor::zeros(&[1, dims]), s.seed)?;
            checkpoint::restore(&mut flow, &entries)?;
            let x = demos::flow_sample(&mut flow, dims, a.num, s.seed)?;
            let mut w = open_output(&a.output, out)?;
            let header: Vec<String> = (0..dims).map(|j| format!("x{j}")).collect();
            writeln!(w, "{}", header.join(","))?;
            for row in x.data().chunks(dims) {
                let cells: Vec<String> = row.iter().map(f64::to_string).collect();
                writeln!(w, "{}", cells.join(","))?;
            }
            w.flush()?;
        }
        GenerativeTask::Lstm => {
            let s = settings(&a.common, "lstm")?;
            let vocab = s.cfg.get_or("vocab", 4)?;
            let mut lm = demos::lstm_lm(s.cfg.get_or("units", 16)?, vocab);
            lm.loss(&[vec![0, 0]], 1, s.seed, 0)?;
            load_into(&mut lm, &checkpoint_path(&a.common, "lstm.ckpt"))?;
            let len = s.cfg.get_or("sample_length", 12)?;
            let mut w = open_output(&a.output, out)?;
            for i in 0..a.num {
                let prime = [i % vocab];
                let seq = lm.sample(&prime, len, s.seed.wrapping_add(i as u64))?;
                let toks: Vec<String> = seq.iter().map(usize::to_string).collect();
                writeln!(w, "{}", toks.join(" "))?;
            }
            w.flush()?;
        }
    }
    Ok(())
}
