//! The `diffmvae` command line: `synth`, `train`, `train-aux`, `sample` and
//! `eval`.
//!
//! Every subcommand works inside a run directory (`--run-dir`, falling back
//! to `$DIFFMVAE_RUN_DIR`, then `runs`) holding `config.resolved`,
//! `checkpoint.bin`, `aux_checkpoint.bin`, `metrics.log` and `samples/`.
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime failures.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, NamedArray};
use super::config::{config_hash, RunConfig};
use super::state::{aux_checkpoint, load_aux, load_model, model_checkpoint};
use crate::aux_prior::{collect_posterior_latents, train_aux_prior, AuxPrior};
use crate::data_synth::{train_probe_classifier, MultimodalDataset, ProbeClassifier};
use crate::error::{Error, Result};
use crate::evaluation::{
    binarize, coherence_accuracy, f1_sample_average, frechet_feature_distance, CoherenceReference,
};
use crate::generation::{conditional_generate, unconditional_generate, SamplerConfig, SamplerKind};
use crate::multimodal_model::{DiffMvae, Trainer};

pub const RUN_DIR_ENV: &str = "DIFFMVAE_RUN_DIR";
pub const DEFAULT_RUN_ROOT: &str = "runs";
pub const CONFIG_FILE: &str = "config.resolved";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const AUX_CHECKPOINT_FILE: &str = "aux_checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.log";
pub const SAMPLES_DIR: &str = "samples";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Parser, Debug)]
#[command(name = "diffmvae", version, about = "Multimodal VAE with diffusion decoders and a latent score prior")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the configured synthetic dataset to a directory.
    Synth(SynthArgs),
    /// Train a model and write `checkpoint.bin`.
    Train(TrainArgs),
    /// Fit the latent prior of a trained model and write `aux_checkpoint.bin`.
    TrainAux(TrainAuxArgs),
    /// Generate records from a checkpoint.
    Sample(SampleArgs),
    /// Score generated records with probe classifiers.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// TOML run config; defaults apply to every missing key.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path override, e.g. `--set train.steps=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Overrides the config's top-level seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        RunConfig::load(self.config.as_deref(), &overrides)
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory (default: `<run root>/data`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainAuxArgs {
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Model checkpoint (default: `<run dir>/checkpoint.bin`).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dotted-path override applied to `config.resolved`, e.g.
    /// `--set aux.train_steps=100`. Changing the config needs `--force`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Accept a checkpoint whose config hash differs from `config.resolved`.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SamplerArg {
    Ddim,
    Em,
}

#[derive(Args, Debug)]
struct SampleArgs {
    /// Model checkpoint to sample from.
    #[arg(long, required = true)]
    checkpoint: Option<PathBuf>,
    /// Aux-prior checkpoint (default: `aux_checkpoint.bin` next to the model).
    #[arg(long)]
    aux_checkpoint: Option<PathBuf>,
    /// Comma-separated observed modalities, taken from held-out records.
    #[arg(long, value_delimiter = ',', required_unless_present = "unconditional", conflicts_with = "unconditional")]
    given: Vec<String>,
    /// Comma-separated modalities to generate (default: all not given).
    #[arg(long, value_delimiter = ',', conflicts_with = "unconditional")]
    target: Vec<String>,
    /// Generate complete records from the prior.
    #[arg(long)]
    unconditional: bool,
    /// Draw unconditional latents from the aux prior instead of N(0, I).
    #[arg(long, requires = "unconditional")]
    use_aux_prior: bool,
    #[arg(long, value_enum)]
    sampler: Option<SamplerArg>,
    #[arg(long)]
    steps: Option<usize>,
    /// Number of records.
    #[arg(long, default_value_t = 16)]
    n: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: `samples/` next to the checkpoint).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Condition on the posterior mean instead of a posterior draw.
    #[arg(long)]
    mean_latent: bool,
    /// Accept checkpoints whose config hash differs from `config.resolved`
    /// or from each other.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Sample directory written by `sample` (default: `<run dir>/samples`).
    #[arg(long)]
    samples: Option<PathBuf>,
    /// Seed for the probe classifiers (default: the run config's seed).
    #[arg(long)]
    seed: Option<u64>,
}

/// One line of `metrics.log`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub metric_name: String,
    pub value: f64,
    pub n: u64,
    pub config_hash: String,
}

/// Writes metric records to stdout and appends them to a log file.
struct MetricsSink {
    file: fs::File,
    config_hash: String,
}

impl MetricsSink {
    fn open(path: &Path, config_hash: &str) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file, config_hash: config_hash.to_string() })
    }

    fn emit(&mut self, metric_name: &str, value: f64, n: u64) -> Result<()> {
        let rec = MetricRecord { metric_name: metric_name.into(), value, n, config_hash: self.config_hash.clone() };
        let line = serde_json::to_string(&rec).map_err(|e| Error::InvalidInput(e.to_string()))?;
        println!("{line}");
        writeln!(self.file, "{line}")?;
        Ok(())
    }
}

/// Record of a `sample` run, stored as `manifest.json` in the sample
/// directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleManifest {
    /// `conditional` or `unconditional`.
    pub mode: String,
    /// `aux` or `standard_normal` for unconditional runs.
    pub prior: Option<String>,
    pub config_hash: String,
    /// Resolved config of the model that produced the samples.
    pub config: String,
    pub seed: u64,
    pub sampler: SamplerConfig,
    pub n: usize,
    pub given: Vec<String>,
    pub targets: Vec<String>,
    /// Dataset indices of the conditioning records.
    pub source_indices: Vec<usize>,
    pub source_labels: Vec<usize>,
}

/// Dataset summary written by `synth`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config_hash: String,
    pub n: usize,
    pub num_classes: usize,
    pub modalities: Vec<(String, Vec<usize>)>,
}

/// Runs the command line with `args` (program name first) and returns the
/// process exit code.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let outcome = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::TrainAux(a) => train_aux(a),
        Command::Sample(a) => sample(a),
        Command::Eval(a) => eval(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

/// `$DIFFMVAE_RUN_DIR` or `runs`.
pub fn default_run_root() -> PathBuf {
    std::env::var_os(RUN_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_RUN_ROOT))
}

fn run_dir(arg: Option<PathBuf>) -> PathBuf {
    arg.unwrap_or_else(default_run_root)
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let out = a.out.unwrap_or_else(|| default_run_root().join("data"));
    let ds = cfg.data.build()?;
    write_dataset(&out, &ds, &cfg.hash())?;
    eprintln!("wrote {} records to {}", ds.len(), out.display());
    Ok(())
}

/// Writes one container per modality (`<name>.bin`, array `data` of shape
/// `[n, ..shape]`), `labels.bin` and `manifest.json`.
pub fn write_dataset(dir: &Path, ds: &MultimodalDataset, hash: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    for ((name, shape), x) in ds.names.iter().zip(&ds.shapes).zip(&ds.data) {
        let mut c = Checkpoint::new(hash);
        let full: Vec<usize> = std::iter::once(ds.len()).chain(shape.iter().copied()).collect();
        c.arrays.push(NamedArray::from_array("data", x, full)?);
        save_checkpoint(&dir.join(format!("{name}.bin")), &c)?;
    }
    let mut c = Checkpoint::new(hash);
    c.arrays.push(NamedArray { name: "labels".into(), shape: vec![ds.len()], data: ds.labels.iter().map(|&l| l as f32).collect() });
    save_checkpoint(&dir.join("labels.bin"), &c)?;
    let manifest = DatasetManifest {
        config_hash: hash.into(),
        n: ds.len(),
        num_classes: ds.num_classes,
        modalities: ds.names.iter().cloned().zip(ds.shapes.iter().cloned()).collect(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidInput(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Integrity(format!("{}: {e}", path.display())))
}

/// Training and held-out splits of the configured dataset.
pub fn dataset_splits(cfg: &RunConfig) -> Result<(MultimodalDataset, MultimodalDataset)> {
    Ok(cfg.data.build()?.split(cfg.data.train))
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let dir = run_dir(a.run_dir);
    fs::create_dir_all(&dir)?;
    let resolved = cfg.to_toml();
    let hash = config_hash(&resolved);
    fs::write(dir.join(CONFIG_FILE), &resolved)?;
    let mut sink = MetricsSink::open(&dir.join(METRICS_FILE), &hash)?;
    let trainer = train_model(&cfg, |step, loss| sink.emit("train_loss", loss, step))?;
    save_checkpoint(&dir.join(CHECKPOINT_FILE), &model_checkpoint(&trainer, &cfg)?)?;
    eprintln!("wrote {}", dir.join(CHECKPOINT_FILE).display());
    Ok(())
}

/// Builds and trains the configured model. `log(step, mean_loss)` is called
/// every `train.log_every` steps and after the last step with the mean loss
/// since the previous call.
///
/// Initialization draws from ChaCha8 stream 1 of `seed`; training (batch
/// order, latent noise, diffusion times) draws from stream 0.
pub fn train_model(cfg: &RunConfig, mut log: impl FnMut(u64, f64) -> Result<()>) -> Result<Trainer> {
    let (train_set, _) = dataset_splits(cfg)?;
    let mut init = ChaCha8Rng::seed_from_u64(cfg.seed);
    init.set_stream(1);
    let model = DiffMvae::new(cfg.model.clone(), cfg.data.specs(&train_set), &mut init)?;
    let mut trainer = Trainer::new(model, cfg.train.lr, cfg.seed).with_lr_schedule(cfg.train.lr_schedule());
    let mut window = Vec::new();
    let mut logged = Ok(());
    let total = cfg.train.steps as u64;
    trainer.fit(&train_set.data, cfg.train.batch_size, cfg.train.steps, |m| {
        window.push(m.loss);
        if logged.is_ok() && (m.step % cfg.train.log_every as u64 == 0 || m.step == total) {
            logged = log(m.step, window.iter().sum::<f64>() / window.len() as f64);
            window.clear();
        }
    })?;
    logged?;
    Ok(trainer)
}

/// Loads `path` and checks it against the config in `config_path` when that
/// file exists.
fn load_checked(path: &Path, config_path: &Path, overrides: &[String], force: bool) -> Result<(Checkpoint, Option<RunConfig>)> {
    let current = if config_path.exists() {
        Some(RunConfig::load(Some(config_path), overrides)?)
    } else if !overrides.is_empty() {
        return Err(Error::Config(format!("--set needs {} next to the checkpoint", CONFIG_FILE)));
    } else {
        None
    };
    let ckpt = load_checkpoint(path, current.as_ref().map(RunConfig::hash).as_deref(), force)?;
    Ok((ckpt, current))
}

fn train_aux(a: TrainAuxArgs) -> Result<()> {
    let dir = run_dir(a.run_dir);
    let ckpt_path = a.checkpoint.unwrap_or_else(|| dir.join(CHECKPOINT_FILE));
    let config_path = ckpt_path.parent().unwrap_or(Path::new(".")).join(CONFIG_FILE);
    let (ckpt, current) = load_checked(&ckpt_path, &config_path, &a.overrides, a.force)?;
    let (stored_cfg, model) = load_model(&ckpt)?;
    let cfg = current.unwrap_or(stored_cfg);
    let seed = a.seed.unwrap_or(cfg.seed);
    let mut sink = MetricsSink::open(&dir.join(METRICS_FILE), &ckpt.config_hash)?;
    let (prior, losses) = fit_aux_prior(&model, &cfg, seed)?;
    let every = cfg.train.log_every.max(1);
    for (k, chunk) in losses.chunks(every).enumerate() {
        let step = (k * every + chunk.len()) as u64;
        sink.emit("aux_loss", chunk.iter().sum::<f64>() / chunk.len() as f64, step)?;
    }
    fs::create_dir_all(&dir)?;
    save_checkpoint(&dir.join(AUX_CHECKPOINT_FILE), &aux_checkpoint(&prior, &ckpt.config_hash)?)?;
    eprintln!("wrote {}", dir.join(AUX_CHECKPOINT_FILE).display());
    Ok(())
}

/// Collects posterior latents of the training split and fits the configured
/// aux prior. Returns the prior and its per-step losses.
pub fn fit_aux_prior(model: &DiffMvae, cfg: &RunConfig, seed: u64) -> Result<(AuxPrior, Vec<f64>)> {
    let (train_set, _) = dataset_splits(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let latents = collect_posterior_latents(model, &train_set.data, cfg.aux.num_latents, &mut rng)?;
    let mut prior = AuxPrior::new(model.latent_dim(), cfg.aux.clone(), &mut rng)?;
    let losses = train_aux_prior(&mut prior, &latents, cfg.aux.train_steps, &mut rng)?;
    Ok((prior, losses))
}

fn modality_indices(model: &DiffMvae, names: &[String]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            model.modality_index(n).ok_or_else(|| {
                Error::InvalidInput(format!("unknown modality '{n}'; the model has {:?}", model.modality_names()))
            })
        })
        .collect()
}

fn sample(a: SampleArgs) -> Result<()> {
    let ckpt_path = a.checkpoint.expect("clap enforces --checkpoint");
    let base = ckpt_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let (ckpt, _) = load_checked(&ckpt_path, &base.join(CONFIG_FILE), &[], a.force)?;
    let (cfg, model) = load_model(&ckpt)?;
    let seed = a.seed.unwrap_or(cfg.seed);
    let mut sampler = cfg.sampler;
    if let Some(kind) = a.sampler {
        sampler.kind = match kind {
            SamplerArg::Ddim => SamplerKind::Ddim,
            SamplerArg::Em => SamplerKind::Em,
        };
    }
    if let Some(steps) = a.steps {
        sampler.steps = steps;
    }
    sampler.mean_latent |= a.mean_latent;
    if a.n == 0 {
        return Err(Error::InvalidInput("--n must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let names: Vec<String> = model.modality_names().iter().map(|s| s.to_string()).collect();
    let mut manifest = SampleManifest {
        mode: String::new(),
        prior: None,
        config_hash: ckpt.config_hash.clone(),
        config: cfg.to_toml(),
        seed,
        sampler,
        n: a.n,
        given: Vec::new(),
        targets: Vec::new(),
        source_indices: Vec::new(),
        source_labels: Vec::new(),
    };
    let generated = if a.unconditional {
        let aux = if a.use_aux_prior {
            let path = a.aux_checkpoint.unwrap_or_else(|| base.join(AUX_CHECKPOINT_FILE));
            let aux_ckpt = load_checkpoint(&path, Some(&ckpt.config_hash), a.force)?;
            Some(load_aux(&aux_ckpt)?)
        } else {
            None
        };
        manifest.mode = "unconditional".into();
        manifest.prior = Some(if aux.is_some() { "aux" } else { "standard_normal" }.into());
        manifest.targets = names.clone();
        unconditional_generate(&model, aux.as_ref(), a.n, &sampler, &mut rng)?
    } else {
        let given = modality_indices(&model, &a.given)?;
        let targets: Vec<usize> = if a.target.is_empty() {
            (0..names.len()).filter(|i| !given.contains(i)).collect()
        } else {
            modality_indices(&model, &a.target)?
        };
        let (_, held_out) = dataset_splits(&cfg)?;
        if held_out.is_empty() {
            return Err(Error::Config("conditional sampling needs held-out records (data.train < data.n)".into()));
        }
        let rows: Vec<usize> = (0..a.n).map(|k| k % held_out.len()).collect();
        let source = held_out.select(&rows);
        let observed: Vec<Option<&Array2<f64>>> =
            (0..names.len()).map(|i| given.contains(&i).then(|| &source.data[i])).collect();
        manifest.mode = "conditional".into();
        manifest.given = given.iter().map(|&i| names[i].clone()).collect();
        manifest.targets = targets.iter().map(|&i| names[i].clone()).collect();
        manifest.source_indices = rows.iter().map(|r| cfg.data.train + r).collect();
        manifest.source_labels = source.labels.clone();
        conditional_generate(&model, &observed, &targets, &sampler, &mut rng)?
    };
    let out = a.out.unwrap_or_else(|| base.join(SAMPLES_DIR));
    write_samples(&out, &model, &generated, &manifest)?;
    eprintln!("wrote {} records to {}", a.n, out.display());
    Ok(())
}

/// Writes `samples/<record>/<modality>.bin` (plus `.pgm` for 2-D
/// modalities) and the manifest.
pub fn write_samples(out: &Path, model: &DiffMvae, generated: &BTreeMap<String, Array2<f64>>, manifest: &SampleManifest) -> Result<()> {
    fs::create_dir_all(out)?;
    let specs = model.specs();
    for r in 0..manifest.n {
        let rec_dir = out.join(record_dir_name(r));
        fs::create_dir_all(&rec_dir)?;
        for (name, x) in generated {
            let spec = specs.iter().find(|s| &s.name == name).expect("generated modalities belong to the model");
            let row = x.row(r).to_owned().insert_axis(Axis(0));
            let mut c = Checkpoint::new(manifest.config_hash.clone());
            c.arrays.push(NamedArray::from_array(name.clone(), &row, spec.data_shape.clone())?);
            save_checkpoint(&rec_dir.join(format!("{name}.bin")), &c)?;
            if let [h, w] = spec.data_shape[..] {
                fs::write(rec_dir.join(format!("{name}.pgm")), pgm_bytes(row.as_slice().expect("contiguous"), w, h))?;
            }
        }
    }
    write_json(&out.join(MANIFEST_FILE), manifest)
}

fn record_dir_name(r: usize) -> String {
    format!("{r:05}")
}

/// 8-bit binary PGM of a row-major image with values in `[0, 1]`.
pub fn pgm_bytes(pixels: &[f64], width: usize, height: usize) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

/// Reads the samples written by [`write_samples`] back as `n x dim` arrays
/// keyed by modality.
pub fn read_samples(dir: &Path) -> Result<(SampleManifest, BTreeMap<String, Array2<f64>>)> {
    let manifest: SampleManifest = read_json(&dir.join(MANIFEST_FILE))?;
    let mut out = BTreeMap::new();
    for name in &manifest.targets {
        let mut rows = Vec::new();
        let mut width = None;
        for r in 0..manifest.n {
            let c = load_checkpoint(&dir.join(record_dir_name(r)).join(format!("{name}.bin")), Some(&manifest.config_hash), false)?;
            let a = c.array(name).ok_or_else(|| Error::Integrity(format!("sample file lacks array '{name}'")))?;
            if *width.get_or_insert(a.data.len()) != a.data.len() {
                return Err(Error::Integrity(format!("records of '{name}' differ in size")));
            }
            rows.extend(a.data.iter().map(|&v| v as f64));
        }
        let x = Array2::from_shape_vec((manifest.n, width.unwrap_or(0)), rows).expect("consistent widths");
        out.insert(name.clone(), x);
    }
    Ok((manifest, out))
}

fn eval(a: EvalArgs) -> Result<()> {
    let dir = run_dir(a.run_dir);
    let samples_dir = a.samples.unwrap_or_else(|| dir.join(SAMPLES_DIR));
    let (manifest, generated) = read_samples(&samples_dir)?;
    let cfg = RunConfig::from_toml_with_overrides(&manifest.config, &[])?;
    let seed = a.seed.unwrap_or(cfg.seed);
    fs::create_dir_all(&dir)?;
    let mut sink = MetricsSink::open(&dir.join(METRICS_FILE), &manifest.config_hash)?;
    for (name, value, n) in evaluate_samples(&cfg, &manifest, &generated, seed)? {
        sink.emit(&name, value, n)?;
    }
    Ok(())
}

/// Probe-based metrics for one sample set, as `(metric_name, value, n)`.
///
/// Conditional runs report joint and per-target coherence against the
/// source labels, plus sample-averaged F1 for 1-D targets. Unconditional
/// runs report mutual coherence and, when there are enough records for a
/// covariance fit, the Fréchet feature distance of every modality to the
/// held-out split.
pub fn evaluate_samples(
    cfg: &RunConfig,
    manifest: &SampleManifest,
    generated: &BTreeMap<String, Array2<f64>>,
    seed: u64,
) -> Result<Vec<(String, f64, u64)>> {
    let (train_set, held_out) = dataset_splits(cfg)?;
    let probe_cfg = cfg.eval.probe_config(seed);
    let mut probes: BTreeMap<String, ProbeClassifier> = BTreeMap::new();
    for name in generated.keys() {
        probes.insert(name.clone(), train_probe_classifier(&train_set, name, &probe_cfg)?);
    }
    let n = manifest.n as u64;
    let mut metrics = Vec::new();
    if manifest.mode == "conditional" {
        let labels = &manifest.source_labels;
        metrics.push(("conditional_coherence".into(), coherence_accuracy(generated, &probes, CoherenceReference::Conditioning(labels))?, n));
        for (name, x) in generated {
            let single = BTreeMap::from([(name.clone(), x.clone())]);
            let c = coherence_accuracy(&single, &probes, CoherenceReference::Conditioning(labels))?;
            metrics.push((format!("conditional_coherence.{name}"), c, n));
            let full = cfg.data.build()?;
            let idx = full.index_of(name).expect("generated modality exists");
            if full.shapes[idx].len() == 1 {
                let truth = full.data[idx].select(Axis(0), &manifest.source_indices);
                metrics.push((format!("f1.{name}"), f1_sample_average(&binarize(x), &truth)?, n));
            }
        }
    } else {
        metrics.push(("unconditional_coherence".into(), coherence_accuracy(generated, &probes, CoherenceReference::Mutual)?, n));
        for (name, x) in generated {
            let real = held_out.modality(name).expect("generated modality exists");
            let probe = &probes[name];
            let feature_dim = probe.features(&real.select(Axis(0), &[0])).ncols();
            if x.nrows() > feature_dim && real.nrows() > feature_dim {
                metrics.push((format!("frechet_distance.{name}"), frechet_feature_distance(probe, real, x)?, n));
            } else {
                eprintln!("skipping frechet_distance.{name}: needs more than {feature_dim} records");
            }
        }
    }
    Ok(metrics)
}
