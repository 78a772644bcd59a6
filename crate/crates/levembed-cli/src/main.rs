//! Batch front end for the read-embedding pipeline: synthetic dataset
//! generation, training, evaluation, distribution diagnostics, and the
//! Monte Carlo distance sweeps. Every subcommand writes CSV/JSON artifacts
//! plus a manifest of the resolved configuration, and identical flags with
//! the same seed reproduce identical primary outputs byte for byte.

mod manifest;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use levembed::channel::{
    build_pairs, default_padded_len, gen_references, load_dataset, save_dataset,
    split_by_reference, validate_disjoint, ChannelParams, Dataset, Role,
};
use levembed::metrics;
use levembed::montecarlo::{sweep_expected_distance, OrthoKind, SimConfig};
use levembed::nets::{encode_batch, Arch, Model, ModelSpec};
use levembed::seq::DnaSeq;
use levembed::space::{EmbeddingSpace, LossFnKind, LossKind, SpaceKind, DEFAULT_EPSILON_DHAT};
use levembed::tape::Tape;
use levembed::trainer::{self, train, OptimizerKind, TrainConfig};

/// Environment variable holding the default output directory.
const OUT_ENV: &str = "LEVEMBED_OUT";

#[derive(Parser)]
#[command(
    name = "levembed",
    version,
    about = "Vector embeddings of noisy DNA reads whose squared Euclidean distance approximates the Levenshtein distance"
)]
struct Cli {
    /// Worker threads for data generation, sweeps, and metric sharding;
    /// 1 forces the single-worker mode. Outputs are identical either way.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic references, noisy reads, and paired datasets.
    GenData(GenDataArgs),
    /// Train an embedding model on a generated dataset.
    Train(Box<TrainArgs>),
    /// Evaluate a checkpoint on a test dataset.
    Eval(EvalArgs),
    /// Emit per-element normality and independence diagnostics.
    Diagnose(DiagnoseArgs),
    /// Sweep average distances against the degree of freedom.
    Montecarlo(MontecarloArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    #[value(name = "cnn-ed-5")]
    CnnEd5,
    #[value(name = "cnn-ed-10")]
    CnnEd10,
    Rnn,
    Gru,
}

impl From<ArchArg> for Arch {
    fn from(a: ArchArg) -> Arch {
        match a {
            ArchArg::CnnEd5 => Arch::CnnEd5,
            ArchArg::CnnEd10 => Arch::CnnEd10,
            ArchArg::Rnn => Arch::Rnn,
            ArchArg::Gru => Arch::Gru,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SpaceArg {
    L1,
    L2,
    Sqeuclid,
}

impl From<SpaceArg> for SpaceKind {
    fn from(s: SpaceArg) -> SpaceKind {
        match s {
            SpaceArg::L1 => SpaceKind::L1,
            SpaceArg::L2 => SpaceKind::L2,
            SpaceArg::Sqeuclid => SpaceKind::SqEuclid,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Mse,
    Mae,
    Rechi2,
}

impl From<LossArg> for LossFnKind {
    fn from(l: LossArg) -> LossFnKind {
        match l {
            LossArg::Mse => LossFnKind::Mse,
            LossArg::Mae => LossFnKind::Mae,
            LossArg::Rechi2 => LossFnKind::ReChi2,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OrthoArg {
    Haar,
    Signedperm,
    Identity,
}

impl From<OrthoArg> for OrthoKind {
    fn from(o: OrthoArg) -> OrthoKind {
        match o {
            OrthoArg::Haar => OrthoKind::Haar,
            OrthoArg::Signedperm => OrthoKind::SignedPermutation,
            OrthoArg::Identity => OrthoKind::Identity,
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // best effort; the pool can only be sized once per process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global();
    }
    let outcome = match cli.command {
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => run_train(*args),
        Command::Eval(args) => run_eval(args),
        Command::Diagnose(args) => run_diagnose(args),
        Command::Montecarlo(args) => run_montecarlo(args),
    };
    if let Err(e) = outcome {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn resolve_out(out: Option<PathBuf>) -> Result<PathBuf> {
    match out {
        Some(p) => Ok(p),
        None => match std::env::var_os(OUT_ENV) {
            Some(dir) => Ok(PathBuf::from(dir)),
            None => bail!("no --out given and {OUT_ENV} is not set"),
        },
    }
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

#[derive(Args)]
struct GenDataArgs {
    /// Number of references to synthesize.
    #[arg(long, default_value_t = 200)]
    refs: usize,
    /// Reference length in bases.
    #[arg(long, default_value_t = 152)]
    ref_len: usize,
    /// Noisy reads simulated per reference.
    #[arg(long, default_value_t = 10)]
    reads_per_ref: usize,
    /// Channel rates `p_sub,p_ins,p_del,p_fail`.
    #[arg(long, default_value = "0.003,0.003,0.004,0")]
    rates: String,
    /// Padded length; defaults to ref-len rounded up to a multiple of 32.
    #[arg(long)]
    pad: Option<usize>,
    /// Fraction of references assigned to the training split.
    #[arg(long, default_value_t = 0.8)]
    split: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (default: $LEVEMBED_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct GenDataConfig {
    refs: usize,
    ref_len: usize,
    reads_per_ref: usize,
    p_sub: f64,
    p_ins: f64,
    p_del: f64,
    p_fail: f64,
    pad: usize,
    split: f64,
    seed: u64,
}

fn parse_rates(text: &str) -> Result<(f64, f64, f64, f64)> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 4 {
        bail!("--rates needs 4 comma-separated values (p_sub,p_ins,p_del,p_fail), got '{text}'");
    }
    let mut values = [0.0; 4];
    for (slot, part) in values.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .with_context(|| format!("bad rate '{part}'"))?;
    }
    Ok((values[0], values[1], values[2], values[3]))
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let out_dir = resolve_out(args.out)?;
    let (p_sub, p_ins, p_del, p_fail) = parse_rates(&args.rates)?;
    let pad = args.pad.unwrap_or_else(|| default_padded_len(args.ref_len));
    let config = GenDataConfig {
        refs: args.refs,
        ref_len: args.ref_len,
        reads_per_ref: args.reads_per_ref,
        p_sub,
        p_ins,
        p_del,
        p_fail,
        pad,
        split: args.split,
        seed: args.seed,
    };
    let config_json = serde_json::to_value(&config)?;
    manifest::with_manifest(
        &out_dir.join("manifest.json"),
        "gen-data",
        config_json,
        vec![args.seed],
        vec![],
        || {
            let channel = |seed: u64| ChannelParams {
                p_sub,
                p_ins,
                p_del,
                p_fail,
                seed,
            };
            channel(args.seed).validate()?;
            std::fs::create_dir_all(&out_dir)?;

            let refs = gen_references(args.refs, args.ref_len, args.seed);
            let (train_refs, test_refs) = split_by_reference(&refs, args.split)?;
            validate_disjoint(&train_refs, &test_refs)?;
            if train_refs.len() < 2 {
                bail!(
                    "training split has {} references; need at least 2 (lower --split or raise --refs)",
                    train_refs.len()
                );
            }

            let train_path = out_dir.join("train.csv");
            let train_ds = build_pairs(
                &train_refs,
                args.reads_per_ref,
                &channel(args.seed),
                pad,
                args.seed,
                Role::Train,
            )?;
            save_dataset(&train_ds, &train_path)?;

            let test_path = out_dir.join("test.csv");
            let test_ds = if test_refs.len() >= 2 {
                build_pairs(
                    &test_refs,
                    args.reads_per_ref,
                    &channel(args.seed.wrapping_add(1)),
                    pad,
                    args.seed.wrapping_add(1),
                    Role::Test,
                )?
            } else {
                eprintln!(
                    "warning: test split has {} references; writing an empty test set",
                    test_refs.len()
                );
                Dataset {
                    samples: vec![],
                    padded_len: pad,
                    role: Role::Test,
                }
            };
            save_dataset(&test_ds, &test_path)?;
            Ok(vec![train_path, test_path])
        },
    )
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory holding train.csv (and test.csv for --validate).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    arch: Option<ArchArg>,
    #[arg(long, value_enum)]
    space: Option<SpaceArg>,
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    /// Embedding dimension n.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    fc_hidden: Option<usize>,
    #[arg(long)]
    hidden_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// adam or sgd.
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    /// Lower clamp on the predicted distance inside the chi-squared loss.
    #[arg(long)]
    epsilon_dhat: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Train this many models with consecutive seeds.
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    no_shuffle: bool,
    /// Compute test metrics after every epoch (needs test.csv).
    #[arg(long)]
    validate: bool,
    /// TOML config file; explicit flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Config-file schema: every training and architecture knob, kebab-case keys.
#[derive(Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct TrainFileConfig {
    arch: Option<String>,
    space: Option<String>,
    loss: Option<String>,
    dim: Option<usize>,
    fc_hidden: Option<usize>,
    hidden_size: Option<usize>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    optimizer: Option<String>,
    lr: Option<f64>,
    epsilon_dhat: Option<f64>,
    seed: Option<u64>,
    runs: Option<usize>,
    shuffle: Option<bool>,
}

#[derive(Serialize)]
struct ResolvedTrainConfig {
    arch: Arch,
    space: SpaceKind,
    loss: LossFnKind,
    epsilon_dhat: f64,
    dim: usize,
    fc_hidden: usize,
    hidden_size: usize,
    input_len: usize,
    epochs: usize,
    batch_size: usize,
    optimizer: OptimizerKind,
    seed: u64,
    runs: usize,
    shuffle: bool,
    validate: bool,
}

fn parse_enum_key<T: ValueEnum + Clone + Copy>(what: &str, key: &str) -> Result<T> {
    T::from_str(key, true).map_err(|_| anyhow::anyhow!("unknown {what} '{key}'"))
}

fn run_train(args: TrainArgs) -> Result<()> {
    let out = resolve_out(args.out)?;
    let file: TrainFileConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => TrainFileConfig::default(),
    };

    // precedence: flags over config file over defaults
    let arch: Arch = match (args.arch, &file.arch) {
        (Some(a), _) => a.into(),
        (None, Some(key)) => parse_enum_key::<ArchArg>("arch", key)?.into(),
        (None, None) => Arch::CnnEd5,
    };
    let space: SpaceKind = match (args.space, &file.space) {
        (Some(s), _) => s.into(),
        (None, Some(key)) => parse_enum_key::<SpaceArg>("space", key)?.into(),
        (None, None) => SpaceKind::SqEuclid,
    };
    let loss_fn: LossFnKind = match (args.loss, &file.loss) {
        (Some(l), _) => l.into(),
        (None, Some(key)) => parse_enum_key::<LossArg>("loss", key)?.into(),
        (None, None) => LossFnKind::ReChi2,
    };
    let dim = args.dim.or(file.dim).unwrap_or(80);
    let fc_hidden = args.fc_hidden.or(file.fc_hidden).unwrap_or(256);
    let hidden_size = args.hidden_size.or(file.hidden_size).unwrap_or(64);
    let epochs = args.epochs.or(file.epochs).unwrap_or(20);
    let batch_size = args.batch_size.or(file.batch_size).unwrap_or(128);
    let lr = args.lr.or(file.lr).unwrap_or(1e-3);
    let epsilon_dhat = args
        .epsilon_dhat
        .or(file.epsilon_dhat)
        .unwrap_or(DEFAULT_EPSILON_DHAT);
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let runs = args.runs.or(file.runs).unwrap_or(1).max(1);
    let shuffle = if args.no_shuffle {
        false
    } else {
        file.shuffle.unwrap_or(true)
    };
    let optimizer = match args
        .optimizer
        .as_deref()
        .or(file.optimizer.as_deref())
        .unwrap_or("adam")
    {
        "adam" => OptimizerKind::adam(lr),
        "sgd" => OptimizerKind::Sgd { lr },
        other => bail!("unknown optimizer '{other}' (adam or sgd)"),
    };

    let train_path = args.data.join("train.csv");
    let resolved = |input_len: usize| ResolvedTrainConfig {
        arch,
        space,
        loss: loss_fn,
        epsilon_dhat,
        dim,
        fc_hidden,
        hidden_size,
        input_len,
        epochs,
        batch_size,
        optimizer,
        seed,
        runs,
        shuffle,
        validate: args.validate,
    };

    // datasets load before the manifest so the padded length is known; a load
    // failure still produces a manifest with the un-resolved input length
    let dataset = load_dataset(&train_path);
    let input_len = dataset.as_ref().map(|d| d.padded_len).unwrap_or(0);
    let seeds: Vec<u64> = (0..runs as u64).map(|r| seed.wrapping_add(r)).collect();
    let manifest_path = sibling(&out, "manifest.json");

    manifest::with_manifest(
        &manifest_path,
        "train",
        serde_json::to_value(resolved(input_len))?,
        seeds.clone(),
        vec![train_path.display().to_string()],
        || {
            let dataset = dataset?;
            if let Some(parent) = out.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            if loss_fn == LossFnKind::ReChi2 && space != SpaceKind::SqEuclid {
                eprintln!(
                    "warning: the chi-squared loss models squared Euclidean distances; \
                     applying it to the {} embedding anyway",
                    space.name()
                );
            }
            let validation = if args.validate {
                Some(load_dataset(args.data.join("test.csv"))?)
            } else {
                None
            };

            let mut spec = ModelSpec::new(arch, dataset.padded_len, dim);
            spec.fc_hidden = fc_hidden;
            spec.hidden_size = hidden_size;
            spec.validate()?;

            let mut outputs = Vec::new();
            for (run, &run_seed) in seeds.iter().enumerate() {
                let cfg = TrainConfig {
                    epochs,
                    batch_size,
                    optimizer: with_lr(optimizer, lr),
                    loss: LossKind {
                        kind: loss_fn,
                        epsilon_dhat,
                    },
                    space,
                    seed: run_seed,
                    shuffle,
                };
                let mut model = Model::build(spec, run_seed)?;
                let reports = train(&mut model, &dataset, &cfg, validation.as_ref())?;
                let ckpt_path = run_path(&out, runs, run);
                model.save_checkpoint(&ckpt_path)?;
                let epochs_path = sibling(&ckpt_path, "epochs.csv");
                trainer::write_epoch_csv(&epochs_path, &reports)?;
                if let Some(last) = reports.last() {
                    eprintln!(
                        "run {run}: final epoch loss {:.4}{}",
                        last.loss,
                        last.oa
                            .map(|oa| format!(", validation OA {oa:.2}%"))
                            .unwrap_or_default()
                    );
                }
                outputs.push(ckpt_path);
                outputs.push(epochs_path);
            }
            Ok(outputs)
        },
    )
}

fn with_lr(optimizer: OptimizerKind, lr: f64) -> OptimizerKind {
    match optimizer {
        OptimizerKind::Adam {
            beta1, beta2, eps, ..
        } => OptimizerKind::Adam {
            lr,
            beta1,
            beta2,
            eps,
        },
        OptimizerKind::Sgd { .. } => OptimizerKind::Sgd { lr },
    }
}

/// `model.ckpt` -> `model_run2.ckpt` when training several runs.
fn run_path(out: &Path, runs: usize, run: usize) -> PathBuf {
    if runs == 1 {
        return out.to_path_buf();
    }
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    let ext = out
        .extension()
        .map(|e| format!(".{}", e.to_string_lossy()))
        .unwrap_or_default();
    out.with_file_name(format!("{stem}_run{run}{ext}"))
}

/// `model.ckpt` -> `model.epochs.csv` and friends.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    path.with_file_name(format!("{stem}.{suffix}"))
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset directory holding test.csv.
    #[arg(long)]
    data: PathBuf,
    /// Classification threshold; defaults to n / 2.
    #[arg(long)]
    k: Option<f64>,
    /// Embedding space the checkpoint was trained with.
    #[arg(long, value_enum, default_value = "sqeuclid")]
    space: SpaceArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let out_dir = resolve_out(args.out)?;
    let test_path = args.data.join("test.csv");
    let space_kind: SpaceKind = args.space.into();
    let config = serde_json::json!({
        "ckpt": args.ckpt.display().to_string(),
        "k": args.k,
        "space": space_kind.name(),
    });
    manifest::with_manifest(
        &out_dir.join("manifest.json"),
        "eval",
        config,
        vec![],
        vec![
            args.ckpt.display().to_string(),
            test_path.display().to_string(),
        ],
        || {
            std::fs::create_dir_all(&out_dir)?;
            let model = Model::load_checkpoint(&args.ckpt)?;
            let dataset = load_dataset(&test_path)?;
            let n = model.spec().embed_dim;
            let space = EmbeddingSpace::new(space_kind, n);
            let k = args.k.unwrap_or(n as f64 / 2.0);
            let pairs = trainer::pair_evaluations(&model, &dataset, &space)?;
            let report = metrics::evaluate(&pairs, k)?;
            let csv_path = out_dir.join("metrics.csv");
            report.write_csv(&csv_path)?;
            let json_path = out_dir.join("metrics.json");
            report.write_json(&json_path)?;
            eprintln!(
                "ae {:.3}, ae_h {:.3}, oa@{k:.1} {:.2}%, best oa {:.2}% at k = {:.2}",
                report.ae, report.ae_h, report.oa_at_k, report.oa_best, report.k_best
            );
            Ok(vec![csv_path, json_path])
        },
    )
}

// ---------------------------------------------------------------------------
// diagnose
// ---------------------------------------------------------------------------

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset directory holding test.csv.
    #[arg(long)]
    data: PathBuf,
    /// Bins of the off-diagonal correlation histogram.
    #[arg(long, default_value_t = 40)]
    hist_bins: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run_diagnose(args: DiagnoseArgs) -> Result<()> {
    let out_dir = resolve_out(args.out)?;
    let test_path = args.data.join("test.csv");
    let config = serde_json::json!({
        "ckpt": args.ckpt.display().to_string(),
        "hist_bins": args.hist_bins,
    });
    manifest::with_manifest(
        &out_dir.join("manifest.json"),
        "diagnose",
        config,
        vec![],
        vec![
            args.ckpt.display().to_string(),
            test_path.display().to_string(),
        ],
        || {
            std::fs::create_dir_all(&out_dir)?;
            let model = Model::load_checkpoint(&args.ckpt)?;
            let dataset = load_dataset(&test_path)?;
            let embeddings = raw_test_embeddings(&model, &dataset)?;
            let diag = metrics::diagnostics(&embeddings)?;
            if !diag.undefined_elements.is_empty() {
                eprintln!(
                    "warning: {} embedding elements have zero variance: {:?}",
                    diag.undefined_elements.len(),
                    diag.undefined_elements
                );
            }
            let stats = out_dir.join("element_stats.csv");
            diag.write_stats_csv(&stats)?;
            let qq = out_dir.join("qq.csv");
            diag.write_qq_csv(&qq)?;
            let pcc = out_dir.join("pcc.csv");
            diag.write_pcc_csv(&pcc)?;
            let hist = out_dir.join("pcc_hist.csv");
            diag.write_pcc_hist_csv(&hist, args.hist_bins)?;
            Ok(vec![stats, qq, pcc, hist])
        },
    )
}

/// Un-rescaled eval-mode embeddings of every distinct sequence in the dataset:
/// the output normalization aims these at zero mean and unit variance per
/// element, which is exactly what the diagnostics interrogate.
fn raw_test_embeddings(model: &Model, dataset: &Dataset) -> Result<Vec<Vec<f64>>> {
    let mut seen = std::collections::BTreeSet::new();
    let mut distinct: Vec<&DnaSeq> = Vec::new();
    for sample in &dataset.samples {
        for side in [&sample.s, &sample.t] {
            if seen.insert(side.to_string()) {
                distinct.push(side);
            }
        }
    }
    let n = model.spec().embed_dim;
    let mut out = Vec::with_capacity(distinct.len());
    for chunk in distinct.chunks(256) {
        let batch = encode_batch(chunk, dataset.padded_len)?;
        let mut tape = Tape::new();
        let node = model.embed_eval(&mut tape, &batch)?;
        let value = tape.value(node);
        for row in 0..chunk.len() {
            out.push(value.data()[row * n..(row + 1) * n].to_vec());
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// montecarlo
// ---------------------------------------------------------------------------

#[derive(Args)]
struct MontecarloArgs {
    /// Ambient dimension.
    #[arg(long, default_value_t = 80)]
    n: usize,
    /// Sweep degrees of freedom 1..=dmax.
    #[arg(long, default_value_t = 80)]
    dmax: usize,
    #[arg(long, default_value_t = 20_000)]
    trials: usize,
    #[arg(long, value_enum, default_value = "haar")]
    ortho: OrthoArg,
    /// Rescale every distance kind so its mean at d = n equals n.
    #[arg(long)]
    rescale_at_80: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run_montecarlo(args: MontecarloArgs) -> Result<()> {
    let out_dir = resolve_out(args.out)?;
    let cfg = SimConfig {
        n: args.n,
        d_values: (1..=args.dmax).collect(),
        trials: args.trials,
        ortho: args.ortho.into(),
        rescale_at_n: args.rescale_at_80,
        seed: args.seed,
    };
    let config = serde_json::to_value(&cfg)?;
    manifest::with_manifest(
        &out_dir.join("manifest.json"),
        "montecarlo",
        config,
        vec![args.seed],
        vec![],
        || {
            std::fs::create_dir_all(&out_dir)?;
            let result = sweep_expected_distance(&cfg)?;
            let sweep_path = out_dir.join("sweep.csv");
            result.write_csv(&sweep_path)?;
            Ok(vec![sweep_path])
        },
    )
}
