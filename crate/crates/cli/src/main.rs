use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use dprnn::checkpoint::Checkpoint;
use dprnn::config::Config;
use dprnn::corpus::Corpus;
use dprnn::data::{generate, Dataset, Split, SynthConfig, SynthMode};
use dprnn::dump::dump_attention;
use dprnn::eval::{evaluate, hard_negative_auc};
use dprnn::gradcheck::run_suite;
use dprnn::model::Model;
use dprnn::training::train_with;

#[derive(Parser)]
#[command(
    name = "dprnn",
    version,
    about = "Image-text matching: train, evaluate and inspect models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Train a model on a dataset split and write checkpoints plus a loss log.
    Train(TrainArgs),
    /// Report R@1/5/10 in both directions, averaged over folds.
    Eval(EvalArgs),
    /// Print the top-ranked items for one image or text id.
    Retrieve(RetrieveArgs),
    /// Write a synthetic dataset with planted correspondences.
    Synth(SynthArgs),
    /// Compare analytic gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Write the attention maps and object reordering of one pair.
    DumpAttention(DumpArgs),
}

/// Hyperparameters; each flag overrides the same key from `--config`.
#[derive(Args)]
struct ConfigArgs {
    /// Flat `key=value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = ["flickr", "coco"])]
    profile: Option<String>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    beta_w: Option<f64>,
    #[arg(long)]
    beta_o: Option<f64>,
    /// Triplet margin.
    #[arg(long)]
    gamma: Option<f64>,
    /// Negatives kept per text by early selection.
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Joint embedding width.
    #[arg(long)]
    h: Option<usize>,
    /// Word embedding width.
    #[arg(long)]
    q: Option<usize>,
    /// Expected objects per image.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["word", "object", "ensemble"])]
    objective: Option<String>,
    #[arg(long, value_parser = ["multi-stage", "matching-only"])]
    schedule: Option<String>,
    /// Global gradient-norm bound, or `none`.
    #[arg(long)]
    clip_norm: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<Config> {
        let mut overrides = Vec::new();
        let mut push = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                overrides.push((key.to_string(), v));
            }
        };
        push("profile", self.profile.clone());
        push("lambda1", self.lambda1.map(|v| v.to_string()));
        push("lambda2", self.lambda2.map(|v| v.to_string()));
        push("beta_w", self.beta_w.map(|v| v.to_string()));
        push("beta_o", self.beta_o.map(|v| v.to_string()));
        push("gamma", self.gamma.map(|v| v.to_string()));
        push("d", self.d.map(|v| v.to_string()));
        push("lr", self.lr.map(|v| v.to_string()));
        push("batch_size", self.batch_size.map(|v| v.to_string()));
        push("h", self.h.map(|v| v.to_string()));
        push("q", self.q.map(|v| v.to_string()));
        push("k", self.k.map(|v| v.to_string()));
        push("epochs", self.epochs.map(|v| v.to_string()));
        push("seed", self.seed.map(|v| v.to_string()));
        push("objective", self.objective.clone());
        push("schedule", self.schedule.clone());
        push("clip_norm", self.clip_norm.clone());
        let file = match &self.config {
            Some(p) => Some(
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            ),
            None => None,
        };
        Ok(Config::resolve(file.as_deref(), &overrides)?)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints and the loss log.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "train")]
    split: Split,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to score with; pass twice to average two models.
    #[arg(long, required = true)]
    checkpoint: Vec<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long, default_value_t = 1)]
    folds: usize,
    /// Also report the AUC of positives against designated hard negatives.
    #[arg(long)]
    hard_negative_auc: bool,
    /// Write the report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, required = true)]
    checkpoint: Vec<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Image id (ranks texts) or text id (ranks images).
    #[arg(long)]
    query: String,
    #[arg(long, default_value_t = 5)]
    top_k: usize,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = SynthConfig::default().concepts)]
    concepts: usize,
    #[arg(long, default_value_t = SynthConfig::default().train_pairs)]
    train_pairs: usize,
    #[arg(long, default_value_t = SynthConfig::default().val_pairs)]
    val_pairs: usize,
    #[arg(long, default_value_t = SynthConfig::default().test_pairs)]
    test_pairs: usize,
    /// Objects per image.
    #[arg(long, default_value_t = SynthConfig::default().objects)]
    objects: usize,
    #[arg(long, default_value_t = SynthConfig::default().max_words)]
    max_words: usize,
    #[arg(long, default_value_t = SynthConfig::default().concepts_per_image)]
    concepts_per_image: usize,
    /// Standard deviation of per-coordinate descriptor noise.
    #[arg(long, default_value_t = SynthConfig::default().noise)]
    noise: f64,
    #[arg(long, default_value_t = SynthConfig::default().feature_dim)]
    feature_dim: usize,
    /// `plain` or `order-sensitive`.
    #[arg(long, default_value = "plain")]
    mode: SynthMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DumpArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long)]
    image: String,
    #[arg(long)]
    text: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Retrieve(a) => retrieve(a),
        Command::Synth(a) => synth(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::DumpAttention(a) => dump(a),
    }
}

fn load_split(data: &Path, split: Split) -> Result<(Dataset, Corpus)> {
    let dataset = Dataset::load(data)?;
    let corpus = dataset.corpus(split)?;
    if corpus.is_empty() {
        bail!("split {split} of {} is empty", data.display());
    }
    Ok((dataset, corpus))
}

fn load_models(paths: &[PathBuf], dataset: &Dataset) -> Result<Vec<Model>> {
    paths
        .iter()
        .map(|p| {
            let model = Checkpoint::load(p)?.model()?;
            if model.config.dims.vocab != dataset.vocab.len() {
                bail!(
                    "{}: model vocabulary of {} tokens does not match the dataset's {}",
                    p.display(),
                    model.config.dims.vocab,
                    dataset.vocab.len()
                );
            }
            Ok(model)
        })
        .collect()
}

fn write_output(out: Option<&Path>, body: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, body).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let config = a.config.resolve()?;
    let (dataset, corpus) = load_split(&a.data, a.split)?;
    let feature_dim = corpus.images[0].feature_dim();
    let model = Model::init(
        config.model_config(dataset.vocab.len(), feature_dim),
        config.seed,
    )?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let log_path = a.out.join("loss.log");
    let mut log = String::new();
    let outcome = train_with(
        &corpus,
        model,
        &config.train_config(),
        &mut |entry, model| {
            let _ = writeln!(
                log,
                "epoch={} lr={:e} rve={} loss={:.6} batches={} rve_invocations={}",
                entry.epoch + 1,
                entry.learning_rate,
                entry.stage.rve,
                entry.mean_loss,
                entry.batches,
                entry.rve_invocations
            );
            std::fs::write(&log_path, &log).map_err(|e| dprnn::Error::Io {
                path: log_path.clone(),
                source: e,
            })?;
            Checkpoint::new(config.clone(), model)
                .save(&a.out.join(format!("epoch-{:03}.ckpt", entry.epoch + 1)))
        },
    )?;
    let final_path = a.out.join("model.ckpt");
    Checkpoint::new(config, &outcome.model).save(&final_path)?;
    info!("wrote {}", final_path.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let (dataset, corpus) = load_split(&a.data, a.split)?;
    let models = load_models(&a.checkpoint, &dataset)?;
    let refs: Vec<&Model> = models.iter().collect();
    let report = evaluate(&refs, &corpus, a.folds)?;
    let mut body = report.to_text();
    if a.hard_negative_auc {
        if corpus.hard_negatives.is_empty() {
            bail!("split {} has no designated hard negatives", a.split);
        }
        let _ = writeln!(
            body,
            "hard_negative_auc={:.4}",
            hard_negative_auc(&refs, &corpus)?
        );
    }
    write_output(a.out.as_deref(), &body)
}

fn retrieve(a: RetrieveArgs) -> Result<()> {
    let (dataset, corpus) = load_split(&a.data, a.split)?;
    let models = load_models(&a.checkpoint, &dataset)?;
    let image = corpus.images.iter().position(|i| i.id() == a.query);
    let text = corpus.texts.iter().position(|t| t.id() == a.query);
    let mut scored: Vec<(String, f64)> = match (image, text) {
        (Some(i), _) => {
            let texts: Vec<_> = corpus.texts.iter().collect();
            let mut total = vec![0.0; texts.len()];
            for m in &models {
                let s = m.similarity_matrix(&[&corpus.images[i]], &texts)?;
                for (t, v) in total.iter_mut().zip(s.row(0)) {
                    *t += v / models.len() as f64;
                }
            }
            texts
                .iter()
                .map(|t| t.id().to_string())
                .zip(total)
                .collect()
        }
        (None, Some(t)) => {
            let images: Vec<_> = corpus.images.iter().collect();
            let mut total = vec![0.0; images.len()];
            for m in &models {
                let s = m.similarity_matrix(&images, &[&corpus.texts[t]])?;
                for (r, v) in total.iter_mut().enumerate() {
                    *v += s.get(r, 0) / models.len() as f64;
                }
            }
            images
                .iter()
                .map(|i| i.id().to_string())
                .zip(total)
                .collect()
        }
        (None, None) => bail!(
            "no image or text with id {:?} in split {}",
            a.query,
            a.split
        ),
    };
    // Stable sort keeps ties in candidate order.
    scored.sort_by(|x, y| y.1.total_cmp(&x.1));
    let mut out = String::new();
    for (rank, (id, score)) in scored.iter().take(a.top_k).enumerate() {
        let _ = writeln!(out, "{}\t{id}\t{score:.6}", rank + 1);
    }
    print!("{out}");
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        concepts: a.concepts,
        train_pairs: a.train_pairs,
        val_pairs: a.val_pairs,
        test_pairs: a.test_pairs,
        objects: a.objects,
        max_words: a.max_words,
        concepts_per_image: a.concepts_per_image,
        noise: a.noise,
        feature_dim: a.feature_dim,
        mode: a.mode,
        seed: a.seed,
    };
    let manifest = generate(&cfg)?.write(&a.out)?;
    println!("{}", manifest.display());
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let results = run_suite(a.seed)?;
    let mut failed = 0;
    for r in &results {
        let verdict = if r.passed() { "ok" } else { "FAILED" };
        println!(
            "{:<40} {:>6} entries  max rel error {:.3e}  {verdict}",
            r.name, r.entries, r.max_rel_error
        );
        failed += usize::from(!r.passed());
    }
    if failed > 0 {
        return Err(anyhow!(
            "{failed} of {} gradient checks failed",
            results.len()
        ));
    }
    Ok(())
}

fn dump(a: DumpArgs) -> Result<()> {
    let (dataset, corpus) = load_split(&a.data, a.split)?;
    let model = load_models(std::slice::from_ref(&a.checkpoint), &dataset)?.remove(0);
    let image = corpus
        .images
        .iter()
        .find(|i| i.id() == a.image)
        .ok_or_else(|| anyhow!("no image {:?} in split {}", a.image, a.split))?;
    let text = corpus
        .texts
        .iter()
        .find(|t| t.id() == a.text)
        .ok_or_else(|| anyhow!("no text {:?} in split {}", a.text, a.split))?;
    let words = dataset.text_words(&a.text).unwrap_or_default();
    let body = dump_attention(&model, image, text, words)?;
    write_output(a.out.as_deref(), &body)
}
