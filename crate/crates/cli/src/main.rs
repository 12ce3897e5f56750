//! `msas`: train, evaluate and apply the multi-scale essay scorer.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use msas_core::config::RunConfig;
use msas_core::corpus::{
    crp_prompt, denormalize_score, load_asap_tsv, load_crp_csv, make_folds, out_of_domain_pool, percentile_budget,
    Essay, PromptSet, PromptSpec, Rounding,
};
use msas_core::gradcheck::{self, ToyConfig};
use msas_core::multiscale::MultiScaleModel;
use msas_core::tokenizer::{wordpiece_tokenize, Vocabulary};
use msas_core::trainer::{
    self, evaluate_split, fit, greedy_scale_search, parse_scale_range, prepare_examples, prepare_pool,
    transfer_pipeline, with_jobs, CachedEvaluator, Checkpoint, FitSummary, FoldData, ScaleEvaluator,
    ScaleSearchState,
};
use msas_core::Error;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const EXIT_GRADCHECK: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_ABORTED: u8 = 3;

#[derive(Parser)]
#[command(name = "msas", version, about = "Multi-scale essay scoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on every fold (or the configured folds) and write checkpoints and reports.
    Train(RunArgs),
    /// Score essays with a checkpoint and write a TSV.
    Score(ScoreArgs),
    /// Report metrics of a checkpoint on labelled essays.
    Evaluate(EvaluateArgs),
    /// Greedy search over segment scales, trained on one fold per combination.
    SearchScales(SearchArgs),
    /// Finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
    /// Write the five-fold split of the selected prompt.
    MakeFolds(RunArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    prompt: Option<i64>,
    /// Pretrain on the other prompts first.
    #[arg(long)]
    transfer: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root for relative dataset paths.
    #[arg(long, env = "MSAS_DATA_DIR")]
    data_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// TSV with `essay_id` and `essay` columns.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Reject the checkpoint unless it was trained with this config.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// ASAP-style TSV with labels.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Candidate scales as START:END:STEP.
    #[arg(long, default_value = "10:190:20")]
    scales: String,
    /// Replay dev scores from an earlier search report instead of training.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Toy model settings (JSON); built-in defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Score(a) => cmd_score(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::SearchScales(a) => cmd_search_scales(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::MakeFolds(a) => cmd_make_folds(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(Error::TrainingAborted(_)) => EXIT_ABORTED,
        _ => EXIT_INVALID,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Config after flag overrides, normalized and validated.
fn load_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(p) = args.prompt {
        cfg.prompt = p;
    }
    if args.transfer {
        cfg.transfer = true;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(j) = args.jobs {
        cfg.jobs = j;
    }
    if let Some(o) = &args.out {
        cfg.out_dir = o.clone();
    }
    cfg.normalize();
    cfg.validate()?;
    Ok(cfg)
}

/// Everything a run needs from the datasets.
struct Corpus {
    essays: Vec<Essay>,
    prompts: PromptSet,
    spec: PromptSpec,
    vocab: Vocabulary,
}

impl Corpus {
    fn load(cfg: &RunConfig, data_dir: Option<&Path>) -> Result<Self> {
        let mut prompts = match &cfg.data.prompts {
            Some(p) => PromptSet::load(&RunConfig::resolve(p, data_dir))?,
            None => {
                let mut set = PromptSet::asap();
                set.insert(crp_prompt())?;
                set
            }
        };
        let mut essays = Vec::new();
        if let Some(p) = &cfg.data.asap_tsv {
            essays.extend(load_asap_tsv(&RunConfig::resolve(p, data_dir), &prompts)?);
        }
        if let Some(p) = &cfg.data.crp_csv {
            essays.extend(load_crp_csv(&RunConfig::resolve(p, data_dir))?);
        }
        if cfg.data.asap_tsv.is_none() && cfg.data.crp_csv.is_none() {
            return Err(Error::InvalidArgument("config names no dataset (data.asap_tsv or data.crp_csv)".into()).into());
        }
        if !essays.iter().any(|e| e.prompt_id == cfg.prompt) {
            return Err(Error::InvalidArgument(format!("no essays for prompt {}", cfg.prompt)).into());
        }
        let vocab = Vocabulary::build(essays.iter().map(|e| e.text.as_str()), cfg.encoder.vocab_size)?;
        let spec = prompts
            .get_mut(cfg.prompt)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown prompt {}", cfg.prompt)))?;
        if spec.n_p.is_none() {
            let lengths: Vec<usize> = essays
                .iter()
                .filter(|e| e.prompt_id == cfg.prompt)
                .map(|e| wordpiece_tokenize(&e.text, &vocab).len())
                .collect();
            spec.n_p = Some(percentile_budget(&lengths)?);
        }
        let spec = spec.clone();
        Ok(Corpus {
            essays,
            prompts,
            spec,
            vocab,
        })
    }

    fn target(&self) -> Vec<Essay> {
        self.essays.iter().filter(|e| e.prompt_id == self.spec.prompt_id).cloned().collect()
    }

    fn folds(&self, cfg: &RunConfig, model: &MultiScaleModel) -> Result<Vec<FoldData>> {
        let target = self.target();
        let examples = prepare_examples(model, &target, &self.spec, &self.vocab)?;
        make_folds(&target, cfg.seed)?
            .iter()
            .filter(|s| cfg.folds.is_empty() || cfg.folds.contains(&s.fold_index))
            .map(|s| Ok(FoldData::from_split(&examples, s)?))
            .collect()
    }
}

/// Header metadata stored alongside the weights.
#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    prompt_spec: PromptSpec,
    report: trainer::MetricsReport,
}

#[derive(Serialize)]
struct Summary {
    prompt: i64,
    transfer: bool,
    folds: Vec<trainer::MetricsReport>,
    mean_test_qwk: Option<f64>,
    mean_test_rmse: f64,
    pretrain_losses: Vec<f64>,
    config_hash: String,
}

fn cmd_train(args: &RunArgs) -> Result<ExitCode> {
    let cfg = load_config(args)?;
    let hash = cfg.hash()?;
    let corpus = Corpus::load(&cfg, args.data_dir.as_deref())?;
    let init = || cfg.build_model(corpus.vocab.len());
    let model = init()?;
    cfg.model.validate(corpus.spec.budget()?)?;
    let folds = corpus.folds(&cfg, &model)?;
    log::info!(
        "prompt {}: {} folds, n_p {}, vocabulary {}",
        cfg.prompt,
        folds.len(),
        corpus.spec.budget()?,
        corpus.vocab.len()
    );
    let (summary, pretrain_losses): (FitSummary, Vec<f64>) = with_jobs(cfg.jobs, || -> Result<_> {
        if cfg.transfer {
            let pool = out_of_domain_pool(&corpus.essays, &corpus.prompts, cfg.prompt)?;
            let pool = prepare_pool(&model, &pool, corpus.spec.budget()?, &corpus.vocab)?;
            log::info!("pretraining on {} out-of-domain essays", pool.len());
            let t = transfer_pipeline(init, &pool, &folds, &corpus.spec, &cfg.training)?;
            Ok((t.summary, t.pretrain_losses))
        } else {
            Ok((fit(init, &folds, &corpus.spec, &cfg.training)?, Vec::new()))
        }
    })??;

    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    write_json(&cfg.out_dir.join("config.json"), &cfg)?;
    let mut reports = Vec::new();
    for o in &summary.folds {
        let report = o.report(cfg.prompt, &hash);
        let dir = cfg.out_dir.join(format!("fold{}", o.fold_index));
        fs::create_dir_all(&dir)?;
        write_json(&dir.join("metrics.json"), &report)?;
        let meta = CheckpointMeta {
            prompt_spec: corpus.spec.clone(),
            report: report.clone(),
        };
        Checkpoint::new(
            o.model.params().clone(),
            &cfg.identity(),
            serde_json::to_value(&meta)?,
            o.best_epoch,
            corpus.vocab.tokens().to_vec(),
        )?
        .save(&dir.join("model.msas"))?;
        println!(
            "fold {}: best epoch {}, dev {}, test QWK {}, test RMSE {:.4}",
            o.fold_index,
            o.best_epoch,
            fmt_opt(o.dev.qwk),
            fmt_opt(o.test.qwk),
            o.test.rmse
        );
        reports.push(report);
    }
    println!(
        "mean over {} folds: test QWK {}, test RMSE {:.4}",
        reports.len(),
        fmt_opt(summary.mean_test_qwk),
        summary.mean_test_rmse
    );
    write_json(
        &cfg.out_dir.join("summary.json"),
        &Summary {
            prompt: cfg.prompt,
            transfer: cfg.transfer,
            folds: reports,
            mean_test_qwk: summary.mean_test_qwk,
            mean_test_rmse: summary.mean_test_rmse,
            pretrain_losses,
            config_hash: hash,
        },
    )?;
    Ok(ExitCode::SUCCESS)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
}

/// A checkpoint restored into a model, with its prompt and vocabulary.
struct Loaded {
    model: MultiScaleModel,
    spec: PromptSpec,
    vocab: Vocabulary,
}

fn load_checkpoint(path: &Path, config: Option<&Path>) -> Result<Loaded> {
    let ckpt = Checkpoint::load(path)?;
    if let Some(c) = config {
        let mut expected = RunConfig::load(c)?;
        expected.normalize();
        ckpt.verify_hash(&expected.hash()?)?;
    }
    let cfg: RunConfig = serde_json::from_value(ckpt.config.clone())
        .map_err(|e| Error::Checkpoint(format!("{}: config: {e}", path.display())))?;
    let meta: CheckpointMeta = serde_json::from_value(ckpt.metrics.clone())
        .map_err(|e| Error::Checkpoint(format!("{}: metadata: {e}", path.display())))?;
    let vocab = Vocabulary::from_tokens(ckpt.vocab.clone())?;
    let mut model = cfg.build_model(vocab.len())?;
    model.params_mut().load_values(&ckpt.params)?;
    Ok(Loaded {
        model,
        spec: meta.prompt_spec,
        vocab,
    })
}

fn read_essays_tsv(path: &Path) -> Result<Vec<(String, String)>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(true)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let headers = reader.headers()?.clone();
    if headers.iter().all(|h| h.trim().is_empty()) {
        return Ok(Vec::new());
    }
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Ingestion {
                location: format!("{}:1", path.display()),
                detail: format!("missing column {name:?}"),
            })
    };
    let (id, text) = (col("essay_id")?, col("essay")?);
    reader
        .records()
        .enumerate()
        .map(|(i, r)| {
            let r = r.with_context(|| format!("{}:{}", path.display(), i + 2))?;
            let field = |c: usize| r.get(c).map(str::to_string);
            match (field(id), field(text)) {
                (Some(a), Some(b)) => Ok((a, b)),
                _ => Err(Error::Ingestion {
                    location: format!("{}:{}", path.display(), i + 2),
                    detail: "missing essay_id or essay field".into(),
                }
                .into()),
            }
        })
        .collect()
}

fn cmd_score(args: &ScoreArgs) -> Result<ExitCode> {
    let loaded = load_checkpoint(&args.checkpoint, args.config.as_deref())?;
    let rows = if fs::metadata(&args.input).with_context(|| format!("reading {}", args.input.display()))?.len() == 0 {
        Vec::new()
    } else {
        read_essays_tsv(&args.input)?
    };
    let n_p = loaded.spec.budget()?;
    let scores = rows
        .par_iter()
        .map(|(_, text)| {
            let t1 = wordpiece_tokenize(text, &loaded.vocab);
            loaded.model.predict(&loaded.model.prepare(&t1, n_p, &loaded.vocab)?)
        })
        .collect::<msas_core::Result<Vec<_>>>()?;
    let mut scales = loaded.model.config().scales.clone();
    scales.sort_unstable();
    let mut out = String::from("essay_id\ty_total_normalized\tdenormalized_score\ty_doc_tok");
    for k in &scales {
        out.push_str(&format!("\ty_{k}"));
    }
    out.push('\n');
    let rounding = Rounding::for_spec(&loaded.spec);
    for ((id, _), s) in rows.iter().zip(&scores) {
        out.push_str(&format!(
            "{id}\t{}\t{}\t{}",
            s.y_total,
            denormalize_score(s.y_total, &loaded.spec, rounding),
            s.y_doc_tok
        ));
        for k in &scales {
            out.push_str(&format!("\t{}", s.per_scale[k]));
        }
        out.push('\n');
    }
    fs::File::create(&args.out)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!("scored {} essays into {}", rows.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<ExitCode> {
    let loaded = load_checkpoint(&args.checkpoint, args.config.as_deref())?;
    let prompts = PromptSet::new([loaded.spec.clone()])?;
    let essays = load_asap_tsv(&args.input, &prompts)?;
    if essays.is_empty() {
        bail!(Error::InvalidArgument(format!("{} holds no essays", args.input.display())));
    }
    let data = prepare_examples(&loaded.model, &essays, &loaded.spec, &loaded.vocab)?;
    let m = evaluate_split(&loaded.model, &data, &loaded.spec)?;
    let report = serde_json::json!({
        "prompt": loaded.spec.prompt_id,
        "essays": data.len(),
        "qwk": m.qwk,
        "rmse": m.rmse,
        "mse_normalized": m.mse,
    });
    match &args.out {
        Some(p) => write_json(p, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(ExitCode::SUCCESS)
}

/// Trains the first selected fold for each scale combination and reports its
/// dev selection score. Independent combinations train in parallel.
struct TrainingEvaluator<'a> {
    cfg: &'a RunConfig,
    corpus: &'a Corpus,
}

impl TrainingEvaluator<'_> {
    fn score(&self, scales: &[usize]) -> msas_core::Result<f64> {
        let mut cfg = self.cfg.clone();
        cfg.model.scales = scales.to_vec();
        cfg.model.use_doc = true;
        cfg.model.use_tok = true;
        cfg.model.validate(self.corpus.spec.budget()?)?;
        let model = cfg.build_model(self.corpus.vocab.len())?;
        let folds = self
            .corpus
            .folds(&cfg, &model)
            .map_err(|e| Error::InvalidArgument(format!("{e:#}")))?;
        let fold = folds
            .first()
            .ok_or_else(|| Error::InvalidArgument("no fold selected".into()))?;
        let o = trainer::fit_fold(model, fold, &self.corpus.spec, &cfg.training)?;
        log::info!("scales {scales:?}: dev score {:.4}", o.dev.selection_score());
        Ok(o.dev.selection_score())
    }
}

impl ScaleEvaluator for TrainingEvaluator<'_> {
    fn evaluate(&mut self, scales: &[usize]) -> msas_core::Result<f64> {
        self.score(scales)
    }

    fn evaluate_many(&mut self, combos: &[Vec<usize>]) -> msas_core::Result<Vec<f64>> {
        combos.par_iter().map(|c| self.score(c)).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct SearchReport {
    prompt: i64,
    scales: Vec<usize>,
    state: ScaleSearchState,
    config_hash: String,
}

fn cmd_search_scales(args: &SearchArgs) -> Result<ExitCode> {
    let cfg = load_config(&args.run)?;
    let hash = cfg.hash()?;
    let scales = parse_scale_range(&args.scales)?;
    let state = match &args.cache {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let previous: SearchReport = serde_json::from_str(&text).map_err(Error::from)?;
            if previous.config_hash != hash {
                bail!(Error::ConfigHashMismatch {
                    expected: hash,
                    found: previous.config_hash
                });
            }
            greedy_scale_search(&scales, &mut CachedEvaluator::from_trace(&previous.state.trace))?
        }
        None => {
            let corpus = Corpus::load(&cfg, args.run.data_dir.as_deref())?;
            let mut eval = TrainingEvaluator { cfg: &cfg, corpus: &corpus };
            with_jobs(cfg.jobs, || greedy_scale_search(&scales, &mut eval))??
        }
    };
    for row in &state.trace {
        println!("{:?}\t{:?}\t{:.4}", row.stage, row.scales, row.qwk);
    }
    println!("QWK_ave {:.4}; selected: doc, tok {:?}", state.qwk_ave, state.selected);
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    write_json(
        &cfg.out_dir.join("scale_search.json"),
        &SearchReport {
            prompt: cfg.prompt,
            scales,
            state,
            config_hash: hash,
        },
    )?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<ExitCode> {
    let cfg: ToyConfig = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", p.display())))?
        }
        None => ToyConfig::default(),
    };
    let suites = gradcheck::run_all(&cfg)?;
    let mut failed = false;
    for s in &suites {
        let worst = s.worst();
        println!(
            "{}: {} cases, worst relative error {:.3e} ({}), tolerance {:.0e}: {}",
            s.suite,
            s.cases.len(),
            worst.map_or(0.0, |c| c.rel_error),
            worst.map_or("-", |c| c.name.as_str()),
            s.tolerance,
            if s.passed() { "ok" } else { "FAILED" }
        );
        for c in s.failures() {
            failed = true;
            println!("  failed: {} (relative error {:.3e})", c.name, c.rel_error);
        }
    }
    Ok(if failed {
        ExitCode::from(EXIT_GRADCHECK)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_make_folds(args: &RunArgs) -> Result<ExitCode> {
    let cfg = load_config(args)?;
    let corpus = Corpus::load(&cfg, args.data_dir.as_deref())?;
    let folds = make_folds(&corpus.target(), cfg.seed)?;
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    let path = cfg.out_dir.join("folds.json");
    write_json(
        &path,
        &serde_json::json!({"prompt": cfg.prompt, "seed": cfg.seed, "config_hash": cfg.hash()?, "folds": folds}),
    )?;
    for f in &folds {
        println!(
            "fold {}: {} train, {} dev, {} test",
            f.fold_index,
            f.train_ids.len(),
            f.dev_ids.len(),
            f.test_ids.len()
        );
    }
    Ok(ExitCode::SUCCESS)
}
