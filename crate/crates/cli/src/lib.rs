//! Command-line interface: training, evaluation, cross-validation, the
//! perturbation-subset study, scoring, ranking, curation, score
//! distributions, and the HTTP service.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::io::{self, BufRead, Read, Write};
use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use claimspot::adversary::{perturbable_set, PerturbSubset};
use claimspot::checkpoint::{save_checkpoint, Checkpoint};
use claimspot::corpus::{
    consensus_label, curate_ratio, load_cbd, load_clef, save_tsv, stratified_holdout, CoderRecord, Label,
    LabeledSentence, QualityRule,
};
use claimspot::metrics::{
    classification_report, cross_validate, ranking_report, score_distribution, CrossValOptions, CrossValReport,
};
use claimspot::scoring::Scorer;
use claimspot::text::{encode_labeled, BasicTokenizer, Vocab};
use claimspot::trainer::{train, RunConfig};
use claimspot::Error;
use serde::Serialize;
use serde_json::json;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "claimspot", version, about = "Check-worthy claim spotting with adversarial training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Settings shared by every training subcommand. Flags override the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainFlags {
    /// Flat JSON config with model-shape and cs_* training keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train with adversarial perturbations (`--adversarial false` for the standard objective).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub adversarial: Option<bool>,
    /// Embedding subset to perturb, 0-6.
    #[arg(long)]
    pub perturb_id: Option<u8>,
    /// Perturbation norm bound.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Weight of the adversarial loss.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on a dataset and write a checkpoint.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        flags: TrainFlags,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a labeled dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Stratified k-fold cross-validation with a pooled report.
    Crossval {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        flags: TrainFlags,
        #[arg(long, default_value_t = 4)]
        folds: usize,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Cross-validate adversarial training for each of the seven perturbation subsets.
    PerturbStudy {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        flags: TrainFlags,
        #[arg(long, default_value_t = 4)]
        folds: usize,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Print one check-worthiness score per input line.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sentences, one per line; standard input when absent.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Rank sentences by score; with a labeled dataset also report MAP, P@k and nDCG.
    Rank {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Labeled dataset (file, or directory with one query per file).
        #[arg(long, conflicts_with = "input")]
        dataset: Option<PathBuf>,
        /// Unlabeled sentences, one per line.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Curate a dataset to a NCS:CFS ratio, optionally deriving labels by consensus first.
    Curate {
        #[arg(long, required_unless_present = "labels")]
        dataset: Option<PathBuf>,
        /// Target NCS sentences per CFS sentence.
        #[arg(long, default_value_t = 2.5)]
        ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Raw survey labels as `text<TAB>coder_id<TAB>label` rows.
        #[arg(long, requires = "coders")]
        labels: Option<PathBuf>,
        /// JSON list of coder records.
        #[arg(long)]
        coders: Option<PathBuf>,
        #[arg(long, default_value_t = 5.0)]
        min_pay_rate: f64,
        #[arg(long, default_value_t = 100)]
        min_answered: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Histogram of check-worthiness scores.
    Dist {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, conflicts_with = "input")]
        dataset: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Serve `POST /score/text` and `GET /healthz`.
    Serve {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Falls back to the PORT variable, then 8080.
        #[arg(long)]
        port: Option<u16>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(Error::Config(_)) => EXIT_USAGE,
            CliError::Core(e) if e.is_numeric() => EXIT_NUMERIC,
            CliError::Core(Error::Dimension { .. } | Error::Contract(_) | Error::State(_)) => EXIT_NUMERIC,
            CliError::Core(_) => EXIT_DATA,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Train { dataset, flags, out } => cmd_train(&dataset, &flags, &out),
        Command::Eval { checkpoint, dataset, out } => cmd_eval(&checkpoint, &dataset, &out),
        Command::Crossval {
            dataset,
            flags,
            folds,
            jobs,
            out,
        } => {
            let config = resolve_config(&flags)?;
            let sentences = load_sentences(&dataset)?;
            let report = crossval(&sentences, &config, folds, jobs)?;
            let path = write_json(&out, "crossval_report.json", &report)?;
            eprintln!(
                "pooled weighted F1 {:.4}, nDCG {:.4}; report at {}",
                report.pooled.weighted_f1,
                report.pooled_ndcg,
                path.display()
            );
            Ok(())
        }
        Command::PerturbStudy {
            dataset,
            flags,
            folds,
            jobs,
            out,
        } => cmd_perturb_study(&dataset, &flags, folds, jobs, &out),
        Command::Score { checkpoint, input } => cmd_score(&checkpoint, input.as_deref()),
        Command::Rank {
            checkpoint,
            dataset,
            input,
            out,
        } => cmd_rank(&checkpoint, dataset.as_deref(), input.as_deref(), &out),
        Command::Curate {
            dataset,
            ratio,
            seed,
            labels,
            coders,
            min_pay_rate,
            min_answered,
            out,
        } => cmd_curate(
            dataset.as_deref(),
            ratio,
            seed,
            labels.as_deref().zip(coders.as_deref()),
            QualityRule {
                min_pay_rate,
                min_answered,
            },
            &out,
        ),
        Command::Dist {
            checkpoint,
            dataset,
            input,
            out,
        } => cmd_dist(&checkpoint, dataset.as_deref(), input.as_deref(), &out),
        Command::Serve { checkpoint, port } => cmd_serve(checkpoint.as_deref(), port),
    }
}

/// Config file (or defaults) with flag overrides applied.
pub fn resolve_config(flags: &TrainFlags) -> CliResult<RunConfig> {
    let mut config = match &flags.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = flags.seed {
        config.train.seed = seed;
    }
    if let Some(adv) = flags.adversarial {
        config.train.adversarial = adv;
    }
    if let Some(id) = flags.perturb_id {
        config.train.cs_perturb_id = PerturbSubset::from_id(id)?;
    }
    if let Some(eps) = flags.epsilon {
        config.train.cs_perturb_norm_length = eps;
    }
    if let Some(lambda) = flags.lambda {
        config.train.cs_lambda = lambda;
    }
    config.validate()?;
    Ok(config)
}

/// A directory is read as transcripts (all files pooled), a file as a
/// labeled-sentence table.
pub fn load_sentences(path: &Path) -> CliResult<Vec<LabeledSentence>> {
    if path.is_dir() {
        Ok(load_clef(path)?.sentences().cloned().collect())
    } else {
        Ok(load_cbd(path)?)
    }
}

/// One ranking query per transcript file, or a single query for a table.
fn load_queries(path: &Path) -> CliResult<Vec<Vec<LabeledSentence>>> {
    if path.is_dir() {
        Ok(load_clef(path)?.files.into_iter().map(|f| f.sentences).collect())
    } else {
        Ok(vec![load_cbd(path)?])
    }
}

fn read_lines(input: Option<&Path>) -> CliResult<Vec<String>> {
    let mut text = String::new();
    match input {
        Some(p) => text = fs::read_to_string(p).map_err(|e| Error::file(p, e))?,
        None => {
            io::stdin().lock().read_to_string(&mut text)?;
        }
    }
    Ok(text.lines().map(str::to_owned).collect())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> CliResult<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).map_err(Error::Json)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::file(&path, e))?;
    Ok(path)
}

pub fn crossval(sentences: &[LabeledSentence], config: &RunConfig, folds: usize, jobs: usize) -> CliResult<CrossValReport> {
    let options = CrossValOptions {
        folds,
        seed: config.train.seed,
        jobs,
        ..CrossValOptions::default()
    };
    Ok(cross_validate(sentences, config, &BasicTokenizer, &options)?)
}

fn cmd_train(dataset: &Path, flags: &TrainFlags, out: &Path) -> CliResult<()> {
    let config = resolve_config(flags)?;
    let sentences = load_sentences(dataset)?;
    let labels: Vec<Label> = sentences.iter().map(|s| s.label).collect();
    let all: Vec<usize> = (0..sentences.len()).collect();
    let (train_idx, val_idx) = stratified_holdout(&all, &labels, 0.1, config.train.seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| sentences[i].clone()).collect::<Vec<_>>();
    let (train_s, val_s) = (pick(&train_idx), pick(&val_idx));

    let texts: Vec<&str> = train_s.iter().map(|s| s.text.as_str()).collect();
    let vocab = Vocab::build(&texts, config.model.vocab_size, &BasicTokenizer)?;
    let mut model = config.model.clone();
    model.vocab_size = vocab.len();
    let train_e = encode_labeled(&train_s, &vocab, &BasicTokenizer, model.seq_len)?;
    let val_e = encode_labeled(&val_s, &vocab, &BasicTokenizer, model.seq_len)?;
    eprintln!(
        "training on {} sentences, validating on {} ({} epochs, {})",
        train_e.len(),
        val_e.len(),
        config.train.epochs(),
        if config.train.adversarial { "adversarial" } else { "standard" }
    );
    let outcome = train(&train_e, &val_e, &model, &config.train, None)?;
    fs::create_dir_all(out).map_err(|e| Error::file(out, e))?;
    let ckpt_path = out.join("model.ckpt");
    let id = save_checkpoint(&Checkpoint::new(outcome.params, vocab)?, &ckpt_path)?;
    let report = json!({
        "config": config.to_json(),
        "checkpoint": ckpt_path,
        "checkpoint_id": id,
        "best_epoch": outcome.best_epoch,
        "best_validation_weighted_f1": outcome.best_weighted_f1,
        "history": outcome.history,
        "passes": { "forward": outcome.counts.forward, "backward": outcome.counts.backward },
    });
    write_json(out, "train_report.json", &report)?;
    eprintln!(
        "selected epoch {} (validation weighted F1 {:.4}); checkpoint {} at {}",
        outcome.best_epoch,
        outcome.best_weighted_f1,
        id,
        ckpt_path.display()
    );
    Ok(())
}

fn cmd_eval(checkpoint: &Path, dataset: &Path, out: &Path) -> CliResult<()> {
    let scorer = Scorer::load(checkpoint)?;
    let queries = load_queries(dataset)?;
    let mut gold = Vec::new();
    let mut predicted = Vec::new();
    let mut ranked = Vec::with_capacity(queries.len());
    for query in &queries {
        let texts: Vec<&str> = query.iter().map(|s| s.text.as_str()).collect();
        let predictions = scorer.score(&texts)?;
        ranked.push(
            predictions
                .iter()
                .zip(query)
                .map(|(p, s)| (p.cws, s.label == Label::Cfs))
                .collect::<Vec<_>>(),
        );
        gold.extend(query.iter().map(|s| s.label));
        predicted.extend(predictions.iter().map(|p| p.label));
    }
    let classification = classification_report(&predicted, &gold)?;
    let ranking = ranking_report(&ranked)?;
    let report = json!({
        "checkpoint_id": scorer.checkpoint_id(),
        "classification": classification,
        "ranking": ranking,
    });
    let path = write_json(out, "eval_report.json", &report)?;
    println!(
        "weighted F1 {:.4}  macro F1 {:.4}  MAP {:.4}  nDCG {:.4}",
        classification.weighted_f1, classification.macro_f1, ranking.map, ranking.ndcg
    );
    eprintln!("report at {}", path.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct StudyRow {
    id: u8,
    components: String,
    precision_ncs: f64,
    precision_cfs: f64,
    recall_ncs: f64,
    recall_cfs: f64,
    f1_ncs: f64,
    f1_cfs: f64,
    weighted_f1: f64,
}

fn cmd_perturb_study(dataset: &Path, flags: &TrainFlags, folds: usize, jobs: usize, out: &Path) -> CliResult<()> {
    let mut base = resolve_config(flags)?;
    base.train.adversarial = true;
    let sentences = load_sentences(dataset)?;
    let mut rows = Vec::with_capacity(7);
    let mut reports = Vec::with_capacity(7);
    println!("id\tcomponents\tP_NCS\tP_CFS\tR_NCS\tR_CFS\tF1_NCS\tF1_CFS");
    for subset in perturbable_set() {
        let mut config = base.clone();
        config.train.cs_perturb_id = subset;
        let report = crossval(&sentences, &config, folds, jobs)?;
        let p = &report.pooled;
        let row = StudyRow {
            id: subset.id(),
            components: subset.label(),
            precision_ncs: p.ncs.precision,
            precision_cfs: p.cfs.precision,
            recall_ncs: p.ncs.recall,
            recall_cfs: p.cfs.recall,
            f1_ncs: p.ncs.f1,
            f1_cfs: p.cfs.f1,
            weighted_f1: p.weighted_f1,
        };
        println!(
            "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
            row.id,
            row.components,
            row.precision_ncs,
            row.precision_cfs,
            row.recall_ncs,
            row.recall_cfs,
            row.f1_ncs,
            row.f1_cfs
        );
        rows.push(row);
        reports.push(report);
    }
    write_json(out, "perturb_study.json", &json!({ "rows": rows, "reports": reports }))?;
    Ok(())
}

fn cmd_score(checkpoint: &Path, input: Option<&Path>) -> CliResult<()> {
    let scorer = Scorer::load(checkpoint)?;
    let lines = read_lines(input)?;
    let predictions = scorer.score(&lines)?;
    let stdout = io::stdout();
    let mut w = io::BufWriter::new(stdout.lock());
    for p in predictions {
        writeln!(w, "{}", p.cws)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_rank(checkpoint: &Path, dataset: Option<&Path>, input: Option<&Path>, out: &Path) -> CliResult<()> {
    let scorer = Scorer::load(checkpoint)?;
    let stdout = io::stdout();
    let mut w = io::BufWriter::new(stdout.lock());
    let Some(dataset) = dataset else {
        let lines = read_lines(input)?;
        let predictions = scorer.score(&lines)?;
        let scores: Vec<f64> = predictions.iter().map(|p| p.cws).collect();
        for i in claimspot::metrics::rank_by_score(&scores) {
            writeln!(w, "{:.6}\t{}", scores[i], lines[i])?;
        }
        w.flush()?;
        return Ok(());
    };
    let queries = load_queries(dataset)?;
    let mut ranked = Vec::with_capacity(queries.len());
    for query in &queries {
        let texts: Vec<&str> = query.iter().map(|s| s.text.as_str()).collect();
        let scores: Vec<f64> = scorer.score(&texts)?.iter().map(|p| p.cws).collect();
        for i in claimspot::metrics::rank_by_score(&scores) {
            writeln!(w, "{:.6}\t{}\t{}", scores[i], query[i].label, query[i].text)?;
        }
        ranked.push(
            scores
                .iter()
                .zip(query)
                .map(|(&c, s)| (c, s.label == Label::Cfs))
                .collect::<Vec<_>>(),
        );
    }
    w.flush()?;
    let report = ranking_report(&ranked)?;
    write_json(out, "rank_report.json", &report)?;
    eprintln!(
        "MAP {:.4}  P@10 {:.4}  P@20 {:.4}  P@50 {:.4}  nDCG {:.4}",
        report.map, report.precision_at_10, report.precision_at_20, report.precision_at_50, report.ndcg
    );
    Ok(())
}

/// Reads `text<TAB>coder_id<TAB>label` rows and keeps sentences whose
/// high-quality coders agree unanimously, in first-seen order.
fn consensus_dataset(labels: &Path, coders: &Path, rule: QualityRule) -> CliResult<(Vec<LabeledSentence>, usize)> {
    let text = fs::read_to_string(coders).map_err(|e| Error::file(coders, e))?;
    let records: Vec<CoderRecord> = serde_json::from_str(&text).map_err(Error::Json)?;
    let mut quality = HashMap::new();
    for r in &records {
        quality.insert(r.coder_id.clone(), rule.is_high_quality(r)?);
    }
    let file = fs::File::open(labels).map_err(|e| Error::file(labels, e))?;
    let mut order: Vec<String> = Vec::new();
    let mut votes: HashMap<String, Vec<(Label, bool)>> = HashMap::new();
    for (i, row) in io::BufReader::new(file).lines().enumerate() {
        let row = row?;
        let line = i + 1;
        if row.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = row.split('\t').collect();
        let [text, coder, raw] = cols[..] else {
            return Err(Error::Parse {
                line,
                message: format!("expected text, coder id and label, found {} columns", cols.len()),
            }
            .into());
        };
        let label = Label::parse(raw).ok_or_else(|| Error::Label {
            line,
            label: raw.to_owned(),
        })?;
        let hq = quality.get(coder).copied().unwrap_or(false);
        let entry = votes.entry(text.to_owned()).or_insert_with(|| {
            order.push(text.to_owned());
            Vec::new()
        });
        entry.push((label, hq));
    }
    let total = order.len();
    let sentences = order
        .into_iter()
        .filter_map(|text| {
            let label = consensus_label(&votes[&text])?;
            Some(LabeledSentence::new(text, label))
        })
        .collect();
    Ok((sentences, total))
}

fn cmd_curate(
    dataset: Option<&Path>,
    ratio: f64,
    seed: u64,
    survey: Option<(&Path, &Path)>,
    rule: QualityRule,
    out: &Path,
) -> CliResult<()> {
    let (sentences, consensus) = match (survey, dataset) {
        (Some((labels, coders)), _) => {
            let (s, total) = consensus_dataset(labels, coders, rule)?;
            let kept = s.len();
            (s, Some(json!({ "sentences": total, "with_consensus": kept, "rule": rule })))
        }
        (None, Some(d)) => (load_sentences(d)?, None),
        (None, None) => return Err(CliError::Usage("curate needs --dataset or --labels".into())),
    };
    let (curated, report) = curate_ratio(&sentences, ratio, seed)?;
    fs::create_dir_all(out).map_err(|e| Error::file(out, e))?;
    save_tsv(&curated, &out.join("curated.tsv"))?;
    write_json(out, "curation_report.json", &json!({ "curation": report, "consensus": consensus }))?;
    eprintln!(
        "kept {} NCS / {} CFS of {} NCS / {} CFS",
        report.after.ncs, report.after.cfs, report.before.ncs, report.before.cfs
    );
    Ok(())
}

fn cmd_dist(checkpoint: &Path, dataset: Option<&Path>, input: Option<&Path>, out: &Path) -> CliResult<()> {
    let scorer = Scorer::load(checkpoint)?;
    let report = match dataset {
        Some(d) => {
            let sentences = load_sentences(d)?;
            let texts: Vec<&str> = sentences.iter().map(|s| s.text.as_str()).collect();
            let scores: Vec<f64> = scorer.score(&texts)?.iter().map(|p| p.cws).collect();
            let by_class = |label: Label| {
                let picked: Vec<f64> = scores
                    .iter()
                    .zip(&sentences)
                    .filter(|(_, s)| s.label == label)
                    .map(|(&c, _)| c)
                    .collect();
                score_distribution(&picked)
            };
            json!({
                "all": score_distribution(&scores)?,
                "ncs": by_class(Label::Ncs)?,
                "cfs": by_class(Label::Cfs)?,
            })
        }
        None => {
            let lines = read_lines(input)?;
            let scores: Vec<f64> = scorer.score(&lines)?.iter().map(|p| p.cws).collect();
            json!({ "all": score_distribution(&scores)? })
        }
    };
    let path = write_json(out, "distribution.json", &report)?;
    println!("{}", serde_json::to_string(&report["all"]["counts"]).map_err(Error::Json)?);
    eprintln!("distribution at {}", path.display());
    Ok(())
}

fn cmd_serve(checkpoint: Option<&Path>, port: Option<u16>) -> CliResult<()> {
    let port = claimspot_service::resolve_port(port).map_err(CliError::Usage)?;
    let model = checkpoint.map(Scorer::load).transpose()?.map(Arc::new);
    if model.is_none() {
        eprintln!("no checkpoint given; every request will answer 503");
    }
    let addr = SocketAddr::from((Ipv4Addr::UNSPECIFIED, port));
    eprintln!("listening on {addr}");
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(claimspot_service::serve(model, addr))?;
    Ok(())
}
