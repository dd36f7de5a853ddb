//! `thairom`: the transliteration pipeline as subcommands.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data errors.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::{json, Value};

use thairom_core::curation::{curate, materialize_training_file, CurationConfig, Materialize};
use thairom_core::data::{self, pairs_to_tsv, read_candidates, read_eval, read_labeled, read_pairs, scored_to_tsv, ScoredCandidate, SplitSpec, FEATURE_NAMES};
use thairom_core::decoding::{transliterate, BeamConfig};
use thairom_core::metrics::EvalReport;
use thairom_core::model::train::{examples_from_rows, train, LOG_FILE};
use thairom_core::model::{Checkpoint, RunConfig, Transformer};
use thairom_core::phonetics::{phonetic_distance, FeatureTable, ToyG2p};
use thairom_core::report::{to_stable_string, write_json};
use thairom_core::rtgs::{romanize_rtgs, rtgs_similarity, RtgsTables};
use thairom_core::selector::{fit_forest, kfold_cv, threshold_sweep, Forest, ForestConfig, MaxFeatures, DEFAULT_THRESHOLDS};

const DEFAULT_SEED: u64 = 42;

#[derive(Parser, Debug)]
#[command(name = "thairom", version, about = "Thai to Latin name transliteration pipeline", arg_required_else_help = true)]
struct Cli {
    /// Seed for every random choice (default 42; `train` falls back to the config file's seed)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for parallel stages (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// More log output (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the rule-based RTGS romanization of each argument
    Rtgs {
        #[arg(required = true)]
        text: Vec<String>,
    },
    /// Add phonetic_distance and rtgs_similarity columns to a thai/latin pair file
    Features {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the candidate selector on a labeled candidate file
    SelectTrain(SelectTrainArgs),
    /// Precision, recall, F1 and accuracy of a selector across thresholds
    SelectEval {
        #[arg(long)]
        forest: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated decision thresholds
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_THRESHOLDS.to_vec())]
        thresholds: Vec<f64>,
        /// Also write the table as JSON
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Append a selector probability column to a candidate file
    SelectScore {
        #[arg(long)]
        forest: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Leak removal, cutoff, split and upsampling of scored candidates
    Curate(CurateArgs),
    /// Train the transliteration model
    Train {
        /// key = value config file; `preset = toy|tiny|very_small|small` picks an architecture
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        valid: PathBuf,
        /// Checkpoint directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Ranked transliterations of one Thai name
    Translit {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        text: String,
        #[command(flatten)]
        beam: BeamArgs,
    },
    /// Score a checkpoint on an evaluation file
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        eval: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the ranked predictions as TSV
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[command(flatten)]
        beam: BeamArgs,
    },
}

#[derive(Args, Debug)]
struct SelectTrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    trees: usize,
    #[arg(long, default_value_t = 10)]
    max_depth: usize,
    #[arg(long, default_value_t = 2)]
    min_samples_split: usize,
    #[arg(long, default_value_t = 4)]
    min_samples_leaf: usize,
    /// sqrt, all, or a feature count
    #[arg(long, default_value = "sqrt")]
    max_features: String,
    /// Fit every tree on the full data instead of a bootstrap sample
    #[arg(long)]
    no_bootstrap: bool,
    /// Also run k-fold cross-validation and write `<out>.cv.json`
    #[arg(long)]
    cv: Option<usize>,
    /// Threshold for the cross-validation metrics
    #[arg(long, default_value_t = 0.5)]
    cv_threshold: f64,
}

#[derive(Args, Debug)]
struct CurateArgs {
    #[arg(long)]
    candidates: PathBuf,
    /// Evaluation file whose Thai names must not reach training
    #[arg(long)]
    eval: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    cutoff: f64,
    #[arg(long, default_value_t = 0.005)]
    valid_frac: f64,
    #[arg(long, default_value_t = 0.005)]
    test_frac: f64,
    /// replicate (one row per unit of weight) or weight-column
    #[arg(long, default_value = "replicate")]
    materialize: String,
}

#[derive(Args, Debug)]
struct BeamArgs {
    /// Candidates to return
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Beam width
    #[arg(long, default_value_t = 5)]
    beam: usize,
    /// Longest output in bytes, eos included
    #[arg(long, default_value_t = 64)]
    max_length: usize,
    #[arg(long, default_value_t = 1.0)]
    length_penalty: f64,
}

impl BeamArgs {
    fn config(&self) -> Result<BeamConfig> {
        let c = BeamConfig {
            beam_width: self.beam,
            k: self.k,
            max_length: self.max_length,
            length_penalty: self.length_penalty,
        };
        c.validate().map_err(|e| usage(e.to_string()))?;
        Ok(c)
    }
}

/// An error in how the command was invoked rather than in its data.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            // help and version requests go to stdout
            let _ = e.print();
            if matches!(e.kind(), clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                return ExitCode::from(1);
            }
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    match &cli.command {
        Command::Rtgs { text } => cmd_rtgs(text).context("rtgs"),
        Command::Features { pairs, out } => cmd_features(pairs, out).context("features"),
        Command::SelectTrain(a) => cmd_select_train(a, seed).context("select-train"),
        Command::SelectEval { forest, data, thresholds, out } => {
            cmd_select_eval(forest, data, thresholds, out.as_deref()).context("select-eval")
        }
        Command::SelectScore { forest, data, out } => cmd_select_score(forest, data, out).context("select-score"),
        Command::Curate(a) => cmd_curate(a, seed).context("curate"),
        Command::Train { config, train, valid, out } => cmd_train(config, train, valid, out, cli.seed).context("train"),
        Command::Translit { ckpt, text, beam } => cmd_translit(ckpt, text, beam).context("translit"),
        Command::Evaluate { ckpt, eval, out, predictions, beam } => {
            cmd_evaluate(ckpt, eval, out, predictions.as_deref(), beam).context("evaluate")
        }
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

/// Config echo for artifacts that cannot carry it themselves.
fn write_sidecar(out: &Path, command: &str, config: Value) -> Result<()> {
    let mut name = out.as_os_str().to_owned();
    name.push(".config.json");
    let path = PathBuf::from(name);
    write_json(&path, &json!({ "command": command, "config": config }))?;
    Ok(())
}

fn cmd_rtgs(text: &[String]) -> Result<()> {
    let tables = RtgsTables::builtin();
    for t in text {
        println!("{}", romanize_rtgs(t, &tables).with_context(|| format!("romanizing {t:?}"))?);
    }
    Ok(())
}

fn cmd_features(pairs: &Path, out: &Path) -> Result<()> {
    let rows = read_pairs(pairs)?;
    let tables = RtgsTables::builtin();
    let g2p = ToyG2p::builtin();
    let features = FeatureTable::builtin();
    let mut text = String::from("thai\tlatin\tphonetic_distance\trtgs_similarity\n");
    for (i, r) in rows.iter().enumerate() {
        let (thai, latin) = (r.pair.thai(), r.pair.latin());
        let ctx = || format!("row {} ({thai} / {latin})", i + 2);
        let pd = phonetic_distance(thai, latin, &g2p, &features).with_context(ctx)?;
        let rs = rtgs_similarity(latin, thai, &tables).with_context(ctx)?;
        text.push_str(&format!("{thai}\t{latin}\t{pd:.6}\t{rs}\n"));
    }
    data::write_text(out, &text)?;
    write_sidecar(out, "features", json!({ "pairs": path_str(pairs), "g2p": "builtin" }))?;
    eprintln!("wrote {} rows to {}", rows.len(), out.display());
    Ok(())
}

fn parse_max_features(s: &str) -> Result<MaxFeatures> {
    match s {
        "sqrt" => Ok(MaxFeatures::Sqrt),
        "all" => Ok(MaxFeatures::All),
        n => n
            .parse()
            .map(MaxFeatures::Fixed)
            .map_err(|_| usage(format!("--max-features: expected sqrt, all or a count, got {n:?}"))),
    }
}

fn labeled_xy(path: &Path) -> Result<(Vec<[f64; 9]>, Vec<bool>)> {
    let records = read_labeled(path)?;
    if records.is_empty() {
        bail!("{} has no rows", path.display());
    }
    let x = records.iter().map(|r| r.record.features()).collect();
    let y = records.iter().map(|r| r.label.bit() == 1).collect();
    Ok((x, y))
}

fn cmd_select_train(a: &SelectTrainArgs, seed: u64) -> Result<()> {
    let config = ForestConfig {
        n_estimators: a.trees,
        min_samples_split: a.min_samples_split,
        min_samples_leaf: a.min_samples_leaf,
        max_depth: a.max_depth,
        max_features: parse_max_features(&a.max_features)?,
        bootstrap: !a.no_bootstrap,
        seed,
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let (x, y) = labeled_xy(&a.data)?;
    let forest = fit_forest(&x, &y, &vec![1.0; x.len()], &config)?;
    let text = to_stable_string(&forest.to_json());
    data::write_text(&a.out, &text)?;
    eprintln!("fitted {} trees on {} rows", config.n_estimators, x.len());
    for (name, imp) in FEATURE_NAMES.iter().zip(forest.feature_importances()) {
        println!("{name}\t{imp:.6}");
    }
    if let Some(k) = a.cv {
        let summary = kfold_cv(&x, &y, k, &config, a.cv_threshold)?;
        let mut path = a.out.as_os_str().to_owned();
        path.push(".cv.json");
        let v = json!({ "config": config, "data": path_str(&a.data), "k": k, "summary": summary });
        write_json(Path::new(&path), &v)?;
        println!(
            "cv k={k}: precision {:.4} recall {:.4} f1 {:.4} accuracy {:.4}",
            summary.precision.mean, summary.recall.mean, summary.f1.mean, summary.accuracy.mean
        );
    }
    Ok(())
}

fn read_forest(path: &Path) -> Result<Forest> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Forest::from_json(&v).with_context(|| format!("loading {}", path.display()))
}

fn cmd_select_eval(forest: &Path, data: &Path, thresholds: &[f64], out: Option<&Path>) -> Result<()> {
    if thresholds.is_empty() || thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(usage("--thresholds must be values in [0, 1]"));
    }
    let f = read_forest(forest)?;
    let (x, y) = labeled_xy(data)?;
    let rows = threshold_sweep(&f, &x, &y, thresholds)?;
    println!("threshold\tprecision\trecall\tf1\taccuracy\tauc");
    for r in &rows {
        println!(
            "{:.2}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
            r.threshold, r.precision, r.recall, r.f1, r.accuracy, r.auc
        );
    }
    if let Some(out) = out {
        let importances: serde_json::Map<String, Value> = FEATURE_NAMES
            .iter()
            .zip(f.feature_importances())
            .map(|(n, v)| (n.to_string(), json!(v)))
            .collect();
        let v = json!({
            "config": { "forest": path_str(forest), "data": path_str(data), "thresholds": thresholds },
            "rows": rows,
            "feature_importances": importances,
        });
        write_json(out, &v)?;
    }
    Ok(())
}

fn cmd_select_score(forest: &Path, data: &Path, out: &Path) -> Result<()> {
    let f = read_forest(forest)?;
    let records = read_candidates(data)?;
    let x: Vec<[f64; 9]> = records.iter().map(|r| r.features()).collect();
    let p = f.predict_many(&x)?;
    let scored: Vec<ScoredCandidate> = records
        .into_iter()
        .zip(p)
        .map(|(record, probability)| ScoredCandidate { record, probability })
        .collect();
    data::write_text(out, &scored_to_tsv(&scored))?;
    write_sidecar(out, "select-score", json!({ "forest": path_str(forest), "data": path_str(data) }))?;
    eprintln!("scored {} candidates", scored.len());
    Ok(())
}

fn cmd_curate(a: &CurateArgs, seed: u64) -> Result<()> {
    let mode: Materialize = a.materialize.parse().map_err(|_| {
        usage(format!("--materialize: expected replicate or weight-column, got {:?}", a.materialize))
    })?;
    let train_frac = 1.0 - a.valid_frac - a.test_frac;
    let split = SplitSpec::new(train_frac, a.valid_frac, a.test_frac, seed).map_err(|e| usage(e.to_string()))?;
    let config = CurationConfig {
        split,
        ..CurationConfig::with_cutoff(a.cutoff)
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let scored = data::read_scored(&a.candidates)?;
    let eval = read_eval(&a.eval)?;
    let blocked: HashSet<String> = eval.iter().map(|e| e.thai().to_string()).collect();
    let curated = curate(&scored, &blocked, &config)?;
    let rows = materialize_training_file(&curated.train, mode, &a.out_dir.join("train.tsv"))?;
    data::write_text(&a.out_dir.join("valid.tsv"), &pairs_to_tsv(&curated.valid))?;
    data::write_text(&a.out_dir.join("test.tsv"), &pairs_to_tsv(&curated.test))?;
    let v = json!({
        "config": {
            "candidates": path_str(&a.candidates),
            "eval": path_str(&a.eval),
            "curation": config,
            "materialize": a.materialize,
        },
        "counts": curated.summary,
        "train_file_rows": rows,
    });
    write_json(&a.out_dir.join("summary.json"), &v)?;
    let s = &curated.summary;
    eprintln!(
        "input {} -> after leak removal {} -> after cutoff {} -> train {} (weight {}) / valid {} / test {}",
        s.input, s.after_leak_removal, s.after_cutoff, s.train, s.train_weight_total, s.valid, s.test
    );
    Ok(())
}

fn cmd_train(config: &Path, train_path: &Path, valid_path: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let text = fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let mut run = RunConfig::parse(&text).map_err(|e| usage(format!("{}: {e}", config.display())))?;
    if let Some(s) = seed {
        run.train.seed = s;
    }
    let rows = read_pairs(train_path)?;
    let valid: Vec<_> = read_pairs(valid_path)?.into_iter().map(|r| r.pair).collect();
    let examples = examples_from_rows(&rows);
    data::write_text(&out.join("config.cfg"), &run.to_text())?;
    let model = Transformer::new(&run.model, run.train.seed)?;
    eprintln!(
        "training {} parameters on {} examples, validating on {}",
        model.parameter_count(),
        examples.len(),
        valid.len()
    );
    let outcome = train(model, &examples, &valid, &run.train, Some(out))?;
    let best = &outcome.best;
    eprintln!(
        "{} steps; best validation CER {:.4} at step {}; log in {}",
        outcome.total_steps,
        best.best_metric.unwrap_or(f64::NAN),
        best.step,
        out.join(LOG_FILE).display()
    );
    Ok(())
}

fn load_model(ckpt: &Path) -> Result<Transformer> {
    let c = Checkpoint::load(ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    Ok(c.to_model()?)
}

fn cmd_translit(ckpt: &Path, text: &str, beam: &BeamArgs) -> Result<()> {
    let config = beam.config()?;
    let model = load_model(ckpt)?;
    for (i, c) in transliterate(&model, text, &config)?.iter().enumerate() {
        println!("{}\t{}\t{:.6}", i + 1, c.text, c.score);
    }
    Ok(())
}

fn cmd_evaluate(ckpt: &Path, eval: &Path, out: &Path, predictions: Option<&Path>, beam: &BeamArgs) -> Result<()> {
    let config = beam.config()?;
    let model = load_model(ckpt)?;
    let items = read_eval(eval)?;
    let ranked: Vec<Vec<String>> = items
        .par_iter()
        .map(|it| {
            transliterate(&model, it.thai(), &config)
                .map(|cs| cs.into_iter().map(|c| c.text).collect())
                .with_context(|| format!("decoding {:?}", it.thai()))
        })
        .collect::<Result<_>>()?;
    let report = EvalReport::compute(&ranked, &items)?;
    let mut v = report.to_json();
    v["config"] = json!({
        "ckpt": path_str(ckpt),
        "eval": path_str(eval),
        "k": config.k,
        "beam_width": config.beam_width,
        "max_length": config.max_length,
        "length_penalty": config.length_penalty,
    });
    write_json(out, &v)?;
    if let Some(p) = predictions {
        let mut text = String::from("thai\tpred1\tpred2\tpred3\n");
        for (it, r) in items.iter().zip(&ranked) {
            let cells: Vec<&str> = (0..3).map(|k| r.get(k).map_or("", String::as_str)).collect();
            text.push_str(&format!("{}\t{}\n", it.thai(), cells.join("\t")));
        }
        data::write_text(p, &text)?;
    }
    print!("{}", report.to_text());
    Ok(())
}
