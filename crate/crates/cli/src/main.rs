use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command as Process, ExitCode};
use std::sync::Mutex;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sfmt_core::audio::{load_features, log_mel, read_wav, FeatureMatrix};
use sfmt_core::corpus::manifest::read_manifest;
use sfmt_core::corpus::{corpus_hash, generate_corpus, Aspect, CorpusSummary, Split};
use sfmt_core::experiment::{
    base_model, checkpoint_dir, evaluate, grade, in_sample_warning, load_aspect_model, open_corpus, train_regime,
    AblationReport, AspectModel, CellRun, ExperimentConfig, ReportFormat,
};
use sfmt_core::metrics::EvaluationReport;
use sfmt_core::trainer::checkpoint::HEADER_FILE;
use sfmt_core::trainer::{Dataset, RegimeKind};
use sfmt_core::GraderModel32;

const CONFIG_ECHO: &str = "config.json";

#[derive(Parser)]
#[command(name = "sfmt", version, about = "Speech-first multimodal grader lab")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print JSON on stdout instead of text.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus (manifest and feature files).
    GenCorpus {
        #[arg(long)]
        target_wer: Option<f64>,
    },
    /// Train one regime for one aspect or all aspects.
    Train {
        #[arg(long, default_value = "sfmt")]
        regime: RegimeKind,
        /// C, D, L, H or all.
        #[arg(long, default_value = "all")]
        aspect: AspectArg,
        #[arg(long, hide = true)]
        only_seed: Option<u64>,
    },
    /// Score trained models on a corpus split.
    Eval {
        /// Checkpoint or run directories. Defaults to the trained aspects of `--regime`.
        #[arg(long, num_args = 1..)]
        checkpoints: Vec<PathBuf>,
        #[arg(long, default_value = "joint")]
        regime: RegimeKind,
        #[arg(long)]
        split: Option<Split>,
    },
    /// Run the regime × aspect × seed grid and compare.
    Ablate {
        /// Comma-separated seed list; overrides the config.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        aspect: Option<AspectArg>,
        /// Run grid cells as up to N concurrent child processes.
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Grade one response.
    Grade {
        #[arg(long, num_args = 1.., required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long, conflicts_with = "wav", required_unless_present = "wav")]
        features: Option<PathBuf>,
        #[arg(long)]
        wav: Option<PathBuf>,
        /// Whitespace-separated transcript; without it grading is audio-only.
        #[arg(long)]
        transcript: Option<String>,
    },
    /// Re-render saved evaluation or ablation reports.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long, default_value = "text")]
        format: ReportFormat,
        /// Also print confusion matrices of evaluation reports.
        #[arg(long)]
        confusion: bool,
    },
}

#[derive(Clone, Copy)]
enum AspectArg {
    One(Aspect),
    All,
}

impl std::str::FromStr for AspectArg {
    type Err = sfmt_core::Error;

    fn from_str(s: &str) -> sfmt_core::Result<Self> {
        if s.eq_ignore_ascii_case("all") {
            Ok(AspectArg::All)
        } else {
            s.parse().map(AspectArg::One)
        }
    }
}

impl AspectArg {
    fn resolve(self, cfg: &ExperimentConfig) -> Vec<Aspect> {
        match self {
            AspectArg::One(a) => vec![a],
            AspectArg::All => cfg.aspects.clone(),
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn echo_config(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    write_file(&dir.join(CONFIG_ECHO), &cfg.to_json()?)
}

fn corpus_and_base(cfg: &ExperimentConfig) -> Result<(Dataset, GraderModel32)> {
    let (data, hash) = open_corpus(cfg)?;
    let base = base_model(cfg, &data, &hash, Some(&cfg.bootstrap_dir())).context("bootstrapping the base model")?;
    Ok((data, base))
}

fn gen_corpus(common: &Common, target_wer: Option<f64>) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(seed) = common.seed {
        cfg.corpus.seed = seed;
    }
    if let Some(w) = target_wer {
        cfg.corpus.target_wer = w;
    }
    cfg.validate()?;
    let previous = corpus_hash(cfg.manifest_path()).ok();
    let manifest = generate_corpus(&cfg.corpus, cfg.corpus_dir())?;
    echo_config(&cfg, &cfg.out_dir)?;
    let hash = corpus_hash(&manifest)?;
    let summary = CorpusSummary::from_utterances(&read_manifest(&manifest)?);
    if common.json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        println!("{} utterances -> {}", summary.utterances, manifest.display());
        for aspect in Aspect::ALL {
            println!("\n{}\n{}", aspect.name(), summary.table(aspect));
        }
        println!(
            "measured WER {:.4} over {} reference tokens",
            summary.corpus_wer, summary.reference_tokens
        );
        println!("corpus hash {hash}");
    }
    if previous.as_deref() == Some(hash.as_str()) {
        eprintln!("corpus identical to the previous run");
    }
    Ok(())
}

fn train(common: &Common, kind: RegimeKind, aspect: AspectArg, only_seed: Option<u64>) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    cfg.validate()?;
    let seeds = match only_seed {
        Some(s) if cfg.seeds.contains(&s) => vec![s],
        Some(s) => bail!("seed {s} is not in the configured seed list"),
        None => {
            echo_config(&cfg, &cfg.out_dir)?;
            cfg.seeds.clone()
        }
    };
    let (data, base) = corpus_and_base(&cfg)?;
    for seed in seeds {
        for a in aspect.resolve(&cfg) {
            let dir = cfg.run_dir(kind, a, seed);
            let out = train_regime(&cfg, kind, a, seed, &base, &data, Some(&dir))
                .with_context(|| format!("training {kind} for aspect {} (seed {seed})", a.code()))?;
            echo_config(&cfg, &dir)?;
            if common.json {
                let stages: Vec<_> = out
                    .stages
                    .iter()
                    .map(|s| {
                        serde_json::json!({
                            "stage": s.name,
                            "modality": s.modality.to_string(),
                            "steps": s.steps,
                            "final_loss": s.step_losses.last(),
                            "checkpoint": s.checkpoint,
                        })
                    })
                    .collect();
                let row = serde_json::json!({
                    "regime": kind.as_str(), "aspect": a.code().to_string(), "seed": seed,
                    "dir": dir, "stages": stages,
                });
                println!("{row}");
            } else {
                for s in &out.stages {
                    println!(
                        "{kind} {} seed {seed} {}: {} steps ({}), last loss {:.4}",
                        a.code(),
                        s.name,
                        s.steps,
                        s.modality,
                        s.step_losses.last().copied().unwrap_or(f64::NAN)
                    );
                }
                println!("  -> {}", dir.display());
            }
        }
    }
    Ok(())
}

fn is_checkpoint(path: &Path) -> bool {
    checkpoint_dir(path).join(HEADER_FILE).exists()
}

/// Models under each path: a checkpoint directory, a run directory with
/// `final/`, or a regime directory with one run per aspect.
fn discover_models(paths: &[PathBuf]) -> Result<Vec<AspectModel>> {
    let mut models = Vec::new();
    for p in paths {
        if is_checkpoint(p) {
            models.push(load_aspect_model(p).with_context(|| format!("loading {}", p.display()))?);
            continue;
        }
        let found: Vec<PathBuf> = Aspect::ALL
            .iter()
            .map(|a| p.join(a.code().to_string()))
            .filter(|d| is_checkpoint(d))
            .collect();
        if found.is_empty() {
            bail!("no checkpoints found under {}", p.display());
        }
        for d in found {
            models.push(load_aspect_model(&d).with_context(|| format!("loading {}", d.display()))?);
        }
    }
    Ok(models)
}

fn write_reports(cfg: &ExperimentConfig, stem: &Path, json: &str, csv: &str, text: &str) -> Result<()> {
    for f in &cfg.formats {
        let body = match f {
            ReportFormat::Json => json,
            ReportFormat::Csv => csv,
            ReportFormat::Text => text,
        };
        write_file(&stem.with_extension(f.extension()), body)?;
    }
    Ok(())
}

fn eval(common: &Common, checkpoints: Vec<PathBuf>, kind: RegimeKind, split: Option<Split>) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    cfg.validate()?;
    let split = split.unwrap_or(cfg.eval_split);
    let paths = if checkpoints.is_empty() {
        let dir = cfg.run_dir(kind, Aspect::Content, cfg.seeds[0]);
        vec![dir.parent().map(Path::to_path_buf).unwrap_or(dir)]
    } else {
        checkpoints
    };
    let models = discover_models(&paths)?;
    if let Some(w) = in_sample_warning(split) {
        eprintln!("{w}");
    }
    let (data, _) = open_corpus(&cfg)?;
    let report = evaluate(&models, &data, split)?;
    let dir = cfg.out_dir.join("eval").join(split.as_str());
    write_reports(
        &cfg,
        &dir.join("report"),
        &report.to_json()?,
        &report.to_csv(),
        &report.to_text(),
    )?;
    for e in &report.entries {
        write_file(
            &dir.join(format!("confusion_{}.csv", e.key)),
            &e.metrics.confusion_csv(),
        )?;
    }
    echo_config(&cfg, &dir)?;
    if common.json {
        print!("{}", report.to_json()?);
    } else {
        print!("{}", report.to_text());
    }
    Ok(())
}

struct Cell {
    kind: RegimeKind,
    aspect: Aspect,
    seed: u64,
}

fn score_cell(cfg: &ExperimentConfig, cell: &Cell, model: GraderModel32, data: &Dataset) -> Result<CellRun> {
    let m = AspectModel {
        aspect: cell.aspect,
        modality: cell.kind.eval_modality(),
        regime: cell.kind.as_str().into(),
        model,
        source: None,
    };
    let report = evaluate(&[m], data, cfg.eval_split)?;
    let metrics = report.get(&cell.aspect.code().to_string()).cloned();
    Ok(CellRun {
        regime: cell.kind,
        aspect: cell.aspect,
        seed: cell.seed,
        result: metrics.ok_or_else(|| "aspect missing from evaluation".to_string()),
    })
}

fn failed(cell: &Cell, e: impl std::fmt::Display) -> CellRun {
    CellRun {
        regime: cell.kind,
        aspect: cell.aspect,
        seed: cell.seed,
        result: Err(e.to_string()),
    }
}

/// Trains each cell in a child `train` process, `jobs` at a time.
fn run_children(cfg: &ExperimentConfig, cells: &[Cell], jobs: usize) -> Result<Vec<Result<(), String>>> {
    let exe = std::env::current_exe()?;
    let cfg_path = cfg.out_dir.join("ablate").join(CONFIG_ECHO);
    let next = Mutex::new(0usize);
    let results: Mutex<Vec<Option<Result<(), String>>>> = Mutex::new(cells.iter().map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1) {
            s.spawn(|| loop {
                let i = {
                    let mut n = next.lock().unwrap();
                    *n += 1;
                    *n - 1
                };
                let Some(cell) = cells.get(i) else { break };
                let out = Process::new(&exe)
                    .arg("train")
                    .arg("--config")
                    .arg(&cfg_path)
                    .args(["--regime", cell.kind.as_str()])
                    .args(["--aspect", &cell.aspect.code().to_string()])
                    .args(["--only-seed", &cell.seed.to_string()])
                    .output();
                let r = match out {
                    Ok(o) if o.status.success() => Ok(()),
                    Ok(o) => Err(String::from_utf8_lossy(&o.stderr).trim().to_string()),
                    Err(e) => Err(e.to_string()),
                };
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    Ok(results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.unwrap_or(Err("not run".into())))
        .collect())
}

fn ablate(common: &Common, seeds: Vec<u64>, aspect: Option<AspectArg>, parallel: Option<usize>) -> Result<bool> {
    let mut cfg = load_config(common)?;
    if !seeds.is_empty() {
        cfg.seeds = seeds;
    } else if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(a) = aspect {
        cfg.aspects = a.resolve(&cfg);
    }
    cfg.validate()?;
    echo_config(&cfg, &cfg.out_dir)?;
    echo_config(&cfg, &cfg.out_dir.join("ablate"))?;
    let (data, base) = corpus_and_base(&cfg)?;

    let mut cells = Vec::new();
    for &seed in &cfg.seeds {
        for &kind in &cfg.regimes {
            for &aspect in &cfg.aspects {
                cells.push(Cell { kind, aspect, seed });
            }
        }
    }
    let runs: Vec<CellRun> = match parallel {
        Some(jobs) => run_children(&cfg, &cells, jobs)?
            .into_iter()
            .zip(&cells)
            .map(|(r, cell)| {
                let dir = cfg.run_dir(cell.kind, cell.aspect, cell.seed);
                let scored = r.map_err(|e| anyhow!(e)).and_then(|_| {
                    let m = load_aspect_model(&dir)?;
                    score_cell(&cfg, cell, m.model, &data)
                });
                scored.unwrap_or_else(|e| failed(cell, format!("{e:#}")))
            })
            .collect(),
        None => cells
            .iter()
            .map(|cell| {
                let dir = cfg.run_dir(cell.kind, cell.aspect, cell.seed);
                eprintln!("{} {} seed {}", cell.kind, cell.aspect.code(), cell.seed);
                train_regime(&cfg, cell.kind, cell.aspect, cell.seed, &base, &data, Some(&dir))
                    .map_err(anyhow::Error::from)
                    .and_then(|out| score_cell(&cfg, cell, out.model, &data))
                    .unwrap_or_else(|e| failed(cell, format!("{e:#}")))
            })
            .collect(),
    };
    let report = AblationReport::from_runs(cfg.eval_split.as_str(), &runs);
    write_reports(
        &cfg,
        &cfg.out_dir.join("ablation"),
        &report.to_json()?,
        &report.to_csv(),
        &report.to_text(),
    )?;
    if common.json {
        print!("{}", report.to_json()?);
    } else {
        print!("{}", report.to_text());
    }
    Ok(report.cells.iter().all(|c| c.failures.is_empty()))
}

fn read_input(features: Option<&Path>, wav: Option<&Path>) -> Result<FeatureMatrix> {
    match (features, wav) {
        (Some(f), _) => load_features(f).with_context(|| format!("reading features {}", f.display())),
        (None, Some(w)) => {
            let signal = read_wav(w).with_context(|| format!("reading {}", w.display()))?;
            Ok(log_mel(&signal)?)
        }
        (None, None) => bail!("either --features or --wav is required"),
    }
}

fn grade_cmd(
    common: &Common,
    checkpoints: &[PathBuf],
    features: Option<&Path>,
    wav: Option<&Path>,
    transcript: Option<&str>,
) -> Result<()> {
    let models = discover_models(checkpoints)?;
    let fm = read_input(features, wav)?;
    let words: Option<Vec<String>> = transcript.map(|t| t.split_whitespace().map(str::to_string).collect());
    let result = grade(&models, &fm, words.as_deref())?;
    if common.json {
        println!("{}", serde_json::to_string_pretty(&result)?);
        return Ok(());
    }
    println!("modality: {}", result.modality);
    for (aspect, level) in &result.scores {
        let name = aspect.parse::<Aspect>().map(|a| a.name()).unwrap_or("");
        println!("{aspect} {name:<13} {level}");
    }
    if let Some(h) = result.aggregated_holistic {
        println!("H aggregated    {h}");
    }
    Ok(())
}

fn report_cmd(common: &Common, paths: &[PathBuf], format: ReportFormat, confusion: bool) -> Result<()> {
    let format = if common.json { ReportFormat::Json } else { format };
    for p in paths {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        if let Ok(r) = serde_json::from_str::<EvaluationReport>(&text) {
            match format {
                ReportFormat::Json => print!("{}", r.to_json()?),
                ReportFormat::Csv => print!("{}", r.to_csv()),
                ReportFormat::Text => print!("{}", r.to_text()),
            }
            if confusion {
                for e in &r.entries {
                    println!(
                        "\nconfusion {} (rows gold, columns predicted)\n{}",
                        e.key,
                        e.metrics.confusion_csv()
                    );
                }
            }
        } else if let Ok(r) = serde_json::from_str::<AblationReport>(&text) {
            match format {
                ReportFormat::Json => print!("{}", r.to_json()?),
                ReportFormat::Csv => print!("{}", r.to_csv()),
                ReportFormat::Text => print!("{}", r.to_text()),
            }
        } else {
            bail!("{} is neither an evaluation nor an ablation report", p.display());
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let c = &cli.common;
    match cli.command {
        Command::GenCorpus { target_wer } => gen_corpus(c, target_wer)?,
        Command::Train {
            regime,
            aspect,
            only_seed,
        } => train(c, regime, aspect, only_seed)?,
        Command::Eval {
            checkpoints,
            regime,
            split,
        } => eval(c, checkpoints, regime, split)?,
        Command::Ablate {
            seeds,
            aspect,
            parallel,
        } => return ablate(c, seeds, aspect, parallel),
        Command::Grade {
            checkpoints,
            features,
            wav,
            transcript,
        } => grade_cmd(
            c,
            &checkpoints,
            features.as_deref(),
            wav.as_deref(),
            transcript.as_deref(),
        )?,
        Command::Report {
            reports,
            format,
            confusion,
        } => report_cmd(c, &reports, format, confusion)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: some grid cells failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
