//! `reflect`: generate, curate, export and evaluate self-reflection data.

mod run;

use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde_json::json;

use reflect_core::config::PairingKind;
use reflect_core::eval::{
    correlate, evaluate, tag_errors, CorrelationItem, Embedder, EndpointEmbedder, ErrorTag,
    HashingEmbedder, TagHistogram,
};
use reflect_core::export::{
    compute_stats, DpoCompletion, EndpointTokenCounter, ReflectionPromptStyle, TokenCounter,
    WhitespaceCounter,
};
use reflect_core::pipeline::{self, Curated};
use reflect_core::util::{derive_seed, par_map, read_jsonl, write_jsonl};
use reflect_core::verify::{ExternalVerifier, SelfJudgeVerifier};
use reflect_core::{
    CandidateSample, Config, Exporter, InstructionPool, Judge, OracleVerifier, PromptSet,
    ReflectionMode, RolloutEngine, SelectionMode, TaskItem, Verifier, VerifierKind,
};

use run::{
    internal, read_input, user, CliError, CliResult, Run, Source, MANIFEST_FILE, REPLAY_FILE,
};

#[derive(Debug, Parser)]
#[command(
    name = "reflect",
    version,
    about = "Self-reflection data pipeline for chat-completion models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// TOML config file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory for outputs and the manifest.
    #[arg(long)]
    out: PathBuf,
    /// Scripted mock model (JSON rules) instead of the configured endpoint.
    #[arg(long, conflicts_with = "replay_from")]
    mock: Option<PathBuf>,
    /// Serve every model call from a replay log; no network.
    #[arg(long)]
    replay_from: Option<PathBuf>,
    /// Overrides `endpoint.base_url`.
    #[arg(long)]
    base_url: Option<String>,
    /// Overrides `endpoint.model`.
    #[arg(long)]
    model: Option<String>,
    /// Overrides `judge.base_url`.
    #[arg(long)]
    judge_base_url: Option<String>,
    /// Overrides `judge.model`.
    #[arg(long)]
    judge_model: Option<String>,
    /// Overrides `policy.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `run.max_in_flight`.
    #[arg(long)]
    max_in_flight: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
enum Command {
    /// First turns plus m × k reflection/correction candidates per failed task.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Tasks as JSONL.
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        k: Option<u32>,
        #[arg(long)]
        m: Option<u32>,
        /// `per_dataset` or `per_question`.
        #[arg(long, value_parser = parse_enum::<SelectionMode>)]
        selection: Option<SelectionMode>,
    },
    /// Build D+, D± and judged preference pairs from a candidate pool.
    Curate {
        #[command(flatten)]
        common: Common,
        /// candidates.jsonl from `generate`.
        #[arg(long)]
        pool: PathBuf,
        /// `cross_product`, `one_per_question` or `capped_cross`.
        #[arg(long, value_parser = parse_enum::<PairingKind>)]
        pairing: Option<PairingKind>,
        #[arg(long)]
        pair_cap: Option<usize>,
        /// Single judge pass without the swapped-order check.
        #[arg(long)]
        no_debias: bool,
    },
    /// Write training files for settings 1, 2.1, 2.2, 3 and 4.
    Export {
        #[command(flatten)]
        common: Common,
        /// Directory holding d_plus.jsonl, d_pm.jsonl and d_pref.jsonl.
        #[arg(long)]
        curated: PathBuf,
        /// `reflection` or `reflection_answer`.
        #[arg(long, value_parser = parse_enum::<DpoCompletion>)]
        dpo_completion: Option<DpoCompletion>,
        /// `plain` or `instruction`.
        #[arg(long, value_parser = parse_enum::<ReflectionPromptStyle>)]
        prompt_style: Option<ReflectionPromptStyle>,
    },
    /// Per-category pool statistics.
    Stats {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pool: PathBuf,
        /// Curated D+; derived from the pool when omitted.
        #[arg(long)]
        d_plus: Option<PathBuf>,
        /// Server with a `/tokenize` endpoint; whitespace counts otherwise.
        #[arg(long)]
        tokenizer_url: Option<String>,
    },
    /// Multi-turn reflect-and-correct evaluation.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tasks: PathBuf,
        /// Overrides `eval.turns`.
        #[arg(long)]
        turns: Option<u32>,
        /// `oracle`, `self_judgment` or `external_runner`.
        #[arg(long, value_parser = parse_enum::<VerifierKind>)]
        verifier: Option<VerifierKind>,
        /// `plain`, `one_stage` or an instruction id.
        #[arg(long)]
        reflection_mode: Option<ReflectionMode>,
        #[arg(long)]
        runner_cmd: Option<String>,
    },
    /// Label the error type behind each reflection.
    TagErrors {
        #[command(flatten)]
        common: Common,
        /// Candidates (or D+) JSONL.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        single_label: bool,
    },
    /// Correlate reflection/corrected-thought similarity with correctness.
    Correlate {
        #[command(flatten)]
        common: Common,
        /// Candidates JSONL.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        bins: Option<usize>,
        /// Overrides `embedder.base_url`.
        #[arg(long)]
        embedder_url: Option<String>,
    },
    /// Re-run a recorded run offline from its manifest and replay log.
    Replay {
        /// Run directory containing manifest.json.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(json!(s)).map_err(|e| e.to_string())
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate { .. } => "generate",
            Command::Curate { .. } => "curate",
            Command::Export { .. } => "export",
            Command::Stats { .. } => "stats",
            Command::Eval { .. } => "eval",
            Command::TagErrors { .. } => "tag-errors",
            Command::Correlate { .. } => "correlate",
            Command::Replay { .. } => "replay",
        }
    }

    fn common_mut(&mut self) -> Option<&mut Common> {
        match self {
            Command::Generate { common, .. }
            | Command::Curate { common, .. }
            | Command::Export { common, .. }
            | Command::Stats { common, .. }
            | Command::Eval { common, .. }
            | Command::TagErrors { common, .. }
            | Command::Correlate { common, .. } => Some(common),
            Command::Replay { .. } => None,
        }
    }

    /// Input paths by snapshot name.
    fn inputs_mut(&mut self) -> Vec<(&'static str, &mut PathBuf)> {
        match self {
            Command::Generate { tasks, .. } | Command::Eval { tasks, .. } => {
                vec![("tasks.jsonl", tasks)]
            }
            Command::Curate { pool, .. } => vec![("pool.jsonl", pool)],
            Command::Export { curated, .. } => vec![("curated", curated)],
            Command::Stats { pool, d_plus, .. } => {
                let mut v = vec![("pool.jsonl", pool)];
                if let Some(d) = d_plus {
                    v.push(("d_plus.jsonl", d));
                }
                v
            }
            Command::TagErrors { input, .. } | Command::Correlate { input, .. } => {
                vec![("input.jsonl", input)]
            }
            Command::Replay { .. } => Vec::new(),
        }
    }
}

/// Settings carried over from a recorded run.
struct Preset {
    config: Config,
    run_dir: PathBuf,
}

fn load_config(common: &Common, preset: Option<&Preset>) -> CliResult<Config> {
    let mut config = match (preset, &common.config) {
        (Some(p), _) => p.config.clone(),
        (None, Some(path)) => Config::load(path).map_err(user)?,
        (None, None) => Config::default(),
    };
    if let Some(v) = &common.base_url {
        config.endpoint.base_url = Some(v.clone());
    }
    if let Some(v) = &common.model {
        config.endpoint.model = v.clone();
    }
    if let Some(v) = &common.judge_base_url {
        config.judge.base_url = Some(v.clone());
    }
    if let Some(v) = &common.judge_model {
        config.judge.model = v.clone();
    }
    if let Some(v) = common.seed {
        config.policy.seed = v;
    }
    if let Some(v) = common.max_in_flight {
        config.run.max_in_flight = v;
    }
    Ok(config)
}

fn source(common: &Common, preset: Option<&Preset>) -> Source {
    if let Some(p) = preset {
        return Source::Replay(p.run_dir.join(REPLAY_FILE));
    }
    match (&common.replay_from, &common.mock) {
        (Some(log), _) => Source::Replay(log.clone()),
        (None, Some(mock)) => Source::Mock(mock.clone()),
        (None, None) => Source::Endpoint,
    }
}

fn prompts(config: &Config) -> CliResult<(PromptSet, InstructionPool)> {
    match &config.run.prompts_dir {
        Some(dir) => {
            let dir = Path::new(dir);
            let set = PromptSet::load(dir).map_err(user)?;
            let pool = InstructionPool::load(dir).map_err(user)?;
            Ok((set, pool))
        }
        None => Ok((PromptSet::builtin(), InstructionPool::builtin())),
    }
}

fn read_records<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    read_jsonl(path).map_err(user)
}

fn execute(mut command: Command, argv: Vec<String>, preset: Option<Preset>) -> CliResult<()> {
    if let Command::Replay { run, out } = &command {
        return replay(run, out);
    }
    let name = command.name();
    let common = command.common_mut().expect("non-replay command").clone();
    let mut config = load_config(&common, preset.as_ref())?;
    let source = source(&common, preset.as_ref());
    let max_in_flight = |c: &Config| c.run.max_in_flight;

    match command.clone() {
        Command::Generate {
            tasks,
            k,
            m,
            selection,
            ..
        } => {
            if let Some(v) = k {
                config.policy.k = v;
            }
            if let Some(v) = m {
                config.policy.m = v;
            }
            if let Some(v) = selection {
                config.policy.selection = v;
            }
            config.validate().map_err(user)?;
            let mut run = start(
                name,
                argv,
                &common,
                config,
                source,
                &mut command,
                preset.as_ref(),
            )?;
            let tasks: Vec<TaskItem> = read_records(&tasks)?;
            let (set, pool) = prompts(&run.config)?;
            let engine = RolloutEngine::new(
                run.generator()?,
                Arc::new(set),
                Arc::new(pool),
                run.config.policy.clone(),
            );
            let out =
                pipeline::generate(&engine, &tasks, &OracleVerifier, max_in_flight(&run.config))
                    .map_err(|e| match e {
                        pipeline::PipelineError::Jsonl(_) | pipeline::PipelineError::Export(_) => {
                            internal(e)
                        }
                        other => user(other),
                    })?;
            out.write(&run.out).map_err(internal)?;
            println!(
                "{} tasks, {} failed at turn 1, {} candidates, {} aborts",
                out.counts.tasks,
                out.counts.first_turn_incorrect,
                out.candidates.len(),
                out.aborts.len()
            );
            run.finish(
                &[
                    pipeline::TRACES_FILE,
                    pipeline::CANDIDATES_FILE,
                    pipeline::ABORTS_FILE,
                ],
                json!(out.counts),
            )
        }
        Command::Curate {
            pool,
            pairing,
            pair_cap,
            no_debias,
            ..
        } => {
            if let Some(v) = pairing {
                config.curation.pairing = v;
            }
            if let Some(v) = pair_cap {
                config.curation.pair_cap = v;
            }
            if no_debias {
                config.curation.debias = false;
            }
            config.validate().map_err(user)?;
            let mut run = start(
                name,
                argv,
                &common,
                config,
                source,
                &mut command,
                preset.as_ref(),
            )?;
            let candidates: Vec<CandidateSample> = read_records(&pool)?;
            let (set, _) = prompts(&run.config)?;
            let policy = run.config.curation.pairing_policy();
            let judge = Judge::new(run.judge()?, set.judge, policy.debias);
            let curated =
                pipeline::curate(&candidates, &policy, &judge, max_in_flight(&run.config));
            curated.write(&run.out).map_err(internal)?;
            println!(
                "pool {}: D+ {}, D± {}, D^pref {} ({} pairs judged)",
                candidates.len(),
                curated.d_plus.len(),
                curated.d_pm.len(),
                curated.d_pref.len(),
                curated.judge.adjudicated
            );
            run.finish(
                &[
                    pipeline::D_PLUS_FILE,
                    pipeline::D_PM_FILE,
                    pipeline::D_PREF_FILE,
                ],
                json!({
                    "pool": candidates.len(),
                    "d_plus": curated.d_plus.len(),
                    "d_pm": curated.d_pm.len(),
                    "d_pref": curated.d_pref.len(),
                    "judge": curated.judge,
                }),
            )
        }
        Command::Export {
            curated,
            dpo_completion,
            prompt_style,
            ..
        } => {
            if let Some(v) = dpo_completion {
                config.curation.dpo_completion = v;
            }
            if let Some(v) = prompt_style {
                config.curation.prompt_style = v;
            }
            config.validate().map_err(user)?;
            let run = start(
                name,
                argv,
                &common,
                config,
                source,
                &mut command,
                preset.as_ref(),
            )?;
            let data = Curated::read(&curated).map_err(user)?;
            let (set, pool) = prompts(&run.config)?;
            let exporter = Exporter::new(set, pool, run.config.curation.prompt_style);
            let summary = pipeline::export_all(
                &exporter,
                &data,
                run.config.curation.dpo_completion,
                &run.out.join("exports"),
            )
            .map_err(|e| match e {
                pipeline::PipelineError::Export(reflect_core::export::ExportError::Jsonl(_)) => {
                    internal(e)
                }
                other => user(other),
            })?;
            for (setting, n) in &summary.counts {
                println!("setting {}: {n} records", setting.as_str());
            }
            let files: Vec<String> = summary
                .files
                .iter()
                .map(|f| format!("exports/{}", f.display()))
                .collect();
            let outputs: Vec<&str> = files.iter().map(String::as_str).collect();
            run.finish(&outputs, json!(summary.counts))
        }
        Command::Stats {
            pool,
            d_plus,
            tokenizer_url,
            ..
        } => {
            config.validate().map_err(user)?;
            let run = start(
                name,
                argv,
                &common,
                config,
                source,
                &mut command,
                preset.as_ref(),
            )?;
            let candidates: Vec<CandidateSample> = read_records(&pool)?;
            let d_plus = match d_plus {
                Some(p) => read_records(&p)?,
                None => reflect_core::curation::build_d_plus(&candidates),
            };
            let counter: Box<dyn TokenCounter> = match &tokenizer_url {
                Some(url) => Box::new(
                    EndpointTokenCounter::new(
                        url,
                        &run.config.endpoint.model,
                        Duration::from_secs(run.config.endpoint.timeout_secs),
                    )
                    .map_err(user)?,
                ),
                None => Box::new(WhitespaceCounter),
            };
            let stats = compute_stats(&candidates, &d_plus, counter.as_ref())
                .context("token counting failed")
                .map_err(internal)?;
            let table = stats.to_table();
            print!("{table}");
            run.write_json("stats.json", &stats)?;
            run.write_text("stats.txt", &table)?;
            run.finish(
                &["stats.json", "stats.txt"],
                json!({"pool": stats.total.pool, "d_plus": stats.total.d_plus}),
            )
        }
        Command::Eval {
            tasks,
            turns,
            verifier,
            reflection_mode,
            runner_cmd,
            ..
        } => {
            if let Some(v) = turns {
                config.eval.turns = v;
            }
            if let Some(v) = verifier {
                config.eval.verifier = v;
            }
            if let Some(v) = reflection_mode {
                config.eval.reflection_mode = v;
            }
            if let Some(v) = runner_cmd {
                config.eval.runner_cmd = Some(v);
            }
            config.policy.max_turns = config.eval.turns;
            config.validate().map_err(user)?;
            let mut run = start(
                name,
                argv,
                &common,
                config,
                source,
                &mut command,
                preset.as_ref(),
            )?;
            let tasks: Vec<TaskItem> = read_records(&tasks)?;
            reflect_core::model::validate_tasks(&tasks).map_err(user)?;
            let (set, pool) = prompts(&run.config)?;
            let self_judge = set.self_judge.clone();
            let engine = RolloutEngine::new(
                run.generator()?,
                Arc::new(set),
                Arc::new(pool),
                run.config.policy.clone(),
            )
            .with_reflection_mode(run.config.eval.reflection_mode.clone());
            let eval = run.config.eval.clone();
            let verifier: Box<dyn Verifier> = match eval.verifier {
                VerifierKind::Oracle => Box::new(OracleVerifier),
                VerifierKind::SelfJudgment => {
                    Box::new(SelfJudgeVerifier::new(run.judge()?, self_judge))
                }
                VerifierKind::ExternalRunner => Box::new(ExternalVerifier::new(
                    eval.runner_cmd.clone().unwrap_or_default(),
                    Duration::from_secs(eval.runner_timeout_secs),
                    eval.max_processes,
                )),
            };
            let (report, traces) = evaluate(
                &engine,
                &tasks,
                verifier.as_ref(),
                max_in_flight(&run.config),
            );
            write_jsonl(&run.path(pipeline::TRACES_FILE), &traces).map_err(internal)?;
            run.write_json("report.json", &report)?;
            run.write_text("report.txt", &report.to_table())?;
            run.write_text("curve.csv", &report.curve_csv())?;
            println!("{}", report.summary());
            run.finish(
                &["report.json", "report.txt", "curve.csv", pipeline::TRACES_FILE],
                json!({"items": report.overall.n_items, "solved": report.overall.solved_counts, "aborted": report.aborted.len()}),
            )
        }
        Command::TagErrors {
            input,
            single_label,
            ..
        } => {
            config.validate().map_err(user)?;
            let mut run = start(
                name,
                argv,
                &common,
                config,
                source,
                &mut command,
                preset.as_ref(),
            )?;
            let records: Vec<CandidateSample> = read_records(&input)?;
            let (set, _) = prompts(&run.config)?;
            let gateway = run.judge()?;
            let seed = run.config.policy.seed;
            let tags = par_map(&records, max_in_flight(&run.config), |c| {
                let s = c.reflection.sampling.sample_index.to_string();
                let item_seed =
                    derive_seed(seed, &["tag", &c.task.id, &c.reflection.instruction_id, &s]);
                let tag = tag_errors(
                    &gateway,
                    &set.error_tags,
                    &c.task.question,
                    &c.first_scratchpad,
                    &c.reflection.text,
                    item_seed,
                )
                .unwrap_or_else(|e| {
                    tracing::warn!(task = %c.task.id, error = %e, "tagging failed");
                    ErrorTag::Unlabeled
                });
                json!({
                    "task_id": c.task.id,
                    "instruction_id": c.reflection.instruction_id,
                    "sample_index": c.reflection.sampling.sample_index,
                    "tag": tag,
                })
            });
            let parsed: Vec<ErrorTag> = tags
                .iter()
                .map(|t| serde_json::from_value(t["tag"].clone()).unwrap_or(ErrorTag::Unlabeled))
                .collect();
            let histogram = TagHistogram::from_tags(&parsed, single_label);
            write_jsonl(&run.path("tags.jsonl"), &tags).map_err(internal)?;
            run.write_json("tag_histogram.json", &histogram)?;
            println!(
                "{} items tagged, {} unlabeled",
                histogram.items, histogram.unlabeled
            );
            run.finish(&["tags.jsonl", "tag_histogram.json"], json!(histogram))
        }
        Command::Correlate {
            input,
            bins,
            embedder_url,
            ..
        } => {
            if let Some(v) = bins {
                config.eval.bins = v;
            }
            if let Some(v) = embedder_url {
                config.embedder.base_url = Some(v);
            }
            config.validate().map_err(user)?;
            if preset.is_some() && config.embedder.base_url.is_some() {
                return Err(user(anyhow!(
                    "embedding calls are not recorded, so correlate runs against an embeddings endpoint cannot be replayed offline"
                )));
            }
            let run = start(
                name,
                argv,
                &common,
                config,
                source,
                &mut command,
                preset.as_ref(),
            )?;
            let records: Vec<CandidateSample> = read_records(&input)?;
            let items: Vec<CorrelationItem> = records
                .iter()
                .map(|c| CorrelationItem {
                    task_id: c.task.id.clone(),
                    reflection: c.reflection.text.clone(),
                    thought: c.corrected_scratchpad.clone(),
                    correct: c.outcome.is_correct(),
                })
                .collect();
            let cfg = &run.config.embedder;
            let embedder: Box<dyn Embedder> = match &cfg.base_url {
                Some(url) => Box::new(
                    EndpointEmbedder::new(
                        url,
                        &cfg.model,
                        Duration::from_secs(cfg.timeout_secs),
                        reflect_core::config::api_key_from_env(),
                    )
                    .map_err(user)?,
                ),
                None => Box::new(HashingEmbedder {
                    dim: cfg.hashing_dim,
                }),
            };
            let report = correlate(&items, embedder.as_ref(), run.config.eval.bins).map_err(
                |e| match e {
                    reflect_core::eval::CorrelationError::Embed(_) => internal(e),
                    other => user(other),
                },
            )?;
            match report.r {
                Some(r) => println!("n = {}, pearson r = {r:.4}", report.n),
                None => println!("n = {}, pearson r undefined (zero variance)", report.n),
            }
            run.write_json("correlation.json", &report)?;
            run.finish(
                &["correlation.json"],
                json!({"n": report.n, "r": report.r, "binned_r": report.binned_r}),
            )
        }
        Command::Replay { .. } => unreachable!("handled above"),
    }
}

/// Opens the run directory and snapshots the command's inputs.
fn start(
    name: &str,
    argv: Vec<String>,
    common: &Common,
    config: Config,
    source: Source,
    command: &mut Command,
    preset: Option<&Preset>,
) -> CliResult<Run> {
    let mut run = Run::new(name, argv, common.out.clone(), config, source)?;
    if let Some(p) = preset {
        run.mark_replay(&p.run_dir);
    }
    for (snapshot, path) in command.inputs_mut() {
        run.snapshot_input(snapshot, path)?;
    }
    Ok(run)
}

fn replay(run_dir: &Path, out: &Path) -> CliResult<()> {
    let manifest_path = run_dir.join(MANIFEST_FILE);
    let manifest: serde_json::Value = serde_json::from_slice(&read_input(&manifest_path)?)
        .with_context(|| format!("{} is not valid JSON", manifest_path.display()))
        .map_err(user)?;
    let argv: Vec<String> = serde_json::from_value(manifest["argv"].clone())
        .context("manifest has no argv")
        .map_err(user)?;
    let config: Config = serde_json::from_value(manifest["config"].clone())
        .context("manifest has no usable config")
        .map_err(user)?;
    let mut cli =
        Cli::try_parse_from(std::iter::once("reflect".to_string()).chain(argv.iter().cloned()))
            .context("manifest argv does not parse")
            .map_err(user)?;
    if matches!(cli.command, Command::Replay { .. }) {
        return Err(user(anyhow!(
            "{} records a replay; replay its source run instead",
            run_dir.display()
        )));
    }
    for (snapshot, path) in cli.command.inputs_mut() {
        *path = run_dir.join(run::INPUTS_DIR).join(snapshot);
    }
    let common = cli.command.common_mut().expect("non-replay command");
    common.out = out.to_path_buf();
    common.config = None;
    common.mock = None;
    common.replay_from = None;
    let preset = Preset {
        config,
        run_dir: run_dir.to_path_buf(),
    };
    execute(cli.command, argv, Some(preset))
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();

    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    match execute(cli.command, argv, None) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::User(e)) => {
            eprintln!("error: {}", chain(&e));
            ExitCode::from(1)
        }
        Err(CliError::Internal(e)) => {
            eprintln!("internal error: {}", chain(&e));
            ExitCode::from(2)
        }
    }
}

/// The error and its causes, skipping causes already quoted by the message
/// above them.
fn chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if out.contains(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}
