use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use perfrl::config::RunConfig;
use perfrl::corpus::{filter_executable, load_tasks, TaskInstance, UnitTest};
use perfrl::eval;
use perfrl::policy::scripted::{FixedOutputModel, PromptCopyModel};
use perfrl::policy::{load_checkpoint, LanguageModel, PolicyParams};
use perfrl::sandbox::Sandbox;
use perfrl::trainer::run::read_jsonl;
use perfrl::trainer::{RunDir, TrainOptions, Trainer};
use serde_json::json;

use crate::GlobalArgs;

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "PATH")]
    corpus: Option<PathBuf>,

    /// Number of RL steps; 0 only fine-tunes.
    #[arg(long, value_name = "N")]
    rl_steps: Option<usize>,

    /// Continue after the last completed step in the run directory.
    #[arg(long, conflicts_with = "from_scratch")]
    resume: bool,

    /// Fine-tune first instead of requiring an existing fine-tuned checkpoint.
    #[arg(long)]
    from_scratch: bool,

    /// Stop after this step, leaving a resumable run.
    #[arg(long, hide = true, value_name = "STEP")]
    stop_after: Option<usize>,
}

/// Hard-wired stand-ins for a trained model, for checking the harness.
#[derive(Debug, Clone, Default, Args)]
pub struct ScriptedModel {
    /// Echo the input program back.
    #[arg(long, hide = true, conflicts_with = "fixed_output")]
    echo_model: bool,

    /// Emit the contents of this file for every prompt.
    #[arg(long, hide = true, value_name = "PATH")]
    fixed_output: Option<PathBuf>,
}

/// Maps an error chain to the process exit code.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    use perfrl::Error;
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Environment(_)) => 2,
        Some(Error::Contract(_) | Error::Numerical { .. }) => 3,
        Some(_) => 1,
        None => 1,
    }
}

/// Config file, then flags.
fn resolve_config(global: &GlobalArgs) -> Result<RunConfig> {
    let mut config = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(dir) = &global.run_dir {
        config.run_dir = dir.clone();
    }
    if let Some(seed) = global.seed {
        config.sampling.seed = seed;
    }
    if let Some(jobs) = global.jobs {
        config.sandbox.jobs = Some(jobs);
    }
    if let Some(timeout) = global.timeout {
        config.train.timeout_secs = timeout;
        config.eval.timeout_secs = timeout;
    }
    if let Some(instruction) = &global.instruction {
        config.corpus.instruction = instruction.clone();
    }
    config.validate()?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs())
        .build_global()
        .ok();
    Ok(config)
}

fn corpus_path(flag: Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    match flag.or_else(|| configured.clone()) {
        Some(p) => Ok(p),
        None => bail!(perfrl::Error::Config(format!(
            "no {what} corpus: pass --corpus or set it in the config file"
        ))),
    }
}

fn load_corpus(path: &Path) -> Result<Vec<TaskInstance>> {
    load_tasks(path).with_context(|| format!("reading corpus {}", path.display()))
}

fn write_metadata(run: &RunDir, config: &RunConfig, command: &str) -> Result<()> {
    let meta = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "interpreter": config.interpreter()?.command_line(),
        "seed": config.sampling.seed,
        "jobs": config.jobs(),
    });
    let path = run.metadata_path();
    std::fs::write(&path, serde_json::to_string_pretty(&meta)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn open_run(config: &RunConfig, command: &str) -> Result<RunDir> {
    let run = RunDir::create(&config.run_dir)?;
    config.save(&run.config_path())?;
    write_metadata(&run, config, command)?;
    Ok(run)
}

fn initial_params(config: &RunConfig) -> Result<PolicyParams> {
    Ok(PolicyParams::init(config.model, config.sampling.seed)?)
}

fn trainer<'a>(config: &RunConfig, sandbox: &'a Sandbox) -> Result<Trainer<'a>> {
    Ok(Trainer::new(
        config.train,
        config.sampling,
        config.reward,
        config.corpus.instruction.clone(),
        sandbox,
    )?)
}

pub fn finetune(global: &GlobalArgs, corpus: Option<PathBuf>) -> Result<()> {
    let mut config = resolve_config(global)?;
    let path = corpus_path(corpus, &config.corpus.train, "training")?;
    config.corpus.train = Some(path.clone());
    config.train.rl_steps = 0;
    let tasks = load_corpus(&path)?;
    let sandbox = config.sandbox()?;
    let run = open_run(&config, "finetune")?;
    trainer(&config, &sandbox)?.train(&tasks, initial_params(&config)?, &run, &TrainOptions::default())?;
    println!("{}", run.finetune_checkpoint().display());
    Ok(())
}

pub fn train(global: &GlobalArgs, args: TrainArgs) -> Result<()> {
    let mut config = resolve_config(global)?;
    let path = corpus_path(args.corpus, &config.corpus.train, "training")?;
    config.corpus.train = Some(path.clone());
    if let Some(steps) = args.rl_steps {
        config.train.rl_steps = steps;
    }
    let tasks = load_corpus(&path)?;
    let sandbox = config.sandbox()?;
    let run = RunDir::create(&config.run_dir)?;
    if !args.from_scratch && !args.resume && !run.finetune_checkpoint().exists() {
        bail!(perfrl::Error::Validation(format!(
            "no fine-tuned checkpoint at {}; run `perfrl finetune` first or pass --from-scratch",
            run.finetune_checkpoint().display()
        )));
    }
    let run = open_run(&config, "train")?;
    let options = TrainOptions {
        resume: args.resume,
        reuse_finetune: !args.from_scratch,
        stop_after_step: args.stop_after,
    };
    let outcome = trainer(&config, &sandbox)?.train(&tasks, initial_params(&config)?, &run, &options)?;
    for stats in &outcome.history {
        println!("{}", serde_json::to_string(stats)?);
    }
    Ok(())
}

fn resolve_checkpoint(flag: Option<PathBuf>, config: &RunConfig) -> Result<PathBuf> {
    if let Some(p) = flag {
        return Ok(p);
    }
    match RunDir::create(&config.run_dir)?.latest_checkpoint() {
        Some(p) => Ok(p),
        None => bail!(perfrl::Error::Validation(format!(
            "no checkpoint in {}; pass --checkpoint",
            config.run_dir.display()
        ))),
    }
}

fn load_model(
    checkpoint: Option<PathBuf>,
    scripted: &ScriptedModel,
    config: &RunConfig,
) -> Result<Box<dyn LanguageModel>> {
    if scripted.echo_model {
        return Ok(Box::new(PromptCopyModel));
    }
    if let Some(path) = &scripted.fixed_output {
        return Ok(Box::new(FixedOutputModel::new(read_source(path)?)));
    }
    let path = resolve_checkpoint(checkpoint, config)?;
    let params = load_checkpoint(&path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok(Box::new(params))
}

pub fn eval(
    global: &GlobalArgs,
    corpus: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    scripted: &ScriptedModel,
    out: Option<PathBuf>,
) -> Result<()> {
    let config = resolve_config(global)?;
    let path = corpus_path(corpus, &config.corpus.test, "test")?;
    let model = load_model(checkpoint, scripted, &config)?;
    let tasks = load_corpus(&path)?;
    let sandbox = config.sandbox()?;
    let evaluation = eval::evaluate_model(
        &*model,
        &tasks,
        &sandbox,
        &config.sampling,
        &config.eval,
        &config.corpus.instruction,
    )?;
    let out = out.unwrap_or_else(|| config.run_dir.join("eval"));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    eval::write_report(&out.join("report.json"), &evaluation.report)?;
    eval::write_results(&out.join("results.jsonl"), &evaluation.results)?;
    println!("{}", evaluation.report);
    Ok(())
}

fn read_source(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn optimize(
    global: &GlobalArgs,
    source: &Path,
    tests: &Path,
    checkpoint: Option<PathBuf>,
    scripted: &ScriptedModel,
) -> Result<()> {
    let config = resolve_config(global)?;
    let program = read_source(source)?;
    let tests: Vec<UnitTest> = read_jsonl(tests)?;
    if tests.is_empty() {
        bail!(perfrl::Error::Validation("the tests file has no test cases".into()));
    }
    let model = load_model(checkpoint, scripted, &config)?;
    let sandbox = config.sandbox()?;
    let task = TaskInstance {
        id: source.display().to_string(),
        fast_source: program.clone(),
        slow_source: program,
        tests,
        executable: false,
    };
    let baselines = eval::measure_baselines(std::slice::from_ref(&task), &sandbox, &config.eval)?;
    let Some(baseline) = baselines[0] else {
        bail!(perfrl::Error::Validation(
            "the input program does not pass its own tests".into()
        ));
    };
    let result = eval::evaluate_task(
        &*model,
        &task,
        Some(baseline),
        &sandbox,
        &config.sampling,
        &config.eval,
        &config.corpus.instruction,
    )?;
    let best = result
        .candidates
        .iter()
        .filter(|c| c.tier == Some(perfrl::reward::Tier::R4))
        .min_by(|a, b| a.mean_runtime.unwrap_or(f64::MAX).total_cmp(&b.mean_runtime.unwrap_or(f64::MAX)));
    match best {
        Some(c) => {
            tracing::info!(
                baseline_secs = baseline,
                new_secs = c.mean_runtime.unwrap_or(f64::NAN),
                "found a faster program"
            );
            print!("{}", c.program);
        }
        None => println!("no improvement (baseline runtime {baseline:.6} s)"),
    }
    Ok(())
}

pub fn corpus_check(global: &GlobalArgs, corpus: Option<PathBuf>) -> Result<()> {
    let config = resolve_config(global)?;
    let path = corpus_path(corpus, &config.corpus.train, "training")?;
    let tasks = load_corpus(&path)?;
    let sandbox = config.sandbox()?;
    let kept = filter_executable(&tasks, &sandbox, config.eval.timeout())?;
    for task in tasks.iter().filter(|t| !kept.iter().any(|k| k.id == t.id)) {
        tracing::warn!(task = %task.id, "slow program does not pass its tests");
    }
    let ratio = if tasks.is_empty() { 0.0 } else { kept.len() as f64 / tasks.len() as f64 };
    println!(
        "{}",
        json!({ "tasks": tasks.len(), "executable": kept.len(), "ratio": ratio })
    );
    Ok(())
}
