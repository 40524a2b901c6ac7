//! Command-line interface: configuration loading, overrides, dispatch, and
//! artifact persistence.
//!
//! Standard output carries exactly one artifact per invocation (an episode
//! log, a plan record, a summary record, or a CSV table); everything else
//! goes to standard error. All randomness flows from the config's master
//! seed or `--seed`, never from the clock.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::harness::{compare_arms, evaluate, BackendSpec, ExperimentConfig, PlannerKind};
use crate::ledger::{canonicalize, read_episode_log_file, write_episode_log};
use crate::planner::{plan_intervention, retained_sets, FailPolicy, PlannerConfig};
use crate::report::{arms_csv, episode_log_jsonl, to_pretty_json, ArmSummary};
use crate::scenarios::{run_scenario, Scenario, DEFAULT_MASTER_SEED};

/// Plan scene interventions from policy rollout evidence and reproduce the
/// calibrated simulation studies.
#[derive(Parser, Debug)]
#[command(name = "stagecraft", version, about)]
pub struct Cli {
    /// Worker threads for evaluation (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FailPolicyArg {
    /// Refuse to plan when no recorded set ever succeeded.
    Error,
    /// Fall back to keeping only the objects observed in every episode.
    KeepUbiquitous,
}

impl From<FailPolicyArg> for FailPolicy {
    fn from(arg: FailPolicyArg) -> Self {
        match arg {
            FailPolicyArg::Error => FailPolicy::Error,
            FailPolicyArg::KeepUbiquitous => FailPolicy::KeepUbiquitous,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Collect the in-context rollout buffer a config describes and write
    /// it as an episode log (stdout unless --out names a file).
    Collect {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Dotted-path config overrides, e.g. --set eval_episodes=50.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Episode log destination file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plan which objects to remove from a scene, given an episode log.
    Plan {
        /// Episode log (JSONL) holding the rollout evidence.
        #[arg(long)]
        log: PathBuf,
        /// Scene object names; repeat the flag or comma-separate.
        #[arg(long = "scene", value_name = "OBJECT", required = true, value_delimiter = ',')]
        scene: Vec<String>,
        /// Minimum episodes a set needs before it is trusted.
        #[arg(long, default_value_t = 1)]
        min_trials: u64,
        /// What to do when no recorded set ever succeeded.
        #[arg(long, value_enum, default_value_t = FailPolicyArg::Error)]
        fail_policy: FailPolicyArg,
    },
    /// Run one experiment arm end to end and print its summary record.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's planner.
        #[arg(long)]
        planner: Option<String>,
        /// Override the completion backend (mock:<rate>, replay:<path>,
        /// remote[:<url>]).
        #[arg(long)]
        backend: Option<String>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Directory for summary.json and episodes.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate several planner arms on one shared config and print the
    /// comparative CSV table.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Arm spec: a planner name, or vlm=<backend> (repeatable).
        #[arg(long = "arm", value_name = "PLANNER[=BACKEND]", required = true)]
        arms: Vec<String>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Directory for table.csv, summary.json, and per-arm logs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a named reproduction protocol and print its summary record.
    Reproduce {
        /// weak_vs_strong, icl_scaling, or planner_ablation.
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for summary.json, table.csv, chart.svg, and logs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Cli {
    /// Dispatch the parsed invocation inside the requested thread pool.
    pub fn run(self) -> Result<()> {
        let threads = self.threads;
        let command = self.command;
        if threads == 0 {
            return command.run();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|err| Error::config("threads", err.to_string()))?;
        pool.install(|| command.run())
    }
}

/// Set one dotted-path override in a JSON config value. The value text is
/// parsed as JSON when possible and treated as a string otherwise, so both
/// `--set eval_episodes=50` and `--set eval_template=three` read naturally.
fn apply_override(value: &mut serde_json::Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| {
        Error::config(
            "overrides",
            format!("`{assignment}` is not of the form key=value"),
        )
    })?;
    if path.is_empty() {
        return Err(Error::config("overrides", "override key is empty"));
    }
    let parsed: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cursor = value;
    let segments: Vec<&str> = path.split('.').collect();
    for segment in &segments[..segments.len() - 1] {
        if !cursor.is_object() {
            return Err(Error::config(
                "overrides",
                format!("`{path}` walks through a non-object value"),
            ));
        }
        cursor = cursor
            .as_object_mut()
            .expect("checked above")
            .entry(segment.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    let leaf = segments[segments.len() - 1];
    match cursor.as_object_mut() {
        Some(map) => {
            map.insert(leaf.to_string(), parsed);
            Ok(())
        }
        None => Err(Error::config(
            "overrides",
            format!("`{path}` walks through a non-object value"),
        )),
    }
}

fn load_config(
    path: &Path,
    seed: Option<u64>,
    planner: Option<&str>,
    backend: Option<&str>,
    overrides: &[String],
) -> Result<ExperimentConfig> {
    let raw = fs::read_to_string(path)?;
    let mut value: serde_json::Value = serde_json::from_str(&raw)?;
    for assignment in overrides {
        apply_override(&mut value, assignment)?;
    }
    if let Some(seed) = seed {
        value["master_seed"] = seed.into();
    }
    if let Some(planner) = planner {
        let kind: PlannerKind = planner.parse()?;
        value["planner"] = kind.to_string().into();
    }
    if let Some(backend) = backend {
        let spec: BackendSpec = backend.parse()?;
        value["backend"] = spec.to_string().into();
    }
    let config: ExperimentConfig = serde_json::from_value(value)?;
    config.validate()?;
    Ok(config)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, contents)?;
    Ok(())
}

fn print_artifact(text: &str) -> Result<()> {
    let stdout = std::io::stdout();
    let mut handle = stdout.lock();
    handle.write_all(text.as_bytes())?;
    handle.flush()?;
    Ok(())
}

fn arm_config(base: &ExperimentConfig, spec: &str) -> Result<ExperimentConfig> {
    let mut config = base.clone();
    match spec.split_once('=') {
        Some((planner, backend)) => {
            config.planner = planner.parse()?;
            config.backend = Some(backend.parse()?);
        }
        None => {
            config.planner = spec.parse()?;
            config.backend = None;
        }
    }
    Ok(config)
}

impl Command {
    fn run(self) -> Result<()> {
        match self {
            Command::Collect {
                config,
                seed,
                overrides,
                out,
            } => {
                let config = load_config(&config, seed, None, None, &overrides)?;
                let buffer = crate::harness::collect_in_context(&config)?;
                match out {
                    Some(path) => {
                        let mut bytes = Vec::new();
                        write_episode_log(&mut bytes, &buffer)?;
                        write_file(&path, std::str::from_utf8(&bytes).expect("log is utf-8"))?;
                        eprintln!(
                            "collected {} episodes into {}",
                            buffer.len(),
                            path.display()
                        );
                    }
                    None => {
                        let mut bytes = Vec::new();
                        write_episode_log(&mut bytes, &buffer)?;
                        print_artifact(std::str::from_utf8(&bytes).expect("log is utf-8"))?;
                    }
                }
                Ok(())
            }
            Command::Plan {
                log,
                scene,
                min_trials,
                fail_policy,
            } => {
                let buffer = read_episode_log_file(&log)?;
                let table = buffer.tally()?;
                let planner_config = PlannerConfig {
                    min_trials,
                    fail_policy: fail_policy.into(),
                };
                let retained = retained_sets(&table, &planner_config)?;
                let scene = canonicalize(&scene)?;
                let plan = plan_intervention(&retained, &scene)?;
                print_artifact(&to_pretty_json(&plan)?)
            }
            Command::Eval {
                config,
                seed,
                planner,
                backend,
                overrides,
                out,
            } => {
                let config = load_config(
                    &config,
                    seed,
                    planner.as_deref(),
                    backend.as_deref(),
                    &overrides,
                )?;
                let report = evaluate(&config)?;
                let summary = to_pretty_json(&ArmSummary::from(&report))?;
                if let Some(dir) = out {
                    fs::create_dir_all(&dir)?;
                    write_file(&dir.join("summary.json"), &summary)?;
                    write_file(&dir.join("episodes.jsonl"), &episode_log_jsonl(&report)?)?;
                    eprintln!("wrote summary.json and episodes.jsonl to {}", dir.display());
                }
                print_artifact(&summary)
            }
            Command::Compare {
                config,
                seed,
                arms,
                overrides,
                out,
            } => {
                let base = load_config(&config, seed, None, None, &overrides)?;
                let configs = arms
                    .iter()
                    .map(|spec| arm_config(&base, spec))
                    .collect::<Result<Vec<_>>>()?;
                let reports = compare_arms(&configs)?;
                let summaries: Vec<ArmSummary> = reports.iter().map(ArmSummary::from).collect();
                let table = arms_csv(&summaries);
                if let Some(dir) = out {
                    fs::create_dir_all(&dir)?;
                    write_file(&dir.join("table.csv"), &table)?;
                    write_file(&dir.join("summary.json"), &to_pretty_json(&summaries)?)?;
                    for report in &reports {
                        let name = format!(
                            "{}-episodes.jsonl",
                            report.label.replace(['[', ']', ':'], "-")
                        );
                        write_file(&dir.join(name), &episode_log_jsonl(report)?)?;
                    }
                    eprintln!("wrote comparison bundle to {}", dir.display());
                }
                print_artifact(&table)
            }
            Command::Reproduce {
                scenario,
                seed,
                out,
            } => {
                let scenario: Scenario = scenario.parse()?;
                let master_seed = seed.unwrap_or(DEFAULT_MASTER_SEED);
                let output = run_scenario(scenario, master_seed)?;
                if let Some(dir) = out {
                    fs::create_dir_all(&dir)?;
                    write_file(&dir.join("summary.json"), &output.summary_json)?;
                    write_file(&dir.join("table.csv"), &output.csv)?;
                    write_file(&dir.join("chart.svg"), &output.chart_svg)?;
                    for (name, contents) in &output.logs {
                        write_file(&dir.join(name), contents)?;
                    }
                    eprintln!(
                        "wrote {} bundle to {}",
                        output.scenario,
                        dir.display()
                    );
                }
                print_artifact(&output.summary_json)
            }
        }
    }
}
