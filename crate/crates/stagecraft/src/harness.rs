//! Experiment harness: configuration, episode collection, evaluation, and
//! arm-to-arm comparison.
//!
//! Every random draw is keyed off the config's master seed plus a purpose
//! tag and episode index, so a report is a pure function of its config.
//! Outcome draws depend only on the evaluation scene's seed and the policy,
//! which gives every planner arm the same luck on the same episode: arms
//! differ only through the scene modifications they make.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::ledger::{canonicalize, ObjectLabel, ObjectSet, RolloutBuffer};
use crate::planner::{
    plan_intervention, plan_no_op, plan_remove_all, retained_sets, InterventionPlan,
    PlannerConfig, RetainedCollection,
};
use crate::sim::{
    presets, execute_primitive, FamilySpec, PolicyProfile, PrimitiveAction, SceneTemplate,
};
use crate::stream::{mix, tag, StreamRng};
use crate::vlm::{
    build_prompt, parse_response, CompletionBackend, RemoteBackend, ReplayBackend,
    ScriptedBackend,
};

/// Reference to a shipped policy preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetRef {
    pub preset: String,
}

/// How an arm names its policy: a shipped preset or an inline model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileSpec {
    Preset(PresetRef),
    Inline(PolicyProfile),
}

impl ProfileSpec {
    pub fn preset(name: &str) -> Self {
        ProfileSpec::Preset(PresetRef {
            preset: name.to_string(),
        })
    }

    pub fn resolve(&self) -> Result<PolicyProfile> {
        match self {
            ProfileSpec::Preset(r) => presets::profile(&r.preset),
            ProfileSpec::Inline(profile) => {
                profile.validate()?;
                Ok(profile.clone())
            }
        }
    }
}

/// Which planning rule an arm runs before each evaluation episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerKind {
    /// Evidence-based planning from the rollout buffer.
    Stagecraft,
    /// Remove everything not observed in every recorded episode.
    RemoveAll,
    /// Leave the scene untouched.
    NoOp,
    /// Ask a completion backend for the removal list.
    Vlm,
}

impl fmt::Display for PlannerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            PlannerKind::Stagecraft => "stagecraft",
            PlannerKind::RemoveAll => "remove_all",
            PlannerKind::NoOp => "no_op",
            PlannerKind::Vlm => "vlm",
        };
        f.write_str(name)
    }
}

impl FromStr for PlannerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stagecraft" => Ok(PlannerKind::Stagecraft),
            "remove_all" | "remove-all" => Ok(PlannerKind::RemoveAll),
            "no_op" | "no-op" | "noop" => Ok(PlannerKind::NoOp),
            "vlm" => Ok(PlannerKind::Vlm),
            other => Err(Error::config(
                "planner",
                format!("unknown planner `{other}` (expected stagecraft, remove_all, no_op, or vlm)"),
            )),
        }
    }
}

/// Completion backend selector, written as a compact string:
/// `mock:<corruption rate>`, `replay:<transcript path>`, or
/// `remote[:<endpoint url>]`.
#[derive(Clone, Debug, PartialEq)]
pub enum BackendSpec {
    Mock { corruption_rate: f64 },
    Replay { path: String },
    Remote { endpoint: Option<String> },
}

impl BackendSpec {
    /// Instantiate the backend. `seed` feeds the mock's corruption stream;
    /// the other backends ignore it.
    pub fn build(&self, seed: u64) -> Result<Box<dyn CompletionBackend>> {
        match self {
            BackendSpec::Mock { corruption_rate } => {
                Ok(Box::new(ScriptedBackend::new(*corruption_rate, seed)?))
            }
            BackendSpec::Replay { path } => Ok(Box::new(ReplayBackend::from_file(
                std::path::Path::new(path),
            )?)),
            BackendSpec::Remote { endpoint } => Ok(Box::new(RemoteBackend::new(endpoint.clone())?)),
        }
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Mock { corruption_rate } => write!(f, "mock:{corruption_rate}"),
            BackendSpec::Replay { path } => write!(f, "replay:{path}"),
            BackendSpec::Remote { endpoint: None } => f.write_str("remote"),
            BackendSpec::Remote {
                endpoint: Some(url),
            } => write!(f, "remote:{url}"),
        }
    }
}

impl FromStr for BackendSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = match s.split_once(':') {
            Some((kind, rest)) => (kind, Some(rest)),
            None => (s, None),
        };
        match kind {
            "mock" => {
                let corruption_rate = match rest {
                    Some(raw) => raw.parse::<f64>().map_err(|_| {
                        Error::config("backend", format!("bad mock corruption rate `{raw}`"))
                    })?,
                    None => 0.0,
                };
                if !(0.0..=1.0).contains(&corruption_rate) {
                    return Err(Error::config(
                        "backend",
                        format!("mock corruption rate {corruption_rate} outside [0, 1]"),
                    ));
                }
                Ok(BackendSpec::Mock { corruption_rate })
            }
            "replay" => match rest {
                Some(path) if !path.is_empty() => Ok(BackendSpec::Replay {
                    path: path.to_string(),
                }),
                _ => Err(Error::config(
                    "backend",
                    "replay backend needs a transcript path: replay:<path>",
                )),
            },
            "remote" => Ok(BackendSpec::Remote {
                endpoint: rest.filter(|r| !r.is_empty()).map(|r| r.to_string()),
            }),
            other => Err(Error::config(
                "backend",
                format!("unknown backend `{other}` (expected mock:<rate>, replay:<path>, or remote[:<url>])"),
            )),
        }
    }
}

impl Serialize for BackendSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for BackendSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// Deploy-time distribution shift: with the given probability, one label
/// drawn uniformly from `labels` is added to each evaluation scene's
/// distractors before planning.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnseenInjection {
    pub probability: f64,
    pub labels: Vec<String>,
}

fn default_eval_episodes() -> u64 {
    100
}

/// Complete description of one experiment arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: ProfileSpec,
    pub family: FamilySpec,
    /// Episodes to collect per template, keyed by template name.
    pub in_context_counts: BTreeMap<String, u64>,
    /// Template evaluation scenes are drawn from.
    pub eval_template: String,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: u64,
    pub planner: PlannerKind,
    /// Required when `planner` is `vlm`, rejected otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<BackendSpec>,
    pub master_seed: u64,
    #[serde(default)]
    pub planner_config: PlannerConfig,
    #[serde(default)]
    pub unseen_injection: UnseenInjection,
    /// Per-attempt probability that a removal primitive fails and leaves
    /// the scene unchanged. Attempts count as interventions either way.
    #[serde(default)]
    pub primitive_failure_prob: f64,
}

impl ExperimentConfig {
    /// Standard arm on the shipped presets.
    pub fn preset_arm(
        profile_preset: &str,
        in_context_counts: &[(&str, u64)],
        eval_template: &str,
        eval_episodes: u64,
        planner: PlannerKind,
        master_seed: u64,
    ) -> Self {
        ExperimentConfig {
            profile: ProfileSpec::preset(profile_preset),
            family: presets::family_spec(),
            in_context_counts: in_context_counts
                .iter()
                .map(|(name, count)| (name.to_string(), *count))
                .collect(),
            eval_template: eval_template.to_string(),
            eval_episodes,
            planner,
            backend: None,
            master_seed,
            planner_config: PlannerConfig::default(),
            unseen_injection: UnseenInjection::default(),
            primitive_failure_prob: 0.0,
        }
    }

    /// Check everything that can be checked without touching the
    /// filesystem or network.
    pub fn validate(&self) -> Result<()> {
        self.profile.resolve()?;
        let templates = self.family.build()?;
        let names: Vec<&str> = templates.iter().map(|t| t.name.as_str()).collect();
        if !names.contains(&self.eval_template.as_str()) {
            return Err(Error::UnknownTemplate(self.eval_template.clone()));
        }
        for key in self.in_context_counts.keys() {
            if !names.contains(&key.as_str()) {
                return Err(Error::UnknownTemplate(key.clone()));
            }
        }
        if self.eval_episodes == 0 {
            return Err(Error::config("eval_episodes", "must be at least 1"));
        }
        if self.planner_config.min_trials == 0 {
            return Err(Error::config("planner_config.min_trials", "must be at least 1"));
        }
        match (self.planner, &self.backend) {
            (PlannerKind::Vlm, None) => {
                return Err(Error::config("backend", "the vlm planner needs a backend"))
            }
            (PlannerKind::Vlm, Some(_)) => {}
            (_, Some(_)) => {
                return Err(Error::config(
                    "backend",
                    "a backend is only used with the vlm planner",
                ))
            }
            (_, None) => {}
        }
        if !(0.0..=1.0).contains(&self.unseen_injection.probability) {
            return Err(Error::ProbabilityOutOfRange {
                field: "unseen_injection.probability",
                value: self.unseen_injection.probability,
            });
        }
        if self.unseen_injection.probability > 0.0 {
            if self.unseen_injection.labels.is_empty() {
                return Err(Error::config(
                    "unseen_injection.labels",
                    "injection probability is positive but no labels are given",
                ));
            }
            let labels = canonicalize(&self.unseen_injection.labels)?;
            let relevant = canonicalize(&self.family.relevant)?;
            let clash = labels.intersection(&relevant);
            if !clash.is_empty() {
                return Err(Error::config(
                    "unseen_injection.labels",
                    format!("label(s) {clash} are task-relevant and cannot be injected as distractors"),
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.primitive_failure_prob) {
            return Err(Error::ProbabilityOutOfRange {
                field: "primitive_failure_prob",
                value: self.primitive_failure_prob,
            });
        }
        Ok(())
    }

    /// Human-readable arm name for reports.
    pub fn arm_label(&self) -> String {
        match (&self.planner, &self.backend) {
            (PlannerKind::Vlm, Some(backend)) => format!("vlm[{backend}]"),
            (planner, _) => planner.to_string(),
        }
    }
}

/// Collect the in-context rollout buffer the config asks for: for each
/// template, the configured number of episodes, each on a fresh seeded
/// scene instance.
pub fn collect_in_context(config: &ExperimentConfig) -> Result<RolloutBuffer> {
    config.validate()?;
    let profile = config.profile.resolve()?;
    let templates = config.family.build()?;
    let mut buffer = RolloutBuffer::new();
    for (name, &count) in &config.in_context_counts {
        let (index, template) = templates
            .iter()
            .enumerate()
            .find(|(_, t)| t.name == *name)
            .ok_or_else(|| Error::UnknownTemplate(name.clone()))?;
        for j in 0..count {
            let seed = mix(&[config.master_seed, tag("ic"), index as u64, j]);
            let scene = template.instantiate(seed);
            let mut episode = profile.rollout(&scene);
            episode.episode_id = format!("ic-{name}-{j}");
            buffer.record_episode(episode)?;
        }
    }
    if buffer.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    Ok(buffer)
}

/// What happened on one evaluation episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub episode: u64,
    pub scene_seed: u64,
    /// Scene contents before any intervention, canonical order.
    pub scene: Vec<String>,
    /// Distribution-shift object added this episode, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injected: Option<String>,
    /// Objects the planner decided to remove (each one is an attempt).
    pub planned_removals: Vec<String>,
    /// Removals that physically succeeded.
    pub executed_removals: Vec<String>,
    /// How many executed removals took out a task-relevant object.
    pub relevant_removals: u64,
    pub fallback_used: bool,
    pub outcome: bool,
}

/// Aggregate results for one arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub planner: PlannerKind,
    pub eval_episodes: u64,
    pub success_rate: f64,
    pub mean_interventions: f64,
    /// Coefficient of variation of per-episode intervention counts, in
    /// percent, rounded to two decimals; absent when the mean is zero.
    pub cov_interventions_percent: Option<f64>,
    pub relevant_object_removals: u64,
    pub intervention_counts: Vec<u64>,
    pub per_episode: Vec<EpisodeReport>,
}

/// Population coefficient of variation in percent, rounded to two
/// decimals. `None` when the mean is zero (the ratio is undefined).
pub fn coefficient_of_variation_percent(counts: &[u64]) -> Option<f64> {
    if counts.is_empty() {
        return None;
    }
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<u64>() as f64 / n;
    if mean == 0.0 {
        return None;
    }
    let var = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let cov = var.sqrt() / mean * 100.0;
    Some((cov * 100.0).round() / 100.0)
}

struct ArmState<'a> {
    config: &'a ExperimentConfig,
    profile: PolicyProfile,
    eval_template: SceneTemplate,
    buffer: &'a RolloutBuffer,
    retained: Option<RetainedCollection>,
    ubiquitous: ObjectSet,
    backend: Option<Box<dyn CompletionBackend>>,
    injection_labels: Vec<ObjectLabel>,
}

impl ArmState<'_> {
    fn plan_for(&self, scene_objects: &ObjectSet, episode: u64) -> Result<InterventionPlan> {
        match self.config.planner {
            PlannerKind::Stagecraft => plan_intervention(
                self.retained.as_ref().expect("retained sets were prepared"),
                scene_objects,
            ),
            PlannerKind::RemoveAll => Ok(plan_remove_all(scene_objects, &self.ubiquitous)),
            PlannerKind::NoOp => Ok(plan_no_op(scene_objects)),
            PlannerKind::Vlm => {
                let backend = self.backend.as_ref().expect("backend was prepared");
                let bundle = build_prompt(self.buffer, scene_objects)?;
                let request_seed =
                    mix(&[self.config.master_seed, tag("vlm-request"), episode]);
                let completion = backend.complete(&bundle, request_seed)?;
                let parsed = parse_response(&completion)?;
                // Hallucinated objects are ignored; only real scene members
                // can be removal targets.
                let remove = parsed.removal_set()?.intersection(scene_objects);
                let keep = scene_objects.difference(&remove);
                Ok(InterventionPlan {
                    keep: keep.clone(),
                    remove,
                    selected_set: keep,
                    fallback_used: false,
                    justification: parsed.reasoning,
                })
            }
        }
    }

    fn run_episode(&self, episode: u64) -> Result<EpisodeReport> {
        let config = self.config;
        let scene_seed = mix(&[config.master_seed, tag("eval"), episode]);
        let mut scene = self.eval_template.instantiate(scene_seed);

        let mut injected = None;
        if config.unseen_injection.probability > 0.0 && !self.injection_labels.is_empty() {
            let mut rng = StreamRng::new(mix(&[config.master_seed, tag("inject"), episode]));
            if rng.bernoulli(config.unseen_injection.probability) {
                let pick = rng.below(self.injection_labels.len() as u64) as usize;
                let label = self.injection_labels[pick].clone();
                scene.distractors.insert(label.clone());
                injected = Some(label.name().to_string());
            }
        }

        let scene_objects = scene.all_objects();
        let plan = self.plan_for(&scene_objects, episode)?;

        let mut current = scene.clone();
        let mut executed_removals = Vec::new();
        let mut relevant_removals = 0u64;
        for (k, target) in plan.remove.iter().enumerate() {
            let action =
                PrimitiveAction::with_failure_prob(target.clone(), config.primitive_failure_prob)?;
            let was_relevant = current.relevant.contains(target);
            let seed = mix(&[config.master_seed, tag("prim"), episode, k as u64]);
            current = execute_primitive(&current, &action, seed)?;
            if !current.contains(target) {
                executed_removals.push(target.name().to_string());
                if was_relevant {
                    relevant_removals += 1;
                }
            }
        }

        // Removing a task-relevant object makes the episode unwinnable.
        // Otherwise the outcome draw depends only on the scene seed and the
        // policy, so arms share per-episode luck.
        let outcome = if current.relevant != scene.relevant {
            false
        } else {
            self.profile.rollout(&current).outcome
        };

        Ok(EpisodeReport {
            episode,
            scene_seed,
            scene: scene_objects.names().iter().map(|s| s.to_string()).collect(),
            injected,
            planned_removals: plan.remove.names().iter().map(|s| s.to_string()).collect(),
            executed_removals,
            relevant_removals,
            fallback_used: plan.fallback_used,
            outcome,
        })
    }
}

/// Evaluate one arm against a shared, already-collected rollout buffer.
pub fn evaluate_with_buffer(
    config: &ExperimentConfig,
    buffer: &RolloutBuffer,
) -> Result<MetricsReport> {
    config.validate()?;
    if buffer.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let profile = config.profile.resolve()?;
    let templates = config.family.build()?;
    let eval_template = templates
        .iter()
        .find(|t| t.name == config.eval_template)
        .ok_or_else(|| Error::UnknownTemplate(config.eval_template.clone()))?
        .clone();
    let retained = match config.planner {
        PlannerKind::Stagecraft => Some(retained_sets(&buffer.tally()?, &config.planner_config)?),
        _ => None,
    };
    let backend = match (config.planner, &config.backend) {
        (PlannerKind::Vlm, Some(spec)) => {
            Some(spec.build(mix(&[config.master_seed, tag("backend")]))?)
        }
        _ => None,
    };
    let injection_labels: Vec<ObjectLabel> = canonicalize(&config.unseen_injection.labels)?
        .iter()
        .cloned()
        .collect();
    let state = ArmState {
        config,
        profile,
        eval_template,
        buffer,
        retained,
        ubiquitous: buffer.ubiquitous_objects(),
        backend,
        injection_labels,
    };

    let episodes: Vec<Result<EpisodeReport>> = (0..config.eval_episodes as usize)
        .into_par_iter()
        .map(|e| state.run_episode(e as u64))
        .collect();
    let per_episode = episodes.into_iter().collect::<Result<Vec<_>>>()?;

    let n = per_episode.len() as f64;
    let successes = per_episode.iter().filter(|e| e.outcome).count() as f64;
    let intervention_counts: Vec<u64> = per_episode
        .iter()
        .map(|e| e.planned_removals.len() as u64)
        .collect();
    let mean_interventions = intervention_counts.iter().sum::<u64>() as f64 / n;
    let relevant_object_removals = per_episode.iter().map(|e| e.relevant_removals).sum();

    Ok(MetricsReport {
        label: config.arm_label(),
        planner: config.planner,
        eval_episodes: config.eval_episodes,
        success_rate: successes / n,
        mean_interventions,
        cov_interventions_percent: coefficient_of_variation_percent(&intervention_counts),
        relevant_object_removals,
        intervention_counts,
        per_episode,
    })
}

/// Collect the buffer the config describes, then evaluate on it.
pub fn evaluate(config: &ExperimentConfig) -> Result<MetricsReport> {
    let buffer = collect_in_context(config)?;
    evaluate_with_buffer(config, &buffer)
}

/// Evaluate several arms that differ only in planner/backend, sharing one
/// rollout buffer and per-episode evaluation scenes.
pub fn compare_arms(configs: &[ExperimentConfig]) -> Result<Vec<MetricsReport>> {
    if configs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut stripped = Vec::with_capacity(configs.len());
    for config in configs {
        let mut value = serde_json::to_value(config)?;
        let map = value
            .as_object_mut()
            .expect("config serializes to an object");
        map.remove("planner");
        map.remove("backend");
        stripped.push(value);
    }
    for (i, value) in stripped.iter().enumerate().skip(1) {
        if *value != stripped[0] {
            return Err(Error::ArmsNotComparable(format!(
                "arm {i} ({}) differs from arm 0 ({}) outside planner/backend",
                configs[i].arm_label(),
                configs[0].arm_label()
            )));
        }
    }
    let buffer = collect_in_context(&configs[0])?;
    configs
        .iter()
        .map(|config| evaluate_with_buffer(config, &buffer))
        .collect()
}

/// Whether the top-ranked retained set is a trap: its model-true success
/// probability sits at least `margin` below the empirical rate that got it
/// retained. Small buffers retain lucky sets; this flags them.
pub fn selection_is_fragile(
    retained: &RetainedCollection,
    profile: &PolicyProfile,
    relevant: &ObjectSet,
    margin: f64,
) -> bool {
    let Some(first) = retained.sets().first() else {
        return false;
    };
    let distractors = first.objects.difference(relevant);
    let true_p = profile.success_probability_over(distractors.iter());
    true_p <= retained.sr_max().as_f64() - margin
}
