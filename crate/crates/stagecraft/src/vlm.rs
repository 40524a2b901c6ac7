//! Prompt construction, response parsing, and completion backends.
//!
//! The prompt walks a language model through the same pipeline the native
//! planner runs: group rollouts into object sets, keep the sets with the
//! highest success rate, map the current scene onto the largest kept set.
//! The scripted mock actually runs that pipeline (optionally corrupting the
//! answer at a configured rate), so at corruption zero the whole
//! prompt-and-parse loop reproduces the native plans exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ledger::{canonicalize, EpisodeRecord, EpisodeSource, ObjectSet, RolloutBuffer};
use crate::planner::{plan_intervention, retained_sets, FailPolicy, PlannerConfig};
use crate::stream::{fnv1a64, mix, StreamRng};

/// Versioned instruction block teaching the three-step selection strategy.
pub const STRATEGY_TEXT_V1: &str = "Follow these three steps exactly:\n\
1. Group the rollout history into object sets: normalize names to lowercase with single spaces, and treat two episodes as the same set when they contain exactly the same objects.\n\
2. Compute each set's empirical success rate (successes divided by episodes) and keep only the sets achieving the highest rate observed.\n\
3. Among the kept sets, choose the largest one whose objects are all present in the current scene, and remove every scene object outside it. Prefer the set backed by more episodes when several qualify. A scene object that appears in no kept set must be removed.";

/// Versioned contract for the reply format.
pub const OUTPUT_SCHEMA_TEXT_V1: &str = "Reply with a fenced JSON block:\n\
```json\n{\"remove\": [\"<object name>\", ...], \"reasoning\": \"<one short sentence>\"}\n```\n\
The \"remove\" array must list exactly the objects to take out of the scene; use [] to leave the scene unchanged.";

/// One in-context episode as shown to the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextEpisode {
    /// Canonical names in lexicographic order.
    pub objects: Vec<String>,
    pub outcome: bool,
    /// Opaque reference to an episode image, when a multimodal backend has
    /// one to attach. Text-only pipelines leave it empty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attachment: Option<String>,
}

/// Everything needed to issue one planning request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub strategy_text: String,
    pub context_episodes: Vec<ContextEpisode>,
    pub current_scene: Vec<String>,
    pub output_schema_text: String,
}

impl PromptBundle {
    /// Deterministic plain-text rendering; identical bundles render to
    /// identical bytes.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("You are preparing a robot workspace before a fixed policy runs.\n\n");
        out.push_str(&self.strategy_text);
        out.push_str("\n\nRollout history (");
        out.push_str(&self.context_episodes.len().to_string());
        out.push_str(" episodes):\n");
        for (i, ep) in self.context_episodes.iter().enumerate() {
            out.push_str(&format!(
                "Episode {}: objects = [{}]; outcome = {}",
                i + 1,
                ep.objects.join(", "),
                if ep.outcome { "success" } else { "failure" }
            ));
            if let Some(reference) = &ep.attachment {
                out.push_str(&format!(" (attachment: {reference})"));
            }
            out.push('\n');
        }
        out.push_str("\nCurrent scene: [");
        out.push_str(&self.current_scene.join(", "));
        out.push_str("]\n\n");
        out.push_str(&self.output_schema_text);
        out.push('\n');
        out
    }
}

/// Lowercase hex hash of the rendered prompt; keys replay transcripts.
pub fn prompt_hash(bundle: &PromptBundle) -> String {
    format!("{:016x}", fnv1a64(bundle.render().as_bytes()))
}

/// Build the planning prompt for a scene from a rollout buffer.
///
/// One episode line per buffer record, objects in lexicographic order;
/// byte-identical output for identical inputs.
pub fn build_prompt(buffer: &RolloutBuffer, scene: &ObjectSet) -> Result<PromptBundle> {
    if buffer.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    if scene.is_empty() {
        return Err(Error::EmptyObjectSet);
    }
    let context_episodes = buffer
        .episodes()
        .iter()
        .map(|ep| ContextEpisode {
            objects: ep.objects.names().iter().map(|s| s.to_string()).collect(),
            outcome: ep.outcome,
            attachment: None,
        })
        .collect();
    Ok(PromptBundle {
        strategy_text: STRATEGY_TEXT_V1.to_string(),
        context_episodes,
        current_scene: scene.names().iter().map(|s| s.to_string()).collect(),
        output_schema_text: OUTPUT_SCHEMA_TEXT_V1.to_string(),
    })
}

/// The structured content recovered from a completion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub remove: Vec<String>,
    pub reasoning: String,
}

impl ParsedResponse {
    /// Canonicalize the removal list into an object set.
    pub fn removal_set(&self) -> Result<ObjectSet> {
        canonicalize(&self.remove)
    }
}

fn parse_candidate(text: &str) -> Option<ParsedResponse> {
    let value: serde_json::Value = serde_json::Deserializer::from_str(text)
        .into_iter::<serde_json::Value>()
        .next()?
        .ok()?;
    let object = value.as_object()?;
    let remove = object
        .get("remove")?
        .as_array()?
        .iter()
        .map(|v| v.as_str().map(|s| s.to_string()))
        .collect::<Option<Vec<String>>>()?;
    let reasoning = object
        .get("reasoning")
        .and_then(|v| v.as_str())
        .unwrap_or("")
        .to_string();
    Some(ParsedResponse { remove, reasoning })
}

/// Extract the removal decision from free-form completion text.
///
/// Accepts a bare JSON object, a fenced code block (with or without a
/// language tag), or an object embedded in surrounding prose; the first
/// candidate containing a `remove` string array wins.
pub fn parse_response(raw: &str) -> Result<ParsedResponse> {
    // Fenced blocks first: they are the requested format.
    let mut rest = raw;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let Some(close) = after.find("```") else {
            break;
        };
        let block = &after[..close];
        let body = match block.find('\n') {
            Some(nl) if block[..nl].trim().chars().all(|c| c.is_ascii_alphanumeric()) => {
                &block[nl + 1..]
            }
            _ => block,
        };
        if let Some(parsed) = parse_candidate(body.trim()) {
            return Ok(parsed);
        }
        rest = &after[close + 3..];
    }

    if let Some(parsed) = parse_candidate(raw.trim()) {
        return Ok(parsed);
    }

    // Last resort: try every brace-opened suffix.
    for (idx, _) in raw.match_indices('{') {
        if let Some(parsed) = parse_candidate(&raw[idx..]) {
            return Ok(parsed);
        }
    }
    Err(Error::Unparseable)
}

/// Fraction of cases where the parsed removal set matches the reference
/// planner's removal set exactly.
pub fn prompt_following_accuracy(
    model_plans: &[ObjectSet],
    reference_plans: &[ObjectSet],
) -> Result<f64> {
    if model_plans.len() != reference_plans.len() {
        return Err(Error::LengthMismatch {
            left: model_plans.len(),
            right: reference_plans.len(),
        });
    }
    if model_plans.is_empty() {
        return Err(Error::EmptyInput);
    }
    let matches = model_plans
        .iter()
        .zip(reference_plans)
        .filter(|(a, b)| a == b)
        .count();
    Ok(matches as f64 / model_plans.len() as f64)
}

/// Softer per-object agreement: mean Jaccard similarity of the removal sets
/// (1.0 when both are empty).
pub fn per_object_match_rate(
    model_plans: &[ObjectSet],
    reference_plans: &[ObjectSet],
) -> Result<f64> {
    if model_plans.len() != reference_plans.len() {
        return Err(Error::LengthMismatch {
            left: model_plans.len(),
            right: reference_plans.len(),
        });
    }
    if model_plans.is_empty() {
        return Err(Error::EmptyInput);
    }
    let total: f64 = model_plans
        .iter()
        .zip(reference_plans)
        .map(|(a, b)| {
            let union = a.union(b).len();
            if union == 0 {
                1.0
            } else {
                a.intersection(b).len() as f64 / union as f64
            }
        })
        .sum();
    Ok(total / model_plans.len() as f64)
}

/// Produce a completion for a prompt.
///
/// `request_seed` identifies the request; implementations that inject
/// randomness must derive every draw from it and the bundle alone, so a
/// retried request yields the same text and concurrent requests share no
/// state.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, bundle: &PromptBundle, request_seed: u64) -> Result<String>;
}

/// Deterministic mock: runs the native planning pipeline on the prompt's own
/// episode lines and answers in the requested format, corrupting the removal
/// list at a configured rate.
#[derive(Clone, Debug)]
pub struct ScriptedBackend {
    corruption_rate: f64,
    seed: u64,
    planner_config: PlannerConfig,
}

impl ScriptedBackend {
    pub fn new(corruption_rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&corruption_rate) {
            return Err(Error::ProbabilityOutOfRange {
                field: "backend.corruption_rate",
                value: corruption_rate,
            });
        }
        Ok(Self {
            corruption_rate,
            seed,
            // The mock always answers, even for all-failure histories.
            planner_config: PlannerConfig {
                min_trials: 1,
                fail_policy: FailPolicy::KeepUbiquitous,
            },
        })
    }

    fn reference_removals(&self, bundle: &PromptBundle) -> Result<(ObjectSet, ObjectSet, String)> {
        let mut buffer = RolloutBuffer::new();
        for (i, ep) in bundle.context_episodes.iter().enumerate() {
            buffer.record_episode(EpisodeRecord {
                episode_id: format!("ctx-{i}"),
                objects: canonicalize(&ep.objects)?,
                instantiation_seed: i as u64,
                outcome: ep.outcome,
                source: EpisodeSource::Imported,
            })?;
        }
        let scene = canonicalize(&bundle.current_scene)?;
        let retained = retained_sets(&buffer.tally()?, &self.planner_config)?;
        let plan = plan_intervention(&retained, &scene)?;
        Ok((plan.remove, scene, plan.justification))
    }
}

impl CompletionBackend for ScriptedBackend {
    fn complete(&self, bundle: &PromptBundle, request_seed: u64) -> Result<String> {
        let (mut remove, scene, justification) = self.reference_removals(bundle)?;
        let mut rng = StreamRng::new(mix(&[
            self.seed,
            request_seed,
            fnv1a64(bundle.render().as_bytes()),
        ]));
        let corrupted = rng.bernoulli(self.corruption_rate);
        if corrupted {
            // A corruption always changes the removal set: either pull in an
            // object the plan meant to keep (possibly task-relevant) or drop
            // a planned removal.
            let kept = scene.difference(&remove);
            let add = if kept.is_empty() {
                false
            } else if remove.is_empty() {
                true
            } else {
                rng.bernoulli(0.5)
            };
            if add {
                let pick = rng.below(kept.len() as u64) as usize;
                let label = kept.iter().nth(pick).expect("pick is in range").clone();
                remove.insert(label);
            } else if !remove.is_empty() {
                let pick = rng.below(remove.len() as u64) as usize;
                let label = remove.iter().nth(pick).expect("pick is in range").clone();
                remove.remove(&label);
            }
        }
        let reasoning = if corrupted {
            "Clearing additional clutter to be safe.".to_string()
        } else {
            justification
        };
        let payload = serde_json::json!({
            "remove": remove.names(),
            "reasoning": reasoning,
        });
        Ok(format!(
            "Looking at the rollout history and the current scene.\n\n```json\n{}\n```\n",
            serde_json::to_string_pretty(&payload)?
        ))
    }
}

/// Replays recorded completions keyed by prompt hash.
#[derive(Clone, Debug, Default)]
pub struct ReplayBackend {
    entries: BTreeMap<String, String>,
}

/// One line of a transcript file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub prompt_hash: String,
    pub response: String,
}

impl ReplayBackend {
    pub fn new(entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        Self {
            entries: entries
                .into_iter()
                .map(|e| (e.prompt_hash, e.response))
                .collect(),
        }
    }

    /// Load a line-delimited transcript of (prompt hash, response text).
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (idx, line) in fs::read_to_string(path)?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptEntry =
                serde_json::from_str(line).map_err(|err| Error::MalformedLog {
                    line: idx + 1,
                    message: err.to_string(),
                })?;
            entries.push(entry);
        }
        Ok(Self::new(entries))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Write a transcript file consumable by [`ReplayBackend::from_file`].
pub fn write_transcript_file(path: &Path, entries: &[TranscriptEntry]) -> Result<()> {
    let mut out = String::new();
    for entry in entries {
        out.push_str(&serde_json::to_string(entry)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

impl CompletionBackend for ReplayBackend {
    fn complete(&self, bundle: &PromptBundle, _request_seed: u64) -> Result<String> {
        let hash = prompt_hash(bundle);
        self.entries
            .get(&hash)
            .cloned()
            .ok_or(Error::ReplayMiss(hash))
    }
}

/// Environment variable naming the remote completion endpoint.
pub const ENDPOINT_ENV: &str = "STAGECRAFT_VLM_ENDPOINT";
/// Environment variable holding the bearer token, if the endpoint needs one.
pub const TOKEN_ENV: &str = "STAGECRAFT_VLM_TOKEN";

/// Remote endpoint client: one JSON POST per request, {"prompt": text} in,
/// {"completion": text} back. Endpoint and credential come from config or
/// environment, never from code.
#[derive(Debug)]
pub struct RemoteBackend {
    endpoint: String,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

impl RemoteBackend {
    pub fn new(endpoint: Option<String>) -> Result<Self> {
        let endpoint = match endpoint.or_else(|| std::env::var(ENDPOINT_ENV).ok()) {
            Some(url) if !url.trim().is_empty() => url,
            _ => {
                return Err(Error::config(
                    "backend.endpoint",
                    format!("remote backend needs an endpoint; set {ENDPOINT_ENV} or pass one in config"),
                ))
            }
        };
        Ok(Self {
            endpoint,
            token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            client: reqwest::blocking::Client::new(),
        })
    }
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct RemoteResponse {
    completion: String,
}

impl CompletionBackend for RemoteBackend {
    fn complete(&self, bundle: &PromptBundle, _request_seed: u64) -> Result<String> {
        let mut request = self.client.post(&self.endpoint).json(&RemoteRequest {
            prompt: &bundle.render(),
        });
        if let Some(token) = &self.token {
            request = request.bearer_auth(token);
        }
        let response = request
            .send()
            .map_err(|err| Error::Backend(err.to_string()))?;
        if !response.status().is_success() {
            return Err(Error::Backend(format!(
                "endpoint returned status {}",
                response.status()
            )));
        }
        let body: RemoteResponse = response
            .json()
            .map_err(|err| Error::Backend(format!("malformed completion payload: {err}")))?;
        Ok(body.completion)
    }
}
