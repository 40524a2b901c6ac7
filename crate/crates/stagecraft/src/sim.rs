//! Surrogate stochastic policy and scene environments.
//!
//! Task success is a single seeded Bernoulli draw whose probability is the
//! policy's distractor-free rate shrunk multiplicatively by every distractor
//! present. No poses, contacts, or trajectories are modeled; the per-object
//! sensitivities are the whole story, which is exactly enough to study how
//! pre-execution object removal changes a fixed policy's success.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ledger::{EpisodeRecord, EpisodeSource, ObjectLabel, ObjectSet};
use crate::stream::{fnv1a64, mix, tag, StreamRng};

/// Success model for one fixed policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyProfile {
    /// Success probability with no distractors present.
    pub base_success: f64,
    /// Per-label fractional penalty in [0, 1]; 1.0 means the distractor
    /// alone drives success to zero.
    #[serde(default)]
    pub sensitivities: BTreeMap<ObjectLabel, f64>,
    /// Penalty applied to distractors missing from the map.
    #[serde(default)]
    pub default_sensitivity: f64,
}

impl PolicyProfile {
    pub fn new(
        base_success: f64,
        sensitivities: BTreeMap<ObjectLabel, f64>,
        default_sensitivity: f64,
    ) -> Result<Self> {
        let profile = Self {
            base_success,
            sensitivities,
            default_sensitivity,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        check_probability("profile.base_success", self.base_success)?;
        check_probability("profile.default_sensitivity", self.default_sensitivity)?;
        for (label, &s) in &self.sensitivities {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::config(
                    format!("profile.sensitivities.{label}"),
                    format!("must lie in [0, 1], got {s}"),
                ));
            }
        }
        Ok(())
    }

    /// Closed-form success probability for a scene:
    /// `base * prod(1 - sensitivity(d))` over the distractors present,
    /// clamped to [0, 1]. Relevant objects contribute no penalty, but a
    /// scene whose relevant set has been emptied (by primitive removals)
    /// cannot succeed at all.
    pub fn success_probability(&self, scene: &SceneSpec) -> f64 {
        if scene.relevant.is_empty() {
            return 0.0;
        }
        self.success_probability_over(scene.distractors.iter())
    }

    /// Success probability given only the distractors present, for callers
    /// that reason about hypothetical object sets rather than full scenes.
    pub fn success_probability_over<'a>(
        &self,
        distractors: impl IntoIterator<Item = &'a ObjectLabel>,
    ) -> f64 {
        let mut p = self.base_success;
        for label in distractors {
            let s = self
                .sensitivities
                .get(label)
                .copied()
                .unwrap_or(self.default_sensitivity);
            p *= 1.0 - s;
        }
        p.clamp(0.0, 1.0)
    }

    /// One seeded episode: the outcome stream is a pure function of the
    /// scene's instantiation seed and this profile, so repeated calls agree
    /// and different profiles draw independently.
    pub fn rollout(&self, scene: &SceneSpec) -> EpisodeRecord {
        let p = self.success_probability(scene);
        let mut rng = StreamRng::new(mix(&[scene.seed, self.stream_digest(), tag("rollout")]));
        EpisodeRecord {
            episode_id: format!("ep-{:016x}", scene.seed),
            objects: scene.all_objects(),
            instantiation_seed: scene.seed,
            outcome: rng.bernoulli(p),
            source: EpisodeSource::Simulated,
        }
    }

    fn stream_digest(&self) -> u64 {
        let mut parts = vec![self.base_success.to_bits(), self.default_sensitivity.to_bits()];
        for (label, &s) in &self.sensitivities {
            parts.push(fnv1a64(label.name().as_bytes()));
            parts.push(s.to_bits());
        }
        mix(&parts)
    }
}

fn check_probability(field: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::ProbabilityOutOfRange { field, value })
    }
}

/// Read a policy profile from a json file.
pub fn read_profile_file(path: &Path) -> Result<PolicyProfile> {
    let profile: PolicyProfile = serde_json::from_str(&fs::read_to_string(path)?)?;
    profile.validate()?;
    Ok(profile)
}

/// One concrete scene: the task-relevant objects, the distractors present,
/// and the seed that stands in for all pose variation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub relevant: ObjectSet,
    pub distractors: ObjectSet,
    pub seed: u64,
}

impl SceneSpec {
    /// Relevant objects must be nonempty and disjoint from the distractors.
    /// (Primitive execution may later empty the relevant set; only
    /// construction enforces nonemptiness.)
    pub fn new(relevant: ObjectSet, distractors: ObjectSet, seed: u64) -> Result<Self> {
        if relevant.is_empty() {
            return Err(Error::EmptyRelevantSet);
        }
        if let Some(shared) = relevant.intersection(&distractors).iter().next() {
            return Err(Error::SceneOverlap(shared.name().to_string()));
        }
        Ok(Self {
            relevant,
            distractors,
            seed,
        })
    }

    pub fn all_objects(&self) -> ObjectSet {
        self.relevant.union(&self.distractors)
    }

    pub fn contains(&self, label: &ObjectLabel) -> bool {
        self.relevant.contains(label) || self.distractors.contains(label)
    }
}

/// The one manipulation primitive: take an object out of the scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveAction {
    pub target: ObjectLabel,
    /// Probability the pick-and-remove attempt fails and leaves the scene
    /// unchanged.
    #[serde(default)]
    pub failure_prob: f64,
}

impl PrimitiveAction {
    pub fn remove_object(target: ObjectLabel) -> Self {
        Self {
            target,
            failure_prob: 0.0,
        }
    }

    pub fn with_failure_prob(target: ObjectLabel, failure_prob: f64) -> Result<Self> {
        check_probability("action.failure_prob", failure_prob)?;
        Ok(Self {
            target,
            failure_prob,
        })
    }
}

/// Attempt one removal. The target must currently be in the scene; removing
/// a task-relevant object is allowed (that is the failure mode intervention
/// quality metrics need to see). Returns the resulting scene.
pub fn execute_primitive(
    scene: &SceneSpec,
    action: &PrimitiveAction,
    seed: u64,
) -> Result<SceneSpec> {
    if !scene.contains(&action.target) {
        return Err(Error::TargetAbsent(action.target.name().to_string()));
    }
    let mut rng = StreamRng::new(mix(&[
        seed,
        fnv1a64(action.target.name().as_bytes()),
        tag("primitive"),
    ]));
    let mut next = scene.clone();
    if !rng.bernoulli(action.failure_prob) {
        next.relevant.remove(&action.target);
        next.distractors.remove(&action.target);
    }
    Ok(next)
}

/// A named scene layout; the seed is supplied at instantiation time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneTemplate {
    pub name: String,
    pub relevant: ObjectSet,
    pub distractors: ObjectSet,
}

impl SceneTemplate {
    pub fn instantiate(&self, seed: u64) -> SceneSpec {
        SceneSpec {
            relevant: self.relevant.clone(),
            distractors: self.distractors.clone(),
            seed,
        }
    }

    pub fn all_objects(&self) -> ObjectSet {
        self.relevant.union(&self.distractors)
    }
}

const COUNT_NAMES: [&str; 13] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    "eleven", "twelve",
];

/// Build a nested family of scene templates: template k contains the first
/// `nesting[k]` pool distractors in lexicographic order, so each template's
/// distractors are a subset of the next. Templates are named after their
/// distractor count ("zero", "one", ...).
pub fn make_environment_family(
    pool: &ObjectSet,
    relevant: &ObjectSet,
    nesting: &[usize],
) -> Result<Vec<SceneTemplate>> {
    if relevant.is_empty() {
        return Err(Error::EmptyRelevantSet);
    }
    if let Some(shared) = relevant.intersection(pool).iter().next() {
        return Err(Error::SceneOverlap(shared.name().to_string()));
    }
    if nesting.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::NestingNotMonotonic);
    }
    let ordered: Vec<&ObjectLabel> = pool.iter().collect();
    let mut templates = Vec::with_capacity(nesting.len());
    let mut used_names: std::collections::BTreeSet<String> = std::collections::BTreeSet::new();
    for (k, &count) in nesting.iter().enumerate() {
        if count > ordered.len() {
            return Err(Error::CountExceedsPool {
                count,
                pool: ordered.len(),
            });
        }
        let mut name = COUNT_NAMES
            .get(count)
            .map(|s| s.to_string())
            .unwrap_or_else(|| count.to_string());
        if !used_names.insert(name.clone()) {
            name = format!("{name}-{k}");
            used_names.insert(name.clone());
        }
        templates.push(SceneTemplate {
            name,
            relevant: relevant.clone(),
            distractors: ordered[..count].iter().map(|&l| l.clone()).collect(),
        });
    }
    Ok(templates)
}

/// Pool/relevant/nesting description of an environment family, as stored in
/// config files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub pool: Vec<String>,
    pub relevant: Vec<String>,
    pub nesting: Vec<usize>,
}

impl FamilySpec {
    pub fn build(&self) -> Result<Vec<SceneTemplate>> {
        let pool = crate::ledger::canonicalize(&self.pool)?;
        let relevant = crate::ledger::canonicalize(&self.relevant)?;
        make_environment_family(&pool, &relevant, &self.nesting)
    }
}

pub fn read_family_file(path: &Path) -> Result<FamilySpec> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Shipped calibration presets: a brittle and a robust surrogate policy on a
/// four-template nested environment family.
pub mod presets {
    use super::*;

    pub const WEAK: &str = "weak";
    pub const STRONG: &str = "strong";

    /// Task-relevant objects shared by every preset template.
    pub fn relevant_objects() -> ObjectSet {
        crate::ledger::canonicalize(["red cup"]).unwrap()
    }

    /// Distractor pool, in the lexicographic order templates consume it.
    pub fn distractor_pool() -> ObjectSet {
        crate::ledger::canonicalize(["green block", "pink cloth", "yellow duck"]).unwrap()
    }

    /// Brittle policy: 0.78 distractor-free, halved by each of the first two
    /// distractors, fully collapsed by the third.
    pub fn weak_profile() -> PolicyProfile {
        let mut sensitivities = BTreeMap::new();
        sensitivities.insert(ObjectLabel::new("green block").unwrap(), 0.5);
        sensitivities.insert(ObjectLabel::new("pink cloth").unwrap(), 0.5);
        sensitivities.insert(ObjectLabel::new("yellow duck").unwrap(), 1.0);
        PolicyProfile::new(0.78, sensitivities, 0.5).unwrap()
    }

    /// Robust policy: 0.95 distractor-free, indifferent to the first two
    /// distractors, mildly degraded by the third.
    pub fn strong_profile() -> PolicyProfile {
        let mut sensitivities = BTreeMap::new();
        sensitivities.insert(ObjectLabel::new("green block").unwrap(), 0.0);
        sensitivities.insert(ObjectLabel::new("pink cloth").unwrap(), 0.0);
        sensitivities.insert(ObjectLabel::new("yellow duck").unwrap(), 0.105);
        PolicyProfile::new(0.95, sensitivities, 0.05).unwrap()
    }

    pub fn profile(name: &str) -> Result<PolicyProfile> {
        match name {
            WEAK => Ok(weak_profile()),
            STRONG => Ok(strong_profile()),
            other => Err(Error::config(
                "profile.preset",
                format!("unknown preset `{other}` (expected `weak` or `strong`)"),
            )),
        }
    }

    pub fn family_spec() -> FamilySpec {
        FamilySpec {
            pool: distractor_pool()
                .names()
                .iter()
                .map(|s| s.to_string())
                .collect(),
            relevant: relevant_objects()
                .names()
                .iter()
                .map(|s| s.to_string())
                .collect(),
            nesting: vec![0, 1, 2, 3],
        }
    }

    /// Templates "zero" through "three", nested by distractor count.
    pub fn environment_family() -> Vec<SceneTemplate> {
        family_spec().build().unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::canonicalize;

    fn set(names: &[&str]) -> ObjectSet {
        canonicalize(names).unwrap()
    }

    fn profile(base: f64, sens: &[(&str, f64)], default: f64) -> PolicyProfile {
        let mut map = BTreeMap::new();
        for (name, s) in sens {
            map.insert(ObjectLabel::new(name).unwrap(), *s);
        }
        PolicyProfile::new(base, map, default).unwrap()
    }

    fn scene(relevant: &[&str], distractors: &[&str], seed: u64) -> SceneSpec {
        SceneSpec::new(set(relevant), set(distractors), seed).unwrap()
    }

    #[test]
    fn empty_scene_has_base_probability() {
        let p = profile(0.95, &[], 0.1);
        assert_eq!(p.success_probability(&scene(&["cup"], &[], 0)), 0.95);
    }

    #[test]
    fn a_unit_sensitivity_annihilates_success() {
        let p = profile(0.9, &[("duck", 1.0)], 0.0);
        assert_eq!(p.success_probability(&scene(&["cup"], &["duck"], 0)), 0.0);
    }

    #[test]
    fn penalties_multiply_across_present_distractors() {
        let p = profile(0.78, &[("d1", 0.5), ("d2", 0.5), ("d3", 1.0)], 0.0);
        let full = scene(&["cup"], &["d1", "d2", "d3"], 0);
        assert_eq!(p.success_probability(&full), 0.0);
        let two = scene(&["cup"], &["d1", "d2"], 0);
        assert!((p.success_probability(&two) - 0.195).abs() < 1e-12);
    }

    #[test]
    fn unknown_distractors_use_the_default_sensitivity() {
        let p = profile(0.8, &[], 0.25);
        let s = scene(&["cup"], &["mystery box"], 0);
        assert!((p.success_probability(&s) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn relevant_objects_carry_no_penalty() {
        let p = profile(0.8, &[("cup", 0.9)], 0.9);
        assert_eq!(p.success_probability(&scene(&["cup"], &[], 0)), 0.8);
    }

    #[test]
    fn probabilities_outside_unit_interval_are_rejected() {
        let err = PolicyProfile::new(1.2, BTreeMap::new(), 0.0).unwrap_err();
        assert!(matches!(err, Error::ProbabilityOutOfRange { .. }));
        let mut map = BTreeMap::new();
        map.insert(ObjectLabel::new("x").unwrap(), -0.1);
        let err = PolicyProfile::new(0.5, map, 0.0).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn rollout_is_reproducible_and_extremes_are_exact() {
        let sure = profile(1.0, &[], 0.0);
        let never = profile(0.0, &[], 0.0);
        for seed in 0..50 {
            let s = scene(&["cup"], &["box"], seed);
            assert!(sure.rollout(&s).outcome);
            assert!(!never.rollout(&s).outcome);
        }
        let p = profile(0.6, &[], 0.0);
        let s = scene(&["cup"], &[], 42);
        assert_eq!(p.rollout(&s), p.rollout(&s));
    }

    #[test]
    fn different_profiles_draw_independent_streams() {
        let a = profile(0.5, &[], 0.0);
        let b = profile(0.5, &[("odd", 0.3)], 0.0);
        let agree = (0..2000)
            .filter(|&seed| {
                let s = scene(&["cup"], &[], seed);
                a.rollout(&s).outcome == b.rollout(&s).outcome
            })
            .count();
        // Independent p=0.5 streams agree about half the time; identical
        // streams would agree always.
        assert!(agree > 800 && agree < 1200, "agreement {agree}");
    }

    /// 10,000 seeded rollouts concentrate on the closed form within a
    /// three-sigma binomial band (0.78 gives 0.0124).
    #[test]
    fn rollout_rate_concentrates_on_the_closed_form() {
        let p = profile(0.78, &[], 0.0);
        let n = 10_000u64;
        let hits = (0..n)
            .filter(|&seed| p.rollout(&scene(&["cup"], &[], seed)).outcome)
            .count();
        let rate = hits as f64 / n as f64;
        let sigma = (0.78f64 * 0.22 / n as f64).sqrt();
        assert!(
            (rate - 0.78).abs() <= 3.0 * sigma,
            "rate {rate} outside 0.78 +/- {:.4}",
            3.0 * sigma
        );
    }

    #[test]
    fn execute_primitive_removes_present_targets() {
        let s = scene(&["cup"], &["box", "duck"], 5);
        let action = PrimitiveAction::remove_object(ObjectLabel::new("box").unwrap());
        let next = execute_primitive(&s, &action, 9).unwrap();
        assert_eq!(next.distractors, set(&["duck"]));
        assert_eq!(next.relevant, set(&["cup"]));
        assert_eq!(next.seed, 5);
    }

    #[test]
    fn execute_primitive_rejects_absent_targets() {
        let s = scene(&["cup"], &["box"], 5);
        let action = PrimitiveAction::remove_object(ObjectLabel::new("ghost").unwrap());
        let err = execute_primitive(&s, &action, 9).unwrap_err();
        assert!(matches!(err, Error::TargetAbsent(name) if name == "ghost"));
    }

    #[test]
    fn execute_primitive_may_remove_relevant_objects() {
        let s = scene(&["cup"], &["box"], 5);
        let action = PrimitiveAction::remove_object(ObjectLabel::new("cup").unwrap());
        let next = execute_primitive(&s, &action, 9).unwrap();
        assert!(next.relevant.is_empty());
        // A scene with no task objects left cannot succeed.
        assert_eq!(presets::weak_profile().success_probability(&next), 0.0);
    }

    #[test]
    fn probability_over_bare_distractor_lists_matches_scene_form() {
        let profile = presets::weak_profile();
        let s = scene(&["red cup"], &["green block", "pink cloth"], 0);
        assert_eq!(
            profile.success_probability(&s),
            profile.success_probability_over(s.distractors.iter())
        );
        let none = ObjectSet::new();
        assert_eq!(profile.success_probability_over(none.iter()), 0.78);
    }

    #[test]
    fn execute_primitive_failure_leaves_the_scene_unchanged() {
        let s = scene(&["cup"], &["box"], 5);
        let action =
            PrimitiveAction::with_failure_prob(ObjectLabel::new("box").unwrap(), 1.0).unwrap();
        let next = execute_primitive(&s, &action, 9).unwrap();
        assert_eq!(next, s);
    }

    #[test]
    fn family_nesting_matches_counts() {
        let pool = set(&["d1", "d2", "d3"]);
        let relevant = set(&["cup"]);
        let family = make_environment_family(&pool, &relevant, &[0, 1, 2, 3]).unwrap();
        let names: Vec<&str> = family.iter().map(|t| t.name.as_str()).collect();
        assert_eq!(names, vec!["zero", "one", "two", "three"]);
        assert!(family[0].distractors.is_empty());
        assert_eq!(family[1].distractors, set(&["d1"]));
        assert_eq!(family[2].distractors, set(&["d1", "d2"]));
        assert_eq!(family[3].distractors, set(&["d1", "d2", "d3"]));
        for window in family.windows(2) {
            assert!(window[0].distractors.is_subset(&window[1].distractors));
        }
    }

    #[test]
    fn family_rejects_counts_beyond_the_pool() {
        let err =
            make_environment_family(&set(&["d1"]), &set(&["cup"]), &[0, 2]).unwrap_err();
        assert!(matches!(err, Error::CountExceedsPool { count: 2, pool: 1 }));
    }

    #[test]
    fn family_rejects_decreasing_nesting() {
        let err =
            make_environment_family(&set(&["d1", "d2"]), &set(&["cup"]), &[2, 1]).unwrap_err();
        assert!(matches!(err, Error::NestingNotMonotonic));
    }

    #[test]
    fn family_rejects_pool_overlapping_relevant() {
        let err =
            make_environment_family(&set(&["cup", "d1"]), &set(&["cup"]), &[1]).unwrap_err();
        assert!(matches!(err, Error::SceneOverlap(name) if name == "cup"));
    }

    #[test]
    fn preset_rates_follow_the_calibration_table() {
        let weak = presets::weak_profile();
        let strong = presets::strong_profile();
        let family = presets::environment_family();
        let rates_weak: Vec<f64> = family
            .iter()
            .map(|t| weak.success_probability(&t.instantiate(0)))
            .collect();
        let rates_strong: Vec<f64> = family
            .iter()
            .map(|t| strong.success_probability(&t.instantiate(0)))
            .collect();
        let expect_weak = [0.78, 0.39, 0.195, 0.0];
        let expect_strong = [0.95, 0.95, 0.95, 0.85025];
        for (got, want) in rates_weak.iter().zip(expect_weak) {
            assert!((got - want).abs() < 1e-9, "weak {got} vs {want}");
        }
        for (got, want) in rates_strong.iter().zip(expect_strong) {
            assert!((got - want).abs() < 1e-9, "strong {got} vs {want}");
        }
        // Added distractors never help either policy.
        for rates in [&rates_weak, &rates_strong] {
            for w in rates.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
        }
    }

    #[test]
    fn profile_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("profile.json");
        let profile = presets::weak_profile();
        std::fs::write(&path, serde_json::to_string_pretty(&profile).unwrap()).unwrap();
        let reread = read_profile_file(&path).unwrap();
        assert_eq!(reread, profile);
    }

    #[test]
    fn removing_a_positive_sensitivity_distractor_never_hurts() {
        let p = profile(0.7, &[("d1", 0.4), ("d2", 0.2)], 0.3);
        let full = scene(&["cup"], &["d1", "d2", "d3"], 0);
        let fewer = scene(&["cup"], &["d2"], 0);
        assert!(p.success_probability(&fewer) >= p.success_probability(&full));
    }
}
