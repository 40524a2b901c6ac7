//! Retained-collection construction and pre-execution intervention planning.
//!
//! From a success table the planner keeps every object set whose empirical
//! success rate equals the exact maximum, then maps a new scene onto the
//! largest retained set it contains and removes everything else. Objects
//! never seen in a retained set are removed by construction, so unfamiliar
//! distractors are handled conservatively without any special casing.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ledger::{ObjectSet, SuccessTable};

/// Empirical success rate kept as an exact ratio of counts.
///
/// Comparison cross-multiplies the integer counts (2/4 equals 1/2), so
/// argmax ties are exact and never depend on floating-point rounding.
#[derive(Clone, Copy, Debug)]
pub struct SuccessRate {
    successes: u64,
    trials: u64,
}

impl SuccessRate {
    /// `trials` must be nonzero and at least `successes`.
    pub fn new(successes: u64, trials: u64) -> Self {
        assert!(trials > 0, "success rate needs at least one trial");
        assert!(successes <= trials, "successes cannot exceed trials");
        Self { successes, trials }
    }

    pub fn successes(&self) -> u64 {
        self.successes
    }

    pub fn trials(&self) -> u64 {
        self.trials
    }

    pub fn is_zero(&self) -> bool {
        self.successes == 0
    }

    /// Float view for reporting only; never used for comparisons.
    pub fn as_f64(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }
}

impl PartialEq for SuccessRate {
    fn eq(&self, other: &Self) -> bool {
        u128::from(self.successes) * u128::from(other.trials)
            == u128::from(other.successes) * u128::from(self.trials)
    }
}

impl Eq for SuccessRate {}

impl PartialOrd for SuccessRate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SuccessRate {
    fn cmp(&self, other: &Self) -> Ordering {
        let lhs = u128::from(self.successes) * u128::from(other.trials);
        let rhs = u128::from(other.successes) * u128::from(self.trials);
        lhs.cmp(&rhs)
    }
}

impl fmt::Display for SuccessRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.successes, self.trials)
    }
}

/// What to do when no recorded rollout succeeded anywhere.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailPolicy {
    /// Refuse to plan without success evidence.
    #[default]
    Error,
    /// Fall back to a single retained set: the objects present in every
    /// recorded episode.
    KeepUbiquitous,
}

/// Planner knobs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// Minimum trials an object set needs before it can be retained.
    pub min_trials: u64,
    pub fail_policy: FailPolicy,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            min_trials: 1,
            fail_policy: FailPolicy::Error,
        }
    }
}

/// One retained object set with the evidence mass behind it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RetainedSet {
    pub objects: ObjectSet,
    pub trials: u64,
}

/// Every observed set whose success rate equals the exact maximum, ordered
/// by descending cardinality, then descending trials, then lexicographic
/// serialization of the member names.
#[derive(Clone, Debug)]
pub struct RetainedCollection {
    sets: Vec<RetainedSet>,
    sr_max: SuccessRate,
}

impl RetainedCollection {
    pub fn sets(&self) -> &[RetainedSet] {
        &self.sets
    }

    pub fn sr_max(&self) -> SuccessRate {
        self.sr_max
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}

fn retained_order(a: &RetainedSet, b: &RetainedSet) -> Ordering {
    b.objects
        .len()
        .cmp(&a.objects.len())
        .then(b.trials.cmp(&a.trials))
        .then_with(|| a.objects.cmp(&b.objects))
}

/// Build the retained collection: argmax-rate sets among entries with at
/// least `min_trials` trials.
pub fn retained_sets(table: &SuccessTable, config: &PlannerConfig) -> Result<RetainedCollection> {
    if table.is_empty() {
        return Err(Error::EmptyTable);
    }
    if config.min_trials == 0 {
        return Err(Error::config(
            "planner_config.min_trials",
            "must be at least 1",
        ));
    }

    let eligible: Vec<(&ObjectSet, SuccessRate)> = table
        .entries()
        .filter(|(_, tally)| tally.trials >= config.min_trials)
        .map(|(objects, tally)| (objects, SuccessRate::new(tally.successes, tally.trials)))
        .collect();
    if eligible.is_empty() {
        return Err(Error::NoEligibleSets {
            min_trials: config.min_trials,
        });
    }

    let sr_max = eligible.iter().map(|(_, rate)| *rate).max().expect("nonempty");
    if sr_max.is_zero() {
        return match config.fail_policy {
            FailPolicy::Error => Err(Error::NoSuccessEvidence),
            FailPolicy::KeepUbiquitous => Ok(RetainedCollection {
                sets: vec![RetainedSet {
                    objects: table.ubiquitous_objects(),
                    trials: table.total_trials(),
                }],
                sr_max,
            }),
        };
    }

    let mut sets: Vec<RetainedSet> = eligible
        .into_iter()
        .filter(|(_, rate)| *rate == sr_max)
        .map(|(objects, rate)| RetainedSet {
            objects: objects.clone(),
            trials: rate.trials(),
        })
        .collect();
    sets.sort_by(retained_order);
    Ok(RetainedCollection { sets, sr_max })
}

/// The planned scene modification. `keep` and `remove` partition the scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterventionPlan {
    pub keep: ObjectSet,
    pub remove: ObjectSet,
    /// The retained set the plan mapped the scene onto.
    pub selected_set: ObjectSet,
    /// True when no retained set was fully contained in the scene and the
    /// maximum-overlap rule decided instead.
    pub fallback_used: bool,
    pub justification: String,
}

impl InterventionPlan {
    fn from_selection(
        scene: &ObjectSet,
        selected: &ObjectSet,
        fallback_used: bool,
        justification: String,
    ) -> Self {
        let keep = selected.intersection(scene);
        let remove = scene.difference(&keep);
        Self {
            keep,
            remove,
            selected_set: selected.clone(),
            fallback_used,
            justification,
        }
    }
}

/// Map a scene onto the retained collection.
///
/// Primary rule: choose the maximum-cardinality retained set fully contained
/// in the scene and remove everything outside it. When no retained set is
/// contained, fall back to the set with the largest overlap. Ties break by
/// larger trial count, then lexicographically smaller member list, making
/// the plan a pure function of its inputs.
pub fn plan_intervention(
    retained: &RetainedCollection,
    scene: &ObjectSet,
) -> Result<InterventionPlan> {
    if scene.is_empty() {
        return Err(Error::EmptyObjectSet);
    }
    debug_assert!(!retained.is_empty());

    let candidates = retained.sets.len();
    let contained = retained
        .sets
        .iter()
        .filter(|set| set.objects.is_subset(scene))
        .min_by(|a, b| retained_order(a, b));
    if let Some(best) = contained {
        let justification = format!(
            "sr_max={}; largest contained retained set has {} of {} scene objects ({} trials); {} candidate set(s); rule=largest-subset",
            retained.sr_max,
            best.objects.len(),
            scene.len(),
            best.trials,
            candidates,
        );
        return Ok(InterventionPlan::from_selection(
            scene,
            &best.objects,
            false,
            justification,
        ));
    }

    let best = retained
        .sets
        .iter()
        .min_by(|a, b| {
            let overlap_a = a.objects.intersection(scene).len();
            let overlap_b = b.objects.intersection(scene).len();
            overlap_b
                .cmp(&overlap_a)
                .then(b.trials.cmp(&a.trials))
                .then_with(|| a.objects.cmp(&b.objects))
        })
        .expect("retained collection is never empty");
    let justification = format!(
        "sr_max={}; no retained set is contained in the scene; best overlap {} of {} scene objects ({} trials); {} candidate set(s); rule=max-overlap",
        retained.sr_max,
        best.objects.intersection(scene).len(),
        scene.len(),
        best.trials,
        candidates,
    );
    Ok(InterventionPlan::from_selection(
        scene,
        &best.objects,
        true,
        justification,
    ))
}

/// Maximal-intervention baseline: remove every scene object that was not
/// present in every recorded episode.
pub fn plan_remove_all(scene: &ObjectSet, observed_everywhere: &ObjectSet) -> InterventionPlan {
    InterventionPlan::from_selection(
        scene,
        observed_everywhere,
        false,
        format!(
            "baseline=remove-all; keeping only the {} object(s) observed in every episode",
            observed_everywhere.len()
        ),
    )
}

/// Do-nothing baseline: the scene is left untouched.
pub fn plan_no_op(scene: &ObjectSet) -> InterventionPlan {
    InterventionPlan::from_selection(scene, scene, false, "baseline=no-op".to_string())
}
