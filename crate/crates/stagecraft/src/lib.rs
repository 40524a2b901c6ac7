//! Pre-execution scene intervention planning from policy rollout evidence.
//!
//! Given a buffer of rollouts — each recording which objects were in the
//! scene and whether a fixed policy succeeded — this crate decides which
//! objects to physically remove before the next run so that the policy's
//! expected success is maximized with the fewest removals. The rule is
//! evidence-first: group episodes by exact object set, keep the sets with
//! the highest empirical success rate, and map the current scene onto the
//! largest kept set it contains, removing everything else. Objects seen in
//! every episode are never removed; objects never seen are always removed.
//!
//! Around that core the crate ships:
//!
//! - [`ledger`]: canonical object labels, episode records, and the tally
//!   from rollout buffers to per-set success tables.
//! - [`planner`]: exact-rational rate comparison, retained-set selection,
//!   and intervention planning with deterministic tie-breaks.
//! - [`sim`]: a surrogate stochastic policy (closed-form per-scene success
//!   probability), seeded scene templates, and removal primitives.
//! - [`vlm`]: a prompt/parse pipeline plus completion backends (scripted
//!   mock, transcript replay, remote endpoint) for comparing the native
//!   planner against model-driven planning.
//! - [`harness`]: end-to-end experiment arms with shared per-episode
//!   randomness across planners, and the reported metrics.
//! - [`scenarios`]: fixed reproduction protocols on the shipped presets.
//! - [`report`]: deterministic JSON/CSV/JSONL/SVG rendering.
//! - [`cli`]: the `stagecraft` command-line tool built on all of the above.
//!
//! Everything is reproducible by construction: all randomness derives from
//! explicit 64-bit seeds, reruns are byte-identical, and results do not
//! depend on thread count.

pub mod cli;
pub mod error;
pub mod harness;
pub mod ledger;
pub mod planner;
pub mod report;
pub mod scenarios;
pub mod sim;
pub mod stream;
pub mod vlm;

pub use error::{Error, Result};
pub use harness::{
    collect_in_context, compare_arms, evaluate, evaluate_with_buffer, ExperimentConfig,
    MetricsReport, PlannerKind,
};
pub use ledger::{canonicalize, EpisodeRecord, ObjectLabel, ObjectSet, RolloutBuffer};
pub use planner::{
    plan_intervention, retained_sets, FailPolicy, InterventionPlan, PlannerConfig,
    RetainedCollection, SuccessRate,
};
pub use scenarios::{run_scenario, Scenario, ScenarioOutput, DEFAULT_MASTER_SEED};
pub use sim::{PolicyProfile, SceneSpec, SceneTemplate};
