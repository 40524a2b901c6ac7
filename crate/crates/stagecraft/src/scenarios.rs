//! Shipped reproduction protocols: fixed experiment recipes on the preset
//! policies and environment family, rendered as a summary record, a CSV
//! table, a chart, and per-episode logs.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::{
    collect_in_context, compare_arms, evaluate_with_buffer, selection_is_fragile, BackendSpec,
    ExperimentConfig, MetricsReport, PlannerKind,
};
use crate::planner::{retained_sets, FailPolicy, PlannerConfig};
use crate::report::{arms_csv, bar_chart_svg, csv_table, episode_log_jsonl, to_pretty_json, ArmSummary, ChartPanel};
use crate::sim::presets;
use crate::stream::{mix, tag};

/// Master seed used when the caller does not supply one.
pub const DEFAULT_MASTER_SEED: u64 = 2026;

/// Margin by which a retained set's model-true success probability must
/// fall below its empirical rate to count as a fragile (lucky) selection.
pub const FRAGILE_MARGIN: f64 = 0.25;

const IN_CONTEXT_PER_SET: u64 = 10;
const EVAL_EPISODES: u64 = 100;
const ICL_M_VALUES: [u64; 2] = [1, 20];
const ICL_REPLICATIONS: u64 = 200;
const ICL_EVAL_EPISODES: u64 = 20;
const ABLATION_CORRUPTION: f64 = 0.3;

/// The named protocols `reproduce` knows how to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    /// Brittle vs robust policy: how much intervention each needs and what
    /// it buys, on the same evidence protocol.
    WeakVsStrong,
    /// Evidence scaling: how buffer size per set changes planning quality.
    IclScaling,
    /// Native planner vs faithful and corrupted completion backends.
    PlannerAblation,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [
        Scenario::WeakVsStrong,
        Scenario::IclScaling,
        Scenario::PlannerAblation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::WeakVsStrong => "weak_vs_strong",
            Scenario::IclScaling => "icl_scaling",
            Scenario::PlannerAblation => "planner_ablation",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "weak_vs_strong" => Ok(Scenario::WeakVsStrong),
            "icl_scaling" => Ok(Scenario::IclScaling),
            "planner_ablation" => Ok(Scenario::PlannerAblation),
            _ => Err(Error::UnknownScenario(s.to_string())),
        }
    }
}

/// Everything a scenario run produces, ready to print or write to disk.
#[derive(Clone, Debug)]
pub struct ScenarioOutput {
    pub scenario: Scenario,
    /// The summary record; this is the byte-stable artifact reruns must
    /// reproduce exactly.
    pub summary_json: String,
    pub csv: String,
    pub chart_svg: String,
    /// (file name, contents) pairs with per-episode or per-replication logs.
    pub logs: Vec<(String, String)>,
}

/// Run one named protocol. Every number in the output is a pure function
/// of `(scenario, master_seed)`.
pub fn run_scenario(scenario: Scenario, master_seed: u64) -> Result<ScenarioOutput> {
    match scenario {
        Scenario::WeakVsStrong => weak_vs_strong(master_seed),
        Scenario::IclScaling => icl_scaling(master_seed),
        Scenario::PlannerAblation => planner_ablation(master_seed),
    }
}

fn preset_stagecraft_arm(preset: &str, master_seed: u64) -> ExperimentConfig {
    ExperimentConfig::preset_arm(
        preset,
        &[
            ("zero", IN_CONTEXT_PER_SET),
            ("one", IN_CONTEXT_PER_SET),
            ("two", IN_CONTEXT_PER_SET),
        ],
        "three",
        EVAL_EPISODES,
        PlannerKind::Stagecraft,
        master_seed,
    )
}

fn arm_logs(reports: &[MetricsReport]) -> Result<Vec<(String, String)>> {
    reports
        .iter()
        .map(|report| {
            Ok((
                format!("{}-episodes.jsonl", report.label.replace(['[', ']', ':'], "-")),
                episode_log_jsonl(report)?,
            ))
        })
        .collect()
}

#[derive(Serialize)]
struct WeakVsStrongHeadline {
    weak_mean_interventions: f64,
    strong_mean_interventions: f64,
    /// How many more removals the brittle policy needs.
    intervention_gap: f64,
    weak_planned_success: f64,
    weak_untouched_success: f64,
    strong_planned_success: f64,
    strong_untouched_success: f64,
}

#[derive(Serialize)]
struct WeakVsStrongSummary {
    scenario: &'static str,
    master_seed: u64,
    in_context_per_set: u64,
    eval_episodes: u64,
    arms: Vec<ArmSummary>,
    headline: WeakVsStrongHeadline,
}

/// A brittle and a robust policy, each planned-for and left alone, on the
/// same nested-family evidence protocol.
fn weak_vs_strong(master_seed: u64) -> Result<ScenarioOutput> {
    let mut arms: Vec<MetricsReport> = Vec::new();
    for preset in [presets::WEAK, presets::STRONG] {
        let planned = preset_stagecraft_arm(preset, master_seed);
        let mut untouched = planned.clone();
        untouched.planner = PlannerKind::NoOp;
        let mut reports = compare_arms(&[planned, untouched])?;
        for report in &mut reports {
            report.label = format!("{preset}-{}", report.label);
        }
        arms.extend(reports);
    }

    let headline = WeakVsStrongHeadline {
        weak_mean_interventions: arms[0].mean_interventions,
        strong_mean_interventions: arms[2].mean_interventions,
        intervention_gap: arms[0].mean_interventions - arms[2].mean_interventions,
        weak_planned_success: arms[0].success_rate,
        weak_untouched_success: arms[1].success_rate,
        strong_planned_success: arms[2].success_rate,
        strong_untouched_success: arms[3].success_rate,
    };
    let summaries: Vec<ArmSummary> = arms.iter().map(ArmSummary::from).collect();
    let chart = bar_chart_svg(
        "Planned intervention vs doing nothing, brittle and robust policies",
        &[
            ChartPanel {
                heading: "success rate".to_string(),
                y_max: 1.0,
                bars: summaries
                    .iter()
                    .map(|a| (a.label.clone(), a.success_rate))
                    .collect(),
            },
            ChartPanel {
                heading: "mean removals per episode".to_string(),
                y_max: 3.2,
                bars: summaries
                    .iter()
                    .map(|a| (a.label.clone(), a.mean_interventions))
                    .collect(),
            },
        ],
    );
    let summary = WeakVsStrongSummary {
        scenario: Scenario::WeakVsStrong.name(),
        master_seed,
        in_context_per_set: IN_CONTEXT_PER_SET,
        eval_episodes: EVAL_EPISODES,
        arms: summaries.clone(),
        headline,
    };
    Ok(ScenarioOutput {
        scenario: Scenario::WeakVsStrong,
        summary_json: to_pretty_json(&summary)?,
        csv: arms_csv(&summaries),
        chart_svg: chart,
        logs: arm_logs(&arms)?,
    })
}

#[derive(Serialize)]
struct IclReplication {
    in_context_per_set: u64,
    replication: u64,
    success_rate: f64,
    mean_interventions: f64,
    /// Whether this replication's top-ranked retained set was a lucky
    /// small-sample artifact.
    fragile_selection: bool,
}

#[derive(Serialize)]
struct IclPoint {
    in_context_per_set: u64,
    replications: u64,
    eval_episodes_per_replication: u64,
    mean_success_rate: f64,
    mean_interventions: f64,
    fragile_selection_frequency: f64,
}

#[derive(Serialize)]
struct IclHeadline {
    low_m: u64,
    high_m: u64,
    success_gain: f64,
    intervention_gain: f64,
    fragile_frequency_low_m: f64,
    fragile_frequency_high_m: f64,
    /// How much more often small buffers pick fragile sets.
    fragile_gap: f64,
}

#[derive(Serialize)]
struct IclSummary {
    scenario: &'static str,
    master_seed: u64,
    fragile_margin: f64,
    points: Vec<IclPoint>,
    headline: IclHeadline,
}

/// Evidence scaling: replicated small-vs-large buffer runs of the planner
/// on the brittle policy.
fn icl_scaling(master_seed: u64) -> Result<ScenarioOutput> {
    let profile = presets::weak_profile();
    let relevant = presets::relevant_objects();
    let mut points = Vec::new();
    let mut log_lines = String::new();

    for &m in &ICL_M_VALUES {
        let replications: Vec<Result<IclReplication>> = (0..ICL_REPLICATIONS as usize)
            .into_par_iter()
            .map(|r| {
                let rep_seed = mix(&[master_seed, tag("rep"), m, r as u64]);
                let mut config = ExperimentConfig::preset_arm(
                    presets::WEAK,
                    &[("zero", m), ("one", m), ("two", m)],
                    "three",
                    ICL_EVAL_EPISODES,
                    PlannerKind::Stagecraft,
                    rep_seed,
                );
                // Tiny buffers can be all-failure; fall back to keeping the
                // always-present objects rather than refusing to plan.
                config.planner_config = PlannerConfig {
                    min_trials: 1,
                    fail_policy: FailPolicy::KeepUbiquitous,
                };
                let buffer = collect_in_context(&config)?;
                let retained = retained_sets(&buffer.tally()?, &config.planner_config)?;
                let fragile = selection_is_fragile(&retained, &profile, &relevant, FRAGILE_MARGIN);
                let report = evaluate_with_buffer(&config, &buffer)?;
                Ok(IclReplication {
                    in_context_per_set: m,
                    replication: r as u64,
                    success_rate: report.success_rate,
                    mean_interventions: report.mean_interventions,
                    fragile_selection: fragile,
                })
            })
            .collect();
        let replications = replications.into_iter().collect::<Result<Vec<_>>>()?;

        let n = replications.len() as f64;
        let point = IclPoint {
            in_context_per_set: m,
            replications: ICL_REPLICATIONS,
            eval_episodes_per_replication: ICL_EVAL_EPISODES,
            mean_success_rate: replications.iter().map(|r| r.success_rate).sum::<f64>() / n,
            mean_interventions: replications.iter().map(|r| r.mean_interventions).sum::<f64>()
                / n,
            fragile_selection_frequency: replications
                .iter()
                .filter(|r| r.fragile_selection)
                .count() as f64
                / n,
        };
        for replication in &replications {
            log_lines.push_str(&serde_json::to_string(replication)?);
            log_lines.push('\n');
        }
        points.push(point);
    }

    let low = &points[0];
    let high = &points[points.len() - 1];
    let headline = IclHeadline {
        low_m: low.in_context_per_set,
        high_m: high.in_context_per_set,
        success_gain: high.mean_success_rate - low.mean_success_rate,
        intervention_gain: high.mean_interventions - low.mean_interventions,
        fragile_frequency_low_m: low.fragile_selection_frequency,
        fragile_frequency_high_m: high.fragile_selection_frequency,
        fragile_gap: low.fragile_selection_frequency - high.fragile_selection_frequency,
    };
    let chart = bar_chart_svg(
        "Planning quality vs in-context evidence per set",
        &[
            ChartPanel {
                heading: "mean success rate".to_string(),
                y_max: 1.0,
                bars: points
                    .iter()
                    .map(|p| (format!("M={}", p.in_context_per_set), p.mean_success_rate))
                    .collect(),
            },
            ChartPanel {
                heading: "mean removals per episode".to_string(),
                y_max: 3.2,
                bars: points
                    .iter()
                    .map(|p| (format!("M={}", p.in_context_per_set), p.mean_interventions))
                    .collect(),
            },
            ChartPanel {
                heading: "fragile selection frequency".to_string(),
                y_max: 1.0,
                bars: points
                    .iter()
                    .map(|p| {
                        (
                            format!("M={}", p.in_context_per_set),
                            p.fragile_selection_frequency,
                        )
                    })
                    .collect(),
            },
        ],
    );
    let csv_rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            vec![
                p.in_context_per_set.to_string(),
                p.replications.to_string(),
                p.eval_episodes_per_replication.to_string(),
                format!("{:.4}", p.mean_success_rate),
                format!("{:.4}", p.mean_interventions),
                format!("{:.4}", p.fragile_selection_frequency),
            ]
        })
        .collect();
    let summary = IclSummary {
        scenario: Scenario::IclScaling.name(),
        master_seed,
        fragile_margin: FRAGILE_MARGIN,
        points,
        headline,
    };
    Ok(ScenarioOutput {
        scenario: Scenario::IclScaling,
        summary_json: to_pretty_json(&summary)?,
        csv: csv_table(
            &[
                "in_context_per_set",
                "replications",
                "eval_episodes_per_replication",
                "mean_success_rate",
                "mean_interventions",
                "fragile_selection_frequency",
            ],
            &csv_rows,
        ),
        chart_svg: chart,
        logs: vec![("icl-replications.jsonl".to_string(), log_lines)],
    })
}

#[derive(Serialize)]
struct AblationHeadline {
    deterministic_cov_percent: Option<f64>,
    faithful_backend_cov_percent: Option<f64>,
    corrupted_backend_cov_percent: Option<f64>,
    deterministic_relevant_removals: u64,
    corrupted_relevant_removals: u64,
    /// Success lost going from the faithful to the corrupted backend.
    corruption_success_drop: f64,
}

#[derive(Serialize)]
struct AblationSummary {
    scenario: &'static str,
    master_seed: u64,
    eval_episodes: u64,
    corruption_rate: f64,
    arms: Vec<ArmSummary>,
    headline: AblationHeadline,
}

/// Native planning vs prompting: a faithful completion backend matches the
/// planner exactly; a corrupted one removes the wrong things.
fn planner_ablation(master_seed: u64) -> Result<ScenarioOutput> {
    let native = preset_stagecraft_arm(presets::WEAK, master_seed);
    let mut faithful = native.clone();
    faithful.planner = PlannerKind::Vlm;
    faithful.backend = Some(BackendSpec::Mock {
        corruption_rate: 0.0,
    });
    let mut corrupted = native.clone();
    corrupted.planner = PlannerKind::Vlm;
    corrupted.backend = Some(BackendSpec::Mock {
        corruption_rate: ABLATION_CORRUPTION,
    });
    let arms = compare_arms(&[native, faithful, corrupted])?;
    let summaries: Vec<ArmSummary> = arms.iter().map(ArmSummary::from).collect();
    let headline = AblationHeadline {
        deterministic_cov_percent: arms[0].cov_interventions_percent,
        faithful_backend_cov_percent: arms[1].cov_interventions_percent,
        corrupted_backend_cov_percent: arms[2].cov_interventions_percent,
        deterministic_relevant_removals: arms[0].relevant_object_removals,
        corrupted_relevant_removals: arms[2].relevant_object_removals,
        corruption_success_drop: arms[1].success_rate - arms[2].success_rate,
    };
    let chart = bar_chart_svg(
        "Native planner vs completion backends",
        &[
            ChartPanel {
                heading: "success rate".to_string(),
                y_max: 1.0,
                bars: summaries
                    .iter()
                    .map(|a| (a.label.clone(), a.success_rate))
                    .collect(),
            },
            ChartPanel {
                heading: "removal-count variation (cov %)".to_string(),
                y_max: 40.0,
                bars: summaries
                    .iter()
                    .map(|a| {
                        (
                            a.label.clone(),
                            a.cov_interventions_percent.unwrap_or(0.0),
                        )
                    })
                    .collect(),
            },
            ChartPanel {
                heading: "task-object removals".to_string(),
                y_max: 30.0,
                bars: summaries
                    .iter()
                    .map(|a| (a.label.clone(), a.relevant_object_removals as f64))
                    .collect(),
            },
        ],
    );
    let summary = AblationSummary {
        scenario: Scenario::PlannerAblation.name(),
        master_seed,
        eval_episodes: EVAL_EPISODES,
        corruption_rate: ABLATION_CORRUPTION,
        arms: summaries.clone(),
        headline,
    };
    Ok(ScenarioOutput {
        scenario: Scenario::PlannerAblation,
        summary_json: to_pretty_json(&summary)?,
        csv: arms_csv(&summaries),
        chart_svg: chart,
        logs: arm_logs(&arms)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_names_round_trip_and_unknowns_are_rejected() {
        for scenario in Scenario::ALL {
            assert_eq!(scenario.name().parse::<Scenario>().unwrap(), scenario);
        }
        assert_eq!(
            "weak-vs-strong".parse::<Scenario>().unwrap(),
            Scenario::WeakVsStrong
        );
        assert!(matches!(
            "coffee_break".parse::<Scenario>().unwrap_err(),
            Error::UnknownScenario(ref name) if name == "coffee_break"
        ));
    }

    #[test]
    fn weak_vs_strong_produces_the_full_bundle() {
        let output = run_scenario(Scenario::WeakVsStrong, DEFAULT_MASTER_SEED).unwrap();
        let summary: serde_json::Value = serde_json::from_str(&output.summary_json).unwrap();
        assert_eq!(summary["scenario"], "weak_vs_strong");
        assert_eq!(summary["arms"].as_array().unwrap().len(), 4);
        let gap = summary["headline"]["intervention_gap"].as_f64().unwrap();
        assert!(gap > 0.0, "brittle policy should need more removals");
        assert_eq!(output.csv.lines().count(), 5);
        assert!(output.chart_svg.starts_with("<svg"));
        assert_eq!(output.logs.len(), 4);
        assert!(output.logs.iter().all(|(name, contents)| {
            name.ends_with("-episodes.jsonl") && contents.lines().count() == 100
        }));
    }

    #[test]
    fn weak_vs_strong_is_byte_stable() {
        let a = run_scenario(Scenario::WeakVsStrong, 9).unwrap();
        let b = run_scenario(Scenario::WeakVsStrong, 9).unwrap();
        assert_eq!(a.summary_json, b.summary_json);
        assert_eq!(a.csv, b.csv);
        assert_eq!(a.chart_svg, b.chart_svg);
        assert_eq!(a.logs, b.logs);
        let c = run_scenario(Scenario::WeakVsStrong, 10).unwrap();
        assert_ne!(a.summary_json, c.summary_json);
    }

    #[test]
    fn icl_scaling_reports_both_evidence_levels() {
        let output = run_scenario(Scenario::IclScaling, DEFAULT_MASTER_SEED).unwrap();
        let summary: serde_json::Value = serde_json::from_str(&output.summary_json).unwrap();
        let points = summary["points"].as_array().unwrap();
        assert_eq!(points.len(), 2);
        assert_eq!(points[0]["in_context_per_set"], 1);
        assert_eq!(points[1]["in_context_per_set"], 20);
        let gap = summary["headline"]["fragile_gap"].as_f64().unwrap();
        assert!(gap > 0.0, "small buffers should pick fragile sets more often");
        assert_eq!(output.logs.len(), 1);
        assert_eq!(output.logs[0].1.lines().count(), 400);
    }

    #[test]
    fn planner_ablation_orders_the_arms() {
        let output = run_scenario(Scenario::PlannerAblation, DEFAULT_MASTER_SEED).unwrap();
        let summary: serde_json::Value = serde_json::from_str(&output.summary_json).unwrap();
        let arms = summary["arms"].as_array().unwrap();
        assert_eq!(arms.len(), 3);
        assert_eq!(arms[0]["label"], "stagecraft");
        assert_eq!(arms[1]["label"], "vlm[mock:0]");
        assert_eq!(arms[2]["label"], "vlm[mock:0.3]");
        // Deterministic arms on a fixed composition never vary.
        assert_eq!(arms[0]["cov_interventions_percent"].as_f64().unwrap(), 0.0);
        assert_eq!(arms[1]["cov_interventions_percent"].as_f64().unwrap(), 0.0);
        assert!(arms[2]["cov_interventions_percent"].as_f64().unwrap() > 0.0);
        assert_eq!(arms[0]["relevant_object_removals"], 0);
        assert!(summary["headline"]["corrupted_relevant_removals"].as_u64().unwrap() >= 1);
    }
}
