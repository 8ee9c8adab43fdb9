//! Monte-Carlo experiment campaigns: seeded trials across a sample-count
//! sweep, executed on a worker pool, scored against scenario ground truth,
//! and emitted as a versioned, bit-reproducible CSV plus an optional plot
//! script.
//!
//! Reproducibility contract: every trial derives its own RNG stream from
//! `(seed, task index)`, so records do not depend on worker scheduling, and
//! the CSV bytes depend only on (config, grid file, build). Wall-clock
//! runtimes are kept in the in-memory records and the text summary but stay
//! out of the CSV for exactly that reason.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use gridsleuth_core::grid::NodeId;
use gridsleuth_core::learn::{
    algorithm1, algorithm2, algorithm3, InjectionMoments, LearnError, LearnedModel, Thresholds,
};
use gridsleuth_core::moments::{
    analytic_phi_table, empirical_phi_table, InjectionStatistics, MomentTable,
};
use gridsleuth_core::sim::{
    add_measurement_noise, lcpf_solve, make_scenario, sample_injections, trial_rng,
    ExperimentConfig, ScenarioTruth,
};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::CliError;
use crate::formats::GridBundle;
use crate::metrics::{stat_errors, topology_error, StatErrors};

pub const CAMPAIGN_CSV_VERSION: &str = "# gridsleuth campaign csv v1";
pub const CAMPAIGN_CSV_HEADER: &str = "trial,n_samples,noise_ratio,covariance_scale,\
topology_rel_error,mean_rel_error_var_p,mean_rel_error_var_q,mean_rel_error_cov_pq,failed";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum AlgorithmChoice {
    /// Full-observation spanning-tree learner.
    Alg1,
    /// Hidden-node learner (hidden nodes pairwise more than two hops apart).
    Alg2,
    /// Hidden-node learner with triplet clustering (hidden nodes merely
    /// non-adjacent).
    Alg3,
}

/// Where a trial's moment table comes from.
#[derive(Debug, Clone, Copy)]
pub enum TableSource {
    /// Exact tables from the analytic moments (infinite-sample limit;
    /// measurement noise does not apply).
    Analytic,
    /// Unbiased sample moments over `n_samples` simulated measurements.
    Sampled { n_samples: usize },
}

#[derive(Debug, Clone)]
pub struct CampaignSpec {
    /// Per-trial knobs; `n_samples` inside is superseded by `sweep`.
    pub config: ExperimentConfig,
    pub algorithm: AlgorithmChoice,
    /// Sample counts to sweep; each point runs `config.trials` trials.
    pub sweep: Vec<usize>,
    /// Worker threads (`None` → rayon default).
    pub jobs: Option<usize>,
}

/// One trial's outcome. `runtime_ms` is informational only and never
/// serialized (see the module docs).
#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub trial: usize,
    pub n_samples: usize,
    pub noise_ratio: f64,
    pub covariance_scale: f64,
    pub topology_rel_error: f64,
    pub mean_rel_error_var_p: f64,
    pub mean_rel_error_var_q: f64,
    pub mean_rel_error_cov_pq: f64,
    pub failed: bool,
    pub runtime_ms: f64,
}

/// Aggregates over one sweep point.
#[derive(Debug, Clone)]
pub struct PointSummary {
    pub n_samples: usize,
    pub trials: usize,
    pub failures: usize,
    pub mean_topology_error: f64,
    pub std_topology_error: f64,
    pub mean_rel_error_var_p: f64,
    pub mean_rel_error_var_q: f64,
    pub mean_rel_error_cov_pq: f64,
    pub mean_runtime_ms: f64,
}

#[derive(Debug, Clone)]
pub struct CampaignResult {
    pub records: Vec<TrialRecord>,
    pub summaries: Vec<PointSummary>,
}

/// True per-node injection moments of the observed nodes — the side
/// information the hidden-node learners assume.
pub fn observed_moments(
    stats: &InjectionStatistics,
    hidden: &BTreeSet<NodeId>,
) -> BTreeMap<NodeId, InjectionMoments> {
    (0..stats.len())
        .map(NodeId::from_reduced)
        .filter(|a| !hidden.contains(a))
        .map(|a| {
            let (vp, vq, c) = stats.second_moments(a);
            (a, InjectionMoments::new(vp, vq, c))
        })
        .collect()
}

/// Generate one scenario and its moment table: draw the scenario from `rng`,
/// then (for sampled tables) simulate injections, solve the power flow, add
/// measurement noise, and take sample moments over root + observed nodes.
pub fn build_trial(
    bundle: &GridBundle,
    config: &ExperimentConfig,
    source: TableSource,
    rng: &mut ChaCha8Rng,
) -> Result<(ScenarioTruth, MomentTable), CliError> {
    let scenario = make_scenario(&bundle.topology, &bundle.base_p, &bundle.base_q, config, rng)?;
    let mut subset: Vec<NodeId> = vec![NodeId(0)];
    subset.extend(scenario.observed.iter().copied());

    let table = match source {
        TableSource::Analytic => analytic_phi_table(&scenario.topology, &scenario.stats, &subset)?,
        TableSource::Sampled { n_samples } => {
            let inj = sample_injections(&scenario.stats, n_samples, rng);
            let mut volt = lcpf_solve(&scenario.topology, &inj)?;
            if config.noise_variance_ratio > 0.0 {
                add_measurement_noise(&mut volt, config.noise_variance_ratio, rng);
            }
            volt.restrict_observed(scenario.observed.clone());
            empirical_phi_table(&volt, &subset)?
        }
    };
    Ok((scenario, table))
}

/// Dispatch one learner over a prepared trial.
pub fn learn_model(
    algorithm: AlgorithmChoice,
    table: &MomentTable,
    scenario: &ScenarioTruth,
    thresholds: &Thresholds,
) -> Result<LearnedModel, LearnError> {
    match algorithm {
        AlgorithmChoice::Alg1 => algorithm1(table, &scenario.candidates),
        AlgorithmChoice::Alg2 => {
            let omap = observed_moments(&scenario.stats, &scenario.hidden);
            algorithm2(table, &scenario.candidates, &omap, &scenario.hidden, thresholds)
        }
        AlgorithmChoice::Alg3 => {
            let omap = observed_moments(&scenario.stats, &scenario.hidden);
            algorithm3(table, &scenario.candidates, &omap, &scenario.hidden, thresholds)
        }
    }
}

/// Score a learned model against the scenario: relative topology error plus
/// mean hidden-moment errors (`None` when the scenario hides nothing).
pub fn score(model: &LearnedModel, scenario: &ScenarioTruth) -> (f64, Option<StatErrors>) {
    let truth: BTreeSet<(NodeId, NodeId)> = scenario.topology.edge_pairs().into_iter().collect();
    let topo_err = topology_error(&model.edge_pairs(), &truth);
    let stats = stat_errors(&model.hidden_stats, &scenario.stats, &scenario.hidden);
    (topo_err, stats)
}

fn run_trial(bundle: &GridBundle, spec: &CampaignSpec, n_samples: usize, task: usize) -> TrialRecord {
    let started = Instant::now();
    let mut rng = trial_rng(spec.config.seed, task as u64);
    let outcome = build_trial(
        bundle,
        &spec.config,
        TableSource::Sampled { n_samples },
        &mut rng,
    )
    .map_err(|e| e.to_string())
    .and_then(|(scenario, table)| {
        match learn_model(spec.algorithm, &table, &scenario, &spec.config.thresholds) {
            Ok(model) => Ok((score(&model, &scenario), false)),
            // A partial model still carries a meaningful (bad) score; other
            // failures score as the maximum error.
            Err(LearnError::UnresolvedNodes { model, .. }) => {
                Ok((score(&model, &scenario), true))
            }
            Err(e) => Err(e.to_string()),
        }
    });

    let ((topo_err, stats), failed) = match outcome {
        Ok(scored) => scored,
        Err(message) => {
            log::debug!("trial {task} (n = {n_samples}) failed: {message}");
            ((1.0, Some(StatErrors { var_p: 1.0, var_q: 1.0, cov_pq: 1.0 })), true)
        }
    };
    let stats = stats.unwrap_or_default();
    TrialRecord {
        trial: task % spec.config.trials.max(1),
        n_samples,
        noise_ratio: spec.config.noise_variance_ratio,
        covariance_scale: spec.config.covariance_scale,
        topology_rel_error: topo_err,
        mean_rel_error_var_p: stats.var_p,
        mean_rel_error_var_q: stats.var_q,
        mean_rel_error_cov_pq: stats.cov_pq,
        failed,
        runtime_ms: started.elapsed().as_secs_f64() * 1e3,
    }
}

/// Run the full sweep. Trials execute on a worker pool; results are
/// collected in task order, so the output is independent of scheduling.
pub fn run_campaign(bundle: &GridBundle, spec: &CampaignSpec) -> Result<CampaignResult, CliError> {
    if spec.sweep.is_empty() {
        return Err(CliError::Usage("campaign needs at least one n-samples point".into()));
    }
    if spec.config.trials == 0 {
        return Err(CliError::Usage("campaign needs at least one trial per point".into()));
    }
    let trials = spec.config.trials;
    let tasks: Vec<(usize, usize)> = (0..spec.sweep.len())
        .flat_map(|pi| (0..trials).map(move |t| (pi, t)))
        .collect();

    let execute = || {
        tasks
            .par_iter()
            .map(|&(pi, t)| run_trial(bundle, spec, spec.sweep[pi], pi * trials + t))
            .collect::<Vec<_>>()
    };
    let records = match spec.jobs {
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot build worker pool: {e}")))?
            .install(execute),
        None => execute(),
    };

    let summaries = summarize(&spec.sweep, trials, &records);
    Ok(CampaignResult { records, summaries })
}

fn summarize(sweep: &[usize], trials: usize, records: &[TrialRecord]) -> Vec<PointSummary> {
    sweep
        .iter()
        .enumerate()
        .map(|(pi, &n_samples)| {
            let chunk = &records[pi * trials..(pi + 1) * trials];
            let count = chunk.len() as f64;
            let mean = |f: fn(&TrialRecord) -> f64| chunk.iter().map(f).sum::<f64>() / count;
            let mean_topo = mean(|r| r.topology_rel_error);
            let var = if chunk.len() > 1 {
                chunk
                    .iter()
                    .map(|r| (r.topology_rel_error - mean_topo).powi(2))
                    .sum::<f64>()
                    / (count - 1.0)
            } else {
                0.0
            };
            PointSummary {
                n_samples,
                trials: chunk.len(),
                failures: chunk.iter().filter(|r| r.failed).count(),
                mean_topology_error: mean_topo,
                std_topology_error: var.sqrt(),
                mean_rel_error_var_p: mean(|r| r.mean_rel_error_var_p),
                mean_rel_error_var_q: mean(|r| r.mean_rel_error_var_q),
                mean_rel_error_cov_pq: mean(|r| r.mean_rel_error_cov_pq),
                mean_runtime_ms: mean(|r| r.runtime_ms),
            }
        })
        .collect()
}

/// Serialize records as the versioned CSV (no runtimes; see module docs).
pub fn campaign_to_csv(result: &CampaignResult) -> String {
    let mut out = String::new();
    out.push_str(CAMPAIGN_CSV_VERSION);
    out.push('\n');
    out.push_str(CAMPAIGN_CSV_HEADER);
    out.push('\n');
    for r in &result.records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.trial,
            r.n_samples,
            r.noise_ratio,
            r.covariance_scale,
            r.topology_rel_error,
            r.mean_rel_error_var_p,
            r.mean_rel_error_var_q,
            r.mean_rel_error_cov_pq,
            u8::from(r.failed),
        ));
    }
    out
}

/// A generic matplotlib script that re-plots the campaign CSV (mean error
/// curves vs sample count) without re-running anything.
pub fn plot_script(csv_name: &str) -> String {
    format!(
        r##"#!/usr/bin/env python3
"""Plot mean error curves from a gridsleuth campaign CSV."""
import csv
import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "{csv_name}"
with open(path) as fh:
    rows = [line for line in fh if not line.startswith("#")]

by_n = defaultdict(list)
for rec in csv.DictReader(rows):
    by_n[int(rec["n_samples"])].append(rec)

ns = sorted(by_n)


def mean(key, n):
    vals = [float(r[key]) for r in by_n[n]]
    return sum(vals) / len(vals)


fig, ax = plt.subplots(figsize=(6.0, 4.0))
for key, label in [
    ("topology_rel_error", "topology"),
    ("mean_rel_error_var_p", "var(p)"),
    ("mean_rel_error_var_q", "var(q)"),
    ("mean_rel_error_cov_pq", "cov(p,q)"),
]:
    ax.plot(ns, [mean(key, n) for n in ns], marker="o", label=label)
ax.set_xscale("log")
ax.set_xlabel("samples")
ax.set_ylabel("mean relative error")
ax.grid(True, which="both", alpha=0.3)
ax.legend()
fig.tight_layout()
out = path.rsplit(".", 1)[0] + ".png"
fig.savefig(out, dpi=150)
print(out)
"##
    )
}

/// Render the human-readable per-point summary table.
pub fn summary_table(result: &CampaignResult) -> String {
    let mut out = String::from(
        "n_samples  trials  failures  topo_err(mean±std)    var_p_err  var_q_err  cov_err  ms/trial\n",
    );
    for s in &result.summaries {
        out.push_str(&format!(
            "{:>9}  {:>6}  {:>8}  {:>9.6} ± {:<8.6}  {:>9.6}  {:>9.6}  {:>7.4}  {:>8.1}\n",
            s.n_samples,
            s.trials,
            s.failures,
            s.mean_topology_error,
            s.std_topology_error,
            s.mean_rel_error_var_p,
            s.mean_rel_error_var_q,
            s.mean_rel_error_cov_pq,
            s.mean_runtime_ms,
        ));
    }
    out
}
