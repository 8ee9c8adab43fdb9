//! Diagnostic: per-edge error histogram for the hidden-node learner on the
//! bundled feeder at one sweep point.

use gridsleuth_cli::campaign::{build_trial, learn_model, AlgorithmChoice, TableSource};
use gridsleuth_cli::formats::parse_grid_json;
use gridsleuth_core::grid::NodeId;
use gridsleuth_core::learn::Thresholds;
use gridsleuth_core::sim::{trial_rng, ExperimentConfig, HiddenPolicy};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

fn main() {
    env_logger::init();
    let args: Vec<String> = std::env::args().collect();
    let n_samples: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(40000);
    let trials: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(100);

    let bytes = std::fs::read("fixtures/feeder33.json").unwrap();
    let (_, bundle) = parse_grid_json(&bytes, Path::new("fixtures/feeder33.json")).unwrap();

    let mut config = ExperimentConfig::new(808);
    config.n_samples = n_samples;
    config.n_extra_candidate_edges = 50;
    config.hidden_policy = HiddenPolicy::TwoHop(8);
    config.thresholds = Thresholds {
        tau2: std::env::var("TAU2").ok().and_then(|v| v.parse().ok()).unwrap_or(0.1),
        ..Thresholds::default()
    };

    let mut spurious: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut missing: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut bad_trials = 0usize;
    let mut err_sum = 0.0f64;
    for t in 0..trials {
        let mut rng = trial_rng(808, t as u64);
        let (scenario, table) =
            build_trial(&bundle, &config, TableSource::Sampled { n_samples }, &mut rng).unwrap();
        let model = match learn_model(AlgorithmChoice::Alg3, &table, &scenario, &config.thresholds)
        {
            Ok(m) => m,
            Err(e) => {
                println!("trial {t}: learner failed: {e}");
                bad_trials += 1;
                continue;
            }
        };
        let truth: BTreeSet<(NodeId, NodeId)> =
            scenario.topology.edge_pairs().into_iter().collect();
        let got: BTreeSet<(NodeId, NodeId)> = model.edge_pairs().into_iter().collect();
        if got != truth {
            bad_trials += 1;
            err_sum += (got.difference(&truth).count() + truth.difference(&got).count()) as f64
                / truth.len().max(1) as f64 / 2.0;
            for &(a, b) in got.difference(&truth) {
                *spurious.entry((a.0, b.0)).or_default() += 1;
            }
            for &(a, b) in truth.difference(&got) {
                *missing.entry((a.0, b.0)).or_default() += 1;
            }
        }
    }
    let mut sp: Vec<_> = spurious.into_iter().collect();
    sp.sort_by_key(|&(_, c)| std::cmp::Reverse(c));
    let mut mi: Vec<_> = missing.into_iter().collect();
    mi.sort_by_key(|&(_, c)| std::cmp::Reverse(c));
    println!("spurious: {:?}", &sp[..sp.len().min(12)]);
    println!("missing:  {:?}", &mi[..mi.len().min(12)]);
    println!(
        "{bad_trials} / {trials} trials wrong at n={n_samples}, mean rel err {:.5}",
        err_sum / trials as f64
    );
}
