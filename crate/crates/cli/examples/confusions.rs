//! Diagnostic: find which candidate pairs flip the recovered spanning tree
//! at small sample counts on the bundled feeder fixture.

use gridsleuth_cli::campaign::{build_trial, learn_model, AlgorithmChoice, TableSource};
use gridsleuth_cli::formats::parse_grid_json;
use gridsleuth_core::grid::NodeId;
use gridsleuth_core::moments::analytic_phi_table;
use gridsleuth_core::sim::{rng_for_seed, trial_rng, ExperimentConfig};
use std::collections::BTreeSet;
use std::path::Path;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_samples: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(60);
    let noise: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.0);
    let trials: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(400);

    let bytes = std::fs::read("fixtures/feeder33.json").unwrap();
    let (_, bundle) = parse_grid_json(&bytes, Path::new("fixtures/feeder33.json")).unwrap();

    let mut config = ExperimentConfig::new(0);
    config.n_samples = n_samples;
    config.noise_variance_ratio = noise;
    config.n_extra_candidate_edges = 50;

    let mut flips = 0usize;
    for t in 0..trials {
        let mut rng = if std::env::var("CRITERION_STREAM").is_ok() {
            trial_rng(505, t as u64)
        } else {
            rng_for_seed(9_000_000 + t as u64)
        };
        let (scenario, table) =
            build_trial(&bundle, &config, TableSource::Sampled { n_samples }, &mut rng).unwrap();
        let model =
            learn_model(AlgorithmChoice::Alg1, &table, &scenario, &config.thresholds).unwrap();
        let truth: BTreeSet<(NodeId, NodeId)> =
            scenario.topology.edge_pairs().into_iter().collect();
        let got: BTreeSet<(NodeId, NodeId)> = model.edge_pairs().into_iter().collect();
        if got != truth {
            flips += 1;
            let all: Vec<NodeId> = (0..33).map(NodeId).collect();
            let ana = analytic_phi_table(&scenario.topology, &scenario.stats, &all).unwrap();
            for &(a, b) in got.difference(&truth) {
                println!("trial {t}: spurious ({},{}) phi {:.3e}", a.0, b.0, ana.phi(a, b));
            }
            for &(a, b) in truth.difference(&got) {
                println!("trial {t}:  missing ({},{}) phi {:.3e}", a.0, b.0, ana.phi(a, b));
            }
        }
    }
    println!("{} / {} trials flipped (n={}, noise={})", flips, trials, n_samples, noise);
}
