use gridsleuth_cli::formats::parse_grid_json;
use gridsleuth_core::grid::NodeId;
use gridsleuth_core::learn::compute_bounds;
use gridsleuth_core::moments::{analytic_phi_table, analytic_voltage_moments};
use gridsleuth_core::sim::{random_stats_from_loads, rng_for_seed};
use std::path::Path;

fn main() {
    let bytes = std::fs::read("fixtures/feeder33.json").unwrap();
    let (_, bundle) = parse_grid_json(&bytes, Path::new("fixtures/feeder33.json")).unwrap();
    let mut rng = rng_for_seed(505);
    let stats = random_stats_from_loads(&bundle.base_p, &bundle.base_q, 1e-3, &mut rng).unwrap();
    let m = analytic_voltage_moments(&bundle.topology, &stats).unwrap();
    let n = bundle.topology.num_nodes();
    let diag_mean = (0..n - 1).map(|j| m.omega_v[(j, j)]).sum::<f64>() / (n - 1) as f64;
    let diag_max = (0..n - 1).map(|j| m.omega_v[(j, j)]).fold(0.0f64, f64::max);
    let all: Vec<NodeId> = (0..n).map(NodeId).collect();
    let table = analytic_phi_table(&bundle.topology, &stats, &all).unwrap();
    let edge_phis: Vec<f64> =
        bundle.topology.edge_pairs().iter().map(|&(a, b)| table.phi(a, b)).collect();
    let edge_mean = edge_phis.iter().sum::<f64>() / edge_phis.len() as f64;
    let edge_min = edge_phis.iter().cloned().fold(f64::INFINITY, f64::min);
    let k1 = compute_bounds(&bundle.topology, &stats).unwrap().k1;
    println!("omega_v diag mean {diag_mean:.3e} max {diag_max:.3e}");
    println!("edge phi mean {edge_mean:.3e} min {edge_min:.3e}");
    println!("k1 {k1:.3e}");
    println!("ratio diag_mean/edge_min {:.1}", diag_mean / edge_min);
    println!("2*0.05*diag_mean vs k1: {:.3e} vs {k1:.3e} ({:.1}x)", 0.1 * diag_mean, 0.1 * diag_mean / k1);
}
