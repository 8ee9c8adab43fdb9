//! Ground-truth experiment generation: random radial grids, per-node Gaussian
//! injection draws, the linearized power-flow solve, measurement noise, and
//! scenario assembly (candidate supersets + hidden-node selection).
//!
//! Everything is driven by an explicitly seeded ChaCha8 generator. Campaigns
//! give trial `t` its own counter stream (`set_stream(t + 1)`), so per-trial
//! results are reproducible bit-for-bit and independent of scheduling order;
//! stream 0 is reserved for single-shot use of the same seed.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::grid::{hinv_matrix, CandidateEdgeSet, GridError, GridTopology, Impedance, NodeId, WeightKind};
use crate::learn::Thresholds;
use crate::moments::{InjectionStatistics, MomentError, VoltageSamples};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Moment(#[from] MomentError),
    #[error("hidden-node policy infeasible: {0}")]
    InfeasibleHiddenPolicy(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// How a scenario hides nodes. Counts ride inside the variants; the policy
/// names state the separation every hidden pair must satisfy (in tree hops).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HiddenPolicy {
    /// Every non-root node is observed.
    None,
    /// `count` hidden nodes, each of degree > 2, pairwise more than two hops
    /// apart (the stricter placement the well-separated learner assumes).
    ThreeHop(usize),
    /// `count` hidden nodes, each of degree > 2, pairwise non-adjacent (the
    /// weaker placement the clustering learner handles).
    TwoHop(usize),
}

impl HiddenPolicy {
    fn count(self) -> usize {
        match self {
            HiddenPolicy::None => 0,
            HiddenPolicy::ThreeHop(k) | HiddenPolicy::TwoHop(k) => k,
        }
    }

    /// Minimum pairwise tree distance between hidden nodes.
    fn min_separation(self) -> usize {
        match self {
            HiddenPolicy::None => 0,
            HiddenPolicy::ThreeHop(_) => 3,
            HiddenPolicy::TwoHop(_) => 2,
        }
    }
}

/// One experiment's knobs. Field names mirror the CLI flags.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_samples: usize,
    /// Injection variance per node = U[0.5, 1.5] · this · |base load|.
    pub covariance_scale: f64,
    /// Measurement noise std = this · the grid-mean sample std of the
    /// measurement type (one fixed sensor noise level per type, quoted the
    /// way sensor accuracy classes are).
    pub noise_variance_ratio: f64,
    /// Random non-edges added to the candidate set per scenario.
    pub n_extra_candidate_edges: usize,
    pub hidden_policy: HiddenPolicy,
    pub thresholds: Thresholds,
    pub trials: usize,
}

impl ExperimentConfig {
    pub fn new(seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            seed,
            n_samples: 1000,
            covariance_scale: 1e-3,
            noise_variance_ratio: 0.0,
            n_extra_candidate_edges: 0,
            hidden_policy: HiddenPolicy::None,
            thresholds: Thresholds::default(),
            trials: 1,
        }
    }
}

/// Everything the generator knows and the learner must rediscover.
#[derive(Debug, Clone)]
pub struct ScenarioTruth {
    pub topology: GridTopology,
    pub candidates: CandidateEdgeSet,
    pub stats: InjectionStatistics,
    pub hidden: BTreeSet<NodeId>,
    pub observed: BTreeSet<NodeId>,
}

/// The generator for one seed; single-shot entry points use stream 0.
pub fn rng_for_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent generator for campaign trial `trial` under `seed`.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial.wrapping_add(1));
    rng
}

/// Random radial topology: node 1 hangs off the root, each further node
/// attaches uniformly to an earlier non-root node, so the root keeps degree 1.
/// Impedance parts are drawn uniformly from the given ranges.
pub fn random_radial_topology(
    num_nodes: usize,
    r_range: (f64, f64),
    x_range: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> Result<GridTopology, SimError> {
    if num_nodes < 2 {
        return Err(SimError::InvalidConfig("need at least 2 nodes".into()));
    }
    let mut edges = Vec::with_capacity(num_nodes - 1);
    for v in 1..num_nodes {
        let parent = if v == 1 { 0 } else { rng.gen_range(1..v) };
        let z = Impedance::new(rng.gen_range(r_range.0..=r_range.1), rng.gen_range(x_range.0..=x_range.1));
        edges.push((NodeId(parent), NodeId(v), z));
    }
    Ok(GridTopology::build_tree(num_nodes, &edges)?)
}

/// Injection statistics around given base loads: per node, variance =
/// U[0.5, 1.5] · `covariance_scale` · |base load| for each of p and q, and a
/// p–q correlation drawn uniformly in [0, 0.5].
pub fn random_stats_from_loads(
    base_p: &DVector<f64>,
    base_q: &DVector<f64>,
    covariance_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<InjectionStatistics, SimError> {
    if base_p.len() != base_q.len() {
        return Err(MomentError::DimensionMismatch { expected: base_p.len(), got: base_q.len() }.into());
    }
    let m = base_p.len();
    let mut var_p = DVector::zeros(m);
    let mut var_q = DVector::zeros(m);
    let mut cov = DVector::zeros(m);
    for i in 0..m {
        var_p[i] = rng.gen_range(0.5..1.5) * covariance_scale * base_p[i].abs();
        var_q[i] = rng.gen_range(0.5..1.5) * covariance_scale * base_q[i].abs();
        let rho = rng.gen_range(0.0..0.5);
        cov[i] = rho * (var_p[i] * var_q[i]).sqrt();
    }
    Ok(InjectionStatistics::new(base_p.clone(), base_q.clone(), var_p, var_q, cov)?)
}

/// Joint active/reactive injection draws; rows are samples, columns reduced
/// node indices.
#[derive(Debug, Clone)]
pub struct InjectionSamples {
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

/// Draw `n` independent samples of every node's bivariate Gaussian injection.
/// Nodes are mutually independent; within a node the 2×2 covariance is
/// realized by its Cholesky factors.
pub fn sample_injections(
    stats: &InjectionStatistics,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> InjectionSamples {
    let m = stats.len();
    let mut p = DMatrix::zeros(n, m);
    let mut q = DMatrix::zeros(n, m);
    for j in 0..m {
        let node = NodeId::from_reduced(j);
        let (vp, vq, c) = stats.second_moments(node);
        let (mp, mq) = stats.means(node);
        let sp = vp.sqrt();
        // 2×2 Cholesky: q loads on p's standard normal via c/sp, plus its own
        // residual term; a deterministic-p node forces c = 0 at construction.
        let (l21, l22) = if vp > 0.0 {
            let l21 = c / sp;
            (l21, (vq - l21 * l21).max(0.0).sqrt())
        } else {
            (0.0, vq.sqrt())
        };
        for i in 0..n {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            p[(i, j)] = mp + sp * z1;
            q[(i, j)] = mq + l21 * z1 + l22 * z2;
        }
    }
    InjectionSamples { p, q }
}

/// Solve the linearized flow for every sample at once: deviations satisfy
/// `v = H⁻¹_{1/r} p + H⁻¹_{1/x} q` and `θ = H⁻¹_{1/x} p − H⁻¹_{1/r} q`.
/// Output marks every non-root node observed; scenarios restrict afterwards.
pub fn lcpf_solve(topo: &GridTopology, inj: &InjectionSamples) -> Result<VoltageSamples, SimError> {
    let m = topo.num_nodes() - 1;
    if inj.p.ncols() != m || inj.q.ncols() != m || inj.p.nrows() != inj.q.nrows() {
        return Err(MomentError::DimensionMismatch { expected: m, got: inj.p.ncols() }.into());
    }
    let a = hinv_matrix(topo, WeightKind::InverseResistance);
    let b = hinv_matrix(topo, WeightKind::InverseReactance);
    // Row-sample layout: v_row = (A p_col)ᵀ = p_row · A (A symmetric).
    let v = &inj.p * &a + &inj.q * &b;
    let theta = &inj.p * &b - &inj.q * &a;
    let observed: BTreeSet<NodeId> = topo.non_root_nodes().collect();
    Ok(VoltageSamples::new(v, Some(theta), observed)?)
}

/// Largest violation of the defining flow equations by a solved sample set:
/// re-derives injections from voltages edge-by-edge and compares, and checks
/// losslessness (all injections balance the root withdrawal). Exercised by
/// tests as the simulator's own correctness gate.
pub fn lcpf_residual_max(topo: &GridTopology, inj: &InjectionSamples, volt: &VoltageSamples) -> f64 {
    let n = inj.p.nrows();
    let nn = topo.num_nodes();
    let at = |m: &DMatrix<f64>, i: usize, a: NodeId| if a.is_root() { 0.0 } else { m[(i, a.reduced())] };
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let mut implied_p = vec![0.0f64; nn];
        let mut implied_q = vec![0.0f64; nn];
        for &(a, b, z) in topo.edges() {
            let dv = at(volt.v(), i, a) - at(volt.v(), i, b);
            let dt = at(volt.theta().unwrap(), i, a) - at(volt.theta().unwrap(), i, b);
            let den = z.r * z.r + z.x * z.x;
            let p_ab = (z.r * dv + z.x * dt) / den;
            let q_ab = (z.x * dv - z.r * dt) / den;
            implied_p[a.0] += p_ab;
            implied_q[a.0] += q_ab;
            implied_p[b.0] -= p_ab;
            implied_q[b.0] -= q_ab;
        }
        for v in topo.non_root_nodes() {
            worst = worst.max((implied_p[v.0] - inj.p[(i, v.reduced())]).abs());
            worst = worst.max((implied_q[v.0] - inj.q[(i, v.reduced())]).abs());
        }
        // Lossless balance: the root absorbs the grid total.
        let sum_p: f64 = (0..nn - 1).map(|j| inj.p[(i, j)]).sum();
        let sum_q: f64 = (0..nn - 1).map(|j| inj.q[(i, j)]).sum();
        worst = worst.max((implied_p[0] + sum_p).abs());
        worst = worst.max((implied_q[0] + sum_q).abs());
    }
    worst
}

/// Add zero-mean Gaussian measurement noise of one fixed level per
/// measurement type (magnitudes, phases): the noise standard deviation is
/// `ratio` times the grid-mean sample standard deviation of that type, the
/// way sensor accuracy classes are quoted (a "5% sensor" has `ratio` 0.05).
/// A sensor's noise floor does not depend on which node it watches, so every
/// same-type column gets the same noise level.
///
/// Deviations are measurements relative to the reference bus, whose own
/// sensor is equally noisy, so each sample row also subtracts one shared
/// reference draw from every column. Every pairwise deviation distance —
/// reference pairs included — is then uniformly offset by twice the noise
/// variance instead of differentially biased.
pub fn add_measurement_noise(samples: &mut VoltageSamples, ratio: f64, rng: &mut ChaCha8Rng) {
    if ratio <= 0.0 {
        return;
    }
    let noisify = |m: &mut DMatrix<f64>, rng: &mut ChaCha8Rng| {
        let n = m.nrows();
        if n < 2 || m.ncols() == 0 {
            return;
        }
        let mut var_sum = 0.0;
        for j in 0..m.ncols() {
            let col = m.column(j);
            let mean = col.mean();
            var_sum += col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        }
        let sd = ratio * (var_sum / m.ncols() as f64).sqrt();
        for i in 0..n {
            let reference: f64 = rng.sample(StandardNormal);
            for j in 0..m.ncols() {
                let z: f64 = rng.sample(StandardNormal);
                m[(i, j)] += sd * (z - reference);
            }
        }
    };
    noisify(samples.v_mut(), rng);
    if let Some(theta) = samples.theta_mut() {
        noisify(theta, rng);
    }
}

/// All unordered node pairs absent from `taken`, ascending.
fn free_pairs(num_nodes: usize, taken: &CandidateEdgeSet) -> Vec<(NodeId, NodeId)> {
    let mut out = Vec::new();
    for a in 0..num_nodes {
        for b in (a + 1)..num_nodes {
            if !taken.contains(NodeId(a), NodeId(b)) {
                out.push((NodeId(a), NodeId(b)));
            }
        }
    }
    out
}

/// Candidate superset for a scenario: the operational edges plus `n_extra`
/// random non-edges whose impedance parts are drawn uniformly within the
/// operational min/max range (so impostors are never obvious outliers).
pub fn random_candidate_superset(
    topo: &GridTopology,
    n_extra: usize,
    rng: &mut ChaCha8Rng,
) -> CandidateEdgeSet {
    let mut set = CandidateEdgeSet::from_topology(topo);
    let (mut r_lo, mut r_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(_, _, z) in topo.edges() {
        r_lo = r_lo.min(z.r);
        r_hi = r_hi.max(z.r);
        x_lo = x_lo.min(z.x);
        x_hi = x_hi.max(z.x);
    }
    let mut pool = free_pairs(topo.num_nodes(), &set);
    let take = n_extra.min(pool.len());
    // Partial Fisher–Yates: the first `take` entries become the sample.
    for i in 0..take {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
        let (a, b) = pool[i];
        let z = Impedance::new(rng.gen_range(r_lo..=r_hi), rng.gen_range(x_lo..=x_hi));
        set.insert(a, b, z).expect("pair was free");
    }
    set
}

/// Pick `policy.count()` hidden nodes of degree > 2 with the policy's pairwise
/// separation, by greedy selection over shuffled eligibles with restarts.
pub fn select_hidden_nodes(
    topo: &GridTopology,
    policy: HiddenPolicy,
    rng: &mut ChaCha8Rng,
) -> Result<BTreeSet<NodeId>, SimError> {
    let want = policy.count();
    if want == 0 {
        return Ok(BTreeSet::new());
    }
    let idx = topo.index();
    let mut eligible: Vec<NodeId> =
        topo.non_root_nodes().filter(|&a| idx.degree(a) > 2).collect();
    if eligible.len() < want {
        return Err(SimError::InfeasibleHiddenPolicy(format!(
            "{} nodes of degree > 2, {} requested",
            eligible.len(),
            want
        )));
    }
    let sep = policy.min_separation();
    for _ in 0..200 {
        eligible.shuffle(rng);
        let mut chosen: Vec<NodeId> = Vec::with_capacity(want);
        for &c in &eligible {
            if chosen.iter().all(|&h| idx.tree_distance(c, h) >= sep) {
                chosen.push(c);
                if chosen.len() == want {
                    return Ok(chosen.into_iter().collect());
                }
            }
        }
    }
    Err(SimError::InfeasibleHiddenPolicy(format!(
        "could not place {want} hidden nodes at pairwise distance ≥ {sep}"
    )))
}

/// Assemble a full scenario around a base grid: randomized injection
/// statistics from the base loads, a candidate superset, and a hidden set
/// satisfying the policy. Voltage samples are drawn separately per trial.
pub fn make_scenario(
    topo: &GridTopology,
    base_p: &DVector<f64>,
    base_q: &DVector<f64>,
    config: &ExperimentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ScenarioTruth, SimError> {
    let stats = random_stats_from_loads(base_p, base_q, config.covariance_scale, rng)?;
    let candidates = random_candidate_superset(topo, config.n_extra_candidate_edges, rng);
    let hidden = select_hidden_nodes(topo, config.hidden_policy, rng)?;
    let observed: BTreeSet<NodeId> =
        topo.non_root_nodes().filter(|a| !hidden.contains(a)).collect();
    Ok(ScenarioTruth { topology: topo.clone(), candidates, stats, hidden, observed })
}
