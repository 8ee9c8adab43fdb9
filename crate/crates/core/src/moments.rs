//! Voltage second moments: exact propagation of injection statistics through
//! the linearized power flow, and the pairwise φ tables the learners consume.
//!
//! For nodes `a`, `b` with magnitude deviations `v` and phase deviations `θ`:
//!
//! - `φ_ab   = E[((v_a − μ_a) − (v_b − μ_b))²]` — always non-negative,
//! - `φθ_ab  = E[((θ_a − μθ_a) − (θ_b − μθ_b))²]` — always non-negative,
//! - `φvθ_ab = E[(Δv − μ)(Δθ − μ)]` — sign-indefinite cross term.
//!
//! The reference node (id 0) may appear in any table node set; its deviation
//! is identically zero, so `φ_{0,a}` reduces to `Var(v_a)`.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::grid::{hinv_matrix, GridTopology, NodeId, WeightKind};

#[derive(Debug, Error, PartialEq)]
pub enum MomentError {
    #[error("expected {expected} reduced entries, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid injection covariance at node {node}: {why}")]
    InvalidCovariance { node: NodeId, why: String },
    #[error("need at least 2 samples, got {0}")]
    InsufficientSamples(usize),
    #[error("node {0} has no voltage samples")]
    UnobservedNode(NodeId),
    #[error("node {0} out of range")]
    NodeOutOfRange(NodeId),
    #[error("node {0} listed twice")]
    DuplicateNode(NodeId),
    #[error("table does not contain phase moments")]
    PhaseMomentsMissing,
}

/// Per-node injection statistics for all non-root nodes, indexed by reduced
/// index (node id − 1). Active/reactive injections at different nodes are
/// uncorrelated; at one node they may correlate with non-negative covariance.
#[derive(Debug, Clone)]
pub struct InjectionStatistics {
    mean_p: DVector<f64>,
    mean_q: DVector<f64>,
    var_p: DVector<f64>,
    var_q: DVector<f64>,
    cov_pq: DVector<f64>,
}

impl InjectionStatistics {
    pub fn new(
        mean_p: DVector<f64>,
        mean_q: DVector<f64>,
        var_p: DVector<f64>,
        var_q: DVector<f64>,
        cov_pq: DVector<f64>,
    ) -> Result<InjectionStatistics, MomentError> {
        let m = mean_p.len();
        for v in [&mean_q, &var_p, &var_q, &cov_pq] {
            if v.len() != m {
                return Err(MomentError::DimensionMismatch { expected: m, got: v.len() });
            }
        }
        for i in 0..m {
            let node = NodeId::from_reduced(i);
            let (vp, vq, c) = (var_p[i], var_q[i], cov_pq[i]);
            if !(vp.is_finite() && vq.is_finite() && c.is_finite())
                || !mean_p[i].is_finite()
                || !mean_q[i].is_finite()
            {
                return Err(MomentError::InvalidCovariance { node, why: "non-finite".into() });
            }
            if vp < 0.0 || vq < 0.0 {
                return Err(MomentError::InvalidCovariance {
                    node,
                    why: format!("negative variance ({vp}, {vq})"),
                });
            }
            if c < 0.0 {
                return Err(MomentError::InvalidCovariance {
                    node,
                    why: format!("negative p–q covariance {c}"),
                });
            }
            if c * c > vp * vq * (1.0 + 1e-12) {
                return Err(MomentError::InvalidCovariance {
                    node,
                    why: format!("covariance {c} exceeds sqrt(var_p · var_q)"),
                });
            }
        }
        Ok(InjectionStatistics { mean_p, mean_q, var_p, var_q, cov_pq })
    }

    /// All-zero statistics for `num_nodes - 1` non-root nodes.
    pub fn zeros(num_nodes: usize) -> InjectionStatistics {
        let z = DVector::zeros(num_nodes - 1);
        InjectionStatistics {
            mean_p: z.clone(),
            mean_q: z.clone(),
            var_p: z.clone(),
            var_q: z.clone(),
            cov_pq: z,
        }
    }

    /// Number of non-root nodes covered.
    pub fn len(&self) -> usize {
        self.mean_p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean_p.is_empty()
    }

    pub fn mean_p(&self) -> &DVector<f64> {
        &self.mean_p
    }

    pub fn mean_q(&self) -> &DVector<f64> {
        &self.mean_q
    }

    pub fn var_p(&self) -> &DVector<f64> {
        &self.var_p
    }

    pub fn var_q(&self) -> &DVector<f64> {
        &self.var_q
    }

    pub fn cov_pq(&self) -> &DVector<f64> {
        &self.cov_pq
    }

    /// The (var_p, var_q, cov_pq) triple of one non-root node.
    pub fn second_moments(&self, a: NodeId) -> (f64, f64, f64) {
        let i = a.reduced();
        (self.var_p[i], self.var_q[i], self.cov_pq[i])
    }

    pub fn means(&self, a: NodeId) -> (f64, f64) {
        let i = a.reduced();
        (self.mean_p[i], self.mean_q[i])
    }
}

/// First and second moments of the reduced voltage magnitude/phase vectors.
/// All matrices are `(n−1) × (n−1)` over reduced indices; `omega_vtheta` is
/// the only non-symmetric one (`E[(v−μv)(θ−μθ)ᵀ]`).
#[derive(Debug, Clone)]
pub struct VoltageMoments {
    pub mu_v: DVector<f64>,
    pub mu_theta: DVector<f64>,
    pub omega_v: DMatrix<f64>,
    pub omega_theta: DMatrix<f64>,
    pub omega_vtheta: DMatrix<f64>,
}

/// Exact voltage moments induced by the linearized flow: with `A = H⁻¹_{1/r}`
/// and `B = H⁻¹_{1/x}`, deviations obey `v = A p + B q`, `θ = B p − A q`, and
/// the second moments follow by bilinearity (injections independent across
/// nodes, so each Ω input is diagonal).
pub fn analytic_voltage_moments(
    topo: &GridTopology,
    stats: &InjectionStatistics,
) -> Result<VoltageMoments, MomentError> {
    let m = topo.num_nodes() - 1;
    if stats.len() != m {
        return Err(MomentError::DimensionMismatch { expected: m, got: stats.len() });
    }
    let a = hinv_matrix(topo, WeightKind::InverseResistance);
    let b = hinv_matrix(topo, WeightKind::InverseReactance);

    let mu_v = &a * stats.mean_p() + &b * stats.mean_q();
    let mu_theta = &b * stats.mean_p() - &a * stats.mean_q();

    // Scale columns of M by a diagonal: (M ⊙ d) == M · diag(d).
    let scale = |m: &DMatrix<f64>, d: &DVector<f64>| -> DMatrix<f64> {
        let mut out = m.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col *= d[j];
        }
        out
    };

    let adp = scale(&a, stats.var_p());
    let bdq = scale(&b, stats.var_q());
    let adc = scale(&a, stats.cov_pq());
    let bdc = scale(&b, stats.cov_pq());
    let bdp = scale(&b, stats.var_p());
    let adq = scale(&a, stats.var_q());

    let omega_v = &adp * &a + &bdq * &b + &adc * &b + &bdc * &a;
    let omega_theta = &bdp * &b + &adq * &a - &bdc * &a - &adc * &b;
    let omega_vtheta = &adp * &b - &bdq * &a - &adc * &a + &bdc * &b;

    Ok(VoltageMoments { mu_v, mu_theta, omega_v, omega_theta, omega_vtheta })
}

/// Where a φ table's numbers came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Analytic,
    Empirical { n_samples: usize },
}

/// Pairwise difference second moments over a node set. `phi` and `phi_theta`
/// are symmetric with zero diagonal; the cross table is symmetric in (a, b)
/// but sign-indefinite. Phase-derived tables are absent for magnitude-only
/// sample sets, in which case the hidden-statistics solves cannot run.
#[derive(Debug, Clone)]
pub struct MomentTable {
    nodes: Vec<NodeId>,
    index: BTreeMap<NodeId, usize>,
    phi: DMatrix<f64>,
    phi_theta: Option<DMatrix<f64>>,
    phi_vtheta: Option<DMatrix<f64>>,
    provenance: Provenance,
}

impl MomentTable {
    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn contains(&self, a: NodeId) -> bool {
        self.index.contains_key(&a)
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn has_phase(&self) -> bool {
        self.phi_theta.is_some() && self.phi_vtheta.is_some()
    }

    fn pos(&self, a: NodeId) -> usize {
        *self.index.get(&a).unwrap_or_else(|| panic!("node {a} not in moment table"))
    }

    /// Magnitude difference variance `φ_ab`. Panics if a node is not in the
    /// table; callers gate membership with [`MomentTable::contains`].
    pub fn phi(&self, a: NodeId, b: NodeId) -> f64 {
        self.phi[(self.pos(a), self.pos(b))]
    }

    /// Phase difference variance `φθ_ab`.
    pub fn phi_theta(&self, a: NodeId, b: NodeId) -> Result<f64, MomentError> {
        let t = self.phi_theta.as_ref().ok_or(MomentError::PhaseMomentsMissing)?;
        Ok(t[(self.pos(a), self.pos(b))])
    }

    /// Magnitude–phase cross moment `φvθ_ab`.
    pub fn phi_vtheta(&self, a: NodeId, b: NodeId) -> Result<f64, MomentError> {
        let t = self.phi_vtheta.as_ref().ok_or(MomentError::PhaseMomentsMissing)?;
        Ok(t[(self.pos(a), self.pos(b))])
    }
}

fn check_subset(node_subset: &[NodeId], num_nodes: usize) -> Result<(), MomentError> {
    let mut seen = BTreeSet::new();
    for &a in node_subset {
        if a.0 >= num_nodes {
            return Err(MomentError::NodeOutOfRange(a));
        }
        if !seen.insert(a) {
            return Err(MomentError::DuplicateNode(a));
        }
    }
    Ok(())
}

/// Contract a covariance matrix to pairwise difference moments:
/// `out(i,j) = w(i,i) + w(j,j) − w(i,j) − w(j,i)` (collapses to the familiar
/// `+ − 2·` form when `omega` is symmetric). `pos[i]` is node i's row in
/// `omega`; `None` marks the reference node, whose rows are zero.
fn contract(pos: &[Option<usize>], omega: &DMatrix<f64>) -> DMatrix<f64> {
    let k = pos.len();
    let entry = |a: Option<usize>, b: Option<usize>| -> f64 {
        match (a, b) {
            (Some(i), Some(j)) => omega[(i, j)],
            _ => 0.0,
        }
    };
    let mut out = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            out[(i, j)] =
                entry(pos[i], pos[i]) + entry(pos[j], pos[j]) - entry(pos[i], pos[j]) - entry(pos[j], pos[i]);
        }
    }
    out
}

fn table_from_moments(
    nodes: Vec<NodeId>,
    pos: &[Option<usize>],
    omega_v: &DMatrix<f64>,
    omega_theta: Option<&DMatrix<f64>>,
    omega_vtheta: Option<&DMatrix<f64>>,
    provenance: Provenance,
) -> MomentTable {
    let phi = contract(pos, omega_v);
    let phi_theta = omega_theta.map(|o| contract(pos, o));
    let phi_vtheta = omega_vtheta.map(|o| contract(pos, o));
    let index = nodes.iter().enumerate().map(|(i, &a)| (a, i)).collect();
    MomentTable { nodes, index, phi, phi_theta, phi_vtheta, provenance }
}

/// Infinite-sample φ tables straight from the analytic voltage moments.
/// `node_subset` may include the reference node 0 (zero-deviation row).
pub fn analytic_phi_table(
    topo: &GridTopology,
    stats: &InjectionStatistics,
    node_subset: &[NodeId],
) -> Result<MomentTable, MomentError> {
    check_subset(node_subset, topo.num_nodes())?;
    let m = analytic_voltage_moments(topo, stats)?;
    let pos: Vec<Option<usize>> =
        node_subset.iter().map(|a| (!a.is_root()).then(|| a.reduced())).collect();
    Ok(table_from_moments(
        node_subset.to_vec(),
        &pos,
        &m.omega_v,
        Some(&m.omega_theta),
        Some(&m.omega_vtheta),
        Provenance::Analytic,
    ))
}

/// Per-sample voltage deviations from the reference, one row per sample and
/// one reduced column per non-root node. Columns of nodes outside `observed`
/// hold simulator ground truth that a learner must not read; the estimators
/// enforce this. Phase columns are optional (magnitude-only metering).
#[derive(Debug, Clone)]
pub struct VoltageSamples {
    v: DMatrix<f64>,
    theta: Option<DMatrix<f64>>,
    observed: BTreeSet<NodeId>,
}

impl VoltageSamples {
    pub fn new(
        v: DMatrix<f64>,
        theta: Option<DMatrix<f64>>,
        observed: BTreeSet<NodeId>,
    ) -> Result<VoltageSamples, MomentError> {
        if let Some(t) = &theta {
            if t.shape() != v.shape() {
                return Err(MomentError::DimensionMismatch {
                    expected: v.ncols(),
                    got: t.ncols(),
                });
            }
        }
        for &a in &observed {
            if a.is_root() || a.reduced() >= v.ncols() {
                return Err(MomentError::NodeOutOfRange(a));
            }
        }
        Ok(VoltageSamples { v, theta, observed })
    }

    pub fn n_samples(&self) -> usize {
        self.v.nrows()
    }

    /// Width of the reduced system (`num_nodes − 1`).
    pub fn reduced_width(&self) -> usize {
        self.v.ncols()
    }

    /// Non-root nodes whose columns a learner may read.
    pub fn observed(&self) -> &BTreeSet<NodeId> {
        &self.observed
    }

    pub fn has_phase(&self) -> bool {
        self.theta.is_some()
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn theta(&self) -> Option<&DMatrix<f64>> {
        self.theta.as_ref()
    }

    pub fn v_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.v
    }

    pub fn theta_mut(&mut self) -> Option<&mut DMatrix<f64>> {
        self.theta.as_mut()
    }

    /// Restrict the readable node set (e.g. to hide nodes post-simulation).
    pub fn restrict_observed(&mut self, observed: BTreeSet<NodeId>) {
        self.observed = observed;
    }
}

/// Gather the sample columns for `nodes` (root → zero column) and center them.
fn centered_columns(m: &DMatrix<f64>, nodes: &[NodeId]) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, nodes.len());
    for (j, &a) in nodes.iter().enumerate() {
        if a.is_root() {
            continue; // reference column: identically zero, mean zero
        }
        let col = m.column(a.reduced());
        let mean = col.mean();
        for i in 0..n {
            out[(i, j)] = col[i] - mean;
        }
    }
    out
}

/// Unbiased (`n − 1` normalized) sample φ tables over `node_subset`. Every
/// non-root subset node must be observed; phase tables appear only when the
/// samples carry phase columns.
pub fn empirical_phi_table(
    samples: &VoltageSamples,
    node_subset: &[NodeId],
) -> Result<MomentTable, MomentError> {
    check_subset(node_subset, samples.reduced_width() + 1)?;
    let n = samples.n_samples();
    if n < 2 {
        return Err(MomentError::InsufficientSamples(n));
    }
    for &a in node_subset {
        if !a.is_root() && !samples.observed.contains(&a) {
            return Err(MomentError::UnobservedNode(a));
        }
    }

    let norm = 1.0 / (n as f64 - 1.0);
    let vc = centered_columns(&samples.v, node_subset);
    let cov_v = vc.transpose() * &vc * norm;

    let (cov_t, cov_vt) = match &samples.theta {
        Some(theta) => {
            let tc = centered_columns(theta, node_subset);
            let cov_t = tc.transpose() * &tc * norm;
            let cov_vt = vc.transpose() * &tc * norm;
            (Some(cov_t), Some(cov_vt))
        }
        None => (None, None),
    };

    // Covariances are subset-local here; the root's column was zeroed during
    // centering, so every position maps straight through.
    let pos: Vec<Option<usize>> = (0..node_subset.len()).map(Some).collect();
    Ok(table_from_moments(
        node_subset.to_vec(),
        &pos,
        &cov_v,
        cov_t.as_ref(),
        cov_vt.as_ref(),
        Provenance::Empirical { n_samples: n },
    ))
}

/// Unbiased sample covariance of the magnitude columns over `nodes`
/// (substation partitioning reads this). Root column is zero.
pub fn empirical_voltage_cov(
    samples: &VoltageSamples,
    nodes: &[NodeId],
) -> Result<DMatrix<f64>, MomentError> {
    check_subset(nodes, samples.reduced_width() + 1)?;
    let n = samples.n_samples();
    if n < 2 {
        return Err(MomentError::InsufficientSamples(n));
    }
    for &a in nodes {
        if !a.is_root() && !samples.observed.contains(&a) {
            return Err(MomentError::UnobservedNode(a));
        }
    }
    let vc = centered_columns(&samples.v, nodes);
    Ok(vc.transpose() * &vc / (n as f64 - 1.0))
}
