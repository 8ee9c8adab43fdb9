//! The native grid interchange format: a versioned JSON document carrying a
//! radial grid, its candidate edge superset, and per-node base loads.
//!
//! Schema (version 1):
//!
//! ```json
//! {
//!   "version": 1,
//!   "num_nodes": 4,
//!   "root": 0,
//!   "edges": [ {"u": 0, "v": 1, "r": 0.05, "x": 0.04, "operational": true} ],
//!   "base_loads": [ {"node": 1, "p": 0.01, "q": 0.006} ]
//! }
//! ```
//!
//! All numbers are per-unit. Edges with `operational: true` must form a
//! radial tree rooted at node 0 (the substation, degree 1); the remaining
//! edges only extend the candidate superset a learner searches. `base_loads`
//! lists every non-root node exactly once.
//!
//! The emitter is canonical — keys sorted, edges normalized `u < v` and
//! sorted by endpoints, loads sorted by node — so parse → emit → parse is
//! structurally the identity and emitted files are byte-stable.

use std::collections::BTreeMap;
use std::path::Path;

use gridsleuth_core::grid::{CandidateEdgeSet, GridTopology, Impedance, NodeId};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const GRID_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFileV1 {
    pub version: u32,
    pub num_nodes: usize,
    pub root: usize,
    pub edges: Vec<EdgeRecord>,
    pub base_loads: Vec<LoadRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeRecord {
    pub u: usize,
    pub v: usize,
    pub r: f64,
    pub x: f64,
    pub operational: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadRecord {
    pub node: usize,
    pub p: f64,
    pub q: f64,
}

/// A parsed grid file: the validated operational topology, the full
/// candidate superset, and base loads indexed by reduced node id.
#[derive(Debug, Clone)]
pub struct GridBundle {
    pub topology: GridTopology,
    pub candidates: CandidateEdgeSet,
    pub base_p: DVector<f64>,
    pub base_q: DVector<f64>,
}

/// Parse and validate a grid document. `path` is used only for messages.
pub fn parse_grid_json(bytes: &[u8], path: &Path) -> Result<(GridFileV1, GridBundle), CliError> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    let file: GridFileV1 = match serde_path_to_error::deserialize(&mut de) {
        Ok(f) => f,
        Err(err) => {
            let inner = err.inner();
            return Err(match inner.classify() {
                serde_json::error::Category::Data => CliError::Schema {
                    path: path.to_path_buf(),
                    field: err.path().to_string(),
                    message: inner.to_string(),
                },
                _ => CliError::Parse {
                    path: path.to_path_buf(),
                    line: inner.line(),
                    column: inner.column(),
                    message: inner.to_string(),
                },
            });
        }
    };
    let bundle = validate(&file, path)?;
    Ok((file, bundle))
}

fn schema_err(path: &Path, field: &str, message: impl Into<String>) -> CliError {
    CliError::Schema {
        path: path.to_path_buf(),
        field: field.to_string(),
        message: message.into(),
    }
}

/// Check the document's cross-field invariants and build the core structures.
pub fn validate(file: &GridFileV1, path: &Path) -> Result<GridBundle, CliError> {
    if file.version != GRID_FILE_VERSION {
        return Err(schema_err(
            path,
            "version",
            format!("unsupported version {} (expected {GRID_FILE_VERSION})", file.version),
        ));
    }
    if file.num_nodes < 2 {
        return Err(schema_err(path, "num_nodes", "a grid needs at least 2 nodes"));
    }
    if file.root != 0 {
        return Err(schema_err(path, "root", "the reference node must be node 0"));
    }

    let mut operational = Vec::new();
    let mut all = Vec::new();
    for (i, e) in file.edges.iter().enumerate() {
        for (end, label) in [(e.u, "u"), (e.v, "v")] {
            if end >= file.num_nodes {
                return Err(schema_err(
                    path,
                    &format!("edges[{i}].{label}"),
                    format!("node {end} out of range for {} nodes", file.num_nodes),
                ));
            }
        }
        let z = Impedance::new(e.r, e.x);
        all.push((NodeId(e.u), NodeId(e.v), z));
        if e.operational {
            operational.push((NodeId(e.u), NodeId(e.v), z));
        }
    }

    let topology = GridTopology::build_tree(file.num_nodes, &operational)?;
    let candidates = CandidateEdgeSet::new(&all)?;

    let m = file.num_nodes - 1;
    let mut seen = vec![false; m];
    let mut base_p = DVector::zeros(m);
    let mut base_q = DVector::zeros(m);
    for (i, l) in file.base_loads.iter().enumerate() {
        let field = format!("base_loads[{i}].node");
        if l.node == 0 || l.node >= file.num_nodes {
            return Err(schema_err(
                path,
                &field,
                format!("loads cover non-root nodes 1..{}", file.num_nodes - 1),
            ));
        }
        if seen[l.node - 1] {
            return Err(schema_err(path, &field, format!("node {} listed twice", l.node)));
        }
        if !(l.p.is_finite() && l.q.is_finite()) {
            return Err(schema_err(path, &format!("base_loads[{i}]"), "non-finite load"));
        }
        seen[l.node - 1] = true;
        base_p[l.node - 1] = l.p;
        base_q[l.node - 1] = l.q;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(schema_err(
            path,
            "base_loads",
            format!("missing load entry for node {}", missing + 1),
        ));
    }

    Ok(GridBundle { topology, candidates, base_p, base_q })
}

/// Assemble a document from core structures (for `gen-grid` and `convert`).
pub fn grid_file_from_parts(
    topology: &GridTopology,
    candidates: &CandidateEdgeSet,
    base_p: &DVector<f64>,
    base_q: &DVector<f64>,
) -> GridFileV1 {
    let edges = candidates
        .iter()
        .map(|(a, b, z)| EdgeRecord {
            u: a.0,
            v: b.0,
            r: z.r,
            x: z.x,
            operational: topology.impedance(a, b).is_some(),
        })
        .collect();
    let base_loads = (0..base_p.len())
        .map(|i| LoadRecord { node: i + 1, p: base_p[i], q: base_q[i] })
        .collect();
    GridFileV1 {
        version: GRID_FILE_VERSION,
        num_nodes: topology.num_nodes(),
        root: 0,
        edges,
        base_loads,
    }
}

/// Canonical emitter: normalized edge orientation, sorted records, sorted
/// keys, two-space indentation, trailing newline.
pub fn emit_grid_json(file: &GridFileV1) -> String {
    let mut canon = file.clone();
    for e in &mut canon.edges {
        if e.u > e.v {
            std::mem::swap(&mut e.u, &mut e.v);
        }
    }
    canon.edges.sort_by_key(|e| (e.u, e.v));
    canon.base_loads.sort_by_key(|l| l.node);

    // Round-trip through Value: its object maps are ordered, which sorts keys.
    let value = serde_json::to_value(&canon).expect("grid document serializes");
    let value = sort_keys(value);
    let mut out = serde_json::to_string_pretty(&value).expect("value serializes");
    out.push('\n');
    out
}

fn sort_keys(value: serde_json::Value) -> serde_json::Value {
    match value {
        serde_json::Value::Object(map) => {
            let sorted: BTreeMap<String, serde_json::Value> =
                map.into_iter().map(|(k, v)| (k, sort_keys(v))).collect();
            serde_json::Value::Object(sorted.into_iter().collect())
        }
        serde_json::Value::Array(items) => {
            serde_json::Value::Array(items.into_iter().map(sort_keys).collect())
        }
        other => other,
    }
}
