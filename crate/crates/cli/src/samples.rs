//! CSV emission for simulated voltage samples.
//!
//! Layout (version 1): a `#`-prefixed version line, a header row, then one
//! row per sample. Columns `v_<k>` hold per-unit magnitude deviations of
//! node `k` from the reference node 0; `theta_<k>` columns (present unless
//! the samples are magnitude-only) hold phase deviations. All non-root
//! nodes appear — the file is a simulator artifact, so hiding nodes from a
//! learner happens downstream, not here. Floats print in Rust's shortest
//! round-trip form, making files byte-stable for a fixed seed and build.

use gridsleuth_core::moments::VoltageSamples;

pub const SAMPLES_CSV_VERSION: &str = "# gridsleuth samples csv v1";

pub fn samples_to_csv(samples: &VoltageSamples) -> String {
    let n = samples.n_samples();
    let m = samples.reduced_width();
    let mut out = String::new();
    out.push_str(SAMPLES_CSV_VERSION);
    out.push('\n');

    out.push_str("sample");
    for k in 1..=m {
        out.push_str(&format!(",v_{k}"));
    }
    if samples.has_phase() {
        for k in 1..=m {
            out.push_str(&format!(",theta_{k}"));
        }
    }
    out.push('\n');

    for i in 0..n {
        out.push_str(&i.to_string());
        for j in 0..m {
            out.push_str(&format!(",{}", samples.v()[(i, j)]));
        }
        if let Some(theta) = samples.theta() {
            for j in 0..m {
                out.push_str(&format!(",{}", theta[(i, j)]));
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use std::collections::BTreeSet;

    #[test]
    fn csv_layout_and_stability() {
        let v = DMatrix::from_row_slice(2, 2, &[0.5, -0.25, 0.125, 1.0]);
        let theta = DMatrix::from_row_slice(2, 2, &[0.0, 1.5, -0.5, 0.75]);
        let samples = VoltageSamples::new(
            v,
            Some(theta),
            BTreeSet::from([gridsleuth_core::grid::NodeId(1), gridsleuth_core::grid::NodeId(2)]),
        )
        .unwrap();
        let csv = samples_to_csv(&samples);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], SAMPLES_CSV_VERSION);
        assert_eq!(lines[1], "sample,v_1,v_2,theta_1,theta_2");
        assert_eq!(lines[2], "0,0.5,-0.25,0,1.5");
        assert_eq!(lines[3], "1,0.125,1,-0.5,0.75");
        assert_eq!(samples_to_csv(&samples), csv);
    }
}
