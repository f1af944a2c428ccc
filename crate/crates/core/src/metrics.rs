//! Append-only metrics rows and their CSV schema.
//!
//! Every metrics file starts with comment lines carrying the format name,
//! schema version, and the spec hash of the run that produced it, so golden
//! tests can diff outputs byte for byte.

use crate::error::{Error, Result};
use crate::vdrl::TrainResult;

pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// One training iteration of one run. Loss fields apply to meta runs only.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub run_id: String,
    pub algo: String,
    pub seed: u64,
    pub n_dbs: usize,
    pub iteration: u32,
    pub team_utility: f64,
    pub reward_sum: f64,
    pub values_s0: Vec<f64>,
    pub advantage_l2: f64,
    pub entropy: f64,
    pub loss_value: Option<f64>,
    pub loss_policy: Option<f64>,
}

/// Rows for a finished training run.
pub fn rows_from_train(
    run_id: &str,
    algo: &str,
    seed: u64,
    n_dbs: usize,
    result: &TrainResult,
) -> Vec<MetricsRow> {
    result
        .metrics
        .iter()
        .map(|m| MetricsRow {
            run_id: run_id.to_string(),
            algo: algo.to_string(),
            seed,
            n_dbs,
            iteration: m.iteration,
            team_utility: m.team_utility,
            reward_sum: m.team_utility,
            values_s0: m.values_s0.clone(),
            advantage_l2: m.advantage_l2,
            entropy: m.entropy,
            loss_value: None,
            loss_policy: None,
        })
        .collect()
}

/// Render rows to CSV. All rows must agree on the DBS count, which fixes the
/// number of per-DBS value columns.
pub fn render_metrics_csv(rows: &[MetricsRow], spec_hash: &str) -> Result<String> {
    let n_dbs = rows.first().map(|r| r.n_dbs).unwrap_or(0);
    if rows
        .iter()
        .any(|r| r.n_dbs != n_dbs || r.values_s0.len() != n_dbs)
    {
        return Err(Error::contract("metrics rows disagree on the DBS count"));
    }
    let mut out = String::from("# dronecov-metrics v1\n");
    out.push_str(&format!("# schema_version: {METRICS_SCHEMA_VERSION}\n"));
    out.push_str(&format!("# spec_hash: {spec_hash}\n"));
    out.push_str("run_id,algo,seed,n_dbs,iteration,team_utility,reward_sum");
    for n in 0..n_dbs {
        out.push_str(&format!(",value_s0_{n}"));
    }
    out.push_str(",advantage_l2,entropy,loss_value,loss_policy\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}",
            r.run_id, r.algo, r.seed, r.n_dbs, r.iteration, r.team_utility, r.reward_sum
        ));
        for v in &r.values_s0 {
            out.push_str(&format!(",{v}"));
        }
        let opt = |o: Option<f64>| o.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            ",{},{},{},{}\n",
            r.advantage_l2,
            r.entropy,
            opt(r.loss_value),
            opt(r.loss_policy)
        ));
    }
    Ok(out)
}

/// Parse a file produced by [`render_metrics_csv`].
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::new();
    let mut n_dbs: Option<usize> = None;
    for line in text.lines() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.starts_with("run_id,") {
            let cols = line.split(',').count();
            // Fixed columns: 7 leading + 4 trailing.
            if cols < 11 {
                return Err(Error::contract("metrics header too short"));
            }
            n_dbs = Some(cols - 11);
            continue;
        }
        let n = n_dbs.ok_or_else(|| Error::contract("metrics data before header"))?;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 + n {
            return Err(Error::contract(format!(
                "metrics row has {} fields, expected {}",
                fields.len(),
                11 + n
            )));
        }
        let f = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::contract(format!("bad float {s:?}")))
        };
        let opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                f(s).map(Some)
            }
        };
        rows.push(MetricsRow {
            run_id: fields[0].to_string(),
            algo: fields[1].to_string(),
            seed: fields[2].parse().map_err(|_| Error::contract("bad seed"))?,
            n_dbs: fields[3]
                .parse()
                .map_err(|_| Error::contract("bad n_dbs"))?,
            iteration: fields[4]
                .parse()
                .map_err(|_| Error::contract("bad iteration"))?,
            team_utility: f(fields[5])?,
            reward_sum: f(fields[6])?,
            values_s0: fields[7..7 + n]
                .iter()
                .map(|s| f(s))
                .collect::<Result<_>>()?,
            advantage_l2: f(fields[7 + n])?,
            entropy: f(fields[8 + n])?,
            loss_value: opt(fields[9 + n])?,
            loss_policy: opt(fields[10 + n])?,
        });
    }
    Ok(rows)
}

/// Meta-training loss history CSV (meta iteration, summed losses).
pub fn render_meta_csv(history: &[crate::meta::MetaIterationLosses], spec_hash: &str) -> String {
    let mut out = String::from("# dronecov-meta-metrics v1\n");
    out.push_str(&format!("# schema_version: {METRICS_SCHEMA_VERSION}\n"));
    out.push_str(&format!("# spec_hash: {spec_hash}\n"));
    out.push_str("iteration,value_loss,policy_loss\n");
    for h in history {
        out.push_str(&format!(
            "{},{},{}\n",
            h.iteration, h.value_loss, h.policy_loss
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(iter: u32) -> MetricsRow {
        MetricsRow {
            run_id: "vdrl-1".into(),
            algo: "vdrl".into(),
            seed: 1,
            n_dbs: 2,
            iteration: iter,
            team_utility: 0.5 + iter as f64 * 0.01,
            reward_sum: 0.5 + iter as f64 * 0.01,
            values_s0: vec![0.1, -0.2],
            advantage_l2: 0.3,
            entropy: 1.2,
            loss_value: None,
            loss_policy: None,
        }
    }

    #[test]
    fn csv_round_trips() {
        let rows = vec![row(1), row(2), row(3)];
        let text = render_metrics_csv(&rows, "deadbeef").unwrap();
        assert!(
            text.starts_with("# dronecov-metrics v1\n# schema_version: 1\n# spec_hash: deadbeef\n")
        );
        let parsed = parse_metrics_csv(&text).unwrap();
        assert_eq!(parsed, rows);
    }

    #[test]
    fn csv_rendering_is_byte_stable() {
        let rows = vec![row(1), row(2)];
        let a = render_metrics_csv(&rows, "h").unwrap();
        let b = render_metrics_csv(&rows, "h").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_dbs_counts_are_rejected() {
        let mut bad = row(1);
        bad.values_s0 = vec![0.0];
        assert!(render_metrics_csv(&[row(1), bad], "h").is_err());
    }
}
