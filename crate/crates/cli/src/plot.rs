//! Plot-ready data extraction: one CSV per curve, no rendering.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Result};

use dronecov_core::metrics::MetricsRow;
use dronecov_core::sim::EpisodeOutcome;

use crate::runner::load_all_metrics;

/// Figure families the extractor understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    /// Per-DBS cumulative service rate over event time (one episode).
    ServiceOverTime,
    /// Individual values at the initial state across training.
    ValueDecomposition,
    /// Team utility versus iteration, per algorithm.
    Convergence,
    /// Median converged utility versus fleet size.
    FleetSize,
}

impl std::str::FromStr for Figure {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Figure> {
        Ok(match s {
            "fig-4" | "service-over-time" => Figure::ServiceOverTime,
            "fig-5" | "value-decomposition" => Figure::ValueDecomposition,
            "fig-7" | "fig-9" | "convergence" => Figure::Convergence,
            "fig-10" | "fleet-size" => Figure::FleetSize,
            other => bail!("unknown figure kind {other:?}"),
        })
    }
}

fn header(figure: &str, spec_hash: &str) -> String {
    format!(
        "# dronecov-plot v1\n# schema_version: 1\n# spec_hash: {spec_hash}\n# figure: {figure}\n"
    )
}

fn spec_hash_of(rows: &[MetricsRow], metrics_dir: &Path) -> String {
    // Reuse the hash recorded in the first metrics file; plots inherit it.
    let _ = rows;
    let mut dirs: Vec<_> = std::fs::read_dir(metrics_dir)
        .into_iter()
        .flatten()
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.join("metrics.csv").is_file())
        .collect();
    dirs.sort();
    for dir in dirs {
        if let Ok(text) = std::fs::read_to_string(dir.join("metrics.csv")) {
            for line in text.lines() {
                if let Some(h) = line.strip_prefix("# spec_hash: ") {
                    return h.to_string();
                }
            }
        }
    }
    "unknown".to_string()
}

/// Extract the requested figure's curves from a metrics directory into
/// `out`. Returns the files written; empty input produces a warning and no
/// files.
pub fn emit_plot_data(metrics_dir: &Path, figure: Figure, out: &Path) -> Result<Vec<String>> {
    let rows = load_all_metrics(metrics_dir)?;
    let mut written = Vec::new();
    std::fs::create_dir_all(out)?;
    let hash = spec_hash_of(&rows, metrics_dir);

    match figure {
        Figure::ServiceOverTime => {
            let mut logs: Vec<_> = std::fs::read_dir(metrics_dir)?
                .flatten()
                .map(|e| e.path())
                .filter(|p| p.join("episode.log").is_file())
                .collect();
            logs.sort();
            for run_dir in logs {
                let run = run_dir.file_name().unwrap().to_string_lossy().to_string();
                let text = std::fs::read_to_string(run_dir.join("episode.log"))?;
                let events = EpisodeOutcome::parse_event_log(&text)?;
                let dbs_ids: Vec<usize> = {
                    let mut ids: Vec<usize> = events.iter().map(|e| e.dbs).collect();
                    ids.sort_unstable();
                    ids.dedup();
                    ids
                };
                for dbs in dbs_ids {
                    let mut csv = header("fig-4 service-over-time", &hash);
                    csv.push_str("time_s,cumulative_service_rate\n");
                    let mut acc = 0.0;
                    csv.push_str("0,0\n");
                    for e in events.iter().filter(|e| e.dbs == dbs) {
                        acc += e.service_rate;
                        csv.push_str(&format!("{},{}\n", e.time_s, acc));
                    }
                    let name = format!("fig4-{run}-dbs{dbs}.csv");
                    std::fs::write(out.join(&name), csv)?;
                    written.push(name);
                }
            }
        }
        Figure::ValueDecomposition => {
            for (run, run_rows) in group_by_run(&rows) {
                let n_dbs = run_rows[0].n_dbs;
                for dbs in 0..n_dbs {
                    let mut csv = header("fig-5 value-decomposition", &hash);
                    csv.push_str("iteration,individual_value_s0\n");
                    for r in &run_rows {
                        csv.push_str(&format!("{},{}\n", r.iteration, r.values_s0[dbs]));
                    }
                    let name = format!("fig5-{run}-dbs{dbs}.csv");
                    std::fs::write(out.join(&name), csv)?;
                    written.push(name);
                }
                let mut csv = header("fig-5 value-decomposition", &hash);
                csv.push_str("iteration,summed_value_s0\n");
                for r in &run_rows {
                    let sum: f64 = r.values_s0.iter().sum();
                    csv.push_str(&format!("{},{}\n", r.iteration, sum));
                }
                let name = format!("fig5-{run}-sum.csv");
                std::fs::write(out.join(&name), csv)?;
                written.push(name);
            }
        }
        Figure::Convergence => {
            for (run, run_rows) in group_by_run(&rows) {
                let mut csv = header("fig-7 convergence", &hash);
                csv.push_str("iteration,team_utility\n");
                for r in &run_rows {
                    csv.push_str(&format!("{},{}\n", r.iteration, r.team_utility));
                }
                let name = format!("fig7-{run}.csv");
                std::fs::write(out.join(&name), csv)?;
                written.push(name);
            }
            // Median curve per algorithm across its runs.
            let mut by_algo: BTreeMap<String, Vec<&MetricsRow>> = BTreeMap::new();
            for r in &rows {
                by_algo.entry(r.algo.clone()).or_default().push(r);
            }
            for (algo, algo_rows) in by_algo {
                let mut per_iter: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
                for r in algo_rows {
                    per_iter
                        .entry(r.iteration)
                        .or_default()
                        .push(r.team_utility);
                }
                let mut csv = header("fig-7 convergence", &hash);
                csv.push_str("iteration,median_team_utility,runs\n");
                for (iter, mut gs) in per_iter {
                    gs.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    let m = if gs.len() % 2 == 1 {
                        gs[gs.len() / 2]
                    } else {
                        (gs[gs.len() / 2 - 1] + gs[gs.len() / 2]) / 2.0
                    };
                    csv.push_str(&format!("{iter},{m},{}\n", gs.len()));
                }
                let name = format!("fig7-{algo}-median.csv");
                std::fs::write(out.join(&name), csv)?;
                written.push(name);
            }
        }
        Figure::FleetSize => {
            let mut by_n: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for (_, run_rows) in group_by_run(&rows) {
                let n = run_rows[0].n_dbs;
                let tail = run_rows.len().min(100);
                let final_mean: f64 = run_rows[run_rows.len() - tail..]
                    .iter()
                    .map(|r| r.team_utility)
                    .sum::<f64>()
                    / tail as f64;
                by_n.entry(n).or_default().push(final_mean);
            }
            if !by_n.is_empty() {
                let mut csv = header("fig-10 fleet-size", &hash);
                csv.push_str("n_dbs,median_final_utility,runs\n");
                for (n, mut gs) in by_n {
                    gs.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    let m = if gs.len() % 2 == 1 {
                        gs[gs.len() / 2]
                    } else {
                        (gs[gs.len() / 2 - 1] + gs[gs.len() / 2]) / 2.0
                    };
                    csv.push_str(&format!("{n},{m},{}\n", gs.len()));
                }
                std::fs::write(out.join("fig10.csv"), csv)?;
                written.push("fig10.csv".to_string());
            }
        }
    }

    if written.is_empty() {
        eprintln!(
            "warning: no input under {} produced any {figure:?} series",
            metrics_dir.display()
        );
    }
    Ok(written)
}

fn group_by_run(rows: &[MetricsRow]) -> BTreeMap<String, Vec<MetricsRow>> {
    let mut map: BTreeMap<String, Vec<MetricsRow>> = BTreeMap::new();
    for r in rows {
        map.entry(r.run_id.clone()).or_default().push(r.clone());
    }
    for rows in map.values_mut() {
        rows.sort_by_key(|r| r.iteration);
    }
    map
}
