//! CSV and JSON writers for campaigns and controllers.
//!
//! `traces.csv`: `controller, time, signal_id, signal, run, cost,
//! state_inf_norm, x1..xn, u1..up`; `cost` is empty without a cost spec.
//! `stats.csv`: `controller, signal_id, time, cost_mean, cost_std,
//! state_inf_norm_mean, state_inf_norm_std, state_inf_norm_max,
//! state_inf_norm_max_minus_std`; `signal_id = all` rows hold the
//! probability-weighted mixture.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use prefix_sls::sim::SimTrace;
use prefix_sls::synth::SolutionExport;
use prefix_sls::{Campaign, CostSpec, SwitchingLanguage};
use serde::Serialize;
use serde_json::{json, Value};

use crate::{CliResult, Format};

pub struct ControllerRun<'a> {
    pub label: &'a str,
    pub campaign: &'a Campaign,
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value).map_err(std::io::Error::from)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn traces_of<'a>(run: &'a ControllerRun) -> &'a [Vec<SimTrace>] {
    run.campaign.traces.as_deref().expect("campaigns are run with traces kept")
}

fn trace_json(label: &str, s: usize, r: usize, tr: &SimTrace, cost: Option<&CostSpec>) -> Value {
    let vecs =
        |v: &[prefix_sls::sim::Vector]| v.iter().map(|x| x.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>();
    json!({
        "controller": label,
        "signal_id": s,
        "signal": tr.signal.to_string(),
        "run": r,
        "cost": cost.map(|c| tr.stage_costs(c)),
        "state_inf_norm": tr.state_inf_norms(),
        "states": vecs(&tr.states),
        "inputs": vecs(&tr.inputs),
    })
}

fn write_traces_csv(path: &Path, runs: &[ControllerRun], cost: Option<&CostSpec>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    let first = &traces_of(&runs[0])[0][0];
    let (n, p) = (first.states[0].len(), first.inputs[0].len());
    let mut header: Vec<String> = ["controller", "time", "signal_id", "signal", "run", "cost", "state_inf_norm"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=p).map(|i| format!("u{i}")));
    w.write_record(&header)?;
    for run in runs {
        for (s, per_signal) in traces_of(run).iter().enumerate() {
            for (r, tr) in per_signal.iter().enumerate() {
                let costs = cost.map(|c| tr.stage_costs(c));
                let label = tr.signal.to_string();
                for (t, (x, u)) in tr.states.iter().zip(&tr.inputs).enumerate() {
                    let mut rec = vec![
                        run.label.to_string(),
                        t.to_string(),
                        s.to_string(),
                        label.clone(),
                        r.to_string(),
                        opt(costs.as_ref().map(|c| c[t])),
                        x.amax().to_string(),
                    ];
                    rec.extend(x.iter().map(f64::to_string));
                    rec.extend(u.iter().map(f64::to_string));
                    w.write_record(&rec)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn write_stats_csv(path: &Path, runs: &[ControllerRun]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "controller",
        "signal_id",
        "time",
        "cost_mean",
        "cost_std",
        "state_inf_norm_mean",
        "state_inf_norm_std",
        "state_inf_norm_max",
        "state_inf_norm_max_minus_std",
    ])?;
    for run in runs {
        for st in &run.campaign.per_signal {
            let norm = &st.state_inf_norm;
            for t in 0..norm.mean.len() {
                w.write_record([
                    run.label.to_string(),
                    st.signal.to_string(),
                    t.to_string(),
                    opt(st.cost.as_ref().map(|c| c.mean[t])),
                    opt(st.cost.as_ref().map(|c| c.std[t])),
                    norm.mean[t].to_string(),
                    norm.std[t].to_string(),
                    norm.max[t].to_string(),
                    norm.max_minus_std[t].to_string(),
                ])?;
            }
        }
        let mix = &run.campaign.mixture;
        for t in 0..mix.state_inf_norm_mean.len() {
            let max = mix.state_inf_norm_max[t];
            let std = mix.state_inf_norm_std[t];
            w.write_record([
                run.label.to_string(),
                "all".into(),
                t.to_string(),
                opt(mix.cost_mean.as_ref().map(|c| c[t])),
                opt(mix.cost_std.as_ref().map(|c| c[t])),
                mix.state_inf_norm_mean[t].to_string(),
                std.to_string(),
                max.to_string(),
                (max - std).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes traces and statistics; returns the file names written.
pub fn write_campaign(
    out: &Path,
    format: Format,
    runs: &[ControllerRun],
    cost: Option<&CostSpec>,
    lang: &SwitchingLanguage,
) -> CliResult<Vec<String>> {
    let signals: Vec<String> = lang.signals().iter().map(|s| s.to_string()).collect();
    match format {
        Format::Csv => {
            write_traces_csv(&out.join("traces.csv"), runs, cost)?;
            write_stats_csv(&out.join("stats.csv"), runs)?;
            Ok(vec!["traces.csv".into(), "stats.csv".into()])
        }
        Format::Json => {
            let traces: Vec<Value> = runs
                .iter()
                .flat_map(|run| {
                    traces_of(run).iter().enumerate().flat_map(move |(s, per)| {
                        per.iter().enumerate().map(move |(r, tr)| trace_json(run.label, s, r, tr, cost))
                    })
                })
                .collect();
            write_json(&out.join("traces.json"), &traces)?;
            let stats: Value = runs
                .iter()
                .map(|run| {
                    (
                        run.label.to_string(),
                        json!({ "signals": signals, "per_signal": run.campaign.per_signal, "mixture": run.campaign.mixture }),
                    )
                })
                .collect::<serde_json::Map<_, _>>()
                .into();
            write_json(&out.join("stats.json"), &stats)?;
            Ok(vec!["traces.json".into(), "stats.json".into()])
        }
    }
}

/// Headline numbers of a campaign for manifests.
pub fn campaign_summary(c: &Campaign) -> Value {
    let peak = c.mixture.state_inf_norm_max.iter().copied().fold(0.0, f64::max);
    json!({
        "total_cost_mean": c.mixture.total_cost_mean,
        "total_cost_per_signal": c.per_signal.iter().map(|s| s.total_cost).collect::<Vec<_>>(),
        "state_inf_norm_max": peak,
        "state_inf_norm_mean": c.mixture.state_inf_norm_mean,
        "state_inf_norm_std": c.mixture.state_inf_norm_std,
        "cost_mean": c.mixture.cost_mean,
        "cost_std": c.mixture.cost_std,
    })
}

/// `controller.json` (the node list) or `controller.csv` with one row per
/// gain entry: `depth, prefix, row, col, value`.
pub fn write_controller(out: &Path, format: Format, sol: &SolutionExport) -> CliResult<PathBuf> {
    match format {
        Format::Json => {
            let path = out.join("controller.json");
            write_json(
                &path,
                &json!({
                    "horizon": sol.horizon,
                    "delay": sol.delay,
                    "p": sol.p,
                    "m": sol.m,
                    "config_hash": sol.config_hash,
                    "nodes": sol.nodes,
                }),
            )?;
            Ok(path)
        }
        Format::Csv => {
            let path = out.join("controller.csv");
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["depth", "prefix", "row", "col", "value"])?;
            for node in &sol.nodes {
                for (r, row) in node.gain.iter().enumerate() {
                    for (c, v) in row.iter().enumerate() {
                        w.write_record([
                            node.depth.to_string(),
                            node.prefix.clone(),
                            r.to_string(),
                            c.to_string(),
                            v.to_string(),
                        ])?;
                    }
                }
            }
            w.flush()?;
            Ok(path)
        }
    }
}
