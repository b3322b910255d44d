//! Trace CSV, sweep summary and the plotting helper.

use std::io::Write;

use clik_sdp::{GainSource, SimTrace};

pub fn trace_header(trace: &SimTrace) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=trace.dof).map(|j| format!("q_{j}")));
    h.extend((1..=trace.dof).map(|j| format!("qd_{j}")));
    h.extend((1..=trace.levels).map(|i| format!("err_norm_{i}")));
    h.extend((1..=trace.n_gains).map(|l| format!("lambda_{l}")));
    h.extend(
        [
            "beta",
            "gamma",
            "stab_margin",
            "lyapunov",
            "solver_status",
            "solve_time_s",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    h
}

pub fn num(v: f64) -> String {
    format!("{v:.15e}")
}

/// Writes the trace; with `timing = false` the solve-time column is zeroed so
/// reruns are byte-identical.
pub fn write_trace<W: Write>(trace: &SimTrace, out: W, timing: bool) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trace_header(trace))?;
    for r in &trace.records {
        let mut row = vec![num(r.t)];
        row.extend(r.q.iter().map(|v| num(*v)));
        row.extend(r.qd.iter().map(|v| num(*v)));
        row.extend(r.err_norms.iter().map(|v| num(*v)));
        row.extend(r.lambda.iter().map(|v| num(*v)));
        row.extend([r.beta, r.gamma, r.stab_margin, r.lyapunov].map(num));
        row.push(r.source.to_string());
        row.push(num(if timing { r.solve_time } else { 0.0 }));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn fallback_steps(trace: &SimTrace) -> usize {
    trace
        .records
        .iter()
        .filter(|r| matches!(r.source, GainSource::Fallback(_)))
        .count()
}

fn list(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6e}")).collect();
    parts.join(", ")
}

pub fn print_summary(trace: &SimTrace, beta_tilde: f64, wall: f64) {
    let last = trace.last();
    println!("scenario: {}", trace.scenario);
    println!(
        "steps: {} ({} records, dt {})",
        trace.records.len() - 1,
        trace.records.len(),
        trace.dt
    );
    println!("initial error norms: [{}]", list(&trace.records[0].err_norms));
    println!("final error norms (t = {}): [{}]", last.t, list(&last.err_norms));
    println!(
        "stability margin: min {:.6e}, max {:.6e}",
        trace.min_margin(),
        trace.max_margin()
    );
    let deficit = trace.mean_beta_deficit(beta_tilde);
    if deficit.is_finite() {
        println!("mean beta deficit: {deficit:.6e}");
    }
    println!("fallback steps: {}", fallback_steps(trace));
    println!("wall time: {wall:.3} s");
}

/// One summary row per sweep value.
pub struct SweepRow {
    pub value: f64,
    pub trace: SimTrace,
    pub beta_tilde: f64,
}

pub fn write_sweep_summary<W: Write>(param: &str, rows: &[SweepRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let levels = rows.first().map_or(0, |r| r.trace.levels);
    let mut header = vec![param.to_string()];
    header.extend((1..=levels).map(|i| format!("final_err_norm_{i}")));
    header.extend((1..=levels).map(|i| format!("err_norm_{i}_at_1s")));
    header.extend(
        ["min_margin", "max_margin", "mean_beta_deficit", "fallback_steps"]
            .iter()
            .map(|s| s.to_string()),
    );
    w.write_record(&header)?;
    for row in rows {
        let tr = &row.trace;
        let mut rec = vec![num(row.value)];
        rec.extend(tr.last().err_norms.iter().map(|v| num(*v)));
        rec.extend(tr.at_time(1.0).err_norms.iter().map(|v| num(*v)));
        rec.push(num(tr.min_margin()));
        rec.push(num(tr.max_margin()));
        rec.push(num(tr.mean_beta_deficit(row.beta_tilde)));
        rec.push(fallback_steps(tr).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Plot a clik-sdp trace: python3 plot_trace.py trace.csv [out.png]"""
import sys

import matplotlib.pyplot as plt
import pandas as pd

df = pd.read_csv(sys.argv[1])
cols = lambda prefix: [c for c in df.columns if c.startswith(prefix)]

fig, ax = plt.subplots(4, 1, sharex=True, figsize=(8, 10))
for c in cols("err_norm_"):
    ax[0].semilogy(df["t"], df[c], label=c)
ax[0].set_ylabel("task error norm")
ax[1].plot(df["t"], df["stab_margin"], label="stab_margin")
ax[1].axhline(0.0, color="k", lw=0.5)
ax[1].set_ylabel("stability margin")
for c in cols("qd_"):
    ax[2].plot(df["t"], df[c], label=c)
ax[2].set_ylabel("joint velocity [rad/s]")
for c in cols("lambda_") + ["beta"]:
    ax[3].plot(df["t"], df[c], label=c)
ax[3].set_ylabel("gains")
ax[3].set_xlabel("t [s]")
for a in ax:
    a.legend(loc="upper right", fontsize="small")
fig.tight_layout()
if len(sys.argv) > 2:
    fig.savefig(sys.argv[2], dpi=150)
else:
    plt.show()
"#;
