//! Per-step connectivity statistics and cross-run aggregation.

use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::graph::OverlayGraph;
use crate::view::SecondNeighborView;

/// Value columns of a [`MetricsRecord`], in CSV order (after `step`).
pub const FIELDS: [&str; 7] = [
    "active",
    "main_fraction",
    "num_components",
    "isolated",
    "avg_first",
    "avg_second",
    "messages_sent",
];

/// Integer-valued columns are printed without a fractional part.
const INTEGER_FIELD: [bool; 7] = [true, false, true, true, false, false, true];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub step: u64,
    pub active: usize,
    pub main_fraction: f64,
    pub num_components: usize,
    pub isolated: usize,
    pub avg_first: f64,
    pub avg_second: f64,
    pub messages_sent: u64,
}

impl MetricsRecord {
    pub fn values(&self) -> [f64; 7] {
        [
            self.active as f64,
            self.main_fraction,
            self.num_components as f64,
            self.isolated as f64,
            self.avg_first,
            self.avg_second,
            self.messages_sent as f64,
        ]
    }
}

/// Samples the overlay. `avg_second` comes from the nodes' own caches.
pub fn sample(g: &OverlayGraph, views: &[SecondNeighborView], step: u64, messages_sent: u64) -> MetricsRecord {
    let active = g.active_count();
    if active == 0 {
        return MetricsRecord {
            step,
            active: 0,
            main_fraction: 0.0,
            num_components: 0,
            isolated: 0,
            avg_first: 0.0,
            avg_second: 0.0,
            messages_sent,
        };
    }
    let comps = g.components();
    let largest = comps.iter().map(Vec::len).max().unwrap_or(0);
    let (mut first, mut second) = (0usize, 0usize);
    for n in g.active_nodes() {
        first += g.degree(n);
        second += views[n.0].second_count();
    }
    MetricsRecord {
        step,
        active,
        main_fraction: largest as f64 / active as f64,
        num_components: comps.len(),
        isolated: g.isolated_count(),
        avg_first: first as f64 / active as f64,
        avg_second: second as f64 / active as f64,
        messages_sent,
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no runs to aggregate")]
    Empty,
    #[error("run {run} has step {found} where step {expected} was expected")]
    StepMismatch { run: usize, expected: u64, found: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub step: u64,
    pub mean: [f64; 7],
    pub std: [f64; 7],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AggregateSeries {
    pub runs: usize,
    pub rows: Vec<AggregateRow>,
}

/// Per-step mean and sample standard deviation across runs, after dropping
/// the first `transient_steps` records of every run. Series are truncated to
/// the shortest run.
pub fn aggregate(runs: &[Vec<MetricsRecord>], transient_steps: usize) -> Result<AggregateSeries, MetricsError> {
    if runs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let len = runs
        .iter()
        .map(|r| r.len().saturating_sub(transient_steps))
        .min()
        .unwrap_or(0);
    let k = runs.len() as f64;
    let mut rows = Vec::with_capacity(len);
    for i in 0..len {
        let at = transient_steps + i;
        let step = runs[0][at].step;
        let mut mean = [0.0; 7];
        for (r, run) in runs.iter().enumerate() {
            if run[at].step != step {
                return Err(MetricsError::StepMismatch {
                    run: r,
                    expected: step,
                    found: run[at].step,
                });
            }
            for (m, v) in mean.iter_mut().zip(run[at].values()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= k);
        let mut std = [0.0; 7];
        if runs.len() > 1 {
            for run in runs {
                for ((s, v), m) in std.iter_mut().zip(run[at].values()).zip(mean) {
                    *s += (v - m) * (v - m);
                }
            }
            std.iter_mut().for_each(|s| *s = (*s / (k - 1.0)).sqrt());
        }
        rows.push(AggregateRow { step, mean, std });
    }
    Ok(AggregateSeries { runs: runs.len(), rows })
}

/// `%g`-style rendering with 6 significant digits.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    // exponent after rounding to 6 digits (999999.5 becomes 1e6)
    let sci = format!("{:.5e}", x);
    let (mantissa, e) = sci.split_once('e').expect("scientific format");
    let e: i32 = e.parse().expect("exponent");
    let exp = e;
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, x))
    } else {
        let m = trim_zeros(mantissa.to_string());
        format!("{m}e{}{:02}", if e < 0 { '-' } else { '+' }, e.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn format_value(idx: usize, v: f64) -> String {
    if INTEGER_FIELD[idx] {
        format!("{}", v.round() as i64)
    } else {
        format_sig6(v)
    }
}

pub fn write_run_csv<W: Write>(mut w: W, records: &[MetricsRecord]) -> io::Result<()> {
    writeln!(w, "step,{}", FIELDS.join(","))?;
    for r in records {
        let cols: Vec<String> = r.values().iter().enumerate().map(|(i, &v)| format_value(i, v)).collect();
        writeln!(w, "{},{}", r.step, cols.join(","))?;
    }
    Ok(())
}

pub fn write_aggregate_csv<W: Write>(mut w: W, series: &AggregateSeries) -> io::Result<()> {
    let header: Vec<String> = FIELDS
        .iter()
        .flat_map(|f| [format!("{f}_mean"), format!("{f}_std")])
        .collect();
    writeln!(w, "step,{}", header.join(","))?;
    for row in &series.rows {
        let cols: Vec<String> = (0..FIELDS.len())
            .flat_map(|i| [format_sig6(row.mean[i]), format_sig6(row.std[i])])
            .collect();
        writeln!(w, "{},{}", row.step, cols.join(","))?;
    }
    Ok(())
}

/// Reads a per-run CSV back. Values lose precision to the 6-digit rendering.
pub fn read_run_csv<R: BufRead>(r: R) -> io::Result<Vec<MetricsRecord>> {
    let bad = |m: String| io::Error::new(io::ErrorKind::InvalidData, m);
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| bad("empty csv".into()))??;
    let expected = format!("step,{}", FIELDS.join(","));
    if header != expected {
        return Err(bad(format!("unexpected header {header}")));
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != FIELDS.len() + 1 {
            return Err(bad(format!("bad row {line}")));
        }
        let f = |i: usize| cols[i].parse::<f64>().map_err(|_| bad(format!("bad value {}", cols[i])));
        let u = |i: usize| cols[i].parse::<u64>().map_err(|_| bad(format!("bad value {}", cols[i])));
        out.push(MetricsRecord {
            step: u(0)?,
            active: u(1)? as usize,
            main_fraction: f(2)?,
            num_components: u(3)? as usize,
            isolated: u(4)? as usize,
            avg_first: f(5)?,
            avg_second: f(6)?,
            messages_sent: u(7)?,
        });
    }
    Ok(out)
}
