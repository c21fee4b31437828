//! Executes a manifest: all replicas of every requested mode, written to disk.
//!
//! Files, per mode `on`/`off` and per run seed:
//! `run_<mode>_<seed>.csv`, `agg_<mode>.csv`, `snap_<mode>_<seed>_<step>.edges`
//! and, with tracing, `trace_<mode>_<seed>.csv`.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::config::RunManifest;
use crate::metrics::{self, MetricsError};
use crate::sim::{self, render_trace, SimError};
use crate::topology::TopologyRegistry;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("could not start worker pool: {0}")]
    Pool(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunnerError + '_ {
    move |source| RunnerError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A run that stopped early.
#[derive(Debug)]
pub struct RunFailure {
    pub mode: &'static str,
    pub seed: u64,
    pub error: SimError,
}

#[derive(Debug, Default)]
pub struct ExecuteReport {
    pub files: Vec<PathBuf>,
    pub failures: Vec<RunFailure>,
}

impl ExecuteReport {
    /// 0 when every run completed.
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            1
        }
    }
}

fn write_file(path: PathBuf, body: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<PathBuf, RunnerError> {
    let file = File::create(&path).map_err(io_err(&path))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(io_err(&path))?;
    Ok(path)
}

fn mode_name(enabled: bool) -> &'static str {
    if enabled {
        "on"
    } else {
        "off"
    }
}

/// Runs everything in `manifest` with up to `jobs` worker threads (`None`
/// uses rayon's default). Aggregates are skipped for a mode with failed runs.
pub fn execute(manifest: &RunManifest, jobs: Option<usize>) -> Result<ExecuteReport, RunnerError> {
    let registry = TopologyRegistry::builtin();
    manifest.config.validate(&registry)?;
    let dir = &manifest.output_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder.build().map_err(|e| RunnerError::Pool(e.to_string()))?;

    let mut report = ExecuteReport::default();
    for &enabled in manifest.mode.legs() {
        let mode = mode_name(enabled);
        let mut config = manifest.config.clone();
        config.protocol.enabled = enabled;

        let results: Vec<Result<(sim::RunOutput, Vec<PathBuf>), RunnerError>> = pool.install(|| {
            (0..config.runs)
                .into_par_iter()
                .map(|i| run_one(manifest, &config, &registry, mode, i))
                .collect()
        });

        let mut ok_runs = Vec::with_capacity(results.len());
        for (i, r) in results.into_iter().enumerate() {
            match r {
                Ok((out, files)) => {
                    report.files.extend(files);
                    ok_runs.push(out.records);
                }
                Err(RunnerError::Sim(error)) => report.failures.push(RunFailure {
                    mode,
                    seed: config.seed.wrapping_add(i as u64),
                    error,
                }),
                Err(other) => return Err(other),
            }
        }
        if ok_runs.len() == config.runs {
            let series = metrics::aggregate(&ok_runs, config.transient_steps)?;
            let path = dir.join(format!("agg_{mode}.csv"));
            report.files.push(write_file(path, |w| metrics::write_aggregate_csv(w, &series))?);
        }
    }
    Ok(report)
}

fn run_one(
    manifest: &RunManifest,
    config: &sim::ScenarioConfig,
    registry: &TopologyRegistry,
    mode: &'static str,
    index: usize,
) -> Result<(sim::RunOutput, Vec<PathBuf>), RunnerError> {
    let dir = &manifest.output_dir;
    let seed = config.seed.wrapping_add(index as u64);
    let mut files = Vec::new();
    let mut snap_err = None;
    let out = sim::run_single(config, registry, index, manifest.trace, &mut |s, rec| {
        let Some(every) = manifest.snapshot_every else {
            return;
        };
        if rec.step % every != 0 || snap_err.is_some() {
            return;
        }
        let path = dir.join(format!("snap_{mode}_{seed}_{}.edges", rec.step));
        match write_file(path, |w| s.graph().write_edge_list(w, rec.step)) {
            Ok(p) => files.push(p),
            Err(e) => snap_err = Some(e),
        }
    })?;
    if let Some(e) = snap_err {
        return Err(e);
    }
    let path = dir.join(format!("run_{mode}_{seed}.csv"));
    files.push(write_file(path, |w| metrics::write_run_csv(w, &out.records))?);
    if let Some(trace) = &out.trace {
        let path = dir.join(format!("trace_{mode}_{seed}.csv"));
        files.push(write_file(path, |w| w.write_all(render_trace(trace).as_bytes()))?);
    }
    Ok((out, files))
}
