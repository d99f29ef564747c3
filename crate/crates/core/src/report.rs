//! Summary CSVs and the run/grid/report workflows built on the engine.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::backends::{Backend, BackendError};
use crate::classifier::Classifier;
use crate::config::{ConfigError, RunConfig};
use crate::engine::{run_batch, EngineError, RunResults, SimulationResult};
use crate::metrics::{
    batch_metrics, consensus_summary, evolution_trace, AggregateDistribution, AllocationHistogram, ComboOutcome,
    ConsensusSummary, HISTOGRAM_NORMALIZATION, STD_CONVENTION,
};
use crate::population::InitialDistribution;
use crate::store::{self, Manifest, SimStatus, StoreError};
use crate::subjects::Stance;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("{0}: no manifest or transcripts found")]
    NoRun(String),
}

pub const SUMMARY_DIR: &str = "summary";

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> ReportError + '_ {
    move |source| ReportError::Csv {
        path: path.display().to_string(),
        source,
    }
}

fn write_rows(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(&r).map_err(csv_err(path))?;
    }
    let bytes = w.into_inner().map_err(|e| csv_err(path)(e.into_error().into()))?;
    store::write_atomic(path, &bytes)?;
    Ok(())
}

/// One aggregated combination, for the distribution table.
#[derive(Clone, Debug)]
pub struct DistributionRow {
    pub distribution: String,
    pub subject: String,
    pub aggregate: AggregateDistribution,
}

/// Final-distribution table: one row per (combination, stance) with mean and
/// std in percent.
pub fn write_distribution_csv(path: &Path, rows: &[DistributionRow]) -> Result<(), ReportError> {
    let mut out = Vec::new();
    for r in rows {
        for s in Stance::ALL {
            let ms = r.aggregate.get(s);
            out.push(vec![
                r.distribution.clone(),
                r.subject.clone(),
                s.letter().to_string(),
                format!("{:.2}", ms.mean),
                format!("{:.2}", ms.std),
                r.aggregate.n_simulations.to_string(),
                STD_CONVENTION.to_string(),
            ]);
        }
    }
    write_rows(
        path,
        &[
            "distribution",
            "subject",
            "stance",
            "mean_pct",
            "std_pct",
            "n_simulations",
            "std_convention",
        ],
        out,
    )
}

pub fn write_histogram_csv(path: &Path, h: &AllocationHistogram) -> Result<(), ReportError> {
    let rows = (0..h.counts.len())
        .map(|k| {
            vec![
                h.bin_edges[k].to_string(),
                h.bin_edges[k + 1].to_string(),
                h.counts[k].to_string(),
                h.frequencies[k].to_string(),
                h.n_explicit.to_string(),
                h.n_total.to_string(),
                HISTOGRAM_NORMALIZATION.to_string(),
            ]
        })
        .collect();
    write_rows(
        path,
        &[
            "bin_lo",
            "bin_hi",
            "count",
            "frequency",
            "n_explicit",
            "n_total",
            "normalization",
        ],
        rows,
    )
}

/// Per-agent stance codes over time for one simulation.
pub fn write_trace_csv(path: &Path, sim: &SimulationResult, n_rounds: u32) -> Result<(), ReportError> {
    let mut rows = Vec::new();
    for (agent, trace) in evolution_trace(sim, n_rounds).into_iter().enumerate() {
        for (t, code) in trace.into_iter().enumerate() {
            rows.push(vec![agent.to_string(), t.to_string(), code.to_string()]);
        }
    }
    write_rows(path, &["agent", "t", "code"], rows)
}

pub fn write_consensus_csv(path: &Path, s: &ConsensusSummary) -> Result<(), ReportError> {
    write_rows(
        path,
        &["group", "counted", "total", "pct", "excluded"],
        vec![
            vec![
                "non_consensus_start_all_partial".into(),
                s.noncons_counted.to_string(),
                s.noncons_combos_total.to_string(),
                format!("{:.2}", s.pct_noncons_all_partial),
                s.excluded.len().to_string(),
            ],
            vec![
                "consensus_start_kept".into(),
                s.cons_counted.to_string(),
                s.cons_combos_total.to_string(),
                format!("{:.2}", s.pct_cons_kept),
                s.excluded.len().to_string(),
            ],
        ],
    )
}

/// Writes distribution, histogram and trace CSVs for a set of simulations
/// into `<dir>/summary`. Returns the written paths.
pub fn write_batch_summary(
    dir: &Path,
    distribution: &str,
    subject: &str,
    sims: &[SimulationResult],
    n_rounds: u32,
) -> Result<Vec<PathBuf>, ReportError> {
    let metrics = batch_metrics(sims);
    let summary = dir.join(SUMMARY_DIR);
    let mut written = Vec::new();
    let p = summary.join("distribution.csv");
    write_distribution_csv(
        &p,
        &[DistributionRow {
            distribution: distribution.to_string(),
            subject: subject.to_string(),
            aggregate: metrics.aggregate,
        }],
    )?;
    written.push(p);
    let p = summary.join("histogram.csv");
    write_histogram_csv(&p, &metrics.histogram)?;
    written.push(p);
    for sim in sims {
        let p = summary
            .join("traces")
            .join(format!("sim_{:03}.csv", sim.simulation_index));
        write_trace_csv(&p, sim, n_rounds)?;
        written.push(p);
    }
    Ok(written)
}

/// Regenerates the summary CSVs of a run directory from its transcripts.
pub fn report_run(dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let manifest = Manifest::load(dir)?.ok_or_else(|| ReportError::NoRun(dir.display().to_string()))?;
    let mut sims = Vec::new();
    for entry in &manifest.simulations {
        let path = store::transcript_path(dir, entry.index);
        if entry.status != SimStatus::Done {
            log::warn!(
                "simulation {} is {:?}, left out of the report",
                entry.index,
                entry.status
            );
            continue;
        }
        sims.push(
            store::load_simulation(dir, entry.index).inspect_err(|_| log::error!("cannot read {}", path.display()))?,
        );
    }
    if sims.is_empty() {
        return Err(ReportError::NoRun(dir.display().to_string()));
    }
    let cfg = &manifest.config;
    write_batch_summary(
        dir,
        &cfg.distribution.label(),
        &cfg.subject.setting().label(),
        &sims,
        cfg.n_rounds,
    )
}

pub fn backend_for(cfg: &RunConfig) -> Result<Arc<dyn Backend>, ReportError> {
    Ok(cfg.simulation.backend.build(cfg.cache_dir.as_deref())?)
}

/// Runs one batch into `out` and writes its summary.
pub fn run_and_report(
    cfg: &RunConfig,
    backend: Arc<dyn Backend>,
    classifier: &Classifier,
    out: &Path,
    resume: bool,
) -> Result<RunResults, ReportError> {
    let results = run_batch(&cfg.simulation, backend, classifier, Some(out), resume)?;
    let mut sims = results.simulations.clone();
    sims.sort_by_key(|s| s.simulation_index);
    if !sims.is_empty() {
        let written = write_batch_summary(
            out,
            &cfg.simulation.distribution.label(),
            &cfg.simulation.subject.setting().label(),
            &sims,
            cfg.simulation.n_rounds,
        )?;
        if let Some(mut m) = Manifest::load(out)? {
            m.outputs = written
                .iter()
                .filter_map(|p| p.strip_prefix(out).ok())
                .map(|p| p.display().to_string())
                .collect();
            m.save(out)?;
        }
    }
    Ok(results)
}

pub fn combo_dir(out: &Path, dist: &InitialDistribution, setting_slug: &str) -> PathBuf {
    out.join(format!("{}__{}", dist.slug(), setting_slug))
}

#[derive(Debug)]
pub struct GridOutcome {
    pub summary: ConsensusSummary,
    pub failed_combinations: Vec<String>,
}

/// Runs every (distribution, setting) combination into its own directory,
/// then writes the consensus summary and a combined distribution table.
pub fn run_grid(
    cfg: &RunConfig,
    backend: Arc<dyn Backend>,
    classifier: &Classifier,
    out: &Path,
    resume: bool,
) -> Result<GridOutcome, ReportError> {
    let mut combos = Vec::new();
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for dist in &cfg.grid.distributions {
        for setting in &cfg.grid.settings {
            let mut cell = cfg.clone();
            cell.simulation.distribution = *dist;
            cell.simulation.subject = cfg.subject_for(*setting)?;
            let dir = combo_dir(out, dist, &setting.slug());
            log::info!("grid: {} {}", dist.label(), setting.label());
            let results = run_and_report(&cell, backend.clone(), classifier, &dir, resume)?;
            if !results.complete() {
                failed.push(dir.display().to_string());
            }
            rows.push(DistributionRow {
                distribution: dist.label(),
                subject: setting.label(),
                aggregate: results.metrics.aggregate,
            });
            combos.push(ComboOutcome {
                distribution: *dist,
                setting_label: setting.label(),
                finals: results
                    .simulations
                    .iter()
                    .map(|s| s.final_agents.iter().map(|a| a.stance()).collect())
                    .collect(),
                expected_simulations: cfg.simulation.n_simulations as usize,
            });
        }
    }
    let summary = consensus_summary(&combos);
    write_consensus_csv(&out.join("consensus_summary.csv"), &summary)?;
    write_distribution_csv(&out.join("distribution_table.csv"), &rows)?;
    Ok(GridOutcome {
        summary,
        failed_combinations: failed,
    })
}
