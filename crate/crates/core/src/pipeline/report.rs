use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Mode, PipelineConfig, PipelineError};
use crate::bandit::TrajectoryPoint;
use crate::finetune::FinetuneEpoch;
use crate::metrics::{write_metrics_tsv, MetricSummary};
use crate::pretrain::EpochLoss;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub user_quads: usize,
    pub item_quads: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

/// Pre-training record of one attribute graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SideReport {
    pub relations: Vec<String>,
    pub losses: Vec<EpochLoss>,
    pub trajectory: Vec<TrajectoryPoint>,
    /// Frozen `k_t` per relation.
    pub thresholds: Vec<usize>,
    /// Relations frozen by the iteration cap rather than by convergence.
    pub capped: Vec<bool>,
    pub sim_epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub user: SideReport,
    pub item: SideReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub epochs: Vec<FinetuneEpoch>,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: PipelineConfig,
    pub seed: u64,
    pub mode: Mode,
    pub dataset: DatasetSummary,
    pub pretrain: Option<PretrainReport>,
    /// Fine-tuning started from random tables.
    pub random_init: bool,
    pub finetune: Option<FinetuneReport>,
    pub metrics: Vec<MetricSummary>,
    /// Item-popularity ranking under the same protocol.
    pub popularity: Vec<MetricSummary>,
    pub timings: Vec<StageTiming>,
}

impl RunReport {
    pub fn hr_at(&self, k: usize) -> Option<f64> {
        self.metrics.iter().find(|m| m.k == k).map(|m| m.hr)
    }

    /// The report with timings cleared, for reproducibility comparisons.
    pub fn without_timings(&self) -> Self {
        Self {
            timings: Vec::new(),
            ..self.clone()
        }
    }
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>, PipelineError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| PipelineError::output(path, e))
}

pub(crate) fn finish(path: &Path, w: BufWriter<File>) -> Result<(), PipelineError> {
    w.into_inner()
        .map_err(|e| PipelineError::output(path, e.into_error()))?
        .sync_all()
        .ok();
    Ok(())
}

/// `side<TAB>gamma<TAB>relation<TAB>k_t<TAB>AND`, user side first.
pub(crate) fn write_trajectories<W: Write>(mut w: W, p: &PretrainReport) -> std::io::Result<()> {
    for (side, r) in [("user", &p.user), ("item", &p.item)] {
        for pt in &r.trajectory {
            let name = r
                .relations
                .get(pt.rel_type as usize)
                .map(String::as_str)
                .unwrap_or("?");
            writeln!(w, "{side}\t{}\t{name}\t{}\t{:.6}", pt.gamma, pt.k, pt.and)?;
        }
    }
    Ok(())
}

/// Writes `report.json`, `metrics.tsv` and, when pre-training ran,
/// `trajectory.tsv` into `dir`.
pub fn write_report(report: &RunReport, dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(|e| PipelineError::output(dir, e))?;
    let path = dir.join("report.json");
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, report)
        .map_err(|e| PipelineError::output(&path, e.into()))?;
    writeln!(w).map_err(|e| PipelineError::output(&path, e))?;
    finish(&path, w)?;

    let path = dir.join("metrics.tsv");
    let mut w = create(&path)?;
    write_metrics_tsv(&mut w, &report.metrics).map_err(|e| PipelineError::output(&path, e))?;
    finish(&path, w)?;

    if let Some(p) = &report.pretrain {
        let path = dir.join("trajectory.tsv");
        let mut w = create(&path)?;
        write_trajectories(&mut w, p).map_err(|e| PipelineError::output(&path, e))?;
        finish(&path, w)?;
    }
    Ok(())
}

pub fn read_report(dir: &Path) -> Result<RunReport, PipelineError> {
    let path = dir.join("report.json");
    let text = fs::read_to_string(&path).map_err(|e| PipelineError::output(&path, e))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::output(&path, e.into()))
}
