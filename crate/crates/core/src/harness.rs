//! Control runs and target sweeps over simulated pictures, with CSV summaries.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{run_frame, ControllerConfig, EncoderBackend, ErrorBase, FrameReport};
use crate::encoder_sim::{SimBackend, SimParams};
use crate::error::{Error, Result};
use crate::frame_model::{csv_error, CtuWeight};
use crate::metrics::time_saving_pct;
use crate::preset_catalog::Catalog;
use crate::tc_model::TcModel;

/// How the picture budget is given.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BudgetSpec {
    AbsoluteMs(f64),
    /// Fraction of an unaccelerated baseline time.
    Ratio {
        ratio: f64,
        baseline_ms: f64,
    },
}

impl BudgetSpec {
    pub fn budget_ms(&self) -> Result<f64> {
        let b = match *self {
            BudgetSpec::AbsoluteMs(ms) => ms,
            BudgetSpec::Ratio { ratio, baseline_ms } => {
                if !(ratio > 0.0) || !(baseline_ms > 0.0) {
                    return Err(Error::Config(format!(
                        "budget ratio {ratio} of baseline {baseline_ms} ms is not positive"
                    )));
                }
                ratio * baseline_ms
            }
        };
        if !(b > 0.0) || !b.is_finite() {
            return Err(Error::Config(format!(
                "picture budget {b} ms is not positive"
            )));
        }
        Ok(b)
    }

    pub fn target_ratio(&self) -> Option<f64> {
        match *self {
            BudgetSpec::AbsoluteMs(_) => None,
            BudgetSpec::Ratio { ratio, .. } => Some(ratio),
        }
    }
}

/// Picture-level outcome of one control run.
///
/// `ts_luma_pct` is time saving against the unaccelerated luma time, not
/// total encoding time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub target_ratio: Option<f64>,
    pub pic_budget_ms: f64,
    pub total_real_ms: f64,
    pub te_pct: f64,
    pub baseline_ms: Option<f64>,
    pub ts_luma_pct: Option<f64>,
    pub saturated: bool,
    pub saturated_ctus: usize,
    pub ctus: usize,
    pub r_cpu: f64,
}

impl RunSummary {
    pub fn from_report(
        report: &FrameReport,
        budget: &BudgetSpec,
        baseline_ms: Option<f64>,
    ) -> Self {
        Self {
            target_ratio: budget.target_ratio(),
            pic_budget_ms: report.pic_budget_ms,
            total_real_ms: report.total_real_ms,
            te_pct: report.te_pct(),
            baseline_ms,
            ts_luma_pct: baseline_ms.map(|b| time_saving_pct(b, report.total_real_ms)),
            saturated: report.saturated,
            saturated_ctus: report.saturated_ctus,
            ctus: report.records.len(),
            r_cpu: report.final_model.r_cpu(),
        }
    }
}

pub fn write_summaries<W: Write>(out: W, rows: &[RunSummary]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for r in rows {
        wtr.serialize(r).map_err(csv_error)?;
    }
    wtr.flush().map_err(|e| Error::io("<summary>", e))
}

pub fn read_summaries<R: Read>(input: R, origin: &str) -> Result<Vec<RunSummary>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::parse(format!("{origin}:{}", i + 2), e.to_string())))
        .collect()
}

/// Shared knobs for control runs.
#[derive(Debug, Clone)]
pub struct ControlSetup {
    pub model: TcModel,
    pub catalog: Catalog,
    pub window_cap: usize,
    pub error_base: ErrorBase,
}

impl ControlSetup {
    pub fn new(model: TcModel) -> Self {
        Self {
            model,
            catalog: Catalog::default(),
            window_cap: crate::controller::DEFAULT_WINDOW_CAP,
            error_base: ErrorBase::default(),
        }
    }

    pub fn config(&self, pic_budget_ms: f64) -> Result<ControllerConfig> {
        Ok(ControllerConfig::new(pic_budget_ms, self.model)?
            .with_window_cap(self.window_cap)?
            .with_catalog(self.catalog.clone())
            .with_error_base(self.error_base))
    }

    /// Run one picture against any backend.
    pub fn run<B: EncoderBackend>(
        &self,
        weights: &[CtuWeight],
        backend: B,
        budget: &BudgetSpec,
        baseline_ms: Option<f64>,
    ) -> Result<(FrameReport, RunSummary)> {
        let config = self.config(budget.budget_ms()?)?;
        let report = run_frame(&config, weights, backend)?;
        let summary = RunSummary::from_report(&report, budget, baseline_ms);
        Ok((report, summary))
    }

    /// Run one simulated picture at `target_ratio` of its own baseline.
    pub fn run_simulated(
        &self,
        params: &SimParams,
        target_ratio: f64,
    ) -> Result<(FrameReport, RunSummary)> {
        let backend = SimBackend::new(params.clone())?;
        let baseline_ms = backend.baseline_total_ms(&self.catalog);
        let weights = backend.weights();
        let budget = BudgetSpec::Ratio {
            ratio: target_ratio,
            baseline_ms,
        };
        self.run(&weights, backend, &budget, Some(baseline_ms))
    }
}

/// One line of the sweep table: means over seeded repeats at one target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub target_ratio_pct: f64,
    pub ts_luma_pct: f64,
    pub te_pct: f64,
    pub te_max_pct: f64,
    pub saturated_runs: usize,
    pub repeats: usize,
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub targets: Vec<f64>,
    pub repeats: usize,
    pub base_seed: u64,
    pub params: SimParams,
    pub setup: ControlSetup,
}

/// Runs every (target, repeat) pair; repeat `k` uses seed `base_seed + k`.
///
/// Runs execute in parallel, rows come back in target order.
pub fn sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    if cfg.targets.is_empty() {
        return Err(Error::Argument("sweep needs at least one target".into()));
    }
    if let Some(t) = cfg.targets.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
        return Err(Error::Argument(format!("sweep target {t} outside (0, 1]")));
    }
    if cfg.repeats == 0 {
        return Err(Error::Argument("sweep needs at least one repeat".into()));
    }
    let jobs: Vec<(usize, u64)> = (0..cfg.targets.len())
        .flat_map(|t| (0..cfg.repeats as u64).map(move |k| (t, k)))
        .collect();
    let runs: Vec<RunSummary> = jobs
        .par_iter()
        .map(|&(t, k)| {
            let params = cfg.params.with_seed(cfg.base_seed.wrapping_add(k));
            cfg.setup
                .run_simulated(&params, cfg.targets[t])
                .map(|(_, s)| s)
        })
        .collect::<Result<_>>()?;
    Ok(runs
        .chunks(cfg.repeats)
        .zip(&cfg.targets)
        .map(|(chunk, &target)| {
            let n = chunk.len() as f64;
            SweepRow {
                target_ratio_pct: target * 100.0,
                ts_luma_pct: chunk
                    .iter()
                    .map(|s| s.ts_luma_pct.unwrap_or(0.0))
                    .sum::<f64>()
                    / n,
                te_pct: chunk.iter().map(|s| s.te_pct).sum::<f64>() / n,
                te_max_pct: chunk.iter().map(|s| s.te_pct).fold(0.0, f64::max),
                saturated_runs: chunk.iter().filter(|s| s.saturated).count(),
                repeats: chunk.len(),
            }
        })
        .collect())
}

/// Mean TE over all rows of a sweep table.
pub fn mean_te_pct(rows: &[SweepRow]) -> f64 {
    rows.iter().map(|r| r.te_pct).sum::<f64>() / rows.len() as f64
}

pub fn write_sweep<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for r in rows {
        wtr.serialize(r).map_err(csv_error)?;
    }
    wtr.flush().map_err(|e| Error::io("<sweep>", e))
}

pub fn read_sweep<R: Read>(input: R, origin: &str) -> Result<Vec<SweepRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::parse(format!("{origin}:{}", i + 2), e.to_string())))
        .collect()
}

/// Parse `0.3,0.4` or `30:90:10` (percent start:stop:step, inclusive).
pub fn parse_targets(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::Argument(format!("cannot parse target list `{spec}`"));
    if let Some((a, rest)) = spec.split_once(':') {
        let (b, step) = rest.split_once(':').ok_or_else(bad)?;
        let a: u32 = a.trim().parse().map_err(|_| bad())?;
        let b: u32 = b.trim().parse().map_err(|_| bad())?;
        let step: u32 = step.trim().parse().map_err(|_| bad())?;
        if step == 0 || a > b {
            return Err(bad());
        }
        return Ok((a..=b)
            .step_by(step as usize)
            .map(|p| f64::from(p) / 100.0)
            .collect());
    }
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
        .collect()
}
