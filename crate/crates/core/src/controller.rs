//! Per-picture complexity control loop.
//!
//! The picture budget is split across CTUs in proportion to their SA8D
//! weights. Then, for each CTU in raster order:
//!
//! 1. the backend reports PlanarCost and the calibrated model predicts the
//!    unaccelerated time `T̃p`;
//! 2. the pre-allocated budget `Tb` plus the feedback `Tfb` gives the allocated
//!    time `Ta`, and `Ta / T̃p` picks the nearest preset;
//! 3. the backend encodes with that preset and reports the real time `Tr`;
//!    the error is booked and, for unaccelerated CTUs, the calibration
//!    factor is refreshed.
//!
//! The feedback spreads the accumulated error over a window of
//! `max(1, min(ctu_left, window_cap))` CTUs, with the sign that pulls spending
//! back toward the budget.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame_model::{csv_error, CtuWeight};
use crate::metrics::time_error_pct;
use crate::preset_catalog::{Catalog, Preset};
use crate::tc_model::{Calibration, TcModel};

pub const DEFAULT_WINDOW_CAP: usize = 20;

/// Which running error drives the feedback term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorBase {
    /// Σ(Tr − Tb): spending measured against the pre-allocated budgets.
    #[default]
    Budget,
    /// Σ(Tr − Ta): spending measured against the feedback-adjusted allocations.
    Allocated,
}

impl std::str::FromStr for ErrorBase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "budget" => Ok(ErrorBase::Budget),
            "allocated" => Ok(ErrorBase::Allocated),
            other => Err(Error::Config(format!(
                "unknown error base `{other}` (expected budget or allocated)"
            ))),
        }
    }
}

/// Something that can stand in for the encoder, one CTU at a time.
pub trait EncoderBackend {
    /// PlanarCost of the CTU, available after its intra mode search.
    fn planar_cost(&mut self, ctu_index: usize) -> Result<f64>;
    /// Encode the CTU under `preset` and return the luma time in ms.
    fn encode(&mut self, ctu_index: usize, preset: &Preset) -> Result<f64>;
}

impl<B: EncoderBackend + ?Sized> EncoderBackend for &mut B {
    fn planar_cost(&mut self, ctu_index: usize) -> Result<f64> {
        (**self).planar_cost(ctu_index)
    }

    fn encode(&mut self, ctu_index: usize, preset: &Preset) -> Result<f64> {
        (**self).encode(ctu_index, preset)
    }
}

#[derive(Debug, Clone)]
pub struct ControllerConfig {
    pub pic_budget_ms: f64,
    pub window_cap: usize,
    pub catalog: Catalog,
    pub model: TcModel,
    pub error_base: ErrorBase,
}

impl ControllerConfig {
    pub fn new(pic_budget_ms: f64, model: TcModel) -> Result<Self> {
        let cfg = Self {
            pic_budget_ms,
            window_cap: DEFAULT_WINDOW_CAP,
            catalog: Catalog::default(),
            model,
            error_base: ErrorBase::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_window_cap(mut self, window_cap: usize) -> Result<Self> {
        self.window_cap = window_cap;
        self.validate()?;
        Ok(self)
    }

    pub fn with_catalog(mut self, catalog: Catalog) -> Self {
        self.catalog = catalog;
        self
    }

    pub fn with_error_base(mut self, error_base: ErrorBase) -> Self {
        self.error_base = error_base;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pic_budget_ms > 0.0) || !self.pic_budget_ms.is_finite() {
            return Err(Error::Config(format!(
                "picture budget must be positive, got {} ms",
                self.pic_budget_ms
            )));
        }
        if self.window_cap == 0 {
            return Err(Error::Config("window cap must be at least 1".into()));
        }
        Ok(())
    }
}

/// Split `pic_budget_ms` across CTUs in proportion to their weights.
pub fn preallocate(weights: &[CtuWeight], pic_budget_ms: f64) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(Error::Argument("no CTU weights to allocate over".into()));
    }
    if let Some(w) = weights.iter().find(|w| w.weight == 0) {
        return Err(Error::Argument(format!(
            "CTU {} has zero weight",
            w.ctu_index
        )));
    }
    if !(pic_budget_ms > 0.0) {
        return Err(Error::Argument(format!(
            "picture budget must be positive, got {pic_budget_ms}"
        )));
    }
    let total: f64 = weights.iter().map(|w| w.weight as f64).sum();
    Ok(weights
        .iter()
        .map(|w| w.weight as f64 / total * pic_budget_ms)
        .collect())
}

pub fn window_size(ctu_left: usize, window_cap: usize) -> usize {
    ctu_left.min(window_cap).max(1)
}

/// Correction added to the next CTU's budget: `−accumulated_error / n_window`.
///
/// Overspending (positive error) shrinks the next allocation.
pub fn feedback(accumulated_error_ms: f64, n_window: usize) -> f64 {
    debug_assert!(n_window >= 1);
    -accumulated_error_ms / n_window as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CtuDecision {
    pub ctu_index: usize,
    pub planar_cost: f64,
    /// Calibrated prediction of the unaccelerated time.
    pub predicted_ms: f64,
    /// Same prediction without `r_cpu`; feeds the calibration sums.
    pub predicted_base_ms: f64,
    pub budget_ms: f64,
    pub feedback_ms: f64,
    pub allocated_ms: f64,
    pub r_ctu: f64,
    pub preset_id: u8,
    /// The requested ratio was below the fastest preset.
    pub saturated: bool,
}

/// One row of the decision log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtuRecord {
    pub ctu_index: usize,
    pub planar_cost: f64,
    pub predicted_ms: f64,
    pub budget_ms: f64,
    pub feedback_ms: f64,
    pub allocated_ms: f64,
    pub r_ctu: f64,
    pub preset_id: u8,
    pub real_ms: f64,
    pub error_ms: f64,
}

#[derive(Debug, Clone)]
pub struct ControllerState {
    budgets: Vec<f64>,
    accumulated_error_ms: f64,
    overspend_ms: f64,
    coded_count: usize,
    calibration: Calibration,
    model: TcModel,
}

impl ControllerState {
    pub fn new(config: &ControllerConfig, weights: &[CtuWeight]) -> Result<Self> {
        config.validate()?;
        if let Some((i, w)) = weights.iter().enumerate().find(|(i, w)| w.ctu_index != *i) {
            return Err(Error::Argument(format!(
                "weights must be in raster order: position {i} holds CTU {}",
                w.ctu_index
            )));
        }
        Ok(Self {
            budgets: preallocate(weights, config.pic_budget_ms)?,
            accumulated_error_ms: 0.0,
            overspend_ms: 0.0,
            coded_count: 0,
            calibration: Calibration::default(),
            model: config.model,
        })
    }

    pub fn budgets(&self) -> &[f64] {
        &self.budgets
    }

    /// Σ(Tr − Ta) over coded CTUs.
    pub fn accumulated_error_ms(&self) -> f64 {
        self.accumulated_error_ms
    }

    /// Σ(Tr − Tb) over coded CTUs.
    pub fn overspend_ms(&self) -> f64 {
        self.overspend_ms
    }

    pub fn coded_count(&self) -> usize {
        self.coded_count
    }

    pub fn ctu_total(&self) -> usize {
        self.budgets.len()
    }

    pub fn model(&self) -> &TcModel {
        &self.model
    }

    pub fn calibration(&self) -> &Calibration {
        &self.calibration
    }

    pub fn is_done(&self) -> bool {
        self.coded_count == self.budgets.len()
    }

    fn feedback_error(&self, base: ErrorBase) -> f64 {
        match base {
            ErrorBase::Budget => self.overspend_ms,
            ErrorBase::Allocated => self.accumulated_error_ms,
        }
    }

    pub fn decide(
        &self,
        config: &ControllerConfig,
        ctu_index: usize,
        planar_cost: f64,
    ) -> Result<CtuDecision> {
        if ctu_index != self.coded_count || self.is_done() {
            return Err(Error::Sequencing {
                expected: self.coded_count,
                got: ctu_index,
            });
        }
        let predicted_base_ms = self.model.uncalibrated().predict(planar_cost)?;
        let predicted_ms = self.model.predict(planar_cost)?;
        let budget_ms = self.budgets[ctu_index];
        let n_window = window_size(self.ctu_total() - self.coded_count, config.window_cap);
        let feedback_ms = feedback(self.feedback_error(config.error_base), n_window);
        let allocated_ms = budget_ms + feedback_ms;
        let r_ctu = if allocated_ms > 0.0 {
            allocated_ms / predicted_ms
        } else {
            0.0
        };
        let preset = config.catalog.select(r_ctu)?;
        Ok(CtuDecision {
            ctu_index,
            planar_cost,
            predicted_ms,
            predicted_base_ms,
            budget_ms,
            feedback_ms,
            allocated_ms,
            r_ctu,
            preset_id: preset.id,
            saturated: r_ctu < config.catalog.floor_ratio(),
        })
    }

    /// Book the measured time of the CTU that `decision` was made for.
    pub fn commit(
        &mut self,
        config: &ControllerConfig,
        decision: &CtuDecision,
        real_ms: f64,
    ) -> Result<CtuRecord> {
        if decision.ctu_index != self.coded_count || self.is_done() {
            return Err(Error::Sequencing {
                expected: self.coded_count,
                got: decision.ctu_index,
            });
        }
        if !(real_ms >= 0.0) || !real_ms.is_finite() {
            return Err(Error::Measurement(format!(
                "CTU {} reported time {real_ms} ms",
                decision.ctu_index
            )));
        }
        let error_ms = real_ms - decision.allocated_ms;
        self.accumulated_error_ms += error_ms;
        self.overspend_ms += real_ms - decision.budget_ms;
        self.coded_count += 1;
        // a zero reading carries no speed information
        if decision.preset_id == 0 && real_ms > 0.0 {
            self.calibration.record(decision.predicted_base_ms, real_ms);
            self.model = self.calibration.apply(&config.model)?;
        }
        Ok(CtuRecord {
            ctu_index: decision.ctu_index,
            planar_cost: decision.planar_cost,
            predicted_ms: decision.predicted_ms,
            budget_ms: decision.budget_ms,
            feedback_ms: decision.feedback_ms,
            allocated_ms: decision.allocated_ms,
            r_ctu: decision.r_ctu,
            preset_id: decision.preset_id,
            real_ms,
            error_ms,
        })
    }
}

#[derive(Debug, Clone)]
pub struct FrameReport {
    pub pic_budget_ms: f64,
    pub records: Vec<CtuRecord>,
    pub total_real_ms: f64,
    pub accumulated_error_ms: f64,
    pub overspend_ms: f64,
    /// Σ T̃p, the predicted unaccelerated picture time.
    pub predicted_total_ms: f64,
    /// CTUs whose requested ratio was below the fastest preset.
    pub saturated_ctus: usize,
    /// The budget is under what the fastest preset is predicted to need.
    pub saturated: bool,
    pub final_model: TcModel,
    pub calibration: Calibration,
}

impl FrameReport {
    pub fn te_pct(&self) -> f64 {
        time_error_pct(self.total_real_ms, self.pic_budget_ms)
    }

    pub fn preset_histogram(&self) -> Vec<usize> {
        let mut hist = Vec::new();
        for r in &self.records {
            let id = usize::from(r.preset_id);
            if hist.len() <= id {
                hist.resize(id + 1, 0);
            }
            hist[id] += 1;
        }
        hist
    }

    /// Running overspend against the pre-allocated budgets after each CTU.
    pub fn running_errors(&self) -> Vec<RunningError> {
        let mut overspend = 0.0;
        let mut accumulated = 0.0;
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                overspend += r.real_ms - r.budget_ms;
                accumulated += r.error_ms;
                RunningError {
                    ctu_index: r.ctu_index,
                    overspend_ms: overspend,
                    mean_overspend_ms: overspend / (i + 1) as f64,
                    accumulated_error_ms: accumulated,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunningError {
    pub ctu_index: usize,
    pub overspend_ms: f64,
    pub mean_overspend_ms: f64,
    pub accumulated_error_ms: f64,
}

/// Run the full control loop over one picture.
pub fn run_frame<B: EncoderBackend>(
    config: &ControllerConfig,
    weights: &[CtuWeight],
    mut backend: B,
) -> Result<FrameReport> {
    let mut state = ControllerState::new(config, weights)?;
    let mut records = Vec::with_capacity(weights.len());
    let mut saturated_ctus = 0;
    let mut total_real_ms = 0.0;
    let mut predicted_total_ms = 0.0;
    let ctx = |ctu_index: usize| {
        move |e: Error| Error::Backend {
            ctu_index,
            source: Box::new(e),
        }
    };
    for ctu_index in 0..state.ctu_total() {
        let cost = backend.planar_cost(ctu_index).map_err(ctx(ctu_index))?;
        let decision = state.decide(config, ctu_index, cost)?;
        let preset = config
            .catalog
            .get(decision.preset_id)
            .expect("selected preset comes from this catalog");
        let real_ms = backend.encode(ctu_index, preset).map_err(ctx(ctu_index))?;
        let record = state.commit(config, &decision, real_ms)?;
        saturated_ctus += usize::from(decision.saturated);
        total_real_ms += record.real_ms;
        predicted_total_ms += record.predicted_ms;
        records.push(record);
    }
    let saturated = config.pic_budget_ms < config.catalog.floor_ratio() * predicted_total_ms;
    Ok(FrameReport {
        pic_budget_ms: config.pic_budget_ms,
        records,
        total_real_ms,
        accumulated_error_ms: state.accumulated_error_ms,
        overspend_ms: state.overspend_ms,
        predicted_total_ms,
        saturated_ctus,
        saturated,
        final_model: state.model,
        calibration: state.calibration,
    })
}

/// Totals recomputed from a decision log, in log order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogTotals {
    pub accumulated_error_ms: f64,
    pub overspend_ms: f64,
    pub total_real_ms: f64,
}

/// Replay a decision log, checking each row's error against `real − allocated`.
pub fn replay_log(records: &[CtuRecord]) -> Result<LogTotals> {
    let mut totals = LogTotals {
        accumulated_error_ms: 0.0,
        overspend_ms: 0.0,
        total_real_ms: 0.0,
    };
    for (i, r) in records.iter().enumerate() {
        if r.ctu_index != i {
            return Err(Error::Format(format!(
                "decision log row {i} holds CTU {}",
                r.ctu_index
            )));
        }
        let expected = r.real_ms - r.allocated_ms;
        if expected.to_bits() != r.error_ms.to_bits() {
            return Err(Error::Format(format!(
                "CTU {i}: error_ms {} != real_ms − allocated_ms {}",
                r.error_ms, expected
            )));
        }
        totals.accumulated_error_ms += r.error_ms;
        totals.overspend_ms += r.real_ms - r.budget_ms;
        totals.total_real_ms += r.real_ms;
    }
    Ok(totals)
}

pub fn write_decision_log<W: Write>(out: W, records: &[CtuRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for r in records {
        wtr.serialize(r).map_err(csv_error)?;
    }
    wtr.flush().map_err(|e| Error::io("<decision log>", e))
}

pub fn read_decision_log<R: Read>(input: R, origin: &str) -> Result<Vec<CtuRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    rdr.deserialize::<CtuRecord>()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::parse(format!("{origin}:{}", i + 2), e.to_string())))
        .collect()
}

pub fn write_running_errors<W: Write>(out: W, rows: &[RunningError]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for r in rows {
        wtr.serialize(r).map_err(csv_error)?;
    }
    wtr.flush().map_err(|e| Error::io("<running errors>", e))
}
