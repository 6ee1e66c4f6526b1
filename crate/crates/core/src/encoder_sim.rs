//! Encoder stand-ins: a seeded generative simulator and a trace replayer.
//!
//! The simulator draws each CTU's PlanarCost, then returns a luma time of
//! `machine_factor · alpha · (cost/1000)^beta · preset_ratio · exp(N(0, σ²))`.
//! Every random draw comes from its own ChaCha stream keyed by
//! `(seed, frame, purpose, ctu)`, so results do not depend on call order and
//! a CTU's noise is the same whichever preset encodes it.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::controller::EncoderBackend;
use crate::error::{Error, Result};
use crate::frame_model::{csv_error, CtuWeight};
use crate::kv::{KvDoc, Section};
use crate::preset_catalog::{Catalog, Preset};
use crate::tc_model::COST_SCALE;

/// Where simulated PlanarCost values come from.
#[derive(Debug, Clone, PartialEq)]
pub enum CostSource {
    /// `ln(cost) ~ N(ln(median), sigma²)`, clamped to at least 1.
    LogNormal { median: f64, sigma: f64 },
    /// `cost = offset + scale · weight` from real SA8D weights.
    FrameDerived {
        weights: Vec<u64>,
        scale: f64,
        offset: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    pub alpha_true: f64,
    pub beta_true: f64,
    pub machine_factor: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub cost_source: CostSource,
    /// CTU count for synthetic frames. Frame-derived sources use their weight count.
    pub ctus: usize,
    /// Lognormal spread of synthetic SA8D weights around the PlanarCost.
    pub weight_sigma: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            alpha_true: 2.0,
            beta_true: 0.9,
            machine_factor: 1.0,
            noise_sigma: 0.05,
            seed: 1,
            cost_source: CostSource::LogNormal {
                median: 50_000.0,
                sigma: 0.8,
            },
            // 1280x720
            ctus: 240,
            weight_sigma: 0.3,
        }
    }
}

const SIM_KEYS: &[&str] = &[
    "alpha_true",
    "beta_true",
    "machine_factor",
    "noise_sigma",
    "seed",
    "ctus",
    "weight_sigma",
    "cost_mode",
    "cost_median",
    "cost_sigma",
    "cost_scale",
    "cost_offset",
];

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.alpha_true > 0.0 && self.alpha_true.is_finite()) {
            return bad(format!(
                "alpha_true must be positive, got {}",
                self.alpha_true
            ));
        }
        if !self.beta_true.is_finite() {
            return bad(format!("beta_true must be finite, got {}", self.beta_true));
        }
        if !(self.machine_factor > 0.0 && self.machine_factor.is_finite()) {
            return bad(format!(
                "machine_factor must be positive, got {}",
                self.machine_factor
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            ));
        }
        if !(self.weight_sigma >= 0.0 && self.weight_sigma.is_finite()) {
            return bad(format!(
                "weight_sigma must be >= 0, got {}",
                self.weight_sigma
            ));
        }
        match &self.cost_source {
            CostSource::LogNormal { median, sigma } => {
                if !(*median > 0.0 && median.is_finite()) || !(*sigma >= 0.0 && sigma.is_finite()) {
                    return bad(format!("invalid lognormal cost ({median}, {sigma})"));
                }
                if self.ctus == 0 {
                    return bad("ctus must be at least 1".into());
                }
            }
            CostSource::FrameDerived {
                weights,
                scale,
                offset,
            } => {
                if weights.is_empty() {
                    return bad("frame-derived cost source has no weights".into());
                }
                if !(*scale >= 0.0) || !(*offset > 0.0) {
                    return bad(format!(
                        "frame-derived costs need scale >= 0 and offset > 0, got {scale}, {offset}"
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn ctu_count(&self) -> usize {
        match &self.cost_source {
            CostSource::LogNormal { .. } => self.ctus,
            CostSource::FrameDerived { weights, .. } => weights.len(),
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    /// Read the `[sim]` section. Missing keys keep their defaults.
    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let sec = doc.section("sim");
        if let Some(k) = sec.keys().find(|k| !SIM_KEYS.contains(k)) {
            return Err(Error::Config(format!("unknown key `{k}` in [sim]")));
        }
        let d = Self::default();
        let (dm, ds) = match d.cost_source {
            CostSource::LogNormal { median, sigma } => (median, sigma),
            CostSource::FrameDerived { .. } => unreachable!(),
        };
        let get = |s: &Section, k: &str, v: f64| s.get::<f64>(k).map(|o| o.unwrap_or(v));
        let cost_source = match sec.raw("cost_mode").unwrap_or("lognormal") {
            "lognormal" => CostSource::LogNormal {
                median: get(&sec, "cost_median", dm)?,
                sigma: get(&sec, "cost_sigma", ds)?,
            },
            // weights are attached later from a picture
            "frame" => CostSource::FrameDerived {
                weights: Vec::new(),
                scale: get(&sec, "cost_scale", 0.05)?,
                offset: get(&sec, "cost_offset", 1000.0)?,
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown cost_mode `{other}` (expected lognormal or frame)"
                )))
            }
        };
        Ok(Self {
            alpha_true: get(&sec, "alpha_true", d.alpha_true)?,
            beta_true: get(&sec, "beta_true", d.beta_true)?,
            machine_factor: get(&sec, "machine_factor", d.machine_factor)?,
            noise_sigma: get(&sec, "noise_sigma", d.noise_sigma)?,
            seed: sec.get("seed")?.unwrap_or(d.seed),
            ctus: sec.get("ctus")?.unwrap_or(d.ctus),
            weight_sigma: get(&sec, "weight_sigma", d.weight_sigma)?,
            cost_source,
        })
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::default();
        let s = "sim";
        doc.set(s, "alpha_true", self.alpha_true);
        doc.set(s, "beta_true", self.beta_true);
        doc.set(s, "machine_factor", self.machine_factor);
        doc.set(s, "noise_sigma", self.noise_sigma);
        doc.set(s, "seed", self.seed);
        doc.set(s, "ctus", self.ctus);
        doc.set(s, "weight_sigma", self.weight_sigma);
        match &self.cost_source {
            CostSource::LogNormal { median, sigma } => {
                doc.set(s, "cost_mode", "lognormal");
                doc.set(s, "cost_median", median);
                doc.set(s, "cost_sigma", sigma);
            }
            CostSource::FrameDerived { scale, offset, .. } => {
                doc.set(s, "cost_mode", "frame");
                doc.set(s, "cost_scale", scale);
                doc.set(s, "cost_offset", offset);
            }
        }
        doc
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_kv(&KvDoc::read(path)?)
    }
}

#[derive(Debug, Clone, Copy)]
#[repr(u64)]
enum Stream {
    Cost = 1,
    Time = 2,
    Weight = 3,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_rng(seed: u64, frame: usize, stream: Stream, ctu_index: usize) -> ChaCha8Rng {
    let mut key = splitmix64(seed);
    for part in [frame as u64, stream as u64, ctu_index as u64] {
        key = splitmix64(key ^ part);
    }
    ChaCha8Rng::seed_from_u64(key)
}

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").sample(rng)
}

/// PlanarCost of one CTU in frame 0.
pub fn sim_planar_cost(params: &SimParams, ctu_index: usize) -> f64 {
    sim_planar_cost_in_frame(params, 0, ctu_index)
}

pub fn sim_planar_cost_in_frame(params: &SimParams, frame: usize, ctu_index: usize) -> f64 {
    match &params.cost_source {
        CostSource::LogNormal { median, sigma } => {
            let mut rng = stream_rng(params.seed, frame, Stream::Cost, ctu_index);
            let cost = if *sigma == 0.0 {
                *median
            } else {
                LogNormal::new(median.ln(), *sigma)
                    .expect("validated lognormal")
                    .sample(&mut rng)
            };
            cost.max(1.0)
        }
        CostSource::FrameDerived {
            weights,
            scale,
            offset,
        } => offset + scale * weights[ctu_index] as f64,
    }
}

/// Luma time without the noise term.
pub fn noiseless_time(params: &SimParams, planar_cost: f64, preset: &Preset) -> f64 {
    params.machine_factor
        * params.alpha_true
        * (planar_cost / COST_SCALE).powf(params.beta_true)
        * preset.time_ratio()
}

/// Luma time with multiplicative lognormal noise drawn from `rng`.
pub fn sim_encode_time<R: Rng>(
    params: &SimParams,
    planar_cost: f64,
    preset: &Preset,
    rng: &mut R,
) -> f64 {
    let noise = if params.noise_sigma > 0.0 {
        (params.noise_sigma * standard_normal(rng)).exp()
    } else {
        1.0
    };
    noiseless_time(params, planar_cost, preset) * noise
}

/// One simulated picture.
#[derive(Debug, Clone)]
pub struct SimBackend {
    params: SimParams,
    frame: usize,
    costs: Vec<f64>,
}

impl SimBackend {
    pub fn new(params: SimParams) -> Result<Self> {
        Self::for_frame(params, 0)
    }

    pub fn for_frame(params: SimParams, frame: usize) -> Result<Self> {
        params.validate()?;
        let costs = (0..params.ctu_count())
            .map(|i| sim_planar_cost_in_frame(&params, frame, i))
            .collect();
        Ok(Self {
            params,
            frame,
            costs,
        })
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn ctu_count(&self) -> usize {
        self.costs.len()
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    fn time_for(&self, ctu_index: usize, preset: &Preset) -> f64 {
        let mut rng = stream_rng(self.params.seed, self.frame, Stream::Time, ctu_index);
        sim_encode_time(&self.params, self.costs[ctu_index], preset, &mut rng)
    }

    /// Realized time of every CTU at preset 0, the reference for ratios and TS.
    pub fn baseline_times(&self, catalog: &Catalog) -> Vec<f64> {
        let p0 = &catalog.presets()[0];
        (0..self.ctu_count())
            .map(|i| self.time_for(i, p0))
            .collect()
    }

    pub fn baseline_total_ms(&self, catalog: &Catalog) -> f64 {
        self.baseline_times(catalog).iter().sum()
    }

    /// SA8D weights for the picture.
    ///
    /// Frame-derived sources return their own weights. Synthetic frames get
    /// `cost · exp(N(0, weight_sigma²))`, a noisy proxy for SA8D.
    pub fn weights(&self) -> Vec<CtuWeight> {
        match &self.params.cost_source {
            CostSource::FrameDerived { weights, .. } => weights
                .iter()
                .enumerate()
                .map(|(i, &w)| CtuWeight {
                    ctu_index: i,
                    weight: w.max(1),
                })
                .collect(),
            CostSource::LogNormal { .. } => self
                .costs
                .iter()
                .enumerate()
                .map(|(i, &c)| {
                    let mut rng = stream_rng(self.params.seed, self.frame, Stream::Weight, i);
                    let jitter = (self.params.weight_sigma * standard_normal(&mut rng)).exp();
                    CtuWeight {
                        ctu_index: i,
                        weight: ((c * jitter).round() as u64).max(1),
                    }
                })
                .collect(),
        }
    }

    /// Trace rows for this picture with every CTU encoded at `preset`.
    pub fn trace_rows(&self, preset: &Preset) -> Vec<TraceRow> {
        (0..self.ctu_count())
            .map(|i| TraceRow {
                frame: self.frame,
                ctu_index: i,
                planar_cost: self.costs[i],
                luma_time_ms: self.time_for(i, preset),
                preset_id: preset.id,
            })
            .collect()
    }
}

impl EncoderBackend for SimBackend {
    fn planar_cost(&mut self, ctu_index: usize) -> Result<f64> {
        self.costs
            .get(ctu_index)
            .copied()
            .ok_or_else(|| Error::Argument(format!("no CTU {ctu_index} in simulated frame")))
    }

    fn encode(&mut self, ctu_index: usize, preset: &Preset) -> Result<f64> {
        if ctu_index >= self.costs.len() {
            return Err(Error::Argument(format!(
                "no CTU {ctu_index} in simulated frame"
            )));
        }
        Ok(self.time_for(ctu_index, preset))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub frame: usize,
    pub ctu_index: usize,
    pub planar_cost: f64,
    pub luma_time_ms: f64,
    pub preset_id: u8,
}

/// Validating row stream over a trace CSV.
pub struct TraceStream<R: Read> {
    rows: csv::DeserializeRecordsIntoIter<R, TraceRow>,
    origin: String,
    line: usize,
    last: Option<(usize, usize)>,
    failed: bool,
}

impl<R: Read> TraceStream<R> {
    pub fn new(input: R, origin: &str) -> Self {
        Self {
            rows: csv::Reader::from_reader(input).into_deserialize(),
            origin: origin.to_string(),
            line: 1,
            last: None,
            failed: false,
        }
    }

    fn check(&mut self, row: TraceRow) -> Result<TraceRow> {
        let loc = format!("{}:{}", self.origin, self.line);
        if !(row.planar_cost > 0.0 && row.planar_cost.is_finite()) {
            return Err(Error::parse(
                loc,
                format!("planar_cost {} must be positive", row.planar_cost),
            ));
        }
        if !(row.luma_time_ms > 0.0 && row.luma_time_ms.is_finite()) {
            return Err(Error::parse(
                loc,
                format!("luma_time_ms {} must be positive", row.luma_time_ms),
            ));
        }
        let key = (row.frame, row.ctu_index);
        if let Some(prev) = self.last {
            if key <= prev {
                return Err(Error::Format(format!(
                    "{loc}: row (frame {}, ctu {}) does not follow (frame {}, ctu {})",
                    key.0, key.1, prev.0, prev.1
                )));
            }
        }
        self.last = Some(key);
        Ok(row)
    }
}

impl<R: Read> Iterator for TraceStream<R> {
    type Item = Result<TraceRow>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let item = self.rows.next()?;
        self.line += 1;
        let out = match item {
            Ok(row) => self.check(row),
            Err(e) => Err(Error::parse(
                format!("{}:{}", self.origin, self.line),
                e.to_string(),
            )),
        };
        self.failed = out.is_err();
        Some(out)
    }
}

pub fn replay_trace(path: &Path) -> Result<TraceStream<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(TraceStream::new(file, &path.display().to_string()))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    replay_trace(path)?.collect()
}

pub fn write_trace<W: Write>(out: W, rows: &[TraceRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for r in rows {
        wtr.serialize(r).map_err(csv_error)?;
    }
    wtr.flush().map_err(|e| Error::io("<trace>", e))
}

/// Replays one recorded picture.
///
/// Recorded times are rescaled from the preset they were captured with to
/// the preset requested, using the catalog ratios.
#[derive(Debug, Clone)]
pub struct TraceBackend {
    rows: Vec<TraceRow>,
    catalog: Catalog,
}

impl TraceBackend {
    pub fn new(rows: &[TraceRow], frame: usize, catalog: Catalog) -> Result<Self> {
        let rows: Vec<TraceRow> = rows.iter().filter(|r| r.frame == frame).copied().collect();
        if rows.is_empty() {
            return Err(Error::Config(format!(
                "trace has no rows for frame {frame}"
            )));
        }
        for (i, r) in rows.iter().enumerate() {
            if r.ctu_index != i {
                return Err(Error::Format(format!(
                    "trace frame {frame} skips CTU {i} (found {})",
                    r.ctu_index
                )));
            }
            if catalog.get(r.preset_id).is_none() {
                return Err(Error::Config(format!(
                    "trace CTU {i} uses preset {} missing from the catalog",
                    r.preset_id
                )));
            }
        }
        Ok(Self { rows, catalog })
    }

    pub fn ctu_count(&self) -> usize {
        self.rows.len()
    }

    fn base_time(&self, row: &TraceRow) -> f64 {
        let recorded = self.catalog.get(row.preset_id).expect("checked in new");
        row.luma_time_ms / recorded.time_ratio()
    }

    /// Recorded times normalized to preset 0.
    pub fn baseline_total_ms(&self) -> f64 {
        self.rows.iter().map(|r| self.base_time(r)).sum()
    }

    /// PlanarCost stands in for SA8D when no picture is available.
    pub fn cost_weights(&self) -> Vec<CtuWeight> {
        self.rows
            .iter()
            .map(|r| CtuWeight {
                ctu_index: r.ctu_index,
                weight: (r.planar_cost.round() as u64).max(1),
            })
            .collect()
    }
}

impl EncoderBackend for TraceBackend {
    fn planar_cost(&mut self, ctu_index: usize) -> Result<f64> {
        self.rows
            .get(ctu_index)
            .map(|r| r.planar_cost)
            .ok_or_else(|| Error::Argument(format!("no CTU {ctu_index} in trace frame")))
    }

    fn encode(&mut self, ctu_index: usize, preset: &Preset) -> Result<f64> {
        let row = self
            .rows
            .get(ctu_index)
            .ok_or_else(|| Error::Argument(format!("no CTU {ctu_index} in trace frame")))?;
        Ok(self.base_time(row) * preset.time_ratio())
    }
}
