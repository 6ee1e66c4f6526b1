//! Frontier presets: QTMT maximum-depth caps with their average time saving.
//!
//! Preset 0 is the unconstrained encoder. Each following preset is faster,
//! so `time_ratio` strictly decreases with the id. The depth triple is only
//! carried along for the decision log.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame_model::csv_error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub id: u8,
    /// `None` means unbounded.
    #[serde(rename = "qt")]
    pub qt_max: Option<u8>,
    #[serde(rename = "bt")]
    pub bt_max: Option<u8>,
    #[serde(rename = "mt")]
    pub mt_max: Option<u8>,
    pub bdbr_pct: f64,
    pub ts_pct: f64,
}

impl Preset {
    /// Expected encode time relative to preset 0.
    pub fn time_ratio(&self) -> f64 {
        1.0 - self.ts_pct / 100.0
    }

    pub fn is_accelerated(&self) -> bool {
        self.id != 0
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = |v: Option<u8>| v.map_or_else(|| "-".to_string(), |v| v.to_string());
        write!(
            f,
            "preset {} (QT {} BT {} MT {}, ratio {:.3})",
            self.id,
            d(self.qt_max),
            d(self.bt_max),
            d(self.mt_max),
            self.time_ratio()
        )
    }
}

const fn preset(id: u8, depths: Option<(u8, u8, u8)>, bdbr_pct: f64, ts_pct: f64) -> Preset {
    let (qt_max, bt_max, mt_max) = match depths {
        Some((q, b, m)) => (Some(q), Some(b), Some(m)),
        None => (None, None, None),
    };
    Preset {
        id,
        qt_max,
        bt_max,
        mt_max,
        bdbr_pct,
        ts_pct,
    }
}

const DEFAULT_PRESETS: [Preset; 6] = [
    preset(0, None, 0.00, 0.0),
    preset(1, Some((4, 4, 3)), 0.03, 1.2),
    preset(2, Some((4, 3, 3)), 0.33, 9.2),
    preset(3, Some((4, 3, 2)), 1.52, 46.3),
    preset(4, Some((4, 2, 1)), 3.70, 63.4),
    preset(5, Some((4, 0, 0)), 9.02, 72.9),
];

/// The six frontier presets found by sweeping QT/BT/MT depth caps.
pub fn default_catalog() -> Catalog {
    Catalog {
        presets: DEFAULT_PRESETS.to_vec(),
    }
}

/// Nearest preset by `|time_ratio − clamp(r_ctu, 0, 1)|`; ties go to the lower id.
pub fn select_preset(presets: &[Preset], r_ctu: f64) -> Result<&Preset> {
    if r_ctu.is_nan() {
        return Err(Error::Argument("target ratio is NaN".into()));
    }
    let target = r_ctu.clamp(0.0, 1.0);
    let mut iter = presets.iter();
    let mut best = iter
        .next()
        .ok_or_else(|| Error::Config("preset catalog is empty".into()))?;
    let mut best_dist = (best.time_ratio() - target).abs();
    for p in iter {
        let dist = (p.time_ratio() - target).abs();
        if dist < best_dist {
            best = p;
            best_dist = dist;
        }
    }
    Ok(best)
}

/// Validated, frontier-ordered preset list.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    presets: Vec<Preset>,
}

impl Catalog {
    pub fn new(presets: Vec<Preset>) -> Result<Self> {
        let first = presets
            .first()
            .ok_or_else(|| Error::Config("preset catalog is empty".into()))?;
        if first.time_ratio() != 1.0 || first.bdbr_pct != 0.0 {
            return Err(Error::Config(
                "preset 0 must have zero time saving and zero BDBR".into(),
            ));
        }
        for (i, p) in presets.iter().enumerate() {
            if usize::from(p.id) != i {
                return Err(Error::Config(format!(
                    "preset ids must be contiguous from 0; position {i} has id {}",
                    p.id
                )));
            }
            if !p.ts_pct.is_finite() || p.ts_pct >= 100.0 {
                return Err(Error::Config(format!(
                    "preset {} time saving {}% leaves no encode time",
                    p.id, p.ts_pct
                )));
            }
        }
        if let Some(w) = presets
            .windows(2)
            .find(|w| w[1].time_ratio() >= w[0].time_ratio())
        {
            return Err(Error::Config(format!(
                "time ratio must strictly decrease: preset {} ({}) then preset {} ({})",
                w[0].id,
                w[0].time_ratio(),
                w[1].id,
                w[1].time_ratio()
            )));
        }
        Ok(Self { presets })
    }

    pub fn presets(&self) -> &[Preset] {
        &self.presets
    }

    pub fn get(&self, id: u8) -> Option<&Preset> {
        self.presets.get(usize::from(id))
    }

    pub fn fastest(&self) -> &Preset {
        self.presets.last().expect("validated catalog is non-empty")
    }

    /// Lowest reachable time ratio.
    pub fn floor_ratio(&self) -> f64 {
        self.fastest().time_ratio()
    }

    pub fn select(&self, r_ctu: f64) -> Result<&Preset> {
        select_preset(&self.presets, r_ctu)
    }

    pub fn read_csv<R: Read>(input: R, origin: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut presets = Vec::new();
        for (i, rec) in rdr.deserialize::<Preset>().enumerate() {
            presets
                .push(rec.map_err(|e| Error::parse(format!("{origin}:{}", i + 2), e.to_string()))?);
        }
        Self::new(presets)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        for p in &self.presets {
            wtr.serialize(p).map_err(csv_error)?;
        }
        wtr.flush().map_err(|e| Error::io("<catalog>", e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file, &path.display().to_string())
    }
}

impl Default for Catalog {
    fn default() -> Self {
        default_catalog()
    }
}
