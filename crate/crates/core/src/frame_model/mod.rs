//! Luma frames, the CTU grid, and per-CTU SA8D weights.
//!
//! A frame is split into 64×64 CTUs in raster order; the right column and
//! bottom row take whatever remains of the picture. Each CTU is weighted by
//! the sum of 8×8 Hadamard costs over the whole 8×8 blocks it contains. Partial
//! 8×8 blocks along the picture edge are not counted, and a CTU that sums to
//! zero is floored to weight 1 so that it still receives a time budget.

mod hadamard;
mod yuv;

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use hadamard::{sa8d_block, Block8, HADAMARD_8};
pub use yuv::{
    frame_bytes_420, load_frame, parse_y4m_header, probe_y4m, write_raw_frame, write_y4m, Y4mHeader,
};

use crate::error::{Error, Result};

pub const CTU_SIZE: usize = 64;

/// Weight assigned to a CTU with no whole 8×8 block or an all-flat interior.
pub const WEIGHT_FLOOR: u64 = 1;

/// 8-bit luma plane, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramePlane {
    width: usize,
    height: usize,
    samples: Vec<u8>,
}

impl FramePlane {
    pub fn new(width: usize, height: usize, samples: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Argument(format!(
                "frame geometry {width}x{height} must be non-zero"
            )));
        }
        if samples.len() != width * height {
            return Err(Error::Argument(format!(
                "{} samples do not match {width}x{height}",
                samples.len()
            )));
        }
        Ok(Self {
            width,
            height,
            samples,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> u8 {
        self.samples[y * self.width + x]
    }

    fn block8(&self, x0: usize, y0: usize) -> Block8 {
        let mut b = [[0i32; 8]; 8];
        for (dy, row) in b.iter_mut().enumerate() {
            let start = (y0 + dy) * self.width + x0;
            for (dst, &s) in row.iter_mut().zip(&self.samples[start..start + 8]) {
                *dst = i32::from(s);
            }
        }
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CtuGeometry {
    pub index: usize,
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl CtuGeometry {
    pub fn area(&self) -> usize {
        self.width * self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CtuWeight {
    pub ctu_index: usize,
    pub weight: u64,
}

/// Raster-order CTU grid covering a `width`×`height` picture.
pub fn partition_ctus(width: usize, height: usize) -> Result<Vec<CtuGeometry>> {
    if width == 0 || height == 0 {
        return Err(Error::Argument(format!(
            "cannot partition a {width}x{height} picture"
        )));
    }
    let cols = width.div_ceil(CTU_SIZE);
    let rows = height.div_ceil(CTU_SIZE);
    let mut out = Vec::with_capacity(cols * rows);
    for row in 0..rows {
        for col in 0..cols {
            let (x, y) = (col * CTU_SIZE, row * CTU_SIZE);
            out.push(CtuGeometry {
                index: out.len(),
                x,
                y,
                width: CTU_SIZE.min(width - x),
                height: CTU_SIZE.min(height - y),
            });
        }
    }
    Ok(out)
}

pub fn ctu_weight(plane: &FramePlane, geom: &CtuGeometry) -> Result<CtuWeight> {
    if geom.width == 0
        || geom.height == 0
        || geom.x + geom.width > plane.width
        || geom.y + geom.height > plane.height
    {
        return Err(Error::Argument(format!(
            "CTU {} at ({}, {}) size {}x{} lies outside the {}x{} plane",
            geom.index, geom.x, geom.y, geom.width, geom.height, plane.width, plane.height
        )));
    }
    let mut sum = 0u64;
    for by in 0..geom.height / 8 {
        for bx in 0..geom.width / 8 {
            sum += sa8d_block(&plane.block8(geom.x + bx * 8, geom.y + by * 8));
        }
    }
    Ok(CtuWeight {
        ctu_index: geom.index,
        weight: sum.max(WEIGHT_FLOOR),
    })
}

/// Weights for every CTU of the plane, in raster order.
pub fn frame_weights(plane: &FramePlane) -> Result<Vec<(CtuGeometry, CtuWeight)>> {
    let grid = partition_ctus(plane.width, plane.height)?;
    grid.into_par_iter()
        .map(|g| ctu_weight(plane, &g).map(|w| (g, w)))
        .collect()
}

/// One row of the weight dump CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightRow {
    pub frame: usize,
    pub ctu_index: usize,
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
    pub weight: u64,
}

impl WeightRow {
    pub fn new(frame: usize, geom: &CtuGeometry, weight: &CtuWeight) -> Self {
        Self {
            frame,
            ctu_index: geom.index,
            x: geom.x,
            y: geom.y,
            width: geom.width,
            height: geom.height,
            weight: weight.weight,
        }
    }
}

pub fn write_weight_csv<W: Write>(out: W, rows: &[WeightRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for row in rows {
        wtr.serialize(row).map_err(csv_error)?;
    }
    wtr.flush().map_err(|e| Error::io("<weights>", e))
}

pub fn read_weight_csv<R: Read>(input: R, origin: &str) -> Result<Vec<WeightRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<WeightRow>().enumerate() {
        let row = rec.map_err(|e| Error::parse(format!("{origin}:{}", i + 2), e.to_string()))?;
        rows.push(row);
    }
    Ok(rows)
}

/// Weights of a single frame taken from a weight dump, checked for raster order.
pub fn weights_for_frame(rows: &[WeightRow], frame: usize) -> Result<Vec<CtuWeight>> {
    let weights: Vec<CtuWeight> = rows
        .iter()
        .filter(|r| r.frame == frame)
        .map(|r| CtuWeight {
            ctu_index: r.ctu_index,
            weight: r.weight,
        })
        .collect();
    if weights.is_empty() {
        return Err(Error::Config(format!("no weights for frame {frame}")));
    }
    if let Some((pos, w)) = weights.iter().enumerate().find(|(i, w)| w.ctu_index != *i) {
        return Err(Error::Format(format!(
            "weights for frame {frame} not in raster order: row {pos} has ctu_index {}",
            w.ctu_index
        )));
    }
    Ok(weights)
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io("<csv>", io),
        other => Error::Format(format!("{other:?}")),
    }
}
