//! Observation side of the filter: measurement grids, inverse sensor models
//! and ego-motion compensation.
//!
//! A [`MeasurementGrid`] carries, per cell, the observed occupancy evidence
//! and — where a radar detection landed — Doppler likelihood parameters with
//! an association probability. Lidar scans are carved into the grid by exact
//! voxel walking ([`lidar`]), radar detections are overlaid on top
//! ([`radar`]), and ego motion shifts the filter grid window by whole cells
//! ([`scroll`]).

mod lidar;
mod radar;
mod scroll;

pub use lidar::{lidar_to_measurement_grid, Beam, LidarModel, LidarScan};
pub use radar::{doppler_likelihood, radar_overlay, RadarDetection, RadarModel, RadarOverlayStats};
pub use scroll::{ego_scroll, ScrollShift};

use thiserror::Error;

use crate::evidence::Bba;
use crate::geometry::GridGeometry;

#[derive(Debug, Error, PartialEq)]
pub enum MeasurementError {
    #[error("sensor position ({x}, {y}) is outside the grid window")]
    SensorOutsideGrid { x: f64, y: f64 },
    #[error("lidar beams must be sorted by azimuth (beam {index} breaks the order)")]
    UnsortedBeams { index: usize },
    #[error("beam {index} has hit range {range} outside (0, {max_range}]")]
    BadBeamRange { index: usize, range: f64, max_range: f64 },
    #[error("doppler likelihood queried on a cell without doppler data")]
    NoDoppler,
    #[error("measurement grid has {got} cells per side, filter grid has {want}")]
    GridSizeMismatch { got: u32, want: u32 },
    #[error("ego displacement ({dx}, {dy}) exceeds half the grid side {side}; re-initialize instead")]
    DisplacementTooLarge { dx: f64, dy: f64, side: f64 },
}

/// Per-cell observation: occupancy evidence plus optional Doppler data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementCell {
    pub bba: Bba,
    pub has_doppler: bool,
    /// Unit line-of-sight direction (sensor → detection), world frame.
    pub radial_dir: [f64; 2],
    /// Measured radial speed along `radial_dir`, m/s (negative = approaching
    /// the sensor).
    pub radial_speed: f64,
    /// Doppler measurement standard deviation, m/s.
    pub doppler_sd: f64,
    /// Probability that the Doppler measurement belongs to this cell's
    /// object; zero whenever `has_doppler` is false.
    pub p_assoc: f64,
}

impl Default for MeasurementCell {
    fn default() -> Self {
        MeasurementCell {
            bba: Bba::vacuous(),
            has_doppler: false,
            radial_dir: [0.0, 0.0],
            radial_speed: 0.0,
            doppler_sd: 0.0,
            p_assoc: 0.0,
        }
    }
}

/// One observation grid, aligned cell-for-cell with the filter grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementGrid {
    pub cells_per_side: u32,
    pub cells: Vec<MeasurementCell>,
}

impl MeasurementGrid {
    /// All-vacuous grid of the given size.
    pub fn vacuous(cells_per_side: u32) -> Self {
        MeasurementGrid {
            cells_per_side,
            cells: vec![MeasurementCell::default(); cells_per_side as usize * cells_per_side as usize],
        }
    }

    pub fn matching(geom: &GridGeometry) -> Self {
        Self::vacuous(geom.cells_per_side)
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    /// PGM image (binary P5, one byte per cell) of the pignistic occupancy,
    /// rounded half-up onto 0..=255. `comments` lines are embedded verbatim
    /// after the magic, each prefixed with `# `.
    pub fn to_pgm(&self, comments: &[String]) -> Vec<u8> {
        pgm_from_probabilities(
            self.cells_per_side,
            self.cells.iter().map(|c| c.bba.pignistic()),
            comments,
        )
    }

    /// CSV dump: one row per cell with occupancy and Doppler fields.
    /// `header_lines` are emitted first, each prefixed with `# `.
    pub fn to_csv(&self, header_lines: &[String]) -> String {
        let mut out = String::new();
        for line in header_lines {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        out.push_str("cell,m_occ,m_free,has_doppler,radial_dir_x,radial_dir_y,radial_speed,doppler_sd,p_assoc\n");
        for (i, c) in self.cells.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                i,
                fmt_sig9(c.bba.m_occ()),
                fmt_sig9(c.bba.m_free()),
                u8::from(c.has_doppler),
                fmt_sig9(c.radial_dir[0]),
                fmt_sig9(c.radial_dir[1]),
                fmt_sig9(c.radial_speed),
                fmt_sig9(c.doppler_sd),
                fmt_sig9(c.p_assoc),
            ));
        }
        out
    }
}

/// Formats a float with nine significant digits — the serialization rule for
/// every floating-point value this crate writes to text artifacts.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    format!("{x:.8e}")
}

/// Renders probabilities in [0, 1] to a binary PGM, round-half-up to 0..=255.
pub fn pgm_from_probabilities<I: Iterator<Item = f64>>(
    cells_per_side: u32,
    values: I,
    comments: &[String],
) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(b"P5\n");
    for line in comments {
        out.extend_from_slice(b"# ");
        out.extend_from_slice(line.as_bytes());
        out.push(b'\n');
    }
    out.extend_from_slice(format!("{0} {0}\n255\n", cells_per_side).as_bytes());
    out.extend(values.map(|p| ((p * 255.0 + 0.5).floor().clamp(0.0, 255.0)) as u8));
    out
}
