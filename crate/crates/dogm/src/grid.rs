//! Filter grid state and its binary snapshot format.
//!
//! [`GridMap`] is the live filter state in f64; [`SnapshotGrid`] is the
//! persisted f32 per-cell record used by exporters and the evaluation suite.
//! The snapshot layout is fixed: header (magic `DGRD`, version u16,
//! cells_per_side u32, cell_size f64) followed by row-major per-cell records
//! (nine f32 fields + one u8 validity flag), all little-endian.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::evidence::Bba;
use crate::geometry::GridGeometry;

/// Sentinel for a cell whose sorted particle range is empty.
pub const EMPTY_RANGE: u32 = u32::MAX;

pub const SNAPSHOT_MAGIC: [u8; 4] = *b"DGRD";
pub const SNAPSHOT_VERSION: u16 = 1;

/// Full per-cell filter state for one recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCellState {
    /// Sorted particle range [start_idx, end_idx], inclusive; start is
    /// [`EMPTY_RANGE`] when no particle predicted into this cell.
    pub start_idx: u32,
    pub end_idx: u32,
    pub m_occ_pred: f64,
    pub m_free_pred: f64,
    pub m_occ_up: f64,
    pub m_free_up: f64,
    /// Persistent share of the updated occupancy mass.
    pub rho_p: f64,
    /// New-born share of the updated occupancy mass.
    pub rho_b: f64,
    /// Normalization factor of the measurement-associated weight branch.
    pub mu_a: f64,
    /// Normalization factor of the unassociated weight branch.
    pub mu_ua: f64,
    pub mean_vx: f64,
    pub mean_vy: f64,
    pub var_vx: f64,
    pub var_vy: f64,
    pub cov_vxy: f64,
    pub moments_valid: bool,
}

impl Default for GridCellState {
    fn default() -> Self {
        GridCellState {
            start_idx: EMPTY_RANGE,
            end_idx: 0,
            m_occ_pred: 0.0,
            m_free_pred: 0.0,
            m_occ_up: 0.0,
            m_free_up: 0.0,
            rho_p: 0.0,
            rho_b: 0.0,
            mu_a: 0.0,
            mu_ua: 0.0,
            mean_vx: 0.0,
            mean_vy: 0.0,
            var_vx: 0.0,
            var_vy: 0.0,
            cov_vxy: 0.0,
            moments_valid: false,
        }
    }
}

impl GridCellState {
    pub fn has_particles(&self) -> bool {
        self.start_idx != EMPTY_RANGE
    }

    /// Updated occupancy evidence as a mass assignment.
    pub fn updated_bba(&self) -> Bba {
        Bba::new(self.m_occ_up, self.m_free_up).expect("cell masses stay valid")
    }

    /// Pignistic occupancy probability of the updated evidence.
    pub fn occupancy(&self) -> f64 {
        self.m_occ_up + 0.5 * (1.0 - self.m_occ_up - self.m_free_up)
    }
}

/// The filter's grid state: geometry plus one [`GridCellState`] per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    pub geometry: GridGeometry,
    pub cells: Vec<GridCellState>,
}

impl GridMap {
    pub fn new(geometry: GridGeometry) -> Self {
        GridMap {
            geometry,
            cells: vec![GridCellState::default(); geometry.cell_count()],
        }
    }

    /// Shifts cell contents by whole cells: the state that was at
    /// (col, row) moves to (col - shift_cols, row - shift_rows); cells whose
    /// source lies outside the window reset to the default (vacuous) state.
    /// Positive shifts therefore vacate the high-index edges — the edges the
    /// window newly covers when the ego moves in +x/+y.
    pub fn shift_cells(&mut self, shift_cols: i64, shift_rows: i64) {
        if shift_cols == 0 && shift_rows == 0 {
            return;
        }
        let n = i64::from(self.geometry.cells_per_side);
        let mut shifted = vec![GridCellState::default(); self.cells.len()];
        if shift_cols.abs() < n && shift_rows.abs() < n {
            for row in 0..n {
                let src_row = row + shift_rows;
                if !(0..n).contains(&src_row) {
                    continue;
                }
                for col in 0..n {
                    let src_col = col + shift_cols;
                    if !(0..n).contains(&src_col) {
                        continue;
                    }
                    shifted[(row * n + col) as usize] = self.cells[(src_row * n + src_col) as usize];
                }
            }
        }
        self.cells = shifted;
    }

    /// Sum of updated occupancy masses over all cells.
    pub fn total_occupancy_mass(&self) -> f64 {
        self.cells.iter().map(|c| c.m_occ_up).sum()
    }

    /// Converts the live state to the persisted f32 record form.
    pub fn snapshot(&self) -> SnapshotGrid {
        SnapshotGrid {
            cells_per_side: self.geometry.cells_per_side,
            cell_size: self.geometry.cell_size,
            cells: self
                .cells
                .iter()
                .map(|c| CellRecord {
                    m_occ: c.m_occ_up as f32,
                    m_free: c.m_free_up as f32,
                    rho_p: c.rho_p as f32,
                    rho_b: c.rho_b as f32,
                    mean_vx: c.mean_vx as f32,
                    mean_vy: c.mean_vy as f32,
                    var_vx: c.var_vx as f32,
                    var_vy: c.var_vy as f32,
                    cov_vxy: c.cov_vxy as f32,
                    moments_valid: c.moments_valid,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot i/o failed: {0}")]
    Io(#[from] io::Error),
    #[error("bad snapshot magic {0:?}, expected \"DGRD\"")]
    BadMagic([u8; 4]),
    #[error("unsupported snapshot version {0}")]
    BadVersion(u16),
    #[error("snapshot truncated: header promises {expected} cells, payload holds {actual}")]
    Truncated { expected: usize, actual: usize },
}

/// Persisted per-cell record.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CellRecord {
    pub m_occ: f32,
    pub m_free: f32,
    pub rho_p: f32,
    pub rho_b: f32,
    pub mean_vx: f32,
    pub mean_vy: f32,
    pub var_vx: f32,
    pub var_vy: f32,
    pub cov_vxy: f32,
    pub moments_valid: bool,
}

impl CellRecord {
    pub fn occupancy(&self) -> f64 {
        let (o, f) = (f64::from(self.m_occ), f64::from(self.m_free));
        o + 0.5 * (1.0 - o - f)
    }
}

/// A grid snapshot: what one recursion's cell state looks like on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotGrid {
    pub cells_per_side: u32,
    pub cell_size: f64,
    pub cells: Vec<CellRecord>,
}

impl SnapshotGrid {
    pub fn cell_count(&self) -> usize {
        self.cells_per_side as usize * self.cells_per_side as usize
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), SnapshotError> {
        w.write_all(&SNAPSHOT_MAGIC)?;
        w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        w.write_all(&self.cells_per_side.to_le_bytes())?;
        w.write_all(&self.cell_size.to_le_bytes())?;
        let mut record = [0u8; 37];
        for cell in &self.cells {
            let fields = [
                cell.m_occ,
                cell.m_free,
                cell.rho_p,
                cell.rho_b,
                cell.mean_vx,
                cell.mean_vy,
                cell.var_vx,
                cell.var_vy,
                cell.cov_vxy,
            ];
            for (chunk, value) in record.chunks_exact_mut(4).zip(fields) {
                chunk.copy_from_slice(&value.to_le_bytes());
            }
            record[36] = u8::from(cell.moments_valid);
            w.write_all(&record)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, SnapshotError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != SNAPSHOT_MAGIC {
            return Err(SnapshotError::BadMagic(magic));
        }
        let mut buf2 = [0u8; 2];
        r.read_exact(&mut buf2)?;
        let version = u16::from_le_bytes(buf2);
        if version != SNAPSHOT_VERSION {
            return Err(SnapshotError::BadVersion(version));
        }
        let mut buf4 = [0u8; 4];
        r.read_exact(&mut buf4)?;
        let cells_per_side = u32::from_le_bytes(buf4);
        let mut buf8 = [0u8; 8];
        r.read_exact(&mut buf8)?;
        let cell_size = f64::from_le_bytes(buf8);

        let expected = cells_per_side as usize * cells_per_side as usize;
        let mut cells = Vec::with_capacity(expected);
        let mut record = [0u8; 37];
        for _ in 0..expected {
            if let Err(e) = r.read_exact(&mut record) {
                if e.kind() == io::ErrorKind::UnexpectedEof {
                    return Err(SnapshotError::Truncated { expected, actual: cells.len() });
                }
                return Err(e.into());
            }
            let f = |i: usize| {
                f32::from_le_bytes(record[4 * i..4 * i + 4].try_into().expect("4-byte field"))
            };
            cells.push(CellRecord {
                m_occ: f(0),
                m_free: f(1),
                rho_p: f(2),
                rho_b: f(3),
                mean_vx: f(4),
                mean_vy: f(5),
                var_vx: f(6),
                var_vy: f(7),
                cov_vxy: f(8),
                moments_valid: record[36] != 0,
            });
        }
        Ok(SnapshotGrid { cells_per_side, cell_size, cells })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_snapshot() -> SnapshotGrid {
        let geom = GridGeometry::new(0.4, 0.1).unwrap();
        let mut grid = GridMap::new(geom);
        grid.cells[5].m_occ_up = 0.8;
        grid.cells[5].m_free_up = 0.1;
        grid.cells[5].rho_p = 0.75;
        grid.cells[5].rho_b = 0.05;
        grid.cells[5].mean_vx = -2.5;
        grid.cells[5].var_vx = 0.25;
        grid.cells[5].moments_valid = true;
        grid.snapshot()
    }

    #[test]
    fn snapshot_round_trips() {
        let snap = sample_snapshot();
        let mut bytes = Vec::new();
        snap.write_to(&mut bytes).unwrap();
        assert_eq!(bytes.len(), 4 + 2 + 4 + 8 + 37 * snap.cell_count());
        let back = SnapshotGrid::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, snap);
    }

    #[test]
    fn snapshot_rejects_bad_magic_and_truncation() {
        let snap = sample_snapshot();
        let mut bytes = Vec::new();
        snap.write_to(&mut bytes).unwrap();

        let mut corrupted = bytes.clone();
        corrupted[0] = b'X';
        assert!(matches!(
            SnapshotGrid::read_from(corrupted.as_slice()),
            Err(SnapshotError::BadMagic(_))
        ));

        let truncated = &bytes[..bytes.len() - 10];
        assert!(matches!(
            SnapshotGrid::read_from(truncated),
            Err(SnapshotError::Truncated { .. })
        ));
    }

    #[test]
    fn shift_moves_content_and_vacates_sources() {
        let geom = GridGeometry::new(0.4, 0.1).unwrap();
        let mut grid = GridMap::new(geom);
        let idx = |col: u32, row: u32| geom.flat_index(col, row) as usize;
        grid.cells[idx(2, 1)].m_occ_up = 0.9;
        grid.shift_cells(2, 0);
        assert_eq!(grid.cells[idx(0, 1)].m_occ_up, 0.9, "content moved down by the shift");
        assert_eq!(grid.cells[idx(2, 1)].m_occ_up, 0.0, "source cell vacated");
        assert_eq!(grid.cells[idx(3, 1)], GridCellState::default(), "entered edge is vacuous");
    }

    #[test]
    fn occupancy_is_pignistic() {
        let mut cell = GridCellState::default();
        cell.m_occ_up = 0.6;
        cell.m_free_up = 0.2;
        assert!((cell.occupancy() - 0.7).abs() < 1e-15);
    }
}
