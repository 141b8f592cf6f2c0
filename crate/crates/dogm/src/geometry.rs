//! Grid geometry: a square window of equally sized cells anchored to world
//! coordinates, plus the world/cell index mapping.
//!
//! The window tracks the ego vehicle by whole-cell scroll steps; the sub-cell
//! remainder of ego motion is carried in `ego_residual` so no displacement is
//! lost. Particle state inside the filter lives in window-local coordinates
//! (meters from the window's low corner); `origin_offset` maps those to world
//! coordinates.

use thiserror::Error;

/// Flat cell index given to particles outside the grid. `u32::MAX` sorts
/// after every valid index, so invalid particles form one trailing group
/// after the cell sort.
pub const OUT_OF_GRID: u32 = u32::MAX;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("cell size must be positive and finite, got {0}")]
    BadCellSize(f64),
    #[error("side length {side} is not a whole multiple of cell size {cell} (off by {err} cells)")]
    NotWholeCells { side: f64, cell: f64, err: f64 },
    #[error("grid would have {0} cells per side; at least 1 required, at most {max}", max = u32::MAX - 1)]
    BadCellCount(u64),
}

/// Square grid window: `cells_per_side`² cells of edge `cell_size`, covering
/// `side_length` meters, with `origin_offset` the world coordinate of the
/// (col 0, row 0) cell corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub side_length: f64,
    pub cell_size: f64,
    pub cells_per_side: u32,
    pub origin_offset: [f64; 2],
    pub ego_residual: [f64; 2],
}

impl GridGeometry {
    /// Builds a geometry with origin at the world origin. `side_length` must
    /// be a whole number of cells within half a cell; it is normalized to the
    /// exact multiple so that downstream coverage math is consistent.
    pub fn new(side_length: f64, cell_size: f64) -> Result<Self, GeometryError> {
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(GeometryError::BadCellSize(cell_size));
        }
        let cells = side_length / cell_size;
        let rounded = cells.round();
        if !cells.is_finite() || rounded < 1.0 {
            return Err(GeometryError::NotWholeCells {
                side: side_length,
                cell: cell_size,
                err: cells - rounded,
            });
        }
        if rounded >= f64::from(u32::MAX) {
            return Err(GeometryError::BadCellCount(rounded as u64));
        }
        let cells_per_side = rounded as u32;
        Ok(GridGeometry {
            side_length: f64::from(cells_per_side) * cell_size,
            cell_size,
            cells_per_side,
            origin_offset: [0.0, 0.0],
            ego_residual: [0.0, 0.0],
        })
    }

    pub fn with_origin(mut self, x: f64, y: f64) -> Self {
        self.origin_offset = [x, y];
        self
    }

    /// Total cell count.
    pub fn cell_count(&self) -> usize {
        self.cells_per_side as usize * self.cells_per_side as usize
    }

    /// Flat row-major index from column/row.
    pub fn flat_index(&self, col: u32, row: u32) -> u32 {
        row * self.cells_per_side + col
    }

    /// Column/row of a flat index.
    pub fn col_row(&self, index: u32) -> (u32, u32) {
        (index % self.cells_per_side, index / self.cells_per_side)
    }

    /// Maps a world coordinate to a flat cell index, or [`OUT_OF_GRID`].
    /// Cells are lower-inclusive: a point exactly on an interior boundary
    /// belongs to the higher cell.
    pub fn world_to_cell(&self, x: f64, y: f64) -> u32 {
        self.local_to_cell(x - self.origin_offset[0], y - self.origin_offset[1])
    }

    /// Like [`world_to_cell`](Self::world_to_cell) for window-local
    /// coordinates (meters from the low corner).
    pub fn local_to_cell(&self, x: f64, y: f64) -> u32 {
        let n = f64::from(self.cells_per_side);
        let col = (x / self.cell_size).floor();
        let row = (y / self.cell_size).floor();
        if col >= 0.0 && col < n && row >= 0.0 && row < n {
            self.flat_index(col as u32, row as u32)
        } else {
            OUT_OF_GRID
        }
    }

    /// Window-local coordinates of a cell's low corner.
    pub fn cell_corner_local(&self, index: u32) -> (f64, f64) {
        let (col, row) = self.col_row(index);
        (f64::from(col) * self.cell_size, f64::from(row) * self.cell_size)
    }

    /// Window-local coordinates of a cell's center.
    pub fn cell_center_local(&self, index: u32) -> (f64, f64) {
        let (x, y) = self.cell_corner_local(index);
        (x + 0.5 * self.cell_size, y + 0.5 * self.cell_size)
    }

    /// World coordinates of a cell's center.
    pub fn cell_center_world(&self, index: u32) -> (f64, f64) {
        let (x, y) = self.cell_center_local(index);
        (x + self.origin_offset[0], y + self.origin_offset[1])
    }
}
