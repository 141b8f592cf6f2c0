//! Ego-motion compensation: shift the grid window by whole cells and carry
//! the sub-cell remainder forward.
//!
//! The window is anchored to the ego vehicle. When the ego moves by `delta`,
//! the accumulated displacement (delta plus the residual left from earlier
//! calls) is split into an integer number of cells — applied by scrolling the
//! grid and translating particle positions — and a remainder in `[0,
//! cell_size)` stored back into the geometry. World-fixed content therefore
//! slides towards lower indices as the ego advances, and the freshly exposed
//! leading edge starts out vacuous.

use crate::geometry::OUT_OF_GRID;
use crate::grid::GridMap;
use crate::particle::ParticleStore;

use super::MeasurementError;

/// Integer-cell displacement applied by one [`ego_scroll`] call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScrollShift {
    pub cols: i64,
    pub rows: i64,
    /// Particles that left the window and were marked with the out-of-grid
    /// sentinel.
    pub dropped: usize,
}

/// Compensates ego motion `delta = (dx, dy)` (world meters) by scrolling
/// `grid` and translating `particles`. Returns the whole-cell shift applied.
///
/// Displacements of at least half the grid side are refused — at that point
/// nothing useful survives the scroll and the map should be re-initialized.
pub fn ego_scroll(
    grid: &mut GridMap,
    particles: &mut ParticleStore,
    delta: (f64, f64),
) -> Result<ScrollShift, MeasurementError> {
    let side = grid.geometry.side_length;
    if !(delta.0.abs() < side / 2.0 && delta.1.abs() < side / 2.0) {
        return Err(MeasurementError::DisplacementTooLarge { dx: delta.0, dy: delta.1, side });
    }

    let cs = grid.geometry.cell_size;
    let split = |total: f64| -> (i64, f64) {
        let cells = (total / cs).floor();
        let residual = total - cells * cs;
        debug_assert!((0.0..cs).contains(&residual), "residual {residual} escaped [0, {cs})");
        (cells as i64, residual)
    };
    let (cols, res_x) = split(delta.0 + grid.geometry.ego_residual[0]);
    let (rows, res_y) = split(delta.1 + grid.geometry.ego_residual[1]);
    grid.geometry.ego_residual = [res_x, res_y];
    if cols == 0 && rows == 0 {
        return Ok(ScrollShift::default());
    }

    grid.shift_cells(cols, rows);
    grid.geometry.origin_offset[0] += cols as f64 * cs;
    grid.geometry.origin_offset[1] += rows as f64 * cs;

    // Particle positions are window-local, so the window moving forward
    // translates every particle backwards by the same whole-cell distance.
    let (dx, dy) = (cols as f64 * cs, rows as f64 * cs);
    let mut dropped = 0;
    for i in 0..particles.len() {
        if particles.cell_index[i] == OUT_OF_GRID {
            continue;
        }
        particles.pos_x[i] -= dx;
        particles.pos_y[i] -= dy;
        let cell = grid.geometry.local_to_cell(particles.pos_x[i], particles.pos_y[i]);
        particles.cell_index[i] = cell;
        if cell == OUT_OF_GRID {
            dropped += 1;
        }
    }
    Ok(ScrollShift { cols, rows, dropped })
}
