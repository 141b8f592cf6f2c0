//! Lidar inverse sensor model: carve free space along each beam and deposit
//! occupancy evidence in the hit cell.
//!
//! Beams are walked with an exact voxel traversal (always advance to the next
//! cell boundary with the smaller parametric distance), so shallow-angle
//! beams never skip cells. Multiple beams touching one cell are fused with
//! Dempster's rule in a deterministic two-phase scheme: every beam emits
//! (cell, evidence) pairs, the pairs are sorted by (cell, emission order) and
//! reduced per cell — the result is independent of beam processing order.

use crate::evidence::Bba;
use crate::geometry::{GridGeometry, OUT_OF_GRID};

use super::{MeasurementError, MeasurementGrid};

/// One lidar beam. Azimuth is world-frame radians; `range` is the return
/// distance when `hit`, ignored otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Beam {
    pub azimuth: f64,
    pub range: f64,
    pub hit: bool,
}

/// A full scan from one sensor position (world frame).
#[derive(Debug, Clone, PartialEq)]
pub struct LidarScan {
    pub sensor_x: f64,
    pub sensor_y: f64,
    pub max_range: f64,
    pub beams: Vec<Beam>,
}

impl LidarScan {
    /// Validates beam ordering and hit ranges.
    pub fn validate(&self) -> Result<(), MeasurementError> {
        for (index, pair) in self.beams.windows(2).enumerate() {
            if pair[1].azimuth < pair[0].azimuth {
                return Err(MeasurementError::UnsortedBeams { index: index + 1 });
            }
        }
        for (index, beam) in self.beams.iter().enumerate() {
            if beam.hit && !(beam.range > 0.0 && beam.range <= self.max_range) {
                return Err(MeasurementError::BadBeamRange {
                    index,
                    range: beam.range,
                    max_range: self.max_range,
                });
            }
        }
        Ok(())
    }
}

/// Evidence masses the inverse sensor model assigns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarModel {
    /// Occupancy mass deposited in a hit cell.
    pub occ_mass: f64,
    /// Free mass deposited in each traversed cell before the hit.
    pub free_mass: f64,
}

impl Default for LidarModel {
    fn default() -> Self {
        LidarModel { occ_mass: 0.95, free_mass: 0.7 }
    }
}

/// Builds a measurement grid from one scan.
///
/// Per beam: cells strictly between the sensor's cell and the hit cell
/// receive free evidence; the hit cell receives occupancy evidence; a miss
/// carves free space out to `max_range`. The sensor's own cell receives
/// nothing.
pub fn lidar_to_measurement_grid(
    scan: &LidarScan,
    geom: &GridGeometry,
    model: &LidarModel,
) -> Result<MeasurementGrid, MeasurementError> {
    scan.validate()?;
    let sx = scan.sensor_x - geom.origin_offset[0];
    let sy = scan.sensor_y - geom.origin_offset[1];
    if geom.local_to_cell(sx, sy) == OUT_OF_GRID {
        return Err(MeasurementError::SensorOutsideGrid { x: scan.sensor_x, y: scan.sensor_y });
    }

    // Phase one: every beam emits its cell touches in traversal order.
    let mut touches: Vec<(u32, u32, bool)> = Vec::new(); // (cell, emission order, occupied?)
    for beam in &scan.beams {
        let reach = if beam.hit { beam.range } else { scan.max_range };
        walk_beam(geom, sx, sy, beam.azimuth, reach, beam.hit, |cell, occupied| {
            touches.push((cell, touches.len() as u32, occupied));
        });
    }

    // Phase two: deterministic per-cell reduction in emission order.
    touches.sort_unstable();
    let mut grid = MeasurementGrid::matching(geom);
    let occ_evidence = Bba::new(model.occ_mass, 0.0).expect("model masses valid");
    let free_evidence = Bba::new(0.0, model.free_mass).expect("model masses valid");
    for &(cell, _, occupied) in &touches {
        let evidence = if occupied { occ_evidence } else { free_evidence };
        let slot = &mut grid.cells[cell as usize].bba;
        // Free and occupied lidar evidence never total-conflicts: each
        // operand keeps unknown mass, so K < 1 always.
        *slot = slot.combine(&evidence).expect("lidar evidence cannot fully conflict");
    }
    Ok(grid)
}

/// Exact voxel walk from the sensor towards `azimuth`, for `reach` meters.
/// Calls `emit(cell, occupied)` for every touched cell except the sensor's
/// own: intermediate cells with `occupied = false`, and — when `hit` — the
/// final cell with `occupied = true`. Stops at the grid border.
fn walk_beam(
    geom: &GridGeometry,
    sx: f64,
    sy: f64,
    azimuth: f64,
    reach: f64,
    hit: bool,
    mut emit: impl FnMut(u32, bool),
) {
    let n = i64::from(geom.cells_per_side);
    let cs = geom.cell_size;
    let (dy, dx) = azimuth.sin_cos();
    let ex = sx + dx * reach;
    let ey = sy + dy * reach;

    let mut col = (sx / cs).floor() as i64;
    let mut row = (sy / cs).floor() as i64;
    let end_col = (ex / cs).floor() as i64;
    let end_row = (ey / cs).floor() as i64;

    let step_col: i64 = if dx > 0.0 { 1 } else { -1 };
    let step_row: i64 = if dy > 0.0 { 1 } else { -1 };
    // Parametric distance (in meters along the beam) to the next column/row
    // boundary, and the distance between successive boundaries.
    let mut t_max_col = if dx == 0.0 {
        f64::INFINITY
    } else {
        let next = if dx > 0.0 { (col + 1) as f64 * cs } else { col as f64 * cs };
        (next - sx) / dx
    };
    let mut t_max_row = if dy == 0.0 {
        f64::INFINITY
    } else {
        let next = if dy > 0.0 { (row + 1) as f64 * cs } else { row as f64 * cs };
        (next - sy) / dy
    };
    let t_delta_col = if dx == 0.0 { f64::INFINITY } else { cs / dx.abs() };
    let t_delta_row = if dy == 0.0 { f64::INFINITY } else { cs / dy.abs() };

    loop {
        if col == end_col && row == end_row {
            // Arrived at the cell holding the beam endpoint.
            if hit && (0..n).contains(&col) && (0..n).contains(&row) {
                emit(geom.flat_index(col as u32, row as u32), true);
            }
            return;
        }
        if t_max_col < t_max_row {
            col += step_col;
            t_max_col += t_delta_col;
        } else {
            row += step_row;
            t_max_row += t_delta_row;
        }
        if !(0..n).contains(&col) || !(0..n).contains(&row) {
            return;
        }
        if col == end_col && row == end_row {
            if hit {
                emit(geom.flat_index(col as u32, row as u32), true);
            }
            return;
        }
        emit(geom.flat_index(col as u32, row as u32), false);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_20() -> GridGeometry {
        GridGeometry::new(2.0, 0.1).unwrap()
    }

    fn scan(beams: Vec<Beam>) -> LidarScan {
        LidarScan { sensor_x: 0.05, sensor_y: 0.05, max_range: 1.5, beams }
    }

    #[test]
    fn single_hit_beam_carves_free_space_and_marks_the_hit() {
        let geom = grid_20();
        let s = scan(vec![Beam { azimuth: 0.0, range: 1.0, hit: true }]);
        let grid = lidar_to_measurement_grid(&s, &geom, &LidarModel::default()).unwrap();
        assert_eq!(grid.cells[0].bba, Bba::vacuous(), "sensor's own cell untouched");
        for col in 1..=9u32 {
            let c = &grid.cells[geom.flat_index(col, 0) as usize];
            assert_eq!(c.bba.m_free(), 0.7, "cell {col} between sensor and hit is free");
            assert_eq!(c.bba.m_occ(), 0.0);
        }
        let hit = &grid.cells[geom.flat_index(10, 0) as usize];
        assert_eq!(hit.bba.m_occ(), 0.95, "hit lands 1.0 m from the sensor, cell 10");
        for col in 11..20u32 {
            assert_eq!(
                grid.cells[geom.flat_index(col, 0) as usize].bba,
                Bba::vacuous(),
                "cells beyond the hit stay vacuous"
            );
        }
        assert!(!grid.cells.iter().any(|c| c.has_doppler), "lidar sets no doppler data");
    }

    #[test]
    fn miss_beam_is_all_free_to_max_range() {
        let geom = grid_20();
        let s = scan(vec![Beam { azimuth: 0.0, range: 0.0, hit: false }]);
        let grid = lidar_to_measurement_grid(&s, &geom, &LidarModel::default()).unwrap();
        // Endpoint at 0.05 + 1.5 = 1.55 -> cell 15; free strictly before it,
        // nothing at or past the endpoint cell.
        for col in 1..=14u32 {
            assert_eq!(grid.cells[geom.flat_index(col, 0) as usize].bba.m_free(), 0.7);
        }
        for col in 15..20u32 {
            assert_eq!(grid.cells[geom.flat_index(col, 0) as usize].bba, Bba::vacuous());
        }
        assert!(!grid.cells.iter().any(|c| c.bba.m_occ() > 0.0));
    }

    #[test]
    fn crossing_beams_compound_free_evidence() {
        let geom = grid_20();
        // Two near-parallel beams sharing the early cells of row 0.
        let s = scan(vec![
            Beam { azimuth: 0.0, range: 1.0, hit: true },
            Beam { azimuth: 0.02, range: 1.0, hit: true },
        ]);
        let grid = lidar_to_measurement_grid(&s, &geom, &LidarModel::default()).unwrap();
        let shared = &grid.cells[geom.flat_index(1, 0) as usize];
        assert!(
            (shared.bba.m_free() - 0.91).abs() < 1e-12,
            "two independent 0.7 free masses combine to 0.91, got {}",
            shared.bba.m_free()
        );
    }

    #[test]
    fn beams_leaving_the_grid_stop_at_the_border() {
        let geom = grid_20();
        let s = LidarScan {
            sensor_x: 1.95,
            sensor_y: 0.05,
            max_range: 5.0,
            beams: vec![Beam { azimuth: 0.0, range: 4.0, hit: true }],
        };
        let grid = lidar_to_measurement_grid(&s, &geom, &LidarModel::default()).unwrap();
        assert!(grid.cells.iter().all(|c| c.bba.m_occ() == 0.0), "hit lies outside the window");
    }

    #[test]
    fn sensor_outside_grid_is_an_error() {
        let geom = grid_20();
        let s = LidarScan {
            sensor_x: -1.0,
            sensor_y: 0.0,
            max_range: 1.0,
            beams: vec![],
        };
        assert!(matches!(
            lidar_to_measurement_grid(&s, &geom, &LidarModel::default()),
            Err(MeasurementError::SensorOutsideGrid { .. })
        ));
    }

    #[test]
    fn validation_rejects_unsorted_and_out_of_range_beams() {
        let mut s = scan(vec![
            Beam { azimuth: 0.5, range: 1.0, hit: true },
            Beam { azimuth: 0.1, range: 1.0, hit: true },
        ]);
        assert!(matches!(s.validate(), Err(MeasurementError::UnsortedBeams { index: 1 })));
        s.beams = vec![Beam { azimuth: 0.0, range: 2.0, hit: true }];
        assert!(matches!(s.validate(), Err(MeasurementError::BadBeamRange { .. })));
    }

    #[test]
    fn diagonal_beam_touches_a_contiguous_cell_chain() {
        let geom = grid_20();
        let s = scan(vec![Beam {
            azimuth: std::f64::consts::FRAC_PI_4,
            range: 1.0,
            hit: true,
        }]);
        let grid = lidar_to_measurement_grid(&s, &geom, &LidarModel::default()).unwrap();
        let touched: Vec<u32> = (0..grid.cells.len() as u32)
            .filter(|&i| grid.cells[i as usize].bba != Bba::vacuous())
            .collect();
        // Every touched cell must be edge-adjacent to another touched cell
        // (no diagonal skips).
        for &cell in &touched {
            let (c, r) = geom.col_row(cell);
            let has_neighbor = touched.iter().any(|&other| {
                let (oc, or) = geom.col_row(other);
                other != cell && c.abs_diff(oc) + r.abs_diff(or) == 1
            });
            assert!(has_neighbor, "cell ({c},{r}) is isolated along the diagonal walk");
        }
        let hit_cells = touched
            .iter()
            .filter(|&&i| grid.cells[i as usize].bba.m_occ() > 0.0)
            .count();
        assert_eq!(hit_cells, 1);
    }
}
