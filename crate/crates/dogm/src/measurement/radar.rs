//! Radar overlay: Doppler detections stamped onto an existing measurement
//! grid, plus the per-cell velocity likelihood they induce.

use std::f64::consts::TAU;

use crate::geometry::{GridGeometry, OUT_OF_GRID};

use super::{MeasurementCell, MeasurementError, MeasurementGrid};

/// One radar detection in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadarDetection {
    pub x: f64,
    pub y: f64,
    /// Unit line-of-sight direction, sensor → detection.
    pub radial_dir: [f64; 2],
    /// Measured speed along `radial_dir`; negative means approaching the
    /// sensor.
    pub radial_speed: f64,
    /// Doppler noise standard deviation, m/s. Must be positive.
    pub doppler_sd: f64,
}

/// Evidence and spreading parameters of the radar overlay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadarModel {
    /// Occupancy mass fused into the cell containing a detection.
    pub occ_mass: f64,
    /// Association-probability decay applied to the 8 neighbors of the
    /// detection cell (radar cells are coarser than the grid, so Doppler
    /// data is dilated one ring outwards at reduced confidence).
    pub neighbor_decay: f64,
}

impl Default for RadarModel {
    fn default() -> Self {
        RadarModel { occ_mass: 0.6, neighbor_decay: 0.5 }
    }
}

/// Diagnostics from one overlay pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RadarOverlayStats {
    /// Detections whose containing cell lies inside the grid.
    pub applied: usize,
    /// Detections outside the window, skipped.
    pub skipped_outside: usize,
}

/// Stamps `detections` onto `grid`: the containing cell gets its occupancy
/// fused with the radar evidence and receives the Doppler parameters at
/// association probability `p_assoc`; its 8 in-grid neighbors receive the
/// same Doppler parameters at `p_assoc · neighbor_decay` (no occupancy).
/// When stamps overlap, the higher association probability wins; ties keep
/// the earlier detection, so the result is deterministic in list order.
/// Detections outside the window are skipped and tallied.
pub fn radar_overlay(
    grid: &mut MeasurementGrid,
    geom: &GridGeometry,
    detections: &[RadarDetection],
    p_assoc: f64,
    model: &RadarModel,
) -> Result<RadarOverlayStats, MeasurementError> {
    if grid.cells_per_side != geom.cells_per_side {
        return Err(MeasurementError::GridSizeMismatch {
            got: grid.cells_per_side,
            want: geom.cells_per_side,
        });
    }
    debug_assert!((0.0..=1.0).contains(&p_assoc), "p_assoc must be a probability");

    let radar_evidence =
        crate::evidence::Bba::new(model.occ_mass, 0.0).expect("model masses valid");
    let mut stats = RadarOverlayStats::default();
    for det in detections {
        debug_assert!(det.doppler_sd > 0.0, "doppler SD must be positive");
        let cell = geom.world_to_cell(det.x, det.y);
        if cell == OUT_OF_GRID {
            stats.skipped_outside += 1;
            continue;
        }
        stats.applied += 1;
        let (col, row) = geom.col_row(cell);
        let slot = &mut grid.cells[cell as usize].bba;
        *slot = slot
            .combine(&radar_evidence)
            .expect("pure-occupancy radar evidence cannot fully conflict");
        stamp_doppler(&mut grid.cells[cell as usize], det, p_assoc);
        for d_row in -1i64..=1 {
            for d_col in -1i64..=1 {
                if d_row == 0 && d_col == 0 {
                    continue;
                }
                let n_col = i64::from(col) + d_col;
                let n_row = i64::from(row) + d_row;
                let n = i64::from(geom.cells_per_side);
                if !(0..n).contains(&n_col) || !(0..n).contains(&n_row) {
                    continue;
                }
                let idx = geom.flat_index(n_col as u32, n_row as u32) as usize;
                stamp_doppler(&mut grid.cells[idx], det, p_assoc * model.neighbor_decay);
            }
        }
    }
    Ok(stats)
}

fn stamp_doppler(cell: &mut MeasurementCell, det: &RadarDetection, p_assoc: f64) {
    if cell.has_doppler && cell.p_assoc >= p_assoc {
        return;
    }
    cell.has_doppler = true;
    cell.radial_dir = det.radial_dir;
    cell.radial_speed = det.radial_speed;
    cell.doppler_sd = det.doppler_sd;
    cell.p_assoc = p_assoc;
}

/// Gaussian density of the particle velocity under the cell's Doppler
/// measurement: the residual is the velocity projected on the line of sight
/// minus the measured radial speed.
pub fn doppler_likelihood(cell: &MeasurementCell, vx: f64, vy: f64) -> Result<f64, MeasurementError> {
    if !cell.has_doppler {
        return Err(MeasurementError::NoDoppler);
    }
    let residual = vx * cell.radial_dir[0] + vy * cell.radial_dir[1] - cell.radial_speed;
    let z = residual / cell.doppler_sd;
    Ok((-0.5 * z * z).exp() / (cell.doppler_sd * TAU.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::Bba;

    fn geom() -> GridGeometry {
        GridGeometry::new(1.0, 0.1).unwrap()
    }

    fn detection_at(x: f64, y: f64) -> RadarDetection {
        RadarDetection { x, y, radial_dir: [1.0, 0.0], radial_speed: -5.0, doppler_sd: 0.25 }
    }

    #[test]
    fn detection_stamps_center_cell_and_dilates_neighbors() {
        let g = geom();
        let mut grid = MeasurementGrid::matching(&g);
        let stats =
            radar_overlay(&mut grid, &g, &[detection_at(0.55, 0.55)], 0.9, &RadarModel::default())
                .unwrap();
        assert_eq!(stats, RadarOverlayStats { applied: 1, skipped_outside: 0 });
        let center = &grid.cells[g.flat_index(5, 5) as usize];
        assert!(center.has_doppler);
        assert_eq!(center.p_assoc, 0.9, "center keeps the full association probability");
        assert_eq!(center.radial_speed, -5.0);
        assert_eq!(center.bba.m_occ(), 0.6);
        let neighbor = &grid.cells[g.flat_index(4, 5) as usize];
        assert!(neighbor.has_doppler);
        assert_eq!(neighbor.p_assoc, 0.45, "neighbors get the decayed probability");
        assert_eq!(neighbor.bba, Bba::vacuous(), "occupancy evidence stays in the center cell");
        let far = &grid.cells[g.flat_index(8, 5) as usize];
        assert!(!far.has_doppler, "dilation reaches exactly one ring");
    }

    #[test]
    fn radar_occupancy_fuses_over_lidar_evidence() {
        let g = geom();
        let mut grid = MeasurementGrid::matching(&g);
        grid.cells[g.flat_index(5, 5) as usize].bba = Bba::new(0.95, 0.0).unwrap();
        radar_overlay(&mut grid, &g, &[detection_at(0.55, 0.55)], 0.9, &RadarModel::default())
            .unwrap();
        let fused = grid.cells[g.flat_index(5, 5) as usize].bba;
        assert!(
            (fused.m_occ() - 0.98).abs() < 1e-12,
            "0.95 fused with 0.6 must give 0.98, got {}",
            fused.m_occ()
        );
        assert_eq!(fused.m_free(), 0.0);
    }

    #[test]
    fn empty_detection_list_is_identity() {
        let g = geom();
        let mut grid = MeasurementGrid::matching(&g);
        grid.cells[3].bba = Bba::new(0.2, 0.3).unwrap();
        let before = grid.clone();
        let stats = radar_overlay(&mut grid, &g, &[], 0.9, &RadarModel::default()).unwrap();
        assert_eq!(grid, before, "no detections must leave the grid bitwise unchanged");
        assert_eq!(stats, RadarOverlayStats::default());
    }

    #[test]
    fn outside_detection_is_skipped_and_counted() {
        let g = geom();
        let mut grid = MeasurementGrid::matching(&g);
        let stats =
            radar_overlay(&mut grid, &g, &[detection_at(5.0, 0.5)], 0.9, &RadarModel::default())
                .unwrap();
        assert_eq!(stats, RadarOverlayStats { applied: 0, skipped_outside: 1 });
        assert_eq!(grid, MeasurementGrid::matching(&g));
    }

    #[test]
    fn overlapping_stamps_keep_the_stronger_association() {
        let g = geom();
        let mut grid = MeasurementGrid::matching(&g);
        let a = RadarDetection {
            radial_speed: -1.0,
            ..detection_at(0.55, 0.55)
        };
        let b = RadarDetection {
            radial_speed: -2.0,
            ..detection_at(0.65, 0.55)
        };
        radar_overlay(&mut grid, &g, &[a, b], 0.9, &RadarModel::default()).unwrap();
        // Cell (6,5) holds detection b (p=0.9), which beats a's neighbor
        // stamp (p=0.45); cell (4,5) only sees a's neighbor stamp.
        assert_eq!(grid.cells[g.flat_index(6, 5) as usize].radial_speed, -2.0);
        assert_eq!(grid.cells[g.flat_index(6, 5) as usize].p_assoc, 0.9);
        assert_eq!(grid.cells[g.flat_index(4, 5) as usize].radial_speed, -1.0);
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let g = geom();
        let mut grid = MeasurementGrid::vacuous(7);
        assert_eq!(
            radar_overlay(&mut grid, &g, &[], 0.9, &RadarModel::default()),
            Err(MeasurementError::GridSizeMismatch { got: 7, want: 10 })
        );
    }

    #[test]
    fn likelihood_peaks_when_projection_matches_radial_speed() {
        let cell = MeasurementCell {
            has_doppler: true,
            radial_dir: [1.0, 0.0],
            radial_speed: 5.0,
            doppler_sd: 1.0,
            p_assoc: 1.0,
            ..MeasurementCell::default()
        };
        let peak = doppler_likelihood(&cell, 5.0, 0.0).unwrap();
        assert!(
            (peak - TAU.sqrt().recip()).abs() < 1e-15,
            "zero residual gives the normal mode 1/sqrt(2*pi), got {peak}"
        );
        assert!((peak - 0.39894).abs() < 1e-5);
    }

    #[test]
    fn likelihood_of_orthogonal_velocity_matches_zero_radial_speed() {
        let cell = MeasurementCell {
            has_doppler: true,
            radial_dir: [1.0, 0.0],
            radial_speed: 0.0,
            doppler_sd: 1.0,
            p_assoc: 1.0,
            ..MeasurementCell::default()
        };
        let density = doppler_likelihood(&cell, 0.0, 7.5).unwrap();
        assert_eq!(density, TAU.sqrt().recip(), "orthogonal velocity projects to zero");
    }

    #[test]
    fn likelihood_five_sigma_off_is_tiny() {
        let cell = MeasurementCell {
            has_doppler: true,
            radial_dir: [1.0, 0.0],
            radial_speed: 0.0,
            doppler_sd: 1.0,
            p_assoc: 1.0,
            ..MeasurementCell::default()
        };
        let density = doppler_likelihood(&cell, 5.0, 0.0).unwrap();
        assert!(
            (density - 1.4867e-6).abs() < 1e-10,
            "normal density at five sigma, got {density}"
        );
    }

    #[test]
    fn likelihood_requires_doppler_data() {
        let cell = MeasurementCell::default();
        assert_eq!(doppler_likelihood(&cell, 1.0, 0.0), Err(MeasurementError::NoDoppler));
    }
}
