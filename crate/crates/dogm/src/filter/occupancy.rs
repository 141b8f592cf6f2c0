//! Stage 3: predicted masses, evidence combination, persistent/new-born
//! mass split.

use rayon::prelude::*;

use crate::evidence::Bba;
use crate::geometry::OUT_OF_GRID;
use crate::grid::{GridCellState, GridMap};
use crate::measurement::{MeasurementCell, MeasurementGrid};
use crate::params::FilterParams;
use crate::particle::ParticleStore;

use super::scan::{pipeline_scan, CellSums};
use super::{ExecMode, PipelineScratch};

/// Diagnostics of the occupancy update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OccupancyTallies {
    /// Cells whose prediction fully contradicted the measurement and were
    /// reset to a vacuous prediction before combining.
    pub total_conflict_cells: usize,
    /// Sum of new-born masses over the grid.
    pub born_mass_total: f64,
}

/// Per cell: the predicted occupancy mass is the range sum of its sorted
/// particle weights (capped at 1, with the cell's weights rescaled to sum to
/// the cap when it triggers); the predicted free mass is the discounted
/// previous free mass, floored against what occupancy leaves available. The
/// prediction is then combined with the measured evidence, and the updated
/// occupancy mass splits into a persistent part and a new-born part
/// controlled by the birth probability.
pub fn update_cell_occupancy(
    particles: &mut ParticleStore,
    grid: &mut GridMap,
    meas: &MeasurementGrid,
    scratch: &mut PipelineScratch,
    params: &FilterParams,
    dt: f64,
    mode: ExecMode,
) -> OccupancyTallies {
    let kind = pipeline_scan(
        &scratch.weight_array,
        &particles.cell_index,
        &mut scratch.weight_accum,
        mode,
    );
    let sums = CellSums::new(&scratch.weight_accum, kind);
    let alpha = params.free_discount(dt);
    let p_b = params.birth_prob;

    let update = |cell: &mut GridCellState,
                  mcell: &MeasurementCell,
                  scale: &mut f64,
                  born: &mut f64|
     -> (usize, bool) {
        let raw = if cell.has_particles() {
            sums.range_sum(cell.start_idx, cell.end_idx)
        } else {
            0.0
        };
        let capped = raw > 1.0;
        cell.m_occ_pred = if capped { 1.0 } else { raw };
        *scale = if capped { 1.0 / raw } else { 1.0 };
        cell.m_free_pred = (alpha * cell.m_free_up).min(1.0 - cell.m_occ_pred);

        let predicted =
            Bba::new(cell.m_occ_pred, cell.m_free_pred).expect("predicted masses stay valid");
        let mut conflicts = 0;
        let combined = predicted.combine(&mcell.bba).unwrap_or_else(|_| {
            // Prediction and measurement are irreconcilable: trust the
            // measurement, discard the prediction.
            conflicts = 1;
            cell.m_occ_pred = 0.0;
            cell.m_free_pred = 0.0;
            mcell.bba
        });
        cell.m_occ_up = combined.m_occ();
        cell.m_free_up = combined.m_free();

        let (rho_b, rho_p) = born_split(cell.m_occ_pred, cell.m_occ_up, p_b);
        cell.rho_b = rho_b;
        cell.rho_p = rho_p;
        *born = rho_b;
        (conflicts, capped)
    };

    let (total_conflict_cells, any_capped) = if mode.is_parallel() {
        (
            grid.cells.par_iter_mut(),
            meas.cells.par_iter(),
            scratch.cell_scale.par_iter_mut(),
            scratch.born_masses.par_iter_mut(),
        )
            .into_par_iter()
            .map(|(cell, mcell, scale, born)| update(cell, mcell, scale, born))
            .reduce(|| (0, false), |a, b| (a.0 + b.0, a.1 || b.1))
    } else {
        let mut acc = (0, false);
        for (i, cell) in grid.cells.iter_mut().enumerate() {
            let r = update(
                cell,
                &meas.cells[i],
                &mut scratch.cell_scale[i],
                &mut scratch.born_masses[i],
            );
            acc = (acc.0 + r.0, acc.1 || r.1);
        }
        acc
    };

    if any_capped {
        apply_weight_caps(particles, &scratch.cell_scale, mode);
    }

    OccupancyTallies {
        total_conflict_cells,
        // Summed sequentially so the figure never depends on reduce order.
        born_mass_total: scratch.born_masses.iter().sum(),
    }
}

/// Splits the updated occupancy mass into (new-born, persistent) parts.
/// The new-born share grows with the birth probability and shrinks as the
/// predicted mass explains more of the update; it never exceeds the updated
/// mass, so the persistent remainder is never negative.
pub(crate) fn born_split(m_occ_pred: f64, m_occ_up: f64, p_b: f64) -> (f64, f64) {
    let denom = m_occ_pred + p_b * (1.0 - m_occ_pred);
    let rho_b = if denom > 0.0 {
        (m_occ_up * p_b * (1.0 - m_occ_pred) / denom).min(m_occ_up)
    } else {
        0.0
    };
    (rho_b, m_occ_up - rho_b)
}

fn apply_weight_caps(particles: &mut ParticleStore, cell_scale: &[f64], mode: ExecMode) {
    let rescale = |w: &mut f64, cell: &u32| {
        if *cell != OUT_OF_GRID {
            let s = cell_scale[*cell as usize];
            if s != 1.0 {
                *w *= s;
            }
        }
    };
    if mode.is_parallel() {
        (particles.weight.par_iter_mut(), particles.cell_index.par_iter())
            .into_par_iter()
            .for_each(|(w, cell)| rescale(w, cell));
    } else {
        for i in 0..particles.weight.len() {
            rescale(&mut particles.weight[i], &particles.cell_index[i]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::sort_and_assign;
    use crate::geometry::GridGeometry;

    fn setup(weights_by_cell: &[(u32, f64)]) -> (GridMap, ParticleStore, PipelineScratch) {
        let mut grid = GridMap::new(GridGeometry::new(0.8, 0.2).unwrap());
        let mut p = ParticleStore::new();
        for &(cell, w) in weights_by_cell {
            let (col, row) = grid.geometry.col_row(cell);
            p.push(
                (0.2 * f64::from(col) + 0.1, 0.2 * f64::from(row) + 0.1),
                (0.0, 0.0),
                w,
                cell,
            );
        }
        let mut scratch = PipelineScratch::new();
        scratch.prepare_cells(grid.cells.len());
        sort_and_assign(&mut p, &mut grid, &mut scratch, ExecMode::Strict);
        (grid, p, scratch)
    }

    fn params() -> FilterParams {
        FilterParams { birth_prob: 0.02, free_discount_tau: 2.0, ..FilterParams::default() }
    }

    #[test]
    fn predicted_mass_is_the_direct_weight_sum() {
        let (mut grid, mut p, mut scratch) = setup(&[(5, 0.1), (5, 0.2), (5, 0.3)]);
        let meas = MeasurementGrid::vacuous(4);
        update_cell_occupancy(
            &mut p,
            &mut grid,
            &meas,
            &mut scratch,
            &params(),
            0.1,
            ExecMode::Strict,
        );
        assert_eq!(
            grid.cells[5].m_occ_pred,
            0.1 + 0.2 + 0.3,
            "strict mode range sum is bitwise the left-to-right sum"
        );
    }

    #[test]
    fn over_unity_mass_caps_at_one_and_rescales_weights() {
        let (mut grid, mut p, mut scratch) = setup(&[(5, 0.9), (5, 0.6)]);
        let meas = MeasurementGrid::vacuous(4);
        update_cell_occupancy(
            &mut p,
            &mut grid,
            &meas,
            &mut scratch,
            &params(),
            0.1,
            ExecMode::Strict,
        );
        assert_eq!(grid.cells[5].m_occ_pred, 1.0);
        assert_eq!(grid.cells[5].m_free_pred, 0.0, "no room left for free mass");
        let total: f64 = p.weight.iter().sum();
        assert!((total - 1.0).abs() < 1e-12, "cell weights rescale to the cap, got {total}");
    }

    #[test]
    fn born_split_matches_hand_computation() {
        let (rho_b, rho_p) = born_split(0.5, 0.8, 0.02);
        assert!((rho_b - 0.008 / 0.51).abs() < 1e-15, "got {rho_b}");
        assert!((rho_b - 0.015686).abs() < 1e-6);
        assert!((rho_p - 0.784314).abs() < 1e-6);
        assert!((rho_b + rho_p - 0.8).abs() < 1e-15, "the split conserves the updated mass");
    }

    #[test]
    fn born_split_edge_cases() {
        let (rho_b, rho_p) = born_split(0.5, 0.8, 0.0);
        assert_eq!((rho_b, rho_p), (0.0, 0.8), "no birth probability, no new-born mass");
        let (rho_b, rho_p) = born_split(0.0, 0.7, 0.02);
        assert!((rho_b - 0.7).abs() < 1e-15, "unpredicted occupancy is all new-born");
        assert!(rho_p.abs() < 1e-15);
        let (rho_b, _) = born_split(0.0, 0.7, 0.0);
        assert_eq!(rho_b, 0.0, "denominator guard when both terms vanish");
    }

    #[test]
    fn free_mass_discounts_and_floors() {
        let (mut grid, mut p, mut scratch) = setup(&[]);
        grid.cells[3].m_free_up = 0.8;
        let meas = MeasurementGrid::vacuous(4);
        let prm = params();
        update_cell_occupancy(&mut p, &mut grid, &meas, &mut scratch, &prm, 0.1, ExecMode::Strict);
        let alpha = prm.free_discount(0.1);
        assert_eq!(grid.cells[3].m_free_pred, alpha * 0.8);
        assert_eq!(
            grid.cells[3].m_free_up,
            alpha * 0.8,
            "vacuous measurement keeps the predicted masses"
        );
    }

    #[test]
    fn mass_conservation_and_bounds_hold_per_cell() {
        let (mut grid, mut p, mut scratch) =
            setup(&[(5, 0.4), (5, 0.3), (9, 0.05), (10, 0.9), (10, 0.8)]);
        let mut meas = MeasurementGrid::vacuous(4);
        meas.cells[5].bba = Bba::new(0.6, 0.1).unwrap();
        meas.cells[9].bba = Bba::new(0.0, 0.9).unwrap();
        let tallies = update_cell_occupancy(
            &mut p,
            &mut grid,
            &meas,
            &mut scratch,
            &params(),
            0.1,
            ExecMode::Strict,
        );
        assert_eq!(tallies.total_conflict_cells, 0);
        let mut born = 0.0;
        for cell in &grid.cells {
            assert!((cell.rho_p + cell.rho_b - cell.m_occ_up).abs() <= 1e-12);
            assert!(cell.m_occ_up + cell.m_free_up <= 1.0 + 1e-12);
            assert!(cell.rho_p >= 0.0 && cell.rho_b >= 0.0);
            born += cell.rho_b;
        }
        assert_eq!(tallies.born_mass_total, born);
    }

    #[test]
    fn total_conflict_resets_to_the_measurement() {
        // A capped cell predicts hard occupancy; a hard-free measurement
        // fully contradicts it.
        let (mut grid, mut p, mut scratch) = setup(&[(5, 2.0)]);
        let mut meas = MeasurementGrid::vacuous(4);
        meas.cells[5].bba = Bba::new(0.0, 1.0).unwrap();
        let tallies = update_cell_occupancy(
            &mut p,
            &mut grid,
            &meas,
            &mut scratch,
            &params(),
            0.1,
            ExecMode::Strict,
        );
        assert_eq!(tallies.total_conflict_cells, 1);
        assert_eq!(grid.cells[5].m_occ_pred, 0.0, "prediction was discarded");
        assert_eq!(grid.cells[5].m_occ_up, 0.0);
        assert_eq!(grid.cells[5].m_free_up, 1.0, "the measurement wins outright");
    }

    #[test]
    fn strict_and_parallel_agree_within_regrouping_error() {
        let weights: Vec<(u32, f64)> = (0..600)
            .map(|i| ((i % 16) as u32, 1e-3 + 1e-5 * f64::from(i % 97)))
            .collect();
        let (mut grid_a, mut pa, mut sa) = setup(&weights);
        let (mut grid_b, mut pb, mut sb) = setup(&weights);
        let meas = MeasurementGrid::vacuous(4);
        update_cell_occupancy(
            &mut pa,
            &mut grid_a,
            &meas,
            &mut sa,
            &params(),
            0.1,
            ExecMode::Strict,
        );
        update_cell_occupancy(
            &mut pb,
            &mut grid_b,
            &meas,
            &mut sb,
            &params(),
            0.1,
            ExecMode::Parallel,
        );
        for (a, b) in grid_a.cells.iter().zip(&grid_b.cells) {
            let tol = 1e-6 * a.m_occ_pred.max(1e-30);
            assert!(
                (a.m_occ_pred - b.m_occ_pred).abs() <= tol,
                "{} vs {}",
                a.m_occ_pred,
                b.m_occ_pred
            );
        }
    }
}
