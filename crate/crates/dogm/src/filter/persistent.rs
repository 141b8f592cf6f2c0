//! Stage 4: posterior weights of persistent particles.

use rayon::prelude::*;

use crate::geometry::OUT_OF_GRID;
use crate::grid::GridMap;
use crate::measurement::{doppler_likelihood, MeasurementGrid};
use crate::particle::ParticleStore;

use super::scan::{pipeline_scan, CellSums};
use super::{ExecMode, PipelineScratch};

/// Reweights persistent particles against the measurement. Each particle's
/// unnormalized weight is its velocity likelihood times its predicted
/// weight; per cell the posterior mixes the measurement-associated branch
/// (scaled so the cell's likelihood-weighted mass totals the persistent mass
/// ϱ_p) with the unassociated branch (a pure rescale of predicted weights to
/// ϱ_p), blended by the cell's association probability. Cells where every
/// particle is incompatible with the Doppler measurement fall back to the
/// unassociated branch alone; returns how many cells did.
pub fn update_persistent_particles(
    particles: &mut ParticleStore,
    grid: &mut GridMap,
    meas: &MeasurementGrid,
    scratch: &mut PipelineScratch,
    mode: ExecMode,
) -> usize {
    let n = particles.len();
    scratch.like_weight.clear();
    scratch.like_weight.resize(n, 0.0);

    // Unnormalized measurement-weighted masses. Cells without Doppler carry
    // the constant likelihood 1 (uniform over velocities), so their term is
    // the predicted weight itself.
    let like = |i: usize, out: &mut f64| {
        let cell = particles.cell_index[i];
        if cell == OUT_OF_GRID {
            *out = 0.0;
            return;
        }
        let mcell = &meas.cells[cell as usize];
        let g = if mcell.has_doppler {
            doppler_likelihood(mcell, particles.vel_x[i], particles.vel_y[i])
                .expect("cell has doppler data")
        } else {
            1.0
        };
        *out = g * particles.weight[i];
    };
    if mode.is_parallel() {
        scratch
            .like_weight
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, out)| like(i, out));
    } else {
        for (i, out) in scratch.like_weight.iter_mut().enumerate() {
            like(i, out);
        }
    }

    let kind =
        pipeline_scan(&scratch.like_weight, &particles.cell_index, &mut scratch.like_accum, mode);
    let sums = CellSums::new(&scratch.like_accum, kind);

    // Per-cell normalization factors and the effective association
    // probability (dropped to zero when no particle matches the Doppler
    // measurement, so the cell's mass survives through the other branch).
    let normalize = |cell: &mut crate::grid::GridCellState,
                     mcell: &crate::measurement::MeasurementCell,
                     assoc: &mut f64|
     -> usize {
        cell.mu_a = 0.0;
        cell.mu_ua = 0.0;
        *assoc = 0.0;
        if !cell.has_particles() {
            return 0;
        }
        if cell.m_occ_pred > 0.0 {
            cell.mu_ua = cell.rho_p / cell.m_occ_pred;
        }
        let mut fallback = 0;
        if mcell.p_assoc > 0.0 {
            let sum_like = sums.range_sum(cell.start_idx, cell.end_idx);
            if sum_like > 0.0 {
                cell.mu_a = cell.rho_p / sum_like;
                *assoc = mcell.p_assoc;
            } else {
                fallback = 1;
            }
        }
        fallback
    };
    let zero_likelihood_cells = if mode.is_parallel() {
        (
            grid.cells.par_iter_mut(),
            meas.cells.par_iter(),
            scratch.assoc_prob.par_iter_mut(),
        )
            .into_par_iter()
            .map(|(cell, mcell, assoc)| normalize(cell, mcell, assoc))
            .sum()
    } else {
        let mut count = 0;
        for (i, cell) in grid.cells.iter_mut().enumerate() {
            count += normalize(cell, &meas.cells[i], &mut scratch.assoc_prob[i]);
        }
        count
    };

    // Posterior weights.
    let cells: &[crate::grid::GridCellState] = &grid.cells;
    let assoc_prob: &[f64] = &scratch.assoc_prob;
    let like_weight: &[f64] = &scratch.like_weight;
    let posterior = |i: usize, w: &mut f64, cell: &u32| {
        if *cell == OUT_OF_GRID {
            *w = 0.0;
            return;
        }
        let c = &cells[*cell as usize];
        let p_a = assoc_prob[*cell as usize];
        *w = p_a * c.mu_a * like_weight[i] + (1.0 - p_a) * c.mu_ua * *w;
    };
    if mode.is_parallel() {
        (particles.weight.par_iter_mut(), particles.cell_index.par_iter())
            .into_par_iter()
            .enumerate()
            .for_each(|(i, (w, cell))| posterior(i, w, cell));
    } else {
        for i in 0..n {
            let cell = particles.cell_index[i];
            posterior(i, &mut particles.weight[i], &cell);
        }
    }
    zero_likelihood_cells
}
