//! Stage 6: per-cell velocity statistics of the persistent particles.

use rayon::prelude::*;

use crate::grid::GridMap;
use crate::particle::ParticleStore;

use super::scan::{pipeline_scan, CellSums};
use super::{ExecMode, PipelineScratch};

/// A cell needs at least this much persistent mass for its velocity moments
/// to be meaningful; below it the moments are zeroed and flagged invalid.
pub const RHO_P_MIN: f64 = 1e-9;

/// Computes each cell's posterior-weighted velocity mean, variances and
/// covariance from its persistent particles (birth particles do not
/// contribute). Uses the same range-sum machinery as the occupancy stage:
/// five weighted accumulation arrays, scanned, then two lookups per cell.
pub fn compute_cell_moments(
    particles: &ParticleStore,
    grid: &mut GridMap,
    scratch: &mut PipelineScratch,
    mode: ExecMode,
) {
    let n = particles.len();
    for buf in [
        &mut scratch.wvx,
        &mut scratch.wvy,
        &mut scratch.wvx2,
        &mut scratch.wvy2,
        &mut scratch.wvxy,
    ] {
        buf.clear();
        buf.resize(n, 0.0);
    }

    {
        let weight: &[f64] = &particles.weight;
        let vel_x: &[f64] = &particles.vel_x;
        let vel_y: &[f64] = &particles.vel_y;
        let fill = |i: usize, wvx: &mut f64, wvy: &mut f64, wvx2: &mut f64, wvy2: &mut f64, wvxy: &mut f64| {
            let (w, vx, vy) = (weight[i], vel_x[i], vel_y[i]);
            *wvx = w * vx;
            *wvy = w * vy;
            *wvx2 = w * vx * vx;
            *wvy2 = w * vy * vy;
            *wvxy = w * vx * vy;
        };
        if mode.is_parallel() {
            (
                scratch.wvx.par_iter_mut(),
                scratch.wvy.par_iter_mut(),
                scratch.wvx2.par_iter_mut(),
                scratch.wvy2.par_iter_mut(),
                scratch.wvxy.par_iter_mut(),
            )
                .into_par_iter()
                .enumerate()
                .for_each(|(i, (a, b, c, d, e))| fill(i, a, b, c, d, e));
        } else {
            for i in 0..n {
                // Indexing each buffer directly keeps the borrows disjoint.
                let (a, b, c, d, e) = (
                    &mut scratch.wvx[i],
                    &mut scratch.wvy[i],
                    &mut scratch.wvx2[i],
                    &mut scratch.wvy2[i],
                    &mut scratch.wvxy[i],
                );
                fill(i, a, b, c, d, e);
            }
        }
    }

    let cells_sorted: &[u32] = &particles.cell_index;
    let kx = pipeline_scan(&scratch.wvx, cells_sorted, &mut scratch.wvx_accum, mode);
    pipeline_scan(&scratch.wvy, cells_sorted, &mut scratch.wvy_accum, mode);
    pipeline_scan(&scratch.wvx2, cells_sorted, &mut scratch.wvx2_accum, mode);
    pipeline_scan(&scratch.wvy2, cells_sorted, &mut scratch.wvy2_accum, mode);
    pipeline_scan(&scratch.wvxy, cells_sorted, &mut scratch.wvxy_accum, mode);
    let s_vx = CellSums::new(&scratch.wvx_accum, kx);
    let s_vy = CellSums::new(&scratch.wvy_accum, kx);
    let s_vx2 = CellSums::new(&scratch.wvx2_accum, kx);
    let s_vy2 = CellSums::new(&scratch.wvy2_accum, kx);
    let s_vxy = CellSums::new(&scratch.wvxy_accum, kx);

    let moments = |cell: &mut crate::grid::GridCellState| {
        if cell.has_particles() && cell.rho_p >= RHO_P_MIN {
            let (s, e) = (cell.start_idx, cell.end_idx);
            cell.mean_vx = s_vx.range_sum(s, e) / cell.rho_p;
            cell.mean_vy = s_vy.range_sum(s, e) / cell.rho_p;
            cell.var_vx =
                (s_vx2.range_sum(s, e) / cell.rho_p - cell.mean_vx * cell.mean_vx).max(0.0);
            cell.var_vy =
                (s_vy2.range_sum(s, e) / cell.rho_p - cell.mean_vy * cell.mean_vy).max(0.0);
            cell.cov_vxy = s_vxy.range_sum(s, e) / cell.rho_p - cell.mean_vx * cell.mean_vy;
            cell.moments_valid = true;
        } else {
            cell.mean_vx = 0.0;
            cell.mean_vy = 0.0;
            cell.var_vx = 0.0;
            cell.var_vy = 0.0;
            cell.cov_vxy = 0.0;
            cell.moments_valid = false;
        }
    };
    if mode.is_parallel() {
        grid.cells.par_iter_mut().for_each(moments);
    } else {
        grid.cells.iter_mut().for_each(moments);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::sort_and_assign;
    use crate::geometry::GridGeometry;

    fn with_cell(
        entries: &[(f64, f64, f64)], // (weight, vx, vy)
        rho_p: f64,
    ) -> (GridMap, ParticleStore, PipelineScratch) {
        let mut grid = GridMap::new(GridGeometry::new(0.8, 0.2).unwrap());
        let mut p = ParticleStore::new();
        for &(w, vx, vy) in entries {
            p.push((0.3, 0.1), (vx, vy), w, 1);
        }
        let mut scratch = PipelineScratch::new();
        scratch.prepare_cells(grid.cells.len());
        sort_and_assign(&mut p, &mut grid, &mut scratch, ExecMode::Strict);
        grid.cells[1].rho_p = rho_p;
        (grid, p, scratch)
    }

    #[test]
    fn hand_example_mean_and_variance() {
        let (mut grid, mut p, mut scratch) = with_cell(&[(0.2, 1.0, 0.0), (0.2, 3.0, 0.0)], 0.4);
        compute_cell_moments(&mut p, &mut grid, &mut scratch, ExecMode::Strict);
        let cell = &grid.cells[1];
        assert!(cell.moments_valid);
        assert!((cell.mean_vx - 2.0).abs() < 1e-12, "got {}", cell.mean_vx);
        assert!((cell.var_vx - 1.0).abs() < 1e-12, "E[v²]−mean² = 5−4, got {}", cell.var_vx);
        assert_eq!(cell.mean_vy, 0.0);
    }

    #[test]
    fn single_particle_has_zero_spread() {
        let (mut grid, mut p, mut scratch) = with_cell(&[(0.3, 2.0, -1.5)], 0.3);
        compute_cell_moments(&mut p, &mut grid, &mut scratch, ExecMode::Strict);
        let cell = &grid.cells[1];
        assert!((cell.mean_vx - 2.0).abs() < 1e-12);
        assert!(cell.var_vx < 1e-12 && cell.var_vy < 1e-12);
        assert!(cell.cov_vxy.abs() < 1e-12);
    }

    #[test]
    fn identical_components_make_covariance_equal_variance() {
        let (mut grid, mut p, mut scratch) =
            with_cell(&[(0.1, 1.0, 1.0), (0.15, 2.5, 2.5), (0.05, -0.5, -0.5)], 0.3);
        compute_cell_moments(&mut p, &mut grid, &mut scratch, ExecMode::Strict);
        let cell = &grid.cells[1];
        assert_eq!(
            cell.cov_vxy, cell.var_vx,
            "vy == vx runs the covariance through identical arithmetic"
        );
    }

    #[test]
    fn negligible_persistent_mass_invalidates_moments() {
        let (mut grid, mut p, mut scratch) = with_cell(&[(1e-12, 5.0, 5.0)], 1e-12);
        compute_cell_moments(&mut p, &mut grid, &mut scratch, ExecMode::Strict);
        let cell = &grid.cells[1];
        assert!(!cell.moments_valid);
        assert_eq!(cell.mean_vx, 0.0);
        assert_eq!(cell.var_vx, 0.0);
    }

    #[test]
    fn cells_without_particles_are_invalid() {
        let (mut grid, mut p, mut scratch) = with_cell(&[(0.2, 1.0, 0.0)], 0.2);
        compute_cell_moments(&mut p, &mut grid, &mut scratch, ExecMode::Strict);
        assert!(!grid.cells[0].moments_valid);
        assert!(grid.cells[1].moments_valid);
    }
}
