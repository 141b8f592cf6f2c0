//! Stage 2: sort particles by cell index and record per-cell ranges.

use rayon::prelude::*;

use crate::geometry::OUT_OF_GRID;
use crate::grid::{GridMap, EMPTY_RANGE};
use crate::particle::ParticleStore;

use super::{ExecMode, PipelineScratch};

/// Sorts the store by cell index — stably, because the sort key carries the
/// pre-sort particle index in its low 32 bits — and writes each cell's
/// inclusive particle range into the grid. Out-of-window particles collect
/// at the end of the array and belong to no cell. Also mirrors the sorted
/// predicted weights into `scratch.weight_array` for the occupancy scans.
/// Returns the number of cells holding at least one particle.
pub fn sort_and_assign(
    particles: &mut ParticleStore,
    grid: &mut GridMap,
    scratch: &mut PipelineScratch,
    mode: ExecMode,
) -> usize {
    let n = particles.len();
    debug_assert!(n < u32::MAX as usize, "particle index must fit the low key half");

    scratch.sort_keys.clear();
    scratch.sort_keys.resize(n, 0);
    let fill = |(i, slot): (usize, &mut u64)| {
        *slot = (u64::from(particles.cell_index[i]) << 32) | i as u64;
    };
    if mode.is_parallel() {
        scratch.sort_keys.par_iter_mut().enumerate().for_each(fill);
        scratch.sort_keys.par_sort_unstable();
    } else {
        scratch.sort_keys.iter_mut().enumerate().for_each(fill);
        scratch.sort_keys.sort_unstable();
    }

    gather(particles, &scratch.sort_keys, &mut scratch.buffer, mode);
    std::mem::swap(particles, &mut scratch.buffer);

    // Reset ranges, then walk the sorted array once for group boundaries.
    if mode.is_parallel() {
        grid.cells.par_iter_mut().for_each(|c| {
            c.start_idx = EMPTY_RANGE;
            c.end_idx = 0;
        });
    } else {
        for c in &mut grid.cells {
            c.start_idx = EMPTY_RANGE;
            c.end_idx = 0;
        }
    }
    let mut occupied = 0;
    for i in 0..n {
        let cell = particles.cell_index[i];
        if cell == OUT_OF_GRID {
            break; // the sentinel sorts last; everything after is outside
        }
        let slot = &mut grid.cells[cell as usize];
        if !slot.has_particles() {
            slot.start_idx = i as u32;
            occupied += 1;
        }
        slot.end_idx = i as u32;
    }

    scratch.weight_array.clear();
    scratch.weight_array.extend_from_slice(&particles.weight);
    occupied
}

/// Permutes `src` into `dst` following the sorted keys (low halves are
/// source indices).
fn gather(src: &ParticleStore, keys: &[u64], dst: &mut ParticleStore, mode: ExecMode) {
    let n = keys.len();
    dst.resize(n);
    macro_rules! gather_field {
        ($field:ident) => {
            if mode.is_parallel() {
                dst.$field.par_iter_mut().enumerate().for_each(|(i, slot)| {
                    *slot = src.$field[(keys[i] & 0xFFFF_FFFF) as usize];
                });
            } else {
                for (i, slot) in dst.$field.iter_mut().enumerate() {
                    *slot = src.$field[(keys[i] & 0xFFFF_FFFF) as usize];
                }
            }
        };
    }
    gather_field!(pos_x);
    gather_field!(pos_y);
    gather_field!(vel_x);
    gather_field!(vel_y);
    gather_field!(weight);
    gather_field!(cell_index);
    gather_field!(associated);
}
