//! Stage 7: systematic resampling of the joint persistent + birth population.

use rayon::prelude::*;

use crate::geometry::{GridGeometry, OUT_OF_GRID};
use crate::measurement::MeasurementGrid;
use crate::params::FilterParams;
use crate::particle::ParticleStore;
use crate::rng::{Stage, StreamKey};

use super::scan::{blocked_inclusive_scan, sequential_inclusive_scan};
use super::{ExecMode, PipelineScratch};

/// What the resampling stage reports back to the step driver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResampleOutcome {
    /// Total posterior weight of the joint population before normalization.
    pub total_weight: f64,
    /// True when that weight was zero and the population was re-seeded.
    pub empty_world_reset: bool,
}

/// Draws the next persistent population (of size `params.particle_count`)
/// from the concatenation of the updated persistent particles and the newly
/// initialized birth particles, using one systematic (low-variance) sweep.
/// Every survivor gets the same weight `W / count`, preserving the total.
///
/// If the joint population carries no weight at all the world is re-seeded:
/// zero-weight particles are scattered over the measured-occupied cells (or
/// the whole grid when the measurement is vacuous) so the next step has
/// something to update.
pub fn resample(
    particles: &mut ParticleStore,
    geom: &GridGeometry,
    meas: &MeasurementGrid,
    scratch: &mut PipelineScratch,
    params: &FilterParams,
    step_index: u64,
    mode: ExecMode,
) -> ResampleOutcome {
    let n_persistent = particles.len();
    let n_birth = scratch.birth_particles.len();
    let joint_len = n_persistent + n_birth;

    let weights = &mut scratch.resample_weights;
    weights.clear();
    weights.reserve(joint_len);
    weights.extend_from_slice(&particles.weight);
    weights.extend_from_slice(&scratch.birth_particles.weight);

    if mode.is_parallel() {
        blocked_inclusive_scan(weights, &mut scratch.resample_accum);
    } else {
        sequential_inclusive_scan(weights, &mut scratch.resample_accum);
    }
    let total_weight = scratch.resample_accum.last().copied().unwrap_or(0.0);

    let nu = params.particle_count;
    if !(total_weight > 0.0) {
        reseed_empty_world(particles, geom, meas, params, step_index, mode);
        return ResampleOutcome { total_weight: 0.0, empty_world_reset: true };
    }

    // One shared offset in (0, 1] makes the sweep systematic: point i sits at
    // (i + u) * W / nu. Using 1 - uniform() excludes 0 so a pick can never
    // land before the first positive accumulator entry.
    let u = 1.0 - StreamKey::new(params.seed, step_index, Stage::Resample).uniform(0, 0);
    let w_over_nu = total_weight / nu as f64;

    let picks = &mut scratch.picks;
    picks.clear();
    picks.resize(nu, 0);
    let accum: &[f64] = &scratch.resample_accum;
    let pick = |i: usize| -> u32 {
        let point = (i as f64 + u) * w_over_nu;
        // First index whose cumulative weight reaches the sweep point; the
        // clamp guards the i = nu-1 point rounding a hair past the total.
        accum.partition_point(|&a| a < point).min(joint_len - 1) as u32
    };
    if mode.is_parallel() {
        picks.par_iter_mut().enumerate().for_each(|(i, out)| *out = pick(i));
    } else {
        for (i, out) in picks.iter_mut().enumerate() {
            *out = pick(i);
        }
    }

    let next = &mut scratch.buffer;
    next.resize(nu);
    {
        let src_p = &*particles;
        let src_b = &scratch.birth_particles;
        let copy = |pick: u32,
                    px: &mut f64,
                    py: &mut f64,
                    vx: &mut f64,
                    vy: &mut f64,
                    w: &mut f64,
                    cell: &mut u32,
                    assoc: &mut bool| {
            let j = pick as usize;
            let (src, k) = if j < n_persistent { (src_p, j) } else { (src_b, j - n_persistent) };
            *px = src.pos_x[k];
            *py = src.pos_y[k];
            *vx = src.vel_x[k];
            *vy = src.vel_y[k];
            *w = w_over_nu;
            *cell = src.cell_index[k];
            *assoc = src.associated[k];
        };
        if mode.is_parallel() {
            (
                scratch.picks.par_iter(),
                next.pos_x.par_iter_mut(),
                next.pos_y.par_iter_mut(),
                next.vel_x.par_iter_mut(),
                next.vel_y.par_iter_mut(),
                next.weight.par_iter_mut(),
                next.cell_index.par_iter_mut(),
                next.associated.par_iter_mut(),
            )
                .into_par_iter()
                .for_each(|(p, a, b, c, d, e, f, g)| copy(*p, a, b, c, d, e, f, g));
        } else {
            for i in 0..nu {
                let p = scratch.picks[i];
                let (a, b, c, d, e, f, g) = (
                    &mut next.pos_x[i],
                    &mut next.pos_y[i],
                    &mut next.vel_x[i],
                    &mut next.vel_y[i],
                    &mut next.weight[i],
                    &mut next.cell_index[i],
                    &mut next.associated[i],
                );
                copy(p, a, b, c, d, e, f, g);
            }
        }
    }
    std::mem::swap(particles, &mut scratch.buffer);

    ResampleOutcome { total_weight, empty_world_reset: false }
}

/// Replaces the population with `particle_count` zero-weight particles spread
/// over the cells the current measurement marks occupied (round-robin), or
/// uniformly over the whole grid when no cell is marked.
fn reseed_empty_world(
    particles: &mut ParticleStore,
    geom: &GridGeometry,
    meas: &MeasurementGrid,
    params: &FilterParams,
    step_index: u64,
    mode: ExecMode,
) {
    let occupied: Vec<u32> = (0..meas.cell_count() as u32)
        .filter(|&c| meas.cells[c as usize].bba.m_occ() > 0.0)
        .collect();
    let key = StreamKey::new(params.seed, step_index, Stage::EmptyWorldReset);
    let nu = params.particle_count;
    let cs = geom.cell_size;
    let side = geom.side_length;
    let sigma_b = params.sigma_birth_vel;

    particles.resize(nu);
    let occupied_ref: &[u32] = &occupied;
    let seed_one = |i: usize,
                    px: &mut f64,
                    py: &mut f64,
                    vx: &mut f64,
                    vy: &mut f64,
                    w: &mut f64,
                    cell: &mut u32,
                    assoc: &mut bool| {
        let idx = i as u64;
        let (ux, uy) = (key.uniform(idx, 0), key.uniform(idx, 1));
        let (n0, n1) = key.normal_pair(idx, 2);
        let (x, y) = if occupied_ref.is_empty() {
            (ux * side, uy * side)
        } else {
            let c = occupied_ref[i % occupied_ref.len()];
            let (cx, cy) = geom.cell_corner_local(c);
            (cx + ux * cs, cy + uy * cs)
        };
        *px = x;
        *py = y;
        *vx = sigma_b * n0;
        *vy = sigma_b * n1;
        *w = 0.0;
        *cell = geom.local_to_cell(x, y);
        *assoc = false;
        debug_assert!(*cell != OUT_OF_GRID, "reseeded particle must land inside the grid");
    };
    if mode.is_parallel() {
        (
            particles.pos_x.par_iter_mut(),
            particles.pos_y.par_iter_mut(),
            particles.vel_x.par_iter_mut(),
            particles.vel_y.par_iter_mut(),
            particles.weight.par_iter_mut(),
            particles.cell_index.par_iter_mut(),
            particles.associated.par_iter_mut(),
        )
            .into_par_iter()
            .enumerate()
            .for_each(|(i, (a, b, c, d, e, f, g))| seed_one(i, a, b, c, d, e, f, g));
    } else {
        for i in 0..nu {
            let (a, b, c, d, e, f, g) = (
                &mut particles.pos_x[i],
                &mut particles.pos_y[i],
                &mut particles.vel_x[i],
                &mut particles.vel_y[i],
                &mut particles.weight[i],
                &mut particles.cell_index[i],
                &mut particles.associated[i],
            );
            seed_one(i, a, b, c, d, e, f, g);
        }
    }
}
