//! Stage 1: constant-velocity prediction with process noise.

use rayon::prelude::*;

use crate::geometry::{GridGeometry, OUT_OF_GRID};
use crate::params::FilterParams;
use crate::particle::ParticleStore;
use crate::rng::{Stage, StreamKey};

use super::ExecMode;

/// Drifts every particle by its velocity for `dt` seconds, adds Gaussian
/// process noise (applied SD `sigma · dt/1s` on both position and velocity),
/// scales weights by the persistence probability and recomputes cell
/// indices. Particles ending outside the window get the out-of-grid
/// sentinel and a zero weight so later stages ignore them. Returns how many
/// fell outside.
///
/// The position update uses the velocity before its own noise is added, so
/// a zero-noise configuration is an exact constant-velocity step.
pub fn predict_particles(
    particles: &mut ParticleStore,
    geom: &GridGeometry,
    params: &FilterParams,
    dt: f64,
    step_index: u64,
    mode: ExecMode,
) -> usize {
    let key = StreamKey::new(params.seed, step_index, Stage::Predict);
    let sd_pos = params.sigma_process_pos * dt;
    let sd_vel = params.sigma_process_vel * dt;
    let p_s = params.persistence_prob;

    let advance = |i: usize,
                   px: &mut f64,
                   py: &mut f64,
                   vx: &mut f64,
                   vy: &mut f64,
                   w: &mut f64,
                   cell: &mut u32|
     -> usize {
        let (n_px, n_py) = key.normal_pair(i as u64, 0);
        let (n_vx, n_vy) = key.normal_pair(i as u64, 2);
        *px += *vx * dt + sd_pos * n_px;
        *py += *vy * dt + sd_pos * n_py;
        *vx += sd_vel * n_vx;
        *vy += sd_vel * n_vy;
        *w *= p_s;
        *cell = geom.local_to_cell(*px, *py);
        if *cell == OUT_OF_GRID {
            *w = 0.0;
            1
        } else {
            0
        }
    };

    if mode.is_parallel() {
        (
            particles.pos_x.par_iter_mut(),
            particles.pos_y.par_iter_mut(),
            particles.vel_x.par_iter_mut(),
            particles.vel_y.par_iter_mut(),
            particles.weight.par_iter_mut(),
            particles.cell_index.par_iter_mut(),
        )
            .into_par_iter()
            .enumerate()
            .map(|(i, (px, py, vx, vy, w, cell))| advance(i, px, py, vx, vy, w, cell))
            .sum()
    } else {
        let mut out = 0;
        for i in 0..particles.pos_x.len() {
            out += advance(
                i,
                &mut particles.pos_x[i],
                &mut particles.pos_y[i],
                &mut particles.vel_x[i],
                &mut particles.vel_y[i],
                &mut particles.weight[i],
                &mut particles.cell_index[i],
            );
        }
        out
    }
}
