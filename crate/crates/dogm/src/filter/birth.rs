//! Stage 5: creation of new particles in measured-occupied cells.

use rayon::prelude::*;

use crate::grid::GridMap;
use crate::measurement::MeasurementGrid;
use crate::params::FilterParams;
use crate::rng::{Stage, StreamKey};

use super::{ExecMode, PipelineScratch};

/// Diagnostics of the birth stage.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BirthTallies {
    /// Cells granted at least one slot.
    pub birth_cells: usize,
    /// Cells whose new-born mass got no particle at all this step.
    pub unrepresented_cells: usize,
    /// Total new-born mass left without particles (masked-out cells,
    /// zero-slot cells, and zero-slot association branches).
    pub unrepresented_mass: f64,
}

/// Distributes the configured number of birth slots over cells that both
/// carry new-born mass and are reported occupied by the measurement, in
/// proportion to that mass (floor of the proportional share, leftovers to
/// the largest remainders, ties to the lower cell index — so exactly the
/// configured count is created whenever any cell qualifies).
///
/// Within a cell, a round-half-up share of the slots is "associated":
/// velocities drawn around the measured radial speed along the measured
/// direction (tangential component from the birth prior). The rest draw
/// both velocity components from the zero-mean birth prior. Positions are
/// uniform inside the cell. Associated slots carry weight `p_assoc·ϱ_b/ν_A`
/// each, unassociated ones `(1−p_assoc)·ϱ_b/ν_Ā`, so a cell's particles sum
/// to its new-born mass (a branch with positive share but zero slots loses
/// its mass; it is tallied).
pub fn initialize_new_particles(
    grid: &GridMap,
    meas: &MeasurementGrid,
    scratch: &mut PipelineScratch,
    params: &FilterParams,
    step_index: u64,
    mode: ExecMode,
) -> BirthTallies {
    let cell_count = grid.cells.len();
    let nb = params.birth_particle_count;
    let mut tallies = BirthTallies::default();

    // Mask to measured-occupied cells and account for what the mask drops.
    let mut total_mass = 0.0;
    for c in 0..cell_count {
        let born = scratch.born_masses[c];
        scratch.birth_slots[c] = 0;
        if born <= 0.0 {
            continue;
        }
        if meas.cells[c].bba.m_occ() > 0.0 && nb > 0 {
            total_mass += born;
        } else {
            tallies.unrepresented_cells += 1;
            tallies.unrepresented_mass += born;
        }
    }
    if total_mass <= 0.0 {
        scratch.birth_particles.clear();
        return tallies;
    }

    // Exact slot allocation by largest remainder.
    let nb_f = nb as f64;
    let mut assigned = 0u32;
    let mut remainders: Vec<(f64, u32)> = Vec::new();
    for c in 0..cell_count {
        if scratch.born_masses[c] <= 0.0 || meas.cells[c].bba.m_occ() <= 0.0 {
            continue;
        }
        let ideal = nb_f * scratch.born_masses[c] / total_mass;
        let base = ideal.floor();
        scratch.birth_slots[c] = base as u32;
        assigned += base as u32;
        remainders.push((ideal - base, c as u32));
    }
    remainders.sort_unstable_by(|a, b| {
        b.0.partial_cmp(&a.0).expect("finite remainders").then(a.1.cmp(&b.1))
    });
    let mut leftover = (nb as u32).saturating_sub(assigned);
    let mut k = 0;
    while leftover > 0 {
        scratch.birth_slots[remainders[k % remainders.len()].1 as usize] += 1;
        leftover -= 1;
        k += 1;
    }

    // Slot offsets, zero-slot bookkeeping.
    let mut offset = 0u32;
    for c in 0..cell_count {
        scratch.particle_orders_accum[c] = offset;
        let slots = scratch.birth_slots[c];
        if slots > 0 {
            tallies.birth_cells += 1;
            offset += slots;
        } else if scratch.born_masses[c] > 0.0 && meas.cells[c].bba.m_occ() > 0.0 {
            tallies.unrepresented_cells += 1;
            tallies.unrepresented_mass += scratch.born_masses[c];
        }
    }
    debug_assert_eq!(offset as usize, nb, "largest remainder must assign every slot");

    // Slot → cell map, then fill the store slot-parallel.
    scratch.picks.clear();
    scratch.picks.resize(nb, 0);
    for c in 0..cell_count {
        let start = scratch.particle_orders_accum[c] as usize;
        for s in 0..scratch.birth_slots[c] as usize {
            scratch.picks[start + s] = c as u32;
        }
    }

    let key = StreamKey::new(params.seed, step_index, Stage::Birth);
    let geom = &grid.geometry;
    let cs = geom.cell_size;
    let picks: &[u32] = &scratch.picks;
    let birth_slots: &[u32] = &scratch.birth_slots;
    let orders: &[u32] = &scratch.particle_orders_accum;
    let born_masses: &[f64] = &scratch.born_masses;
    let sigma_b = params.sigma_birth_vel;

    // Branch shares and weights, recomputed per slot from its cell.
    let fill = |s: usize,
                px: &mut f64,
                py: &mut f64,
                vx: &mut f64,
                vy: &mut f64,
                w: &mut f64,
                cell: &mut u32,
                assoc: &mut bool| {
        let c = picks[s];
        let slot_in_cell = s as u32 - orders[c as usize];
        let nu_cell = birth_slots[c as usize];
        let mcell = &meas.cells[c as usize];
        let p_a = mcell.p_assoc;
        let nu_a = associated_share(p_a, nu_cell);
        let rho_b = born_masses[c as usize];

        let (corner_x, corner_y) = geom.cell_corner_local(c);
        let s64 = s as u64;
        *px = corner_x + key.uniform(s64, 0) * cs;
        *py = corner_y + key.uniform(s64, 1) * cs;
        let (n0, n1) = key.normal_pair(s64, 2);
        *assoc = slot_in_cell < nu_a;
        if *assoc {
            let speed = mcell.radial_speed + mcell.doppler_sd * n0;
            let tangential = sigma_b * n1;
            let [dx, dy] = mcell.radial_dir;
            *vx = dx * speed - dy * tangential;
            *vy = dy * speed + dx * tangential;
            *w = p_a * rho_b / f64::from(nu_a);
        } else {
            *vx = sigma_b * n0;
            *vy = sigma_b * n1;
            *w = (1.0 - p_a) * rho_b / f64::from(nu_cell - nu_a);
        }
        *cell = c;
    };

    let birth = &mut scratch.birth_particles;
    birth.resize(nb);
    if mode.is_parallel() {
        (
            birth.pos_x.par_iter_mut(),
            birth.pos_y.par_iter_mut(),
            birth.vel_x.par_iter_mut(),
            birth.vel_y.par_iter_mut(),
            birth.weight.par_iter_mut(),
            birth.cell_index.par_iter_mut(),
            birth.associated.par_iter_mut(),
        )
            .into_par_iter()
            .enumerate()
            .for_each(|(s, (px, py, vx, vy, w, cell, assoc))| {
                fill(s, px, py, vx, vy, w, cell, assoc)
            });
    } else {
        for s in 0..nb {
            fill(
                s,
                &mut birth.pos_x[s],
                &mut birth.pos_y[s],
                &mut birth.vel_x[s],
                &mut birth.vel_y[s],
                &mut birth.weight[s],
                &mut birth.cell_index[s],
                &mut birth.associated[s],
            );
        }
    }

    // Dropped association branches (mass with a positive share but no slot).
    for c in 0..cell_count {
        let nu_cell = scratch.birth_slots[c];
        if nu_cell == 0 {
            continue;
        }
        let p_a = meas.cells[c].p_assoc;
        let nu_a = associated_share(p_a, nu_cell);
        if nu_a == 0 && p_a > 0.0 {
            tallies.unrepresented_mass += p_a * scratch.born_masses[c];
        }
        if nu_a == nu_cell && p_a < 1.0 {
            tallies.unrepresented_mass += (1.0 - p_a) * scratch.born_masses[c];
        }
    }
    tallies
}

/// Round-half-up share of `nu_cell` slots that sample the measured velocity.
fn associated_share(p_assoc: f64, nu_cell: u32) -> u32 {
    (p_assoc * f64::from(nu_cell) + 0.5).floor() as u32
}
