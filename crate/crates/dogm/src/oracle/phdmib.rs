//! Brute-force per-cell Bernoulli particle filter on a small grid.
//!
//! This is the exact multi-object recursion the production pipeline
//! approximates, kept deliberately naive: per-cell particle vectors, the
//! full true/false-positive normalization in the update, explicit birth
//! proportional to the prior miss probability, and one joint systematic
//! resampling pass. Scale is capped hard — the point of the oracle is to be
//! small enough to trust, not fast.

use thiserror::Error;

use crate::geometry::{GridGeometry, OUT_OF_GRID};
use crate::rng::{Stage, StreamKey};

/// Largest grid the oracle accepts, in cells per side.
pub const MAX_GRID_SIDE: u32 = 64;

/// Largest per-cell particle budget (initial or birth) the oracle accepts.
pub const MAX_CELL_PARTICLES: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("oracle grid too large: {got} cells per side exceeds {max}", max = MAX_GRID_SIDE)]
    GridTooLarge { got: u32 },
    #[error("oracle particle budget too large: {got} per cell exceeds {max}", max = MAX_CELL_PARTICLES)]
    TooManyParticles { got: usize },
    #[error("observation list covers {got} cells, the grid has {want}")]
    ObservationSizeMismatch { got: usize, want: usize },
}

/// Configuration of the oracle recursion.
#[derive(Debug, Clone, Copy)]
pub struct OracleParams {
    /// Probability that a point object survives one step.
    pub persistence_prob: f64,
    /// Prior probability that an object appears in a cell not already
    /// explained by persistent mass.
    pub birth_prob: f64,
    /// New particles drawn per cell and step to represent potential births.
    pub birth_particles_per_cell: usize,
    /// Process noise SD applied to positions, scaled by the timestep.
    pub sigma_process_pos: f64,
    /// Process noise SD applied to velocities, scaled by the timestep.
    pub sigma_process_vel: f64,
    /// Velocity SD of newly created particles.
    pub sigma_birth_vel: f64,
    pub seed: u64,
}

impl Default for OracleParams {
    fn default() -> Self {
        OracleParams {
            persistence_prob: 0.99,
            birth_prob: 0.02,
            birth_particles_per_cell: 100,
            sigma_process_pos: 0.02,
            sigma_process_vel: 0.8,
            sigma_birth_vel: 4.0,
            seed: 0,
        }
    }
}

/// What the sensor reports for one cell at one step.
#[derive(Debug, Clone, Copy)]
pub struct CellObservation {
    /// Whether a measurement occurred in this cell.
    pub occurred: bool,
    /// Probability that an occupied cell produces a measurement.
    pub p_tp: f64,
    /// Probability that an empty cell produces a (clutter) measurement.
    pub p_fp: f64,
    /// Single-object measurement likelihood, uniform over the cell.
    pub likelihood: f64,
    /// Probability that the measurement belongs to the cell's object rather
    /// than clutter.
    pub p_assoc: f64,
    /// Clutter density at the measurement.
    pub clutter: f64,
}

impl CellObservation {
    /// No measurement occurred; only the miss probabilities matter.
    pub fn missed(p_tp: f64, p_fp: f64) -> Self {
        CellObservation { occurred: false, p_tp, p_fp, likelihood: 0.0, p_assoc: 0.0, clutter: 1.0 }
    }

    /// A measurement occurred with the given likelihood and association.
    pub fn detected(p_tp: f64, p_fp: f64, likelihood: f64, p_assoc: f64, clutter: f64) -> Self {
        CellObservation { occurred: true, p_tp, p_fp, likelihood, p_assoc, clutter }
    }
}

#[derive(Debug, Clone, Copy)]
struct OracleParticle {
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
    w: f64,
}

/// The oracle filter state: per-cell particle vectors plus the last
/// posterior occupancy per cell.
pub struct PhdMibOracle {
    geom: GridGeometry,
    cells: Vec<Vec<OracleParticle>>,
    occupancy: Vec<f64>,
    params: OracleParams,
    /// Constant total particle count restored by each resampling pass.
    nu_total: usize,
    step_index: u64,
}

impl PhdMibOracle {
    /// Seeds `particles_per_cell` particles (uniform positions, zero-mean
    /// velocities) in every cell listed in `initial` with the given starting
    /// occupancy, which becomes the cell's particle weight sum.
    pub fn new(
        geom: GridGeometry,
        initial: &[(u32, f64)],
        particles_per_cell: usize,
        params: OracleParams,
    ) -> Result<Self, OracleError> {
        if geom.cells_per_side > MAX_GRID_SIDE {
            return Err(OracleError::GridTooLarge { got: geom.cells_per_side });
        }
        if particles_per_cell > MAX_CELL_PARTICLES {
            return Err(OracleError::TooManyParticles { got: particles_per_cell });
        }
        if params.birth_particles_per_cell > MAX_CELL_PARTICLES {
            return Err(OracleError::TooManyParticles { got: params.birth_particles_per_cell });
        }

        let cell_count = geom.cell_count();
        let mut cells = vec![Vec::new(); cell_count];
        let mut occupancy = vec![0.0; cell_count];
        let key = StreamKey::new(params.seed, u64::MAX, Stage::EmptyWorldReset);
        let mut draw = 0u64;
        for &(cell, r0) in initial {
            let (cx, cy) = geom.cell_corner_local(cell);
            let w = r0 / particles_per_cell as f64;
            let bucket = &mut cells[cell as usize];
            for _ in 0..particles_per_cell {
                let (ux, uy) = (key.uniform(draw, 0), key.uniform(draw, 1));
                let (n0, n1) = key.normal_pair(draw, 2);
                draw += 1;
                bucket.push(OracleParticle {
                    x: cx + ux * geom.cell_size,
                    y: cy + uy * geom.cell_size,
                    vx: params.sigma_birth_vel * n0,
                    vy: params.sigma_birth_vel * n1,
                    w,
                });
            }
            occupancy[cell as usize] = r0;
        }
        // An oracle seeded empty still needs a particle budget once birth
        // creates mass, so fall back to one birth allotment per cell.
        let nu_total = if initial.is_empty() {
            params.birth_particles_per_cell * cell_count
        } else {
            initial.len() * particles_per_cell
        };
        Ok(PhdMibOracle { geom, cells, occupancy, params, nu_total, step_index: 0 })
    }

    /// Posterior occupancy of one cell after the latest step.
    pub fn occupancy(&self, cell: u32) -> f64 {
        self.occupancy[cell as usize]
    }

    /// Posterior occupancy of every cell after the latest step.
    pub fn occupancies(&self) -> &[f64] {
        &self.occupancy
    }

    pub fn particle_count(&self) -> usize {
        self.cells.iter().map(Vec::len).sum()
    }

    /// Runs one full recursion (predict, birth, update, resample) against
    /// per-cell observations and returns the posterior occupancies.
    pub fn step(&mut self, obs: &[CellObservation], dt: f64) -> Result<&[f64], OracleError> {
        let cell_count = self.geom.cell_count();
        if obs.len() != cell_count {
            return Err(OracleError::ObservationSizeMismatch { got: obs.len(), want: cell_count });
        }
        self.step_index += 1;
        let p = self.params;

        // Predict every particle with the constant-velocity model and noise
        // scaled by the timestep; re-bin by target cell, dropping leavers.
        let key = StreamKey::new(p.seed, self.step_index, Stage::Predict);
        let sd_pos = p.sigma_process_pos * dt;
        let sd_vel = p.sigma_process_vel * dt;
        let mut moved: Vec<Vec<OracleParticle>> = vec![Vec::new(); cell_count];
        let mut draw = 0u64;
        for bucket in &self.cells {
            for part in bucket {
                let (n_px, n_py) = key.normal_pair(draw, 0);
                let (n_vx, n_vy) = key.normal_pair(draw, 2);
                draw += 1;
                let next = OracleParticle {
                    x: part.x + part.vx * dt + sd_pos * n_px,
                    y: part.y + part.vy * dt + sd_pos * n_py,
                    vx: part.vx + sd_vel * n_vx,
                    vy: part.vy + sd_vel * n_vy,
                    w: p.persistence_prob * part.w,
                };
                let cell = self.geom.local_to_cell(next.x, next.y);
                if cell != OUT_OF_GRID {
                    moved[cell as usize].push(next);
                }
            }
        }
        self.cells = moved;

        // Per-cell Bernoulli update.
        let birth_key = StreamKey::new(p.seed, self.step_index, Stage::Birth);
        let mut birth_draw = 0u64;
        for c in 0..cell_count {
            let bucket = &mut self.cells[c];

            // Persistent existence: the (truncated) weight sum.
            let mut r_p: f64 = bucket.iter().map(|q| q.w).sum();
            if r_p > 1.0 {
                let scale = 1.0 / r_p;
                for q in bucket.iter_mut() {
                    q.w *= scale;
                }
                r_p = 1.0;
            }

            // Birth: mass proportional to what persistence leaves open.
            let r_b = p.birth_prob * (1.0 - r_p);
            if r_b > 0.0 && p.birth_particles_per_cell > 0 {
                let (cx, cy) = self.geom.cell_corner_local(c as u32);
                let wb = r_b / p.birth_particles_per_cell as f64;
                for _ in 0..p.birth_particles_per_cell {
                    let (ux, uy) = (birth_key.uniform(birth_draw, 0), birth_key.uniform(birth_draw, 1));
                    let (n0, n1) = birth_key.normal_pair(birth_draw, 2);
                    birth_draw += 1;
                    bucket.push(OracleParticle {
                        x: cx + ux * self.geom.cell_size,
                        y: cy + uy * self.geom.cell_size,
                        vx: p.sigma_birth_vel * n0,
                        vy: p.sigma_birth_vel * n1,
                        w: wb,
                    });
                }
            }
            let r_pred = r_p + if p.birth_particles_per_cell > 0 { r_b } else { 0.0 };

            // Measurement update over both persistent and new-born weights.
            let o = &obs[c];
            if o.occurred {
                // The measurement explains the object with probability
                // p_assoc, clutter otherwise.
                let g_assoc = o.p_assoc * o.likelihood + (1.0 - o.p_assoc) * o.clutter;
                let mut sum_unnormalized = 0.0;
                for q in bucket.iter_mut() {
                    q.w = o.p_tp * g_assoc * q.w;
                    sum_unnormalized += q.w;
                }
                let mu = o.p_fp * o.clutter * (1.0 - r_pred) + sum_unnormalized;
                if mu > 0.0 {
                    for q in bucket.iter_mut() {
                        q.w /= mu;
                    }
                } else {
                    for q in bucket.iter_mut() {
                        q.w = 0.0;
                    }
                }
            } else {
                let denom = (1.0 - o.p_tp) * r_pred + (1.0 - o.p_fp) * (1.0 - r_pred);
                let factor = if denom > 0.0 { (1.0 - o.p_tp) / denom } else { 0.0 };
                for q in bucket.iter_mut() {
                    q.w *= factor;
                }
            }
            self.occupancy[c] = bucket.iter().map(|q| q.w).sum();
        }

        // Joint systematic resampling back to the constant particle count,
        // sweeping cells in index order. Equal output weights preserve the
        // posterior total.
        let total: f64 = self.occupancy.iter().sum();
        if !(total > 0.0) || self.nu_total == 0 {
            for bucket in &mut self.cells {
                bucket.clear();
            }
            return Ok(&self.occupancy);
        }
        let u = 1.0 - StreamKey::new(p.seed, self.step_index, Stage::Resample).uniform(0, 0);
        let stride = total / self.nu_total as f64;
        let mut resampled: Vec<Vec<OracleParticle>> = vec![Vec::new(); cell_count];
        let mut cum = 0.0;
        let mut picked = 0usize;
        let mut last: Option<(usize, OracleParticle)> = None;
        for (c, bucket) in self.cells.iter().enumerate() {
            for q in bucket {
                cum += q.w;
                last = Some((c, *q));
                while picked < self.nu_total && (picked as f64 + u) * stride <= cum {
                    resampled[c].push(OracleParticle { w: stride, ..*q });
                    picked += 1;
                }
            }
        }
        // Sweep points stranded past the accumulated total by rounding fall
        // back on the final particle.
        if let Some((c, q)) = last {
            while picked < self.nu_total {
                resampled[c].push(OracleParticle { w: stride, ..q });
                picked += 1;
            }
        }
        self.cells = resampled;
        Ok(&self.occupancy)
    }
}
