//! The grid filter recursion: a seven-stage data-parallel pipeline.
//!
//! One [`step`] consumes a [`MeasurementGrid`] and advances the joint state
//! of [`GridMap`] and [`ParticleStore`]:
//!
//! 1. [`predict_particles`] — constant-velocity drift with process noise,
//!    weight decay by the persistence probability.
//! 2. [`sort_and_assign`] — sort particles by cell, record per-cell ranges.
//! 3. [`update_cell_occupancy`] — predicted masses from weight range sums,
//!    evidence combination with the measurement, split of the updated
//!    occupancy mass into persistent and new-born shares.
//! 4. [`update_persistent_particles`] — posterior particle weights from the
//!    velocity likelihood and the association probability.
//! 5. [`initialize_new_particles`] — birth particles allocated to measured
//!    occupied cells proportionally to their new-born mass.
//! 6. [`compute_cell_moments`] — per-cell velocity mean/variance/covariance
//!    from the persistent posterior.
//! 7. [`resample`] — systematic resampling of persistent + birth particles
//!    back to the configured particle count, equal output weights.
//!
//! Stages are barriers; inside a stage work is a map over particles or
//! cells plus sorts and prefix scans. [`ExecMode::Strict`] runs everything
//! sequentially with per-cell-restarting scans, so per-cell sums equal naive
//! summation bitwise and whole runs are reproducible byte-for-byte.
//! [`ExecMode::Parallel`] distributes the maps and sorts over the rayon pool
//! and uses fixed-block scans, so results are bitwise independent of the
//! thread count and agree with strict mode within floating-point regrouping
//! error (1e-6 relative on per-cell sums).

mod assign;
mod birth;
mod moments;
mod occupancy;
mod persistent;
mod predict;
mod resample;
pub mod scan;

pub use assign::sort_and_assign;
pub use birth::initialize_new_particles;
pub use moments::{compute_cell_moments, RHO_P_MIN};
pub use occupancy::update_cell_occupancy;
pub use persistent::update_persistent_particles;
pub use predict::predict_particles;
pub use resample::resample;

use std::time::Instant;

use thiserror::Error;

use crate::grid::GridMap;
use crate::measurement::MeasurementGrid;
use crate::params::FilterParams;
use crate::particle::ParticleStore;

/// How pipeline work is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    /// Fully sequential; per-cell scans restart at cell boundaries so range
    /// sums are bitwise equal to direct summation. Byte-identical output for
    /// identical inputs, regardless of how many threads the process owns.
    Strict,
    /// Data-parallel maps and sorts on the rayon pool with fixed-block
    /// scans; bitwise reproducible for any thread count.
    Parallel,
}

impl ExecMode {
    pub fn is_parallel(self) -> bool {
        matches!(self, ExecMode::Parallel)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("measurement grid is {got} cells per side, filter grid needs {want}")]
    MeasurementSizeMismatch { got: u32, want: u32 },
    #[error("time step must be positive and finite, got {dt}")]
    BadTimestep { dt: f64 },
}

/// Reusable working memory of the pipeline. Allocation happens once; every
/// step reuses the buffers.
#[derive(Debug, Default)]
pub struct PipelineScratch {
    /// Predicted particle weights in sorted order (before any per-cell cap
    /// rescaling) — the input of the occupancy range sums.
    pub weight_array: Vec<f64>,
    /// Scan of `weight_array` (segmented in strict mode, blocked-global in
    /// parallel mode).
    pub weight_accum: Vec<f64>,
    /// Unnormalized measurement-weighted particle weights (likelihood times
    /// predicted weight).
    pub like_weight: Vec<f64>,
    pub like_accum: Vec<f64>,
    /// Weighted velocity accumulation inputs and their scans (vx, vy, vx²,
    /// vy², vx·vy — each multiplied by the posterior weight).
    pub wvx: Vec<f64>,
    pub wvy: Vec<f64>,
    pub wvx2: Vec<f64>,
    pub wvy2: Vec<f64>,
    pub wvxy: Vec<f64>,
    pub wvx_accum: Vec<f64>,
    pub wvy_accum: Vec<f64>,
    pub wvx2_accum: Vec<f64>,
    pub wvy2_accum: Vec<f64>,
    pub wvxy_accum: Vec<f64>,
    /// Per-cell new-born occupancy mass from the latest occupancy update.
    pub born_masses: Vec<f64>,
    /// Per-cell birth slot counts allocated this step.
    pub birth_slots: Vec<u32>,
    /// Exclusive prefix sums of `birth_slots`: each cell's first slot index
    /// in the birth store.
    pub particle_orders_accum: Vec<u32>,
    /// Per-cell rescale factor applied to predicted weights when a cell's
    /// predicted mass exceeded 1 (1.0 everywhere else).
    pub cell_scale: Vec<f64>,
    /// Effective per-cell association probability after the zero-likelihood
    /// fallback.
    pub assoc_prob: Vec<f64>,
    /// Newly created particles (exactly the configured birth count whenever
    /// any measured-occupied cell has new-born mass).
    pub birth_particles: ParticleStore,
    /// Sort keys: cell index in the high half, pre-sort particle index in
    /// the low half.
    pub sort_keys: Vec<u64>,
    /// Double buffer for gather passes (sorting, resampling).
    pub buffer: ParticleStore,
    /// Joint persistent+birth weights and their global cumulative sums.
    pub resample_weights: Vec<f64>,
    pub resample_accum: Vec<f64>,
    /// Selected joint indices of the resampling stage.
    pub picks: Vec<u32>,
}

impl PipelineScratch {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sizes the per-cell buffers; per-particle buffers are rebuilt by the
    /// stages that fill them.
    fn prepare_cells(&mut self, cell_count: usize) {
        self.born_masses.clear();
        self.born_masses.resize(cell_count, 0.0);
        self.birth_slots.clear();
        self.birth_slots.resize(cell_count, 0);
        self.particle_orders_accum.clear();
        self.particle_orders_accum.resize(cell_count, 0);
        self.cell_scale.clear();
        self.cell_scale.resize(cell_count, 1.0);
        self.assoc_prob.clear();
        self.assoc_prob.resize(cell_count, 0.0);
    }
}

/// Diagnostics of one pipeline step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepReport {
    /// Wall time of each stage, in pipeline order.
    pub stage_nanos: [u64; 7],
    /// Persistent particles that entered the step.
    pub particles_in: usize,
    /// Particles predicted out of the window (weights zeroed).
    pub out_of_grid: usize,
    /// Cells holding at least one particle after sorting.
    pub occupied_cells: usize,
    /// Cells whose prediction totally conflicted with the measurement and
    /// were reset to a vacuous prediction.
    pub total_conflict_cells: usize,
    /// Doppler cells where every particle had zero likelihood; their mass
    /// flowed through the unassociated branch only.
    pub zero_likelihood_cells: usize,
    /// Cells granted at least one birth slot.
    pub birth_cells: usize,
    /// Cells with new-born mass that received no representation this step
    /// (no measured occupancy, or slot quantization left them empty).
    pub unrepresented_birth_cells: usize,
    /// Total new-born mass that went unrepresented.
    pub unrepresented_birth_mass: f64,
    /// Sum of new-born masses over all cells.
    pub born_mass_total: f64,
    /// Joint persistent+birth weight entering resampling.
    pub posterior_weight: f64,
    /// Whether the zero-weight reset path replaced the particle set.
    pub empty_world_reset: bool,
}

/// Advances filter state by one measurement. `step_index` seeds the
/// per-stage random streams and must be unique per call (use the recursion
/// counter); `dt` is the time since the previous measurement.
#[allow(clippy::too_many_arguments)]
pub fn step(
    grid: &mut GridMap,
    particles: &mut ParticleStore,
    meas: &MeasurementGrid,
    scratch: &mut PipelineScratch,
    params: &FilterParams,
    dt: f64,
    step_index: u64,
    mode: ExecMode,
) -> Result<StepReport, FilterError> {
    if meas.cells_per_side != grid.geometry.cells_per_side {
        return Err(FilterError::MeasurementSizeMismatch {
            got: meas.cells_per_side,
            want: grid.geometry.cells_per_side,
        });
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(FilterError::BadTimestep { dt });
    }
    debug_assert!(params.validate().is_ok(), "invalid params reached the pipeline");
    scratch.prepare_cells(grid.cells.len());

    let mut report = StepReport { particles_in: particles.len(), ..StepReport::default() };
    let mut clock = Instant::now();
    let mut lap = |slot: &mut u64| {
        let now = Instant::now();
        *slot = (now - clock).as_nanos() as u64;
        clock = now;
    };

    report.out_of_grid = predict_particles(particles, &grid.geometry, params, dt, step_index, mode);
    lap(&mut report.stage_nanos[0]);

    report.occupied_cells = sort_and_assign(particles, grid, scratch, mode);
    lap(&mut report.stage_nanos[1]);

    let occ = update_cell_occupancy(particles, grid, meas, scratch, params, dt, mode);
    report.total_conflict_cells = occ.total_conflict_cells;
    report.born_mass_total = occ.born_mass_total;
    lap(&mut report.stage_nanos[2]);

    report.zero_likelihood_cells = update_persistent_particles(particles, grid, meas, scratch, mode);
    lap(&mut report.stage_nanos[3]);

    let birth = initialize_new_particles(grid, meas, scratch, params, step_index, mode);
    report.birth_cells = birth.birth_cells;
    report.unrepresented_birth_cells = birth.unrepresented_cells;
    report.unrepresented_birth_mass = birth.unrepresented_mass;
    lap(&mut report.stage_nanos[4]);

    compute_cell_moments(particles, grid, scratch, mode);
    lap(&mut report.stage_nanos[5]);

    let res = resample(particles, &grid.geometry, meas, scratch, params, step_index, mode);
    report.posterior_weight = res.total_weight;
    report.empty_world_reset = res.empty_world_reset;
    lap(&mut report.stage_nanos[6]);

    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::Bba;
    use crate::geometry::GridGeometry;

    fn small_setup() -> (GridMap, ParticleStore, MeasurementGrid, FilterParams) {
        let geom = GridGeometry::new(1.6, 0.1).unwrap();
        let grid = GridMap::new(geom);
        let particles = ParticleStore::new();
        let meas = MeasurementGrid::matching(&geom);
        let params = FilterParams {
            particle_count: 2_000,
            birth_particle_count: 400,
            ..FilterParams::default()
        };
        (grid, particles, meas, params)
    }

    #[test]
    fn step_rejects_mismatched_measurement() {
        let (mut grid, mut particles, _, params) = small_setup();
        let wrong = MeasurementGrid::vacuous(4);
        let mut scratch = PipelineScratch::new();
        let err = step(
            &mut grid,
            &mut particles,
            &wrong,
            &mut scratch,
            &params,
            0.1,
            0,
            ExecMode::Strict,
        )
        .unwrap_err();
        assert_eq!(err, FilterError::MeasurementSizeMismatch { got: 4, want: 16 });
    }

    #[test]
    fn step_rejects_bad_timestep() {
        let (mut grid, mut particles, meas, params) = small_setup();
        let mut scratch = PipelineScratch::new();
        for dt in [0.0, -0.5, f64::NAN, f64::INFINITY] {
            let err = step(
                &mut grid,
                &mut particles,
                &meas,
                &mut scratch,
                &params,
                dt,
                0,
                ExecMode::Strict,
            )
            .unwrap_err();
            assert!(matches!(err, FilterError::BadTimestep { .. }), "dt={dt}");
        }
    }

    #[test]
    fn birth_only_step_populates_measured_cells() {
        // No persistent particles: occupancy must appear exactly where the
        // measurement reports mass, fed by the birth path.
        let (mut grid, mut particles, mut meas, params) = small_setup();
        let target = grid.geometry.flat_index(7, 8) as usize;
        meas.cells[target].bba = Bba::new(0.9, 0.0).unwrap();
        let mut scratch = PipelineScratch::new();
        let report = step(
            &mut grid,
            &mut particles,
            &meas,
            &mut scratch,
            &params,
            0.1,
            0,
            ExecMode::Strict,
        )
        .unwrap();
        assert_eq!(report.particles_in, 0);
        assert_eq!(report.birth_cells, 1);
        assert!(grid.cells[target].m_occ_up > 0.8, "measured cell turns occupied");
        assert!(
            (grid.cells[target].rho_b - grid.cells[target].m_occ_up).abs() < 1e-12,
            "with no predicted mass, all updated mass is new-born"
        );
        assert_eq!(particles.len(), params.particle_count);
        assert!(
            particles.cell_index.iter().all(|&c| c == target as u32),
            "every resampled particle sits in the one cell that holds weight"
        );
        let empty = grid.geometry.flat_index(2, 2) as usize;
        assert_eq!(grid.cells[empty].m_occ_up, 0.0);
    }

    #[test]
    fn vacuous_measurements_with_no_birth_decay_monotonically() {
        let (mut grid, mut particles, meas, mut params) = small_setup();
        params.birth_prob = 0.0;
        // Seed occupancy once.
        let mut seeded = meas.clone();
        let target = grid.geometry.flat_index(8, 8) as usize;
        seeded.cells[target].bba = Bba::new(0.95, 0.0).unwrap();
        let mut scratch = PipelineScratch::new();
        step(&mut grid, &mut particles, &seeded, &mut scratch, &params, 0.1, 0, ExecMode::Strict)
            .unwrap();
        let mut last = grid.total_occupancy_mass();
        assert!(last > 0.0);
        for k in 1..=10 {
            step(&mut grid, &mut particles, &meas, &mut scratch, &params, 0.1, k, ExecMode::Strict)
                .unwrap();
            let now = grid.total_occupancy_mass();
            assert!(
                now <= last + 1e-12,
                "with vacuous input and no birth, mass decays: step {k} went {last} -> {now}"
            );
            last = now;
        }
    }
}
