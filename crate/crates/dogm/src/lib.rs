//! Dynamic occupancy grid mapping with a data-parallel Dempster-Shafer
//! particle filter.
//!
//! The grid models the environment around a moving vehicle as square cells,
//! each carrying belief masses for *occupied* and *free* plus a population of
//! weighted particles whose velocities describe how occupancy moves. One
//! filter recursion is a fixed seven-stage pipeline (prediction, cell
//! assignment, occupancy update, persistent-particle update, new-particle
//! initialization, velocity moments, resampling) in which every stage is a
//! map, sort or prefix-scan over flat arrays, so the same code path runs
//! sequentially or data-parallel without changing results per thread count.
//!
//! Crate layout:
//! - [`evidence`], [`geometry`], [`particle`], [`params`], [`rng`], [`grid`]:
//!   core state types and deterministic random streams.
//! - [`measurement`]: inverse sensor models (lidar ray casting, radar/Doppler
//!   overlay), measurement grids, and ego-motion grid scrolling.
//! - [`filter`]: the seven-stage recursion itself.
//! - [`oracle`]: small self-contained reference implementations (binary Bayes
//!   filter, full Bernoulli-per-cell particle filter, sequential mirror of the
//!   pipeline) used to validate the production path.
//! - [`sim`]: synthetic scenarios, sensor simulation and ground truth.
//! - [`eval`]: velocity/consistency/classification metrics and benchmarks.

pub mod evidence;
pub mod geometry;
pub mod params;
pub mod particle;
pub mod rng;

pub mod grid;

pub mod measurement;

pub mod filter;

pub mod oracle;

pub mod sim;

pub mod eval;

pub use evidence::Bba;
pub use geometry::GridGeometry;
pub use grid::{GridCellState, GridMap};
pub use params::FilterParams;
pub use particle::ParticleStore;
