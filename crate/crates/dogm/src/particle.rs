//! Structure-of-arrays particle population.
//!
//! Pipeline stages stream over whole attributes at a time (predict touches
//! positions and velocities, the scan touches weights, the sort permutes
//! everything), so the store keeps one flat array per attribute rather than
//! an array of particle structs. All arrays always share the same length;
//! use the store's methods to grow or shrink it.

use crate::geometry::OUT_OF_GRID;

/// Particle population as parallel arrays. Positions are window-local meters,
/// velocities are world-frame m/s, weights are occupancy masses,
/// `cell_index` is the flat grid cell (or [`OUT_OF_GRID`]), and `associated`
/// marks new-born particles whose velocity came from a Doppler measurement.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParticleStore {
    pub pos_x: Vec<f64>,
    pub pos_y: Vec<f64>,
    pub vel_x: Vec<f64>,
    pub vel_y: Vec<f64>,
    pub weight: Vec<f64>,
    pub cell_index: Vec<u32>,
    pub associated: Vec<bool>,
}

impl ParticleStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        ParticleStore {
            pos_x: Vec::with_capacity(n),
            pos_y: Vec::with_capacity(n),
            vel_x: Vec::with_capacity(n),
            vel_y: Vec::with_capacity(n),
            weight: Vec::with_capacity(n),
            cell_index: Vec::with_capacity(n),
            associated: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        debug_assert!(self.is_consistent());
        self.pos_x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos_x.is_empty()
    }

    /// All arrays share one length.
    pub fn is_consistent(&self) -> bool {
        let n = self.pos_x.len();
        self.pos_y.len() == n
            && self.vel_x.len() == n
            && self.vel_y.len() == n
            && self.weight.len() == n
            && self.cell_index.len() == n
            && self.associated.len() == n
    }

    pub fn clear(&mut self) {
        self.pos_x.clear();
        self.pos_y.clear();
        self.vel_x.clear();
        self.vel_y.clear();
        self.weight.clear();
        self.cell_index.clear();
        self.associated.clear();
    }

    /// Grows or shrinks every array to `n`, filling new slots with zeros.
    pub fn resize(&mut self, n: usize) {
        self.pos_x.resize(n, 0.0);
        self.pos_y.resize(n, 0.0);
        self.vel_x.resize(n, 0.0);
        self.vel_y.resize(n, 0.0);
        self.weight.resize(n, 0.0);
        self.cell_index.resize(n, OUT_OF_GRID);
        self.associated.resize(n, false);
    }

    pub fn push(&mut self, pos: (f64, f64), vel: (f64, f64), weight: f64, cell_index: u32) {
        self.pos_x.push(pos.0);
        self.pos_y.push(pos.1);
        self.vel_x.push(vel.0);
        self.vel_y.push(vel.1);
        self.weight.push(weight);
        self.cell_index.push(cell_index);
        self.associated.push(false);
    }

    /// Copies particle `src` of `from` into slot `dst` of `self`.
    #[inline]
    pub fn copy_from(&mut self, dst: usize, from: &ParticleStore, src: usize) {
        self.pos_x[dst] = from.pos_x[src];
        self.pos_y[dst] = from.pos_y[src];
        self.vel_x[dst] = from.vel_x[src];
        self.vel_y[dst] = from.vel_y[src];
        self.weight[dst] = from.weight[src];
        self.cell_index[dst] = from.cell_index[src];
        self.associated[dst] = from.associated[src];
    }

    /// Total weight by direct summation.
    pub fn total_weight(&self) -> f64 {
        self.weight.iter().sum()
    }
}
