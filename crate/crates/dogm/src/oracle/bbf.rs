//! Per-cell binary Bayes filter: the classical static-world occupancy
//! update the full recursion degenerates to when nothing moves, nothing
//! dies and nothing is born.

/// Occupancy probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` so
/// a cell can always recover from a long streak of one-sided evidence.
pub const PROB_CLAMP: f64 = 1e-6;

/// One grid cell of a binary Bayes occupancy filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BbfCell {
    p_occ: f64,
}

impl BbfCell {
    /// Builds a cell, clamping the probability into the open unit interval.
    pub fn new(p_occ: f64) -> Self {
        assert!(p_occ.is_finite(), "occupancy probability must be finite, got {p_occ}");
        BbfCell { p_occ: p_occ.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP) }
    }

    pub fn p_occ(self) -> f64 {
        self.p_occ
    }
}

/// One measurement update with the likelihood ratio
/// `alpha = P(observation | occupied) / P(observation | free)`:
/// `p' = α·p / (α·p + (1−p))`, clamped.
pub fn bbf_update(cell: BbfCell, alpha: f64) -> BbfCell {
    assert!(alpha.is_finite() && alpha > 0.0, "likelihood ratio must be positive, got {alpha}");
    let p = cell.p_occ;
    BbfCell::new(alpha * p / (alpha * p + (1.0 - p)))
}
