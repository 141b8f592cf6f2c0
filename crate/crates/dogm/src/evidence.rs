//! Two-hypothesis belief mass assignments and their combination rule.
//!
//! Cell occupancy is tracked as a basic belief assignment (BBA) over the
//! frame {occupied, free}: explicit masses for the two singletons, with the
//! remainder implicitly assigned to the unknown set. Evidence from prediction
//! and measurement is fused with Dempster's rule of combination; point
//! probabilities for display and classification come from the pignistic
//! transform, which splits the unknown mass evenly.

use thiserror::Error;

/// Slack allowed when validating that masses sum to at most one, so that
/// values produced by long floating-point pipelines still validate.
pub const MASS_SUM_SLACK: f64 = 1e-9;

/// Combination is rejected as total conflict when the conflicting mass `K`
/// reaches `1 - CONFLICT_EPS`; the renormalization `1/(1-K)` is meaningless
/// past that point.
pub const CONFLICT_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum EvidenceError {
    #[error("belief masses invalid: m_occ={m_occ}, m_free={m_free} (each must be in [0,1], sum <= 1)")]
    InvalidMasses { m_occ: f64, m_free: f64 },
    #[error("total conflict in combination: K={conflict} leaves no compatible belief")]
    TotalConflict { conflict: f64 },
}

/// Basic belief assignment over {occupied, free}; the unknown mass is the
/// implicit remainder `1 - m_occ - m_free`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bba {
    m_occ: f64,
    m_free: f64,
}

impl Default for Bba {
    fn default() -> Self {
        Bba::vacuous()
    }
}

impl Bba {
    /// The vacuous assignment: all mass on the unknown set.
    pub const fn vacuous() -> Self {
        Bba { m_occ: 0.0, m_free: 0.0 }
    }

    /// Validates and builds an assignment. Masses must be finite,
    /// non-negative, and sum to at most one (within [`MASS_SUM_SLACK`]).
    pub fn new(m_occ: f64, m_free: f64) -> Result<Self, EvidenceError> {
        let valid = m_occ.is_finite()
            && m_free.is_finite()
            && (0.0..=1.0).contains(&m_occ)
            && (0.0..=1.0).contains(&m_free)
            && m_occ + m_free <= 1.0 + MASS_SUM_SLACK;
        if valid {
            Ok(Bba { m_occ, m_free })
        } else {
            Err(EvidenceError::InvalidMasses { m_occ, m_free })
        }
    }

    pub fn m_occ(&self) -> f64 {
        self.m_occ
    }

    pub fn m_free(&self) -> f64 {
        self.m_free
    }

    /// Mass on the unknown set.
    pub fn m_unknown(&self) -> f64 {
        (1.0 - self.m_occ - self.m_free).max(0.0)
    }

    /// Dempster's rule of combination.
    ///
    /// The conflict `K = a_occ*b_free + a_free*b_occ` is removed and the
    /// remaining mass renormalized by `1/(1-K)`. Terms are grouped so that the
    /// operation is bitwise commutative and combining with the vacuous
    /// assignment returns the other operand bit-for-bit.
    pub fn combine(&self, other: &Bba) -> Result<Bba, EvidenceError> {
        let (ao, af, au) = (self.m_occ, self.m_free, self.m_unknown());
        let (bo, bf, bu) = (other.m_occ, other.m_free, other.m_unknown());

        let conflict = ao * bf + af * bo;
        if conflict >= 1.0 - CONFLICT_EPS {
            return Err(EvidenceError::TotalConflict { conflict });
        }
        let norm = 1.0 - conflict;
        let occ = (ao * bo + (ao * bu + au * bo)) / norm;
        let free = (af * bf + (af * bu + au * bf)) / norm;
        Ok(Bba {
            m_occ: occ.clamp(0.0, 1.0),
            m_free: free.clamp(0.0, 1.0),
        })
    }

    /// Pignistic occupancy probability: the unknown mass is split evenly
    /// between the two hypotheses.
    pub fn pignistic(&self) -> f64 {
        self.m_occ + 0.5 * (1.0 - self.m_occ - self.m_free)
    }
}
