//! Prefix-sum kernels and per-cell range sums.
//!
//! Two scan layouts back the pipeline's range sums:
//!
//! * **Segmented** (strict mode): the running sum restarts at every cell
//!   boundary of the sorted particle array, so a cell's range sum is the
//!   plain left-to-right sum of its own weights — bitwise equal to summing
//!   them directly.
//! * **Blocked** (parallel mode): a global inclusive scan computed in fixed
//!   4096-element blocks (scan within each block, then carry the block
//!   totals across). The grouping depends only on the block size, never on
//!   the thread count, so results are reproducible on any pool; a cell's
//!   range sum is the difference of two scan entries.

use rayon::prelude::*;

/// Fixed block length of the parallel scan. Changing this changes the
/// floating-point grouping (and thus low-order bits); it is a compile-time
/// constant so every run agrees.
pub const SCAN_BLOCK: usize = 4096;

/// Which scan layout a buffer holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanKind {
    Segmented,
    Global,
}

/// Inclusive scan that restarts whenever the cell index changes.
/// `cells` must be sorted (equal values contiguous) and as long as `values`.
pub fn segmented_inclusive_scan(values: &[f64], cells: &[u32], out: &mut Vec<f64>) {
    debug_assert_eq!(values.len(), cells.len());
    out.clear();
    out.reserve(values.len());
    for i in 0..values.len() {
        let carry = if i > 0 && cells[i] == cells[i - 1] { out[i - 1] } else { 0.0 };
        out.push(carry + values[i]);
    }
}

/// Sequential global inclusive scan.
pub fn sequential_inclusive_scan(values: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.reserve(values.len());
    let mut carry = 0.0;
    for &v in values {
        carry += v;
        out.push(carry);
    }
}

/// Global inclusive scan in fixed-size blocks, block passes in parallel.
/// Bitwise independent of the thread count.
pub fn blocked_inclusive_scan(values: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.resize(values.len(), 0.0);
    out.par_chunks_mut(SCAN_BLOCK).zip(values.par_chunks(SCAN_BLOCK)).for_each(
        |(out_block, in_block)| {
            let mut carry = 0.0;
            for (o, &v) in out_block.iter_mut().zip(in_block) {
                carry += v;
                *o = carry;
            }
        },
    );
    let block_count = values.len().div_ceil(SCAN_BLOCK);
    let mut offsets = Vec::with_capacity(block_count);
    let mut carry = 0.0;
    for b in 0..block_count {
        offsets.push(carry);
        let last = ((b + 1) * SCAN_BLOCK).min(values.len()) - 1;
        carry += out[last];
    }
    out.par_chunks_mut(SCAN_BLOCK).enumerate().for_each(|(b, block)| {
        let offset = offsets[b];
        if offset != 0.0 {
            for o in block {
                *o += offset;
            }
        }
    });
}

/// Runs the scan layout belonging to the execution mode: segmented in
/// strict mode (`sorted_cells` marks the segment boundaries), blocked-global
/// in parallel mode. Returns the layout for [`CellSums`].
pub fn pipeline_scan(
    values: &[f64],
    sorted_cells: &[u32],
    out: &mut Vec<f64>,
    mode: super::ExecMode,
) -> ScanKind {
    if mode.is_parallel() {
        blocked_inclusive_scan(values, out);
        ScanKind::Global
    } else {
        segmented_inclusive_scan(values, sorted_cells, out);
        ScanKind::Segmented
    }
}

/// Read-only view of one scanned buffer, able to answer whole-cell range
/// sums under either layout.
#[derive(Debug, Clone, Copy)]
pub struct CellSums<'a> {
    accum: &'a [f64],
    kind: ScanKind,
}

impl<'a> CellSums<'a> {
    pub fn new(accum: &'a [f64], kind: ScanKind) -> Self {
        CellSums { accum, kind }
    }

    /// Sum over the inclusive index range `[start, end]`, which must span
    /// exactly one sorted cell group (segmented scans restart there).
    pub fn range_sum(&self, start: u32, end: u32) -> f64 {
        let (start, end) = (start as usize, end as usize);
        debug_assert!(start <= end && end < self.accum.len());
        match self.kind {
            ScanKind::Segmented => self.accum[end],
            ScanKind::Global => {
                let below = if start == 0 { 0.0 } else { self.accum[start - 1] };
                self.accum[end] - below
            }
        }
    }
}
