//! Binned (discrete) entropy on a [`BinGrid`].
//!
//! All entropies are plug-in estimates in nats: `Σ_b p̂_b log(1/p̂_b)` with
//! `p̂_b = c_b / m`. The entropy gap of a histogram is measured against the
//! uniform distribution over the same bins, `log(k²)`, so the grid constant
//! cancels and only the shape of the distribution matters.

use serde::{Deserialize, Serialize};

use crate::domain::{BinGrid, Point2};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinnedHistogram {
    counts: Vec<u64>,
    total: u64,
}

impl BinnedHistogram {
    /// Build from raw counts. At least one count must be positive.
    pub fn from_counts(counts: Vec<u64>) -> Result<Self> {
        let total = counts.iter().sum();
        if total == 0 {
            return Err(Error::Empty("histogram has no mass"));
        }
        Ok(Self { counts, total })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn occupied_bins(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    /// Bin-wise sum of two histograms over the same grid.
    pub fn merged(&self, other: &BinnedHistogram) -> Result<BinnedHistogram> {
        if self.counts.len() != other.counts.len() {
            return Err(Error::LengthMismatch {
                what: "histogram bins",
                got: other.counts.len(),
                expected: self.counts.len(),
            });
        }
        BinnedHistogram::from_counts(self.counts.iter().zip(&other.counts).map(|(a, b)| a + b).collect())
    }
}

/// Count points per bin.
pub fn histogram(points: &[Point2], grid: BinGrid) -> Result<BinnedHistogram> {
    if points.is_empty() {
        return Err(Error::Empty("points"));
    }
    let mut counts = vec![0u64; grid.total_bins()];
    for p in points {
        counts[grid.bin_index(*p)] += 1;
    }
    BinnedHistogram::from_counts(counts)
}

/// Plug-in entropy in nats. Empty bins contribute nothing.
pub fn binned_entropy(h: &BinnedHistogram) -> f64 {
    let m = h.total as f64;
    h.counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let c = c as f64;
            (c / m) * (m / c).ln()
        })
        .sum()
}

/// Plug-in entropy plus the Miller–Madow term `(occupied − 1) / 2m`.
/// Diagnostic only; nothing in the risk pipeline applies it.
pub fn miller_madow_entropy(h: &BinnedHistogram) -> f64 {
    binned_entropy(h) + (h.occupied_bins() as f64 - 1.0) / (2.0 * h.total as f64)
}

/// `log(k²) − H`, clamped at zero.
pub fn entropy_gap(h: &BinnedHistogram, grid: BinGrid) -> f64 {
    (grid.max_entropy() - binned_entropy(h)).max(0.0)
}

/// Running plug-in entropy of a multiset of bin indices with O(1) updates.
///
/// Tracks `m` and `S = Σ_b c_b log c_b`; then `H = log m − S/m`.
#[derive(Debug, Clone)]
pub struct EntropyAccumulator {
    counts: Vec<u64>,
    total: u64,
    sum_c_log_c: f64,
}

#[inline]
fn c_log_c(c: u64) -> f64 {
    if c <= 1 {
        0.0
    } else {
        let c = c as f64;
        c * c.ln()
    }
}

impl EntropyAccumulator {
    pub fn new(bins: usize) -> Self {
        Self {
            counts: vec![0; bins],
            total: 0,
            sum_c_log_c: 0.0,
        }
    }

    pub fn add(&mut self, bin: usize) {
        let c = self.counts[bin];
        self.sum_c_log_c += c_log_c(c + 1) - c_log_c(c);
        self.counts[bin] = c + 1;
        self.total += 1;
    }

    pub fn count(&self, bin: usize) -> u64 {
        self.counts[bin]
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Entropy in nats; 0 when empty.
    pub fn entropy(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        let m = self.total as f64;
        (m.ln() - self.sum_c_log_c / m).max(0.0)
    }

    /// Entropy after hypothetically adding one point to `bin`.
    pub fn entropy_if_added(&self, bin: usize) -> f64 {
        let c = self.counts[bin];
        let m = (self.total + 1) as f64;
        let s = self.sum_c_log_c + c_log_c(c + 1) - c_log_c(c);
        (m.ln() - s / m).max(0.0)
    }

    pub fn to_histogram(&self) -> Result<BinnedHistogram> {
        BinnedHistogram::from_counts(self.counts.clone())
    }
}
