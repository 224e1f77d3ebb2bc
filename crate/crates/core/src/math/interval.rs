//! Finite unions of closed intervals on the real line.

use serde::{Deserialize, Serialize};

/// Normalized finite union of closed intervals: sorted, pairwise disjoint,
/// and with touching neighbours merged.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IntervalSet {
    intervals: Vec<(f64, f64)>,
}

impl IntervalSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Single closed interval `[lo, hi]`; empty when `lo > hi`.
    pub fn closed(lo: f64, hi: f64) -> Self {
        if lo <= hi {
            Self {
                intervals: vec![(lo, hi)],
            }
        } else {
            Self::empty()
        }
    }

    /// Builds a normalized set from arbitrary pieces. Pieces with `lo > hi` are dropped.
    pub fn from_intervals<I: IntoIterator<Item = (f64, f64)>>(pieces: I) -> Self {
        let mut v: Vec<(f64, f64)> = pieces.into_iter().filter(|(lo, hi)| lo <= hi).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(v.len());
        for (lo, hi) in v {
            match out.last_mut() {
                Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
                _ => out.push((lo, hi)),
            }
        }
        Self { intervals: out }
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Lebesgue measure.
    pub fn measure(&self) -> f64 {
        self.intervals.iter().map(|(lo, hi)| hi - lo).sum()
    }

    pub fn contains(&self, y: f64) -> bool {
        // intervals are sorted, so binary search on the lower bounds
        let idx = self.intervals.partition_point(|&(lo, _)| lo <= y);
        idx > 0 && y <= self.intervals[idx - 1].1
    }

    pub fn union(&self, other: &IntervalSet) -> IntervalSet {
        Self::from_intervals(self.intervals.iter().chain(&other.intervals).copied())
    }

    pub fn intersection(&self, other: &IntervalSet) -> IntervalSet {
        let (a, b) = (&self.intervals, &other.intervals);
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::new();
        while i < a.len() && j < b.len() {
            let lo = a[i].0.max(b[j].0);
            let hi = a[i].1.min(b[j].1);
            if lo <= hi {
                out.push((lo, hi));
            }
            if a[i].1 < b[j].1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        // pieces are already ordered; normalization only merges touching points
        Self::from_intervals(out)
    }
}

pub fn interval_union(a: &IntervalSet, b: &IntervalSet) -> IntervalSet {
    a.union(b)
}

pub fn interval_intersection(a: &IntervalSet, b: &IntervalSet) -> IntervalSet {
    a.intersection(b)
}
