//! Label sets and the Jaccard distance shared by label and interval sets.

use serde::{Deserialize, Serialize};

use super::interval::IntervalSet;

/// Sorted, duplicate-free set of class indices.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelSet(Vec<usize>);

impl LabelSet {
    pub fn new<I: IntoIterator<Item = usize>>(labels: I) -> Self {
        let mut v: Vec<usize> = labels.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        Self(v)
    }

    pub fn full(k: usize) -> Self {
        Self((0..k).collect())
    }

    pub fn labels(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, y: usize) -> bool {
        self.0.binary_search(&y).is_ok()
    }

    pub fn insert(&mut self, y: usize) {
        if let Err(pos) = self.0.binary_search(&y) {
            self.0.insert(pos, y);
        }
    }

    pub fn union(&self, other: &LabelSet) -> LabelSet {
        LabelSet::new(self.0.iter().chain(&other.0).copied())
    }

    pub fn intersection(&self, other: &LabelSet) -> LabelSet {
        LabelSet(self.0.iter().copied().filter(|y| other.contains(*y)).collect())
    }
}

/// Set kinds that support the Jaccard distance.
pub trait SetMeasure: PartialEq {
    fn size(&self) -> f64;
    fn intersection_size(&self, other: &Self) -> f64;
    fn union_size(&self, other: &Self) -> f64;
}

impl SetMeasure for LabelSet {
    fn size(&self) -> f64 {
        self.len() as f64
    }
    fn intersection_size(&self, other: &Self) -> f64 {
        self.intersection(other).len() as f64
    }
    fn union_size(&self, other: &Self) -> f64 {
        self.union(other).len() as f64
    }
}

impl SetMeasure for IntervalSet {
    fn size(&self) -> f64 {
        self.measure()
    }
    fn intersection_size(&self, other: &Self) -> f64 {
        self.intersection(other).measure()
    }
    fn union_size(&self, other: &Self) -> f64 {
        self.union(other).measure()
    }
}

/// `1 - |a ∩ b| / |a ∪ b|`, cardinality for label sets and Lebesgue measure
/// for interval sets. A zero-size union gives 0 when the sets are equal
/// (in particular both empty) and 1 otherwise.
pub fn jaccard_distance<S: SetMeasure>(a: &S, b: &S) -> f64 {
    if a == b {
        return 0.0;
    }
    let union = a.union_size(b);
    if union <= 0.0 {
        return 1.0;
    }
    let d = 1.0 - a.intersection_size(b) / union;
    d.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn jaccard_examples() {
        let a = LabelSet::new([1, 2]);
        let b = LabelSet::new([2, 3]);
        assert!((jaccard_distance(&a, &b) - (1.0 - 1.0 / 3.0)).abs() < 1e-15);
        assert_eq!(jaccard_distance(&a, &a), 0.0);
        assert_eq!(jaccard_distance(&a, &LabelSet::new([5, 6])), 1.0);
        assert_eq!(jaccard_distance(&LabelSet::default(), &LabelSet::default()), 0.0);
        assert_eq!(jaccard_distance(&LabelSet::default(), &a), 1.0);
    }

    #[test]
    fn jaccard_on_intervals_uses_measure() {
        let a = IntervalSet::closed(0.0, 2.0);
        let b = IntervalSet::closed(1.0, 3.0);
        assert!((jaccard_distance(&a, &b) - (1.0 - 1.0 / 3.0)).abs() < 1e-15);
        assert_eq!(jaccard_distance(&IntervalSet::empty(), &IntervalSet::empty()), 0.0);
        assert_eq!(jaccard_distance(&IntervalSet::closed(1.0, 1.0), &IntervalSet::closed(2.0, 2.0)), 1.0);
    }

    #[test]
    fn label_set_insert_keeps_order() {
        let mut s = LabelSet::new([3, 1]);
        s.insert(2);
        s.insert(3);
        assert_eq!(s.labels(), &[1, 2, 3]);
    }

    fn arb_labels() -> impl Strategy<Value = LabelSet> {
        prop::collection::vec(0usize..8, 1..6).prop_map(LabelSet::new)
    }

    fn arb_intervals() -> impl Strategy<Value = IntervalSet> {
        prop::collection::vec((-8i32..8, 1i32..5), 1..4).prop_map(|v| {
            IntervalSet::from_intervals(v.into_iter().map(|(lo, w)| (lo as f64 * 0.5, (lo + w) as f64 * 0.5)))
        })
    }

    proptest! {
        #[test]
        fn label_jaccard_symmetric_bounded(a in arb_labels(), b in arb_labels()) {
            let d = jaccard_distance(&a, &b);
            prop_assert_eq!(d, jaccard_distance(&b, &a));
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert_eq!(d == 0.0, a == b);
        }

        #[test]
        fn interval_jaccard_symmetric_bounded(a in arb_intervals(), b in arb_intervals()) {
            let d = jaccard_distance(&a, &b);
            prop_assert_eq!(d, jaccard_distance(&b, &a));
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert_eq!(d == 0.0, a == b);
        }
    }
}
