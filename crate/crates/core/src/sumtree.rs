//! Binary sum tree for weighted index selection.
//!
//! Leaves hold non-negative weights; every internal node is recomputed as
//! `left + right` on update, so the stored sums are a pure function of the
//! current leaves and never drift.

use crate::scalar::Real;

#[derive(Clone, Debug)]
pub struct SumTree<T> {
    len: usize,
    width: usize,
    nodes: Vec<T>,
}

impl<T: Real> SumTree<T> {
    pub fn new(weights: &[T]) -> Self {
        let len = weights.len();
        let width = len.max(1).next_power_of_two();
        let mut nodes = vec![T::zero(); 2 * width];
        nodes[width..width + len].copy_from_slice(weights);
        for i in (1..width).rev() {
            nodes[i] = nodes[2 * i] + nodes[2 * i + 1];
        }
        Self { len, width, nodes }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn total(&self) -> T {
        self.nodes[1]
    }

    pub fn get(&self, i: usize) -> T {
        self.nodes[self.width + i]
    }

    pub fn set(&mut self, i: usize, weight: T) {
        debug_assert!(weight >= T::zero());
        let mut node = self.width + i;
        self.nodes[node] = weight;
        while node > 1 {
            node /= 2;
            self.nodes[node] = self.nodes[2 * node] + self.nodes[2 * node + 1];
        }
    }

    /// Index `i` with `prefix(i) <= target < prefix(i + 1)`, or `None` when
    /// `target` falls outside `[0, total)` or lands on a zero-weight leaf
    /// through rounding.
    pub fn find(&self, mut target: T) -> Option<usize> {
        if !(target >= T::zero() && target < self.total()) {
            return None;
        }
        let mut node = 1;
        while node < self.width {
            let left = self.nodes[2 * node];
            if target < left {
                node *= 2;
            } else {
                target -= left;
                node = 2 * node + 1;
            }
        }
        let i = node - self.width;
        (i < self.len && self.nodes[node] > T::zero()).then_some(i)
    }

    /// Rebuilds from the leaves and compares; used by debug consistency checks.
    pub fn is_consistent_with(&self, weights: &[T]) -> bool {
        weights.len() == self.len && *self == Self::new(weights)
    }
}

impl<T: PartialEq> PartialEq for SumTree<T> {
    fn eq(&self, other: &Self) -> bool {
        self.len == other.len && self.nodes == other.nodes
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn find_respects_boundaries() {
        let t = SumTree::new(&[2.0f64, 0.0, 1.0, 3.0, 0.5]);
        assert_eq!(t.total(), 6.5);
        assert_eq!(t.find(0.0), Some(0));
        assert_eq!(t.find(1.999), Some(0));
        assert_eq!(t.find(2.0), Some(2));
        assert_eq!(t.find(3.0), Some(3));
        assert_eq!(t.find(6.0), Some(4));
        assert_eq!(t.find(6.5), None);
        assert_eq!(t.find(-0.1), None);
    }

    #[test]
    fn updates_keep_tree_exact() {
        let mut w = vec![0.3f64, 0.7, 1.1, 0.0, 2.2, 0.9, 0.4];
        let mut t = SumTree::new(&w);
        for (i, x) in [(3, 1.5), (0, 0.0), (6, 2.0), (3, 0.25)] {
            w[i] = x;
            t.set(i, x);
        }
        assert!(t.is_consistent_with(&w));
    }

    proptest! {
        #[test]
        fn find_matches_linear_scan(weights in prop::collection::vec(0u32..5, 1..17), u in 0.0f64..1.0) {
            let w: Vec<f64> = weights.iter().map(|&x| x as f64).collect();
            let t = SumTree::new(&w);
            let total: f64 = w.iter().sum();
            prop_assume!(total > 0.0);
            let target = u * total;
            let mut acc = 0.0;
            let mut expect = None;
            for (i, &x) in w.iter().enumerate() {
                if target < acc + x { expect = Some(i); break; }
                acc += x;
            }
            prop_assert_eq!(t.find(target), expect);
        }
    }
}
