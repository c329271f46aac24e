//! Inclusive integer node boxes.
//!
//! All mesh indexing is node-centered: a box `[lo, hi]` owns every node with
//! `lo[d] <= i[d] <= hi[d]`. Unused trailing dimensions are pinned to `0..=0`
//! so the same type serves 1D, 2D and 3D meshes.

use serde::{Deserialize, Serialize};

pub type Idx = [i64; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IBox {
    pub lo: Idx,
    pub hi: Idx,
}

impl IBox {
    pub fn new(lo: Idx, hi: Idx) -> Self {
        debug_assert!((0..3).all(|d| lo[d] <= hi[d]), "empty box {lo:?}..{hi:?}");
        IBox { lo, hi }
    }

    /// Box spanning `cells` cells per axis starting at the origin; axes at or
    /// beyond `dim` collapse to the single node 0.
    pub fn from_cells(dim: usize, cells: [usize; 3]) -> Self {
        let mut hi = [0i64; 3];
        for d in 0..dim {
            hi[d] = cells[d] as i64;
        }
        IBox { lo: [0; 3], hi }
    }

    pub fn contains(&self, p: Idx) -> bool {
        (0..3).all(|d| self.lo[d] <= p[d] && p[d] <= self.hi[d])
    }

    pub fn contains_box(&self, b: &IBox) -> bool {
        self.contains(b.lo) && self.contains(b.hi)
    }

    pub fn intersect(&self, other: &IBox) -> Option<IBox> {
        let mut lo = [0i64; 3];
        let mut hi = [0i64; 3];
        for d in 0..3 {
            lo[d] = self.lo[d].max(other.lo[d]);
            hi[d] = self.hi[d].min(other.hi[d]);
            if lo[d] > hi[d] {
                return None;
            }
        }
        Some(IBox { lo, hi })
    }

    /// Grow by `r` nodes on every side of the first `dim` axes.
    pub fn grow(&self, dim: usize, r: i64) -> IBox {
        let mut out = *self;
        for d in 0..dim {
            out.lo[d] -= r;
            out.hi[d] += r;
        }
        debug_assert!((0..3).all(|d| out.lo[d] <= out.hi[d]));
        out
    }

    pub fn shift(&self, t: Idx) -> IBox {
        let mut out = *self;
        for d in 0..3 {
            out.lo[d] += t[d];
            out.hi[d] += t[d];
        }
        out
    }

    /// Node box refined by 2: coincident nodes land on even indices.
    pub fn refine(&self) -> IBox {
        let mut out = *self;
        for d in 0..3 {
            out.lo[d] *= 2;
            out.hi[d] *= 2;
        }
        out
    }

    /// Nodes of this box that coincide with coarse nodes, in coarse indices.
    /// Returns None when no node is even-aligned along some axis.
    pub fn coarsen(&self) -> Option<IBox> {
        let mut lo = [0i64; 3];
        let mut hi = [0i64; 3];
        for d in 0..3 {
            lo[d] = self.lo[d].div_euclid(2) + if self.lo[d].rem_euclid(2) != 0 { 1 } else { 0 };
            hi[d] = self.hi[d].div_euclid(2);
            if lo[d] > hi[d] {
                return None;
            }
        }
        Some(IBox { lo, hi })
    }

    pub fn extent(&self, d: usize) -> i64 {
        self.hi[d] - self.lo[d] + 1
    }

    pub fn num_nodes(&self) -> usize {
        (0..3).map(|d| self.extent(d) as usize).product()
    }

    /// Row-major iteration (x fastest), matching field storage order.
    pub fn iter(&self) -> impl Iterator<Item = Idx> + '_ {
        let b = *self;
        (b.lo[2]..=b.hi[2]).flat_map(move |k| {
            (b.lo[1]..=b.hi[1])
                .flat_map(move |j| (b.lo[0]..=b.hi[0]).map(move |i| [i, j, k]))
        })
    }

    /// Split off everything of `self` not covered by `cut`, yielding up to six
    /// disjoint boxes; the intersection itself is not returned.
    pub fn subtract(&self, cut: &IBox) -> Vec<IBox> {
        let Some(mid) = self.intersect(cut) else {
            return vec![*self];
        };
        let mut rest = Vec::new();
        let mut core = *self;
        for d in 0..3 {
            if core.lo[d] < mid.lo[d] {
                let mut b = core;
                b.hi[d] = mid.lo[d] - 1;
                rest.push(b);
                core.lo[d] = mid.lo[d];
            }
            if core.hi[d] > mid.hi[d] {
                let mut b = core;
                b.lo[d] = mid.hi[d] + 1;
                rest.push(b);
                core.hi[d] = mid.hi[d];
            }
        }
        rest
    }

    /// Chop into node boxes of at most `max_cells` cells per axis (first `dim`
    /// axes); adjacent pieces share their face nodes.
    pub fn chop(&self, dim: usize, max_cells: i64) -> Vec<IBox> {
        let mut out = vec![*self];
        for d in 0..dim {
            let mut next = Vec::new();
            for b in out {
                let cells = b.hi[d] - b.lo[d];
                if cells <= max_cells {
                    next.push(b);
                    continue;
                }
                let pieces = (cells + max_cells - 1) / max_cells;
                let mut start = b.lo[d];
                for p in 0..pieces {
                    let end = b.lo[d] + cells * (p + 1) / pieces;
                    let mut piece = b;
                    piece.lo[d] = start;
                    piece.hi[d] = end;
                    next.push(piece);
                    start = end;
                }
            }
            out = next;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refine_and_coarsen_are_inverse_on_aligned_boxes() {
        let b = IBox::new([-2, 0, 0], [5, 8, 0]);
        assert_eq!(b.refine().coarsen(), Some(b));
    }

    #[test]
    fn coarsen_keeps_only_even_nodes() {
        // Nodes 1..=5 contain even nodes 2 and 4 -> coarse 1..=2.
        let b = IBox::new([1, 0, 0], [5, 0, 0]);
        assert_eq!(b.coarsen(), Some(IBox::new([1, 0, 0], [2, 0, 0])));
        // Nodes 1..=1: no even node.
        assert_eq!(IBox::new([1, 0, 0], [1, 0, 0]).coarsen(), None);
        // Negative indices round toward -inf.
        let b = IBox::new([-3, 0, 0], [-1, 0, 0]);
        assert_eq!(b.coarsen(), Some(IBox::new([-1, 0, 0], [-1, 0, 0])));
    }

    #[test]
    fn subtract_covers_complement_exactly() {
        let a = IBox::new([0, 0, 0], [7, 7, 0]);
        let cut = IBox::new([2, 3, 0], [9, 5, 0]);
        let parts = a.subtract(&cut);
        // Every node of `a` is either in `cut` or in exactly one part.
        for p in a.iter() {
            let hits = parts.iter().filter(|b| b.contains(p)).count();
            if cut.contains(p) {
                assert_eq!(hits, 0, "node {p:?} double-covered");
            } else {
                assert_eq!(hits, 1, "node {p:?} covered {hits} times");
            }
        }
        // Disjoint subtraction of a non-overlapping box is the identity.
        let far = IBox::new([20, 20, 0], [30, 30, 0]);
        assert_eq!(a.subtract(&far), vec![a]);
    }

    #[test]
    fn chop_shares_face_nodes_and_respects_max() {
        let b = IBox::new([0, 0, 0], [64, 64, 0]);
        let parts = b.chop(2, 32);
        assert_eq!(parts.len(), 4);
        for p in &parts {
            assert!(p.hi[0] - p.lo[0] <= 32 && p.hi[1] - p.lo[1] <= 32);
        }
        // Shared face: node [32, 10, 0] appears in two pieces.
        let owners = parts.iter().filter(|p| p.contains([32, 10, 0])).count();
        assert_eq!(owners, 2);
        // Cell coverage partitions: count cells, not nodes.
        let cells: i64 = parts.iter().map(|p| (p.hi[0] - p.lo[0]) * (p.hi[1] - p.lo[1])).sum();
        assert_eq!(cells, 64 * 64);
    }
}
