//! Node-set algebra on unions of boxes.
//!
//! A `RegionSet` is a finite union of node boxes kept in a disjoint, partially
//! coalesced normal form. Erosion and dilation use the l-inf ball, matching
//! ghost-frame growth: growing by r adds r nodes per side including corners.

use super::ibox::{IBox, Idx};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionSet {
    dim: usize,
    boxes: Vec<IBox>,
}

impl RegionSet {
    pub fn empty(dim: usize) -> Self {
        RegionSet { dim, boxes: Vec::new() }
    }

    pub fn from_box(dim: usize, b: IBox) -> Self {
        RegionSet { dim, boxes: vec![b] }
    }

    /// Union of arbitrary (possibly overlapping) boxes, normalized.
    pub fn from_boxes(dim: usize, boxes: &[IBox]) -> Self {
        let mut r = RegionSet::empty(dim);
        for b in boxes {
            r.add_box(*b);
        }
        r.coalesce();
        r
    }

    /// Builds a set from boxes the caller guarantees are pairwise disjoint,
    /// skipping the quadratic overlap removal of `from_boxes`.
    pub(crate) fn from_disjoint(dim: usize, boxes: Vec<IBox>) -> Self {
        let mut r = RegionSet { dim, boxes };
        r.coalesce();
        r
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn boxes(&self) -> &[IBox] {
        &self.boxes
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn num_nodes(&self) -> usize {
        self.boxes.iter().map(IBox::num_nodes).sum()
    }

    pub fn contains(&self, p: Idx) -> bool {
        self.boxes.iter().any(|b| b.contains(p))
    }

    pub fn contains_box(&self, b: &IBox) -> bool {
        let mut rest = vec![*b];
        for cut in &self.boxes {
            rest = rest.iter().flat_map(|r| r.subtract(cut)).collect();
            if rest.is_empty() {
                return true;
            }
        }
        rest.is_empty()
    }

    pub fn contains_region(&self, other: &RegionSet) -> bool {
        other.boxes.iter().all(|b| self.contains_box(b))
    }

    pub fn bounding_box(&self) -> Option<IBox> {
        let first = *self.boxes.first()?;
        let mut lo = first.lo;
        let mut hi = first.hi;
        for b in &self.boxes[1..] {
            for d in 0..3 {
                lo[d] = lo[d].min(b.lo[d]);
                hi[d] = hi[d].max(b.hi[d]);
            }
        }
        Some(IBox::new(lo, hi))
    }

    fn add_box(&mut self, b: IBox) {
        let mut parts = vec![b];
        for have in &self.boxes {
            parts = parts.iter().flat_map(|p| p.subtract(have)).collect();
            if parts.is_empty() {
                return;
            }
        }
        self.boxes.extend(parts);
    }

    pub fn union(&self, other: &RegionSet) -> RegionSet {
        debug_assert_eq!(self.dim, other.dim);
        let mut out = self.clone();
        for b in &other.boxes {
            out.add_box(*b);
        }
        out.coalesce();
        out
    }

    pub fn intersect(&self, other: &RegionSet) -> RegionSet {
        debug_assert_eq!(self.dim, other.dim);
        let mut boxes = Vec::new();
        for a in &self.boxes {
            for b in &other.boxes {
                if let Some(i) = a.intersect(b) {
                    boxes.push(i);
                }
            }
        }
        let mut out = RegionSet { dim: self.dim, boxes };
        out.coalesce();
        out
    }

    pub fn intersect_box(&self, b: &IBox) -> RegionSet {
        self.intersect(&RegionSet::from_box(self.dim, *b))
    }

    pub fn subtract(&self, other: &RegionSet) -> RegionSet {
        debug_assert_eq!(self.dim, other.dim);
        let mut boxes = self.boxes.clone();
        for cut in &other.boxes {
            boxes = boxes.iter().flat_map(|b| b.subtract(cut)).collect();
        }
        let mut out = RegionSet { dim: self.dim, boxes };
        out.coalesce();
        out
    }

    /// Minkowski dilation by the l-inf ball of radius `r`.
    pub fn dilate(&self, r: i64) -> RegionSet {
        assert!(r >= 0);
        let grown: Vec<IBox> = self.boxes.iter().map(|b| b.grow(self.dim, r)).collect();
        RegionSet::from_boxes(self.dim, &grown)
    }

    /// Erosion: nodes whose closed l-inf ball of radius `r` lies inside the
    /// region. Computed as the complement of the dilated complement so that
    /// re-entrant corners of box unions erode correctly.
    pub fn erode(&self, r: i64) -> RegionSet {
        assert!(r >= 0);
        if r == 0 || self.is_empty() {
            return self.clone();
        }
        let frame = self.bounding_box().unwrap().grow(self.dim, r);
        let complement = RegionSet::from_box(self.dim, frame).subtract(self);
        self.subtract(&complement.dilate(r))
    }

    /// Refine node indices by 2 (box-wise; exact for node regions).
    pub fn refine(&self) -> RegionSet {
        RegionSet { dim: self.dim, boxes: self.boxes.iter().map(IBox::refine).collect() }
    }

    /// Coarse nodes coincident with a node of this region.
    pub fn coarsen(&self) -> RegionSet {
        let boxes: Vec<IBox> = self.boxes.iter().filter_map(IBox::coarsen).collect();
        RegionSet::from_boxes(self.dim, &boxes)
    }

    pub fn iter_nodes(&self) -> impl Iterator<Item = Idx> + '_ {
        self.boxes.iter().flat_map(|b| b.iter())
    }

    /// Merge disjoint boxes that tile a larger box, one sorted sweep per axis.
    /// Keeps the normal form small after repeated set operations.
    fn coalesce(&mut self) {
        for axis in 0..self.dim {
            if self.boxes.len() < 2 {
                return;
            }
            let key = |b: &IBox, d: usize| -> [i64; 5] {
                let mut k = [0i64; 5];
                let mut n = 0;
                for o in 0..3 {
                    if o != d {
                        k[n] = b.lo[o];
                        k[n + 1] = b.hi[o];
                        n += 2;
                    }
                }
                k[4] = b.lo[d];
                k
            };
            self.boxes.sort_by_key(|b| key(b, axis));
            let mut out: Vec<IBox> = Vec::with_capacity(self.boxes.len());
            for b in self.boxes.drain(..) {
                match out.last_mut() {
                    Some(prev)
                        if key(prev, axis)[..4] == key(&b, axis)[..4]
                            && prev.hi[axis] + 1 == b.lo[axis] =>
                    {
                        prev.hi[axis] = b.hi[axis];
                    }
                    _ => out.push(b),
                }
            }
            self.boxes = out;
        }
    }
}

/// Nodes of `region` whose l-inf ball of radius `r` stays inside the region.
pub fn epsilon_interior(region: &RegionSet, r: i64) -> RegionSet {
    region.erode(r)
}

/// `region` dilated by `r`, clipped to `domain`.
pub fn grow_region(region: &RegionSet, r: i64, domain: &IBox) -> RegionSet {
    region.dilate(r).intersect_box(domain)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force membership oracle for erosion over a bounding frame.
    fn erode_oracle(region: &RegionSet, r: i64) -> Vec<Idx> {
        let mut out = Vec::new();
        let dim = region.dim();
        for p in region.iter_nodes() {
            let ball = IBox::new(p, p).grow(dim, r);
            if ball.iter().all(|q| region.contains(q)) {
                out.push(p);
            }
        }
        out.sort();
        out
    }

    fn as_sorted_nodes(r: &RegionSet) -> Vec<Idx> {
        let mut v: Vec<Idx> = r.iter_nodes().collect();
        v.sort();
        v
    }

    #[test]
    fn normal_form_is_disjoint_and_counts_nodes_once() {
        let r = RegionSet::from_boxes(
            2,
            &[IBox::new([0, 0, 0], [4, 4, 0]), IBox::new([2, 2, 0], [6, 6, 0])],
        );
        // 25 + 25 - 9 overlapping
        assert_eq!(r.num_nodes(), 41);
        for p in IBox::new([-1, -1, 0], [7, 7, 0]).iter() {
            let hits = r.boxes().iter().filter(|b| b.contains(p)).count();
            assert!(hits <= 1, "node {p:?} stored twice");
        }
    }

    #[test]
    fn erode_identity_at_zero_radius() {
        let r = RegionSet::from_box(1, IBox::new([0, 0, 0], [8, 0, 0]));
        assert_eq!(epsilon_interior(&r, 0), r);
    }

    #[test]
    fn erode_interval() {
        let r = RegionSet::from_box(1, IBox::new([0, 0, 0], [8, 0, 0]));
        let e = epsilon_interior(&r, 1);
        assert_eq!(e.boxes(), &[IBox::new([1, 0, 0], [7, 0, 0])]);
    }

    #[test]
    fn erode_l_shape_handles_reentrant_corner() {
        // L-shaped union: erosion must also retreat from the re-entrant corner,
        // which per-box erosion would miss.
        let r = RegionSet::from_boxes(
            2,
            &[IBox::new([0, 0, 0], [10, 4, 0]), IBox::new([0, 0, 0], [4, 10, 0])],
        );
        let got = as_sorted_nodes(&epsilon_interior(&r, 1));
        assert_eq!(got, erode_oracle(&r, 1));
        // The re-entrant corner node (4,4) survives only if its full ball is
        // inside; node (4,4) has neighbor (5,5) outside the L, so it must go.
        assert!(!epsilon_interior(&r, 1).contains([4, 4, 0]));
    }

    #[test]
    fn grow_interval_and_clip_to_domain() {
        let domain = IBox::new([0, 0, 0], [8, 0, 0]);
        let r = RegionSet::from_box(1, IBox::new([2, 0, 0], [6, 0, 0]));
        let g = grow_region(&r, 2, &domain);
        assert_eq!(g.boxes(), &[IBox::new([0, 0, 0], [8, 0, 0])]);
        let g = grow_region(&r, 4, &domain);
        assert_eq!(g.boxes(), &[domain]);
    }

    #[test]
    fn dilate_then_erode_recovers_rectangles() {
        let r = RegionSet::from_box(2, IBox::new([3, 3, 0], [9, 7, 0]));
        assert_eq!(as_sorted_nodes(&r.dilate(2).erode(2)), as_sorted_nodes(&r));
    }

    #[test]
    fn union_subtract_roundtrip() {
        let a = RegionSet::from_box(2, IBox::new([0, 0, 0], [5, 5, 0]));
        let b = RegionSet::from_box(2, IBox::new([3, 2, 0], [8, 8, 0]));
        let u = a.union(&b);
        assert_eq!(u.num_nodes(), 36 + 42 - 12);
        let back = u.subtract(&b);
        // a \ b
        assert_eq!(back.num_nodes(), 36 - 12);
        assert!(a.contains_region(&back));
    }

    #[test]
    fn containment_queries() {
        let r = RegionSet::from_boxes(
            2,
            &[IBox::new([0, 0, 0], [4, 8, 0]), IBox::new([4, 0, 0], [8, 8, 0])],
        );
        // The union tiles [0,8]^2 even though neither box alone contains it.
        assert!(r.contains_box(&IBox::new([0, 0, 0], [8, 8, 0])));
        assert!(!r.contains_box(&IBox::new([0, 0, 0], [9, 8, 0])));
    }
}
