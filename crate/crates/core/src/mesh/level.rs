//! Refinement levels and the mesh hierarchy.

use serde::{Deserialize, Serialize};

use super::ibox::{IBox, Idx};
use super::region::RegionSet;
use crate::error::{Error, Result};

/// Construction parameters shared by `build_hierarchy` and `regrid`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MeshParams {
    /// Ghost nodes per side on every patch.
    pub ghost_width: i64,
    /// Granularity of boxes produced by regrid, in parent-level cells.
    pub blocking_factor: i64,
    /// Tagged regions are dilated by this many nodes before covering.
    pub buffer: i64,
    /// Boxes larger than this (cells per axis) are chopped into patches.
    pub max_patch_cells: i64,
}

impl Default for MeshParams {
    fn default() -> Self {
        MeshParams { ghost_width: 2, blocking_factor: 8, buffer: 1, max_patch_cells: 32 }
    }
}

/// One uniform-spacing refinement level: a union of node-centered patches.
/// Patch interiors are disjoint; adjacent patches share their face nodes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Level {
    pub index: usize,
    pub spacing: [f64; 3],
    /// Whole-domain node box at this level's resolution.
    pub domain: IBox,
    pub patches: Vec<IBox>,
    /// Normalized union of the patches.
    pub region: RegionSet,
    /// Disjoint ownership: `owned[i]` is patch i's share of the shared-face
    /// nodes, used for counting and reductions that must visit nodes once.
    pub owned: Vec<RegionSet>,
}

impl Level {
    pub fn new(dim: usize, index: usize, spacing: [f64; 3], domain: IBox, patches: Vec<IBox>) -> Self {
        let region = RegionSet::from_boxes(dim, &patches);
        let mut owned = Vec::with_capacity(patches.len());
        let mut seen = RegionSet::empty(dim);
        for p in &patches {
            let mine = RegionSet::from_box(dim, *p).subtract(&seen);
            seen = seen.union(&mine);
            owned.push(mine);
        }
        Level { index, spacing, domain, patches, region, owned }
    }

    pub fn num_nodes(&self) -> usize {
        self.region.num_nodes()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Hierarchy {
    pub dim: usize,
    pub phys_lo: [f64; 3],
    pub phys_hi: [f64; 3],
    pub params: MeshParams,
    pub levels: Vec<Level>,
}

impl Hierarchy {
    /// Physical position of node `idx` on level `lev`.
    pub fn node_pos(&self, lev: usize, idx: Idx) -> [f64; 3] {
        let sp = self.levels[lev].spacing;
        let mut x = [0.0; 3];
        for d in 0..3 {
            x[d] = self.phys_lo[d] + idx[d] as f64 * sp[d];
        }
        x
    }

    pub fn finest(&self) -> usize {
        self.levels.len() - 1
    }

    /// Total nodes summed over levels (covered coarse nodes included).
    pub fn total_nodes(&self) -> usize {
        self.levels.iter().map(Level::num_nodes).sum()
    }

    /// Checks that every patch of level `m`, grown by the ghost width and
    /// clipped to the domain, can be interpolated from level `m-1`: the
    /// coarse interpolation cell of every such fine node must lie in the
    /// parent region. The test runs in coarse indices (outward rounding), so
    /// cells straddling two abutting parent boxes are judged correctly.
    pub fn check_nesting(&self) -> Result<()> {
        for m in 1..self.levels.len() {
            let fine = &self.levels[m];
            let parent = &self.levels[m - 1].region;
            for p in &fine.patches {
                let grown = p.grow(self.dim, self.params.ghost_width);
                let clipped = RegionSet::from_box(self.dim, grown).intersect_box(&fine.domain);
                for b in clipped.boxes() {
                    let mut lo = [0i64; 3];
                    let mut hi = [0i64; 3];
                    for d in 0..3 {
                        lo[d] = b.lo[d].div_euclid(2);
                        hi[d] = (b.hi[d] + 1).div_euclid(2);
                    }
                    if !parent.contains_box(&IBox::new(lo, hi)) {
                        return Err(Error::Mesh(format!(
                            "level {m} patch {p:?} grown by {} is not nested in level {}",
                            self.params.ghost_width,
                            m - 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Builds a hierarchy containing only the unrefined base level.
pub fn build_hierarchy(
    dim: usize,
    phys_lo: [f64; 3],
    phys_hi: [f64; 3],
    base_cells: [usize; 3],
    params: MeshParams,
) -> Result<Hierarchy> {
    if dim == 0 || dim > 3 {
        return Err(Error::Mesh(format!("dimension must be 1..=3, got {dim}")));
    }
    let mut spacing = [1.0; 3];
    for d in 0..dim {
        if base_cells[d] == 0 {
            return Err(Error::Mesh(format!("axis {d} has zero cells")));
        }
        let len = phys_hi[d] - phys_lo[d];
        if !(len > 0.0) {
            return Err(Error::Mesh(format!("axis {d} has non-positive extent {len}")));
        }
        spacing[d] = len / base_cells[d] as f64;
    }
    if params.ghost_width < 1 || params.blocking_factor < 1 || params.buffer < 0 {
        return Err(Error::Mesh("ghost_width >= 1, blocking_factor >= 1, buffer >= 0".into()));
    }
    let domain = IBox::from_cells(dim, base_cells);
    let patches = domain.chop(dim, params.max_patch_cells);
    let base = Level::new(dim, 0, spacing, domain, patches);
    Ok(Hierarchy { dim, phys_lo, phys_hi, params, levels: vec![base] })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_level_node_count_and_spacing() {
        let h = build_hierarchy(2, [0.0, 0.0, 0.0], [1.0, 1.0, 0.0], [8, 8, 0], MeshParams::default())
            .unwrap();
        assert_eq!(h.levels.len(), 1);
        assert_eq!(h.levels[0].num_nodes(), 81);
        assert!((h.levels[0].spacing[0] - 0.125).abs() < 1e-15);
        let x = h.node_pos(0, [8, 0, 0]);
        assert!((x[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn eshelby_scale_base_mesh() {
        let h = build_hierarchy(
            3,
            [-4.0, -4.0, -4.0],
            [4.0, 4.0, 4.0],
            [32, 32, 32],
            MeshParams::default(),
        )
        .unwrap();
        assert_eq!(h.levels[0].num_nodes(), 33 * 33 * 33);
        assert!((h.levels[0].spacing[2] - 0.25).abs() < 1e-15);
        // chopped into 32-cell patches -> still a single patch
        assert_eq!(h.levels[0].patches.len(), 1);
    }

    #[test]
    fn zero_resolution_rejected() {
        let r = build_hierarchy(2, [0.0; 3], [1.0, 1.0, 0.0], [8, 0, 0], MeshParams::default());
        assert!(r.is_err());
        let r = build_hierarchy(2, [0.0; 3], [-1.0, 1.0, 0.0], [8, 8, 0], MeshParams::default());
        assert!(r.is_err());
    }

    #[test]
    fn ownership_partitions_shared_faces() {
        let h = build_hierarchy(
            2,
            [0.0; 3],
            [1.0, 1.0, 0.0],
            [64, 64, 0],
            MeshParams { max_patch_cells: 32, ..Default::default() },
        )
        .unwrap();
        let lev = &h.levels[0];
        assert_eq!(lev.patches.len(), 4);
        let total: usize = lev.owned.iter().map(RegionSet::num_nodes).sum();
        assert_eq!(total, 65 * 65);
        assert_eq!(lev.num_nodes(), 65 * 65);
    }
}
