//! Node-centered patch data with ghost frames.
//!
//! Storage is AoS per patch: `data[node_offset * ncomp + c]` over the ghost
//! frame, x fastest. Spatially uniform fields (homogeneous coefficients) are
//! stored broadcast and densified only if written to.

use rayon::prelude::*;

use super::ibox::{IBox, Idx};
use super::level::Level;
use super::region::RegionSet;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
enum Data {
    Dense(Vec<f64>),
    /// One value per component, broadcast over the frame.
    Uniform(Vec<f64>),
}

#[derive(Clone, Debug)]
pub struct PatchStore {
    pub valid: IBox,
    pub frame: IBox,
    ncomp: usize,
    data: Data,
}

impl PatchStore {
    fn zeros(valid: IBox, frame: IBox, ncomp: usize) -> Self {
        let n = frame.num_nodes() * ncomp;
        PatchStore { valid, frame, ncomp, data: Data::Dense(vec![0.0; n]) }
    }

    fn uniform(valid: IBox, frame: IBox, ncomp: usize, vals: Vec<f64>) -> Self {
        assert_eq!(vals.len(), ncomp);
        PatchStore { valid, frame, ncomp, data: Data::Uniform(vals) }
    }

    pub fn ncomp(&self) -> usize {
        self.ncomp
    }

    /// Node offset within the frame, in node units.
    #[inline]
    pub fn offset(&self, p: Idx) -> usize {
        debug_assert!(self.frame.contains(p), "{p:?} outside frame {:?}", self.frame);
        let ex = self.frame.extent(0);
        let ey = self.frame.extent(1);
        (((p[2] - self.frame.lo[2]) * ey + (p[1] - self.frame.lo[1])) * ex
            + (p[0] - self.frame.lo[0])) as usize
    }

    /// Frame strides in node units: moving one node along axis d advances the
    /// node offset by `stride(d)`.
    #[inline]
    pub fn stride(&self, d: usize) -> usize {
        match d {
            0 => 1,
            1 => self.frame.extent(0) as usize,
            _ => (self.frame.extent(0) * self.frame.extent(1)) as usize,
        }
    }

    #[inline]
    pub fn get(&self, p: Idx, c: usize) -> f64 {
        debug_assert!(c < self.ncomp);
        match &self.data {
            Data::Dense(v) => v[self.offset(p) * self.ncomp + c],
            Data::Uniform(vals) => vals[c],
        }
    }

    #[inline]
    pub fn set(&mut self, p: Idx, c: usize, value: f64) {
        debug_assert!(c < self.ncomp);
        let off = self.offset(p) * self.ncomp + c;
        self.densify();
        match &mut self.data {
            Data::Dense(v) => v[off] = value,
            Data::Uniform(_) => unreachable!(),
        }
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self.data, Data::Uniform(_))
    }

    pub fn uniform_vals(&self) -> Option<&[f64]> {
        match &self.data {
            Data::Uniform(v) => Some(v),
            Data::Dense(_) => None,
        }
    }

    fn densify(&mut self) {
        if let Data::Uniform(vals) = &self.data {
            let n = self.frame.num_nodes();
            let mut dense = Vec::with_capacity(n * self.ncomp);
            for _ in 0..n {
                dense.extend_from_slice(vals);
            }
            self.data = Data::Dense(dense);
        }
    }

    /// Dense storage view; uniform patches densify first.
    pub fn slice_mut(&mut self) -> &mut [f64] {
        self.densify();
        match &mut self.data {
            Data::Dense(v) => v,
            Data::Uniform(_) => unreachable!(),
        }
    }

    pub fn slice(&self) -> Option<&[f64]> {
        match &self.data {
            Data::Dense(v) => Some(v),
            Data::Uniform(_) => None,
        }
    }
}

/// Read-only coefficient view by node offset. Uniform fields answer from the
/// broadcast values, so they cost neither memory nor bandwidth; the enum tag
/// is constant within a kernel loop and branch-predicts away.
pub enum Reader<'a> {
    Dense { data: &'a [f64], ncomp: usize },
    Uniform { vals: &'a [f64] },
}

impl Reader<'_> {
    #[inline(always)]
    pub fn get(&self, node_off: usize, c: usize) -> f64 {
        match self {
            Reader::Dense { data, ncomp } => data[node_off * ncomp + c],
            Reader::Uniform { vals } => vals[c],
        }
    }

    /// True when all nodes hold the same values (spatial gradients vanish).
    pub fn is_uniform(&self) -> bool {
        matches!(self, Reader::Uniform { .. })
    }
}

impl PatchStore {
    pub fn reader(&self) -> Reader<'_> {
        match &self.data {
            Data::Dense(v) => Reader::Dense { data: v, ncomp: self.ncomp },
            Data::Uniform(vals) => Reader::Uniform { vals },
        }
    }
}

/// A multi-component node field over the patches of one level.
#[derive(Clone, Debug)]
pub struct NodeField {
    pub dim: usize,
    pub ncomp: usize,
    pub ghost: i64,
    patches: Vec<PatchStore>,
    ghosts_filled: bool,
}

impl NodeField {
    pub fn zeros(level: &Level, dim: usize, ncomp: usize, ghost: i64) -> Self {
        Self::zeros_on(&level.patches, dim, ncomp, ghost)
    }

    pub fn zeros_on(patches: &[IBox], dim: usize, ncomp: usize, ghost: i64) -> Self {
        let stores = patches
            .iter()
            .map(|b| PatchStore::zeros(*b, b.grow(dim, ghost), ncomp))
            .collect();
        // A zero field is self-consistent, so its ghosts count as filled.
        NodeField { dim, ncomp, ghost, patches: stores, ghosts_filled: true }
    }

    /// Broadcast field: every node of every patch holds `vals`.
    pub fn uniform_on(patches: &[IBox], dim: usize, ghost: i64, vals: &[f64]) -> Self {
        let ncomp = vals.len();
        let stores = patches
            .iter()
            .map(|b| PatchStore::uniform(*b, b.grow(dim, ghost), ncomp, vals.to_vec()))
            .collect();
        NodeField { dim, ncomp, ghost, patches: stores, ghosts_filled: true }
    }

    /// Synthesizes values everywhere, ghost frames included, from a pointwise
    /// function of physical position. `pos` maps a node index to coordinates.
    pub fn from_fn_on(
        patches: &[IBox],
        dim: usize,
        ncomp: usize,
        ghost: i64,
        pos: &(impl Fn(Idx) -> [f64; 3] + Sync),
        f: &(impl Fn([f64; 3], usize) -> f64 + Sync),
    ) -> Self {
        let mut field = Self::zeros_on(patches, dim, ncomp, ghost);
        field.patches.par_iter_mut().for_each(|p| {
            let frame = p.frame;
            let ncomp = p.ncomp;
            let data = p.slice_mut();
            let mut off = 0;
            for idx in frame.iter() {
                let x = pos(idx);
                for c in 0..ncomp {
                    data[off * ncomp + c] = f(x, c);
                }
                off += 1;
            }
        });
        field.ghosts_filled = true;
        field
    }

    pub fn num_patches(&self) -> usize {
        self.patches.len()
    }

    pub fn patch(&self, i: usize) -> &PatchStore {
        &self.patches[i]
    }

    pub fn patch_mut(&mut self, i: usize) -> &mut PatchStore {
        &mut self.patches[i]
    }

    pub fn patches(&self) -> &[PatchStore] {
        &self.patches
    }

    pub fn patches_mut(&mut self) -> &mut [PatchStore] {
        &mut self.patches
    }

    pub fn par_patches_mut(&mut self) -> rayon::slice::IterMut<'_, PatchStore> {
        self.patches.par_iter_mut()
    }

    pub fn ghosts_filled(&self) -> bool {
        self.ghosts_filled
    }

    pub fn set_ghosts_filled(&mut self, filled: bool) {
        self.ghosts_filled = filled;
    }

    pub fn require_ghosts(&self, what: &str) -> Result<()> {
        if self.ghosts_filled {
            Ok(())
        } else {
            Err(Error::StaleGhosts(format!("{what} requires filled ghost nodes")))
        }
    }

    /// Value at a node owned by some patch (first match wins; shared-face
    /// duplicates hold identical values).
    pub fn at(&self, p: Idx, c: usize) -> Option<f64> {
        self.patches.iter().find(|s| s.valid.contains(p)).map(|s| s.get(p, c))
    }

    pub fn fill(&mut self, value: f64) {
        self.patches.par_iter_mut().for_each(|p| p.slice_mut().fill(value));
    }

    pub fn copy_values_from(&mut self, other: &NodeField) {
        assert_eq!(self.ncomp, other.ncomp);
        assert_eq!(self.patches.len(), other.patches.len());
        self.patches
            .par_iter_mut()
            .zip(other.patches.par_iter())
            .for_each(|(dst, src)| match src.slice() {
                Some(s) => dst.slice_mut().copy_from_slice(s),
                None => {
                    let vals = src.uniform_vals().unwrap().to_vec();
                    let ncomp = dst.ncomp;
                    for chunk in dst.slice_mut().chunks_mut(ncomp) {
                        chunk.copy_from_slice(&vals);
                    }
                }
            });
        self.ghosts_filled = other.ghosts_filled;
    }

    /// Max absolute value over the owned (disjoint) node sets of each patch.
    pub fn max_abs_owned(&self, owned: &[RegionSet]) -> f64 {
        assert_eq!(owned.len(), self.patches.len());
        self.patches
            .par_iter()
            .zip(owned.par_iter())
            .map(|(p, own)| {
                let mut m: f64 = 0.0;
                for b in own.boxes() {
                    for idx in b.iter() {
                        let off = p.offset(idx) * p.ncomp;
                        if let Some(s) = p.slice() {
                            for c in 0..p.ncomp {
                                m = m.max(s[off + c].abs());
                            }
                        } else {
                            for v in p.uniform_vals().unwrap() {
                                m = m.max(v.abs());
                            }
                        }
                    }
                }
                m
            })
            .reduce(|| 0.0, f64::max)
    }
}
