//! Data motion: same-level ghost exchange, coarse-to-fine interpolation,
//! fine-to-coarse restriction.
//!
//! Refinement is always by 2, so a fine node is either coincident with a
//! coarse node (even index) or sits midway between coarse nodes (odd index).
//! Interpolation injects at coincident nodes and is multilinear in between;
//! restriction is full-weighting with the 1D weights (1/4, 1/2, 1/4) applied
//! as a tensor product.

use rayon::prelude::*;

use super::field::NodeField;
use super::ibox::{IBox, Idx};
use super::level::Level;
use super::region::RegionSet;
use crate::error::Result;

#[inline]
fn fw_weight(o: i64) -> f64 {
    if o == 0 {
        0.5
    } else {
        0.25
    }
}

/// Precomputed copy schedule for same-level ghost exchange. Ghost nodes
/// covered by a neighbor patch's valid box receive that patch's values.
pub struct ExchangePlan {
    /// Per destination patch: (source patch, node box to copy).
    ops: Vec<Vec<(usize, IBox)>>,
    /// Flat op order used to align gather buffers with scatter.
    flat: Vec<(usize, usize, IBox)>,
}

impl ExchangePlan {
    pub fn build(level: &Level, dim: usize, ghost: i64) -> Self {
        let n = level.patches.len();
        let mut ops: Vec<Vec<(usize, IBox)>> = vec![Vec::new(); n];
        for (dst, dbox) in level.patches.iter().enumerate() {
            let frame = dbox.grow(dim, ghost);
            let ghost_boxes: Vec<IBox> = frame.subtract(dbox);
            for (src, sbox) in level.patches.iter().enumerate() {
                if src == dst {
                    continue;
                }
                for g in &ghost_boxes {
                    if let Some(copy) = g.intersect(sbox) {
                        ops[dst].push((src, copy));
                    }
                }
            }
        }
        let mut flat = Vec::new();
        for (dst, list) in ops.iter().enumerate() {
            for (src, b) in list {
                flat.push((dst, *src, *b));
            }
        }
        ExchangePlan { ops, flat }
    }

    pub fn apply(&self, field: &mut NodeField) {
        // Gather from sources read-only, then scatter into destinations; the
        // two phases keep borrows disjoint and the result order-independent.
        let bufs: Vec<Vec<f64>> = self
            .flat
            .par_iter()
            .map(|(_, src, b)| {
                let p = field.patch(*src);
                let ncomp = p.ncomp();
                let mut buf = Vec::with_capacity(b.num_nodes() * ncomp);
                for idx in b.iter() {
                    for c in 0..ncomp {
                        buf.push(p.get(idx, c));
                    }
                }
                buf
            })
            .collect();
        let mut offsets = vec![0usize; self.ops.len() + 1];
        for (i, list) in self.ops.iter().enumerate() {
            offsets[i + 1] = offsets[i] + list.len();
        }
        let ops = &self.ops;
        field
            .par_patches_mut()
            .enumerate()
            .for_each(|(dst, patch)| {
                for (k, (_, b)) in ops[dst].iter().enumerate() {
                    let buf = &bufs[offsets[dst] + k];
                    let ncomp = patch.ncomp();
                    let mut at = 0;
                    for idx in b.iter() {
                        for c in 0..ncomp {
                            patch.set(idx, c, buf[at]);
                            at += 1;
                        }
                    }
                }
            });
    }
}

/// One-off same-level ghost exchange.
pub fn exchange_same_level(field: &mut NodeField, level: &Level) {
    ExchangePlan::build(level, field.dim, field.ghost).apply(field);
}

#[inline]
fn interp_at(coarse: &super::field::PatchStore, p: Idx, c: usize, dim: usize) -> f64 {
    let mut base = [0i64; 3];
    let mut frac = [0i64; 3];
    for d in 0..dim {
        base[d] = p[d].div_euclid(2);
        frac[d] = p[d].rem_euclid(2);
    }
    let mut v = 0.0;
    for corner in 0..(1usize << dim) {
        let mut w = 1.0;
        let mut q = base;
        let mut skip = false;
        for d in 0..dim {
            if (corner >> d) & 1 == 1 {
                if frac[d] == 0 {
                    skip = true;
                    break;
                }
                q[d] += 1;
                w *= 0.5;
            } else if frac[d] == 1 {
                w *= 0.5;
            }
        }
        if !skip {
            v += w * coarse.get(q, c);
        }
    }
    v
}

/// Fills all ghost nodes of `fine` that lie inside the domain: first from
/// same-level neighbors, then by interpolating the coarse level into whatever
/// remains (the coarse/fine ghost frame). Pass `None` for the base level.
pub fn fill_ghost(
    fine: &mut NodeField,
    fine_level: &Level,
    coarse: Option<(&NodeField, &Level)>,
) -> Result<()> {
    exchange_same_level(fine, fine_level);
    if let Some((cf, _cl)) = coarse {
        // Donor nodes always lie inside some coarse patch's valid box, so
        // the coarse field's own ghost state does not matter here.
        let dim = fine.dim;
        let ghost = fine.ghost;
        let level_region = &fine_level.region;
        let domain = fine_level.domain;
        // Per fine patch: ghost nodes inside the domain not covered by the
        // fine level itself, batched by donor coarse patch.
        let fine_patches: Vec<IBox> = fine_level.patches.clone();
        let coarse_stores = cf.patches();
        fine
            .par_patches_mut()
            .enumerate()
            .for_each(|(i, patch)| {
                let frame = fine_patches[i].grow(dim, ghost);
                let ghost_region = RegionSet::from_boxes(dim, &frame.subtract(&fine_patches[i]))
                    .intersect_box(&domain)
                    .subtract(level_region);
                for cp in coarse_stores {
                    let donor_cover = cp.valid.refine();
                    for gb in ghost_region.boxes() {
                        if let Some(fill) = gb.intersect(&donor_cover) {
                            for idx in fill.iter() {
                                for c in 0..patch.ncomp() {
                                    let v = interp_at(cp, idx, c, dim);
                                    patch.set(idx, c, v);
                                }
                            }
                        }
                    }
                }
            });
    }
    fine.set_ghosts_filled(true);
    Ok(())
}

/// Overwrites every fine valid node with coarse data: injection at coincident
/// nodes, multilinear between. Ghost nodes are not touched.
pub fn interpolate(coarse: &NodeField, fine: &mut NodeField, fine_level: &Level) {
    let dim = fine.dim;
    let coarse_stores = coarse.patches();
    let fine_boxes: Vec<IBox> = fine_level.patches.clone();
    fine.par_patches_mut().enumerate().for_each(|(i, patch)| {
        for cp in coarse_stores {
            if let Some(b) = fine_boxes[i].intersect(&cp.valid.refine()) {
                for idx in b.iter() {
                    for c in 0..patch.ncomp() {
                        let v = interp_at(cp, idx, c, dim);
                        patch.set(idx, c, v);
                    }
                }
            }
        }
    });
    fine.set_ghosts_filled(false);
}

/// Adds the interpolated coarse field to fine valid nodes (fine += I(coarse)).
pub fn interpolate_add(coarse: &NodeField, fine: &mut NodeField, fine_level: &Level) {
    let dim = fine.dim;
    let coarse_stores = coarse.patches();
    let fine_boxes: Vec<IBox> = fine_level.patches.clone();
    fine.par_patches_mut().enumerate().for_each(|(i, patch)| {
        for cp in coarse_stores {
            if let Some(b) = fine_boxes[i].intersect(&cp.valid.refine()) {
                for idx in b.iter() {
                    for c in 0..patch.ncomp() {
                        let v = patch.get(idx, c) + interp_at(cp, idx, c, dim);
                        patch.set(idx, c, v);
                    }
                }
            }
        }
    });
    fine.set_ghosts_filled(false);
}

/// Adds the interpolated coarse increment `new - old` to fine valid nodes.
pub fn interpolate_add_delta(
    coarse_new: &NodeField,
    coarse_old: &NodeField,
    fine: &mut NodeField,
    fine_level: &Level,
) {
    let dim = fine.dim;
    let new_stores = coarse_new.patches();
    let old_stores = coarse_old.patches();
    let fine_boxes: Vec<IBox> = fine_level.patches.clone();
    fine.par_patches_mut().enumerate().for_each(|(i, patch)| {
        for (cp_new, cp_old) in new_stores.iter().zip(old_stores) {
            if let Some(b) = fine_boxes[i].intersect(&cp_new.valid.refine()) {
                for idx in b.iter() {
                    for c in 0..patch.ncomp() {
                        let delta =
                            interp_at(cp_new, idx, c, dim) - interp_at(cp_old, idx, c, dim);
                        let v = patch.get(idx, c) + delta;
                        patch.set(idx, c, v);
                    }
                }
            }
        }
    });
    fine.set_ghosts_filled(false);
}

/// Full-weight stencil: offsets in {-1,0,1}^dim with tensor-product weights.
fn fw_stencil(dim: usize) -> Vec<(Idx, f64)> {
    let mut out = vec![([0i64; 3], 1.0)];
    for d in 0..dim {
        let mut next = Vec::with_capacity(out.len() * 3);
        for (off, w) in &out {
            for o in -1i64..=1 {
                let mut q = *off;
                q[d] = o;
                next.push((q, w * fw_weight(o)));
            }
        }
        out = next;
    }
    out
}

fn full_weight_into(
    fine: &NodeField,
    targets_per_fine: &[(usize, Vec<IBox>)],
    coarse: &mut NodeField,
) {
    let stencil = fw_stencil(fine.dim);
    // Gather: one buffer per (fine patch, coarse target box).
    let bufs: Vec<(IBox, Vec<f64>)> = targets_per_fine
        .par_iter()
        .flat_map(|(fp, boxes)| {
            let patch = fine.patch(*fp);
            let ncomp = patch.ncomp();
            let stencil = &stencil;
            boxes
                .par_iter()
                .map(move |cbox| {
                    let mut buf = Vec::with_capacity(cbox.num_nodes() * ncomp);
                    for cidx in cbox.iter() {
                        for c in 0..ncomp {
                            let mut v = 0.0;
                            for (off, w) in stencil {
                                let q = [
                                    2 * cidx[0] + off[0],
                                    2 * cidx[1] + off[1],
                                    2 * cidx[2] + off[2],
                                ];
                                v += w * patch.get(q, c);
                            }
                            buf.push(v);
                        }
                    }
                    (*cbox, buf)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    // Scatter into coarse patches; overlap writes agree because all donor
    // patches see consistent data on shared nodes.
    for store in coarse.patches_mut() {
        for (cbox, buf) in &bufs {
            if let Some(b) = cbox.intersect(&store.valid) {
                let ncomp = store.ncomp();
                for idx in b.iter() {
                    let row = cbox_offset(cbox, idx) * ncomp;
                    for c in 0..ncomp {
                        store.set(idx, c, buf[row + c]);
                    }
                }
            }
        }
    }
    coarse.set_ghosts_filled(false);
}

#[inline]
fn cbox_offset(b: &IBox, p: Idx) -> usize {
    let ex = b.extent(0);
    let ey = b.extent(1);
    (((p[2] - b.lo[2]) * ey + (p[1] - b.lo[1])) * ex + (p[0] - b.lo[0])) as usize
}

/// Coarse nodes overwritten by `restrict_solution`: the epsilon-interior of
/// the grown fine region, coarsened. This reaches the coarse/fine boundary
/// nodes but stays off the domain boundary layer.
pub fn restriction_targets(fine_level: &Level) -> RegionSet {
    super::region::epsilon_interior(
        &super::region::grow_region(&fine_level.region, 1, &fine_level.domain),
        1,
    )
    .coarsen()
}

/// Solver-side restriction: coarse nodes under `restriction_targets` are
/// replaced by the full-weight restriction of the fine solution. The stencil
/// reaches one node outside the fine valid region, so fine ghosts must be
/// filled.
pub fn restrict_solution(
    fine: &NodeField,
    fine_level: &Level,
    coarse: &mut NodeField,
) -> Result<()> {
    fine.require_ghosts("restrict_solution")?;
    let dim = fine.dim;
    let targets = restriction_targets(fine_level);
    // Batch targets by the fine patch whose valid box holds the coincident
    // fine node; the +/-1 reads then stay inside that patch's frame.
    let plans: Vec<(usize, Vec<IBox>)> = fine_level
        .patches
        .iter()
        .enumerate()
        .map(|(fp, fbox)| {
            let cover = fbox
                .coarsen()
                .map(|cb| targets.intersect_box(&cb))
                .unwrap_or_else(|| RegionSet::empty(dim));
            (fp, cover.boxes().to_vec())
        })
        .collect();
    full_weight_into(fine, &plans, coarse);
    Ok(())
}

/// Synchronization restriction: coarse nodes under the epsilon-interior of
/// the fine valid region get the full-weight restriction; only valid fine
/// data (plus a same-level exchange) is read.
pub fn average_down(fine: &mut NodeField, fine_level: &Level, coarse: &mut NodeField) {
    exchange_same_level(fine, fine_level);
    let dim = fine.dim;
    let targets = super::region::epsilon_interior(&fine_level.region, 1).coarsen();
    let plans: Vec<(usize, Vec<IBox>)> = fine_level
        .patches
        .iter()
        .enumerate()
        .map(|(fp, fbox)| {
            let cover = fbox
                .coarsen()
                .map(|cb| targets.intersect_box(&cb))
                .unwrap_or_else(|| RegionSet::empty(dim));
            (fp, cover.boxes().to_vec())
        })
        .collect();
    full_weight_into(fine, &plans, coarse);
}

/// Restriction that reaches every covered coarse node: `average_down` where
/// the full-weight stencil fits, plus coincident injection on the remaining
/// ring. On full-domain levels this covers the physical boundary, which is
/// what coefficient coarsening and sub-level residual restriction both need.
pub fn restrict_covering(fine: &mut NodeField, fine_level: &Level, coarse: &mut NodeField) {
    average_down(fine, fine_level, coarse);
    let inner = super::region::epsilon_interior(&fine_level.region, 1).coarsen();
    let ring = fine_level.region.coarsen().subtract(&inner);
    inject_region(fine, fine_level, coarse, &ring);
}

/// Copies valid-node values from one patch layout of a level to another
/// wherever they overlap. Regridding uses this to carry data from the old
/// layout onto the new one after coarse interpolation has filled the rest.
pub fn copy_overlap(src: &NodeField, src_level: &Level, dst: &mut NodeField, dst_level: &Level) {
    assert_eq!(src.ncomp, dst.ncomp, "component counts must match");
    let src_stores = src.patches();
    let dst_boxes = &dst_level.patches;
    let src_boxes = &src_level.patches;
    dst.par_patches_mut().enumerate().for_each(|(di, store)| {
        for (si, sbox) in src_boxes.iter().enumerate() {
            if let Some(b) = dst_boxes[di].intersect(sbox) {
                for idx in b.iter() {
                    for c in 0..store.ncomp() {
                        store.set(idx, c, src_stores[si].get(idx, c));
                    }
                }
            }
        }
    });
    dst.set_ghosts_filled(false);
}

/// Coincident-node injection of fine values into coarse nodes of `region`.
pub fn inject_region(
    fine: &NodeField,
    fine_level: &Level,
    coarse: &mut NodeField,
    region: &RegionSet,
) {
    let fine_stores = fine.patches();
    let fine_boxes = &fine_level.patches;
    coarse.par_patches_mut().for_each(|store| {
        for (fp, fbox) in fine_boxes.iter().enumerate() {
            let Some(cb) = fbox.coarsen() else { continue };
            for rb in region.boxes() {
                if let Some(b) = rb.intersect(&cb).and_then(|x| x.intersect(&store.valid)) {
                    for idx in b.iter() {
                        let fidx = [2 * idx[0], 2 * idx[1], 2 * idx[2]];
                        for c in 0..store.ncomp() {
                            store.set(idx, c, fine_stores[fp].get(fidx, c));
                        }
                    }
                }
            }
        }
    });
    coarse.set_ghosts_filled(false);
}
