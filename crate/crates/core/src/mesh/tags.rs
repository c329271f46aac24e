//! Gradient-based refinement tagging and generation of refined patch layouts.
//!
//! A node is tagged when the scaled gradient magnitude of any field component
//! exceeds a threshold. Tagged regions are buffered, clustered onto a
//! blocking-factor tile grid, merged into rectangles, clipped so the new
//! patches nest inside the parent level, and finally chopped to the patch
//! size limit.

use rayon::prelude::*;

use super::field::NodeField;
use super::ibox::{IBox, Idx};
use super::level::{Level, MeshParams};
use super::region::RegionSet;
use crate::error::Result;

/// Scaled gradient magnitude at one node: sqrt(sum_d (dx_d df/dx_d)^2),
/// undivided central differences inside the domain and one-sided on its
/// faces. The spacing cancels against the difference denominator.
#[inline]
fn grad_indicator(
    patch: &super::field::PatchStore,
    p: Idx,
    c: usize,
    dim: usize,
    domain: &IBox,
) -> f64 {
    let mut s = 0.0;
    for d in 0..dim {
        let mut lo = p;
        let mut hi = p;
        lo[d] -= 1;
        hi[d] += 1;
        let g = if p[d] == domain.lo[d] {
            patch.get(hi, c) - patch.get(p, c)
        } else if p[d] == domain.hi[d] {
            patch.get(p, c) - patch.get(lo, c)
        } else {
            0.5 * (patch.get(hi, c) - patch.get(lo, c))
        };
        s += g * g;
    }
    s.sqrt()
}

/// Tags every node where some component's scaled gradient exceeds
/// `threshold`. Reads one ghost ring, so ghosts must be filled.
pub fn tag_by_gradient(field: &NodeField, level: &Level, threshold: f64) -> Result<RegionSet> {
    field.require_ghosts("tag_by_gradient")?;
    let dim = field.dim;
    let domain = level.domain;
    // Owned regions are disjoint across patches, so the x-runs collected
    // below are globally disjoint and skip the quadratic normalization.
    let runs: Vec<IBox> = level
        .owned
        .par_iter()
        .enumerate()
        .flat_map_iter(|(pi, owned)| {
            let patch = field.patch(pi);
            let mut out = Vec::new();
            for ob in owned.boxes() {
                for z in ob.lo[2]..=ob.hi[2] {
                    for y in ob.lo[1]..=ob.hi[1] {
                        let mut run_start: Option<i64> = None;
                        for x in ob.lo[0]..=ob.hi[0] {
                            let p = [x, y, z];
                            let hit = (0..field.ncomp)
                                .any(|c| grad_indicator(patch, p, c, dim, &domain) > threshold);
                            match (hit, run_start) {
                                (true, None) => run_start = Some(x),
                                (false, Some(s)) => {
                                    out.push(IBox::new([s, y, z], [x - 1, y, z]));
                                    run_start = None;
                                }
                                _ => {}
                            }
                        }
                        if let Some(s) = run_start {
                            out.push(IBox::new([s, y, z], [ob.hi[0], y, z]));
                        }
                    }
                }
            }
            out
        })
        .collect();
    Ok(RegionSet::from_disjoint(dim, runs))
}

/// Merges a set of distinct tile coordinates into disjoint rectangles.
fn merge_tiles(dim: usize, mut tiles: Vec<Idx>) -> Vec<IBox> {
    tiles.sort_unstable();
    tiles.dedup();
    let units: Vec<IBox> = tiles.into_iter().map(|t| IBox::new(t, t)).collect();
    RegionSet::from_disjoint(dim, units).boxes().to_vec()
}

/// Computes the patch layout of the next finer level from tagged nodes on
/// `parent`. Returns refined-index patch boxes; empty when nothing is tagged.
pub fn regrid(parent: &Level, tags: &RegionSet, params: &MeshParams) -> Vec<IBox> {
    if tags.is_empty() {
        return Vec::new();
    }
    let dim = tags.dim();
    let domain = parent.domain;
    let grown = tags.dilate(params.buffer).intersect_box(&domain);
    // Tiles of blocking_factor cells; tile t spans nodes [t*bf, (t+1)*bf].
    let bf = params.blocking_factor;
    let mut tiles: Vec<Idx> = Vec::new();
    for b in grown.boxes() {
        let mut t_lo = [0i64; 3];
        let mut t_hi = [0i64; 3];
        for d in 0..dim {
            t_lo[d] = (b.lo[d] + bf - 1).div_euclid(bf) - 1;
            t_hi[d] = b.hi[d].div_euclid(bf);
            t_lo[d] = t_lo[d].max(domain.lo[d].div_euclid(bf));
            t_hi[d] = t_hi[d].min((domain.hi[d] - 1).div_euclid(bf));
        }
        let tile_box = IBox::new(t_lo, t_hi);
        for t in tile_box.iter() {
            tiles.push(t);
        }
    }
    let rects = merge_tiles(dim, tiles);
    // Tile rectangles to node boxes, clipped to the domain.
    let mut node_boxes: Vec<IBox> = Vec::new();
    for r in &rects {
        let mut lo = [0i64; 3];
        let mut hi = [0i64; 3];
        for d in 0..dim {
            lo[d] = (r.lo[d] * bf).max(domain.lo[d]);
            hi[d] = ((r.hi[d] + 1) * bf).min(domain.hi[d]);
        }
        node_boxes.push(IBox::new(lo, hi));
    }
    // Nesting: a new patch grown by the ghost width (in fine nodes) must stay
    // inside the refined parent region, so clip against the parent region
    // eroded by ceil(ghost/2) coarse nodes everywhere except domain faces.
    let missing = RegionSet::from_box(dim, domain).subtract(&parent.region);
    let allowed = if missing.is_empty() {
        RegionSet::from_box(dim, domain)
    } else {
        let r = (params.ghost_width + 1) / 2;
        RegionSet::from_box(dim, domain).subtract(&missing.dilate(r))
    };
    let mut patches: Vec<IBox> = Vec::new();
    for nb in &node_boxes {
        for clipped in allowed.intersect_box(nb).boxes() {
            for piece in clipped.refine().chop(dim, params.max_patch_cells) {
                patches.push(piece);
            }
        }
    }
    patches.sort_unstable_by_key(|b| (b.lo[2], b.lo[1], b.lo[0]));
    patches
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_hierarchy;

    fn base_1d(cells: usize) -> Level {
        build_hierarchy(
            1,
            [0.0; 3],
            [1.0, 0.0, 0.0],
            [cells, 0, 0],
            MeshParams { max_patch_cells: 1024, ..Default::default() },
        )
        .unwrap()
        .levels
        .remove(0)
    }

    #[test]
    fn step_tags_the_two_straddling_nodes() {
        // Unit step between nodes 7 and 8: undivided central difference gives
        // 0.5 at exactly those two nodes.
        let lev = base_1d(16);
        let f = NodeField::from_fn_on(
            &lev.patches,
            1,
            1,
            2,
            &|i| [i[0] as f64 / 16.0, 0.0, 0.0],
            &|x, _| if x[0] < 0.47 { 0.0 } else { 1.0 },
        );
        let tags = tag_by_gradient(&f, &lev, 0.4).unwrap();
        assert!(tags.contains([7, 0, 0]));
        assert!(tags.contains([8, 0, 0]));
        assert_eq!(tags.num_nodes(), 2);
        // A higher threshold drops them.
        assert!(tag_by_gradient(&f, &lev, 0.6).unwrap().is_empty());
    }

    #[test]
    fn regrid_clusters_on_tile_grid() {
        let lev = base_1d(16);
        let tags = RegionSet::from_box(1, IBox::new([7, 0, 0], [8, 0, 0]));
        let params = MeshParams { max_patch_cells: 1024, ..Default::default() };
        let patches = regrid(&lev, &tags, &params);
        // Buffered tags {6..9} touch both 8-cell tiles, so the whole domain
        // refines into one patch [0,32].
        assert_eq!(patches, vec![IBox::new([0, 0, 0], [32, 0, 0])]);
    }

    #[test]
    fn regrid_respects_parent_nesting() {
        // Parent refinement level occupying [8,16] of its [0,32] domain:
        // new patches must keep one coarse node of clearance.
        let parent = Level::new(
            1,
            1,
            [0.03125, 0.0, 0.0],
            IBox::new([0, 0, 0], [32, 0, 0]),
            vec![IBox::new([8, 0, 0], [16, 0, 0])],
        );
        let tags = RegionSet::from_box(1, IBox::new([12, 0, 0], [12, 0, 0]));
        let params = MeshParams { blocking_factor: 2, max_patch_cells: 1024, ..Default::default() };
        let patches = regrid(&parent, &tags, &params);
        assert_eq!(patches.len(), 1);
        let p = patches[0];
        // Grown by the ghost width and intersected with the fine domain, the
        // patch stays inside the refined parent region [16,32].
        assert!(p.lo[0] - 2 >= 16 && p.hi[0] + 2 <= 32);
        // And it still covers the refined tag node 24.
        assert!(p.lo[0] <= 24 && 24 <= p.hi[0]);
    }

    #[test]
    fn regrid_empty_tags_gives_no_patches() {
        let lev = base_1d(16);
        let params = MeshParams::default();
        assert!(regrid(&lev, &RegionSet::empty(1), &params).is_empty());
    }

    #[test]
    fn regrid_merges_adjacent_tiles_into_one_patch() {
        let lev = {
            let mut h = build_hierarchy(
                2,
                [0.0; 3],
                [1.0, 1.0, 0.0],
                [32, 32, 0],
                MeshParams { max_patch_cells: 1024, ..Default::default() },
            )
            .unwrap();
            h.levels.remove(0)
        };
        // A diagonal band of tags across the middle.
        let tags = RegionSet::from_box(2, IBox::new([10, 14, 0], [22, 18, 0]));
        let params = MeshParams { max_patch_cells: 4096, ..Default::default() };
        let patches = regrid(&lev, &tags, &params);
        // One rectangle: tiles x 1..=2, y 1..=2 -> nodes [8,24]x[8,24] refined.
        assert_eq!(patches, vec![IBox::new([16, 16, 0], [48, 48, 0])]);
    }
}
