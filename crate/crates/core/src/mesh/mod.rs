//! Block-structured node-centered mesh hierarchy: index boxes, box unions,
//! levels and patches, node fields, ghost transfers, and regridding.

pub mod field;
pub mod ibox;
pub mod level;
pub mod region;
pub mod tags;
pub mod transfer;

pub use field::{NodeField, PatchStore, Reader};
pub use ibox::{IBox, Idx};
pub use level::{build_hierarchy, Hierarchy, Level, MeshParams};
pub use region::{epsilon_interior, grow_region, RegionSet};
