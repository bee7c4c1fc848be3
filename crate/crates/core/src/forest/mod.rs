//! Quadtree-forest mesh kernel: leaf encoding, refinement, 2:1 balance,
//! multiblock neighbor lookup, space-filling-curve order and partitioning.

mod connectivity;
mod mesh;
mod partition;
mod quadrant;

pub use connectivity::{BlockConnectivity, Face, FaceLink};
pub use mesh::{FaceNeighborSet, Forest, NeighborTransform};
pub use partition::{build_ghost_layer, build_mirrors, partition, GhostLeaf, Partition};
pub use quadrant::{interleave, morton_index, Quadrant, MAX_LEVEL, ROOT_LEN};
