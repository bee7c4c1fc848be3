mod common;

use common::ghost_equivalence;
use patchforest::forest::{BlockConnectivity, Face, FaceLink};

fn twisted_pair() -> BlockConnectivity {
    let mut links = vec![[FaceLink::Boundary; 4]; 2];
    links[0][Face::Right.index()] = FaceLink::Neighbor {
        block: 1,
        face: Face::Right,
        reversed: true,
    };
    links[1][Face::Right.index()] = FaceLink::Neighbor {
        block: 0,
        face: Face::Right,
        reversed: true,
    };
    links[0][Face::Top.index()] = FaceLink::Neighbor {
        block: 1,
        face: Face::Left,
        reversed: true,
    };
    links[1][Face::Left.index()] = FaceLink::Neighbor {
        block: 0,
        face: Face::Top,
        reversed: true,
    };
    BlockConnectivity::new(links).unwrap()
}

fn assert_equivalent(conn: BlockConnectivity, level: u8, m: usize) {
    for ranks in [1, 3] {
        let (checked, bad) = ghost_equivalence(conn.clone(), level, m, ranks);
        assert!(checked > 0);
        assert_eq!(bad, 0, "{bad} of {checked} ghost cells differ with {ranks} ranks");
    }
}

#[test]
fn unit_square_interior_ghosts() {
    assert_equivalent(BlockConnectivity::unit_square(), 3, 4);
}

#[test]
fn periodic_square_wraps() {
    assert_equivalent(BlockConnectivity::periodic_square(), 2, 6);
}

#[test]
fn brick_blocks_line_up() {
    assert_equivalent(BlockConnectivity::brick(2, 2), 2, 4);
}

#[test]
fn hemispheres_mirror_their_faces() {
    assert_equivalent(BlockConnectivity::two_tree_sphere(), 2, 8);
}

#[test]
fn cube_faces_with_rotations() {
    assert_equivalent(BlockConnectivity::cubed_sphere(), 2, 4);
}

#[test]
fn reversed_faces_flip_tangent_order() {
    assert_equivalent(twisted_pair(), 3, 4);
}
