//! Element geometry conventions: corner numbering, edge and face lists,
//! refinement types and child-element tables.
//!
//! Everything else in the crate derives its topology from the tables in
//! this module, so the conventions are spelled out once, here:
//!
//! * **Corners.**  Reference elements are the unit triangle
//!   `(0,0),(1,0),(0,1)`, the unit square with counter-clockwise corners
//!   `0:(0,0) 1:(1,0) 2:(1,1) 3:(0,1)`, and the unit cube with corners
//!   `0..4` on the bottom face (same order as the square) and `4..8`
//!   stacked above them.
//!
//! * **Refinement types.**  A refinement type is a bitmask of the axes
//!   that get *cut in half*: `X = 1`, `Y = 2`, `Z = 4`.  Quads support
//!   `X`, `Y`, `XY`; triangles only the isotropic `XY`; hexahedra all of
//!   `X..XYZ`.
//!
//! * **Child ordering.**  Children are *corner associated*: each child
//!   covers a distinct subset of parent corners, its *slot* is the lowest
//!   parent corner it covers, and children are listed in increasing slot
//!   order.  Moreover every child keeps the parent's orientation, so the
//!   child at slot `s` has parent corner `s` at its own corner position
//!   `s`.  (The interior triangle of an isotropic triangle split covers
//!   no corner and takes slot 3 by convention.)  This ordering is what
//!   allows a space-filling-curve state table to descend through the
//!   tree, and it lets a coarsened parent recover corner `i` from the
//!   slot-`i` child.
//!
//! * **Child corner specs.**  Each child corner is a [`VRef`]: a parent
//!   corner, the midpoint of two parent corners (always an actual parent
//!   edge), a parent face center, or the parent element center.

/// Element geometry kind.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum Geom {
    /// Triangle (2D, 3 corners).
    Tri,
    /// Quadrilateral (2D, 4 corners).
    Quad,
    /// Hexahedron (3D, 8 corners).
    Hex,
}

/// Axis bits composing a refinement type.
pub const REF_X: u8 = 1;
/// See [`REF_X`].
pub const REF_Y: u8 = 2;
/// See [`REF_X`].
pub const REF_Z: u8 = 4;
/// Full isotropic refinement in 2D.
pub const REF_XY: u8 = 3;
/// Full isotropic refinement in 3D.
pub const REF_XYZ: u8 = 7;

/// Where a child-element corner sits inside its parent.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum VRef {
    /// Parent corner `i`.
    C(u8),
    /// Midpoint of parent corners `(a, b)`; the pair is always a parent
    /// edge.
    E(u8, u8),
    /// Center of the parent face with the given (cyclic) corner tuple.
    F(u8, u8, u8, u8),
    /// Center of the parent element.
    X,
}

/// One child of a refined element: its slot and its corners expressed in
/// parent terms.
#[derive(Clone, Copy, Debug)]
pub struct ChildSpec {
    /// Lowest parent corner covered by this child (slot 3 for the interior
    /// triangle child).
    pub slot: u8,
    /// Child corners, in the child's own corner order.
    pub corners: &'static [VRef],
}

impl Geom {
    /// Spatial dimension of the reference element.
    pub fn dim(self) -> usize {
        match self {
            Geom::Tri | Geom::Quad => 2,
            Geom::Hex => 3,
        }
    }

    /// Number of corners.
    pub fn num_corners(self) -> usize {
        match self {
            Geom::Tri => 3,
            Geom::Quad => 4,
            Geom::Hex => 8,
        }
    }

    /// Edge list as corner pairs.
    pub fn edges(self) -> &'static [(u8, u8)] {
        match self {
            Geom::Tri => &[(0, 1), (1, 2), (2, 0)],
            Geom::Quad => &[(0, 1), (1, 2), (2, 3), (3, 0)],
            Geom::Hex => &[
                (0, 1),
                (1, 2),
                (2, 3),
                (3, 0),
                (4, 5),
                (5, 6),
                (6, 7),
                (7, 4),
                (0, 4),
                (1, 5),
                (2, 6),
                (3, 7),
            ],
        }
    }

    /// Face list as cyclic corner 4-tuples (3D only; empty in 2D, where
    /// the codimension-1 entities are the edges).
    pub fn faces(self) -> &'static [[u8; 4]] {
        match self {
            Geom::Hex => &[
                [3, 2, 1, 0], // bottom  z = 0
                [0, 1, 5, 4], // front   y = 0
                [1, 2, 6, 5], // right   x = 1
                [2, 3, 7, 6], // back    y = 1
                [3, 0, 4, 7], // left    x = 0
                [4, 5, 6, 7], // top     z = 1
            ],
            _ => &[],
        }
    }

    /// Reference coordinates of the corners (z = 0 in 2D).
    pub fn ref_corners(self) -> &'static [[f64; 3]] {
        match self {
            Geom::Tri => &[[0., 0., 0.], [1., 0., 0.], [0., 1., 0.]],
            Geom::Quad => &[[0., 0., 0.], [1., 0., 0.], [1., 1., 0.], [0., 1., 0.]],
            Geom::Hex => &[
                [0., 0., 0.],
                [1., 0., 0.],
                [1., 1., 0.],
                [0., 1., 0.],
                [0., 0., 1.],
                [1., 0., 1.],
                [1., 1., 1.],
                [0., 1., 1.],
            ],
        }
    }

    /// All refinement types valid for this geometry.
    pub fn valid_ref_types(self) -> &'static [u8] {
        match self {
            Geom::Tri => &[REF_XY],
            Geom::Quad => &[REF_X, REF_Y, REF_XY],
            Geom::Hex => &[1, 2, 3, 4, 5, 6, 7],
        }
    }

    /// The isotropic refinement type for this geometry.
    pub fn iso_ref_type(self) -> u8 {
        match self {
            Geom::Tri | Geom::Quad => REF_XY,
            Geom::Hex => REF_XYZ,
        }
    }

    /// Human-readable name (used in errors).
    pub fn name(self) -> &'static str {
        match self {
            Geom::Tri => "triangle",
            Geom::Quad => "quad",
            Geom::Hex => "hex",
        }
    }
}

use VRef::{C, E, F, X};

// Face-center shorthands for the hex tables (canonical face tuples).
const FB: VRef = F(3, 2, 1, 0); // bottom z=0
const FF: VRef = F(0, 1, 5, 4); // front  y=0
const FR: VRef = F(1, 2, 6, 5); // right  x=1
const FK: VRef = F(2, 3, 7, 6); // back   y=1
const FL: VRef = F(3, 0, 4, 7); // left   x=0
const FT: VRef = F(4, 5, 6, 7); // top    z=1

const QUAD_X: &[ChildSpec] = &[
    ChildSpec { slot: 0, corners: &[C(0), E(0, 1), E(2, 3), C(3)] },
    ChildSpec { slot: 1, corners: &[E(0, 1), C(1), C(2), E(2, 3)] },
];

const QUAD_Y: &[ChildSpec] = &[
    ChildSpec { slot: 0, corners: &[C(0), C(1), E(1, 2), E(3, 0)] },
    ChildSpec { slot: 2, corners: &[E(3, 0), E(1, 2), C(2), C(3)] },
];

const QUAD_XY: &[ChildSpec] = &[
    ChildSpec { slot: 0, corners: &[C(0), E(0, 1), X, E(3, 0)] },
    ChildSpec { slot: 1, corners: &[E(0, 1), C(1), E(1, 2), X] },
    ChildSpec { slot: 2, corners: &[X, E(1, 2), C(2), E(2, 3)] },
    ChildSpec { slot: 3, corners: &[E(3, 0), X, E(2, 3), C(3)] },
];

const TRI_ISO: &[ChildSpec] = &[
    ChildSpec { slot: 0, corners: &[C(0), E(0, 1), E(2, 0)] },
    ChildSpec { slot: 1, corners: &[E(0, 1), C(1), E(1, 2)] },
    ChildSpec { slot: 2, corners: &[E(2, 0), E(1, 2), C(2)] },
    ChildSpec { slot: 3, corners: &[E(1, 2), E(2, 0), E(0, 1)] },
];

const HEX_X: &[ChildSpec] = &[
    ChildSpec {
        slot: 0,
        corners: &[C(0), E(0, 1), E(2, 3), C(3), C(4), E(4, 5), E(6, 7), C(7)],
    },
    ChildSpec {
        slot: 1,
        corners: &[E(0, 1), C(1), C(2), E(2, 3), E(4, 5), C(5), C(6), E(6, 7)],
    },
];

const HEX_Y: &[ChildSpec] = &[
    ChildSpec {
        slot: 0,
        corners: &[C(0), C(1), E(1, 2), E(3, 0), C(4), C(5), E(5, 6), E(7, 4)],
    },
    ChildSpec {
        slot: 2,
        corners: &[E(3, 0), E(1, 2), C(2), C(3), E(7, 4), E(5, 6), C(6), C(7)],
    },
];

const HEX_Z: &[ChildSpec] = &[
    ChildSpec {
        slot: 0,
        corners: &[C(0), C(1), C(2), C(3), E(0, 4), E(1, 5), E(2, 6), E(3, 7)],
    },
    ChildSpec {
        slot: 4,
        corners: &[E(0, 4), E(1, 5), E(2, 6), E(3, 7), C(4), C(5), C(6), C(7)],
    },
];

const HEX_XY: &[ChildSpec] = &[
    ChildSpec {
        slot: 0,
        corners: &[C(0), E(0, 1), FB, E(3, 0), C(4), E(4, 5), FT, E(7, 4)],
    },
    ChildSpec {
        slot: 1,
        corners: &[E(0, 1), C(1), E(1, 2), FB, E(4, 5), C(5), E(5, 6), FT],
    },
    ChildSpec {
        slot: 2,
        corners: &[FB, E(1, 2), C(2), E(2, 3), FT, E(5, 6), C(6), E(6, 7)],
    },
    ChildSpec {
        slot: 3,
        corners: &[E(3, 0), FB, E(2, 3), C(3), E(7, 4), FT, E(6, 7), C(7)],
    },
];

const HEX_XZ: &[ChildSpec] = &[
    ChildSpec {
        slot: 0,
        corners: &[C(0), E(0, 1), E(2, 3), C(3), E(0, 4), FF, FK, E(3, 7)],
    },
    ChildSpec {
        slot: 1,
        corners: &[E(0, 1), C(1), C(2), E(2, 3), FF, E(1, 5), E(2, 6), FK],
    },
    ChildSpec {
        slot: 4,
        corners: &[E(0, 4), FF, FK, E(3, 7), C(4), E(4, 5), E(6, 7), C(7)],
    },
    ChildSpec {
        slot: 5,
        corners: &[FF, E(1, 5), E(2, 6), FK, E(4, 5), C(5), C(6), E(6, 7)],
    },
];

const HEX_YZ: &[ChildSpec] = &[
    ChildSpec {
        slot: 0,
        corners: &[C(0), C(1), E(1, 2), E(3, 0), E(0, 4), E(1, 5), FR, FL],
    },
    ChildSpec {
        slot: 2,
        corners: &[E(3, 0), E(1, 2), C(2), C(3), FL, FR, E(2, 6), E(3, 7)],
    },
    ChildSpec {
        slot: 4,
        corners: &[E(0, 4), E(1, 5), FR, FL, C(4), C(5), E(5, 6), E(7, 4)],
    },
    ChildSpec {
        slot: 6,
        corners: &[FL, FR, E(2, 6), E(3, 7), E(7, 4), E(5, 6), C(6), C(7)],
    },
];

const HEX_XYZ: &[ChildSpec] = &[
    ChildSpec {
        slot: 0,
        corners: &[C(0), E(0, 1), FB, E(3, 0), E(0, 4), FF, X, FL],
    },
    ChildSpec {
        slot: 1,
        corners: &[E(0, 1), C(1), E(1, 2), FB, FF, E(1, 5), FR, X],
    },
    ChildSpec {
        slot: 2,
        corners: &[FB, E(1, 2), C(2), E(2, 3), X, FR, E(2, 6), FK],
    },
    ChildSpec {
        slot: 3,
        corners: &[E(3, 0), FB, E(2, 3), C(3), FL, X, FK, E(3, 7)],
    },
    ChildSpec {
        slot: 4,
        corners: &[E(0, 4), FF, X, FL, C(4), E(4, 5), FT, E(7, 4)],
    },
    ChildSpec {
        slot: 5,
        corners: &[FF, E(1, 5), FR, X, E(4, 5), C(5), E(5, 6), FT],
    },
    ChildSpec {
        slot: 6,
        corners: &[X, FR, E(2, 6), FK, FT, E(5, 6), C(6), E(6, 7)],
    },
    ChildSpec {
        slot: 7,
        corners: &[FL, X, FK, E(3, 7), E(7, 4), FT, E(6, 7), C(7)],
    },
];

/// Child table for `(geom, ref_type)`, or `None` if the refinement type
/// is invalid for the geometry.
pub fn children(geom: Geom, ref_type: u8) -> Option<&'static [ChildSpec]> {
    match (geom, ref_type) {
        (Geom::Quad, REF_X) => Some(QUAD_X),
        (Geom::Quad, REF_Y) => Some(QUAD_Y),
        (Geom::Quad, REF_XY) => Some(QUAD_XY),
        (Geom::Tri, REF_XY) => Some(TRI_ISO),
        (Geom::Hex, 1) => Some(HEX_X),
        (Geom::Hex, 2) => Some(HEX_Y),
        (Geom::Hex, 4) => Some(HEX_Z),
        (Geom::Hex, 3) => Some(HEX_XY),
        (Geom::Hex, 5) => Some(HEX_XZ),
        (Geom::Hex, 6) => Some(HEX_YZ),
        (Geom::Hex, 7) => Some(HEX_XYZ),
        _ => None,
    }
}

/// Bitmask with one bit per *slot* of the children of `(geom, ref_type)`.
///
/// Because slots identify the covered parent corners, the mask alone
/// determines the refinement type of a geometry — see
/// [`ref_type_from_mask`] — which is what compact element-set encodings
/// rely on.
pub fn child_mask(geom: Geom, ref_type: u8) -> Option<u8> {
    children(geom, ref_type).map(|ch| ch.iter().fold(0u8, |m, c| m | 1 << c.slot))
}

/// Inverse of [`child_mask`].
pub fn ref_type_from_mask(geom: Geom, mask: u8) -> Option<u8> {
    geom.valid_ref_types()
        .iter()
        .copied()
        .find(|&rt| child_mask(geom, rt) == Some(mask))
}

/// Evaluate a [`VRef`] in reference coordinates.
pub fn vref_coords(geom: Geom, r: VRef) -> [f64; 3] {
    let corners = geom.ref_corners();
    let avg = |ids: &[u8]| {
        let mut p = [0.0; 3];
        for &i in ids {
            for d in 0..3 {
                p[d] += corners[i as usize][d];
            }
        }
        for d in &mut p {
            *d /= ids.len() as f64;
        }
        p
    };
    match r {
        C(i) => corners[i as usize],
        E(a, b) => avg(&[a, b]),
        F(a, b, c, d) => avg(&[a, b, c, d]),
        X => avg(&(0..geom.num_corners() as u8).collect::<Vec<_>>()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_tables() -> Vec<(Geom, u8, &'static [ChildSpec])> {
        let mut v = Vec::new();
        for geom in [Geom::Tri, Geom::Quad, Geom::Hex] {
            for &rt in geom.valid_ref_types() {
                v.push((geom, rt, children(geom, rt).unwrap()));
            }
        }
        v
    }

    /// Expected coordinates of corner `k` of the child at `slot`, for an
    /// axis-aligned sub-box refinement of the unit square/cube.
    fn expected_child_corner(geom: Geom, ref_type: u8, slot: u8, k: usize) -> [f64; 3] {
        let home = geom.ref_corners()[slot as usize];
        let corner = geom.ref_corners()[k];
        let mut p = [0.0; 3];
        for d in 0..3 {
            let axis_split = ref_type & (1 << d) != 0;
            p[d] = if axis_split {
                // The child occupies the half-interval containing its home
                // corner on every split axis.
                if home[d] == 0.0 { corner[d] * 0.5 } else { 0.5 + corner[d] * 0.5 }
            } else {
                corner[d]
            };
        }
        p
    }

    #[test]
    fn quad_hex_children_are_expected_subboxes() {
        // [TRIVIAL] Children of box refinements are the axis-aligned
        // sub-boxes containing their slot corner, in parent orientation.
        for (geom, rt, table) in all_tables() {
            if geom == Geom::Tri {
                continue;
            }
            for ch in table {
                for (k, &r) in ch.corners.iter().enumerate() {
                    let got = vref_coords(geom, r);
                    let want = expected_child_corner(geom, rt, ch.slot, k);
                    assert_eq!(got, want, "{geom:?} rt={rt} slot={} corner {k}", ch.slot);
                }
            }
        }
    }

    #[test]
    fn tri_children_cover_parent() {
        // [TRIVIAL] The four triangle children have positive orientation,
        // quarter area, and cover the parent exactly.
        let table = children(Geom::Tri, REF_XY).unwrap();
        let mut total = 0.0;
        for ch in table {
            let p: Vec<_> = ch.corners.iter().map(|&r| vref_coords(Geom::Tri, r)).collect();
            let area = 0.5
                * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1])
                    - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]));
            assert!(area > 0.0, "child {} is inverted", ch.slot);
            assert!((area - 0.125).abs() < 1e-15);
            total += area;
        }
        assert!((total - 0.5).abs() < 1e-15);
    }

    #[test]
    fn children_are_corner_associated() {
        // [TRIVIAL] Slots are strictly increasing; the child at slot s has
        // parent corner s at its own position s; each parent corner is
        // covered by exactly one child.
        for (geom, rt, table) in all_tables() {
            let mut covered = vec![0; geom.num_corners()];
            let mut prev = -1i32;
            for ch in table {
                assert!((ch.slot as i32) > prev, "{geom:?} rt={rt}: slots not increasing");
                prev = ch.slot as i32;
                assert_eq!(ch.corners.len(), geom.num_corners());
                if (ch.slot as usize) < geom.num_corners() {
                    assert_eq!(
                        ch.corners[ch.slot as usize],
                        C(ch.slot),
                        "{geom:?} rt={rt}: slot corner not at home position"
                    );
                }
                for &r in ch.corners {
                    if let C(i) = r {
                        covered[i as usize] += 1;
                    }
                }
            }
            for (i, &n) in covered.iter().enumerate() {
                assert_eq!(n, 1, "{geom:?} rt={rt}: corner {i} covered {n} times");
            }
        }
    }

    #[test]
    fn midpoint_refs_lie_on_parent_edges_and_faces() {
        // [TRIVIAL] Every E(a,b) in a table is an actual parent edge and
        // every F(...) an actual parent face.
        for (geom, rt, table) in all_tables() {
            let edges = geom.edges();
            let faces = geom.faces();
            for ch in table {
                for &r in ch.corners {
                    match r {
                        E(a, b) => assert!(
                            edges.iter().any(|&(x, y)| (x, y) == (a, b) || (y, x) == (a, b)),
                            "{geom:?} rt={rt}: E({a},{b}) is not a parent edge"
                        ),
                        F(a, b, c, d) => {
                            let mut s = [a, b, c, d];
                            s.sort_unstable();
                            assert!(
                                faces.iter().any(|f| {
                                    let mut g = *f;
                                    g.sort_unstable();
                                    g == s
                                }),
                                "{geom:?} rt={rt}: F({a},{b},{c},{d}) is not a parent face"
                            );
                        }
                        _ => {}
                    }
                }
            }
        }
    }

    #[test]
    fn child_masks_identify_ref_types() {
        // [DERIVED] The slot masks for each geometry are pairwise distinct,
        // so (geom, mask) determines ref_type; spot-check the documented
        // values.
        for geom in [Geom::Tri, Geom::Quad, Geom::Hex] {
            let masks: Vec<u8> =
                geom.valid_ref_types().iter().map(|&rt| child_mask(geom, rt).unwrap()).collect();
            let mut uniq = masks.clone();
            uniq.sort_unstable();
            uniq.dedup();
            assert_eq!(uniq.len(), masks.len(), "{geom:?}: masks collide");
            for &rt in geom.valid_ref_types() {
                assert_eq!(ref_type_from_mask(geom, child_mask(geom, rt).unwrap()), Some(rt));
            }
        }
        assert_eq!(child_mask(Geom::Quad, REF_X), Some(0b0011));
        assert_eq!(child_mask(Geom::Quad, REF_Y), Some(0b0101));
        assert_eq!(child_mask(Geom::Quad, REF_XY), Some(0b1111));
        assert_eq!(child_mask(Geom::Hex, 1), Some(0b0000_0011));
        assert_eq!(child_mask(Geom::Hex, 2), Some(0b0000_0101));
        assert_eq!(child_mask(Geom::Hex, 4), Some(0b0001_0001));
        assert_eq!(child_mask(Geom::Hex, 3), Some(0b0000_1111));
        assert_eq!(child_mask(Geom::Hex, 5), Some(0b0011_0011));
        assert_eq!(child_mask(Geom::Hex, 6), Some(0b0101_0101));
        assert_eq!(child_mask(Geom::Hex, 7), Some(0b1111_1111));
        assert_eq!(child_mask(Geom::Tri, REF_XY), Some(0b1111));
    }

    #[test]
    fn hex_x_split_creates_only_edge_midpoints() {
        // [DERIVED] A single X split of a hex introduces exactly the four
        // midpoints of the x-directed edges — no face or element centers.
        let table = children(Geom::Hex, 1).unwrap();
        let mut mids = Vec::new();
        for ch in table {
            for &r in ch.corners {
                match r {
                    E(a, b) => {
                        let p = (a.min(b), a.max(b));
                        if !mids.contains(&p) {
                            mids.push(p);
                        }
                    }
                    F(..) | X => panic!("unexpected center ref in X split"),
                    _ => {}
                }
            }
        }
        mids.sort_unstable();
        assert_eq!(mids, vec![(0, 1), (2, 3), (4, 5), (6, 7)]);
    }
}
