//! Structured tetrahedral mesh of the unit cube and its boundary triangulation.
//!
//! Each of the `8^level` subcubes is split into the six Kuhn tetrahedra that
//! share the subcube's main diagonal, so all elements are congruent and the
//! mesh is trivially shape regular. The boundary faces come out as exact
//! tetrahedron faces, split along the diagonal induced by the subdivision.

use crate::error::{Error, Result};
use nalgebra::Vector3;
use std::collections::HashMap;

pub type Point = Vector3<f64>;

/// Axis-parallel box `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub lo: Point,
    pub hi: Point,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb {
            lo: Point::repeat(f64::INFINITY),
            hi: Point::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn point(p: Point) -> Self {
        Aabb { lo: p, hi: p }
    }

    pub fn include(&mut self, p: Point) {
        for d in 0..3 {
            self.lo[d] = self.lo[d].min(p[d]);
            self.hi[d] = self.hi[d].max(p[d]);
        }
    }

    pub fn union(mut self, other: &Aabb) -> Self {
        self.include(other.lo);
        self.include(other.hi);
        self
    }

    pub fn contains(&self, p: Point) -> bool {
        (0..3).all(|d| self.lo[d] <= p[d] && p[d] <= self.hi[d])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        self.contains(other.lo) && self.contains(other.hi)
    }

    /// Euclidean diameter (length of the main diagonal).
    pub fn diam(&self) -> f64 {
        (self.hi - self.lo).norm()
    }

    /// Distance between two boxes; zero when they overlap or touch.
    pub fn dist(&self, other: &Aabb) -> f64 {
        let mut s = 0.0;
        for d in 0..3 {
            let gap = (self.lo[d] - other.hi[d]).max(other.lo[d] - self.hi[d]).max(0.0);
            s += gap * gap;
        }
        s.sqrt()
    }

    pub fn longest_axis(&self) -> usize {
        let e = self.hi - self.lo;
        let mut ax = 0;
        for d in 1..3 {
            if e[d] > e[ax] {
                ax = d;
            }
        }
        ax
    }
}

/// Tetrahedral mesh of `(0,1)^3` at mesh width `h = 2^-level` with the
/// extracted boundary triangulation.
#[derive(Clone, Debug)]
pub struct Mesh {
    pub level: u32,
    pub vertices: Vec<Point>,
    /// Vertex indices per tetrahedron, ordered for positive signed volume.
    pub tets: Vec<[usize; 4]>,
    /// Boundary triangles with outward orientation.
    pub boundary_tris: Vec<[usize; 3]>,
    /// Index of the unique tetrahedron owning each boundary triangle.
    pub tet_of_tri: Vec<usize>,
    /// For each boundary triangle, the edge-neighbor triangle indices.
    pub tri_neighbors: Vec<[usize; 3]>,
    /// Tetrahedra incident to each vertex.
    pub vertex_tets: Vec<Vec<usize>>,
    /// Sorted global indices of vertices lying on the boundary.
    pub boundary_vertices: Vec<usize>,
    /// Global vertex index -> position in `boundary_vertices` (or None).
    pub boundary_vertex_index: Vec<Option<usize>>,
}

impl Mesh {
    pub fn h(&self) -> f64 {
        0.5f64.powi(self.level as i32)
    }

    pub fn tet_vertices(&self, t: usize) -> [Point; 4] {
        let v = self.tets[t];
        [
            self.vertices[v[0]],
            self.vertices[v[1]],
            self.vertices[v[2]],
            self.vertices[v[3]],
        ]
    }

    pub fn tet_volume(&self, t: usize) -> f64 {
        let [a, b, c, d] = self.tet_vertices(t);
        (b - a).cross(&(c - a)).dot(&(d - a)) / 6.0
    }

    pub fn tri_vertices(&self, t: usize) -> [Point; 3] {
        let v = self.boundary_tris[t];
        [self.vertices[v[0]], self.vertices[v[1]], self.vertices[v[2]]]
    }

    pub fn tri_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.tri_vertices(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Outward unit normal of a boundary triangle.
    pub fn tri_normal(&self, t: usize) -> Point {
        let [a, b, c] = self.tri_vertices(t);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn tri_centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.tri_vertices(t);
        (a + b + c) / 3.0
    }

    /// Shape-regularity constant `max_T diam(T) / |T|^(1/3)`; a fixed number
    /// for the Kuhn mesh since all elements are congruent.
    pub fn shape_regularity(&self) -> f64 {
        (0..self.tets.len().min(6))
            .map(|t| {
                let [a, b, c, d] = self.tet_vertices(t);
                let diam = [(b - a), (c - a), (d - a), (c - b), (d - b), (d - c)]
                    .iter()
                    .map(|e| e.norm())
                    .fold(0.0, f64::max);
                diam / self.tet_volume(t).powf(1.0 / 3.0)
            })
            .fold(0.0, f64::max)
    }
}

/// Build the Kuhn-subdivided cube mesh. `level` must lie in `1..=6`.
pub fn build_cube_mesh(level: u32) -> Result<Mesh> {
    if !(1..=6).contains(&level) {
        return Err(Error::InvalidArgument(format!(
            "mesh level must be in 1..=6, got {level}"
        )));
    }
    let n = 1usize << level; // subcubes per axis
    let np = n + 1;
    let vid = |ix: usize, iy: usize, iz: usize| ix + np * (iy + np * iz);

    let mut vertices = Vec::with_capacity(np * np * np);
    let h = 1.0 / n as f64;
    // lexicographic order consistent with vid (ix fastest)
    for iz in 0..np {
        for iy in 0..np {
            for ix in 0..np {
                vertices.push(Point::new(ix as f64 * h, iy as f64 * h, iz as f64 * h));
            }
        }
    }

    // Six Kuhn tets per subcube: v0 = corner, walk one axis at a time in the
    // order given by a permutation, v3 = opposite corner.
    const PERMS: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let mut tets = Vec::with_capacity(6 * n * n * n);
    for iz in 0..n {
        for iy in 0..n {
            for ix in 0..n {
                let c = [ix, iy, iz];
                for perm in PERMS {
                    let mut p = c;
                    let v0 = vid(p[0], p[1], p[2]);
                    p[perm[0]] += 1;
                    let v1 = vid(p[0], p[1], p[2]);
                    p[perm[1]] += 1;
                    let v2 = vid(p[0], p[1], p[2]);
                    p[perm[2]] += 1;
                    let v3 = vid(p[0], p[1], p[2]);
                    let mut tet = [v0, v1, v2, v3];
                    let vol = signed_volume(&vertices, &tet);
                    if vol < 0.0 {
                        tet.swap(1, 2);
                    }
                    debug_assert!(signed_volume(&vertices, &tet) > 0.0);
                    tets.push(tet);
                }
            }
        }
    }

    // Boundary faces: tet faces occurring exactly once.
    let mut face_count: HashMap<[usize; 3], (usize, usize)> = HashMap::new();
    for (t, tet) in tets.iter().enumerate() {
        for f in 0..4 {
            let mut face = [0usize; 3];
            let mut k = 0;
            for (l, &v) in tet.iter().enumerate() {
                if l != f {
                    face[k] = v;
                    k += 1;
                }
            }
            face.sort_unstable();
            let e = face_count.entry(face).or_insert((0, t));
            e.0 += 1;
            e.1 = t;
        }
    }
    let mut faces: Vec<([usize; 3], usize)> = face_count
        .into_iter()
        .filter(|(_, (cnt, _))| *cnt == 1)
        .map(|(f, (_, t))| (f, t))
        .collect();
    faces.sort_unstable();

    let mut boundary_tris = Vec::with_capacity(faces.len());
    let mut tet_of_tri = Vec::with_capacity(faces.len());
    for (face, t) in faces {
        let tet = tets[t];
        let opposite = tet.iter().copied().find(|v| !face.contains(v)).unwrap();
        let [a, b, c] = face;
        let (pa, pb, pc) = (vertices[a], vertices[b], vertices[c]);
        let nrm = (pb - pa).cross(&(pc - pa));
        let tri = if nrm.dot(&(vertices[opposite] - pa)) < 0.0 {
            [a, b, c]
        } else {
            [a, c, b]
        };
        boundary_tris.push(tri);
        tet_of_tri.push(t);
    }

    // Edge adjacency of the closed boundary surface.
    let mut edge_tris: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (t, tri) in boundary_tris.iter().enumerate() {
        for e in 0..3 {
            let a = tri[e];
            let b = tri[(e + 1) % 3];
            let key = (a.min(b), a.max(b));
            edge_tris.entry(key).or_default().push(t);
        }
    }
    let mut tri_neighbors = vec![[usize::MAX; 3]; boundary_tris.len()];
    for (t, tri) in boundary_tris.iter().enumerate() {
        for e in 0..3 {
            let a = tri[e];
            let b = tri[(e + 1) % 3];
            let key = (a.min(b), a.max(b));
            let both = &edge_tris[&key];
            debug_assert_eq!(both.len(), 2, "boundary surface must be closed");
            tri_neighbors[t][e] = if both[0] == t { both[1] } else { both[0] };
        }
    }

    let mut vertex_tets = vec![Vec::new(); vertices.len()];
    for (t, tet) in tets.iter().enumerate() {
        for &v in tet {
            vertex_tets[v].push(t);
        }
    }

    let mut on_boundary = vec![false; vertices.len()];
    for tri in &boundary_tris {
        for &v in tri {
            on_boundary[v] = true;
        }
    }
    let boundary_vertices: Vec<usize> =
        (0..vertices.len()).filter(|&v| on_boundary[v]).collect();
    let mut boundary_vertex_index = vec![None; vertices.len()];
    for (b, &v) in boundary_vertices.iter().enumerate() {
        boundary_vertex_index[v] = Some(b);
    }

    Ok(Mesh {
        level,
        vertices,
        tets,
        boundary_tris,
        tet_of_tri,
        tri_neighbors,
        vertex_tets,
        boundary_vertices,
        boundary_vertex_index,
    })
}

fn signed_volume(vertices: &[Point], tet: &[usize; 4]) -> f64 {
    let a = vertices[tet[0]];
    let b = vertices[tet[1]];
    let c = vertices[tet[2]];
    let d = vertices[tet[3]];
    (b - a).cross(&(c - a)).dot(&(d - a)) / 6.0
}

/// Degree-of-freedom table over the combined index set: the `n` P1 vertex
/// dofs first, then the `m` P0 boundary-triangle dofs.
#[derive(Clone, Debug)]
pub struct DofTable {
    pub n: usize,
    pub m: usize,
    char_points: Vec<Point>,
    supp_boxes: Vec<Aabb>,
}

impl DofTable {
    pub fn len(&self) -> usize {
        self.n + self.m
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn char_point(&self, i: usize) -> Point {
        self.char_points[i]
    }

    pub fn supp_box(&self, i: usize) -> &Aabb {
        &self.supp_boxes[i]
    }

    /// Restriction to a subset of dofs (used for the block-diagonal
    /// preconditioner sub-trees); indices refer back to this table.
    pub fn subset(&self, indices: &[usize]) -> DofTable {
        DofTable {
            n: indices.len(),
            m: 0,
            char_points: indices.iter().map(|&i| self.char_points[i]).collect(),
            supp_boxes: indices.iter().map(|&i| self.supp_boxes[i]).collect(),
        }
    }
}

/// Characteristic points and support boxes for every dof of the mesh.
pub fn dof_table(mesh: &Mesh) -> DofTable {
    let n = mesh.vertices.len();
    let m = mesh.boundary_tris.len();
    let mut char_points = Vec::with_capacity(n + m);
    let mut supp_boxes = Vec::with_capacity(n + m);
    for v in 0..n {
        char_points.push(mesh.vertices[v]);
        let mut bb = Aabb::point(mesh.vertices[v]);
        for &t in &mesh.vertex_tets[v] {
            for p in mesh.tet_vertices(t) {
                bb.include(p);
            }
        }
        supp_boxes.push(bb);
    }
    for t in 0..m {
        char_points.push(mesh.tri_centroid(t));
        let [a, b, c] = mesh.tri_vertices(t);
        let mut bb = Aabb::point(a);
        bb.include(b);
        bb.include(c);
        supp_boxes.push(bb);
    }
    DofTable {
        n,
        m,
        char_points,
        supp_boxes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_match_formulas() {
        for level in 1..=3u32 {
            let mesh = build_cube_mesh(level).unwrap();
            let k = level as u32;
            assert_eq!(mesh.vertices.len(), ((1usize << k) + 1).pow(3));
            assert_eq!(mesh.tets.len(), 6 * 8usize.pow(k));
            assert_eq!(mesh.boundary_tris.len(), 12 * 4usize.pow(k));
        }
    }

    #[test]
    fn paper_dof_counts() {
        let m3 = build_cube_mesh(3).unwrap();
        assert_eq!(m3.vertices.len(), 729);
        assert_eq!(m3.boundary_tris.len(), 768);
        let m4 = build_cube_mesh(4).unwrap();
        assert_eq!(m4.vertices.len(), 4913);
        assert_eq!(m4.boundary_tris.len(), 3072);
        let m1 = build_cube_mesh(1).unwrap();
        assert_eq!(m1.vertices.len(), 27);
        assert_eq!(m1.boundary_tris.len(), 48);
    }

    #[test]
    fn level_out_of_range_is_rejected() {
        assert!(build_cube_mesh(0).is_err());
        assert!(build_cube_mesh(7).is_err());
    }

    #[test]
    fn volumes_and_areas_partition() {
        for level in 1..=3u32 {
            let mesh = build_cube_mesh(level).unwrap();
            let vol: f64 = (0..mesh.tets.len()).map(|t| mesh.tet_volume(t)).sum();
            assert!((vol - 1.0).abs() < 1e-12, "vol = {vol}");
            let area: f64 = (0..mesh.boundary_tris.len())
                .map(|t| mesh.tri_area(t))
                .sum();
            assert!((area - 6.0).abs() < 1e-12, "area = {area}");
            assert!((0..mesh.tets.len()).all(|t| mesh.tet_volume(t) > 0.0));
        }
    }

    #[test]
    fn normals_point_outward() {
        let mesh = build_cube_mesh(2).unwrap();
        let center = Point::new(0.5, 0.5, 0.5);
        for t in 0..mesh.boundary_tris.len() {
            let nrm = mesh.tri_normal(t);
            let c = mesh.tri_centroid(t);
            assert!(nrm.dot(&(c - center)) > 0.0, "tri {t} normal inward");
        }
    }

    #[test]
    fn boundary_tri_is_face_of_exactly_one_tet() {
        let mesh = build_cube_mesh(2).unwrap();
        for (t, tri) in mesh.boundary_tris.iter().enumerate() {
            let tet = mesh.tets[mesh.tet_of_tri[t]];
            assert!(tri.iter().all(|v| tet.contains(v)));
        }
        // uniqueness is by construction (face occurs once), spot-check count
        assert_eq!(mesh.tet_of_tri.len(), mesh.boundary_tris.len());
    }

    #[test]
    fn refinement_vertices_nest() {
        let coarse = build_cube_mesh(2).unwrap();
        let fine = build_cube_mesh(3).unwrap();
        let key = |p: &Point| (p.x.to_bits(), p.y.to_bits(), p.z.to_bits());
        let fine_set: std::collections::HashSet<_> = fine.vertices.iter().map(key).collect();
        for p in &coarse.vertices {
            assert!(fine_set.contains(&key(p)));
        }
    }

    #[test]
    fn tri_neighbors_are_symmetric() {
        let mesh = build_cube_mesh(2).unwrap();
        for (t, nbrs) in mesh.tri_neighbors.iter().enumerate() {
            for &u in nbrs {
                assert!(mesh.tri_neighbors[u].contains(&t));
            }
        }
    }

    #[test]
    fn dof_table_layout() {
        let mesh = build_cube_mesh(3).unwrap();
        let dofs = dof_table(&mesh);
        assert_eq!(dofs.len(), 729 + 768);
        for i in 0..dofs.len() {
            assert!(dofs.supp_box(i).contains(dofs.char_point(i)));
        }
        // corner vertex patch: box side at most 2h
        let h = mesh.h();
        let corner = dofs.supp_box(0);
        assert!((corner.hi - corner.lo).amax() <= 2.0 * h + 1e-14);
        // boundary triangle dof: bbox of the triangle, centroid char point
        let t0 = dofs.n;
        let c = dofs.char_point(t0);
        assert!((c - mesh.tri_centroid(0)).norm() < 1e-15);
    }

    #[test]
    fn kuhn_shape_regularity_is_fixed() {
        let a = build_cube_mesh(1).unwrap().shape_regularity();
        let b = build_cube_mesh(3).unwrap().shape_regularity();
        assert!((a - b).abs() < 1e-12);
    }
}
