//! Indexed triangle meshes, Wavefront I/O and area-uniform surface sampling.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Faces with area below this are rejected as degenerate.
pub const MIN_FACE_AREA: f64 = 1e-12;

/// Texture coordinates stored OBJ-style: a coordinate pool plus per-face
/// corner indices into it. Faces that share a coordinate index are stitched
/// in UV space.
#[derive(Debug, Clone, PartialEq)]
pub struct UvLayout {
    pub coords: Vec<[f64; 2]>,
    pub faces: Vec<[usize; 3]>,
}

impl UvLayout {
    pub fn corner(&self, face: usize, corner: usize) -> [f64; 2] {
        self.coords[self.faces[face][corner]]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub uvs: Option<UvLayout>,
}

impl TriMesh {
    /// Builds a mesh and checks index range, degeneracy and orientation.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = TriMesh {
            vertices,
            faces,
            uvs: None,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn with_uvs(mut self, uvs: UvLayout) -> Result<Self> {
        if uvs.faces.len() != self.faces.len() {
            return Err(Error::Shape(format!(
                "{} uv faces for {} faces",
                uvs.faces.len(),
                self.faces.len()
            )));
        }
        for (f, tri) in uvs.faces.iter().enumerate() {
            for &t in tri {
                if t >= uvs.coords.len() {
                    return Err(Error::IndexOutOfRange {
                        face: f,
                        index: t,
                        count: uvs.coords.len(),
                    });
                }
            }
        }
        self.uvs = Some(uvs);
        Ok(self)
    }

    /// Same topology and UVs with new vertex positions. No validation.
    pub fn with_positions(&self, vertices: Vec<Vec3>) -> TriMesh {
        debug_assert_eq!(vertices.len(), self.vertices.len());
        TriMesh {
            vertices,
            faces: self.faces.clone(),
            uvs: self.uvs.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        let mut degenerate = Vec::new();
        for (f, tri) in self.faces.iter().enumerate() {
            for &i in tri {
                if i >= n {
                    return Err(Error::IndexOutOfRange {
                        face: f,
                        index: i,
                        count: n,
                    });
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                degenerate.push(f);
            } else if self.face_area(f) <= MIN_FACE_AREA {
                degenerate.push(f);
            }
        }
        if !degenerate.is_empty() {
            return Err(Error::DegenerateFaces { faces: degenerate });
        }
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for (f, tri) in self.faces.iter().enumerate() {
            for k in 0..3 {
                let e = (tri[k], tri[(k + 1) % 3]);
                if directed.insert(e, f).is_some() {
                    return Err(Error::InconsistentOrientation(e.0, e.1));
                }
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn corners(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Unnormalized face normal `(p1 - p0) x (p2 - p0)`; its length is twice the area.
    pub fn face_cross(&self, f: usize) -> Vec3 {
        let [p0, p1, p2] = self.corners(f);
        (p1 - p0).cross(&(p2 - p0))
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_cross(f).norm()
    }

    pub fn face_areas(&self) -> Vec<f64> {
        (0..self.faces.len()).map(|f| self.face_area(f)).collect()
    }

    pub fn total_area(&self) -> f64 {
        self.face_areas().iter().sum()
    }

    pub fn centroid_of_face(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.corners(f);
        (a + b + c) / 3.0
    }

    /// Per-vertex weights (summing to one) whose dot product with vertex
    /// positions gives the area-weighted surface centroid.
    pub fn area_centroid_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.vertices.len()];
        let mut total = 0.0;
        for (f, tri) in self.faces.iter().enumerate() {
            let a = self.face_area(f);
            total += a;
            for &i in tri {
                w[i] += a / 3.0;
            }
        }
        if total > 0.0 {
            w.iter_mut().for_each(|x| *x /= total);
        }
        w
    }

    pub fn area_centroid(&self) -> Vec3 {
        self.area_centroid_weights()
            .iter()
            .zip(&self.vertices)
            .fold(Vec3::zeros(), |acc, (w, v)| acc + *w * v)
    }

    pub fn bounding_box(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(
            self.vertices
                .iter()
                .fold((first, first), |(lo, hi), v| (lo.inf(v), hi.sup(v))),
        )
    }

    /// Undirected edges in first-seen order, each as `(min, max)`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut seen = HashMap::new();
        let mut out = Vec::new();
        for tri in &self.faces {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                if seen.insert(key, ()).is_none() {
                    out.push(key);
                }
            }
        }
        out
    }

    /// Map from undirected edge to the faces that contain it, in face order.
    pub fn edge_faces(&self) -> Vec<((usize, usize), Vec<usize>)> {
        let mut index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut out: Vec<((usize, usize), Vec<usize>)> = Vec::new();
        for (f, tri) in self.faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                match index.get(&key) {
                    Some(&slot) => out[slot].1.push(f),
                    None => {
                        index.insert(key, out.len());
                        out.push((key, vec![f]));
                    }
                }
            }
        }
        out
    }

    /// Edges with exactly two incident faces, as `(edge, face_a, face_b)`.
    pub fn interior_edges(&self) -> Vec<((usize, usize), usize, usize)> {
        self.edge_faces()
            .into_iter()
            .filter(|(_, fs)| fs.len() == 2)
            .map(|(e, fs)| (e, fs[0], fs[1]))
            .collect()
    }

    pub fn boundary_edges(&self) -> Vec<(usize, usize)> {
        self.edge_faces()
            .into_iter()
            .filter(|(_, fs)| fs.len() == 1)
            .map(|(e, _)| e)
            .collect()
    }

    /// Vertex adjacency lists (sorted, unique).
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nbrs = vec![Vec::new(); self.vertices.len()];
        for (a, b) in self.edges() {
            nbrs[a].push(b);
            nbrs[b].push(a);
        }
        for n in &mut nbrs {
            n.sort_unstable();
        }
        nbrs
    }

    /// Number of face-connected components (vertices not referenced by any
    /// face are ignored).
    pub fn face_components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.vertices.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for tri in &self.faces {
            let r0 = find(&mut parent, tri[0]);
            for &i in &tri[1..] {
                let r = find(&mut parent, i);
                parent[r] = r0;
            }
        }
        let mut roots: Vec<usize> = self.faces.iter().map(|t| find(&mut parent, t[0])).collect();
        roots.sort_unstable();
        roots.dedup();
        roots.len()
    }

    pub fn face_normals(&self) -> Result<Vec<Vec3>> {
        let mut bad = Vec::new();
        let normals = (0..self.faces.len())
            .map(|f| {
                let c = self.face_cross(f);
                let n = c.norm();
                if 0.5 * n <= MIN_FACE_AREA {
                    bad.push(f);
                    Vec3::zeros()
                } else {
                    c / n
                }
            })
            .collect();
        if bad.is_empty() {
            Ok(normals)
        } else {
            Err(Error::DegenerateFaces { faces: bad })
        }
    }

    /// Area-weighted vertex normals (sum of unnormalized face normals, normalized).
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut acc = vec![Vec3::zeros(); self.vertices.len()];
        for (f, tri) in self.faces.iter().enumerate() {
            let c = self.face_cross(f);
            for &i in tri {
                acc[i] += c;
            }
        }
        acc.into_iter()
            .map(|v| {
                let n = v.norm();
                if n > 0.0 {
                    v / n
                } else {
                    v
                }
            })
            .collect()
    }

    /// UV charts: connected components of faces that share texture-coordinate
    /// indices. Returns a chart id per face and the chart count.
    pub fn uv_charts(&self) -> Option<(Vec<usize>, usize)> {
        let uvs = self.uvs.as_ref()?;
        let mut parent: Vec<usize> = (0..uvs.coords.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for tri in &uvs.faces {
            let r0 = find(&mut parent, tri[0]);
            for &i in &tri[1..] {
                let r = find(&mut parent, i);
                parent[r] = r0;
            }
        }
        let mut ids = HashMap::new();
        let charts: Vec<usize> = uvs
            .faces
            .iter()
            .map(|t| {
                let r = find(&mut parent, t[0]);
                let next = ids.len();
                *ids.entry(r).or_insert(next)
            })
            .collect();
        Some((charts, ids.len()))
    }
}

/// Reads a Wavefront-style text mesh. Polygons are fan-triangulated.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text)
}

pub fn parse_obj(text: &str) -> Result<TriMesh> {
    let mut vertices = Vec::new();
    let mut coords = Vec::new();
    let mut faces = Vec::new();
    let mut uv_faces = Vec::new();
    let mut faces_with_uv = 0usize;

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = content.split_whitespace();
        let Some(tag) = tokens.next() else { continue };
        let perr = |message: String| Error::Parse { line, message };
        match tag {
            "v" => {
                let xyz: Vec<f64> = tokens
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| perr(format!("bad vertex coordinate: {e}")))?;
                if xyz.len() != 3 {
                    return Err(perr("vertex needs three coordinates".into()));
                }
                vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
            }
            "vt" => {
                let uv: Vec<f64> = tokens
                    .take(2)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| perr(format!("bad texture coordinate: {e}")))?;
                if uv.len() != 2 {
                    return Err(perr("texture coordinate needs two values".into()));
                }
                coords.push([uv[0], uv[1]]);
            }
            "f" => {
                let mut poly = Vec::new();
                for tok in tokens {
                    let mut parts = tok.split('/');
                    let v = resolve_index(parts.next(), vertices.len())
                        .ok_or_else(|| perr(format!("bad face index '{tok}'")))?;
                    let t = match parts.next() {
                        Some("") | None => None,
                        some => Some(
                            resolve_index(some, coords.len())
                                .ok_or_else(|| perr(format!("bad texture index '{tok}'")))?,
                        ),
                    };
                    poly.push((v, t));
                }
                if poly.len() < 3 {
                    return Err(perr("face needs at least three vertices".into()));
                }
                let has_uv = poly.iter().all(|(_, t)| t.is_some());
                if poly.iter().any(|(_, t)| t.is_some()) && !has_uv {
                    return Err(perr(
                        "face mixes corners with and without texture indices".into(),
                    ));
                }
                for k in 1..poly.len() - 1 {
                    faces.push([poly[0].0, poly[k].0, poly[k + 1].0]);
                    if has_uv {
                        faces_with_uv += 1;
                        uv_faces.push([
                            poly[0].1.unwrap(),
                            poly[k].1.unwrap(),
                            poly[k + 1].1.unwrap(),
                        ]);
                    } else {
                        uv_faces.push([0; 3]);
                    }
                }
            }
            _ => {}
        }
    }

    let mesh = TriMesh::new(vertices, faces)?;
    if faces_with_uv == 0 {
        return Ok(mesh);
    }
    if faces_with_uv != mesh.faces.len() {
        return Err(Error::Parse {
            line: 0,
            message: "texture indices present on some faces but not all".into(),
        });
    }
    mesh.with_uvs(UvLayout {
        coords,
        faces: uv_faces,
    })
}

/// OBJ indices are 1-based; negative values count back from the end.
fn resolve_index(tok: Option<&str>, len: usize) -> Option<usize> {
    let i: i64 = tok?.parse().ok()?;
    match i {
        0 => None,
        i if i > 0 => Some(i as usize - 1),
        i => {
            let back = (-i) as usize;
            (back <= len).then(|| len - back)
        }
    }
}

pub fn save_mesh(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_obj_string(mesh)).map_err(|e| Error::io(path, e))
}

pub fn to_obj_string(mesh: &TriMesh) -> String {
    let mut s = String::with_capacity(mesh.vertices.len() * 48 + mesh.faces.len() * 24);
    for v in &mesh.vertices {
        // `{}` on f64 prints the shortest string that round-trips exactly.
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    match &mesh.uvs {
        Some(uv) => {
            for c in &uv.coords {
                let _ = writeln!(s, "vt {} {}", c[0], c[1]);
            }
            for (tri, ut) in mesh.faces.iter().zip(&uv.faces) {
                let _ = writeln!(
                    s,
                    "f {}/{} {}/{} {}/{}",
                    tri[0] + 1,
                    ut[0] + 1,
                    tri[1] + 1,
                    ut[1] + 1,
                    tri[2] + 1,
                    ut[2] + 1
                );
            }
        }
        None => {
            for tri in &mesh.faces {
                let _ = writeln!(s, "f {} {} {}", tri[0] + 1, tri[1] + 1, tri[2] + 1);
            }
        }
    }
    s
}

/// Surface samples stored as (face, barycentric) pairs so positions can be
/// re-evaluated on deformed vertex positions of the same topology.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePoints {
    pub face_ids: Vec<usize>,
    pub barycentrics: Vec<[f64; 3]>,
    pub positions: Vec<Vec3>,
}

impl SamplePoints {
    pub fn len(&self) -> usize {
        self.face_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.face_ids.is_empty()
    }

    pub fn from_parts(mesh: &TriMesh, face_ids: Vec<usize>, barycentrics: Vec<[f64; 3]>) -> Self {
        let positions = face_ids
            .iter()
            .zip(&barycentrics)
            .map(|(&f, b)| interpolate(mesh, f, b))
            .collect();
        SamplePoints {
            face_ids,
            barycentrics,
            positions,
        }
    }

    /// Re-evaluates the sample positions on a mesh with the same faces.
    pub fn relocate(&mut self, mesh: &TriMesh) {
        for ((p, &f), b) in self
            .positions
            .iter_mut()
            .zip(&self.face_ids)
            .zip(&self.barycentrics)
        {
            *p = interpolate(mesh, f, b);
        }
    }

    /// Scatters per-sample gradients onto vertices through the barycentric weights.
    pub fn scatter(&self, mesh: &TriMesh, grads: &[Vec3], out: &mut [Vec3]) {
        for ((g, &f), b) in grads.iter().zip(&self.face_ids).zip(&self.barycentrics) {
            let tri = mesh.faces[f];
            for k in 0..3 {
                out[tri[k]] += b[k] * g;
            }
        }
    }
}

fn interpolate(mesh: &TriMesh, f: usize, b: &[f64; 3]) -> Vec3 {
    let [p0, p1, p2] = mesh.corners(f);
    b[0] * p0 + b[1] * p1 + b[2] * p2
}

/// Draws `n` points uniformly over the surface: faces by area, then a
/// uniform point on the simplex.
pub fn sample_surface(mesh: &TriMesh, n: usize, seed: u64) -> Result<SamplePoints> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    if n == 0 {
        return Err(Error::InvalidArgument(
            "sample count must be at least 1".into(),
        ));
    }
    let areas = mesh.face_areas();
    let picker = WeightedIndex::new(&areas)
        .map_err(|e| Error::InvalidArgument(format!("face areas: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut face_ids = Vec::with_capacity(n);
    let mut barycentrics = Vec::with_capacity(n);
    for _ in 0..n {
        face_ids.push(picker.sample(&mut rng));
        let r1: f64 = rng.random();
        let r2: f64 = rng.random();
        let s = r1.sqrt();
        barycentrics.push([1.0 - s, s * (1.0 - r2), s * r2]);
    }
    Ok(SamplePoints::from_parts(mesh, face_ids, barycentrics))
}

/// Similarity transform that maps the garment bounding box into `[-1, 1]^3`.
/// The same transform is applied to the body and undone on export.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub center: [f64; 3],
    pub scale: f64,
}

impl Normalization {
    pub fn identity() -> Self {
        Normalization {
            center: [0.0; 3],
            scale: 1.0,
        }
    }

    pub fn fit(mesh: &TriMesh) -> Result<Self> {
        let (lo, hi) = mesh.bounding_box().ok_or(Error::EmptyMesh)?;
        let center = (lo + hi) / 2.0;
        let half = (hi - lo).max() / 2.0;
        if half <= 0.0 {
            return Err(Error::InvalidArgument("mesh has zero extent".into()));
        }
        Ok(Normalization {
            center: center.into(),
            scale: 1.0 / half,
        })
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        (p - Vec3::from(self.center)) * self.scale
    }

    pub fn invert_point(&self, p: &Vec3) -> Vec3 {
        p / self.scale + Vec3::from(self.center)
    }

    pub fn apply(&self, mesh: &TriMesh) -> TriMesh {
        mesh.with_positions(mesh.vertices.iter().map(|p| self.apply_point(p)).collect())
    }

    pub fn invert(&self, mesh: &TriMesh) -> TriMesh {
        mesh.with_positions(mesh.vertices.iter().map(|p| self.invert_point(p)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives;

    const CUBE: &str = "\
v -1 -1 -1
v 1 -1 -1
v 1 1 -1
v -1 1 -1
v -1 -1 1
v 1 -1 1
v 1 1 1
v -1 1 1
f 1 4 3
f 1 3 2
f 5 6 7
f 5 7 8
f 1 2 6
f 1 6 5
f 2 3 7
f 2 7 6
f 3 4 8
f 3 8 7
f 4 1 5
f 4 5 8
";

    #[test]
    fn loads_unit_cube() {
        let m = parse_obj(CUBE).unwrap();
        assert_eq!(m.vertices.len(), 8);
        assert_eq!(m.faces.len(), 12);
        assert!(m.boundary_edges().is_empty());
    }

    #[test]
    fn index_out_of_range() {
        let text = CUBE.replace("f 4 5 8", "f 4 5 9");
        match parse_obj(&text) {
            Err(Error::IndexOutOfRange {
                index: 8, count: 8, ..
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_error_reports_line() {
        match parse_obj("v 0 0 0\nv 1 x 0\n") {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn degenerate_faces_are_listed() {
        let text = "v 0 0 0\nv 1 0 0\nv 2 0 0\nv 0 1 0\nf 1 2 4\nf 1 2 3\nf 1 1 4\n";
        match parse_obj(text) {
            Err(Error::DegenerateFaces { faces }) => assert_eq!(faces, vec![1, 2]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn quads_are_fan_triangulated() {
        // Same cube with quads: each n-gon contributes n - 2 triangles.
        let quads = "\
v -1 -1 -1\nv 1 -1 -1\nv 1 1 -1\nv -1 1 -1\nv -1 -1 1\nv 1 -1 1\nv 1 1 1\nv -1 1 1
f 1 4 3 2\nf 5 6 7 8\nf 1 2 6 5\nf 2 3 7 6\nf 3 4 8 7\nf 4 1 5 8
";
        let polys: Vec<usize> = quads
            .lines()
            .filter(|l| l.starts_with("f "))
            .map(|l| l.split_whitespace().count() - 1)
            .collect();
        let expected: usize = polys.iter().map(|n| n - 2).sum();
        let m = parse_obj(quads).unwrap();
        assert_eq!(m.faces.len(), expected);
        assert_eq!(m.faces.len(), 2 * polys.len());
        assert!((m.total_area() - 24.0).abs() < 1e-12);
    }

    #[test]
    fn inconsistent_orientation_rejected() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3\nf 2 3 4\n";
        assert!(matches!(
            parse_obj(text),
            Err(Error::InconsistentOrientation(..))
        ));
    }

    #[test]
    fn round_trip_with_uvs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.obj");
        let m = primitives::uv_grid(4, 3, 1.0, 1.0);
        save_mesh(&m, &path).unwrap();
        let back = load_mesh(&path).unwrap();
        assert_eq!(back.faces, m.faces);
        let (a, b) = (m.uvs.unwrap(), back.uvs.unwrap());
        assert_eq!(a.faces, b.faces);
        for (p, q) in a.coords.iter().zip(&b.coords) {
            assert!((p[0] - q[0]).abs() < 1e-6 && (p[1] - q[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn large_round_trip_is_exact() {
        let m = primitives::icosphere(6); // 40962 vertices
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sphere.obj");
        save_mesh(&m, &path).unwrap();
        let back = load_mesh(&path).unwrap();
        assert_eq!(back.faces, m.faces);
        let worst = m
            .vertices
            .iter()
            .zip(&back.vertices)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max);
        assert!(worst < 1e-6, "max deviation {worst}");
    }

    #[test]
    fn normals_follow_winding() {
        let v = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        ];
        let m = TriMesh::new(v.clone(), vec![[0, 1, 2]]).unwrap();
        assert!((m.face_normals().unwrap()[0] - Vec3::z()).norm() < 1e-12);
        let r = TriMesh::new(v, vec![[0, 2, 1]]).unwrap();
        assert!((r.face_normals().unwrap()[0] + Vec3::z()).norm() < 1e-12);
    }

    #[test]
    fn icosphere_normals_are_radial() {
        let m = primitives::icosphere(7);
        let worst = m
            .face_normals()
            .unwrap()
            .iter()
            .enumerate()
            .map(|(f, n)| {
                assert!((n.norm() - 1.0).abs() < 1e-9);
                (n - m.centroid_of_face(f).normalize()).norm()
            })
            .fold(0.0, f64::max);
        assert!(worst < 1e-3, "worst {worst}");
    }

    #[test]
    fn area_weighted_face_choice() {
        // Two disjoint faces with areas 1 and 3.
        let v = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(5.0, 0.0, 0.0),
            Vec3::new(8.0, 0.0, 0.0),
            Vec3::new(5.0, 2.0, 0.0),
        ];
        let m = TriMesh::new(v, vec![[0, 1, 2], [3, 4, 5]]).unwrap();
        let n = 40_000;
        let s = sample_surface(&m, n, 7).unwrap();
        let frac = s.face_ids.iter().filter(|&&f| f == 1).count() as f64 / n as f64;
        // binomial standard error sqrt(p(1-p)/n) ~ 0.0022
        assert!((frac - 0.75).abs() < 0.01, "fraction {frac}");
    }

    #[test]
    fn single_sample_lies_inside() {
        let m = primitives::single_triangle();
        let s = sample_surface(&m, 1, 3).unwrap();
        let b = s.barycentrics[0];
        assert!(b.iter().all(|&x| x >= 0.0));
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = primitives::icosphere(2);
        assert_eq!(
            sample_surface(&m, 500, 11).unwrap(),
            sample_surface(&m, 500, 11).unwrap()
        );
        assert!(sample_surface(&TriMesh::new(vec![], vec![]).unwrap(), 5, 0).is_err());
    }

    #[test]
    fn normalization_round_trip() {
        let m = primitives::icosphere(1);
        let moved = m.with_positions(
            m.vertices
                .iter()
                .map(|v| v * 3.0 + Vec3::new(1.0, 2.0, 3.0))
                .collect(),
        );
        let t = Normalization::fit(&moved).unwrap();
        let n = t.apply(&moved);
        let (lo, hi) = n.bounding_box().unwrap();
        assert!(lo.min() >= -1.0 - 1e-12 && hi.max() <= 1.0 + 1e-12);
        let back = t.invert(&n);
        for (a, b) in back.vertices.iter().zip(&moved.vertices) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
