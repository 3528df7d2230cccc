//! Procedural meshes used by tests, benches and the bundled scenes.

use std::collections::HashMap;
use std::f64::consts::PI;

use crate::mesh::{TriMesh, UvLayout, Vec3};

pub fn single_triangle() -> TriMesh {
    TriMesh::new(
        vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        ],
        vec![[0, 1, 2]],
    )
    .expect("valid triangle")
}

/// Unit-radius icosphere with `subdivisions` rounds of midpoint splitting.
pub fn icosphere(subdivisions: usize) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vec3>| {
            *cache.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) / 2.0).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    TriMesh::new(verts, faces).expect("valid icosphere")
}

/// Flat `nx` x `ny` grid in the z = 0 plane, centered at the origin, normals
/// along +z, with UVs spanning the unit square.
pub fn uv_grid(nx: usize, ny: usize, width: f64, height: f64) -> TriMesh {
    let mut verts = Vec::new();
    let mut coords = Vec::new();
    for j in 0..=ny {
        for i in 0..=nx {
            let (u, v) = (i as f64 / nx as f64, j as f64 / ny as f64);
            verts.push(Vec3::new((u - 0.5) * width, (v - 0.5) * height, 0.0));
            coords.push([u, v]);
        }
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut faces = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            faces.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            faces.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    let uv_faces = faces.clone();
    TriMesh::new(verts, faces)
        .and_then(|m| {
            m.with_uvs(UvLayout {
                coords,
                faces: uv_faces,
            })
        })
        .expect("valid grid")
}

/// Flat hexagonal fan: one center vertex (index 0) and six rim vertices.
pub fn hex_patch(radius: f64) -> TriMesh {
    let mut verts = vec![Vec3::zeros()];
    for k in 0..6 {
        let a = k as f64 * PI / 3.0;
        verts.push(Vec3::new(radius * a.cos(), radius * a.sin(), 0.0));
    }
    let faces = (0..6).map(|k| [0, 1 + k, 1 + (k + 1) % 6]).collect();
    TriMesh::new(verts, faces).expect("valid hexagon")
}

/// Rings of points around the x axis, `(x, radius)` per ring.
fn ring_mesh(
    profile: &[(f64, f64)],
    segments: usize,
    start_pole: Option<f64>,
    end_pole: Option<f64>,
) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let mut verts = Vec::new();
    let mut faces = Vec::new();
    let ring_start = |r: usize| start_pole.is_some() as usize + r * segments;
    if let Some(x) = start_pole {
        verts.push(Vec3::new(x, 0.0, 0.0));
    }
    for &(x, rho) in profile {
        for j in 0..segments {
            let th = 2.0 * PI * j as f64 / segments as f64;
            verts.push(Vec3::new(x, rho * th.cos(), rho * th.sin()));
        }
    }
    if start_pole.is_some() {
        let b = ring_start(0);
        for j in 0..segments {
            let jn = (j + 1) % segments;
            faces.push([0, b + jn, b + j]);
        }
    }
    for r in 0..profile.len() - 1 {
        let (a, b) = (ring_start(r), ring_start(r + 1));
        for j in 0..segments {
            let jn = (j + 1) % segments;
            faces.push([a + j, a + jn, b + j]);
            faces.push([a + jn, b + jn, b + j]);
        }
    }
    if let Some(x) = end_pole {
        let q = verts.len();
        verts.push(Vec3::new(x, 0.0, 0.0));
        let a = ring_start(profile.len() - 1);
        for j in 0..segments {
            let jn = (j + 1) % segments;
            faces.push([a + j, a + jn, q]);
        }
    }
    (verts, faces)
}

/// Closed capsule around the x axis: a cylinder of `radius` spanning
/// `[-half_length, half_length]` with hemispherical caps. Outward normals.
pub fn capsule(
    radius: f64,
    half_length: f64,
    segments: usize,
    cap_rings: usize,
    body_rings: usize,
) -> TriMesh {
    let mut profile = Vec::new();
    for k in 1..=cap_rings {
        let phi = PI / 2.0 * k as f64 / cap_rings as f64;
        profile.push((-half_length - radius * phi.cos(), radius * phi.sin()));
    }
    for k in 1..body_rings {
        let x = -half_length + 2.0 * half_length * k as f64 / body_rings as f64;
        profile.push((x, radius));
    }
    for k in (1..=cap_rings).rev() {
        let phi = PI / 2.0 * k as f64 / cap_rings as f64;
        profile.push((half_length + radius * phi.cos(), radius * phi.sin()));
    }
    let (v, f) = ring_mesh(
        &profile,
        segments,
        Some(-half_length - radius),
        Some(half_length + radius),
    );
    TriMesh::new(v, f).expect("valid capsule")
}

/// Open tube around the x axis from `x0` to `x1`, with a seamed UV layout
/// (u around, v along).
pub fn tube(radius: f64, x0: f64, x1: f64, segments: usize, rings: usize) -> TriMesh {
    let profile: Vec<(f64, f64)> = (0..=rings)
        .map(|k| (x0 + (x1 - x0) * k as f64 / rings as f64, radius))
        .collect();
    let (v, f) = ring_mesh(&profile, segments, None, None);
    let mut coords = Vec::new();
    for k in 0..=rings {
        for j in 0..=segments {
            coords.push([j as f64 / segments as f64, k as f64 / rings as f64]);
        }
    }
    let uv_id = |r: usize, j: usize| r * (segments + 1) + j;
    let mut uv_faces = Vec::new();
    for r in 0..rings {
        for j in 0..segments {
            uv_faces.push([uv_id(r, j), uv_id(r, j + 1), uv_id(r + 1, j)]);
            uv_faces.push([uv_id(r, j + 1), uv_id(r + 1, j + 1), uv_id(r + 1, j)]);
        }
    }
    TriMesh::new(v, f)
        .and_then(|m| {
            m.with_uvs(UvLayout {
                coords,
                faces: uv_faces,
            })
        })
        .expect("valid tube")
}

/// Appends `b` to `a` as a second component (UVs concatenated when both have them).
pub fn merge(a: &TriMesh, b: &TriMesh) -> TriMesh {
    let off = a.vertices.len();
    let mut vertices = a.vertices.clone();
    vertices.extend(&b.vertices);
    let mut faces = a.faces.clone();
    faces.extend(b.faces.iter().map(|t| [t[0] + off, t[1] + off, t[2] + off]));
    let uvs = match (&a.uvs, &b.uvs) {
        (Some(ua), Some(ub)) => {
            let uoff = ua.coords.len();
            let mut coords = ua.coords.clone();
            coords.extend(&ub.coords);
            let mut uf = ua.faces.clone();
            uf.extend(
                ub.faces
                    .iter()
                    .map(|t| [t[0] + uoff, t[1] + uoff, t[2] + uoff]),
            );
            Some(UvLayout { coords, faces: uf })
        }
        _ => None,
    };
    TriMesh {
        vertices,
        faces,
        uvs,
    }
}

/// Applies `f` to every vertex.
pub fn transformed(mesh: &TriMesh, f: impl Fn(&Vec3) -> Vec3) -> TriMesh {
    mesh.with_positions(mesh.vertices.iter().map(f).collect())
}
