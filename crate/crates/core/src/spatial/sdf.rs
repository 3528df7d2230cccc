use std::collections::HashMap;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::mesh::{TriMesh, Vec3};

use super::bvh::{Bvh, ClosestHit, Feature};

/// Signed distance to a closed, outward-oriented body mesh: negative inside.
///
/// The sign comes from the angle-weighted pseudonormal of the closest
/// feature (face, edge or vertex).
#[derive(Debug, Clone)]
pub struct BodySdf {
    mesh: TriMesh,
    bvh: Bvh,
    face_normals: Vec<Vec3>,
    vertex_normals: Vec<Vec3>,
    edge_normals: HashMap<(usize, usize), Vec3>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfQuery {
    pub distance: f64,
    pub closest: Vec3,
    pub face: usize,
    /// Unit gradient of the signed distance; the face normal on the surface.
    pub gradient: Vec3,
}

/// Below this the gradient falls back to the closest face's normal.
const SURFACE_EPS: f64 = 1e-9;

pub fn build_body_sdf(body: &TriMesh) -> Result<BodySdf> {
    if body.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let mut open = Vec::new();
    let mut edge_normals = HashMap::new();
    let face_normals = body.face_normals()?;
    for (e, fs) in body.edge_faces() {
        if fs.len() != 2 {
            open.push(e);
            continue;
        }
        let n = face_normals[fs[0]] + face_normals[fs[1]];
        edge_normals.insert(e, n.normalize());
    }
    if !open.is_empty() {
        return Err(Error::OpenSurface { edges: open });
    }
    let volume: f64 = body
        .faces
        .iter()
        .map(|&[a, b, c]| body.vertices[a].dot(&body.vertices[b].cross(&body.vertices[c])))
        .sum();
    if volume <= 0.0 {
        return Err(Error::InvalidArgument(
            "body normals point inward (negative enclosed volume)".into(),
        ));
    }

    let mut vertex_normals = vec![Vec3::zeros(); body.vertices.len()];
    for (f, tri) in body.faces.iter().enumerate() {
        let p = body.corners(f);
        for k in 0..3 {
            let e1 = (p[(k + 1) % 3] - p[k]).normalize();
            let e2 = (p[(k + 2) % 3] - p[k]).normalize();
            let angle = e1.dot(&e2).clamp(-1.0, 1.0).acos();
            vertex_normals[tri[k]] += angle * face_normals[f];
        }
    }
    for n in &mut vertex_normals {
        *n = n.normalize();
    }

    Ok(BodySdf {
        bvh: Bvh::build(body),
        mesh: body.clone(),
        face_normals,
        vertex_normals,
        edge_normals,
    })
}

impl BodySdf {
    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.query(p).distance
    }

    pub fn query(&self, p: &Vec3) -> SdfQuery {
        let hit = self.bvh.closest(&self.mesh, p).expect("non-empty body");
        self.finish(p, hit)
    }

    /// Same result computed by scanning every triangle.
    pub fn query_brute_force(&self, p: &Vec3) -> SdfQuery {
        let hit = Bvh::closest_brute_force(&self.mesh, p).expect("non-empty body");
        self.finish(p, hit)
    }

    fn pseudonormal(&self, hit: &ClosestHit) -> Vec3 {
        let tri = self.mesh.faces[hit.face];
        match hit.feature {
            Feature::Face => self.face_normals[hit.face],
            Feature::Vertex(k) => self.vertex_normals[tri[k as usize]],
            Feature::Edge(i, j) => {
                let (a, b) = (tri[i as usize], tri[j as usize]);
                self.edge_normals[&(a.min(b), a.max(b))]
            }
        }
    }

    fn finish(&self, p: &Vec3, hit: ClosestHit) -> SdfQuery {
        let unsigned = hit.sq_dist.sqrt();
        let offset = p - hit.point;
        let sign = if offset.dot(&self.pseudonormal(&hit)) < 0.0 {
            -1.0
        } else {
            1.0
        };
        let gradient = if unsigned < SURFACE_EPS {
            self.face_normals[hit.face]
        } else {
            sign * offset / unsigned
        };
        SdfQuery {
            distance: sign * unsigned,
            closest: hit.point,
            face: hit.face,
            gradient,
        }
    }
}

/// Generalized winding number: solid angle subtended by the mesh over 4 pi.
pub fn winding_number(mesh: &TriMesh, p: &Vec3) -> f64 {
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        let [a, b, c] = mesh.corners(f);
        let (a, b, c) = (a - p, b - p, c - p);
        let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
        let num = a.dot(&b.cross(&c));
        if num.abs() <= 1e-15 * la * lb * lc {
            // p lies in the triangle's plane: zero solid angle
            continue;
        }
        let den = la * lb * lc + a.dot(&b) * lc + b.dot(&c) * la + c.dot(&a) * lb;
        total += 2.0 * num.atan2(den);
    }
    total / (4.0 * PI)
}
