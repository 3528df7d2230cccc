//! Geometric loss terms on garment geometry, each with its analytic gradient.
//!
//! Sample-based terms (collision, blocking, symmetry) return one gradient per
//! sample; mesh-based regularizers return one gradient per vertex.
//! [`total_geometry_loss`] scatters everything to vertices.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{SamplePoints, TriMesh, Vec3};
use crate::spatial::{BodySdf, PointIndex};

/// A semi-infinite cylinder closed at `center` and extending along `axis`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockingCylinder {
    center: Vec3,
    axis: Vec3,
    radius: f64,
}

impl BlockingCylinder {
    /// `axis` is normalized; it points away from the body into the blocked region.
    pub fn new(center: Vec3, axis: Vec3, radius: f64) -> Result<Self> {
        let len = axis.norm();
        if !(len > 0.0) || !len.is_finite() {
            return Err(Error::InvalidArgument(
                "cylinder axis must be non-zero".into(),
            ));
        }
        if !(radius > 0.0) {
            return Err(Error::InvalidArgument(
                "cylinder radius must be positive".into(),
            ));
        }
        Ok(BlockingCylinder {
            center,
            axis: axis / len,
            radius,
        })
    }

    pub fn center(&self) -> Vec3 {
        self.center
    }

    pub fn axis(&self) -> Vec3 {
        self.axis
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Axial depth past the closed end, if `p` is inside.
    pub fn depth(&self, p: &Vec3) -> Option<f64> {
        let rel = p - self.center;
        let a = rel.dot(&self.axis);
        if a < 0.0 {
            return None;
        }
        let radial = (rel - a * self.axis).norm();
        (radial <= self.radius).then_some(a)
    }

    pub fn transformed(&self, t: &crate::mesh::Normalization) -> Self {
        BlockingCylinder {
            center: t.apply_point(&self.center),
            axis: self.axis,
            radius: self.radius * t.scale,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CylinderRecord {
    center: [f64; 3],
    axis: [f64; 3],
    radius: f64,
}

pub fn parse_cylinders(json: &str) -> Result<Vec<BlockingCylinder>> {
    let records: Vec<CylinderRecord> = serde_json::from_str(json)?;
    records
        .into_iter()
        .map(|r| BlockingCylinder::new(r.center.into(), r.axis.into(), r.radius))
        .collect()
}

pub fn load_cylinders(path: impl AsRef<Path>) -> Result<Vec<BlockingCylinder>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cylinders(&text)
}

pub fn cylinders_to_json(cylinders: &[BlockingCylinder]) -> String {
    let records: Vec<CylinderRecord> = cylinders
        .iter()
        .map(|c| CylinderRecord {
            center: c.center.into(),
            axis: c.axis.into(),
            radius: c.radius,
        })
        .collect();
    serde_json::to_string_pretty(&records).expect("plain data serializes")
}

/// Wrists, ankles, neck and waist of the canonical A-pose test body
/// (y up, x to the body's left, height normalized to [-1, 1]).
pub fn canonical_body_cylinders() -> Vec<BlockingCylinder> {
    let c = |center: [f64; 3], axis: [f64; 3], r: f64| {
        BlockingCylinder::new(center.into(), axis.into(), r).expect("valid default")
    };
    vec![
        c([0.62, 0.05, 0.0], [0.8, -0.6, 0.0], 0.09), // left wrist
        c([-0.62, 0.05, 0.0], [-0.8, -0.6, 0.0], 0.09), // right wrist
        c([0.11, -0.88, 0.0], [0.0, -1.0, 0.0], 0.08), // left ankle
        c([-0.11, -0.88, 0.0], [0.0, -1.0, 0.0], 0.08), // right ankle
        c([0.0, 0.62, 0.0], [0.0, 1.0, 0.0], 0.12),   // neck
        c([0.0, -0.02, 0.0], [0.0, -1.0, 0.0], 0.22), // waist (for tops)
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_coll: f64,
    pub lambda_blk: f64,
    pub lambda_sym: f64,
    pub lambda_lap: f64,
    pub lambda_nc: f64,
    pub epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_coll: 5e5,
            lambda_blk: 1e5,
            lambda_sym: 5e5,
            lambda_lap: 2e4,
            lambda_nc: 2e4,
            epsilon: 0.005,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        LossWeights {
            lambda_coll: 0.0,
            lambda_blk: 0.0,
            lambda_sym: 0.0,
            lambda_lap: 0.0,
            lambda_nc: 0.0,
            epsilon: 0.005,
        }
    }

    /// Checks each weight; the error names the offending field.
    pub fn validate(&self) -> std::result::Result<(), String> {
        for (name, v) in [
            ("lambda_coll", self.lambda_coll),
            ("lambda_blk", self.lambda_blk),
            ("lambda_sym", self.lambda_sym),
            ("lambda_lap", self.lambda_lap),
            ("lambda_nc", self.lambda_nc),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(format!(
                    "{name} must be a finite non-negative number (got {v})"
                ));
            }
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(format!("epsilon must be positive (got {})", self.epsilon));
        }
        Ok(())
    }
}

/// A loss value with one gradient per sample or per vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<Vec3>,
}

impl LossGrad {
    fn zero(n: usize) -> Self {
        LossGrad {
            value: 0.0,
            grad: vec![Vec3::zeros(); n],
        }
    }
}

/// Mean hinge penalty `max(eps - d, 0)` on signed body distances.
pub fn collision_loss(samples: &SamplePoints, sdf: &BodySdf, epsilon: f64) -> LossGrad {
    collision_loss_points(&samples.positions, sdf, epsilon)
}

pub fn collision_loss_points(points: &[Vec3], sdf: &BodySdf, epsilon: f64) -> LossGrad {
    let n = points.len();
    if n == 0 {
        return LossGrad::zero(0);
    }
    let inv = 1.0 / n as f64;
    let per: Vec<(f64, Vec3)> = points
        .par_iter()
        .map(|p| {
            let q = sdf.query(p);
            let gap = epsilon - q.distance;
            if gap > 0.0 {
                (gap, -q.gradient * inv)
            } else {
                (0.0, Vec3::zeros())
            }
        })
        .collect();
    let value = per.iter().map(|x| x.0).sum::<f64>() * inv;
    LossGrad {
        value,
        grad: per.into_iter().map(|x| x.1).collect(),
    }
}

/// Mean axial depth of samples that fall inside any blocking cylinder.
pub fn blocking_loss(samples: &SamplePoints, cylinders: &[BlockingCylinder]) -> LossGrad {
    blocking_loss_points(&samples.positions, cylinders)
}

pub fn blocking_loss_points(points: &[Vec3], cylinders: &[BlockingCylinder]) -> LossGrad {
    let n = points.len();
    if n == 0 {
        return LossGrad::zero(0);
    }
    let inv = 1.0 / n as f64;
    let mut value = 0.0;
    let grad = points
        .iter()
        .map(|p| {
            let mut g = Vec3::zeros();
            for c in cylinders {
                if let Some(depth) = c.depth(p) {
                    value += depth;
                    g += c.axis * inv;
                }
            }
            g
        })
        .collect();
    LossGrad {
        value: value * inv,
        grad,
    }
}

/// Reflection through the x = 0 plane.
#[inline]
pub fn mirror_x(p: &Vec3) -> Vec3 {
    Vec3::new(-p.x, p.y, p.z)
}

/// Chamfer distance between the samples and their mirror images.
pub fn symmetry_loss(samples: &SamplePoints) -> LossGrad {
    symmetry_loss_points(&samples.positions)
}

pub fn symmetry_loss_points(points: &[Vec3]) -> LossGrad {
    let n = points.len();
    if n == 0 {
        return LossGrad::zero(0);
    }
    let inv = 1.0 / n as f64;
    let mirrored: Vec<Vec3> = points.iter().map(mirror_x).collect();
    let mirror_index = PointIndex::new(mirrored.clone());
    let index = PointIndex::new(points.to_vec());

    // p_i -> nearest mirrored point p'_j
    let forward: Vec<(usize, f64)> = points
        .par_iter()
        .map(|p| mirror_index.nearest(p).expect("non-empty"))
        .collect();
    // p'_j -> nearest original point p_i
    let backward: Vec<(usize, f64)> = mirrored
        .par_iter()
        .map(|q| index.nearest(q).expect("non-empty"))
        .collect();

    let mut grad = vec![Vec3::zeros(); n];
    let mut value = 0.0;
    for (i, &(j, d2)) in forward.iter().enumerate() {
        value += d2;
        let diff = points[i] - mirrored[j];
        grad[i] += 2.0 * inv * diff;
        grad[j] -= 2.0 * inv * mirror_x(&diff);
    }
    for (j, &(i, d2)) in backward.iter().enumerate() {
        value += d2;
        let diff = mirrored[j] - points[i];
        grad[j] += 2.0 * inv * mirror_x(&diff);
        grad[i] -= 2.0 * inv * diff;
    }
    LossGrad {
        value: value * inv,
        grad,
    }
}

/// Uniform-weight Laplacian residual `v_i - mean(neighbors)` per vertex;
/// `None` for vertices without neighbors.
pub fn laplacian_residuals(mesh: &TriMesh) -> Vec<Option<Vec3>> {
    mesh.vertex_neighbors()
        .iter()
        .enumerate()
        .map(|(i, nb)| {
            if nb.is_empty() {
                return None;
            }
            let mean =
                nb.iter().fold(Vec3::zeros(), |a, &j| a + mesh.vertices[j]) / nb.len() as f64;
            Some(mesh.vertices[i] - mean)
        })
        .collect()
}

/// Mean squared uniform Laplacian over vertices that have neighbors.
pub fn laplacian_loss(mesh: &TriMesh) -> LossGrad {
    let nbrs = mesh.vertex_neighbors();
    let residuals = laplacian_residuals(mesh);
    let isolated = residuals.iter().filter(|r| r.is_none()).count();
    if isolated > 0 {
        log::warn!("laplacian loss: {isolated} isolated vertices excluded");
    }
    let counted = residuals.len() - isolated;
    let mut out = LossGrad::zero(mesh.vertices.len());
    if counted == 0 {
        return out;
    }
    let inv = 1.0 / counted as f64;
    for (i, r) in residuals.iter().enumerate() {
        let Some(d) = r else { continue };
        out.value += d.norm_squared();
        out.grad[i] += 2.0 * inv * d;
        let share = 2.0 * inv / nbrs[i].len() as f64;
        for &j in &nbrs[i] {
            out.grad[j] -= share * d;
        }
    }
    out.value *= inv;
    out
}

/// Mean of `1 - n_a . n_b` over edges shared by exactly two faces.
pub fn normal_consistency_loss(mesh: &TriMesh) -> Result<LossGrad> {
    let normals = mesh.face_normals()?;
    let crosses: Vec<Vec3> = (0..mesh.faces.len()).map(|f| mesh.face_cross(f)).collect();
    let edges = mesh.interior_edges();
    let mut out = LossGrad::zero(mesh.vertices.len());
    if edges.is_empty() {
        return Ok(out);
    }
    let inv = 1.0 / edges.len() as f64;
    // d(loss)/d(cross_f), accumulated per face
    let mut dcross = vec![Vec3::zeros(); mesh.faces.len()];
    for &(_, fa, fb) in &edges {
        let (na, nb) = (normals[fa], normals[fb]);
        let cos = na.dot(&nb);
        out.value += 1.0 - cos;
        // d(n.m)/dc = (m - (n.m) n) / |c|
        dcross[fa] -= inv * (nb - cos * na) / crosses[fa].norm();
        dcross[fb] -= inv * (na - cos * nb) / crosses[fb].norm();
    }
    out.value *= inv;
    for (f, g) in dcross.iter().enumerate() {
        let [i0, i1, i2] = mesh.faces[f];
        let [p0, p1, p2] = mesh.corners(f);
        let (e1, e2) = (p1 - p0, p2 - p0);
        let g1 = e2.cross(g);
        let g2 = g.cross(&e1);
        out.grad[i1] += g1;
        out.grad[i2] += g2;
        out.grad[i0] -= g1 + g2;
    }
    Ok(out)
}

/// Unweighted values of the geometric terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub coll: f64,
    pub blk: f64,
    pub sym: f64,
    pub lap: f64,
    pub nc: f64,
}

impl LossBreakdown {
    pub fn weighted_total(&self, w: &LossWeights, enable_sym: bool) -> f64 {
        w.lambda_coll * self.coll
            + w.lambda_blk * self.blk
            + if enable_sym {
                w.lambda_sym * self.sym
            } else {
                0.0
            }
            + w.lambda_lap * self.lap
            + w.lambda_nc * self.nc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometryLoss {
    pub terms: LossBreakdown,
    pub total: f64,
    /// Per-vertex gradient of `total`.
    pub grad: Vec<Vec3>,
    /// Per-term per-vertex gradients (weighted), in breakdown order, for diagnostics.
    pub term_grads: [Vec<Vec3>; 5],
}

/// Weighted sum of the geometric terms with per-vertex gradient. The
/// samples must belong to `mesh` (their positions are re-evaluated on it).
pub fn total_geometry_loss(
    mesh: &TriMesh,
    samples: &SamplePoints,
    sdf: &BodySdf,
    cylinders: &[BlockingCylinder],
    weights: &LossWeights,
    enable_sym: bool,
) -> Result<GeometryLoss> {
    let mut samples = samples.clone();
    samples.relocate(mesh);
    let nv = mesh.vertices.len();
    let scatter = |lg: &LossGrad, w: f64| {
        let scaled: Vec<Vec3> = lg.grad.iter().map(|g| g * w).collect();
        let mut out = vec![Vec3::zeros(); nv];
        samples.scatter(mesh, &scaled, &mut out);
        out
    };
    let scale = |lg: &LossGrad, w: f64| lg.grad.iter().map(|g| g * w).collect::<Vec<_>>();

    let coll = collision_loss(&samples, sdf, weights.epsilon);
    let blk = blocking_loss(&samples, cylinders);
    let sym = if enable_sym {
        symmetry_loss(&samples)
    } else {
        LossGrad::zero(samples.len())
    };
    let lap = laplacian_loss(mesh);
    let nc = normal_consistency_loss(mesh)?;

    let sym_w = if enable_sym { weights.lambda_sym } else { 0.0 };
    let term_grads = [
        scatter(&coll, weights.lambda_coll),
        scatter(&blk, weights.lambda_blk),
        scatter(&sym, sym_w),
        scale(&lap, weights.lambda_lap),
        scale(&nc, weights.lambda_nc),
    ];
    let mut grad = vec![Vec3::zeros(); nv];
    for tg in &term_grads {
        for (g, t) in grad.iter_mut().zip(tg) {
            *g += t;
        }
    }
    let terms = LossBreakdown {
        coll: coll.value,
        blk: blk.value,
        sym: sym.value,
        lap: lap.value,
        nc: nc.value,
    };
    Ok(GeometryLoss {
        total: terms.weighted_total(weights, enable_sym),
        terms,
        grad,
        term_grads,
    })
}
