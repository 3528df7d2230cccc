//! Jacobian-field parameterization of mesh deformations.
//!
//! A deformation is described by one 3x3 matrix per template face. Vertex
//! positions are recovered by the least-squares Poisson solve
//!
//! ```text
//! argmin_X  sum_f area_f * || grad_f(X) - J_f ||_F^2
//! ```
//!
//! where `grad_f(X)` is the per-face deformation gradient of the piecewise
//! linear map on the template. The normal equations are the template's
//! cotangent Laplacian; translation is fixed by holding the area-weighted
//! centroid at the template centroid.

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::mesh::{TriMesh, Vec3};
use crate::sparse::{EnvelopeCholesky, SparseMatrix};

pub type Mat3 = Matrix3<f64>;

/// One 3x3 matrix per face. Row `k` is the target gradient of output coordinate `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianField {
    mats: Vec<Mat3>,
}

impl JacobianField {
    pub fn identity(faces: usize) -> Self {
        Self::uniform(faces, Mat3::identity())
    }

    pub fn uniform(faces: usize, m: Mat3) -> Self {
        JacobianField {
            mats: vec![m; faces],
        }
    }

    pub fn from_matrices(mats: Vec<Mat3>) -> Self {
        JacobianField { mats }
    }

    /// Row-major, nine entries per face.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() % 9 != 0 {
            return Err(Error::Shape(format!(
                "{} entries is not a multiple of 9",
                flat.len()
            )));
        }
        Ok(JacobianField {
            mats: flat.chunks_exact(9).map(Mat3::from_row_slice).collect(),
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.mats.len() * 9);
        for m in &self.mats {
            for r in 0..3 {
                for c in 0..3 {
                    out.push(m[(r, c)]);
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }

    pub fn matrices(&self) -> &[Mat3] {
        &self.mats
    }

    pub fn matrices_mut(&mut self) -> &mut [Mat3] {
        &mut self.mats
    }

    pub fn is_finite(&self) -> bool {
        self.mats.iter().all(|m| m.iter().all(|x| x.is_finite()))
    }

    /// Frobenius inner product summed over faces.
    pub fn dot(&self, other: &JacobianField) -> f64 {
        self.mats
            .iter()
            .zip(&other.mats)
            .map(|(a, b)| a.component_mul(b).sum())
            .sum()
    }
}

/// Prefactorized Poisson system for one connected template.
#[derive(Debug, Clone)]
pub struct PoissonSystem {
    faces: Vec<[usize; 3]>,
    areas: Vec<f64>,
    /// Gradient of each corner's hat function, per face.
    basis_grads: Vec<[Vec3; 3]>,
    centroid_weights: Vec<f64>,
    template: Vec<Vec3>,
    template_centroid: Vec3,
    laplacian: SparseMatrix,
    /// Factor of the Laplacian with vertex 0 grounded.
    factor: EnvelopeCholesky,
}

pub fn build_poisson_system(template: &TriMesh) -> Result<PoissonSystem> {
    let n = template.vertices.len();
    if template.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let mut referenced = vec![false; n];
    template
        .faces
        .iter()
        .flatten()
        .for_each(|&i| referenced[i] = true);
    let isolated = referenced.iter().filter(|r| !**r).count();
    let components = template.face_components() + isolated;
    if components != 1 {
        return Err(Error::Disconnected { components });
    }

    let mut areas = Vec::with_capacity(template.faces.len());
    let mut basis_grads = Vec::with_capacity(template.faces.len());
    let mut triplets = Vec::with_capacity(template.faces.len() * 9);
    for (f, tri) in template.faces.iter().enumerate() {
        let [p0, p1, p2] = template.corners(f);
        let cross = (p1 - p0).cross(&(p2 - p0));
        let double_area = cross.norm();
        if double_area <= 2.0 * crate::mesh::MIN_FACE_AREA {
            return Err(Error::DegenerateFaces { faces: vec![f] });
        }
        let normal = cross / double_area;
        let opposite = [p2 - p1, p0 - p2, p1 - p0];
        let g = opposite.map(|e| normal.cross(&e) / double_area);
        let area = 0.5 * double_area;
        for a in 0..3 {
            for b in 0..3 {
                triplets.push((tri[a], tri[b], area * g[a].dot(&g[b])));
            }
        }
        areas.push(area);
        basis_grads.push(g);
    }
    let laplacian = SparseMatrix::from_triplets(n, triplets);
    let factor = EnvelopeCholesky::factor(&laplacian.without_index(0))?;
    let centroid_weights = template.area_centroid_weights();
    let template_centroid = template.area_centroid();
    Ok(PoissonSystem {
        faces: template.faces.clone(),
        areas,
        basis_grads,
        centroid_weights,
        template: template.vertices.clone(),
        template_centroid,
        laplacian,
        factor,
    })
}

impl PoissonSystem {
    pub fn vertex_count(&self) -> usize {
        self.centroid_weights.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn laplacian(&self) -> &SparseMatrix {
        &self.laplacian
    }

    pub fn template_centroid(&self) -> Vec3 {
        self.template_centroid
    }

    /// Per-face deformation gradient of vertex positions `x` (rows = output coordinates).
    pub fn deformation_gradient(&self, x: &[Vec3]) -> Vec<Mat3> {
        self.faces
            .iter()
            .zip(&self.basis_grads)
            .map(|(tri, g)| {
                let mut m = Mat3::zeros();
                for c in 0..3 {
                    m += x[tri[c]] * g[c].transpose();
                }
                m
            })
            .collect()
    }

    /// Solves with vertex 0 grounded; valid because every right-hand side
    /// built here sums to zero.
    fn grounded_solve(&self, b: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0];
        u.extend(self.factor.solve(&b[1..]));
        u
    }

    fn check(&self, j: &JacobianField) -> Result<()> {
        if j.len() != self.faces.len() {
            return Err(Error::Shape(format!(
                "{} Jacobians for {} faces",
                j.len(),
                self.faces.len()
            )));
        }
        if !j.is_finite() {
            return Err(Error::NonFinite {
                what: "Jacobian field".into(),
            });
        }
        Ok(())
    }

    /// Vertex positions for a Jacobian field, centroid pinned to the template's.
    ///
    /// Evaluated as the template plus the solve of `J - I`, so identity
    /// Jacobians return the template vertices bit for bit.
    pub fn solve_deformation(&self, j: &JacobianField) -> Result<Vec<Vec3>> {
        self.check(j)?;
        let residual = JacobianField::from_matrices(
            j.matrices().iter().map(|m| m - Mat3::identity()).collect(),
        );
        let u = self.solve_centered(&residual)?;
        Ok(self.template.iter().zip(u).map(|(p, d)| p + d).collect())
    }

    /// The linear part of the solve (centroid pinned at the origin).
    pub fn solve_linear(&self, j: &JacobianField) -> Result<Vec<Vec3>> {
        self.solve_centered(j)
    }

    fn solve_centered(&self, j: &JacobianField) -> Result<Vec<Vec3>> {
        self.check(j)?;
        let n = self.vertex_count();
        let mut out = vec![Vec3::zeros(); n];
        for k in 0..3 {
            let mut rhs = vec![0.0; n];
            for ((tri, g), (m, area)) in self
                .faces
                .iter()
                .zip(&self.basis_grads)
                .zip(j.matrices().iter().zip(&self.areas))
            {
                let row = Vec3::new(m[(k, 0)], m[(k, 1)], m[(k, 2)]);
                for c in 0..3 {
                    rhs[tri[c]] += area * g[c].dot(&row);
                }
            }
            let u = self.grounded_solve(&rhs);
            let shift = -u
                .iter()
                .zip(&self.centroid_weights)
                .map(|(x, w)| x * w)
                .sum::<f64>();
            for (o, x) in out.iter_mut().zip(&u) {
                o[k] = x + shift;
            }
        }
        Ok(out)
    }

    /// Adjoint of [`solve_deformation`](Self::solve_deformation): maps a
    /// gradient on vertex positions to a gradient on the Jacobian field.
    pub fn backprop_deformation(&self, dl_dv: &[Vec3]) -> Result<JacobianField> {
        let n = self.vertex_count();
        if dl_dv.len() != n {
            return Err(Error::Shape(format!(
                "{} vertex gradients for {n} vertices",
                dl_dv.len()
            )));
        }
        if dl_dv.iter().any(|g| !g.iter().all(|x| x.is_finite())) {
            return Err(Error::NonFinite {
                what: "vertex gradient".into(),
            });
        }
        let mut mats = vec![Mat3::zeros(); self.faces.len()];
        for k in 0..3 {
            let total: f64 = dl_dv.iter().map(|g| g[k]).sum();
            let projected: Vec<f64> = dl_dv
                .iter()
                .zip(&self.centroid_weights)
                .map(|(g, w)| g[k] - w * total)
                .collect();
            let w = self.grounded_solve(&projected);
            for ((m, tri), (g, area)) in mats
                .iter_mut()
                .zip(&self.faces)
                .zip(self.basis_grads.iter().zip(&self.areas))
            {
                let mut row = Vec3::zeros();
                for c in 0..3 {
                    row += w[tri[c]] * g[c];
                }
                row *= *area;
                for c in 0..3 {
                    m[(k, c)] = row[c];
                }
            }
        }
        Ok(JacobianField::from_matrices(mats))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(faces: usize, rng: &mut ChaCha8Rng, scale: f64) -> JacobianField {
        JacobianField::from_matrices(
            (0..faces)
                .map(|_| Mat3::from_fn(|_, _| rng.random_range(-scale..scale)))
                .collect(),
        )
    }

    fn max_dev(a: &[Vec3], b: &[Vec3]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(p, q)| (p - q).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn single_triangle_identity() {
        let m = primitives::single_triangle();
        let sys = build_poisson_system(&m).unwrap();
        assert_eq!(sys.vertex_count(), 3);
        let x = sys.solve_deformation(&JacobianField::identity(1)).unwrap();
        assert!(max_dev(&x, &m.vertices) < 1e-12);
    }

    #[test]
    fn identity_reproduces_open_template() {
        let m = primitives::tube(0.3, -1.0, 1.0, 24, 12);
        let sys = build_poisson_system(&m).unwrap();
        let x = sys
            .solve_deformation(&JacobianField::identity(m.faces.len()))
            .unwrap();
        assert_eq!(x, m.vertices);
        // the full linear solve of I, shifted to the centroid, agrees too
        let c = sys.template_centroid();
        let lin = sys
            .solve_linear(&JacobianField::identity(m.faces.len()))
            .unwrap();
        let shifted: Vec<Vec3> = lin.iter().map(|p| p + c).collect();
        assert!(max_dev(&shifted, &m.vertices) < 1e-9);
    }

    #[test]
    fn scale_about_centroid() {
        let m = primitives::icosphere(2);
        let sys = build_poisson_system(&m).unwrap();
        let c = sys.template_centroid();
        let x = sys
            .solve_deformation(&JacobianField::uniform(
                m.faces.len(),
                Mat3::identity() * 1.7,
            ))
            .unwrap();
        let expect: Vec<Vec3> = m.vertices.iter().map(|v| c + 1.7 * (v - c)).collect();
        assert!(max_dev(&x, &expect) < 1e-6);
    }

    #[test]
    fn laplacian_has_cotangent_weights() {
        let m = primitives::uv_grid(3, 3, 1.0, 1.0);
        let sys = build_poisson_system(&m).unwrap();
        let l = sys.laplacian();
        for ((a, b), fa, fb) in m.interior_edges() {
            let cot = |f: usize| {
                let tri = m.faces[f];
                let o = *tri.iter().find(|&&v| v != a && v != b).unwrap();
                let (u, w) = (m.vertices[a] - m.vertices[o], m.vertices[b] - m.vertices[o]);
                u.dot(&w) / u.cross(&w).norm()
            };
            let expected = -0.5 * (cot(fa) + cot(fb));
            assert!((l.get(a, b) - expected).abs() < 1e-12);
        }
        for i in 0..m.vertices.len() {
            let row: f64 = l.row(i).iter().map(|e| e.1).sum();
            assert!(row.abs() < 1e-12);
        }
    }

    #[test]
    fn disconnected_rejected() {
        let a = primitives::single_triangle();
        let b = primitives::transformed(&a, |v| v + Vec3::new(5.0, 0.0, 0.0));
        let both = primitives::merge(&a, &b);
        assert!(matches!(
            build_poisson_system(&both),
            Err(Error::Disconnected { components: 2 })
        ));
    }

    #[test]
    fn non_finite_jacobian_rejected() {
        let m = primitives::single_triangle();
        let sys = build_poisson_system(&m).unwrap();
        let mut j = JacobianField::identity(1);
        j.matrices_mut()[0][(1, 2)] = f64::NAN;
        assert!(matches!(
            sys.solve_deformation(&j),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn zero_gradient_backprops_to_zero() {
        let m = primitives::icosphere(1);
        let sys = build_poisson_system(&m).unwrap();
        let g = sys
            .backprop_deformation(&vec![Vec3::zeros(); m.vertices.len()])
            .unwrap();
        assert!(g.matrices().iter().all(|x| x.norm() == 0.0));
    }

    #[test]
    fn solve_is_affine() {
        let m = primitives::tube(0.4, -0.5, 0.5, 12, 6);
        let sys = build_poisson_system(&m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let j1 = random_field(m.faces.len(), &mut rng, 1.0);
        let j2 = random_field(m.faces.len(), &mut rng, 1.0);
        let (a, b) = (0.3, -1.2);
        let combo = JacobianField::from_matrices(
            j1.matrices()
                .iter()
                .zip(j2.matrices())
                .map(|(x, y)| a * x + b * y)
                .collect(),
        );
        let x1 = sys.solve_deformation(&j1).unwrap();
        let x2 = sys.solve_deformation(&j2).unwrap();
        let xc = sys.solve_deformation(&combo).unwrap();
        // the pinned centroid enters with weight (1 - a - b)
        let pin = (1.0 - a - b) * sys.template_centroid();
        for i in 0..x1.len() {
            assert!((xc[i] - (a * x1[i] + b * x2[i] + pin)).norm() < 1e-9);
        }
    }

    #[test]
    fn adjoint_consistency() {
        let m = primitives::tube(0.4, -0.5, 0.5, 12, 6);
        let sys = build_poisson_system(&m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..5 {
            let dj = random_field(m.faces.len(), &mut rng, 1.0);
            let g: Vec<Vec3> = (0..m.vertices.len())
                .map(|_| Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)))
                .collect();
            let lhs = sys.backprop_deformation(&g).unwrap().dot(&dj);
            let x = sys.solve_linear(&dj).unwrap();
            let rhs: f64 = g.iter().zip(&x).map(|(a, b)| a.dot(b)).sum();
            assert!(
                (lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0),
                "{lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn backprop_is_linear() {
        let m = primitives::icosphere(1);
        let sys = build_poisson_system(&m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut rand_g = || -> Vec<Vec3> {
            (0..m.vertices.len())
                .map(|_| Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)))
                .collect()
        };
        let (g1, g2) = (rand_g(), rand_g());
        let (a, b) = (2.0, -0.5);
        let gc: Vec<Vec3> = g1.iter().zip(&g2).map(|(x, y)| a * x + b * y).collect();
        let r1 = sys.backprop_deformation(&g1).unwrap();
        let r2 = sys.backprop_deformation(&g2).unwrap();
        let rc = sys.backprop_deformation(&gc).unwrap();
        for ((x, y), z) in r1.matrices().iter().zip(r2.matrices()).zip(rc.matrices()) {
            assert!((a * x + b * y - z).amax() < 1e-10);
        }
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let j = random_field(4, &mut rng, 1.0);
        assert_eq!(JacobianField::from_flat(&j.to_flat()).unwrap(), j);
        assert!(JacobianField::from_flat(&[0.0; 10]).is_err());
    }
}
