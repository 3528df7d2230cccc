use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::losses::mirror_x;
use crate::mesh::Vec3;

/// Added inside the logarithm so fully decayed kernels stay finite.
pub const ATTENTION_FLOOR: f64 = 1e-12;

/// Log of a Gaussian kernel on both the direct distance and the distance to
/// the x-mirrored point: `log(wd k(d) + wm k(d') + floor)`.
pub fn symmetric_attention_bias(
    points_a: &[Vec3],
    points_b: &[Vec3],
    w_direct: f64,
    w_mirror: f64,
    length_scale: f64,
) -> Result<DMatrix<f64>> {
    if !(w_direct >= 0.0 && w_mirror >= 0.0) || w_direct + w_mirror == 0.0 {
        return Err(Error::InvalidArgument(
            "attention weights must be non-negative and not both zero".into(),
        ));
    }
    if !(length_scale > 0.0) {
        return Err(Error::InvalidArgument("length scale must be positive".into()));
    }
    let inv = 1.0 / (2.0 * length_scale * length_scale);
    let mirrored: Vec<Vec3> = points_b.iter().map(mirror_x).collect();
    Ok(DMatrix::from_fn(points_a.len(), points_b.len(), |i, j| {
        let d2 = (points_a[i] - points_b[j]).norm_squared();
        let m2 = (points_a[i] - mirrored[j]).norm_squared();
        (w_direct * (-d2 * inv).exp() + w_mirror * (-m2 * inv).exp() + ATTENTION_FLOOR).ln()
    }))
}

/// `softmax(Q K^T / sqrt(d) + bias) V`, row-wise softmax.
pub fn apply_biased_attention(
    q: &DMatrix<f64>,
    k: &DMatrix<f64>,
    v: &DMatrix<f64>,
    bias: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if q.ncols() != k.ncols() || k.nrows() != v.nrows() || bias.shape() != (q.nrows(), k.nrows()) {
        return Err(Error::Shape(format!(
            "Q {:?}, K {:?}, V {:?}, bias {:?}",
            q.shape(),
            k.shape(),
            v.shape(),
            bias.shape()
        )));
    }
    let scale = 1.0 / (q.ncols().max(1) as f64).sqrt();
    let mut logits = q * k.transpose() * scale + bias;
    for mut row in logits.row_iter_mut() {
        let max = row.max();
        row.iter_mut().for_each(|x| *x = (*x - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    Ok(logits * v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_points_bias() {
        let a = [Vec3::new(0.5, 0.1, 0.0)];
        let b = symmetric_attention_bias(&a, &a, 0.7, 0.4, 0.3).unwrap();
        let d2 = 1.0f64; // distance to the mirror image squared
        let expect = (0.7 + 0.4 * (-d2 / (2.0 * 0.09)).exp() + ATTENTION_FLOOR).ln();
        assert!((b[(0, 0)] - expect).abs() < 1e-15);
        assert!(b[(0, 0)] >= 0.7f64.ln());
    }

    #[test]
    fn self_bias_is_symmetric() {
        let pts: Vec<Vec3> = (0..9)
            .map(|i| {
                let t = i as f64 * 0.7;
                Vec3::new(t.sin(), (1.3 * t).cos(), 0.2 * t)
            })
            .collect();
        let b = symmetric_attention_bias(&pts, &pts, 0.6, 0.9, 0.5).unwrap();
        assert_eq!(b, b.transpose());
    }

    #[test]
    fn mirror_beats_distant_point() {
        let a = [Vec3::new(0.5, 0.0, 0.0)];
        let b = [Vec3::new(-0.5, 0.0, 0.0), Vec3::new(3.0, 2.0, 1.0)];
        let m = symmetric_attention_bias(&a, &b, 1.0, 0.5, 0.2).unwrap();
        assert!(m[(0, 0)] > m[(0, 1)]);
    }

    #[test]
    fn invalid_parameters() {
        let a = [Vec3::zeros()];
        assert!(symmetric_attention_bias(&a, &a, 0.0, 0.0, 1.0).is_err());
        assert!(symmetric_attention_bias(&a, &a, -1.0, 1.0, 1.0).is_err());
        assert!(symmetric_attention_bias(&a, &a, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn zero_bias_is_plain_attention() {
        let q = DMatrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64 * 0.3);
        let k = DMatrix::from_fn(4, 2, |i, j| (i as f64 - j as f64) * 0.2);
        let v = DMatrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64);
        let out = apply_biased_attention(&q, &k, &v, &DMatrix::zeros(3, 4)).unwrap();
        for i in 0..3 {
            let logits: Vec<f64> = (0..4).map(|j| q.row(i).dot(&k.row(j)) / 2f64.sqrt()).collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for c in 0..3 {
                let expect: f64 = (0..4).map(|j| logits[j].exp() / z * v[(j, c)]).sum();
                assert!((out[(i, c)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dominant_bias_selects_row() {
        let q = DMatrix::from_element(2, 2, 0.1);
        let k = DMatrix::from_element(3, 2, 0.2);
        let v = DMatrix::from_fn(3, 2, |i, j| (i * 10 + j) as f64);
        let mut bias = DMatrix::zeros(2, 3);
        bias[(0, 2)] = 50.0;
        let out = apply_biased_attention(&q, &k, &v, &bias).unwrap();
        assert!((out[(0, 0)] - 20.0).abs() < 1e-6 && (out[(0, 1)] - 21.0).abs() < 1e-6);
        assert!(apply_biased_attention(&q, &k, &v, &DMatrix::zeros(3, 3)).is_err());
    }
}
