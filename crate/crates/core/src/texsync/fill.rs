use std::collections::BTreeSet;

use super::LatentTexture;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FillReport {
    pub filled: usize,
    /// Charts without a single valid texel; they get the global mean.
    pub empty_charts: Vec<usize>,
}

/// Grows valid texels into invalid ones of the same chart, one ring at a
/// time; each new texel takes the mean of its already valid 4-neighbors.
/// `charts[i]` is the chart of texel `i`, `None` outside the layout.
pub fn fill_uv_voids(tex: &LatentTexture, charts: &[Option<usize>]) -> (LatentTexture, FillReport) {
    assert_eq!(charts.len(), tex.texel_count());
    let n = tex.size;
    let c = tex.channels;
    let mut out = tex.clone();
    let mut report = FillReport::default();

    let all_charts: BTreeSet<usize> = charts.iter().flatten().copied().collect();
    let seeded: BTreeSet<usize> = charts
        .iter()
        .zip(&tex.valid)
        .filter_map(|(ch, v)| ch.filter(|_| *v))
        .collect();
    let empty: Vec<usize> = all_charts.difference(&seeded).copied().collect();
    if !empty.is_empty() {
        let valid: Vec<usize> = (0..tex.texel_count()).filter(|&i| tex.valid[i]).collect();
        let mean: Vec<f64> = (0..c)
            .map(|k| {
                if valid.is_empty() {
                    0.0
                } else {
                    valid.iter().map(|&i| tex.data[i * c + k]).sum::<f64>() / valid.len() as f64
                }
            })
            .collect();
        for i in 0..tex.texel_count() {
            if charts[i].is_some_and(|ch| empty.contains(&ch)) && !out.valid[i] {
                out.texel_mut(i).copy_from_slice(&mean);
                out.valid[i] = true;
                report.filled += 1;
            }
        }
        report.empty_charts = empty;
    }

    let neighbors = |i: usize| {
        let (r, col) = (i / n, i % n);
        let mut v = Vec::with_capacity(4);
        if r > 0 {
            v.push(i - n);
        }
        if r + 1 < n {
            v.push(i + n);
        }
        if col > 0 {
            v.push(i - 1);
        }
        if col + 1 < n {
            v.push(i + 1);
        }
        v
    };
    loop {
        let mut ring: Vec<(usize, Vec<f64>)> = Vec::new();
        for i in 0..tex.texel_count() {
            let Some(ch) = charts[i] else { continue };
            if out.valid[i] {
                continue;
            }
            let src: Vec<usize> = neighbors(i)
                .into_iter()
                .filter(|&j| out.valid[j] && charts[j] == Some(ch))
                .collect();
            if src.is_empty() {
                continue;
            }
            let vals = (0..c)
                .map(|k| src.iter().map(|&j| out.data[j * c + k]).sum::<f64>() / src.len() as f64)
                .collect();
            ring.push((i, vals));
        }
        if ring.is_empty() {
            break;
        }
        for (i, vals) in ring {
            out.texel_mut(i).copy_from_slice(&vals);
            out.valid[i] = true;
            report.filled += 1;
        }
    }
    (out, report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(size: usize, f: impl Fn(usize) -> Option<f64>) -> LatentTexture {
        let mut t = LatentTexture::empty(size, 1);
        for i in 0..size * size {
            if let Some(v) = f(i) {
                t.data[i] = v;
                t.valid[i] = true;
            }
        }
        t
    }

    #[test]
    fn full_texture_unchanged() {
        let t = texture(4, |i| Some(i as f64));
        let (out, rep) = fill_uv_voids(&t, &vec![Some(0); 16]);
        assert_eq!(out, t);
        assert_eq!(rep.filled, 0);
    }

    #[test]
    fn single_seed_floods_chart() {
        let t = texture(5, |i| (i == 7).then_some(2.5));
        let charts: Vec<Option<usize>> = (0..25).map(|i| if i % 5 < 3 { Some(0) } else { None }).collect();
        let (out, _) = fill_uv_voids(&t, &charts);
        for i in 0..25 {
            assert_eq!(out.valid[i], charts[i].is_some());
            if charts[i].is_some() {
                assert_eq!(out.data[i], 2.5);
            }
        }
    }

    #[test]
    fn checkerboard_matches_nearest_valid_mean() {
        let n = 6;
        let t = texture(n, |i| ((i / n + i % n) % 2 == 0).then(|| ((i * 7919) % 13) as f64));
        let charts = vec![Some(0); n * n];
        let (out, _) = fill_uv_voids(&t, &charts);
        for i in 0..n * n {
            if t.valid[i] {
                assert_eq!(out.data[i], t.data[i]);
                continue;
            }
            let (r, c) = ((i / n) as f64, (i % n) as f64);
            let dist = |j: usize| (((j / n) as f64 - r).powi(2) + ((j % n) as f64 - c).powi(2)).sqrt();
            let best = (0..n * n).filter(|&j| t.valid[j]).map(dist).fold(f64::INFINITY, f64::min);
            let near: Vec<f64> = (0..n * n)
                .filter(|&j| t.valid[j] && dist(j) == best)
                .map(|j| t.data[j])
                .collect();
            let expect = near.iter().sum::<f64>() / near.len() as f64;
            assert!((out.data[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_chart_gets_global_mean() {
        let t = texture(4, |i| (i < 2).then_some(i as f64 + 1.0));
        let charts: Vec<Option<usize>> = (0..16).map(|i| Some(if i < 8 { 0 } else { 1 })).collect();
        let (out, rep) = fill_uv_voids(&t, &charts);
        assert_eq!(rep.empty_charts, vec![1]);
        for i in 8..16 {
            assert_eq!(out.data[i], 1.5);
        }
        assert!(out.valid.iter().all(|v| *v));
    }
}
