use super::WeightTable;

/// Scales every view other than front and back by
/// `1 - (a_front + a_back) / sum(a)`. Rows summing to zero are untouched.
pub fn reweight_texel(row: &mut [f64], front: usize, back: Option<usize>) {
    let total: f64 = row.iter().sum();
    if total <= 0.0 {
        return;
    }
    let privileged = row[front] + back.map_or(0.0, |b| row[b]);
    let factor = 1.0 - privileged / total;
    for (v, a) in row.iter_mut().enumerate() {
        if v != front && Some(v) != back {
            *a *= factor;
        }
    }
}

/// Applies [`reweight_texel`] to every texel of the table.
pub fn reweight_side_views(table: &WeightTable, front: usize, back: Option<usize>) -> WeightTable {
    let mut out = table.clone();
    out.data
        .chunks_exact_mut(table.views)
        .for_each(|row| reweight_texel(row, front, back));
    out
}
