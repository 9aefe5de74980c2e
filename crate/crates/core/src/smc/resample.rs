use rand::Rng;

/// Systematic resampling with a single uniform offset drawn from `rng`.
pub fn systematic_resample<R: Rng + ?Sized>(weights: &[f64], count: usize, rng: &mut R) -> Vec<usize> {
    let u: f64 = rng.random();
    systematic_resample_with_offset(weights, count, u)
}

/// Systematic resampling at the points `(i + u) / count`, `u` in `[0, 1)`.
pub fn systematic_resample_with_offset(weights: &[f64], count: usize, u: f64) -> Vec<usize> {
    let mut out = Vec::with_capacity(count);
    if weights.is_empty() {
        return out;
    }
    // Points are scaled by the summed weight so that the final cumulative
    // value, accumulated in the same order, bounds every point exactly.
    let total: f64 = weights.iter().sum();
    let last = weights.len() - 1;
    let mut j = 0;
    let mut cum = weights[0];
    for i in 0..count {
        let point = (i as f64 + u) / count as f64 * total;
        while point >= cum && j < last {
            j += 1;
            cum += weights[j];
        }
        out.push(j);
    }
    out
}

/// Number of times each index occurs in `indices`.
pub fn offspring_counts(indices: &[usize], n: usize) -> Vec<usize> {
    let mut c = vec![0; n];
    for &i in indices {
        c[i] += 1;
    }
    c
}
