//! Halton low-discrepancy points.

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Radical inverse of `index` in `base`.
pub fn radical_inverse(mut index: u64, base: u32) -> f64 {
    let b = base as f64;
    let mut inv = 1.0 / b;
    let mut out = 0.0;
    while index > 0 {
        out += (index % base as u64) as f64 * inv;
        index /= base as u64;
        inv /= b;
    }
    out
}

/// `count` Halton points in `[lo, hi]^dim`, skipping the origin of the sequence.
pub fn halton_box(count: usize, dim: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    assert!(dim <= PRIMES.len(), "at most {} dimensions", PRIMES.len());
    (1..=count as u64)
        .map(|i| (0..dim).map(|d| lo + (hi - lo) * radical_inverse(i, PRIMES[d])).collect())
        .collect()
}
