use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SimError;
use crate::history::{norm, HistoryError, HistorySegment};
use crate::scalar::Real;

/// Piecewise-constant signal: `values[k]` holds on `[t0 + k·dwell, t0 + (k+1)·dwell)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceSignal<T: Real> {
    pub seed: u64,
    pub t0: T,
    pub dwell: T,
    pub values: Vec<Vec<T>>,
}

impl<T: Real> DisturbanceSignal<T> {
    /// Identically zero signal with `l` components.
    pub fn zero(l: usize, dwell: T) -> Self {
        Self { seed: 0, t0: T::zero(), dwell, values: vec![vec![T::zero(); l]] }
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// Value on the dwell interval containing `t`; clamps outside the horizon.
    pub fn at(&self, t: T) -> &[T] {
        let k = ((t - self.t0) / self.dwell).floor().max(T::zero());
        let k = k.to_usize().unwrap_or(0).min(self.values.len() - 1);
        &self.values[k]
    }

    /// Value on the interval starting at grid step `t`, robust to roundoff in `t`.
    pub(crate) fn at_step(&self, t: T, dt: T) -> &[T] {
        self.at(t + dt * T::lit(1e-6))
    }
}

/// Reproducible signal, uniform in `bounds`, covering `[t0, t0 + horizon]`.
pub fn make_disturbance<T: Real>(
    seed: u64,
    dwell: T,
    bounds: &[(T, T)],
    t0: T,
    horizon: T,
) -> Result<DisturbanceSignal<T>, SimError> {
    if !(dwell > T::zero()) {
        return Err(SimError::BadDwell);
    }
    if let Some((i, &(lo, hi))) = bounds.iter().enumerate().find(|(_, b)| !(b.0 <= b.1)) {
        return Err(SimError::DegenerateBox { index: i, lo: lo.as_f64(), hi: hi.as_f64() });
    }
    let count = (horizon / dwell).ceil().to_usize().unwrap_or(0) + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..count)
        .map(|_| {
            bounds
                .iter()
                .map(|&(lo, hi)| {
                    if lo == hi {
                        lo
                    } else {
                        T::lit(rng.gen_range(lo.as_f64()..=hi.as_f64()))
                    }
                })
                .collect()
        })
        .collect();
    Ok(DisturbanceSignal { seed, t0, dwell, values })
}

/// Seeded smooth history `c_i + a_i cos(ω_i θ + φ_i)`, rescaled so that
/// `max_θ |x(θ)|` is uniform in `[radius/5, radius]`.
pub fn random_history<T: Real>(seed: u64, r: T, m: usize, dim: usize, radius: T) -> Result<HistorySegment<T>, HistoryError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let omega_max = 4.0 * std::f64::consts::PI / r.as_f64();
    let params: Vec<[f64; 4]> = (0..dim)
        .map(|_| {
            [
                rng.gen_range(-1.0..=1.0),
                rng.gen_range(-1.0..=1.0),
                rng.gen_range(0.0..=omega_max),
                rng.gen_range(0.0..=std::f64::consts::TAU),
            ]
        })
        .collect();
    let target = radius.as_f64() * rng.gen_range(0.2..=1.0);
    let raw = HistorySegment::from_fn(r, m, dim, |th: T| {
        let th = th.as_f64();
        params.iter().map(|p| T::lit(p[0] + p[1] * (p[2] * th + p[3]).cos())).collect()
    })?;
    let peak = (0..=m).map(|k| norm(raw.sample(k)).as_f64()).fold(0.0, f64::max);
    let scale = if peak > 0.0 { T::lit(target / peak) } else { T::zero() };
    HistorySegment::new(r, dim, raw.samples().iter().map(|&v| v * scale).collect())
}
