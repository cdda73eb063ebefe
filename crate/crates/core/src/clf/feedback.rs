use serde::Serialize;

use super::{ClfError, Coeffs, PsiVariant, QuadraticControlData};
use crate::scalar::Real;

/// `u = (√(b² + 4|ac| + 4|a|ρ(V)) - b) / (2a)` for `a < 0`, which makes
/// `a u² + b u + c + ρ(V) ≤ 0`.
pub fn feedback_k1_negative_a<T: Real>(k: &Coeffs<T>) -> Result<T, ClfError> {
    let Coeffs { a, b, c, rho_v } = *k;
    if !(a < T::zero()) {
        return Err(ClfError::WrongRegion { a: a.as_f64() });
    }
    let four = T::lit(4.0);
    let root = (b * b + four * (a * c).abs() + four * a.abs() * rho_v).sqrt();
    let u = if b > T::zero() {
        // same value, no cancellation between the root and b
        -T::lit(2.0) * (c.abs() + rho_v) / (root + b)
    } else {
        (root - b) / (T::lit(2.0) * a)
    };
    let residual = k.quadratic(u) + rho_v;
    let scale = T::one() + (a * u * u).abs() + (b * u).abs() + c.abs() + rho_v.abs();
    if residual > T::lit(1e-10) * scale {
        return Err(ClfError::Postcondition { residual: residual.as_f64() });
    }
    Ok(u)
}

fn clamp_toward_zero<T: Real>(lo: T, hi: T) -> T {
    T::zero().max(lo).min(hi)
}

/// Smallest `|u|` in `[lo, hi]` with `Ψ(u) ≤ q`, from the roots of the quadratic.
pub fn min_norm_feedback<T: Real>(k: &Coeffs<T>, q: T, lo: T, hi: T, variant: PsiVariant) -> Result<T, ClfError> {
    let Coeffs { a, b, c, rho_v } = *k;
    let c0 = c + rho_v - q;
    let infeasible = |residual: T| ClfError::Infeasible { lo: lo.as_f64(), hi: hi.as_f64(), residual: residual.as_f64() };
    let linear = |b: T| -> Result<T, ClfError> {
        // b u + c0 ≤ 0 on [lo, hi]
        if b > T::zero() {
            let edge = -c0 / b;
            if edge < lo {
                return Err(infeasible(b * lo + c0));
            }
            Ok(clamp_toward_zero(lo, edge.min(hi)))
        } else if b < T::zero() {
            let edge = -c0 / b;
            if edge > hi {
                return Err(infeasible(b * hi + c0));
            }
            Ok(clamp_toward_zero(edge.max(lo), hi))
        } else if c0 <= T::zero() {
            Ok(clamp_toward_zero(lo, hi))
        } else {
            Err(infeasible(c0))
        }
    };
    if a > T::zero() {
        let disc = b * b - T::lit(4.0) * a * c0;
        let vertex = (-b / (T::lit(2.0) * a)).max(lo).min(hi);
        let at_vertex = (a * vertex + b) * vertex + c0;
        if disc < T::zero() {
            return Err(infeasible(at_vertex));
        }
        let sq = disc.sqrt();
        let (r1, r2) = {
            let x = (-b - sq) / (T::lit(2.0) * a);
            let y = (-b + sq) / (T::lit(2.0) * a);
            (x.min(y), x.max(y))
        };
        let (l, h) = (r1.max(lo), r2.min(hi));
        if l > h {
            return Err(infeasible(at_vertex));
        }
        Ok(clamp_toward_zero(l, h))
    } else if a == T::zero() {
        linear(b)
    } else {
        match variant {
            PsiVariant::LinearTail => linear(b),
            PsiVariant::Full => {
                if k.psi(T::zero(), variant) <= q {
                    Ok(clamp_toward_zero(lo, hi))
                } else {
                    Ok(feedback_k1_negative_a(k)?.max(lo).min(hi))
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeCheck {
    pub pass: bool,
    /// Probes where the condition applied.
    pub checked: usize,
    /// Largest `lhs - rhs` seen (0 when vacuous).
    pub worst_margin: f64,
    pub worst_index: Option<usize>,
}

impl ProbeCheck {
    fn vacuous() -> Self {
        Self { pass: true, checked: 0, worst_margin: 0.0, worst_index: None }
    }

    fn record(&mut self, index: usize, margin: f64) {
        if self.checked == 0 || margin > self.worst_margin {
            self.worst_margin = margin;
            self.worst_index = Some(index);
        }
        self.checked += 1;
        if !(margin <= 0.0) {
            self.pass = false;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceCheck {
    pub pass: bool,
    /// `b²/|a|` along the sequence, over the points with `a < 0`.
    pub ratios: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImplicationReport {
    /// `a < 0 ⇒ -b²/(4a) + c ≤ -ρ(V) + q`.
    pub negative_a: ProbeCheck,
    /// `a < 0, b = 0 ⇒ c ≤ -ρ(V) + q`.
    pub zero_b: ProbeCheck,
    /// `b²/|a| → 0` along each declared sequence approaching `a = 0`.
    pub sequences: Vec<SequenceCheck>,
    pub pass: bool,
}

/// Probe-grid report of the negative-`a` implications and the ratio limit.
///
/// A sequence passes when its last ratio is below `tol` and the last three
/// ratios are nonincreasing; a limit cannot be decided from samples, so this
/// is a report, not a proof.
pub fn implication_checks<T: Real>(
    data: &QuadraticControlData<T>,
    grid: &[(T, Vec<T>)],
    sequences: &[Vec<(T, Vec<T>)>],
    tol: f64,
) -> ImplicationReport {
    let mut negative_a = ProbeCheck::vacuous();
    let mut zero_b = ProbeCheck::vacuous();
    for (idx, (t, x)) in grid.iter().enumerate() {
        let k = data.coeffs(*t, x);
        if !(k.a < T::zero()) {
            continue;
        }
        let bound = (-k.rho_v + (data.q)(*t)).as_f64();
        let lhs = (-k.b * k.b / (T::lit(4.0) * k.a) + k.c).as_f64();
        negative_a.record(idx, lhs - bound);
        if k.b.abs().as_f64() <= 1e-12 {
            zero_b.record(idx, k.c.as_f64() - bound);
        }
    }
    let sequences: Vec<SequenceCheck> = sequences
        .iter()
        .map(|seq| {
            let ratios: Vec<f64> = seq
                .iter()
                .map(|(t, x)| data.coeffs(*t, x))
                .filter(|k| k.a < T::zero())
                .map(|k| (k.b * k.b / k.a.abs()).as_f64())
                .collect();
            let tail = &ratios[ratios.len().saturating_sub(3)..];
            let decreasing = tail.windows(2).all(|w| w[1] <= w[0]);
            let pass = !ratios.is_empty() && decreasing && ratios[ratios.len() - 1] <= tol;
            SequenceCheck { pass, ratios }
        })
        .collect();
    let pass = negative_a.pass && zero_b.pass && sequences.iter().all(|s| s.pass);
    ImplicationReport { negative_a, zero_b, sequences, pass }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use proptest::prelude::*;

    #[test]
    fn k1_examples() {
        assert_eq!(feedback_k1_negative_a(&Coeffs::new(-1.0, 0.0, 0.0, 1.0)).unwrap(), -1.0);
        assert_eq!(feedback_k1_negative_a(&Coeffs::new(-1.0, 2.0, 0.0, 0.0)).unwrap(), 0.0);
        let u = feedback_k1_negative_a(&Coeffs::new(-2.0, 0.0, -3.0, 0.0)).unwrap();
        assert!((u + 24f64.sqrt() / 4.0).abs() < 1e-15);
        assert!(matches!(
            feedback_k1_negative_a(&Coeffs::new(0.0, 1.0, 0.0, 0.0)),
            Err(ClfError::WrongRegion { .. })
        ));
    }

    #[test]
    fn min_norm_examples() {
        let inf = f64::INFINITY;
        let f = PsiVariant::Full;
        assert_eq!(min_norm_feedback(&Coeffs::new(1.0, 0.0, -1.0, 0.0), 0.0, -inf, inf, f).unwrap(), 0.0);
        match min_norm_feedback(&Coeffs::new(1.0, 0.0, 1.0, 0.0), 0.0, -inf, inf, f) {
            Err(ClfError::Infeasible { residual, .. }) => assert_eq!(residual, 1.0),
            other => panic!("{other:?}"),
        }
        assert_eq!(min_norm_feedback(&Coeffs::new(0.0, 2.0, 1.0, 0.0), 0.0, -inf, inf, f).unwrap(), -0.5);
        assert_eq!(min_norm_feedback(&Coeffs::new(1.0, 0.0, -4.0, 0.0), 0.0, 1.0, 5.0, f).unwrap(), 1.0);
        assert!(min_norm_feedback(&Coeffs::new(1.0, 0.0, -4.0, 0.0), 0.0, 3.0, 5.0, f).is_err());
    }

    #[test]
    fn min_norm_matches_line_scan() {
        let cases = [
            Coeffs::new(1.0, 3.0, 1.0, 0.5),
            Coeffs::new(2.0, -1.0, -0.5, 0.0),
            Coeffs::new(0.0, -2.0, 3.0, 1.0),
            Coeffs::new(0.5, 4.0, 2.0, 0.0),
        ];
        for k in cases {
            let u = min_norm_feedback(&k, 0.0, -10.0, 10.0, PsiVariant::Full).unwrap();
            assert!(k.psi(u, PsiVariant::Full) <= 1e-12);
            for i in 0..=100_000 {
                let v = -10.0 + 20.0 * i as f64 / 100_000.0;
                if k.psi(v, PsiVariant::Full) <= 0.0 {
                    assert!(v.abs() >= u.abs() - 1e-9, "{k:?}: {v} beats {u}");
                }
            }
        }
    }

    #[test]
    fn implication_examples() {
        let pos = QuadraticControlData::constant(1.0, 1.0, 0.0, 0.0, 0.0);
        let grid: Vec<(f64, Vec<f64>)> = (0..5).map(|k| (0.0, vec![k as f64])).collect();
        let rep = implication_checks(&pos, &grid, &[], 1e-3);
        assert!(rep.pass && rep.negative_a.checked == 0);

        let data = |b: fn(f64) -> f64| QuadraticControlData::<f64> {
            a: Arc::new(|_, x| -x[0]),
            b: Arc::new(move |_, x| b(x[0])),
            c: Arc::new(|_, _| -1.0),
            rho: Arc::new(|_| 0.0),
            q: Arc::new(|_| 0.0),
            v: Arc::new(|_, _| 0.0),
        };
        let seq: Vec<(f64, Vec<f64>)> = (1..=12).map(|k| (0.0, vec![10f64.powi(-k)])).collect();
        let lin = implication_checks(&data(|e| e), &[], std::slice::from_ref(&seq), 1e-3);
        assert!(lin.sequences[0].pass, "{lin:?}");
        let sqrt = implication_checks(&data(f64::sqrt), &[], &[seq], 1e-3);
        assert!(!sqrt.sequences[0].pass);
        assert!(!sqrt.pass);
    }

    proptest! {
        #[test]
        fn k1_postcondition(a in -100.0..-1e-3f64, b in -100.0..100.0f64, c in -100.0..100.0f64, rv in 0.0..100.0f64) {
            let k = Coeffs::new(a, b, c, rv);
            let u = feedback_k1_negative_a(&k).unwrap();
            prop_assert!(k.quadratic(u) + rv <= 1e-10 * (1.0 + (a * u * u).abs() + (b * u).abs() + c.abs() + rv));
        }
    }
}
