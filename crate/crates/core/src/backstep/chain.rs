//! Pointwise evaluation of `μ_i`, `k_i`, `z_i`, `δ_i` over dual numbers.

use super::{Convention, SynthError, SynthesisResult};
use crate::scalar::{gradient, Dual, Scalar};

pub(crate) struct Chain {
    pub mu: Vec<Dual>,
    pub k: Vec<Dual>,
    /// `z_1 = ξ_1`, `z_j = ξ_j - k_{j-1}`.
    pub z: Vec<Dual>,
    pub delta: Vec<Dual>,
}

fn c(v: f64) -> Dual {
    Dual::constant(v)
}

fn sum(items: impl IntoIterator<Item = Dual>) -> Dual {
    items.into_iter().fold(c(0.0), |a, b| a + b)
}

impl SynthesisResult {
    /// Stages `1..=upto`; `δ_j` for `j < upto`, plus `δ_upto` if asked.
    pub(crate) fn chain(&self, upto: usize, xi: &[Dual], last_delta: bool) -> Chain {
        let mut ch = Chain { mu: vec![], k: vec![], z: vec![], delta: vec![] };
        for i in 1..=upto {
            let zi = if i == 1 { xi[0].clone() } else { xi[i - 1].clone() - ch.k[i - 2].clone() };
            ch.z.push(zi.clone());
            let mu = self.mu_stage(i, xi, &ch).scale(self.gain_scale[i - 1]);
            ch.k.push(-(mu.clone() * zi));
            ch.mu.push(mu);
            if i < upto || last_delta {
                let d = self.delta_stage(i, xi, &ch.mu);
                ch.delta.push(d);
            }
        }
        ch
    }

    fn delta_stage(&self, j: usize, xi: &[Dual], mu: &[Dual]) -> Dual {
        let g = gradient(|x| self.chain(j, x, false).k[j - 1].clone(), &xi[..j]);
        let norm = sum(g.into_iter().map(|v| v.square())).sqrt();
        let weight = sum(mu[..j].iter().cloned()) + c(self.convention.unit());
        norm * weight
    }

    fn mu_stage(&self, i: usize, xi: &[Dual], ch: &Chain) -> Dual {
        let n = self.n() as f64;
        let sigma = self.sigma();
        let st = |j: usize| &self.stages[j - 1];
        let gamma = |j: usize, p: &Dual| st(j).gamma.eval(p);
        let recip = |j: usize, p: &Dual| st(j).recip.eval(p);
        let rho = |j: usize, p: &Dual| st(j).rho.as_ref().expect("rho below the last stage").eval(p);
        let x1sq = xi[0].square();
        match i {
            1 => {
                let p = c(1.0) + x1sq;
                (gamma(1, &p) + c(n * sigma)) * recip(1, &p)
            }
            2 => {
                let p = c(1.0) + x1sq.clone() + ch.z[1].square();
                let (g1, g2, r1) = (gamma(1, &p), gamma(2, &p), rho(1, &p));
                let d1 = ch.delta[0].clone();
                let coeff = match self.convention {
                    Convention::General => 1.0 / sigma,
                    Convention::Worked => 0.75 / sigma,
                };
                let phi_const = self.spec.phi.deriv_sup(f64::MAX) == 0.0;
                let rho_factor = if self.convention == Convention::Worked && phi_const {
                    c(1.0)
                } else {
                    c(1.0) + ch.mu[0].square() * x1sq
                };
                let squares = g2.square() + g1.square() * d1.square() + r1.square() * rho_factor;
                recip(2, &p) * (c((n - 1.0) * sigma) + g2 + g1 * d1 + squares.scale(coeff))
            }
            _ => {
                let fi = i as f64;
                let p = c(fi / 2.0) + sum(ch.z[..i].iter().map(|z| z.square()));
                let g_sum = sum((1..i).map(|k| gamma(k, &p)));
                let gi = gamma(i, &p);
                let di = ch.delta[i - 2].clone();
                let c54 = 5.0 / (4.0 * sigma);
                let cross = sum((2..i).map(|j| ch.z[j - 1].square() * rho(j, &p).square() * ch.mu[j - 1].square()));
                let first = c((n + 1.0 - fi) * sigma)
                    + gi.square().scale(5.0 * (fi - 1.0) / (4.0 * sigma))
                    + gi
                    + g_sum.clone() * di.clone()
                    + cross.scale(c54);
                let rho_sq = sum((1..i).map(|j| rho(j, &p).square()));
                let nested = sum((2..i).map(|j| {
                    sum((1..j).map(|k| rho(k, &p))).square() * ch.delta[j - 2].square()
                }));
                let second = (g_sum.square() * di.square()).scale((fi - 1.0) / sigma)
                    + rho_sq
                    + nested
                    + x1sq * rho(1, &p).square() * ch.mu[0].square();
                recip(i, &p) * (first + second.scale(c54))
            }
        }
    }

    fn lift(&self, j: usize, xi: &[f64]) -> Result<Vec<Dual>, SynthError> {
        if xi.len() < j {
            return Err(SynthError::Dim { expected: j, got: xi.len() });
        }
        Ok(xi[..j].iter().map(|&v| c(v)).collect())
    }

    /// `μ_i(ξ_1..ξ_i)`. Panics if `xi` is shorter than `i`.
    pub fn mu(&self, i: usize, xi: &[f64]) -> f64 {
        let x = self.lift(i, xi).expect("xi too short");
        self.chain(i, &x, false).mu[i - 1].value()
    }

    /// `k_j(ξ_1..ξ_j)`. Panics if `xi` is shorter than `j`.
    pub fn k(&self, j: usize, xi: &[f64]) -> f64 {
        let x = self.lift(j, xi).expect("xi too short");
        self.chain(j, &x, false).k[j - 1].value()
    }

    /// Forward-mode `∇k_j`.
    pub fn grad_k(&self, j: usize, xi: &[f64]) -> Vec<f64> {
        let x = self.lift(j, xi).expect("xi too short");
        gradient(|v| self.chain(j, v, false).k[j - 1].clone(), &x)
            .iter()
            .map(Scalar::value)
            .collect()
    }

    pub fn delta(&self, j: usize, xi: &[f64]) -> f64 {
        let x = self.lift(j, xi).expect("xi too short");
        self.chain(j, &x, true).delta[j - 1].value()
    }

    /// `z_1..z_m` for `m = xi.len()`.
    pub fn z(&self, xi: &[f64]) -> Vec<f64> {
        let x: Vec<Dual> = xi.iter().map(|&v| c(v)).collect();
        let m = xi.len();
        let mut z = vec![xi[0]];
        if m > 1 {
            let ch = self.chain(m - 1, &x, false);
            z.extend((1..m).map(|j| xi[j] - ch.k[j - 1].value()));
        }
        z
    }

    /// Inverse of [`Self::z`].
    pub fn xi_from_z(&self, z: &[f64]) -> Vec<f64> {
        let mut xi = vec![z[0]];
        for j in 1..z.len() {
            let k = self.k(j, &xi);
            xi.push(z[j] + k);
        }
        xi
    }

    /// `Q(ξ) = ξ_1² + Σ_{j≥2} (ξ_j - k_{j-1})²`.
    pub fn q(&self, xi: &[f64]) -> f64 {
        self.z(xi).iter().map(|v| v * v).sum()
    }

    pub fn grad_q(&self, xi: &[f64]) -> Vec<f64> {
        let x: Vec<Dual> = xi.iter().map(|&v| c(v)).collect();
        gradient(|v| self.q_dual(v), &x).iter().map(Scalar::value).collect()
    }

    fn q_dual(&self, xi: &[Dual]) -> Dual {
        let m = xi.len();
        let mut acc = xi[0].square();
        if m > 1 {
            let ch = self.chain(m - 1, xi, false);
            for j in 1..m {
                acc = acc + (xi[j].clone() - ch.k[j - 1].clone()).square();
            }
        }
        acc
    }
}
