//! Closed forms of the two-stage reference system for given `σ`, `r`.

use kforge::funclass::MonotoneEnvelope;

#[derive(Debug, Clone, Copy)]
pub struct ClosedForms {
    pub sigma: f64,
    pub r: f64,
    e: f64,
}

impl ClosedForms {
    pub fn new(sigma: f64, r: f64) -> Self {
        Self { sigma, r, e: (sigma * r).exp() }
    }

    pub fn mu1(&self, x: f64) -> f64 {
        self.e * (1.0 + self.r * (1.0 + x * x) * self.e) + 1.0 + 2.0 * self.sigma
    }

    pub fn k1(&self, x: f64) -> f64 {
        -self.mu1(x) * x
    }

    pub fn gamma1(&self, s: f64) -> f64 {
        self.e * (1.0 + self.r * s * self.e) + 1.0
    }

    pub fn rho1(&self, s: f64) -> f64 {
        self.e * (1.0 + 2.0 * self.r * s * self.e) + 1.0
    }

    pub fn delta1(&self, x: f64) -> f64 {
        (self.e * (1.0 + self.r * (1.0 + 3.0 * x * x) * self.e) + 1.0 + 2.0 * self.sigma) * self.mu1(x)
    }

    /// `B_2(s) = e(1 + r(1 + s²)e) + 1 + 2σ`.
    pub fn b2(&self) -> MonotoneEnvelope {
        let e = self.e;
        MonotoneEnvelope::Poly { coeffs: vec![e + self.r * e * e + 1.0 + 2.0 * self.sigma, 0.0, self.r * e * e] }
    }

    pub fn gamma2(&self, s: f64) -> f64 {
        let e = self.e;
        let a = e * (1.0 + self.r * (1.0 + 4.0 * s * s * e * e) * e) + 1.0 + 2.0 * self.sigma;
        2.0 * e * a + 4.0 * e * e * self.r * s * a * a + 1.0
    }

    pub fn mu2(&self, x1: f64, x2: f64) -> f64 {
        let z2 = x2 + self.mu1(x1) * x1;
        let p = 1.0 + x1 * x1 + z2 * z2;
        let (g1, g2, d1, r1) = (self.gamma1(p), self.gamma2(p), self.delta1(x1), self.rho1(p));
        let c = 3.0 / (4.0 * self.sigma);
        self.sigma + g2 + g1 * d1 + c * (g2 * g2 + g1 * g1 * d1 * d1 + r1 * r1)
    }

    pub fn u(&self, x1: f64, x2: f64) -> f64 {
        -self.mu2(x1, x2) * (x2 + self.mu1(x1) * x1)
    }

    pub fn q(&self, x1: f64, x2: f64) -> f64 {
        let z2 = x2 + self.mu1(x1) * x1;
        x1 * x1 + z2 * z2
    }
}
