//! Gauss-Hermite rules and the Poisson-lognormal probability mass function.

use statrs::function::gamma::ln_gamma;

/// Nodes and weights for `∫ exp(-t²) f(t) dt ≈ Σ w_k f(t_k)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Newton iteration on the orthonormal Hermite recurrence.
    pub fn new(order: usize) -> Self {
        assert!(order >= 1);
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let pim4 = std::f64::consts::PI.powf(-0.25);
        let m = n.div_ceil(2);
        let nf = n as f64;
        let mut z = 0.0f64;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-14 {
                    break;
                }
            }
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            weights[i] = 2.0 / (pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        GaussHermite { nodes, weights }
    }
}

/// Univariate Poisson-lognormal: `y | ψ ~ Poisson(exp ψ)`, `ψ ~ N(mu, sigma²)`.
#[derive(Debug, Clone, Copy)]
pub struct PoissonLognormal {
    pub mu: f64,
    pub sigma: f64,
}

impl PoissonLognormal {
    pub fn new(mu: f64, sigma: f64) -> Self {
        PoissonLognormal { mu, sigma }
    }

    /// Log pmf at `k`, integrating over ψ with a Gauss-Hermite rule centred
    /// and scaled at the Laplace approximation of the integrand.
    pub fn ln_pmf(&self, k: u64, rule: &GaussHermite) -> f64 {
        let kf = k as f64;
        let lg = ln_gamma(kf + 1.0);
        if self.sigma <= 0.0 {
            return kf * self.mu - self.mu.exp() - lg;
        }
        let prec = 1.0 / (self.sigma * self.sigma);
        let log_integrand =
            |psi: f64| kf * psi - psi.exp() - lg - 0.5 * prec * (psi - self.mu).powi(2);

        // mode of kψ - e^ψ - (ψ-μ)²/(2σ²); the objective is strictly concave
        let mut mode = if k > 0 { 0.5 * (kf.ln() + self.mu) } else { self.mu };
        for _ in 0..100 {
            let e = mode.exp();
            let grad = kf - e - prec * (mode - self.mu);
            let hess = -e - prec;
            let step = grad / hess;
            let next = mode - step.clamp(-5.0, 5.0);
            if (next - mode).abs() < 1e-12 {
                mode = next;
                break;
            }
            mode = next;
        }
        let curvature = mode.exp() + prec;
        let scale = (2.0 / curvature).sqrt();
        let peak = log_integrand(mode);
        let mut acc = 0.0;
        for (t, w) in rule.nodes.iter().zip(&rule.weights) {
            let psi = mode + scale * t;
            acc += w * (log_integrand(psi) - peak + t * t).exp();
        }
        peak + (scale * acc).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - self.sigma.ln()
    }

    pub fn pmf(&self, k: u64, rule: &GaussHermite) -> f64 {
        self.ln_pmf(k, rule).exp()
    }

    /// Pmf values on `0..=k_max`, where `k_max` is the first count at which
    /// the cumulative mass reaches `1 - tail`.
    pub fn truncated_pmf(&self, tail: f64, rule: &GaussHermite) -> Vec<f64> {
        let mut out = Vec::new();
        let mut cum = 0.0;
        let mut k = 0u64;
        // hard stop far beyond any reasonable upper quantile
        let hard_cap = ((self.mu + 12.0 * self.sigma).exp() * 4.0 + 1000.0).min(5e7) as u64;
        while cum < 1.0 - tail && k <= hard_cap {
            let p = self.pmf(k, rule);
            cum += p;
            out.push(p);
            k += 1;
        }
        out
    }
}
