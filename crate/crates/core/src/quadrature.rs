//! Gauss–Legendre rules and mollifier convolution of piecewise-smooth jets.

use std::sync::OnceLock;

use crate::profiles::{mollifier, Jet};

/// Nodes and weights of an n-point Gauss–Legendre rule on [−1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    /// The 64-point rule used for every mollifier convolution.
    pub fn shared64() -> &'static GaussLegendre {
        static RULE: OnceLock<GaussLegendre> = OnceLock::new();
        RULE.get_or_init(|| GaussLegendre::new(64))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped to [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (mid + half * x, half * w))
    }

    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }

    /// Composite rule with `panels` equal panels.
    pub fn integrate_composite(
        &self,
        a: f64,
        b: f64,
        panels: usize,
        mut f: impl FnMut(f64) -> f64,
    ) -> f64 {
        let h = (b - a) / panels as f64;
        (0..panels)
            .map(|k| {
                let lo = a + h * k as f64;
                self.integrate(lo, lo + h, &mut f)
            })
            .sum()
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    (p1, nf * (x * p1 - p0) / (x * x - 1.0))
}

/// Componentwise convolution (F * ψ_η)(t) = ∫ F(t − s) ψ_η(s) ds of a family of jets.
///
/// `breaks` lists points where F is only C¹,¹; the support is split there so each panel
/// integrates a smooth piece. Derivatives are convolved directly, which is valid for
/// C¹,¹ inputs.
pub fn mollify_jets(
    eta: f64,
    t: f64,
    breaks: &[f64],
    out: &mut [Jet],
    mut eval: impl FnMut(f64, &mut [Jet]),
) {
    let rule = GaussLegendre::shared64();
    let mut cuts = vec![-eta];
    for &b in breaks {
        let s = t - b;
        if s > -eta && s < eta {
            cuts.push(s);
        }
    }
    cuts.push(eta);
    cuts.sort_by(f64::total_cmp);
    for o in out.iter_mut() {
        *o = Jet::ZERO;
    }
    let mut buf = vec![Jet::ZERO; out.len()];
    for pair in cuts.windows(2) {
        if pair[1] - pair[0] <= 0.0 {
            continue;
        }
        for (s, w) in rule.mapped(pair[0], pair[1]) {
            let weight = w * mollifier(eta, s).unwrap_or(0.0);
            if weight == 0.0 {
                continue;
            }
            eval(t - s, &mut buf);
            for (o, b) in out.iter_mut().zip(&buf) {
                *o = *o + b.scale(weight);
            }
        }
    }
}
