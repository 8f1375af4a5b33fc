//! Lattice model of the low-degree part of the counter.
//!
//! kAP^1 + kAP^2 is the quadratic Q(ell) = C0 + C1 ell + C2 ell^2 of the
//! centred subset size ell, so it lives on a near-lattice with dominant
//! increment G = C1/sqrt(pq): the grid values A_t = Q(a0 + t/sqrt(pq)) - Q(a0)
//! are hit exactly when the subset has [pn] + t elements. The degree >= 3
//! tail Y smears each grid point by a width-sigma_Y Gaussian, and since
//! sigma_Y and G share the Theta(n) scale the smearing cannot flatten the
//! grid; the residual oscillation profile is f_delta with
//! delta = 2 p q sigma_Y^2 / C1^2.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, Discrete};

use crate::count::{validate_probability, APParams};
use crate::decomp::SigmaTable;
use crate::error::{Error, Result};
use crate::theta::{f_direct, ThetaEvaluator};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatticeModel {
    pub n: usize,
    pub k: usize,
    pub p: f64,
    pub q: f64,
    /// Centred value of ell at the most likely subset size [pn].
    pub a0: f64,
    /// Q(a0), the most likely value of kAP^1 + kAP^2.
    pub x0: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    /// Dominant increment G = C1/sqrt(pq); the period of the pmf oscillation.
    pub g: f64,
    /// Expected count p^k n floor(n/2).
    pub mu: f64,
    /// Oscillation profile parameter, 2 p q sigma_Y^2 / C1^2.
    pub delta: f64,
    pub sigma_y: f64,
    pub sigma_total: f64,
}

/// Round-half-up nearest integer; [pn] in the model. Half-up keeps
/// |a0| <= 1/(2 sqrt(pq)) so [pn] is genuinely the most likely size.
pub fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

pub fn build_lattice_model(n: usize, k: usize, p: f64, sigma: &SigmaTable) -> Result<LatticeModel> {
    validate_probability(p)?;
    let params = APParams::new(n, k)?;
    params.require_gcd_ok()?;
    if sigma.n != n || sigma.k != k {
        return Err(Error::InvalidParameter(format!(
            "sigma table is for (n={}, k={}), expected ({n}, {k})",
            sigma.n, sigma.k
        )));
    }
    let q = 1.0 - p;
    let nf = n as f64;
    let kf = k as f64;
    let c0 = -nf * kf * (kf - 1.0) / 4.0 * p.powi(k as i32 - 1) * q;
    let c1 = kf * (nf - 1.0) / 2.0 * p.powf(kf - 0.5) * q.sqrt()
        - (1.0 - 2.0 * p) * kf * (kf - 1.0) / 4.0 * p.powf(kf - 1.5) * q.sqrt();
    let c2 = kf * (kf - 1.0) / 4.0 * p.powi(k as i32 - 1) * q;
    if !(c1 > 0.0) {
        return Err(Error::Internal(format!("C1 = {c1} not positive on the valid grid")));
    }
    let root_pq = (p * q).sqrt();
    let a0 = (round_half_up(p * nf) - p * nf) / root_pq;
    debug_assert!(a0.abs() <= 0.5 / root_pq + 1e-12);
    let x0 = c0 + c1 * a0 + c2 * a0 * a0;
    let g = c1 / root_pq;
    let mu = p.powi(k as i32) * params.pair_count() as f64;
    let delta = delta_param(n, k, p, sigma)?;
    Ok(LatticeModel {
        n,
        k,
        p,
        q,
        a0,
        x0,
        c0,
        c1,
        c2,
        g,
        mu,
        delta,
        sigma_y: sigma.sigma_y,
        sigma_total: sigma.sigma_total,
    })
}

impl LatticeModel {
    pub fn quadratic(&self, ell: f64) -> f64 {
        self.c0 + self.c1 * ell + self.c2 * ell * ell
    }

    /// Theta evaluator at this model's delta.
    pub fn theta(&self) -> Result<ThetaEvaluator> {
        ThetaEvaluator::new(self.delta)
    }
}

/// Grid value A_t = Q(a0 + t/sqrt(pq)) - Q(a0), expanded to
/// C2 (2 t a0 / sqrt(pq) + t^2 / (pq)) + C1 t / sqrt(pq).
pub fn a_t(model: &LatticeModel, t: i64) -> f64 {
    let tf = t as f64;
    let pq = model.p * model.q;
    let root = pq.sqrt();
    model.c2 * (2.0 * tf * model.a0 / root + tf * tf / pq) + model.c1 * tf / root
}

/// The profile parameter delta = 2 p q sigma_Y^2 / C1^2.
///
/// The factor 2 converts the tail's Gaussian e^{-x^2/(2 sigma^2)} into the
/// comb convention e^{-x^2/delta} once positions are measured in units of G;
/// verified against direct bivariate-Gaussian integration in the tests.
pub fn delta_param(n: usize, k: usize, p: f64, sigma: &SigmaTable) -> Result<f64> {
    validate_probability(p)?;
    let q = 1.0 - p;
    let kf = k as f64;
    let nf = n as f64;
    let c1 = kf * (nf - 1.0) / 2.0 * p.powf(kf - 0.5) * q.sqrt()
        - (1.0 - 2.0 * p) * kf * (kf - 1.0) / 4.0 * p.powf(kf - 1.5) * q.sqrt();
    if !(c1 > 0.0) || sigma.sigma_y <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "delta requires C1 > 0 and sigma_Y > 0 (C1 = {c1}, sigma_Y = {})",
            sigma.sigma_y
        )));
    }
    Ok(2.0 * p * q * sigma.sigma_y * sigma.sigma_y / (c1 * c1))
}

/// One family of intervals I_alpha(i, B) = [G(i+alpha)-B, G(i+alpha)+B] for
/// |i| <= count, plus the eta cutoff used by the sandwich lemmas.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IntervalFamily {
    pub alpha: f64,
    /// Interval half-width B.
    pub half_width: f64,
    /// Number of intervals on each side of zero (s in the construction).
    pub count: u32,
    /// Tail cutoff eta for the sandwich lemmas.
    pub eta: u32,
}

impl IntervalFamily {
    pub fn new(alpha: f64, half_width: f64, count: u32, eta: u32) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidParameter(format!("alpha must lie in [0,1], got {alpha}")));
        }
        if !(half_width > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "interval half-width must be positive, got {half_width}"
            )));
        }
        if count == 0 || eta == 0 {
            return Err(Error::InvalidParameter("count and eta must be positive".into()));
        }
        Ok(IntervalFamily { alpha, half_width, count, eta })
    }

    /// The intervals are pairwise disjoint whenever B < G/2.
    pub fn disjoint(&self, model: &LatticeModel) -> bool {
        self.half_width < model.g / 2.0
    }

    /// Default eta = ceil(2 (ln n)^{k/2}), the concentration cutoff with an
    /// explicit constant 2.
    pub fn default_eta(n: usize, k: usize) -> u32 {
        (2.0 * (n as f64).ln().powf(k as f64 / 2.0)).ceil() as u32
    }

    /// True when (B, s, eta) satisfy the asymptotic exponents of the
    /// L_alpha probability lemma: B < n^{1-1/36} and eta < s < n^{1/2-1/24}.
    pub fn in_asymptotic_regime(&self, n: usize) -> bool {
        let nf = n as f64;
        self.half_width < nf.powf(1.0 - 1.0 / 36.0)
            && (self.eta as f64) < self.count as f64
            && (self.count as f64) < nf.powf(0.5 - 1.0 / 24.0)
    }
}

/// Membership of v in L_alpha(B, s) with the family's own count, O(1) by
/// rounding v/G - alpha and clamping into [-s, s].
pub fn in_l_alpha(model: &LatticeModel, fam: &IntervalFamily, v: f64) -> bool {
    l_alpha_contains(model.g, fam.alpha, fam.half_width, fam.count as i64, v)
}

/// exists i, |i| <= count, with |v - G(i+alpha)| <= half_width.
pub fn l_alpha_contains(g: f64, alpha: f64, half_width: f64, count: i64, v: f64) -> bool {
    let nearest = (v / g - alpha).round() as i64;
    for i in [nearest - 1, nearest, nearest + 1] {
        let i = i.clamp(-count, count);
        if (v - g * (i as f64 + alpha)).abs() <= half_width {
            return true;
        }
    }
    false
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LProbability {
    pub value: f64,
    /// True when (B, s, eta) sit outside the lemma's asymptotic regime;
    /// the leading-order value is still reported.
    pub extrapolated: bool,
}

/// Leading-order prediction P[X+Y in L_alpha(B,s)] =
/// 2 s B sqrt(2) / (sigma_Y sqrt(pi n p q)) * f_delta(alpha).
pub fn predicted_l_probability(
    model: &LatticeModel,
    fam: &IntervalFamily,
    theta: &ThetaEvaluator,
) -> Result<LProbability> {
    if fam.half_width <= 0.0 || fam.count == 0 {
        return Err(Error::InvalidParameter(
            "prediction requires positive B and s".into(),
        ));
    }
    let npq = model.n as f64 * model.p * model.q;
    let value = 2.0 * fam.count as f64 * fam.half_width * std::f64::consts::SQRT_2
        / (model.sigma_y * (std::f64::consts::PI * npq).sqrt())
        * f_direct(fam.alpha, theta);
    Ok(LProbability { value, extrapolated: !fam.in_asymptotic_regime(model.n) })
}

/// The three events of the sandwich lemmas, for X = A_t and Y = yval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SandwichEvents {
    /// X + Y in L_alpha(B, s).
    pub lhs: bool,
    /// |X| <= A_{s-eta} and Y in L_alpha(eta intervals, shrunk width);
    /// implies lhs in regime.
    pub rhs_lower: bool,
    /// |X| <= A_{s+eta+1} and Y in L_alpha(eta intervals, grown width);
    /// implied by lhs whenever |Y| <= eta G, in regime.
    pub rhs_upper: bool,
}

/// Evaluates the sandwich events. Preconditions (all required):
/// s > eta, B - C2(s^2+s)/pq >= 0, B < G/2, and
/// C2 (s+eta+2)(s+eta+3)/pq < G/2.
///
/// The grown width uses (s+eta+1)(s+eta+2), the bound the containment proof
/// actually yields; the off-by-one smaller width quoted with the lemma
/// statement admits boundary counterexamples at |t| = s+eta+1.
pub fn sandwich_check(
    model: &LatticeModel,
    fam: &IntervalFamily,
    t: i64,
    yval: f64,
) -> Result<SandwichEvents> {
    let s = fam.count as f64;
    let eta = fam.eta as f64;
    let b = fam.half_width;
    let pq = model.p * model.q;
    let slack_lower = model.c2 * (s * s + s) / pq;
    if fam.count <= fam.eta {
        return Err(Error::Regime(format!("lower lemma needs s > eta, got s={s}, eta={eta}")));
    }
    if b - slack_lower < 0.0 {
        return Err(Error::Regime(format!(
            "lower lemma needs B >= C2(s^2+s)/pq = {slack_lower}, got B = {b}"
        )));
    }
    if !(b < model.g / 2.0) {
        return Err(Error::Regime(format!("upper lemma needs B < G/2 = {}", model.g / 2.0)));
    }
    let deformation = model.c2 * (s + eta + 2.0) * (s + eta + 3.0) / pq;
    if !(deformation < model.g / 2.0) {
        return Err(Error::Regime(format!(
            "upper lemma needs C2(s+eta+2)(s+eta+3)/pq = {deformation} < G/2 = {}",
            model.g / 2.0
        )));
    }

    let x = a_t(model, t);
    let lhs = l_alpha_contains(model.g, fam.alpha, b, fam.count as i64, x + yval);

    let lower_gate = x.abs() <= a_t(model, (fam.count - fam.eta) as i64);
    let lower_width = b - slack_lower;
    let rhs_lower = lower_gate
        && l_alpha_contains(model.g, fam.alpha, lower_width, fam.eta as i64, yval);

    let upper_gate = x.abs() <= a_t(model, (fam.count + fam.eta + 1) as i64);
    let upper_width = b + model.c2 * (s + eta + 1.0) * (s + eta + 2.0) / pq;
    let rhs_upper = upper_gate
        && l_alpha_contains(model.g, fam.alpha, upper_width, fam.eta as i64, yval);

    Ok(SandwichEvents { lhs, rhs_lower, rhs_upper })
}

/// The conjectured discrete-Gaussian-convolution density:
/// p(x) = sum_t P[popcount = [pn]+t] phi(x - mu - x0 - A_t; sigma_Y),
/// with t truncated at |t| <= 10 sqrt(npq). Explicitly heuristic.
#[derive(Debug, Clone)]
pub struct PmfPredictor {
    center: f64,
    sigma_y: f64,
    /// (A_t, P[popcount = [pn]+t]) pairs over the truncated t range.
    grid: Vec<(f64, f64)>,
}

impl PmfPredictor {
    pub fn new(model: &LatticeModel) -> Result<Self> {
        let n = model.n;
        let binom = Binomial::new(model.p, n as u64)
            .map_err(|e| Error::InvalidParameter(format!("binomial pmf: {e}")))?;
        let mode = round_half_up(model.p * n as f64) as i64;
        let reach = (10.0 * (n as f64 * model.p * model.q).sqrt()).ceil() as i64;
        let mut grid = Vec::new();
        for t in -reach..=reach {
            let size = mode + t;
            if size < 0 || size > n as i64 {
                continue;
            }
            let prob = binom.pmf(size as u64);
            if prob > 0.0 {
                grid.push((a_t(model, t), prob));
            }
        }
        Ok(PmfPredictor { center: model.mu + model.x0, sigma_y: model.sigma_y, grid })
    }

    pub fn at(&self, x: i64) -> f64 {
        let xf = x as f64;
        let inv = 1.0 / (self.sigma_y * (2.0 * std::f64::consts::PI).sqrt());
        let mut sum = 0.0;
        for &(at, prob) in &self.grid {
            let z = (xf - self.center - at) / self.sigma_y;
            sum += prob * inv * (-0.5 * z * z).exp();
        }
        sum
    }
}

pub fn predicted_pmf(model: &LatticeModel, x: i64) -> Result<f64> {
    Ok(PmfPredictor::new(model)?.at(x))
}
