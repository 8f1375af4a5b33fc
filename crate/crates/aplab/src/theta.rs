//! The 1-periodic Gaussian comb f_delta(x) = sum_l exp(-(x-l)^2/delta):
//! direct evaluation, Fourier-series evaluation, extremal ratio, and the
//! Parseval lower bound on its variance. The peak/trough ratio of this
//! profile is the oscillation constant of the lattice density model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ThetaEvaluator {
    pub delta: f64,
    /// Target absolute truncation accuracy for both representations.
    pub eps: f64,
    /// Direct sum keeps terms with |x - lambda| <= lambda_cut.
    pub lambda_cut: usize,
    /// Fourier sum keeps harmonics m <= freq_cut.
    pub freq_cut: usize,
}

pub const DEFAULT_EPS: f64 = 1e-14;

impl ThetaEvaluator {
    pub fn new(delta: f64) -> Result<Self> {
        Self::with_eps(delta, DEFAULT_EPS)
    }

    pub fn with_eps(delta: f64, eps: f64) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
        }
        if !(eps.is_finite() && eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidParameter(format!("eps must lie in (0,1), got {eps}")));
        }
        let log_term = (10.0 / eps).ln();
        // Direct tail: sum_{r >= R} 2 e^{-r^2/delta} < eps once
        // e^{-R^2/delta} <= eps/10 (geometric domination with plenty of
        // slack), i.e. R >= sqrt(delta ln(10/eps)).
        let lambda_cut = (delta * log_term).sqrt().ceil() as usize + 2;
        // Fourier tail: terms 2 sqrt(pi delta) e^{-pi^2 m^2 delta} drop below
        // eps/10 once m >= sqrt(ln(10 max(1, 2 sqrt(pi delta))/eps)/(pi^2 delta)).
        let amp = 2.0 * (std::f64::consts::PI * delta).sqrt().max(1.0);
        let freq_cut = (((10.0 * amp / eps).ln() / (std::f64::consts::PI.powi(2) * delta))
            .sqrt()
            .ceil()) as usize
            + 2;
        Ok(ThetaEvaluator { delta, eps, lambda_cut, freq_cut })
    }
}

/// f_delta(x) from the lattice-sum definition, truncated at lambda_cut.
pub fn f_direct(x: f64, ev: &ThetaEvaluator) -> f64 {
    let nearest = x.round() as i64;
    let cut = ev.lambda_cut as i64;
    let mut sum = 0.0;
    for lambda in (nearest - cut)..=(nearest + cut) {
        let d = x - lambda as f64;
        sum += (-d * d / ev.delta).exp();
    }
    sum
}

/// f_delta(x) from its Fourier series: the transform of the Gaussian gives
/// fhat(m) = sqrt(pi delta) e^{-pi^2 m^2 delta}, so
/// f(x) = sqrt(pi delta) (1 + 2 sum_{m>=1} e^{-pi^2 m^2 delta} cos(2 pi m x)).
pub fn f_fourier(x: f64, ev: &ThetaEvaluator) -> f64 {
    let pi = std::f64::consts::PI;
    let mut sum = 1.0;
    for m in 1..=ev.freq_cut {
        let mf = m as f64;
        sum += 2.0 * (-pi * pi * mf * mf * ev.delta).exp() * (2.0 * pi * mf * x).cos();
    }
    (pi * ev.delta).sqrt() * sum
}

/// Mean of f over one period, the zeroth Fourier coefficient sqrt(pi delta).
pub fn f_mean(ev: &ThetaEvaluator) -> f64 {
    (std::f64::consts::PI * ev.delta).sqrt()
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExtremalRatio {
    pub x_max: f64,
    pub x_min: f64,
    /// C = f(x_max) / f(x_min) >= 1.
    pub c: f64,
    pub f_max: f64,
    pub f_min: f64,
}

/// Locates the extrema of f over one period by a 4096-point grid followed by
/// golden-section refinement in the bracketing cell (f is smooth with
/// bounded second derivative over the supported delta range, so the local
/// bracket is unimodal).
pub fn extremal_ratio(ev: &ThetaEvaluator) -> ExtremalRatio {
    const GRID: usize = 4096;
    let mut max_i = 0;
    let mut min_i = 0;
    let mut max_v = f64::MIN;
    let mut min_v = f64::MAX;
    for i in 0..GRID {
        let x = i as f64 / GRID as f64;
        let v = f_direct(x, ev);
        if v > max_v {
            max_v = v;
            max_i = i;
        }
        if v < min_v {
            min_v = v;
            min_i = i;
        }
    }
    let h = 1.0 / GRID as f64;
    let (x_max, f_max) = golden_refine(ev, max_i as f64 * h - h, max_i as f64 * h + h, true);
    let (x_min, f_min) = golden_refine(ev, min_i as f64 * h - h, min_i as f64 * h + h, false);
    ExtremalRatio {
        x_max: x_max.rem_euclid(1.0),
        x_min: x_min.rem_euclid(1.0),
        c: f_max / f_min,
        f_max,
        f_min,
    }
}

fn golden_refine(ev: &ThetaEvaluator, mut lo: f64, mut hi: f64, maximize: bool) -> (f64, f64) {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let score = |x: f64| {
        let v = f_direct(x, ev);
        if maximize {
            v
        } else {
            -v
        }
    };
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = score(x1);
    let mut f2 = score(x2);
    for _ in 0..80 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = score(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = score(x1);
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f_direct(x, ev))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VarianceBound {
    /// sum_{m != 0} fhat(m)^2 = 2 sum_{m>=1} pi delta e^{-2 pi^2 m^2 delta};
    /// the +-m frequencies contribute equally.
    pub series: f64,
    /// The same quantity by quadrature of (f - mean)^2 over one period.
    pub quadrature: f64,
}

/// Parseval identity for the variance of f, checked against direct
/// numerical integration. The periodic trapezoid rule converges spectrally
/// for analytic periodic integrands, so 8192 nodes leave only rounding.
pub fn variance_lower_bound(ev: &ThetaEvaluator) -> VarianceBound {
    let pi = std::f64::consts::PI;
    let mut series = 0.0;
    for m in 1..=ev.freq_cut.max(4) {
        let mf = m as f64;
        series += 2.0 * pi * ev.delta * (-2.0 * pi * pi * mf * mf * ev.delta).exp();
    }
    const NODES: usize = 8192;
    let mean = f_mean(ev);
    // Kahan summation keeps the quadrature error near one ulp of the result.
    let mut sum = 0.0;
    let mut comp = 0.0;
    for i in 0..NODES {
        let x = i as f64 / NODES as f64;
        let d = f_direct(x, ev) - mean;
        let term = d * d - comp;
        let t = sum + term;
        comp = (t - sum) - term;
        sum = t;
    }
    VarianceBound { series, quadrature: sum / NODES as f64 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rejects_bad_parameters() {
        assert!(ThetaEvaluator::new(0.0).is_err());
        assert!(ThetaEvaluator::new(-1.0).is_err());
        assert!(ThetaEvaluator::new(f64::NAN).is_err());
    }

    #[test]
    fn tiny_delta_is_a_single_spike() {
        let ev = ThetaEvaluator::new(1e-3).unwrap();
        assert_relative_eq!(f_direct(0.0, &ev), 1.0, max_relative = 1e-12);
        assert!(f_direct(0.5, &ev) < 1e-100);
    }

    #[test]
    fn symmetry_and_periodicity() {
        let ev = ThetaEvaluator::new(1.0 / 9.0).unwrap();
        for i in 0..200 {
            let x = i as f64 / 200.0;
            let v = f_direct(x, &ev);
            assert_relative_eq!(v, f_direct(x + 1.0, &ev), epsilon = 1e-13);
            assert_relative_eq!(v, f_direct(-x, &ev), epsilon = 1e-13);
            assert!(v > 0.0);
        }
    }

    #[test]
    fn representations_agree() {
        for &delta in &[0.05, 1.0 / 9.0, 0.5, 1.0, 5.0] {
            let ev = ThetaEvaluator::new(delta).unwrap();
            for i in 0..=1000 {
                let x = i as f64 / 1000.0;
                let a = f_direct(x, &ev);
                let b = f_fourier(x, &ev);
                assert!((a - b).abs() <= 1e-12, "delta={delta}, x={x}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn peak_trough_ratio_at_one_ninth() {
        let ev = ThetaEvaluator::new(1.0 / 9.0).unwrap();
        let r = f_direct(0.0, &ev) / f_direct(0.5, &ev);
        assert!((r - 4.745).abs() < 0.005, "ratio {r}");
    }

    #[test]
    fn mean_is_zeroth_coefficient() {
        for &delta in &[0.05, 1.0 / 9.0, 1.0] {
            let ev = ThetaEvaluator::new(delta).unwrap();
            const NODES: usize = 4096;
            let quad: f64 =
                (0..NODES).map(|i| f_direct(i as f64 / NODES as f64, &ev)).sum::<f64>()
                    / NODES as f64;
            assert_relative_eq!(quad, f_mean(&ev), epsilon = 1e-12);
        }
    }

    #[test]
    fn near_constant_at_delta_one() {
        let ev = ThetaEvaluator::new(1.0).unwrap();
        let mut max_v = f64::MIN;
        let mut min_v = f64::MAX;
        for i in 0..2000 {
            let v = f_direct(i as f64 / 2000.0, &ev);
            max_v = max_v.max(v);
            min_v = min_v.min(v);
        }
        assert!(max_v - min_v < 4e-4, "spread {}", max_v - min_v);
    }

    #[test]
    fn extremal_positions_and_monotone_contrast() {
        let deltas = [0.05, 0.1, 0.2, 0.5, 1.0];
        let mut last_c = f64::MAX;
        for &delta in &deltas {
            let ev = ThetaEvaluator::new(delta).unwrap();
            let ext = extremal_ratio(&ev);
            // Positions are verified, not assumed; at these deltas the first
            // harmonic dwarfs f64 noise so the extrema are well resolved.
            let dist_max = ext.x_max.min(1.0 - ext.x_max);
            assert!(dist_max < 1e-3, "x_max {} at delta {delta}", ext.x_max);
            assert!((ext.x_min - 0.5).abs() < 1e-3, "x_min {} at delta {delta}", ext.x_min);
            assert!(ext.c >= 1.0);
            assert!(ext.c < last_c, "C not decreasing at delta {delta}");
            last_c = ext.c;
        }
        // C -> 1 as delta grows.
        let wide = extremal_ratio(&ThetaEvaluator::new(5.0).unwrap());
        assert!(wide.c >= 1.0 && wide.c < 1.0 + 1e-9, "C {}", wide.c);
    }

    #[test]
    fn extremal_ratio_example() {
        let ext = extremal_ratio(&ThetaEvaluator::new(1.0 / 9.0).unwrap());
        assert!((ext.c - 4.745).abs() < 0.005);
    }

    #[test]
    fn parseval_matches_quadrature() {
        for &delta in &[1.0 / 9.0, 0.5, 1.0] {
            let ev = ThetaEvaluator::new(delta).unwrap();
            let vb = variance_lower_bound(&ev);
            assert!(vb.series > 0.0);
            assert!(
                (vb.series - vb.quadrature).abs() <= 1e-10,
                "delta={delta}: {} vs {}",
                vb.series,
                vb.quadrature
            );
        }
    }

    #[test]
    fn first_harmonic_dominates_for_wide_delta() {
        let pi = std::f64::consts::PI;
        for &delta in &[0.5, 1.0] {
            let ev = ThetaEvaluator::new(delta).unwrap();
            let vb = variance_lower_bound(&ev);
            let first = 2.0 * pi * delta * (-2.0 * pi * pi * delta).exp();
            assert!((vb.series - first) / vb.series < 0.01);
        }
    }
}
