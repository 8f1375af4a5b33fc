//! Fast cross-module invariant suite behind the `selftest` subcommand.
//! Every check is deterministic and self-contained; the suite passes iff
//! every line prints `ok`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::count::{
    count_3ap_convolution, count_kap_naive, flip_delta, sample_subset, APParams, SubsetSample,
};
use crate::decomp::{
    biased_transform, closed_form_low_degrees, component_direct, sigma_exact_sq, sigma_table,
};
use crate::error::{Error, Result};
use crate::lattice::{
    a_t, build_lattice_model, in_l_alpha, round_half_up, sandwich_check, IntervalFamily,
    PmfPredictor,
};
use crate::stats::{phi_cdf, run_mc, ExperimentConfig};
use crate::theta::{extremal_ratio, f_direct, f_fourier, variance_lower_bound, ThetaEvaluator};

type Check = (&'static str, fn() -> std::result::Result<(), String>);

fn fail(msg: String) -> std::result::Result<(), String> {
    Err(msg)
}

fn per_bit_count(s: &SubsetSample, params: &APParams) -> u64 {
    let n = params.n;
    let mut total = 0;
    for a in 0..n {
        for d in 1..=n / 2 {
            if (0..params.k).all(|i| s.get((a + i * d) % n)) {
                total += 1;
            }
        }
    }
    total
}

fn random_subset(n: usize, density: f64, rng: &mut ChaCha8Rng) -> SubsetSample {
    let mut s = SubsetSample::empty(n);
    for i in 0..n {
        if rng.gen::<f64>() < density {
            s.set(i, true);
        }
    }
    s
}

fn check_count_kernels() -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for &(n, k) in &[(7usize, 3usize), (12, 3), (31, 4), (33, 3)] {
        let params = APParams::new(n, k).map_err(|e| e.to_string())?;
        for _ in 0..20 {
            let s = random_subset(n, rng.gen_range(0.2..0.9), &mut rng);
            let fast = count_kap_naive(&s, &params);
            let slow = per_bit_count(&s, &params);
            if fast != slow {
                return fail(format!("kernel mismatch n={n} k={k}: {fast} vs {slow}"));
            }
        }
    }
    Ok(())
}

fn check_convolution() -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for &n in &[7usize, 31, 101] {
        let params = APParams::new(n, 3).map_err(|e| e.to_string())?;
        for _ in 0..15 {
            let s = random_subset(n, rng.gen_range(0.1..0.95), &mut rng);
            let a = count_3ap_convolution(&s, &params).map_err(|e| e.to_string())?;
            let b = count_kap_naive(&s, &params);
            if a != b {
                return fail(format!("convolution mismatch at n={n}: {a} vs {b}"));
            }
        }
    }
    if count_3ap_convolution(&SubsetSample::full(10), &APParams::new(10, 3).unwrap()).is_ok() {
        return fail("even n accepted by convolution kernel".into());
    }
    Ok(())
}

fn check_flip_delta() -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = APParams::new(31, 4).unwrap();
    for _ in 0..20 {
        let mut s = random_subset(31, 0.5, &mut rng);
        let t = rng.gen_range(0..31);
        let before = count_kap_naive(&s, &params);
        let delta = flip_delta(&s, t, &params).map_err(|e| e.to_string())?;
        s.toggle(t);
        let after = count_kap_naive(&s, &params);
        if after as i64 - before as i64 != delta {
            return fail(format!("flip delta mismatch at t={t}"));
        }
    }
    Ok(())
}

fn check_monotonicity() -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params = APParams::new(41, 3).unwrap();
    for _ in 0..10 {
        let small = random_subset(41, 0.4, &mut rng);
        let mut big = small.clone();
        for i in 0..41 {
            if rng.gen::<f64>() < 0.3 {
                big.set(i, true);
            }
        }
        if count_kap_naive(&small, &params) > count_kap_naive(&big, &params) {
            return fail("count not monotone under inclusion".into());
        }
    }
    Ok(())
}

fn check_sampling_contract() -> std::result::Result<(), String> {
    let params = APParams::new(101, 3).unwrap();
    let draw = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_subset(&params, 0.5, &mut rng).unwrap()
    };
    if draw(0xC0FFEE) != draw(0xC0FFEE) {
        return fail("sampling not reproducible".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    if sample_subset(&params, 1.0, &mut rng).is_ok() {
        return fail("p = 1 accepted".into());
    }
    Ok(())
}

fn check_reconstruction() -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for &(n, k, p) in &[(31usize, 3usize, 0.3), (31, 4, 0.5)] {
        let params = APParams::new(n, k).unwrap();
        for _ in 0..5 {
            let s = sample_subset(&params, p, &mut rng).unwrap();
            let y = biased_transform(&s, p).unwrap();
            let total: f64 = (0..=k)
                .map(|l| component_direct(&y, l, &params).unwrap())
                .sum();
            let count = count_kap_naive(&s, &params) as f64;
            if (total - count).abs() > 1e-9 * count.max(1.0) {
                return fail(format!("reconstruction off at n={n} k={k}: {total} vs {count}"));
            }
            let (c1, c2) = closed_form_low_degrees(y.ell_sum(), n, k, p);
            let d1 = component_direct(&y, 1, &params).unwrap();
            let d2 = component_direct(&y, 2, &params).unwrap();
            if (c1 - d1).abs() > 1e-9 * d1.abs().max(1.0) || (c2 - d2).abs() > 1e-9 * d2.abs().max(1.0)
            {
                return fail(format!("closed forms off at n={n} k={k}"));
            }
        }
    }
    Ok(())
}

fn check_sigma() -> std::result::Result<(), String> {
    let params = APParams::new(31, 3).unwrap();
    let s1 = sigma_exact_sq(1, &params).map_err(|e| e.to_string())?;
    if s1 != 31 * (3u64 * 15).pow(2) {
        return fail(format!("sigma_1^2 = {s1} differs from closed form"));
    }
    let t1 = sigma_table(&params, 0.3).map_err(|e| e.to_string())?;
    let t2 = sigma_table(&params, 0.7).map_err(|e| e.to_string())?;
    if t1.sigma_sq != t2.sigma_sq {
        return fail("sigma_l depends on p".into());
    }
    Ok(())
}

fn check_theta() -> std::result::Result<(), String> {
    for &delta in &[1.0 / 9.0, 1.0] {
        let ev = ThetaEvaluator::new(delta).unwrap();
        for i in 0..=200 {
            let x = i as f64 / 200.0;
            if (f_direct(x, &ev) - f_fourier(x, &ev)).abs() > 1e-12 {
                return fail(format!("theta representations disagree at delta={delta}, x={x}"));
            }
        }
        let vb = variance_lower_bound(&ev);
        if (vb.series - vb.quadrature).abs() > 1e-10 {
            return fail(format!("Parseval mismatch at delta={delta}"));
        }
    }
    let ext = extremal_ratio(&ThetaEvaluator::new(1.0 / 9.0).unwrap());
    if (ext.c - 4.745).abs() > 0.005 {
        return fail(format!("contrast C = {} at delta = 1/9", ext.c));
    }
    Ok(())
}

fn check_lattice_identities() -> std::result::Result<(), String> {
    let params = APParams::new(101, 3).unwrap();
    let sigma = sigma_table(&params, 0.5).unwrap();
    let m = build_lattice_model(101, 3, 0.5, &sigma).map_err(|e| e.to_string())?;
    let root = (m.p * m.q).sqrt();
    for t in -1000..=1000i64 {
        let tf = t as f64;
        let viaq = m.quadratic(m.a0 + tf / root) - m.quadratic(m.a0);
        let grid = a_t(&m, t);
        if (grid - viaq).abs() > 1e-12 * viaq.abs().max(1.0) {
            return fail(format!("A_t identity off at t={t}"));
        }
        if (grid - tf * m.g).abs() > m.c2 * (tf * tf + 2.0 * tf.abs()) / (m.p * m.q) + 1e-9 {
            return fail(format!("A_t bound violated at t={t}"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let s = sample_subset(&params, 0.5, &mut rng).unwrap();
        let y = biased_transform(&s, 0.5).unwrap();
        let (c1, c2) = closed_form_low_degrees(y.ell_sum(), 101, 3, 0.5);
        let x = c1 + c2 - m.x0;
        let t = s.popcount() as i64 - round_half_up(50.5) as i64;
        if (x - a_t(&m, t)).abs() > 1e-7 {
            return fail(format!("X != A_t at popcount {}", s.popcount()));
        }
    }
    Ok(())
}

fn check_delta_oracle() -> std::result::Result<(), String> {
    let params = APParams::new(101, 3).unwrap();
    let sigma = sigma_table(&params, 0.5).unwrap();
    let m = build_lattice_model(101, 3, 0.5, &sigma).unwrap();
    if (m.delta - 101.0 / 900.0).abs() > 1e-12 {
        return fail(format!("delta(101) = {} differs from 101/900", m.delta));
    }
    // Bivariate-Gaussian integration reproduces the f_delta profile.
    let b = m.g / 100.0;
    let theta = ThetaEvaluator::new(m.delta).unwrap();
    let norm = 2.0 * b / (m.sigma_y * (2.0 * std::f64::consts::PI).sqrt());
    for j in 0..=10 {
        let alpha = j as f64 / 10.0;
        let mut oracle = 0.0;
        for i in -20i64..=20 {
            let c = m.g * (i as f64 + alpha);
            oracle += phi_cdf((c + b) / m.sigma_y) - phi_cdf((c - b) / m.sigma_y);
        }
        let predicted = norm * f_direct(alpha, &theta);
        if (predicted / oracle - 1.0).abs() > 1e-2 {
            return fail(format!("delta profile off at alpha={alpha}"));
        }
    }
    Ok(())
}

fn check_l_alpha_membership() -> std::result::Result<(), String> {
    let params = APParams::new(101, 3).unwrap();
    let sigma = sigma_table(&params, 0.5).unwrap();
    let m = build_lattice_model(101, 3, 0.5, &sigma).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let fam = IntervalFamily::new(
            rng.gen_range(0.0..1.0),
            rng.gen_range(0.5..30.0),
            rng.gen_range(1..8),
            1,
        )
        .unwrap();
        let v = rng.gen_range(-12.0 * m.g..12.0 * m.g);
        let brute = (-(fam.count as i64)..=fam.count as i64)
            .any(|i| (v - m.g * (i as f64 + fam.alpha)).abs() <= fam.half_width);
        if in_l_alpha(&m, &fam, v) != brute {
            return fail(format!("membership mismatch at v={v}"));
        }
    }
    Ok(())
}

fn check_sandwich() -> std::result::Result<(), String> {
    let params = APParams::new(201, 3).unwrap();
    let sigma = sigma_table(&params, 0.5).unwrap();
    let m = build_lattice_model(201, 3, 0.5, &sigma).unwrap();
    let fam = IntervalFamily::new(0.25, 12.0, 2, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..2000 {
        let t = rng.gen_range(-6..=6);
        let yv = rng.gen_range(-4.0 * m.g..4.0 * m.g);
        let ev = sandwich_check(&m, &fam, t, yv).map_err(|e| e.to_string())?;
        if ev.rhs_lower && !ev.lhs {
            return fail(format!("lower sandwich violated at t={t}, y={yv}"));
        }
        if ev.lhs && yv.abs() <= fam.eta as f64 * m.g && !ev.rhs_upper {
            return fail(format!("upper sandwich violated at t={t}, y={yv}"));
        }
    }
    let overlap = IntervalFamily::new(0.0, m.g / 2.0 + 1.0, 3, 1).unwrap();
    match sandwich_check(&m, &overlap, 0, 0.0) {
        Err(Error::Regime(_)) => Ok(()),
        _ => fail("overlapping family not rejected".into()),
    }
}

fn check_mc_shard_invariance() -> std::result::Result<(), String> {
    let mut cfg = ExperimentConfig::new(31, 3, 0.4, 200, 99);
    cfg.shards = 1;
    let a = run_mc(&cfg).map_err(|e| e.to_string())?;
    cfg.shards = 5;
    let b = run_mc(&cfg).map_err(|e| e.to_string())?;
    if a.histogram != b.histogram {
        return fail("histogram depends on shard count".into());
    }
    if a.histogram.total != 200 {
        return fail("histogram total wrong".into());
    }
    Ok(())
}

fn check_predicted_pmf_normalization() -> std::result::Result<(), String> {
    let params = APParams::new(31, 3).unwrap();
    let sigma = sigma_table(&params, 0.5).unwrap();
    let m = build_lattice_model(31, 3, 0.5, &sigma).unwrap();
    let pred = PmfPredictor::new(&m).map_err(|e| e.to_string())?;
    let lo = (m.mu - 10.0 * m.sigma_total).floor() as i64;
    let hi = (m.mu + 10.0 * m.sigma_total).ceil() as i64;
    let total: f64 = (lo..=hi).map(|x| pred.at(x)).sum();
    if (total - 1.0).abs() > 1e-3 {
        return fail(format!("predicted pmf mass = {total}"));
    }
    Ok(())
}

const CHECKS: &[Check] = &[
    ("count_kernels_agree", check_count_kernels),
    ("convolution_matches_naive", check_convolution),
    ("flip_delta_matches_recount", check_flip_delta),
    ("count_monotone", check_monotonicity),
    ("sampling_contract", check_sampling_contract),
    ("decomposition_reconstructs", check_reconstruction),
    ("sigma_normalizers", check_sigma),
    ("theta_representations", check_theta),
    ("lattice_identities", check_lattice_identities),
    ("delta_profile_oracle", check_delta_oracle),
    ("l_alpha_membership", check_l_alpha_membership),
    ("sandwich_implications", check_sandwich),
    ("mc_shard_invariance", check_mc_shard_invariance),
    ("predicted_pmf_normalizes", check_predicted_pmf_normalization),
];

pub struct SelftestSummary {
    pub total: usize,
    pub failed: usize,
}

/// Runs every registered invariant check, printing one line per check.
pub fn run_selftest() -> Result<SelftestSummary> {
    let mut failed = 0;
    for (name, check) in CHECKS {
        match check() {
            Ok(()) => println!("ok {name}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL {name}: {msg}");
            }
        }
    }
    let summary = SelftestSummary { total: CHECKS.len(), failed };
    if failed > 0 {
        Err(Error::SelftestFailed { failed, total: CHECKS.len() })
    } else {
        Ok(summary)
    }
}
