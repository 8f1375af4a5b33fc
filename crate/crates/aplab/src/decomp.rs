//! The p-biased Fourier decomposition of the progression counter.
//!
//! With y_i = (x_i - p)/sqrt(pq) the counter splits into homogeneous parts
//!
//!   kAP^l(y) = p^(k-l/2) q^(l/2) sum_{a,d} sum_{|S|=l} prod_{i in S} y_{a+id}
//!
//! whose sum over l = 0..k reconstructs the integer count. Monomials over
//! distinct index sets are orthonormal both under independent standard
//! normals and under the p-biased measure, so the normalizers
//!
//!   sigma_l^2 = sum_A r(A)^2,   r(A) = #{(a,d,S) : {a+id : i in S} = A}
//!
//! are exact integers, independent of p, and combine into the exact variance
//! of the counter: Var = sum_l p^(2k-l) q^l sigma_l^2.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::count::{validate_probability, APParams, SubsetSample};
use crate::error::{Error, Result};

/// The centred, unit-variance transform of one subset draw.
#[derive(Debug, Clone)]
pub struct BiasedVector {
    pub y: Vec<f64>,
    pub p: f64,
    pub q: f64,
}

impl BiasedVector {
    pub fn ell_sum(&self) -> f64 {
        self.y.iter().sum()
    }
}

/// y_i = (x_i - p)/sqrt(p(1-p)); mean zero and unit variance by construction.
pub fn biased_transform(s: &SubsetSample, p: f64) -> Result<BiasedVector> {
    validate_probability(p)?;
    let q = 1.0 - p;
    let root = (p * q).sqrt();
    let hi = (1.0 - p) / root;
    let lo = -p / root;
    let y = (0..s.n()).map(|i| if s.get(i) { hi } else { lo }).collect();
    Ok(BiasedVector { y, p, q })
}

/// All homogeneous components of one sample.
#[derive(Debug, Clone)]
pub struct DegreeComponents {
    /// raw[l] = kAP^l(y) for l = 0..=k.
    pub raw: Vec<f64>,
    /// Normalized components kAPbar^l = (raw sum without the p-power) / sigma_l,
    /// for l in the degree list 1, 3, 4, ..., k (degree 2 deliberately absent).
    pub normalized: Vec<f64>,
}

/// Degrees carried by the normalized vector: 1, 3, 4, ..., k.
pub fn normalized_degrees(k: usize) -> Vec<usize> {
    std::iter::once(1).chain(3..=k).collect()
}

/// Plain degree-l correlation sum sum_{a,d} sum_{|S|=l} prod_{i in S} y_{a+id},
/// without the p-power prefactor. Fixed loop order (d outer, a inner,
/// subsets innermost) keeps accumulation reproducible.
pub fn degree_sum(y: &[f64], ell: usize, params: &APParams) -> f64 {
    let n = params.n;
    let k = params.k;
    debug_assert!(ell <= k);
    debug_assert_eq!(y.len(), n);
    if ell == 0 {
        return params.pair_count() as f64;
    }
    let subsets = k_subsets(k, ell);
    let mut positions = vec![0usize; k];
    let mut total = 0.0;
    for d in 1..=params.d_max() {
        // positions[i] = (a + i*d) mod n, updated incrementally in a.
        for (i, pos) in positions.iter_mut().enumerate() {
            *pos = (i * d) % n;
        }
        let mut sum_d = 0.0;
        for _a in 0..n {
            for s in &subsets {
                let mut prod = 1.0;
                for &i in s {
                    prod *= y[positions[i]];
                }
                sum_d += prod;
            }
            for pos in positions.iter_mut() {
                *pos += 1;
                if *pos == n {
                    *pos = 0;
                }
            }
        }
        total += sum_d;
    }
    total
}

fn k_subsets(k: usize, ell: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(ell);
    fn rec(start: usize, k: usize, ell: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == ell {
            out.push(cur.clone());
            return;
        }
        for i in start..k {
            cur.push(i);
            rec(i + 1, k, ell, cur, out);
            cur.pop();
        }
    }
    rec(0, k, ell, &mut cur, &mut out);
    out
}

/// kAP^l(y) by direct triple loop, including the p^(k-l/2) q^(l/2) prefactor.
pub fn component_direct(y: &BiasedVector, ell: usize, params: &APParams) -> Result<f64> {
    params.require_gcd_ok()?;
    if ell > params.k {
        return Err(Error::InvalidParameter(format!(
            "degree {ell} exceeds k = {}",
            params.k
        )));
    }
    let pref = y.p.powf(params.k as f64 - ell as f64 / 2.0) * y.q.powf(ell as f64 / 2.0);
    Ok(pref * degree_sum(&y.y, ell, params))
}

/// Closed forms for the two low-degree components in terms of ell = sum y_i:
///
///   kAP^1 = (k(n-1)/2) p^(k-1/2) q^(1/2) ell
///   kAP^2 = C(k,2) (p^(k-1) q / 2) (ell^2 - n - ((1-2p)/sqrt(pq)) ell)
///
/// The kAP^2 form substitutes sum y_i^2 = n + ((1-2p)/sqrt(pq)) ell, exact
/// for p-biased indicator inputs.
pub fn closed_form_low_degrees(ell_sum: f64, n: usize, k: usize, p: f64) -> (f64, f64) {
    let q = 1.0 - p;
    let kap1 = degree1_coefficient(n, k, p) * ell_sum;
    let choose2 = (k * (k - 1) / 2) as f64;
    let sum_y_sq = n as f64 + (1.0 - 2.0 * p) / (p * q).sqrt() * ell_sum;
    let kap2 = choose2 * p.powi(k as i32 - 1) * q / 2.0 * (ell_sum * ell_sum - sum_y_sq);
    (kap1, kap2)
}

/// Coefficient of ell in kAP^1, i.e. (k(n-1)/2) p^(k-1/2) q^(1/2) for odd n
/// (written with floor(n/2) so even moduli stay consistent with counting).
pub fn degree1_coefficient(n: usize, k: usize, p: f64) -> f64 {
    let q = 1.0 - p;
    (k * (n / 2)) as f64 * p.powf(k as f64 - 0.5) * q.sqrt()
}

/// All components of one sample plus the reconstruction-ready normalized
/// vector. O(n^2 2^k); intended for moderate sample counts.
pub fn decompose(y: &BiasedVector, params: &APParams, sigma: &SigmaTable) -> Result<DegreeComponents> {
    params.require_gcd_ok()?;
    let k = params.k;
    let mut raw = Vec::with_capacity(k + 1);
    let mut plain = Vec::with_capacity(k + 1);
    for ell in 0..=k {
        let sum = degree_sum(&y.y, ell, params);
        plain.push(sum);
        let pref = y.p.powf(k as f64 - ell as f64 / 2.0) * y.q.powf(ell as f64 / 2.0);
        raw.push(pref * sum);
    }
    let normalized = normalized_degrees(k)
        .into_iter()
        .map(|ell| plain[ell] / sigma.sigma_ell(ell))
        .collect();
    Ok(DegreeComponents { raw, normalized })
}

/// Exact normalizer sigma_l^2 = sum_A r(A)^2, by enumerating every
/// (a, d, S) tuple and hashing the canonical (sorted) residue set A.
/// Deterministic, exact integer arithmetic throughout.
pub fn sigma_exact_sq(ell: usize, params: &APParams) -> Result<u64> {
    params.require_gcd_ok()?;
    if ell == 0 || ell > params.k {
        return Err(Error::InvalidParameter(format!(
            "sigma_l requires 1 <= l <= k, got l = {ell}, k = {}",
            params.k
        )));
    }
    if params.k > 8 || params.n >= (1 << 16) {
        return Err(Error::UnsupportedParameters(
            "sigma enumeration supports k <= 8 and n < 65536".into(),
        ));
    }
    let n = params.n;
    let subsets = k_subsets(params.k, ell);
    let mut counts: HashMap<u128, u32> = HashMap::new();
    let mut key_buf = [0u16; 8];
    for d in 1..=params.d_max() {
        for a in 0..n {
            for s in &subsets {
                for (slot, &i) in s.iter().enumerate() {
                    key_buf[slot] = ((a + i * d) % n) as u16;
                }
                key_buf[..ell].sort_unstable();
                let mut key: u128 = 0;
                for &r in &key_buf[..ell] {
                    key = key << 16 | r as u128;
                }
                *counts.entry(key).or_insert(0) += 1;
            }
        }
    }
    Ok(counts.values().map(|&r| (r as u64) * (r as u64)).sum())
}

pub fn sigma_exact(ell: usize, params: &APParams) -> Result<f64> {
    Ok((sigma_exact_sq(ell, params)? as f64).sqrt())
}

/// Exact normalization constants for one (n, k), with the p-dependent
/// variance aggregates applied on top.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SigmaTable {
    pub n: usize,
    pub k: usize,
    pub p: f64,
    /// sigma_l for l = 1..=k, as floats.
    pub sigma: Vec<f64>,
    /// The underlying exact integers sigma_l^2, l = 1..=k.
    pub sigma_sq: Vec<u64>,
    /// Standard deviation of the full counter:
    /// sigma_total^2 = sum_{l=1..k} p^(2k-l) q^l sigma_l^2.
    pub sigma_total: f64,
    /// Standard deviation of the degree >= 3 tail Y:
    /// sigma_y^2 = sum_{l=3..k} p^(2k-l) q^l sigma_l^2.
    pub sigma_y: f64,
}

impl SigmaTable {
    pub fn sigma_ell(&self, ell: usize) -> f64 {
        self.sigma[ell - 1]
    }

    pub fn sigma_ell_sq(&self, ell: usize) -> u64 {
        self.sigma_sq[ell - 1]
    }

    /// Variance of the counter, sigma_total^2.
    pub fn variance(&self) -> f64 {
        self.sigma_total * self.sigma_total
    }
}

fn weight(p: f64, k: usize, ell: usize) -> f64 {
    let q = 1.0 - p;
    p.powi((2 * k - ell) as i32) * q.powi(ell as i32)
}

fn assemble_table(params: &APParams, p: f64, sigma_sq: Vec<u64>) -> Result<SigmaTable> {
    let k = params.k;
    let n = params.n as f64;
    let sigma: Vec<f64> = sigma_sq.iter().map(|&s| (s as f64).sqrt()).collect();
    let mut var_total = 0.0;
    let mut var_tail = 0.0;
    for ell in 1..=k {
        let term = weight(p, k, ell) * sigma_sq[ell - 1] as f64;
        var_total += term;
        if ell >= 3 {
            var_tail += term;
        }
    }
    // Scale sanity: sigma_1 = sqrt(n) * k * floor(n/2) is Theta(k n^{3/2})
    // and every sigma_l (l >= 2) is Theta(n). Violations indicate an
    // enumeration bug, not bad input.
    let s1_scaled = sigma[0] / n.powf(1.5);
    if !(0.2 * k as f64..=0.51 * k as f64).contains(&s1_scaled) {
        return Err(Error::Internal(format!(
            "sigma_1/n^1.5 = {s1_scaled} outside its bracket"
        )));
    }
    for ell in 2..=k {
        let choose = binomial(k, ell) as f64;
        let scaled = sigma[ell - 1] / n;
        let (lo, hi) = (0.25 * choose.sqrt(), 2.0 * k as f64 * choose.sqrt());
        if !(lo..=hi).contains(&scaled) {
            return Err(Error::Internal(format!(
                "sigma_{ell}/n = {scaled} outside bracket [{lo}, {hi}]"
            )));
        }
    }
    Ok(SigmaTable {
        n: params.n,
        k,
        p,
        sigma,
        sigma_sq,
        sigma_total: var_total.sqrt(),
        sigma_y: var_tail.sqrt(),
    })
}

pub fn binomial(k: usize, ell: usize) -> u64 {
    if ell > k {
        return 0;
    }
    let mut r: u64 = 1;
    for i in 0..ell.min(k - ell) {
        r = r * (k - i) as u64 / (i + 1) as u64;
    }
    r
}

/// Builds the full table by exact enumeration of every degree.
pub fn sigma_table(params: &APParams, p: f64) -> Result<SigmaTable> {
    validate_probability(p)?;
    params.require_gcd_ok()?;
    let sigma_sq: Vec<u64> = (1..=params.k)
        .map(|ell| sigma_exact_sq(ell, params))
        .collect::<Result<_>>()?;
    assemble_table(params, p, sigma_sq)
}

/// The p-independent part of a table, cacheable per (n, k).
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SigmaCacheFile {
    n: usize,
    k: usize,
    sigma_sq: Vec<u64>,
}

/// Like [`sigma_table`], but consults a JSON cache directory keyed by (n, k);
/// the p-dependent aggregates are applied at load time.
pub fn sigma_table_cached(params: &APParams, p: f64, cache_dir: Option<&Path>) -> Result<SigmaTable> {
    validate_probability(p)?;
    params.require_gcd_ok()?;
    let Some(dir) = cache_dir else {
        return sigma_table(params, p);
    };
    let path = dir.join(format!("sigma_n{}_k{}.json", params.n, params.k));
    if path.exists() {
        let file: SigmaCacheFile = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
        if file.n == params.n && file.k == params.k && file.sigma_sq.len() == params.k {
            return assemble_table(params, p, file.sigma_sq);
        }
    }
    let table = sigma_table(params, p)?;
    std::fs::create_dir_all(dir)?;
    let file = SigmaCacheFile { n: params.n, k: params.k, sigma_sq: table.sigma_sq.clone() };
    std::fs::write(&path, serde_json::to_string_pretty(&file)?)?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::count::test_oracles::random_subset;
    use crate::count::{count_kap_naive, sample_subset};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn biased_values_at_half() {
        let s = SubsetSample::from_indices(5, &[0, 3]).unwrap();
        let y = biased_transform(&s, 0.5).unwrap();
        for v in &y.y {
            assert!((v.abs() - 1.0).abs() < 1e-15);
        }
        assert_eq!(y.y[0], 1.0);
        assert_eq!(y.y[1], -1.0);
    }

    #[test]
    fn biased_value_formula() {
        let s = SubsetSample::from_indices(4, &[0]).unwrap();
        let y = biased_transform(&s, 0.25).unwrap();
        let expect = 0.75 / (0.25f64 * 0.75).sqrt();
        assert_relative_eq!(y.y[0], expect, max_relative = 1e-15);
        // Mean-parameter consistency: y*sqrt(pq) + p recovers the bit.
        for (i, v) in y.y.iter().enumerate() {
            let x = v * (0.25f64 * 0.75).sqrt() + 0.25;
            assert_relative_eq!(x, if s.get(i) { 1.0 } else { 0.0 }, epsilon = 1e-12);
        }
    }

    #[test]
    fn biased_mean_is_centred() {
        let params = APParams::new(101, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let draws = 100_000;
        let mut total = 0.0;
        for _ in 0..draws {
            let s = sample_subset(&params, 0.3, &mut rng).unwrap();
            total += biased_transform(&s, 0.3).unwrap().ell_sum();
        }
        // Each y_i has unit variance, so ell_sum has variance n and the
        // empirical mean of ell_sum/n has SE sqrt(1/(n*draws)).
        let mean = total / (draws as f64 * 101.0);
        let se = (1.0 / (101.0 * draws as f64)).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn degree_zero_component() {
        let params = APParams::new(101, 3).unwrap();
        let s = random_subset(101, 0.4, &mut ChaCha8Rng::seed_from_u64(1));
        let y = biased_transform(&s, 0.5).unwrap();
        let c0 = component_direct(&y, 0, &params).unwrap();
        assert_relative_eq!(c0, 631.25, max_relative = 1e-12);
    }

    #[test]
    fn components_reconstruct_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &(n, k, p) in &[(31, 3, 0.3), (31, 4, 0.5), (101, 3, 0.5)] {
            let params = APParams::new(n, k).unwrap();
            for _ in 0..10 {
                let s = sample_subset(&params, p, &mut rng).unwrap();
                let y = biased_transform(&s, p).unwrap();
                let total: f64 =
                    (0..=k).map(|l| component_direct(&y, l, &params).unwrap()).sum();
                let count = count_kap_naive(&s, &params) as f64;
                assert_relative_eq!(total, count, max_relative = 1e-9, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn component_refuses_gcd_violation() {
        let params = APParams::new(10, 3).unwrap();
        let s = SubsetSample::full(10);
        let y = biased_transform(&s, 0.5).unwrap();
        assert!(matches!(component_direct(&y, 1, &params), Err(Error::GcdViolation { .. })));
    }

    #[test]
    fn closed_forms_match_direct_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(n, k, p) in &[(31, 3, 0.3), (31, 4, 0.3), (101, 3, 0.5)] {
            let params = APParams::new(n, k).unwrap();
            for _ in 0..10 {
                let s = sample_subset(&params, p, &mut rng).unwrap();
                let y = biased_transform(&s, p).unwrap();
                let (c1, c2) = closed_form_low_degrees(y.ell_sum(), n, k, p);
                let d1 = component_direct(&y, 1, &params).unwrap();
                let d2 = component_direct(&y, 2, &params).unwrap();
                assert_relative_eq!(c1, d1, max_relative = 1e-9, epsilon = 1e-9);
                assert_relative_eq!(c2, d2, max_relative = 1e-9, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn closed_form_at_zero_ell() {
        // ell = 0 at p = 1/2: kAP^1 vanishes, kAP^2 = -C(k,2) p^(k-1) q n / 2.
        let (c1, c2) = closed_form_low_degrees(0.0, 101, 3, 0.5);
        assert_eq!(c1, 0.0);
        assert_relative_eq!(c2, -3.0 * 0.25 * 0.5 * 101.0 / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn closed_form_example_n101() {
        let (c1, _) = closed_form_low_degrees(2.0, 101, 3, 0.5);
        assert_relative_eq!(c1, 37.5, max_relative = 1e-12);
    }

    #[test]
    fn sigma1_closed_form() {
        for &(n, k) in &[(31, 3), (31, 4), (101, 3), (101, 4)] {
            let params = APParams::new(n, k).unwrap();
            let expected = n as u64 * (k as u64 * (n as u64 / 2)).pow(2);
            assert_eq!(sigma_exact_sq(1, &params).unwrap(), expected, "n={n} k={k}");
        }
    }

    #[test]
    fn sigma2_matches_pair_formula() {
        // Each unordered residue pair is hit by each of the C(k,2) position
        // pairs exactly once when gcd(n,(k-1)!) = 1, so
        // sigma_2^2 = C(n,2) C(k,2)^2.
        for &(n, k) in &[(31, 3), (101, 3), (31, 4)] {
            let params = APParams::new(n, k).unwrap();
            let pairs = (n as u64) * (n as u64 - 1) / 2;
            let c = binomial(k, 2);
            assert_eq!(sigma_exact_sq(2, &params).unwrap(), pairs * c * c);
        }
    }

    #[test]
    fn sigma3_equality_question() {
        // Whether sigma_3^2 = n*floor(n/2) is answered by the run: equality
        // holds iff no 3-set is an AP in two ways, which fails iff 3 | n.
        let p101 = APParams::new(101, 3).unwrap();
        assert_eq!(sigma_exact_sq(3, &p101).unwrap(), 101 * 50);
        let p51 = APParams::new(51, 3).unwrap();
        assert_eq!(sigma_exact_sq(3, &p51).unwrap(), 51 * 25 + 2 * 51);
    }

    #[test]
    fn sigma_rejects_bad_degree() {
        let params = APParams::new(31, 3).unwrap();
        assert!(sigma_exact_sq(0, &params).is_err());
        assert!(sigma_exact_sq(4, &params).is_err());
        let bad = APParams::new(10, 3).unwrap();
        assert!(sigma_exact_sq(1, &bad).is_err());
    }

    #[test]
    fn table_aggregates() {
        let params = APParams::new(101, 3).unwrap();
        let t = sigma_table(&params, 0.5).unwrap();
        // Only the l = 3 term feeds sigma_y at k = 3.
        let expect_y = (0.5f64.powi(3) * 0.5f64.powi(3) * t.sigma_sq[2] as f64).sqrt();
        assert_relative_eq!(t.sigma_y, expect_y, max_relative = 1e-12);
        assert!(t.sigma_total > t.sigma_y);
    }

    #[test]
    fn sigma_independent_of_p() {
        let params = APParams::new(31, 3).unwrap();
        let t1 = sigma_table(&params, 0.3).unwrap();
        let t2 = sigma_table(&params, 0.7).unwrap();
        assert_eq!(t1.sigma_sq, t2.sigma_sq);
    }

    #[test]
    fn sigma1_scaling_across_n() {
        // sigma_1 / n^{3/2} = k (n-1) / (2n) for odd n; constant within 2%
        // across the grid.
        let ratios: Vec<f64> = [51usize, 101, 201]
            .iter()
            .map(|&n| {
                let params = APParams::new(n, 3).unwrap();
                sigma_exact(1, &params).unwrap() / (n as f64).powf(1.5)
            })
            .collect();
        for r in &ratios {
            assert!((r / ratios[0] - 1.0).abs() < 0.02, "ratios {ratios:?}");
        }
    }

    #[test]
    fn cache_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let params = APParams::new(31, 3).unwrap();
        let t1 = sigma_table_cached(&params, 0.5, Some(dir.path())).unwrap();
        // Second call hits the cache; a different p reuses the same integers.
        let t2 = sigma_table_cached(&params, 0.3, Some(dir.path())).unwrap();
        assert_eq!(t1.sigma_sq, t2.sigma_sq);
        assert_ne!(t1.sigma_total, t2.sigma_total);
        assert!(dir.path().join("sigma_n31_k3.json").exists());
    }
}
