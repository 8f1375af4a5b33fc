//! Sampling of p-biased subsets of Z/nZ and exact counting of k-term
//! arithmetic progressions.
//!
//! A progression is a pair (a, d) with a in Z/nZ and d in {1, ..., floor(n/2)}
//! such that a, a+d, ..., a+(k-1)d (mod n) all lie in the subset. d = 0 is
//! never counted, so the full set carries exactly n*floor(n/2) progressions
//! and the expected count under Bernoulli(p) bits is p^k * n * floor(n/2).
//!
//! Two counting kernels are provided and must agree exactly: a word-parallel
//! rotate-and-AND kernel for every (n, k), and an FFT convolution kernel for
//! k = 3 with odd n.

use rand::distributions::{Bernoulli, Distribution};
use rand::Rng;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};

/// Problem-size parameters for counting and decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct APParams {
    /// Modulus of the cyclic group.
    pub n: usize,
    /// Progression length, at least 3.
    pub k: usize,
    /// True iff gcd(n, (k-1)!) = 1. Raw counting works either way;
    /// operations relying on multilinearity refuse when this is false.
    pub gcd_ok: bool,
}

impl APParams {
    pub fn new(n: usize, k: usize) -> Result<Self> {
        if k < 3 {
            return Err(Error::InvalidParameter(format!("k must be >= 3, got {k}")));
        }
        if n < k {
            return Err(Error::InvalidParameter(format!("n must be >= k, got n={n}, k={k}")));
        }
        // gcd(n, (k-1)!) = 1 iff n shares no factor with any of 2..=k-1;
        // checked factor by factor to avoid forming (k-1)! itself.
        let gcd_ok = (2..k).all(|m| gcd(n, m) == 1);
        Ok(APParams { n, k, gcd_ok })
    }

    pub fn d_max(&self) -> usize {
        self.n / 2
    }

    /// Number of (a, d) progression slots, n * floor(n/2).
    pub fn pair_count(&self) -> u64 {
        self.n as u64 * (self.n / 2) as u64
    }

    pub fn require_gcd_ok(&self) -> Result<()> {
        if self.gcd_ok {
            Ok(())
        } else {
            Err(Error::GcdViolation { n: self.n, k: self.k })
        }
    }
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

pub fn validate_probability(p: f64) -> Result<()> {
    if p.is_finite() && p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("p must lie strictly in (0,1), got {p}")))
    }
}

/// One random subset draw: a bit vector over Z/nZ packed into 64-bit words.
/// Bits at positions >= n are kept zero so popcounts over whole words are
/// valid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsetSample {
    n: usize,
    words: Vec<u64>,
    popcount: usize,
}

impl SubsetSample {
    pub fn empty(n: usize) -> Self {
        SubsetSample { n, words: vec![0; n.div_ceil(64)], popcount: 0 }
    }

    pub fn full(n: usize) -> Self {
        let mut s = SubsetSample::empty(n);
        for i in 0..n {
            s.words[i / 64] |= 1 << (i % 64);
        }
        s.popcount = n;
        s
    }

    pub fn from_indices(n: usize, indices: &[usize]) -> Result<Self> {
        let mut s = SubsetSample::empty(n);
        for &i in indices {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, n });
            }
            s.set(i, true);
        }
        Ok(s)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn popcount(&self) -> usize {
        self.popcount
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.n);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        debug_assert!(i < self.n);
        let mask = 1u64 << (i % 64);
        let word = &mut self.words[i / 64];
        if value && *word & mask == 0 {
            *word |= mask;
            self.popcount += 1;
        } else if !value && *word & mask != 0 {
            *word &= !mask;
            self.popcount -= 1;
        }
    }

    pub fn toggle(&mut self, i: usize) {
        let v = self.get(i);
        self.set(i, !v);
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| self.get(i)).collect()
    }
}

/// Draws a subset with each bit independently true with probability p.
/// The bits are consumed from `rng` in index order 0..n, so a fixed seeded
/// stream yields a byte-identical sample on every run.
pub fn sample_subset<R: Rng>(params: &APParams, p: f64, rng: &mut R) -> Result<SubsetSample> {
    validate_probability(p)?;
    let bern = Bernoulli::new(p)
        .map_err(|e| Error::InvalidParameter(format!("bad Bernoulli parameter {p}: {e}")))?;
    let mut s = SubsetSample::empty(params.n);
    for i in 0..params.n {
        if bern.sample(rng) {
            s.words[i / 64] |= 1 << (i % 64);
            s.popcount += 1;
        }
    }
    Ok(s)
}

/// Scratch buffers for the counting kernel, reusable across samples of the
/// same modulus so the Monte Carlo loop allocates nothing per draw.
#[derive(Debug, Clone)]
pub struct CountScratch {
    n: usize,
    /// The subset's bit string repeated twice, so any cyclic rotation is a
    /// contiguous 64-bit window read.
    doubled: Vec<u64>,
    acc: Vec<u64>,
}

impl CountScratch {
    pub fn new(n: usize) -> Self {
        CountScratch {
            n,
            doubled: vec![0; (2 * n).div_ceil(64) + 1],
            acc: vec![0; n.div_ceil(64)],
        }
    }

    fn load(&mut self, s: &SubsetSample) {
        debug_assert_eq!(s.n(), self.n);
        let n = self.n;
        for w in self.doubled.iter_mut() {
            *w = 0;
        }
        for (j, &w) in s.words().iter().enumerate() {
            self.doubled[j] = w;
        }
        // Second copy at bit offset n.
        let (wo, bo) = (n / 64, n % 64);
        for (j, &w) in s.words().iter().enumerate() {
            self.doubled[j + wo] |= if bo == 0 { w } else { w << bo };
            if bo > 0 {
                self.doubled[j + wo + 1] |= w >> (64 - bo);
            }
        }
    }
}

/// Exact count of k-term arithmetic progressions in S: the number of pairs
/// (a, d), d in {1, ..., floor(n/2)}, with x_{a+id} = 1 for every i < k.
///
/// For each d the valid starts a are found word-parallel: AND together the
/// bit vector rotated by i*d for i = 0..k and popcount the survivors,
/// giving O(n^2 k / 64) overall. Rotations are free 64-bit window reads
/// into the doubled bit string.
pub fn count_kap_with(s: &SubsetSample, params: &APParams, scratch: &mut CountScratch) -> u64 {
    let n = params.n;
    debug_assert_eq!(s.n(), n);
    // Progressions address k distinct residues under the gcd condition, so
    // fewer than k elements cannot host one.
    if s.popcount() == 0 || (params.gcd_ok && s.popcount() < params.k) {
        return 0;
    }
    scratch.load(s);
    let nw = scratch.acc.len();
    let mut total: u64 = 0;
    for d in 1..=params.d_max() {
        scratch.acc.copy_from_slice(s.words());
        let mut alive = true;
        for i in 1..params.k {
            let shift = (i * d) % n;
            let (ws, bs) = (shift / 64, shift % 64);
            let mut any = 0u64;
            if bs == 0 {
                for j in 0..nw {
                    scratch.acc[j] &= scratch.doubled[j + ws];
                    any |= scratch.acc[j];
                }
            } else {
                for j in 0..nw {
                    let window =
                        (scratch.doubled[j + ws] >> bs) | (scratch.doubled[j + ws + 1] << (64 - bs));
                    scratch.acc[j] &= window;
                    any |= scratch.acc[j];
                }
            }
            if any == 0 {
                alive = false;
                break;
            }
        }
        if alive {
            total += scratch.acc.iter().map(|w| w.count_ones() as u64).sum::<u64>();
        }
    }
    total
}

/// Exact progression count; see [`count_kap_with`] for the kernel.
pub fn count_kap_naive(s: &SubsetSample, params: &APParams) -> u64 {
    let mut scratch = CountScratch::new(params.n);
    count_kap_with(s, params, &mut scratch)
}

/// Fast k = 3 counter for odd n via cyclic convolution:
/// count = (T - |S|)/2 with T = sum_b 1_S(b) * (1_S * 1_S)(2b).
///
/// T counts triples (u, v, b) in S^3 with u + v = 2b; the u = v triples are
/// the |S| degenerate ones and each genuine progression appears twice (once
/// per orientation, exactly one of which has d in range when n is odd).
///
/// The convolution runs through a double-precision FFT; the result values are
/// integers at most n, so the transform is validated by requiring every
/// rounded value to sit within 0.25 of the float (ample for n up to 1e6).
pub fn count_3ap_convolution(s: &SubsetSample, params: &APParams) -> Result<u64> {
    let n = params.n;
    if params.k != 3 {
        return Err(Error::UnsupportedParameters(format!(
            "convolution counter requires k = 3, got k = {}",
            params.k
        )));
    }
    if n % 2 == 0 {
        return Err(Error::UnsupportedParameters(format!(
            "convolution counter requires odd n, got n = {n}"
        )));
    }
    debug_assert_eq!(s.n(), n);

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);

    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|i| Complex::new(if s.get(i) { 1.0 } else { 0.0 }, 0.0))
        .collect();
    fft.process(&mut buf);
    for v in buf.iter_mut() {
        *v = *v * *v;
    }
    ifft.process(&mut buf);

    let scale = 1.0 / n as f64;
    let mut conv = vec![0u64; n];
    for (m, v) in buf.iter().enumerate() {
        let re = v.re * scale;
        let im = v.im * scale;
        let rounded = re.round();
        if (re - rounded).abs() >= 0.25 || im.abs() >= 0.25 || rounded < 0.0 {
            return Err(Error::Internal(format!(
                "convolution failed exactness check at index {m}: re={re}, im={im}"
            )));
        }
        conv[m] = rounded as u64;
    }

    let mut t: u64 = 0;
    for b in 0..n {
        if s.get(b) {
            t += conv[(2 * b) % n];
        }
    }
    let pop = s.popcount() as u64;
    if t < pop || (t - pop) % 2 != 0 {
        return Err(Error::Internal(format!(
            "convolution identity violated: T = {t}, |S| = {pop}"
        )));
    }
    Ok((t - pop) / 2)
}

/// Count change from toggling bit t: count(S with t flipped) - count(S),
/// evaluated by enumerating only the progressions through t.
pub fn flip_delta(s: &SubsetSample, t: usize, params: &APParams) -> Result<i64> {
    let n = params.n;
    if t >= n {
        return Err(Error::IndexOutOfRange { index: t, n });
    }
    let k = params.k;
    let now = s.get(t);
    let mut delta: i64 = 0;
    let mut starts = [0usize; 64];
    debug_assert!(k <= 64);
    for d in 1..=params.d_max() {
        // Starting points a = t - j*d for j < k; duplicates arise only when
        // gcd(n,(k-1)!) != 1 and must be counted once.
        let mut m = 0;
        for j in 0..k {
            let a = (t + n - (j * d) % n) % n;
            if !starts[..m].contains(&a) {
                starts[m] = a;
                m += 1;
            }
        }
        for &a in &starts[..m] {
            let mut others_set = true;
            for i in 0..k {
                let pos = (a + i * d) % n;
                if pos != t && !s.get(pos) {
                    others_set = false;
                    break;
                }
            }
            if others_set {
                // The progression is complete exactly when bit t is set.
                delta += if now { -1 } else { 1 };
            }
        }
    }
    Ok(delta)
}

#[cfg(test)]
pub(crate) mod test_oracles {
    use super::*;

    /// Independent counting oracle: plain per-bit triple loop, no bitset
    /// tricks shared with the implementation.
    pub fn count_bruteforce(s: &SubsetSample, params: &APParams) -> u64 {
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

    pub fn random_subset<R: rand::Rng>(n: usize, density: f64, rng: &mut R) -> SubsetSample {
        let mut s = SubsetSample::empty(n);
        for i in 0..n {
            if rng.gen::<f64>() < density {
                s.set(i, true);
            }
        }
        s
    }
}
