//! Prime sieves: a simple Eratosthenes sieve for base primes, a
//! smallest-prime-factor table for direct factorization queries, and the
//! segment workhorse that factorizes a whole integer range in one sweep.

use super::factor::Factorization;
use crate::error::{Error, Result};

/// All primes `<= limit`.
pub fn simple_primes(limit: u64) -> Vec<u64> {
    if limit < 2 {
        return vec![];
    }
    let n = limit as usize;
    let mut composite = vec![false; n + 1];
    let mut primes = Vec::new();
    for p in 2..=n {
        if !composite[p] {
            primes.push(p as u64);
            let mut m = p * p;
            while m <= n {
                composite[m] = true;
                m += p;
            }
        }
    }
    primes
}

/// Smallest-prime-factor table covering `[0, limit]`.
pub struct SpfSieve {
    spf: Vec<u32>,
}

impl SpfSieve {
    pub fn new(limit: u32) -> Self {
        let n = limit as usize;
        let mut spf: Vec<u32> = (0..=limit).collect();
        let mut p = 2usize;
        while p * p <= n {
            if spf[p] == p as u32 {
                let mut m = p * p;
                while m <= n {
                    if spf[m] == m as u32 {
                        spf[m] = p as u32;
                    }
                    m += p;
                }
            }
            p += 1;
        }
        Self { spf }
    }

    pub fn limit(&self) -> u32 {
        (self.spf.len() - 1) as u32
    }

    /// Factorize `n` by repeated table lookup. `n` must be within coverage.
    pub fn factorize(&self, n: u32) -> Result<Factorization> {
        if n < 2 {
            return Err(Error::Domain(format!("factorize requires n >= 2, got {n}")));
        }
        if n > self.limit() {
            return Err(Error::Domain(format!(
                "n={n} beyond sieve coverage {}",
                self.limit()
            )));
        }
        let mut rest = n;
        let mut factors: Vec<(u128, u32)> = Vec::new();
        while rest > 1 {
            let p = self.spf[rest as usize];
            let mut a = 0u32;
            while rest.is_multiple_of(p) {
                rest /= p;
                a += 1;
            }
            factors.push((p as u128, a));
        }
        Factorization::new(factors)
    }
}

/// Exponent list of one integer, primes ascending. Primes themselves are
/// dropped: the undecorated tree only needs the exponents.
pub type ExponentList = Vec<u32>;

/// Factorizes every integer of a segment against a fixed base-prime list.
pub struct SegmentFactorizer {
    base: Vec<u64>,
    covered: u64,
}

impl SegmentFactorizer {
    /// Prepare base primes up to `sqrt(n_end)`; segments within
    /// `[2, n_end]` can then be processed.
    pub fn new(n_end: u64) -> Self {
        let root = (n_end as f64).sqrt() as u64 + 2;
        Self {
            base: simple_primes(root),
            covered: n_end,
        }
    }

    /// Exponent lists for every n in `[lo, hi]`, in order.
    pub fn exponents(&self, lo: u64, hi: u64) -> Result<Vec<ExponentList>> {
        if lo < 2 || lo > hi {
            return Err(Error::Domain(format!("bad segment [{lo}, {hi}]")));
        }
        if hi > self.covered {
            return Err(Error::Domain(format!(
                "segment end {hi} beyond prepared range {}",
                self.covered
            )));
        }
        let len = (hi - lo + 1) as usize;
        let mut remaining: Vec<u64> = (lo..=hi).collect();
        let mut out: Vec<ExponentList> = vec![Vec::new(); len];

        for &p in &self.base {
            if p.saturating_mul(p) > hi {
                break;
            }
            let start = lo.div_ceil(p) * p;
            let mut m = start;
            while m <= hi {
                let i = (m - lo) as usize;
                let mut a = 0u32;
                while remaining[i].is_multiple_of(p) {
                    remaining[i] /= p;
                    a += 1;
                }
                out[i].push(a);
                m += p;
            }
        }
        for (i, &r) in remaining.iter().enumerate() {
            if r > 1 {
                // lone prime survivor, necessarily larger than all base factors
                out[i].push(1);
            }
        }
        Ok(out)
    }
}
