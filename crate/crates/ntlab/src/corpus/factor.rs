//! Integer factorization for one-off queries: trial division for small
//! factors, Miller-Rabin + Pollard-Brent rho for the rest. The streaming
//! corpus generator never comes through here; it uses the segmented sieve.

use crate::error::{Error, Result};

/// Ordered prime factorization. Primes strictly increase left to right and
/// every exponent is at least 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Factorization {
    factors: Vec<(u128, u32)>,
}

impl Factorization {
    pub fn new(factors: Vec<(u128, u32)>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Domain("factorization must be non-empty".into()));
        }
        for window in factors.windows(2) {
            if window[0].0 >= window[1].0 {
                return Err(Error::Domain("primes must strictly increase".into()));
            }
        }
        if factors.iter().any(|&(_, a)| a == 0) {
            return Err(Error::Domain("exponents must be positive".into()));
        }
        Ok(Self { factors })
    }

    pub fn factors(&self) -> &[(u128, u32)] {
        &self.factors
    }

    /// Number of distinct prime factors.
    pub fn distinct_primes(&self) -> usize {
        self.factors.len()
    }

    /// Reconstruct the source integer.
    pub fn value(&self) -> u128 {
        self.factors
            .iter()
            .map(|&(p, a)| p.pow(a))
            .product()
    }
}

/// Factor `n >= 2` into primes with exponents, primes ascending.
pub fn factorize(n: u128) -> Result<Factorization> {
    if n < 2 {
        return Err(Error::Domain(format!("factorize requires n >= 2, got {n}")));
    }
    let mut rest = n;
    let mut factors: Vec<(u128, u32)> = Vec::new();

    for p in [2u128, 3, 5] {
        push_prime(&mut factors, &mut rest, p);
    }
    // wheel over 6k +- 1
    let mut p = 7u128;
    while p * p <= rest && p < 1_000_000 {
        push_prime(&mut factors, &mut rest, p);
        push_prime(&mut factors, &mut rest, p + 4);
        p += 6;
    }

    if rest > 1 {
        let mut large = split_completely(rest);
        large.sort_unstable();
        let mut i = 0;
        while i < large.len() {
            let q = large[i];
            let mut a = 0u32;
            while i < large.len() && large[i] == q {
                a += 1;
                i += 1;
            }
            factors.push((q, a));
        }
    }
    Factorization::new(factors)
}

fn push_prime(factors: &mut Vec<(u128, u32)>, rest: &mut u128, p: u128) {
    if (*rest).is_multiple_of(p) {
        let mut a = 0u32;
        while (*rest).is_multiple_of(p) {
            *rest /= p;
            a += 1;
        }
        factors.push((p, a));
    }
}

/// Fully split a trial-division survivor into (unsorted) prime parts.
fn split_completely(n: u128) -> Vec<u128> {
    if n == 1 {
        return vec![];
    }
    if is_prime(n) {
        return vec![n];
    }
    let d = pollard_rho(n);
    let mut parts = split_completely(d);
    parts.extend(split_completely(n / d));
    parts
}

/// Deterministic Miller-Rabin for the full u64 range; the same witness set
/// remains deterministic up to ~3.3e24 and is a strong probabilistic test
/// beyond that.
pub fn is_prime(n: u128) -> bool {
    if n < 2 {
        return false;
    }
    for p in [2u128, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n == p {
            return true;
        }
        if n.is_multiple_of(p) {
            return false;
        }
    }
    let mut d = n - 1;
    let mut s = 0u32;
    while d.is_multiple_of(2) {
        d /= 2;
        s += 1;
    }
    'witness: for a in [2u128, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 0..s - 1 {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

fn add_mod(a: u128, b: u128, m: u128) -> u128 {
    if a >= m - b {
        a - (m - b)
    } else {
        a + b
    }
}

fn mul_mod(a: u128, b: u128, m: u128) -> u128 {
    // Exact fast path: both operands fit in 64 bits after reduction.
    if m <= u64::MAX as u128 {
        return (a % m) * (b % m) % m;
    }
    let mut a = a % m;
    let mut b = b % m;
    let mut acc = 0u128;
    while b > 0 {
        if b & 1 == 1 {
            acc = add_mod(acc, a, m);
        }
        a = add_mod(a, a, m);
        b >>= 1;
    }
    acc
}

fn pow_mod(mut base: u128, mut exp: u128, m: u128) -> u128 {
    let mut acc = 1u128 % m;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, m);
        }
        base = mul_mod(base, base, m);
        exp >>= 1;
    }
    acc
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Brent's cycle variant of Pollard rho. Input must be composite and odd.
fn pollard_rho(n: u128) -> u128 {
    if n.is_multiple_of(2) {
        return 2;
    }
    for c in 1u128.. {
        let f = |x: u128| add_mod(mul_mod(x, x, n), c, n);
        let (mut x, mut ys) = (2u128, 2u128);
        let mut y = 2u128;
        let mut d = 1u128;
        let mut q = 1u128;
        let m = 128u64;
        let mut r = 1u64;
        while d == 1 {
            x = y;
            for _ in 0..r {
                y = f(y);
            }
            let mut k = 0u64;
            while k < r && d == 1 {
                ys = y;
                for _ in 0..m.min(r - k) {
                    y = f(y);
                    q = mul_mod(q, x.abs_diff(y), n);
                }
                d = gcd(q, n);
                k += m;
            }
            r *= 2;
        }
        if d == n {
            // backtrack one step at a time
            d = 1;
            while d == 1 {
                ys = f(ys);
                d = gcd(x.abs_diff(ys), n);
            }
        }
        if d != n {
            return d;
        }
    }
    unreachable!()
}
