//! NTT-friendly prime generation.

use super::modulus::Modulus;

/// Deterministic Miller-Rabin for 64-bit integers.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const WITNESSES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for p in WITNESSES {
        if n % p == 0 {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    let mulmod = |a: u64, b: u64| ((a as u128 * b as u128) % n as u128) as u64;
    let powmod = |mut b: u64, mut e: u64| {
        let mut acc = 1u64;
        while e > 0 {
            if e & 1 == 1 {
                acc = mulmod(acc, b);
            }
            b = mulmod(b, b);
            e >>= 1;
        }
        acc
    };
    'witness: for a in WITNESSES {
        let mut x = powmod(a, d);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mulmod(x, x);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Largest primes of exactly `bits` bits congruent to 1 mod `2 * degree`, skipping
/// anything in `exclude`. Returned in descending order.
pub fn ntt_primes(bits: u32, degree: usize, count: usize, exclude: &[u64]) -> Vec<u64> {
    assert!((20..=61).contains(&bits), "prime bit size {bits} unsupported");
    let step = 2 * degree as u64;
    let upper = 1u64 << bits;
    let lower = 1u64 << (bits - 1);
    let mut candidate = upper - step + 1;
    let mut out = Vec::with_capacity(count);
    while out.len() < count && candidate > lower {
        if is_prime(candidate) && !exclude.contains(&candidate) {
            out.push(candidate);
        }
        candidate -= step;
    }
    assert_eq!(out.len(), count, "not enough {bits}-bit NTT primes");
    out
}

/// Smallest primitive `2n`-th root of unity modulo `q` (requires `2n | q - 1`).
pub fn primitive_root_2n(q: &Modulus, n: usize) -> u64 {
    let order = 2 * n as u64;
    assert_eq!((q.value() - 1) % order, 0);
    let cofactor = (q.value() - 1) / order;
    for x in 2..q.value() {
        let psi = q.pow(x, cofactor);
        if q.pow(psi, n as u64) == q.value() - 1 {
            return psi;
        }
    }
    unreachable!("prime has no primitive 2n-th root")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_primes() {
        let primes: Vec<u64> = (0..50).filter(|&n| is_prime(n)).collect();
        assert_eq!(primes, vec![2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47]);
        assert!(is_prime(18446744073709551557));
        assert!(!is_prime(3215031751)); // strong pseudoprime to bases 2,3,5,7
    }

    #[test]
    fn generated_primes_are_ntt_friendly() {
        let ps = ntt_primes(40, 4096, 3, &[]);
        for &p in &ps {
            assert!(is_prime(p));
            assert_eq!(p % 8192, 1);
            assert_eq!(64 - p.leading_zeros(), 40);
        }
        assert!(ps.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn root_has_exact_order() {
        let q = Modulus::new(ntt_primes(40, 1024, 1, &[])[0]);
        let psi = primitive_root_2n(&q, 1024);
        assert_eq!(q.pow(psi, 2048), 1);
        assert_eq!(q.pow(psi, 1024), q.value() - 1);
    }
}
