//! Word-sized prime moduli with Barrett and Shoup reduction.

/// A prime modulus below 2^62 with precomputed Barrett constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Modulus {
    value: u64,
    bits: u32,
    barrett: u64,
}

impl Modulus {
    pub fn new(value: u64) -> Self {
        assert!(value > 2 && value < (1 << 62), "modulus out of range: {value}");
        let bits = 64 - value.leading_zeros();
        // floor(2^(2k) / q) fits in k + 1 <= 63 bits.
        let barrett = ((1u128 << (2 * bits)) / value as u128) as u64;
        Self { value, bits, barrett }
    }

    #[inline(always)]
    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Reduces any `x < 2^(2k)` where k is the bit length of the modulus.
    #[inline(always)]
    pub fn reduce_u128(&self, x: u128) -> u64 {
        let q = self.value as u128;
        let est = ((x >> (self.bits - 1)) * self.barrett as u128) >> (self.bits + 1);
        let r = (x - est * q) as u64;
        let r = r.min(r.wrapping_sub(self.value));
        r.min(r.wrapping_sub(self.value))
    }

    #[inline(always)]
    pub fn reduce(&self, x: u64) -> u64 {
        if x < self.value {
            x
        } else if self.bits >= 32 {
            self.reduce_u128(x as u128)
        } else {
            x % self.value
        }
    }

    /// Maps a signed integer into `[0, q)`.
    #[inline(always)]
    pub fn reduce_i64(&self, x: i64) -> u64 {
        let r = self.reduce(x.unsigned_abs());
        if x < 0 {
            self.neg(r)
        } else {
            r
        }
    }

    /// Maps a signed 128-bit integer into `[0, q)`.
    pub fn reduce_i128(&self, x: i128) -> u64 {
        x.rem_euclid(self.value as i128) as u64
    }

    /// Centered representative in `(-q/2, q/2]`.
    #[inline(always)]
    pub fn center(&self, x: u64) -> i64 {
        // All-ones mask when x > q/2.
        let above = ((self.value / 2).wrapping_sub(x) as i64) >> 63;
        x as i64 - (self.value as i64 & above)
    }

    #[inline(always)]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        // Branch-free: when s < q the wrapped difference is larger than s.
        let s = a + b;
        s.min(s.wrapping_sub(self.value))
    }

    #[inline(always)]
    pub fn sub(&self, a: u64, b: u64) -> u64 {
        let d = a.wrapping_sub(b);
        d.min(d.wrapping_add(self.value))
    }

    #[inline(always)]
    pub fn neg(&self, a: u64) -> u64 {
        if a == 0 {
            0
        } else {
            self.value - a
        }
    }

    #[inline(always)]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        self.reduce_u128(a as u128 * b as u128)
    }

    /// Shoup companion `floor(w * 2^64 / q)` for a fixed multiplicand `w < q`.
    pub fn shoup(&self, w: u64) -> u64 {
        (((w as u128) << 64) / self.value as u128) as u64
    }

    #[inline(always)]
    pub fn mul_shoup(&self, a: u64, w: u64, w_shoup: u64) -> u64 {
        let hi = ((a as u128 * w_shoup as u128) >> 64) as u64;
        let r = a.wrapping_mul(w).wrapping_sub(hi.wrapping_mul(self.value));
        r.min(r.wrapping_sub(self.value))
    }

    pub fn pow(&self, mut base: u64, mut exp: u64) -> u64 {
        let mut acc = 1u64;
        base = self.reduce(base);
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            exp >>= 1;
        }
        acc
    }

    /// Inverse via Fermat; the modulus is prime.
    pub fn inv(&self, a: u64) -> Option<u64> {
        let a = self.reduce(a);
        if a == 0 {
            None
        } else {
            Some(self.pow(a, self.value - 2))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    use crate::math::prime::ntt_primes;

    fn q60() -> u64 {
        ntt_primes(60, 16384, 1, &[])[0]
    }

    proptest! {
        #[test]
        fn barrett_matches_u128_remainder(a in 0u64..(1 << 59), b in 0u64..(1 << 59)) {
            let q = q60();
            let m = Modulus::new(q);
            prop_assert_eq!(m.mul(a, b), ((a as u128 * b as u128) % q as u128) as u64);
        }

        #[test]
        fn signed_reduction_matches_rem_euclid(x in any::<i64>(), small in any::<bool>()) {
            let q = if small { 65_537 } else { q60() };
            let m = Modulus::new(q);
            prop_assert_eq!(m.reduce_i64(x), x.rem_euclid(q as i64) as u64);
        }

        #[test]
        fn branch_free_ops_match_reference(a in 0u64..(1 << 59), b in 0u64..(1 << 59)) {
            let q = q60();
            let m = Modulus::new(q);
            let (a, b) = (a % q, b % q);
            prop_assert_eq!(m.add(a, b), (a + b) % q);
            prop_assert_eq!(m.sub(a, b), (a + q - b) % q);
            let c = m.center(a);
            prop_assert!(c.unsigned_abs() <= q / 2);
            prop_assert_eq!(c.rem_euclid(q as i64) as u64, a);
        }

        #[test]
        fn shoup_matches_barrett(a in 0u64..(1 << 39), w in 0u64..(1 << 39)) {
            let m = Modulus::new(ntt_primes(40, 4096, 1, &[])[0]);
            prop_assert_eq!(m.mul_shoup(a, w, m.shoup(w)), m.mul(a, w));
        }
    }

    #[test]
    fn inverse_and_center() {
        let q = ntt_primes(40, 4096, 1, &[])[0];
        let m = Modulus::new(q);
        let x = 123_456_789;
        assert_eq!(m.mul(x, m.inv(x).unwrap()), 1);
        assert_eq!(m.inv(0), None);
        assert_eq!(m.center(q - 1), -1);
        assert_eq!(m.reduce_i64(-1), q - 1);
    }
}
