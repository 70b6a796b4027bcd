//! Exact, order-independent summation of `f64` values.
//!
//! Set-wide reductions in the guidance network (instance-norm statistics, weight
//! normalization) must give bit-identical results under any permutation of the
//! input set, or permutation equivariance would only hold approximately. Plain
//! floating-point summation is order-dependent, so these reductions run through a
//! fixed-point superaccumulator: each addend is split into 32-bit slices of its
//! integer mantissa and added into a wide array of `i64` limbs spanning the whole
//! `f64` exponent range. Integer addition is exact and commutative, so the
//! accumulated state — and the final rounded value — cannot depend on insertion
//! order.
//!
//! Cost is a few integer ops per element; rounding error of the final readout is
//! at most one unit in the last place of the true sum.

/// Number of 32-bit limbs covering mantissa exponents `[-1074, 971]` plus carry
/// headroom.
const LIMBS: usize = 67;

/// Accumulates `f64` values exactly. `value()` rounds the exact total once.
#[derive(Clone)]
pub struct ExactSum {
    limbs: [i64; LIMBS],
    // Each add deposits < 2^32 per limb; renormalize well before i64 overflow.
    pending: u32,
}

impl Default for ExactSum {
    fn default() -> Self {
        Self::new()
    }
}

impl ExactSum {
    pub fn new() -> Self {
        ExactSum { limbs: [0; LIMBS], pending: 0 }
    }

    /// Adds a finite value. Panics on NaN or infinity — callers guarantee finite
    /// activations, so a non-finite addend is a bug upstream.
    pub fn add(&mut self, x: f64) {
        assert!(x.is_finite(), "ExactSum::add: non-finite addend {x}");
        let bits = x.to_bits();
        let biased = ((bits >> 52) & 0x7ff) as i32;
        let frac = bits & 0x000f_ffff_ffff_ffff;
        let (mut mantissa, exp) = if biased == 0 {
            (frac as i64, -1074)
        } else {
            ((frac | (1 << 52)) as i64, biased - 1075)
        };
        if mantissa == 0 {
            return;
        }
        if bits >> 63 == 1 {
            mantissa = -mantissa;
        }
        let e2 = (exp + 1074) as usize;
        let limb = e2 >> 5;
        let shift = e2 & 31;
        // Mantissa shifted by < 32 bits spans at most 85 bits -> three limbs.
        let v = (mantissa as i128) << shift;
        self.limbs[limb] += (v & 0xffff_ffff) as i64;
        self.limbs[limb + 1] += ((v >> 32) & 0xffff_ffff) as i64;
        self.limbs[limb + 2] += (v >> 64) as i64;
        self.pending += 1;
        if self.pending >= (1 << 30) {
            self.renormalize();
        }
    }

    fn renormalize(&mut self) {
        let mut carry: i64 = 0;
        for limb in self.limbs.iter_mut() {
            let total = *limb + carry;
            let rem = total & 0xffff_ffff;
            carry = (total - rem) >> 32;
            *limb = rem;
        }
        // The top limb has headroom for any carry produced by in-range values.
        self.limbs[LIMBS - 1] += carry << 32;
        self.pending = 0;
    }

    /// The exact total, rounded once to `f64`.
    pub fn value(&self) -> f64 {
        let mut copy = self.clone();
        copy.renormalize();
        // After renormalization every limb is in [0, 2^32) except the top,
        // which carries the sign of the whole total. Read out a non-negative
        // limb state so no intermediate product can leave f64 range.
        let negative = copy.limbs[LIMBS - 1] < 0;
        if negative {
            for limb in copy.limbs.iter_mut() {
                *limb = -*limb;
            }
            copy.renormalize();
        }
        let mut acc = 0.0f64;
        for (i, &limb) in copy.limbs.iter().enumerate() {
            if limb != 0 {
                acc += (limb as f64) * pow2(32 * i as i32 - 1074);
            }
        }
        if negative {
            -acc
        } else {
            acc
        }
    }
}

/// Exact power of two for exponents within f64 range (including subnormals).
fn pow2(k: i32) -> f64 {
    debug_assert!((-1074..=1023).contains(&k));
    if k >= -1022 {
        f64::from_bits(((k + 1023) as u64) << 52)
    } else {
        f64::from_bits(1u64 << (k + 1074))
    }
}

/// Sums an iterator exactly; the result is independent of iteration order.
pub fn exact_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = ExactSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}
