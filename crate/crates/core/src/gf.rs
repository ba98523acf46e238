//! Arithmetic over the binary extension fields GF(2^k), k in {1, 2, 4, 8}.
//!
//! Multiplication and inversion go through tables built once per field, which
//! is the right trade for coding vectors a few dozen symbols long. Elements
//! are plain `u8` values in `[0, q)`.

use crate::{Error, Result};

/// A field element in polynomial-basis representation; valid values are `< q`.
pub type FieldElem = u8;

/// Fixed reduction polynomials, one per supported extension degree.
const POLYS: [(u32, u32); 4] = [(1, 0x3), (2, 0x7), (4, 0x13), (8, 0x11B)];

/// Immutable arithmetic context for one field GF(2^k).
pub struct FieldSpec {
    /// Extension degree.
    pub k: u32,
    /// Field size, 2^k.
    pub q: u32,
    /// Bitmask of the irreducible reduction polynomial.
    pub reduction_poly: u32,
    exp: Vec<u8>,
    log: Vec<u8>,
    mul: Vec<u8>,
    inv: Vec<u8>,
}

impl FieldSpec {
    /// Builds the field of extension degree `k`, k in {1, 2, 4, 8}.
    pub fn new(k: u32) -> Result<Self> {
        let &(_, poly) = POLYS
            .iter()
            .find(|&&(deg, _)| deg == k)
            .ok_or_else(|| Error::InvalidParameter(format!("unsupported degree k={k}")))?;
        if !irreducible(poly, k) {
            return Err(Error::InvalidParameter(format!(
                "polynomial {poly:#x} is reducible over GF(2)"
            )));
        }
        let q = 1u32 << k;
        let qs = q as usize;

        // exp/log tables from a primitive element; exp is doubled so that
        // exp[log a + log b] needs no modular reduction.
        let mut exp = vec![0u8; 2 * (qs - 1)];
        let mut log = vec![0u8; qs];
        if q == 2 {
            exp[0] = 1;
            exp[1] = 1;
        } else {
            let gen = (2..q)
                .find(|&g| {
                    let mut seen = vec![false; qs];
                    let mut x = 1u8;
                    for _ in 0..q - 1 {
                        if seen[x as usize] {
                            return false;
                        }
                        seen[x as usize] = true;
                        x = clmul_mod(x, g as u8, poly, k);
                    }
                    true
                })
                .expect("every GF(2^k) has a primitive element");
            let mut x = 1u8;
            for i in 0..qs - 1 {
                exp[i] = x;
                exp[i + qs - 1] = x;
                log[x as usize] = i as u8;
                x = clmul_mod(x, gen as u8, poly, k);
            }
        }

        let mut mul = vec![0u8; qs * qs];
        for a in 0..qs {
            for b in 0..qs {
                mul[a * qs + b] = clmul_mod(a as u8, b as u8, poly, k);
            }
        }
        let mut inv = vec![0u8; qs];
        for a in 1..qs {
            inv[a] = exp[(qs - 1 - log[a] as usize) % (qs - 1)];
        }

        Ok(Self {
            k,
            q,
            reduction_poly: poly,
            exp,
            log,
            mul,
            inv,
        })
    }

    /// Builds the field of size `q`, q in {2, 4, 16, 256}.
    pub fn for_q(q: u32) -> Result<Self> {
        if !q.is_power_of_two() || q < 2 {
            return Err(Error::InvalidParameter(format!("unsupported field size q={q}")));
        }
        Self::new(q.trailing_zeros())
    }

    /// Sum a + b; addition in characteristic 2 is XOR.
    #[inline]
    pub fn add(&self, a: FieldElem, b: FieldElem) -> FieldElem {
        debug_assert!((a as u32) < self.q && (b as u32) < self.q, "operand outside field");
        a ^ b
    }

    /// Product a * b modulo the reduction polynomial.
    #[inline]
    pub fn mul(&self, a: FieldElem, b: FieldElem) -> FieldElem {
        debug_assert!((a as u32) < self.q && (b as u32) < self.q, "operand outside field");
        self.mul[a as usize * self.q as usize + b as usize]
    }

    /// Antilog table: entry i is the primitive element raised to the i-th
    /// power, doubled in length so products of logs need no reduction.
    pub fn exp_table(&self) -> &[FieldElem] {
        &self.exp
    }

    /// Discrete logarithm table, meaningful for nonzero elements.
    pub fn log_table(&self) -> &[FieldElem] {
        &self.log
    }

    /// Multiplicative inverse; zero is rejected.
    #[inline]
    pub fn inv(&self, a: FieldElem) -> Result<FieldElem> {
        debug_assert!((a as u32) < self.q, "operand outside field");
        if a == 0 {
            return Err(Error::ZeroInverse);
        }
        Ok(self.inv[a as usize])
    }

    /// In-place row update dst += c * src, the elimination workhorse.
    pub fn axpy(&self, dst: &mut [FieldElem], c: FieldElem, src: &[FieldElem]) {
        debug_assert_eq!(dst.len(), src.len());
        if c == 0 {
            return;
        }
        if c == 1 {
            for (d, s) in dst.iter_mut().zip(src) {
                *d ^= s;
            }
            return;
        }
        let row = &self.mul[c as usize * self.q as usize..(c as usize + 1) * self.q as usize];
        for (d, s) in dst.iter_mut().zip(src) {
            *d ^= row[*s as usize];
        }
    }

    /// In-place row scaling dst *= c.
    pub fn scale(&self, dst: &mut [FieldElem], c: FieldElem) {
        if c == 1 {
            return;
        }
        let row = &self.mul[c as usize * self.q as usize..(c as usize + 1) * self.q as usize];
        for d in dst.iter_mut() {
            *d = row[*d as usize];
        }
    }
}

/// Carry-less multiply of a and b followed by reduction; the table builder.
fn clmul_mod(a: u8, b: u8, poly: u32, k: u32) -> u8 {
    let mut acc = 0u32;
    let a = a as u32;
    for i in 0..k {
        if (b >> i) & 1 == 1 {
            acc ^= a << i;
        }
    }
    for bit in (k..2 * k).rev() {
        if (acc >> bit) & 1 == 1 {
            acc ^= poly << (bit - k);
        }
    }
    acc as u8
}

/// Exhaustive check that `poly` (degree `k`) has no factor of degree 1..=k/2.
fn irreducible(poly: u32, k: u32) -> bool {
    for d in 1..=k / 2 {
        for f in (1u32 << d)..(1u32 << (d + 1)) {
            if poly_rem(poly, k, f, d) == 0 {
                return false;
            }
        }
    }
    true
}

/// Remainder of polynomial division (GF(2) coefficients).
fn poly_rem(mut a: u32, da: u32, b: u32, db: u32) -> u32 {
    for bit in (db..=da).rev() {
        if (a >> bit) & 1 == 1 {
            a ^= b << (bit - db);
        }
    }
    a
}
