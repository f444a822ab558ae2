//! Arithmetic in GF(2^m) for the binary mutually-unbiased-bases construction.

// Primitive polynomials, bit i is the coefficient of x^i.
const POLYS: [u32; 11] = [
    0, 0b11, 0b111, 0b1011, 0b10011, 0b100101, 0b1000011, 0b10000011, 0b100011101,
    0b1000010001, 0b10000001001,
];

pub const MAX_DEGREE: u32 = 10;

#[derive(Debug, Clone, Copy)]
pub struct Gf2m {
    m: u32,
    poly: u32,
}

impl Gf2m {
    pub fn new(m: u32) -> Option<Self> {
        (1..=MAX_DEGREE)
            .contains(&m)
            .then(|| Gf2m { m, poly: POLYS[m as usize] })
    }

    pub fn mul(&self, a: u32, b: u32) -> u32 {
        let mut a = a;
        let mut b = b;
        let mut acc = 0;
        while b != 0 {
            if b & 1 == 1 {
                acc ^= a;
            }
            b >>= 1;
            a <<= 1;
            if a & (1 << self.m) != 0 {
                a ^= self.poly;
            }
        }
        acc
    }

    /// Absolute trace `z + z^2 + ... + z^(2^(m-1))`, which lands in {0, 1}.
    pub fn trace(&self, z: u32) -> u32 {
        let mut acc = 0;
        let mut p = z;
        for _ in 0..self.m {
            acc ^= p;
            p = self.mul(p, p);
        }
        debug_assert!(acc <= 1);
        acc
    }

    /// Symmetric binary matrix of the bilinear form `(x, y) -> Tr(a x y)` in
    /// the polynomial basis. Distinct `a` give differences that are
    /// nonsingular over GF(2).
    pub fn trace_form(&self, a: u32) -> Vec<Vec<u32>> {
        let m = self.m as usize;
        (0..m)
            .map(|i| {
                (0..m)
                    .map(|j| self.trace(self.mul(a, self.mul(1 << i, 1 << j))))
                    .collect()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multiplicative_group_is_cyclic() {
        for m in 1..=8 {
            let f = Gf2m::new(m).unwrap();
            // x (= 2) generates every nonzero element for a primitive polynomial
            let gen = if m == 1 { 1 } else { 2 };
            let mut seen = vec![false; 1usize << m];
            let mut p = 1;
            for _ in 0..(1usize << m) - 1 {
                assert!(!seen[p as usize], "m={m}");
                seen[p as usize] = true;
                p = f.mul(p, gen);
            }
            assert_eq!(p, 1);
        }
    }

    #[test]
    fn trace_is_balanced() {
        for m in 1..=6 {
            let f = Gf2m::new(m).unwrap();
            let ones: u32 = (0..(1usize << m) as u32).map(|z| f.trace(z)).sum();
            assert_eq!(ones as usize, (1usize << m) / 2);
        }
    }
}
