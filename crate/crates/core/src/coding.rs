//! Standard binary coding of real parameters on closed intervals.
//!
//! A gene group of `H` bits `x_1..x_H` encodes
//! `a + (b - a) / (2^H - 1) * sum_j 2^(j-1) x_j`, so `x_1` is the least
//! significant bit and the grid has `2^H` equally spaced points including
//! both endpoints.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gene {
    pub lower: f64,
    pub upper: f64,
    pub bits: usize,
}

impl Gene {
    pub fn new(lower: f64, upper: f64, bits: usize) -> Result<Self> {
        if !(lower < upper) {
            return Err(Error::Contract(format!("lower {lower} must be < upper {upper}")));
        }
        if bits == 0 || bits > 52 {
            return Err(Error::Contract(format!("gene bit count {bits} outside 1..=52")));
        }
        Ok(Self { lower, upper, bits })
    }

    /// Largest integer code, `2^H - 1`.
    #[inline]
    pub fn max_code(&self) -> u64 {
        (1u64 << self.bits) - 1
    }

    #[inline]
    pub fn step(&self) -> f64 {
        (self.upper - self.lower) / self.max_code() as f64
    }

    /// Value of integer code `t`. Endpoints are returned exactly.
    #[inline]
    pub fn value_of(&self, t: u64) -> f64 {
        let max = self.max_code();
        if t == 0 {
            self.lower
        } else if t >= max {
            self.upper
        } else {
            self.lower + (self.upper - self.lower) * (t as f64 / max as f64)
        }
    }

    /// Nearest grid code to `x`, clamped to the interval.
    pub fn nearest_code(&self, x: f64) -> u64 {
        let max = self.max_code();
        let t = ((x - self.lower) / (self.upper - self.lower) * max as f64).round();
        if t.is_nan() || t <= 0.0 {
            0
        } else if t >= max as f64 {
            max
        } else {
            t as u64
        }
    }
}

/// Reads bits `x_1..x_H` as an unsigned integer with `x_1` least significant.
#[inline]
pub fn bits_to_code(bits: &[bool]) -> u64 {
    bits.iter()
        .enumerate()
        .fold(0u64, |acc, (j, &b)| acc | ((b as u64) << j))
}

pub fn code_to_bits(code: u64, width: usize) -> Vec<bool> {
    (0..width).map(|j| (code >> j) & 1 == 1).collect()
}

/// Decodes one gene group.
pub fn decode(bits: &[bool], gene: &Gene) -> Result<f64> {
    if bits.len() != gene.bits {
        return Err(Error::Contract(format!(
            "gene group has {} bits, scheme expects {}",
            bits.len(),
            gene.bits
        )));
    }
    Ok(gene.value_of(bits_to_code(bits)))
}

/// Per-parameter coding for a whole chromosome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodingScheme {
    genes: Vec<Gene>,
}

impl CodingScheme {
    pub fn new(genes: Vec<Gene>) -> Result<Self> {
        if genes.is_empty() {
            return Err(Error::Contract("coding scheme needs at least one gene".into()));
        }
        Ok(Self { genes })
    }

    /// `k` identical genes.
    pub fn uniform(k: usize, lower: f64, upper: f64, bits: usize) -> Result<Self> {
        Self::new(vec![Gene::new(lower, upper, bits)?; k])
    }

    pub fn genes(&self) -> &[Gene] {
        &self.genes
    }

    pub fn n_params(&self) -> usize {
        self.genes.len()
    }

    /// Chromosome length `M`.
    pub fn total_bits(&self) -> usize {
        self.genes.iter().map(|g| g.bits).sum()
    }

    pub fn decode(&self, bits: &[bool]) -> Result<Vec<f64>> {
        if bits.len() != self.total_bits() {
            return Err(Error::Contract(format!(
                "chromosome has {} bits, scheme expects {}",
                bits.len(),
                self.total_bits()
            )));
        }
        let mut out = Vec::with_capacity(self.genes.len());
        let mut offset = 0;
        for gene in &self.genes {
            out.push(gene.value_of(bits_to_code(&bits[offset..offset + gene.bits])));
            offset += gene.bits;
        }
        Ok(out)
    }

    /// Bits of the nearest grid point to `theta`.
    pub fn encode_nearest(&self, theta: &[f64]) -> Vec<bool> {
        self.genes
            .iter()
            .zip(theta)
            .flat_map(|(g, &x)| code_to_bits(g.nearest_code(x), g.bits))
            .collect()
    }

    /// Nearest grid point to `theta`, per coordinate.
    pub fn project(&self, theta: &[f64]) -> Vec<f64> {
        self.genes
            .iter()
            .zip(theta)
            .map(|(g, &x)| g.value_of(g.nearest_code(x)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g(a: f64, b: f64, h: usize) -> Gene {
        Gene::new(a, b, h).unwrap()
    }

    #[test]
    fn endpoints_are_exact() {
        let gene = g(-2.0, 2.0, 8);
        assert_eq!(decode(&[false; 8], &gene).unwrap(), -2.0);
        assert_eq!(decode(&[true; 8], &gene).unwrap(), 2.0);
    }

    #[test]
    fn formula_example() {
        // 1*1 + 1*2 + 0*4 = 3 on a unit-step grid.
        assert_eq!(decode(&[true, true, false], &g(0.0, 7.0, 3)).unwrap(), 3.0);
    }

    #[test]
    fn length_mismatch_is_contract_violation() {
        assert!(matches!(
            decode(&[true; 7], &g(-2.0, 2.0, 8)),
            Err(Error::Contract(_))
        ));
        let scheme = CodingScheme::uniform(3, -2.0, 2.0, 8).unwrap();
        assert!(scheme.decode(&[false; 23]).is_err());
    }

    #[test]
    fn invalid_genes_rejected() {
        assert!(Gene::new(1.0, 1.0, 8).is_err());
        assert!(Gene::new(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn total_bits_is_sum() {
        let s = CodingScheme::new(vec![g(0.0, 1.0, 3), g(0.0, 1.0, 5)]).unwrap();
        assert_eq!(s.total_bits(), 8);
        assert_eq!(s.n_params(), 2);
    }

    proptest! {
        #[test]
        fn decode_strictly_increasing(h in 1usize..16, a in -10.0f64..0.0, w in 0.1f64..20.0, t in 0u64..65535) {
            let gene = g(a, a + w, h);
            let t = t % gene.max_code();
            let lo = gene.value_of(t);
            let hi = gene.value_of(t + 1);
            prop_assert!(lo < hi);
            prop_assert!(lo >= gene.lower && hi <= gene.upper);
        }

        #[test]
        fn projection_is_idempotent(x in proptest::collection::vec(-3.0f64..3.0, 3)) {
            let s = CodingScheme::uniform(3, -2.0, 2.0, 8).unwrap();
            let p = s.project(&x);
            prop_assert_eq!(s.project(&p), p.clone());
            prop_assert_eq!(s.decode(&s.encode_nearest(&x)).unwrap(), p);
        }
    }
}
