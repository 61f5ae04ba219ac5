//! Finite symbol alphabets with quantised CDFs and an escape symbol.

use super::range_coder::{RangeDecoder, RangeEncoder, PROB_TOTAL};
use crate::error::{RdcError, Result};

/// Integer symbols `lo..=hi` plus one escape entry, with a 16-bit CDF.
///
/// Values outside the range are coded as the escape symbol followed by an
/// Elias-gamma code of their zig-zagged distance from the nearest bound.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolAlphabet {
    pub lo: i64,
    pub hi: i64,
    /// `cdf[i]` for `i in 0..=n+1`; entry `n` starts the escape bin.
    cdf: Vec<u32>,
}

impl SymbolAlphabet {
    /// Quantises `pmf` (one entry per symbol `lo..`) plus `escape` mass to
    /// integer frequencies summing to [`PROB_TOTAL`], every entry at least 1.
    pub fn from_pmf(lo: i64, pmf: &[f64], escape: f64) -> Self {
        let n = pmf.len();
        assert!(n >= 1 && n + 1 < PROB_TOTAL as usize, "alphabet of {n} symbols");
        let total = PROB_TOTAL as i64;
        let mut freq: Vec<i64> = pmf
            .iter()
            .chain(std::iter::once(&escape))
            .map(|&p| ((p.max(0.0) * total as f64).round() as i64).max(1))
            .collect();
        let mut excess: i64 = freq.iter().sum::<i64>() - total;
        // Order by descending frequency, ties by index, so the fix-up is deterministic.
        let mut order: Vec<usize> = (0..freq.len()).collect();
        order.sort_by(|&a, &b| freq[b].cmp(&freq[a]).then(a.cmp(&b)));
        if excess < 0 {
            freq[order[0]] -= excess;
            excess = 0;
        }
        while excess > 0 {
            let mut progressed = false;
            for &i in &order {
                if excess == 0 {
                    break;
                }
                let room = freq[i] - 1;
                if room > 0 {
                    // Take proportionally from large bins first.
                    let take = room.min(excess).min((freq[i] / 2).max(1));
                    freq[i] -= take;
                    excess -= take;
                    progressed = true;
                }
            }
            assert!(progressed, "cannot fit alphabet into probability precision");
        }
        let mut cdf = Vec::with_capacity(n + 2);
        let mut acc = 0u32;
        cdf.push(0);
        for f in freq {
            acc += f as u32;
            cdf.push(acc);
        }
        debug_assert_eq!(acc, PROB_TOTAL);
        Self {
            lo,
            hi: lo + n as i64 - 1,
            cdf,
        }
    }

    pub fn symbols(&self) -> usize {
        self.cdf.len() - 2
    }

    fn escape_index(&self) -> usize {
        self.symbols()
    }

    /// Quantised probability of symbol index `i` (the escape is `symbols()`).
    pub fn frequency(&self, i: usize) -> u32 {
        self.cdf[i + 1] - self.cdf[i]
    }

    /// Exact code length in bits of `value`, including any escape payload.
    pub fn cost_bits(&self, value: i64) -> f64 {
        let p = |i: usize| self.frequency(i) as f64 / PROB_TOTAL as f64;
        if (self.lo..=self.hi).contains(&value) {
            -p((value - self.lo) as usize).log2()
        } else {
            -p(self.escape_index()).log2() + escape_payload_bits(self.escape_distance(value)) as f64
        }
    }

    fn escape_distance(&self, value: i64) -> u64 {
        if value < self.lo {
            2 * (self.lo - value - 1) as u64 + 1
        } else {
            2 * (value - self.hi - 1) as u64
        }
    }

    pub fn encode(&self, enc: &mut RangeEncoder, value: i64) {
        if (self.lo..=self.hi).contains(&value) {
            let i = (value - self.lo) as usize;
            enc.encode(self.cdf[i], self.frequency(i));
        } else {
            let e = self.escape_index();
            enc.encode(self.cdf[e], self.frequency(e));
            // Elias gamma of distance + 1.
            let v = self.escape_distance(value) + 1;
            let bits = 64 - v.leading_zeros();
            enc.encode_bits(0, bits - 1);
            enc.encode_bits(v, bits);
        }
    }

    pub fn decode(&self, dec: &mut RangeDecoder<'_>) -> Result<i64> {
        let target = dec.peek()?;
        // Largest i with cdf[i] <= target.
        let i = self.cdf.partition_point(|&c| c <= target) - 1;
        dec.consume(self.cdf[i], self.frequency(i))?;
        if i < self.escape_index() {
            return Ok(self.lo + i as i64);
        }
        let mut zeros = 0;
        while dec.decode_bits(1)? == 0 {
            zeros += 1;
            if zeros > 63 {
                return Err(RdcError::Corrupt {
                    offset: dec.offset(),
                    reason: "escape length overflow".into(),
                });
            }
        }
        let v = (1u64 << zeros) | dec.decode_bits(zeros)?;
        let d = v - 1;
        Ok(if d % 2 == 1 {
            self.lo - 1 - (d / 2) as i64
        } else {
            self.hi + 1 + (d / 2) as i64
        })
    }
}

fn escape_payload_bits(distance: u64) -> u32 {
    let bits = 64 - (distance + 1).leading_zeros();
    2 * bits - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn frequencies_are_positive_and_total() {
        let a = SymbolAlphabet::from_pmf(-2, &[0.0, 0.1, 0.8, 0.1, 0.0], 0.0);
        let sum: u32 = (0..=a.symbols()).map(|i| a.frequency(i)).sum();
        assert_eq!(sum, PROB_TOTAL);
        assert!((0..=a.symbols()).all(|i| a.frequency(i) >= 1));
    }

    #[test]
    fn single_symbol_alphabet_costs_almost_nothing() {
        let a = SymbolAlphabet::from_pmf(0, &[1.0], 0.0);
        let mut enc = RangeEncoder::new();
        for _ in 0..1000 {
            a.encode(&mut enc, 0);
        }
        let bytes = enc.finish();
        assert!(bytes.len() <= 6, "{} bytes", bytes.len());
        let mut dec = RangeDecoder::new(&bytes, 0).unwrap();
        for _ in 0..1000 {
            assert_eq!(a.decode(&mut dec).unwrap(), 0);
        }
        dec.finish().unwrap();
    }

    proptest! {
        #[test]
        fn any_values_round_trip_through_escape(values in prop::collection::vec(-5000i64..5000, 0..200)) {
            let a = SymbolAlphabet::from_pmf(-3, &[0.05, 0.1, 0.2, 0.3, 0.2, 0.1, 0.05], 1e-6);
            let mut enc = RangeEncoder::new();
            for &v in &values {
                a.encode(&mut enc, v);
            }
            let bytes = enc.finish();
            let mut dec = RangeDecoder::new(&bytes, 0).unwrap();
            for &v in &values {
                prop_assert_eq!(a.decode(&mut dec).unwrap(), v);
            }
            dec.finish().unwrap();
        }
    }
}
