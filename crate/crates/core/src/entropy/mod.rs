//! Probability models, rate estimation and range coding.

pub mod alphabet;
pub mod factorized;
pub mod gaussian;
pub mod range_coder;

pub use alphabet::SymbolAlphabet;
pub use factorized::{ChannelDensity, FactorizedPrior};
pub use gaussian::{GaussianConditional, SIGMA_MIN};
pub use range_coder::{RangeDecoder, RangeEncoder};

/// Total bits `Σ -log2 p` of a set of probabilities.
pub fn total_bits(probabilities: impl IntoIterator<Item = f64>) -> f64 {
    probabilities.into_iter().map(|p| -p.log2()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn half_probabilities_cost_one_bit_each() {
        assert_eq!(total_bits(std::iter::repeat(0.5).take(37)), 37.0);
        assert!(total_bits([1.0 - 1e-12]) < 1e-9);
    }

    #[test]
    fn range_coder_approaches_empirical_entropy() {
        // 1e5 symbols from a known pmf; the coded size must sit within
        // 0.1% + 16 bytes of the sample's empirical entropy.
        let pmf = [0.4, 0.2, 0.15, 0.1, 0.08, 0.04, 0.02, 0.01];
        let alphabet = SymbolAlphabet::from_pmf(0, &pmf, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 100_000;
        let symbols: Vec<i64> = (0..n)
            .map(|_| {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (i, p) in pmf.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return i as i64;
                    }
                }
                pmf.len() as i64 - 1
            })
            .collect();
        let mut counts = [0usize; 8];
        for &s in &symbols {
            counts[s as usize] += 1;
        }
        let entropy_bits: f64 = counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n as f64;
                -(c as f64) * p.log2()
            })
            .sum();
        let mut enc = RangeEncoder::new();
        for &s in &symbols {
            alphabet.encode(&mut enc, s);
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes, 0).unwrap();
        for &s in &symbols {
            assert_eq!(alphabet.decode(&mut dec).unwrap(), s);
        }
        dec.finish().unwrap();
        let entropy_bytes = entropy_bits / 8.0;
        assert!(
            (bytes.len() as f64 - entropy_bytes).abs() <= 0.001 * entropy_bytes + 16.0,
            "{} bytes vs entropy {entropy_bytes}",
            bytes.len()
        );
    }
}
