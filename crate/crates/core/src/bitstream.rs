//! `.rdc` container: a fixed header followed by the hyper, main and optional
//! auxiliary range-coded substreams.
//!
//! Header layout (little-endian): magic `RDC1`, `u8` version, `u8` flags,
//! `u16` original width and height, `u16` padded width and height, `u16`
//! fixed-point α and α_s, then `u32` lengths of the three substreams.

use crate::codec::{CodecModel, Stage, PAD_MULTIPLE};
use crate::entropy::{FactorizedPrior, GaussianConditional, RangeDecoder, RangeEncoder, SymbolAlphabet};
use crate::error::{RdcError, Result};
use crate::gain::{alpha_to_fixed, dequantize_symbols, quantize_symbols, GainKind};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"RDC1";
pub const FORMAT_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 30;
pub const FLAG_AUXILIARY: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamHeader {
    pub version: u8,
    pub flags: u8,
    pub orig_width: u16,
    pub orig_height: u16,
    pub padded_width: u16,
    pub padded_height: u16,
    pub alpha_fx: u16,
    pub alpha_s_fx: u16,
    pub len_z: u32,
    pub len_y: u32,
    pub len_s: u32,
}

impl StreamHeader {
    pub fn has_auxiliary(&self) -> bool {
        self.flags & FLAG_AUXILIARY != 0
    }

    pub fn payload_len(&self) -> usize {
        self.len_z as usize + self.len_y as usize + self.len_s as usize
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[..4].copy_from_slice(MAGIC);
        out[4] = self.version;
        out[5] = self.flags;
        let words = [
            self.orig_width,
            self.orig_height,
            self.padded_width,
            self.padded_height,
            self.alpha_fx,
            self.alpha_s_fx,
        ];
        for (i, w) in words.iter().enumerate() {
            out[6 + 2 * i..8 + 2 * i].copy_from_slice(&w.to_le_bytes());
        }
        for (i, l) in [self.len_z, self.len_y, self.len_s].iter().enumerate() {
            out[18 + 4 * i..22 + 4 * i].copy_from_slice(&l.to_le_bytes());
        }
        out
    }

    /// Parses and validates a header against the total container length.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(RdcError::Version("not an RDC1 stream".into()));
        }
        if bytes.len() < HEADER_LEN {
            return Err(RdcError::Corrupt {
                offset: bytes.len(),
                reason: "truncated header".into(),
            });
        }
        if bytes[4] != FORMAT_VERSION {
            return Err(RdcError::Version(format!(
                "stream version {}, expected {FORMAT_VERSION}",
                bytes[4]
            )));
        }
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let h = Self {
            version: bytes[4],
            flags: bytes[5],
            orig_width: u16_at(6),
            orig_height: u16_at(8),
            padded_width: u16_at(10),
            padded_height: u16_at(12),
            alpha_fx: u16_at(14),
            alpha_s_fx: u16_at(16),
            len_z: u32_at(18),
            len_y: u32_at(22),
            len_s: u32_at(26),
        };
        let bad = |reason: &str| RdcError::Corrupt {
            offset: 5,
            reason: reason.into(),
        };
        if h.flags & !FLAG_AUXILIARY != 0 {
            return Err(bad("unknown flag bits"));
        }
        let (pw, ph) = (h.padded_width as usize, h.padded_height as usize);
        if pw % PAD_MULTIPLE != 0 || ph % PAD_MULTIPLE != 0 || pw == 0 || ph == 0 {
            return Err(bad("padded size is not a positive multiple of 64"));
        }
        if h.orig_width == 0 || h.orig_height == 0 || h.orig_width > h.padded_width || h.orig_height > h.padded_height {
            return Err(bad("original size exceeds padded size"));
        }
        if (h.len_s == 0) == h.has_auxiliary() {
            return Err(bad("auxiliary flag disagrees with its substream length"));
        }
        let expected = HEADER_LEN + h.payload_len();
        if bytes.len() < expected {
            return Err(RdcError::Corrupt {
                offset: bytes.len(),
                reason: format!("truncated stream, expected {expected} bytes"),
            });
        }
        if bytes.len() > expected {
            return Err(RdcError::Corrupt {
                offset: expected,
                reason: "trailing bytes".into(),
            });
        }
        Ok(h)
    }
}

/// Integer symbols of every coded latent, in `[C, H, W]` raster order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LatentSymbols {
    pub z: Vec<i64>,
    pub y: Vec<i64>,
    pub s: Option<Vec<i64>>,
}

#[derive(Clone, Debug)]
pub struct CodedStream {
    pub bytes: Vec<u8>,
    pub header: StreamHeader,
    pub symbols: LatentSymbols,
    /// Entropy-model estimate of the payload, `Σ -log₂ p`, in bits.
    pub estimated_bits: f64,
}

impl CodedStream {
    pub fn bpp(&self) -> f64 {
        stream_bpp(&self.bytes, self.header.orig_height as usize, self.header.orig_width as usize)
    }
}

/// `8 · bytes / (h · w)` over the original image size.
pub fn stream_bpp(bytes: &[u8], height: usize, width: usize) -> f64 {
    8.0 * bytes.len() as f64 / (height * width) as f64
}

#[derive(Clone, Debug)]
pub struct Decoded {
    /// `clip(x̂₁ + (1 - β)·r)` cropped to the original size.
    pub image: Tensor,
    pub header: StreamHeader,
    pub symbols: LatentSymbols,
    pub y_hat: Tensor,
    /// `ŷ + err_hat`, present with an auxiliary stream.
    pub y2_hat: Option<Tensor>,
    /// Unclipped padded-size `x̂₁`.
    pub x_hat1: Tensor,
    /// Padded-size residual, zero without an auxiliary stream.
    pub residual: Tensor,
}

fn mirror(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Reflect-pads a `[1, C, H, W]` image to multiples of `multiple`.
pub fn pad_reflect(x: &Tensor, multiple: usize) -> Tensor {
    let (b, c, h, w) = x.dims4();
    let ph = h.div_ceil(multiple) * multiple;
    let pw = w.div_ceil(multiple) * multiple;
    if (ph, pw) == (h, w) {
        return x.clone();
    }
    let mut data = Vec::with_capacity(b * c * ph * pw);
    for plane in x.data().chunks(h * w) {
        for i in 0..ph {
            let row = mirror(i, h) * w;
            data.extend((0..pw).map(|j| plane[row + mirror(j, w)]));
        }
    }
    Tensor::new(&[b, c, ph, pw], data)
}

/// Top-left `h`×`w` window of a `[B, C, H, W]` tensor.
pub fn crop(x: &Tensor, h: usize, w: usize) -> Tensor {
    let (b, c, xh, xw) = x.dims4();
    assert!(h <= xh && w <= xw);
    let mut data = Vec::with_capacity(b * c * h * w);
    for plane in x.data().chunks(xh * xw) {
        for row in plane.chunks(xw).take(h) {
            data.extend_from_slice(&row[..w]);
        }
    }
    Tensor::new(&[b, c, h, w], data)
}

fn factorized_estimate(prior: &FactorizedPrior, model: &CodecModel, symbols: &[i64], inner: usize) -> f64 {
    let densities = prior.channels(&model.params);
    symbols
        .chunks(inner)
        .zip(&densities)
        .map(|(plane, d)| plane.iter().map(|&q| d.bits(q as f64)).sum::<f64>())
        .sum()
}

fn encode_factorized(alphabets: &[SymbolAlphabet], symbols: &[i64], inner: usize) -> Vec<u8> {
    let mut enc = RangeEncoder::new();
    for (plane, alphabet) in symbols.chunks(inner).zip(alphabets) {
        for &q in plane {
            alphabet.encode(&mut enc, q);
        }
    }
    enc.finish()
}

fn decode_factorized(
    alphabets: &[SymbolAlphabet],
    data: &[u8],
    base: usize,
    inner: usize,
) -> Result<Vec<i64>> {
    let mut dec = RangeDecoder::new(data, base)?;
    let mut out = Vec::with_capacity(alphabets.len() * inner);
    for alphabet in alphabets {
        for _ in 0..inner {
            out.push(alphabet.decode(&mut dec)?);
        }
    }
    dec.finish()?;
    Ok(out)
}

/// Scaled `(μ·G_y, σ·G_y)` per element of the main latent.
fn scaled_params(mu: &Tensor, sigma: &Tensor, gain: &[f64]) -> Vec<(f64, f64)> {
    let inner: usize = mu.shape()[2..].iter().product();
    mu.data()
        .iter()
        .zip(sigma.data())
        .enumerate()
        .map(|(i, (m, s))| {
            let g = gain[i / inner % gain.len()];
            (m * g, s * g)
        })
        .collect()
}

fn check_model(model: &CodecModel, auxiliary: bool) -> Result<()> {
    match model.stage {
        Stage::Initialized | Stage::Warmed => {
            return Err(RdcError::Version("model has not completed stage I".into()));
        }
        Stage::Primary if auxiliary => {
            return Err(RdcError::Version("auxiliary stream needs a stage-II model".into()));
        }
        _ => {}
    }
    Ok(())
}

/// Encodes one `[1, 3, H, W]` image at quality `alpha` and, optionally, an
/// auxiliary stream at `alpha_s`.
pub fn compress(model: &CodecModel, x: &Tensor, alpha: f64, alpha_s: Option<f64>) -> Result<CodedStream> {
    check_model(model, alpha_s.is_some())?;
    if x.shape().len() != 4 || x.dims4().0 != 1 || x.dims4().1 != 3 {
        return Err(RdcError::Config(format!("expected a [1, 3, H, W] image, got {:?}", x.shape())));
    }
    let (_, _, h, w) = x.dims4();
    if h > u16::MAX as usize || w > u16::MAX as usize {
        return Err(RdcError::Config(format!("image {h}x{w} is too large")));
    }
    let alpha_fx = alpha_to_fixed(alpha)?;
    let alpha_s_fx = alpha_s.map(alpha_to_fixed).transpose()?;
    let xp = pad_reflect(x, PAD_MULTIPLE);
    let (_, _, ph, pw) = xp.dims4();

    let gy = model.gains(GainKind::Latent).gain_at_fixed(alpha_fx);
    let gz = model.gains(GainKind::Hyper).gain_at_fixed(alpha_fx);
    let (y, z) = model.analyze(&xp, Some(&gy))?;

    let z_inner: usize = z.shape()[2..].iter().product();
    let z_sym = quantize_symbols(&z, &gz);
    let z_alphabets = model.hyper_prior().alphabets(&model.params);
    let stream_z = encode_factorized(&z_alphabets, &z_sym, z_inner);
    let mut estimated_bits = factorized_estimate(model.hyper_prior(), model, &z_sym, z_inner);
    let z_hat = dequantize_symbols(&z_sym, z.shape(), &gz);

    let (mu, sigma) = model.hyper_decode(&z_hat)?;
    let y_sym = quantize_symbols(&y, &gy);
    let gc = GaussianConditional::default();
    let mut enc = RangeEncoder::new();
    for (&q, (m, s)) in y_sym.iter().zip(scaled_params(&mu, &sigma, &gy)) {
        gc.alphabet(m, s).encode(&mut enc, q);
        estimated_bits += gc.bits(q as f64, m, s);
    }
    let stream_y = enc.finish();

    let (stream_s, s_sym) = match alpha_s_fx {
        Some(fx) => {
            let y_hat = dequantize_symbols(&y_sym, y.shape(), &gy);
            let s = model.scalable_encode(&y.zip_map(&y_hat, |a, b| a - b))?;
            let gs = model.gains(GainKind::Auxiliary).gain_at_fixed(fx);
            let s_inner: usize = s.shape()[2..].iter().product();
            let s_sym = quantize_symbols(&s, &gs);
            let alphabets = model.aux_prior().alphabets(&model.params);
            estimated_bits += factorized_estimate(model.aux_prior(), model, &s_sym, s_inner);
            (encode_factorized(&alphabets, &s_sym, s_inner), Some(s_sym))
        }
        None => (Vec::new(), None),
    };

    let header = StreamHeader {
        version: FORMAT_VERSION,
        flags: if s_sym.is_some() { FLAG_AUXILIARY } else { 0 },
        orig_width: w as u16,
        orig_height: h as u16,
        padded_width: pw as u16,
        padded_height: ph as u16,
        alpha_fx,
        alpha_s_fx: alpha_s_fx.unwrap_or(0),
        len_z: stream_z.len() as u32,
        len_y: stream_y.len() as u32,
        len_s: stream_s.len() as u32,
    };
    let mut bytes = Vec::with_capacity(HEADER_LEN + header.payload_len());
    bytes.extend_from_slice(&header.to_bytes());
    bytes.extend_from_slice(&stream_z);
    bytes.extend_from_slice(&stream_y);
    bytes.extend_from_slice(&stream_s);
    Ok(CodedStream {
        bytes,
        header,
        symbols: LatentSymbols {
            z: z_sym,
            y: y_sym,
            s: s_sym,
        },
        estimated_bits,
    })
}

/// Decodes a container and mixes `x̄ = x̂₁ + (1 - β)·r`.
pub fn decompress(model: &CodecModel, bytes: &[u8], beta: f64) -> Result<Decoded> {
    let beta = crate::gain::check_unit("beta", beta)?;
    let header = StreamHeader::parse(bytes)?;
    check_model(model, header.has_auxiliary())?;
    let cfg = &model.config;
    let (ph, pw) = (header.padded_height as usize, header.padded_width as usize);
    let z_shape = [1, cfg.hyper_channels, ph / 64, pw / 64];
    let y_shape = [1, cfg.latent_channels, ph / 16, pw / 16];
    let s_shape = [1, cfg.aux_channels, ph / 16, pw / 16];
    let start_y = HEADER_LEN + header.len_z as usize;
    let start_s = start_y + header.len_y as usize;

    let gy = model.gains(GainKind::Latent).gain_at_fixed(header.alpha_fx);
    let gz = model.gains(GainKind::Hyper).gain_at_fixed(header.alpha_fx);
    let z_alphabets = model.hyper_prior().alphabets(&model.params);
    let z_sym = decode_factorized(&z_alphabets, &bytes[HEADER_LEN..start_y], HEADER_LEN, z_shape[2] * z_shape[3])?;
    let z_hat = dequantize_symbols(&z_sym, &z_shape, &gz);

    let (mu, sigma) = model.hyper_decode(&z_hat)?;
    let gc = GaussianConditional::default();
    let mut dec = RangeDecoder::new(&bytes[start_y..start_s], start_y)?;
    let y_sym = scaled_params(&mu, &sigma, &gy)
        .into_iter()
        .map(|(m, s)| gc.alphabet(m, s).decode(&mut dec))
        .collect::<Result<Vec<_>>>()?;
    dec.finish()?;
    let y_hat = dequantize_symbols(&y_sym, &y_shape, &gy);
    let (x_hat1, priors) = model.synthesize(&y_hat)?;

    let (residual, s_sym, y2_hat) = if header.has_auxiliary() {
        let gs = model.gains(GainKind::Auxiliary).gain_at_fixed(header.alpha_s_fx);
        let alphabets = model.aux_prior().alphabets(&model.params);
        let s_sym = decode_factorized(&alphabets, &bytes[start_s..], start_s, s_shape[2] * s_shape[3])?;
        let s_hat = dequantize_symbols(&s_sym, &s_shape, &gs);
        let y2_hat = y_hat.zip_map(&model.scalable_decode(&s_hat)?, |a, e| a + e);
        (model.reconstruct_residual(&y2_hat, &priors)?, Some(s_sym), Some(y2_hat))
    } else {
        (Tensor::zeros(x_hat1.shape()), None, None)
    };

    let mixed = x_hat1.zip_map(&residual, |x, r| x + (1.0 - beta) * r);
    let image = crop(
        &mixed.map(|v| v.clamp(0.0, 1.0)),
        header.orig_height as usize,
        header.orig_width as usize,
    );
    Ok(Decoded {
        image,
        header,
        symbols: LatentSymbols {
            z: z_sym,
            y: y_sym,
            s: s_sym,
        },
        y_hat,
        y2_hat,
        x_hat1,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trip() {
        let h = StreamHeader {
            version: FORMAT_VERSION,
            flags: FLAG_AUXILIARY,
            orig_width: 70,
            orig_height: 65,
            padded_width: 128,
            padded_height: 128,
            alpha_fx: 32768,
            alpha_s_fx: 1,
            len_z: 3,
            len_y: 2,
            len_s: 1,
        };
        let mut bytes = h.to_bytes().to_vec();
        bytes.extend_from_slice(&[0; 6]);
        assert_eq!(StreamHeader::parse(&bytes).unwrap(), h);
        assert!(matches!(StreamHeader::parse(&bytes[..33]), Err(RdcError::Corrupt { offset: 33, .. })));
        bytes[0] = b'X';
        assert!(matches!(StreamHeader::parse(&bytes), Err(RdcError::Version(_))));
    }

    #[test]
    fn flag_and_length_must_agree() {
        let h = StreamHeader {
            version: FORMAT_VERSION,
            flags: 0,
            orig_width: 64,
            orig_height: 64,
            padded_width: 64,
            padded_height: 64,
            alpha_fx: 0,
            alpha_s_fx: 0,
            len_z: 0,
            len_y: 0,
            len_s: 2,
        };
        let mut bytes = h.to_bytes().to_vec();
        bytes.extend_from_slice(&[0; 2]);
        assert!(matches!(StreamHeader::parse(&bytes), Err(RdcError::Corrupt { .. })));
    }

    #[test]
    fn reflect_padding() {
        let x = Tensor::new(&[1, 1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let p = pad_reflect(&x, 4);
        assert_eq!(p.shape(), &[1, 1, 4, 4]);
        assert_eq!(
            p.data(),
            &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 6.0, 5.0, 1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 6.0, 5.0]
        );
        assert_eq!(crop(&p, 2, 3).data(), x.data());
    }
}
