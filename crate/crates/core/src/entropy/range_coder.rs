//! Carry-propagating 32-bit range coder over 16-bit frequency tables.
//!
//! The byte layout follows the classic LZMA coder: a 33-bit `low` with a
//! one-byte cache resolves carries, and the decoder consumes exactly the bytes
//! the encoder produced.

use crate::error::{RdcError, Result};

pub const PROB_BITS: u32 = 16;
pub const PROB_TOTAL: u32 = 1 << PROB_BITS;
const TOP: u32 = 1 << 24;

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
        }
    }

    /// Codes the interval `[start, start + freq)` out of [`PROB_TOTAL`].
    pub fn encode(&mut self, start: u32, freq: u32) {
        debug_assert!(freq > 0 && start + freq <= PROB_TOTAL);
        let r = self.range >> PROB_BITS;
        self.low += start as u64 * r as u64;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    /// Equiprobable bits, most significant first.
    pub fn encode_bits(&mut self, value: u64, count: u32) {
        for i in (0..count).rev() {
            let bit = ((value >> i) & 1) as u32;
            self.encode(bit << (PROB_BITS - 1), 1 << (PROB_BITS - 1));
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut temp = self.cache;
            loop {
                self.out.push(temp.wrapping_add(carry));
                temp = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 24) & 0xFF) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    /// Offset of `data[0]` inside the enclosing container, for error reports.
    base: usize,
    code: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8], base: usize) -> Result<Self> {
        let mut dec = Self {
            data,
            pos: 0,
            base,
            code: 0,
            range: u32::MAX,
        };
        for _ in 0..5 {
            dec.code = (dec.code << 8) | dec.next_byte()? as u32;
        }
        Ok(dec)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = *self.data.get(self.pos).ok_or_else(|| RdcError::Corrupt {
            offset: self.base + self.pos,
            reason: "truncated substream".into(),
        })?;
        self.pos += 1;
        Ok(b)
    }

    pub fn offset(&self) -> usize {
        self.base + self.pos
    }

    /// Cumulative count identifying the next symbol; follow with [`consume`](Self::consume).
    pub fn peek(&mut self) -> Result<u32> {
        let r = self.range >> PROB_BITS;
        let value = self.code / r;
        if value >= PROB_TOTAL {
            return Err(RdcError::Corrupt {
                offset: self.offset(),
                reason: "code value outside the coding interval".into(),
            });
        }
        Ok(value)
    }

    pub fn consume(&mut self, start: u32, freq: u32) -> Result<()> {
        let r = self.range >> PROB_BITS;
        self.code -= start * r;
        self.range = r * freq;
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte()? as u32;
            self.range <<= 8;
        }
        Ok(())
    }

    pub fn decode_bits(&mut self, count: u32) -> Result<u64> {
        let half = 1 << (PROB_BITS - 1);
        let mut value = 0u64;
        for _ in 0..count {
            let bit = (self.peek()? >= half) as u32;
            self.consume(bit * half, half)?;
            value = (value << 1) | bit as u64;
        }
        Ok(value)
    }

    /// Errors unless every byte was consumed.
    pub fn finish(self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(RdcError::Corrupt {
                offset: self.offset(),
                reason: format!("{} trailing bytes", self.data.len() - self.pos),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_stream_round_trips() {
        let bytes = RangeEncoder::new().finish();
        assert_eq!(bytes.len(), 5);
        RangeDecoder::new(&bytes, 0).unwrap().finish().unwrap();
    }

    #[test]
    fn bits_round_trip() {
        let mut enc = RangeEncoder::new();
        enc.encode_bits(0b1011_0110_1110, 12);
        enc.encode_bits(u32::MAX as u64, 32);
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes, 0).unwrap();
        assert_eq!(dec.decode_bits(12).unwrap(), 0b1011_0110_1110);
        assert_eq!(dec.decode_bits(32).unwrap(), u32::MAX as u64);
        dec.finish().unwrap();
    }

    #[test]
    fn truncation_reports_offset() {
        let mut enc = RangeEncoder::new();
        enc.encode_bits(0xDEAD_BEEF, 32);
        let bytes = enc.finish();
        let cut = &bytes[..3];
        match RangeDecoder::new(cut, 100) {
            Err(RdcError::Corrupt { offset, .. }) => assert_eq!(offset, 103),
            _ => panic!("expected truncation error"),
        }
    }
}
