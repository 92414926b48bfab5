use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bit sequence, most significant bit of each byte first. Unused trailing
/// bits of the last byte are always zero. Serializes as a string of `0`/`1`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct BitString {
    bytes: Vec<u8>,
    len: usize,
}

impl BitString {
    pub fn from_bytes(bytes: Vec<u8>, len: usize) -> Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::Corrupt(format!(
                "bit string of {len} bits needs {} bytes, found {}",
                len.div_ceil(8),
                bytes.len()
            )));
        }
        if len % 8 != 0 && bytes[len / 8] & (0xff >> (len % 8)) != 0 {
            return Err(Error::Corrupt("nonzero padding after last bit".into()));
        }
        Ok(Self { bytes, len })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn get(&self, i: usize) -> bool {
        self.bytes[i / 8] >> (7 - i % 8) & 1 == 1
    }

    pub fn is_prefix_of(&self, other: &BitString) -> bool {
        self.len <= other.len && (0..self.len).all(|i| self.get(i) == other.get(i))
    }

    pub fn reader(&self) -> BitReader<'_> {
        BitReader { bits: self, pos: 0 }
    }

    pub fn to_string_01(&self) -> String {
        (0..self.len).map(|i| if self.get(i) { '1' } else { '0' }).collect()
    }

    pub fn from_string_01(s: &str) -> Result<Self> {
        let mut w = BitWriter::new();
        for (i, c) in s.chars().enumerate() {
            match c {
                '0' => w.push(false),
                '1' => w.push(true),
                _ => return Err(Error::Parse(format!("bit string: character {i} is {c:?}"))),
            }
        }
        Ok(w.finish())
    }
}

impl From<BitString> for String {
    fn from(b: BitString) -> String {
        b.to_string_01()
    }
}

impl TryFrom<String> for BitString {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Self::from_string_01(&s)
    }
}

#[derive(Debug, Default)]
pub struct BitWriter {
    bits: BitString,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bit: bool) {
        if self.bits.len % 8 == 0 {
            self.bits.bytes.push(0);
        }
        if bit {
            let last = self.bits.bytes.last_mut().expect("byte reserved above");
            *last |= 0x80 >> (self.bits.len % 8);
        }
        self.bits.len += 1;
    }

    /// Low `width` bits of `value`, most significant first.
    pub fn push_bits(&mut self, value: u64, width: u32) {
        debug_assert!(width == 64 || value >> width == 0, "value does not fit in {width} bits");
        for i in (0..width).rev() {
            self.push(value >> i & 1 == 1);
        }
    }

    pub fn append(&mut self, other: &BitString) {
        for i in 0..other.len() {
            self.push(other.get(i));
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len
    }

    pub fn is_empty(&self) -> bool {
        self.bits.len == 0
    }

    pub fn finish(self) -> BitString {
        self.bits
    }
}

#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    bits: &'a BitString,
    pos: usize,
}

impl BitReader<'_> {
    pub fn pos(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.bits.len - self.pos.min(self.bits.len)
    }

    pub fn read_bit(&mut self) -> Result<bool> {
        if self.pos >= self.bits.len {
            return Err(Error::Corrupt(format!("bit stream ended at bit {}", self.pos)));
        }
        let b = self.bits.get(self.pos);
        self.pos += 1;
        Ok(b)
    }

    /// Reads past the end yield zeros (arithmetic decoder lookahead).
    pub(crate) fn read_bit_or_zero(&mut self) -> bool {
        let b = self.pos < self.bits.len && self.bits.get(self.pos);
        self.pos += 1;
        b
    }

    pub fn read_bits(&mut self, width: u32) -> Result<u64> {
        let mut v = 0u64;
        for _ in 0..width {
            v = v << 1 | u64::from(self.read_bit()?);
        }
        Ok(v)
    }

    pub(crate) fn seek(&mut self, pos: usize) -> Result<()> {
        if pos > self.bits.len {
            return Err(Error::Corrupt(format!(
                "stream needs {pos} bits, only {} present",
                self.bits.len
            )));
        }
        self.pos = pos;
        Ok(())
    }
}

/// Bits of a fixed-width index into a grid of `size` choices: ⌈log₂ size⌉.
pub fn index_width(size: usize) -> u32 {
    match size {
        0 | 1 => 0,
        s => usize::BITS - (s - 1).leading_zeros(),
    }
}

/// Bits of a count in `[0, n]`: ⌈log₂(n + 1)⌉.
pub fn count_width(n: u64) -> u32 {
    u64::BITS - n.leading_zeros()
}
