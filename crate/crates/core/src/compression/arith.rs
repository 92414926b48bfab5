//! Static arithmetic coder with 32-bit integer registers.
//!
//! The model is a transmitted count table; the coder never adapts. A stream
//! of `N` symbols occupies `shifts + 2` bits, where `shifts` is the number of
//! renormalisation steps, and decodes correctly whatever bits follow it.

use super::bits::{count_width, BitReader, BitWriter};
use crate::error::{Error, Result};

const TOP: u64 = (1 << 32) - 1;
const HALF: u64 = 1 << 31;
const QUARTER: u64 = 1 << 30;
const THREE_QUARTERS: u64 = 3 << 30;

/// Largest supported symbol count.
pub const MAX_TOTAL: u64 = QUARTER;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    counts: Vec<u64>,
    cum: Vec<u64>,
}

impl FrequencyTable {
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::InvalidArgument("frequency table needs at least one symbol".into()));
        }
        let mut cum = Vec::with_capacity(counts.len() + 1);
        cum.push(0u64);
        for &c in &counts {
            let next = cum.last().expect("nonempty") + c;
            if next > MAX_TOTAL {
                return Err(Error::InvalidArgument(format!("symbol count exceeds {MAX_TOTAL}")));
            }
            cum.push(next);
        }
        Ok(Self { counts, cum })
    }

    /// Histogram of `indices` over `r` symbols.
    pub fn from_indices(indices: &[usize], r: usize) -> Result<Self> {
        let mut counts = vec![0u64; r];
        for &i in indices {
            *counts
                .get_mut(i)
                .ok_or_else(|| Error::InvalidArgument(format!("index {i} outside codebook of {r}")))? += 1;
        }
        Self::new(counts)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn symbols(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        *self.cum.last().expect("nonempty")
    }

    /// Fixed-width table size: `r · ⌈log₂(N + 1)⌉`.
    pub fn table_bits(&self) -> usize {
        table_bits(self.symbols(), self.total())
    }

    /// `Σ −log₂(c_s / N)` over the stream described by the table.
    pub fn ideal_bits(&self) -> f64 {
        let n = self.total() as f64;
        self.counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| -(c as f64) * (c as f64 / n).log2())
            .sum()
    }

    /// Counts as `r` integers of `⌈log₂(N + 1)⌉` bits; `N` is known to the reader.
    pub fn write(&self, w: &mut BitWriter) {
        let width = count_width(self.total());
        for &c in &self.counts {
            w.push_bits(c, width);
        }
    }

    pub fn read(r: &mut BitReader<'_>, symbols: usize, total: u64) -> Result<Self> {
        let width = count_width(total);
        let counts = (0..symbols).map(|_| r.read_bits(width)).collect::<Result<Vec<_>>>()?;
        let table = Self::new(counts)?;
        if table.total() != total {
            return Err(Error::Corrupt(format!(
                "count table sums to {}, expected {total}",
                table.total()
            )));
        }
        Ok(table)
    }
}

pub fn table_bits(symbols: usize, total: u64) -> usize {
    symbols * count_width(total) as usize
}

/// Append the code for `indices`; returns the number of bits written.
pub fn arithmetic_encode(indices: &[usize], table: &FrequencyTable, out: &mut BitWriter) -> Result<usize> {
    let n = table.total();
    if indices.len() as u64 != n {
        return Err(Error::InvalidArgument(format!(
            "count table describes {n} symbols, stream has {}",
            indices.len()
        )));
    }
    let start = out.len();
    let (mut low, mut high, mut pending) = (0u64, TOP, 0u64);
    let emit = |out: &mut BitWriter, bit: bool, pending: &mut u64| {
        out.push(bit);
        for _ in 0..*pending {
            out.push(!bit);
        }
        *pending = 0;
    };
    for &s in indices {
        if s >= table.symbols() || table.counts[s] == 0 {
            return Err(Error::InvalidArgument(format!("symbol {s} has zero count in the table")));
        }
        let range = high - low + 1;
        high = low + range * table.cum[s + 1] / n - 1;
        low += range * table.cum[s] / n;
        loop {
            if high < HALF {
                emit(out, false, &mut pending);
            } else if low >= HALF {
                emit(out, true, &mut pending);
                low -= HALF;
                high -= HALF;
            } else if low >= QUARTER && high < THREE_QUARTERS {
                pending += 1;
                low -= QUARTER;
                high -= QUARTER;
            } else {
                break;
            }
            low <<= 1;
            high = high << 1 | 1;
        }
    }
    pending += 1;
    emit(out, low >= QUARTER, &mut pending);
    Ok(out.len() - start)
}

/// Decode `table.total()` symbols starting at the reader's position and
/// leave the reader just past the stream. Returns the indices and the
/// stream length in bits.
pub fn arithmetic_decode(r: &mut BitReader<'_>, table: &FrequencyTable) -> Result<(Vec<usize>, usize)> {
    let n = table.total();
    let start = r.pos();
    let mut value = 0u64;
    for _ in 0..32 {
        value = value << 1 | u64::from(r.read_bit_or_zero());
    }
    let (mut low, mut high) = (0u64, TOP);
    let mut shifts = 0usize;
    let mut out = Vec::with_capacity(n as usize);
    for _ in 0..n {
        if value < low || value > high {
            return Err(Error::Corrupt("arithmetic stream left its interval".into()));
        }
        let range = high - low + 1;
        let target = ((value - low + 1) * n - 1) / range;
        let s = table.cum.partition_point(|&c| c <= target) - 1;
        if s >= table.symbols() || table.counts[s] == 0 {
            return Err(Error::Corrupt(format!("decoded zero-count symbol {s}")));
        }
        out.push(s);
        high = low + range * table.cum[s + 1] / n - 1;
        low += range * table.cum[s] / n;
        loop {
            if high >= HALF {
                if low >= HALF {
                    low -= HALF;
                    high -= HALF;
                    value -= HALF;
                } else if low >= QUARTER && high < THREE_QUARTERS {
                    low -= QUARTER;
                    high -= QUARTER;
                    value -= QUARTER;
                } else {
                    break;
                }
            }
            low <<= 1;
            high = high << 1 | 1;
            value = value << 1 | u64::from(r.read_bit_or_zero());
            shifts += 1;
        }
    }
    let len = shifts + 2;
    r.seek(start + len)?;
    Ok((out, len))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::compression::bits::BitString;
    use crate::linalg::rng::RngStream;

    fn round_trip(indices: &[usize], r: usize) -> usize {
        let table = FrequencyTable::from_indices(indices, r).unwrap();
        let mut w = BitWriter::new();
        let len = arithmetic_encode(indices, &table, &mut w).unwrap();
        let bits = w.finish();
        let (back, dlen) = arithmetic_decode(&mut bits.reader(), &table).unwrap();
        assert_eq!(back, indices);
        assert_eq!(dlen, len);
        len
    }

    #[test]
    fn constant_stream_is_tiny() {
        assert!(round_trip(&[3; 500], 5) <= 16);
        assert_eq!(round_trip(&[], 2), 2);
    }

    #[test]
    fn uniform_ten_symbols() {
        let mut rng = RngStream::new(3).rng();
        // Exactly uniform counts: 30 of each symbol, shuffled.
        let mut idx: Vec<usize> = (0..300).map(|i| i % 10).collect();
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.gen_range(0..=i));
        }
        let len = round_trip(&idx, 10);
        assert!((997..=1013).contains(&len), "{len}");
    }

    #[test]
    fn within_entropy_plus_sixteen() {
        let mut rng = RngStream::new(4).rng();
        for _ in 0..50 {
            let r = rng.gen_range(1..12);
            let n = rng.gen_range(1..800);
            let weights: Vec<f64> = (0..r).map(|_| rng.gen::<f64>().powi(3)).collect();
            let total: f64 = weights.iter().sum();
            let idx: Vec<usize> = (0..n)
                .map(|_| {
                    let mut t = rng.gen::<f64>() * total;
                    weights.iter().position(|&w| { t -= w; t < 0.0 }).unwrap_or(r - 1)
                })
                .collect();
            let table = FrequencyTable::from_indices(&idx, r).unwrap();
            let len = round_trip(&idx, r);
            assert!(len as f64 <= table.ideal_bits().ceil() + 16.0);
        }
    }

    #[test]
    fn trailing_bits_do_not_matter() {
        let idx = vec![0, 1, 1, 2, 0, 2, 2, 2, 1];
        let table = FrequencyTable::from_indices(&idx, 3).unwrap();
        for tail in [0u64, u64::MAX] {
            let mut w = BitWriter::new();
            arithmetic_encode(&idx, &table, &mut w).unwrap();
            w.push_bits(tail, 64);
            let bits: BitString = w.finish();
            let (back, _) = arithmetic_decode(&mut bits.reader(), &table).unwrap();
            assert_eq!(back, idx);
        }
    }

    #[test]
    fn table_io_and_size() {
        let t = FrequencyTable::new(vec![30; 10]).unwrap();
        assert_eq!(t.total(), 300);
        assert_eq!(t.table_bits(), 90);
        let mut w = BitWriter::new();
        t.write(&mut w);
        let bits = w.finish();
        assert_eq!(bits.len(), 90);
        assert_eq!(FrequencyTable::read(&mut bits.reader(), 10, 300).unwrap(), t);
        assert!(FrequencyTable::read(&mut bits.reader(), 10, 301).is_err());
    }

    #[test]
    fn encoder_rejects_inconsistent_table() {
        let t = FrequencyTable::new(vec![2, 0]).unwrap();
        assert!(arithmetic_encode(&[0, 1], &t, &mut BitWriter::new()).is_err());
        assert!(arithmetic_encode(&[0], &t, &mut BitWriter::new()).is_err());
    }
}
