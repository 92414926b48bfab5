//! Self-delimiting coefficient codes built from a codebook, a count table
//! and an arithmetic-coded index stream.

use super::arith::{arithmetic_decode, arithmetic_encode, FrequencyTable};
use super::bits::{index_width, BitReader, BitString, BitWriter};
use super::codebook::{dequantize, quantize, Codebook, CodebookKind};
use crate::error::{Error, Result};

/// Every stored part is preceded by its length as a 32-bit bit count, and
/// that prefix is charged to the part.
pub const LENGTH_PREFIX_BITS: usize = 32;

/// Codebook sizes for shared-basis coefficients.
pub const GLOBAL_R_GRID: [usize; 4] = [10, 15, 20, 30];
/// Codebook sizes for jointly coded task coefficients.
pub const LOCAL_R_GRID: [usize; 6] = [3, 10, 15, 20, 25, 30];
/// Codebook sizes for a single model's own coefficients.
pub const TASK_R_GRID: [usize; 8] = [2, 3, 5, 10, 15, 20, 30, 40];

pub fn grid_position(grid: &[usize], value: usize, what: &str) -> Result<usize> {
    grid.iter()
        .position(|&g| g == value)
        .ok_or_else(|| Error::InvalidArgument(format!("{what} {value} is not in the grid {grid:?}")))
}

pub(crate) fn write_grid_index(w: &mut BitWriter, index: usize, grid_len: usize) {
    w.push_bits(index as u64, index_width(grid_len));
}

pub(crate) fn read_grid_index(r: &mut BitReader<'_>, grid_len: usize, what: &str) -> Result<usize> {
    let i = r.read_bits(index_width(grid_len))? as usize;
    if i >= grid_len {
        return Err(Error::Corrupt(format!("{what} index {i} outside grid of {grid_len}")));
    }
    Ok(i)
}

/// Count table followed by the arithmetic stream.
pub fn write_index_stream(w: &mut BitWriter, indices: &[usize], r: usize) -> Result<()> {
    let table = FrequencyTable::from_indices(indices, r)?;
    table.write(w);
    arithmetic_encode(indices, &table, w)?;
    Ok(())
}

pub fn read_index_stream(r: &mut BitReader<'_>, symbols: usize, count: usize) -> Result<Vec<usize>> {
    let table = FrequencyTable::read(r, symbols, count as u64)?;
    let (indices, _) = arithmetic_decode(r, &table)?;
    if FrequencyTable::from_indices(&indices, symbols)? != table {
        return Err(Error::Corrupt("decoded histogram disagrees with the count table".into()));
    }
    Ok(indices)
}

/// Total charged length of a stored part.
pub fn part_bits(content: &BitString) -> usize {
    LENGTH_PREFIX_BITS + content.len()
}

/// `u32` big-endian bit count followed by the padded bytes.
pub fn frame(content: &BitString, out: &mut Vec<u8>) -> Result<()> {
    let len = u32::try_from(content.len()).map_err(|_| Error::InvalidArgument("part exceeds 2^32 bits".into()))?;
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(content.bytes());
    Ok(())
}

/// Inverse of [`frame`]; returns the part and the bytes consumed.
pub fn unframe(bytes: &[u8]) -> Result<(BitString, usize)> {
    let head: [u8; 4] = bytes
        .get(..4)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| Error::Corrupt("part length prefix truncated".into()))?;
    let bits = u32::from_be_bytes(head) as usize;
    let nbytes = bits.div_ceil(8);
    let body = bytes
        .get(4..4 + nbytes)
        .ok_or_else(|| Error::Corrupt(format!("part of {bits} bits truncated")))?;
    Ok((BitString::from_bytes(body.to_vec(), bits)?, 4 + nbytes))
}

fn expect_end(r: &BitReader<'_>, what: &str) -> Result<()> {
    if r.remaining() != 0 {
        return Err(Error::Corrupt(format!("{} unexpected bits after {what}", r.remaining())));
    }
    Ok(())
}

/// Data-dependent choices charged to a single-model code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SingleTaskHyper {
    pub d_index: usize,
    pub d_grid_len: usize,
    pub lr_index: usize,
    pub lr_grid_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedSingle {
    pub d: usize,
    pub d_index: usize,
    pub lr_index: usize,
    pub codebook: Codebook,
    pub values: Vec<f64>,
}

/// `d` index, learning-rate index, codebook-size index, codebook, count
/// table, stream.
pub fn encode_single_task(values: &[f64], codebook: &Codebook, hyper: &SingleTaskHyper) -> Result<BitString> {
    if hyper.d_index >= hyper.d_grid_len || hyper.lr_index >= hyper.lr_grid_len {
        return Err(Error::InvalidArgument("hyperparameter index outside its grid".into()));
    }
    let r_index = grid_position(&TASK_R_GRID, codebook.len(), "codebook size")?;
    let mut w = BitWriter::new();
    write_grid_index(&mut w, hyper.d_index, hyper.d_grid_len);
    write_grid_index(&mut w, hyper.lr_index, hyper.lr_grid_len);
    write_grid_index(&mut w, r_index, TASK_R_GRID.len());
    codebook.write(&mut w);
    write_index_stream(&mut w, &quantize(values, codebook).indices, codebook.len())?;
    Ok(w.finish())
}

pub fn decode_single_task(bits: &BitString, d_grid: &[usize], lr_grid_len: usize) -> Result<DecodedSingle> {
    let mut r = bits.reader();
    let d_index = read_grid_index(&mut r, d_grid.len(), "d")?;
    let lr_index = read_grid_index(&mut r, lr_grid_len, "learning rate")?;
    let size = TASK_R_GRID[read_grid_index(&mut r, TASK_R_GRID.len(), "codebook size")?];
    let codebook = Codebook::read(&mut r, size, CodebookKind::Task)?;
    let d = d_grid[d_index];
    let indices = read_index_stream(&mut r, size, d)?;
    expect_end(&r, "single-task code")?;
    Ok(DecodedSingle {
        d,
        d_index,
        lr_index,
        values: dequantize(&indices, &codebook),
        codebook,
    })
}

/// Codebook for a transferred task: the source run's shared codebook or a
/// freshly fitted one.
#[derive(Debug, Clone, PartialEq)]
pub enum TransferCodebook {
    Reused,
    New(Codebook),
}

/// One flag bit, then (new codebook only) a size index and the centers,
/// then the count table and stream over α followed by w.
pub fn encode_transfer(values: &[f64], choice: &TransferCodebook, reused: &Codebook) -> Result<BitString> {
    let mut w = BitWriter::new();
    let codebook = match choice {
        TransferCodebook::Reused => {
            w.push(false);
            reused
        }
        TransferCodebook::New(cb) => {
            w.push(true);
            write_grid_index(&mut w, grid_position(&TASK_R_GRID, cb.len(), "codebook size")?, TASK_R_GRID.len());
            cb.write(&mut w);
            cb
        }
    };
    write_index_stream(&mut w, &quantize(values, codebook).indices, codebook.len())?;
    Ok(w.finish())
}

pub fn decode_transfer(bits: &BitString, count: usize, reused: &Codebook) -> Result<(TransferCodebook, Vec<f64>)> {
    let mut r = bits.reader();
    let (choice, size) = if r.read_bit()? {
        let size = TASK_R_GRID[read_grid_index(&mut r, TASK_R_GRID.len(), "codebook size")?];
        (TransferCodebook::New(Codebook::read(&mut r, size, CodebookKind::Task)?), size)
    } else {
        (TransferCodebook::Reused, reused.len())
    };
    let indices = read_index_stream(&mut r, size, count)?;
    expect_end(&r, "transfer code")?;
    let values = match &choice {
        TransferCodebook::Reused => dequantize(&indices, reused),
        TransferCodebook::New(cb) => dequantize(&indices, cb),
    };
    Ok((choice, values))
}
