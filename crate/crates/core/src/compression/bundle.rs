//! Decodable multi-task bundle.
//!
//! Byte layout (all integers big-endian):
//!
//! ```text
//! "AIDB"                      magic
//! u8                          format version (1)
//! u64 u64                     θ₀ seed, Q′ projector seed
//! u64                         ambient dimension D
//! u32 u32 u32                 n, k, l
//! u32 u16 (u32 u8)*           network: input dim, layer count, (width, activation)
//! u16 u32*                    l grid
//! u16 u32*                    k grid
//! u16 u64*                    learning-rate grid (IEEE-754 bits)
//! u32 + bytes                 meta part: bit count, then bits padded to a byte
//! u32 + bytes                 multitask part: bit count, then bits
//! u32                         CRC-32 of everything above
//! ```
//!
//! Meta part bits: l index, k index, learning-rate index, global codebook
//! size index, local codebook size index (each `⌈log₂ |grid|⌉` bits), the
//! global codebook (16 bits per center), its count table
//! (`r_g · ⌈log₂(kl + 1)⌉` bits) and the arithmetic stream over v₁…v_k.
//!
//! Multitask part bits: local codebook, count table
//! (`r_l · ⌈log₂(nk + 1)⌉` bits) and the stream over α₁…α_n.
//!
//! `l(E)` and `l_E` are the part lengths plus their 32-bit prefixes. The
//! header carries only data-independent choices; the checksum is an
//! integrity guard and not part of either code.

use serde::{Deserialize, Serialize};

use super::bits::BitString;
use super::bits::BitWriter;
use super::codebook::{dequantize, quantize, Codebook, CodebookKind};
use super::codes::{
    frame, grid_position, part_bits, read_grid_index, read_index_stream, unframe, write_grid_index,
    write_index_stream, GLOBAL_R_GRID, LOCAL_R_GRID,
};
use crate::error::{Error, Result};
use crate::linalg::network::{Activation, Layer, NetworkSpec};
use crate::linalg::rng::RngStream;
use crate::model::{Mode, SubspaceModel};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"AIDB";
pub const BUNDLE_VERSION: u8 = 1;

/// Candidate values searched over; fixed before seeing data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrids {
    pub l: Vec<usize>,
    pub k: Vec<usize>,
    pub lr: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BundleHeader {
    pub theta0_seed: u64,
    pub projector_seed: u64,
    pub ambient: u64,
    pub tasks: usize,
    pub k: usize,
    pub l: usize,
    pub spec: NetworkSpec,
    pub grids: HyperGrids,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBundle {
    pub header: BundleHeader,
    pub meta: BitString,
    pub multitask: BitString,
}

#[derive(Debug, Clone)]
pub struct DecodedBundle<T> {
    pub model: SubspaceModel<T>,
    pub global: Codebook,
    pub local: Codebook,
    pub lr_index: usize,
}

impl EncodedBundle {
    /// `l(E)`.
    pub fn meta_bits(&self) -> usize {
        part_bits(&self.meta)
    }

    /// `l_E(f₁, …, f_n)`.
    pub fn multitask_bits(&self) -> usize {
        part_bits(&self.multitask)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let h = &self.header;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(BUNDLE_VERSION);
        out.extend_from_slice(&h.theta0_seed.to_be_bytes());
        out.extend_from_slice(&h.projector_seed.to_be_bytes());
        out.extend_from_slice(&h.ambient.to_be_bytes());
        for v in [h.tasks, h.k, h.l, h.spec.input_dim] {
            out.extend_from_slice(&to_u32(v)?.to_be_bytes());
        }
        out.extend_from_slice(&to_u16(h.spec.layers.len())?.to_be_bytes());
        for layer in &h.spec.layers {
            out.extend_from_slice(&to_u32(layer.width)?.to_be_bytes());
            out.push(activation_code(layer.activation));
        }
        for grid in [&h.grids.l, &h.grids.k] {
            out.extend_from_slice(&to_u16(grid.len())?.to_be_bytes());
            for &g in grid {
                out.extend_from_slice(&to_u32(g)?.to_be_bytes());
            }
        }
        out.extend_from_slice(&to_u16(h.grids.lr.len())?.to_be_bytes());
        for &lr in &h.grids.lr {
            out.extend_from_slice(&lr.to_bits().to_be_bytes());
        }
        frame(&self.meta, &mut out)?;
        frame(&self.multitask, &mut out)?;
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_be_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 9 || &bytes[..4] != MAGIC {
            return Err(Error::Parse("not a bundle (bad magic)".into()));
        }
        if bytes[4] != BUNDLE_VERSION {
            return Err(Error::Version {
                found: bytes[4],
                expected: BUNDLE_VERSION,
            });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_be_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::Corrupt("bundle checksum mismatch".into()));
        }
        let mut c = Cursor { bytes: body, pos: 5 };
        let theta0_seed = c.u64()?;
        let projector_seed = c.u64()?;
        let ambient = c.u64()?;
        let tasks = c.u32()? as usize;
        let k = c.u32()? as usize;
        let l = c.u32()? as usize;
        let input_dim = c.u32()? as usize;
        let layer_count = c.u16()? as usize;
        let mut layers = Vec::with_capacity(layer_count);
        for _ in 0..layer_count {
            let width = c.u32()? as usize;
            let activation = activation_from(c.u8()?)?;
            layers.push(Layer { width, activation });
        }
        let usize_grid = |c: &mut Cursor<'_>| -> Result<Vec<usize>> {
            let n = c.u16()? as usize;
            (0..n).map(|_| c.u32().map(|v| v as usize)).collect()
        };
        let l_grid = usize_grid(&mut c)?;
        let k_grid = usize_grid(&mut c)?;
        let lr_count = c.u16()? as usize;
        let lr = (0..lr_count)
            .map(|_| c.u64().map(f64::from_bits))
            .collect::<Result<Vec<_>>>()?;
        let (meta, used) = unframe(&body[c.pos..])?;
        c.pos += used;
        let (multitask, used) = unframe(&body[c.pos..])?;
        c.pos += used;
        if c.pos != body.len() {
            return Err(Error::Corrupt(format!("{} stray bytes before checksum", body.len() - c.pos)));
        }
        Ok(Self {
            header: BundleHeader {
                theta0_seed,
                projector_seed,
                ambient,
                tasks,
                k,
                l,
                spec: NetworkSpec { input_dim, layers },
                grids: HyperGrids {
                    l: l_grid,
                    k: k_grid,
                    lr,
                },
            },
            meta,
            multitask,
        })
    }
}

fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} does not fit the bundle's 32-bit field")))
}

fn to_u16(v: usize) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} does not fit the bundle's 16-bit field")))
}

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Relu => 0,
        Activation::Elu => 1,
        Activation::Identity => 2,
    }
}

fn activation_from(code: u8) -> Result<Activation> {
    match code {
        0 => Ok(Activation::Relu),
        1 => Ok(Activation::Elu),
        2 => Ok(Activation::Identity),
        c => Err(Error::Corrupt(format!("unknown activation code {c}"))),
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + N)
            .ok_or_else(|| Error::Corrupt(format!("bundle header truncated at byte {}", self.pos)))?;
        self.pos += N;
        Ok(s.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_be_bytes(self.take()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_be_bytes(self.take()?))
    }
}

/// Encode a shared-mode model. Coefficients are snapped to the nearest
/// codebook centers, so a fine-tuned model is encoded losslessly.
pub fn encode_bundle<T: Scalar>(
    model: &SubspaceModel<T>,
    global: &Codebook,
    local: &Codebook,
    grids: &HyperGrids,
    lr_index: usize,
) -> Result<EncodedBundle> {
    let Mode::Shared { basis, alphas, tasks } = &model.mode else {
        return Err(Error::InvalidArgument("only shared-mode models form a bundle".into()));
    };
    let (k, l) = (basis.k(), basis.l());
    let l_index = grid_position(&grids.l, l, "l")?;
    let k_index = grid_position(&grids.k, k, "k")?;
    if lr_index >= grids.lr.len() {
        return Err(Error::InvalidArgument(format!("learning-rate index {lr_index} outside grid")));
    }
    let rg_index = grid_position(&GLOBAL_R_GRID, global.len(), "global codebook size")?;
    let rl_index = grid_position(&LOCAL_R_GRID, local.len(), "local codebook size")?;

    let mut meta = BitWriter::new();
    write_grid_index(&mut meta, l_index, grids.l.len());
    write_grid_index(&mut meta, k_index, grids.k.len());
    write_grid_index(&mut meta, lr_index, grids.lr.len());
    write_grid_index(&mut meta, rg_index, GLOBAL_R_GRID.len());
    write_grid_index(&mut meta, rl_index, LOCAL_R_GRID.len());
    global.write(&mut meta);
    let v: Vec<f64> = basis.v.iter().map(|x| x.f64()).collect();
    write_index_stream(&mut meta, &quantize(&v, global).indices, global.len())?;

    let mut mt = BitWriter::new();
    local.write(&mut mt);
    let a: Vec<f64> = alphas.iter().map(|x| x.f64()).collect();
    write_index_stream(&mut mt, &quantize(&a, local).indices, local.len())?;

    Ok(EncodedBundle {
        header: BundleHeader {
            theta0_seed: model.theta0_stream().seed,
            projector_seed: basis.projector().stream().seed,
            ambient: model.ambient_dim() as u64,
            tasks: *tasks,
            k,
            l,
            spec: model.spec().clone(),
            grids: grids.clone(),
        },
        meta: meta.finish(),
        multitask: mt.finish(),
    })
}

pub fn decode_bundle<T: Scalar>(bundle: &EncodedBundle) -> Result<DecodedBundle<T>> {
    let h = &bundle.header;
    let drift = |what: &str, header: usize, stream: usize| {
        Error::Corrupt(format!("{what}: header says {header}, stream says {stream}"))
    };
    if h.spec.param_count() as u64 != h.ambient {
        return Err(drift("ambient dimension", h.ambient as usize, h.spec.param_count()));
    }
    let mut r = bundle.meta.reader();
    let l = h.grids.l[read_grid_index(&mut r, h.grids.l.len(), "l")?];
    let k = h.grids.k[read_grid_index(&mut r, h.grids.k.len(), "k")?];
    let lr_index = read_grid_index(&mut r, h.grids.lr.len(), "learning rate")?;
    let r_g = GLOBAL_R_GRID[read_grid_index(&mut r, GLOBAL_R_GRID.len(), "global codebook size")?];
    let r_l = LOCAL_R_GRID[read_grid_index(&mut r, LOCAL_R_GRID.len(), "local codebook size")?];
    if l != h.l {
        return Err(drift("l", h.l, l));
    }
    if k != h.k {
        return Err(drift("k", h.k, k));
    }
    let global = Codebook::read(&mut r, r_g, CodebookKind::Global)?;
    let v_idx = read_index_stream(&mut r, r_g, k * l)?;
    if r.remaining() != 0 {
        return Err(Error::Corrupt(format!("{} stray bits after the meta stream", r.remaining())));
    }
    let mut r = bundle.multitask.reader();
    let local = Codebook::read(&mut r, r_l, CodebookKind::Local)?;
    let a_idx = read_index_stream(&mut r, r_l, h.tasks * k)?;
    if r.remaining() != 0 {
        return Err(Error::Corrupt(format!("{} stray bits after the multitask stream", r.remaining())));
    }

    let mut model = SubspaceModel::<T>::shared(
        h.spec.clone(),
        RngStream::new(h.theta0_seed),
        h.tasks,
        k,
        l,
        RngStream::new(h.projector_seed),
        RngStream::new(0),
    )?;
    let values: Vec<T> = dequantize(&v_idx, &global)
        .into_iter()
        .chain(dequantize(&a_idx, &local))
        .map(T::of)
        .collect();
    model.set_trainables(&values)?;
    Ok(DecodedBundle {
        model,
        global,
        local,
        lr_index,
    })
}
