//! Codebook quantization, arithmetic coding and exact code lengths.

pub mod arith;
pub mod bits;
pub mod bundle;
pub mod codebook;
pub mod codes;
pub mod finetune;
pub mod kraft;

pub use arith::{arithmetic_decode, arithmetic_encode, FrequencyTable};
pub use bits::{BitReader, BitString, BitWriter};
pub use bundle::{decode_bundle, encode_bundle, DecodedBundle, EncodedBundle, HyperGrids};
pub use codebook::{dequantize, kmeans_1d, quantize, Codebook, CodebookKind, Quantized};
pub use codes::{
    decode_single_task, decode_transfer, encode_single_task, encode_transfer, part_bits, SingleTaskHyper,
    TransferCodebook, GLOBAL_R_GRID, LOCAL_R_GRID, TASK_R_GRID,
};
pub use finetune::{
    finetune_quantized, is_quantized, quantize_own, quantize_shared, quantize_shared_global, quantize_shared_local,
    FinetuneReport,
};
pub use kraft::{kraft_check, kraft_sum, KraftReport};
