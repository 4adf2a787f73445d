//! Packed storage of quantized models, memory accounting and multiplier-free
//! inference.

pub mod bench;
pub mod memory;
pub mod shiftadd;
pub mod sqw;

pub use bench::{bench, BenchReport};
pub use memory::{memory_report, MemoryReport};
pub use shiftadd::{Pow2Weight, ShiftAddModel};
pub use sqw::{pack_codes, pack_model, payload_len, unpack_codes, PackedModel, PackedTensor, TensorData};
