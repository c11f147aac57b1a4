//! Raw YUV luma I/O, synthetic degradation and content, patch sampling and checkpoints.

pub mod checkpoint;
pub mod degrade;
pub mod patches;
pub mod synth;
pub mod yuv;

pub use checkpoint::{
    checkpoint_config, decode_checkpoint, encode_checkpoint, fnv64, load_checkpoint, load_checkpoint_for,
    save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use degrade::{
    degrade_sequence, rate_proxy_kbps, synth_degrade, synth_degrade_with_stats, DegradeProfile, DegradeStats,
    MAX_Q, PRESET_QPS,
};
pub use patches::{draw_coord, sample_patches, PatchCoord, PatchSource, SequencePair};
pub use synth::{synthetic_sequence, test_pattern, SynthSpec};
pub use yuv::{
    clip_indices, clip_window, frame_size, plane_from_bytes, plane_to_bytes, quantize_8bit, write_sequence,
    YuvSequence, YuvWriter,
};
