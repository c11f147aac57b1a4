//! Writes and re-reads a YUV 4:2:0 file, then round-trips a checkpoint.

use tvqe::data::{load_checkpoint, save_checkpoint, synthetic_sequence, write_sequence, SynthSpec, YuvSequence};
use tvqe::model::{param_init, ModelConfig};
use tvqe::tensor::DType;

fn main() -> tvqe::error::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let spec = SynthSpec { width: 40, height: 24, frames: 3, ..SynthSpec::default() };
    let planes = synthetic_sequence::<f64>(&spec)?;
    let seq = write_sequence(dir.path().join("clip.yuv"), &planes)?;
    println!("{}: {}x{}, {} frames of {} bytes", seq.path.display(), seq.width, seq.height, seq.frame_count, seq.frame_size());

    let back = YuvSequence::open(&seq.path, 40, 24)?.read_all_y::<f64>()?;
    println!("luma round trip exact: {}", back == planes);

    let cfg = ModelConfig { dtype: DType::F64, ..ModelConfig::toy() };
    let params = param_init::<f64>(&cfg, 1)?;
    let path = dir.path().join("model.tvqe");
    let sum = save_checkpoint(&path, &cfg, &params, None)?;
    let ck = load_checkpoint::<f64>(&path)?;
    println!("checkpoint fnv64 {sum:016x}, {} tensors, params equal: {}", ck.params.len(), ck.params == params);
    Ok(())
}
