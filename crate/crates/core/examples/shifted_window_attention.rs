//! One regular and one shifted Swin block over a 16×16 token map.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tvqe::params::ModelParams;
use tvqe::swin::{block_param_shapes, swin_block, AttentionMask, BlockSpec, WindowGrid};
use tvqe::tensor::{Tape, Tensor};

fn main() -> tvqe::error::Result<()> {
    let (h, w, c, heads, ws) = (16, 16, 8, 2, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut params = ModelParams::<f64>::new();
    for shift in [0, ws / 2] {
        for (path, shape) in block_param_shapes(&format!("b{shift}"), c, heads, ws, 2.0) {
            let n = shape.iter().product();
            let fill = if path.ends_with("norm1.weight") || path.ends_with("norm2.weight") { 1.0 } else { 0.0 };
            let data = (0..n).map(|_| fill + rng.random_range(-0.1..0.1)).collect();
            params.insert(path, Tensor::new(&shape, data)?);
        }
    }

    let grid = WindowGrid::new(h, w, ws, ws / 2)?;
    let mask = AttentionMask::build(grid);
    println!("{} windows of {} tokens; mask {:?}", grid.num_windows(), grid.tokens_per_window(), mask.shape());

    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let tokens: Vec<f64> = (0..h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x = tape.leaf(Tensor::new(&[1, h * w, c], tokens)?);
    let y = swin_block(&mut tape, &p, "b0", x, h, w, BlockSpec { heads, window_size: ws, shift: 0 })?;
    let y = swin_block(&mut tape, &p, "b2", y, h, w, BlockSpec { heads, window_size: ws, shift: ws / 2 })?;
    let out = tape.tensor(y);
    println!("output {:?}, max |y| {:.4}", out.shape(), out.max_abs());
    Ok(())
}
