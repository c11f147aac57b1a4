//! Times channel attention and window attention over doubling frame sizes.

use tvqe::bench::{bench_sizes, doubling_sizes, slopes, BenchOptions};

fn main() -> tvqe::error::Result<()> {
    let opts = BenchOptions { repeats: 3, ..BenchOptions::default() };
    let rows = bench_sizes(&doubling_sizes((32, 32), 4), &opts)?;
    for r in &rows {
        println!("{:>4}x{:<4} {:>7} px  mdta {:.5}s  wmsa {:.5}s", r.width, r.height, r.pixels, r.mdta_seconds, r.wmsa_seconds);
    }
    let s = slopes(&rows)?;
    println!("log-log slope: mdta {:.3}, wmsa {:.3}", s.mdta, s.wmsa);
    Ok(())
}
