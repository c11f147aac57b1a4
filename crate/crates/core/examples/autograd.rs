//! Reverse-mode gradients of a small expression, checked against central differences.

use tvqe::tensor::gradcheck::{finite_diff_check, FdOptions};
use tvqe::tensor::{Tape, Tensor};

fn main() -> tvqe::error::Result<()> {
    let x = Tensor::from_f64(&[2, 3], &[0.3, -1.2, 0.8, 2.0, -0.5, 0.1])?;
    let w = Tensor::from_f64(&[3, 2], &[0.5, -0.4, 1.1, 0.2, -0.7, 0.9])?;

    // loss = mean(gelu(x·w)²)
    let f = |t: &mut Tape<f64>, v: &[tvqe::tensor::Var]| {
        let y = t.matmul(v[0], v[1])?;
        let y = t.gelu(y)?;
        let y = t.mul(y, y)?;
        t.mean(y)
    };

    let mut tape = Tape::new();
    let (xv, wv) = (tape.leaf(x.clone().with_requires_grad(true)), tape.leaf(w.clone().with_requires_grad(true)));
    let loss = f(&mut tape, &[xv, wv])?;
    let grads = tape.backward(loss)?;
    println!("loss      {:.6}", tape.value(loss)[0]);
    println!("dloss/dx  {:?}", grads.get(xv).unwrap());
    println!("dloss/dw  {:?}", grads.get(wv).unwrap());

    let report = finite_diff_check(f, &[x, w], &FdOptions::default())?;
    println!(
        "finite differences: {} coords, max rel err {:.2e} ({})",
        report.checked,
        report.max_rel_err,
        if report.passed() { "pass" } else { "fail" }
    );
    Ok(())
}
