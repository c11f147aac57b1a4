//! synth, train, enhance and eval through the command-line entry point.

use tvqe::cli::main_with_args;

fn tvqe(args: &[String]) {
    println!("$ tvqe {}", args.join(" "));
    let code = main_with_args(std::iter::once("tvqe".to_string()).chain(args.iter().cloned()));
    assert_eq!(code, 0, "command failed");
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let d = |p: &str| dir.path().join(p).display().to_string();
    let args = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let qs = [27, 37, 42];

    tvqe(&args(&["synth", "--dims", "32x32", "--q", "27,37,42", "--out", &d("s")]));
    tvqe(&args(&[
        "train", "--dims", "32x32", "--raw", &d("s/raw.yuv"), "--compressed", &d("s/synthetic_q37.yuv"), "--out", &d("t"),
        "model.radius=1", "model.window_size=4", "model.depths=[1,1,1]", "model.embed_dim=16", "model.dtype=\"f32\"",
        "train.stage1_steps=4", "train.stage2_steps=2", "train.batch_size=2",
    ]));
    let mut eval = args(&["eval", "--dims", "32x32", "--raw", &d("s/raw.yuv"), "--out", &d("v"), "io.qs=[27,37,42]"]);
    for q in qs {
        let (input, out) = (d(&format!("s/synthetic_q{q}.yuv")), d(&format!("e{q}")));
        tvqe(&args(&["enhance", "--dims", "32x32", "--checkpoint", &d("t/checkpoint.tvqe"), "--input", &input, "--out", &out]));
        eval.extend(args(&["--compressed", &input, "--enhanced", &format!("{out}/enhanced.yuv")]));
    }
    tvqe(&eval);
}
