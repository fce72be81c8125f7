use std::time::Instant;
use svq_lab::autodiff::Tape;
use svq_lab::rng::Rng;
use svq_lab::tensor::Tensor as GT;

type Tensor = GT<f64>;

fn randn(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.next_gaussian()).collect()).unwrap()
}

fn time_conv(b: usize, ci: usize, co: usize, hw: usize, stride: usize, reps: usize, rng: &mut Rng) {
    let x = randn(&[b, ci, hw, hw], rng);
    let w = randn(&[co, ci, 3, 3], rng);
    let bias = randn(&[co], rng);
    // forward + full backward through a tape, like training does
    let t0 = Instant::now();
    for _ in 0..reps {
        let tape = Tape::new();
        let xv = tape.var(x.clone());
        let wv = tape.var(w.clone());
        let bv = tape.var(bias.clone());
        let y = xv.conv2d(&wv, Some(&bv), stride, 1).unwrap();
        let loss = y.sum().unwrap();
        tape.backward(loss).unwrap();
    }
    let dt = t0.elapsed().as_secs_f64() / reps as f64;
    let ho = hw / stride;
    let macs = (b * co * ci * 9 * ho * ho) as f64;
    println!(
        "conv {b}x{ci}->{co} @{hw} s{stride}: {:7.2} ms fwd+bwd  ({:.2} GFLOP/s fwd-equiv x3)",
        dt * 1e3,
        3.0 * 2.0 * macs / dt / 1e9
    );
}

fn main() {
    let mut rng = Rng::new(7);
    // encoder/decoder shapes for one batch of 8 samples (32 frames)
    time_conv(32, 1, 32, 16, 1, 20, &mut rng);
    time_conv(32, 32, 32, 16, 2, 20, &mut rng);
    time_conv(32, 32, 32, 8, 2, 20, &mut rng);
    time_conv(32, 32, 16, 8, 1, 20, &mut rng);
    time_conv(32, 16, 8, 16, 1, 20, &mut rng);
    time_conv(32, 8, 1, 16, 1, 20, &mut rng);
}
