//! Accuracy and speed of the polynomial sine against libm.

fn main() {
    let mut max_err = 0.0f64;
    let mut arg = 0.0;
    for i in 0..2_000_000 {
        let x = -100.0 + 200.0 * i as f64 / 2e6;
        let err = (moe_inr::bench_fast_sin(x) - x.sin()).abs();
        if err > max_err {
            max_err = err;
            arg = x;
        }
    }
    println!("max |fast_sin - libm sin| on [-100,100]: {:.3e} at x={:.4}", max_err, arg);

    let n = 512 * 66;
    let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.1).sin() * 15.0).collect();
    let t0 = std::time::Instant::now();
    let mut acc = 0.0;
    for _ in 0..6000 {
        let y: Vec<f64> = x.iter().map(|&v| moe_inr::bench_fast_sin(v)).collect();
        acc += y[0];
    }
    println!("fast_sin: {:4.1} ns/elem (acc {acc:.2})", t0.elapsed().as_nanos() as f64 / (6000 * n) as f64);
}
