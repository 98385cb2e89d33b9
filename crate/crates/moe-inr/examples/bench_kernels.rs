//! Micro-profile of the kernels that dominate a training iteration.

use std::time::Instant;

fn main() {
    let n = 2048 * 128;
    let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();

    let t0 = Instant::now();
    let mut acc = 0.0f64;
    for _ in 0..10 {
        for &v in &x {
            acc += v.sin();
        }
    }
    println!("libm sin:      {:6.1} ns/elem (acc {acc:.3})", t0.elapsed().as_nanos() as f64 / (10 * n) as f64);

    let t0 = Instant::now();
    let mut ok = true;
    for _ in 0..50 {
        ok &= x.iter().all(|v| v.is_finite());
    }
    println!("finite scan:   {:6.2} ns/elem (ok {ok})", t0.elapsed().as_nanos() as f64 / (50 * n) as f64);

    let t0 = Instant::now();
    let mut s = 0.0;
    for _ in 0..50 {
        let y: Vec<f64> = x.iter().map(|v| v * 1.0001).collect();
        s += y[0];
    }
    println!("alloc+copy:    {:6.2} ns/elem (s {s:.3})", t0.elapsed().as_nanos() as f64 / (50 * n) as f64);

    // matmul at expert shapes: 2048x66 * 66x66
    let (m, k, nn) = (2048, 66, 66);
    let a = vec![0.5f64; m * k];
    let b = vec![0.25f64; k * nn];
    let t0 = Instant::now();
    let mut tot = 0.0;
    for _ in 0..20 {
        let c = moe_inr::bench_matmul(&a, &b, m, k, nn);
        tot += c[0];
    }
    let flops = 2.0 * (m * k * nn) as f64 * 20.0;
    println!("matmul 2048x66x66: {:5.1} GFLOP/s (tot {tot:.2})", flops / t0.elapsed().as_secs_f64() / 1e9);
}
