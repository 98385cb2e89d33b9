use std::time::Instant;

fn main() {
    let (m, k, n) = (512usize, 66usize, 66usize);
    let reps = 300;
    // Distinct input buffers per rep (defeats cache reuse across reps).
    let inputs: Vec<(Vec<f64>, Vec<f64>)> = (0..reps)
        .map(|r| {
            let a: Vec<f64> = (0..m * k).map(|i| ((i + r) as f64 * 0.1).sin()).collect();
            let b: Vec<f64> = (0..k * n).map(|i| ((i * r) as f64 * 0.01).cos()).collect();
            (a, b)
        })
        .collect();
    let t0 = Instant::now();
    let mut acc = 0.0;
    for (a, b) in &inputs {
        let c = moe_inr::bench_matmul(a, b, m, k, n);
        acc += c[0];
    }
    let gf = 2.0 * (m * k * n * reps) as f64 / t0.elapsed().as_secs_f64() / 1e9;
    println!("fresh inputs+output: {:5.1} GFLOP/s (acc {acc:.2})", gf);

    // Same but inputs reused (cache warm), fresh output allocation.
    let (a, b) = &inputs[0];
    let t0 = Instant::now();
    for _ in 0..reps {
        let c = moe_inr::bench_matmul(a, b, m, k, n);
        acc += c[0];
    }
    let gf = 2.0 * (m * k * n * reps) as f64 / t0.elapsed().as_secs_f64() / 1e9;
    println!("warm inputs:         {:5.1} GFLOP/s", gf);

    // Sequential (no rayon) comparison at the same shape.
    let t0 = Instant::now();
    for _ in 0..reps {
        let mut c = vec![0.0f64; m * n];
        for (kk, &av) in a.iter().enumerate().take(0) { let _ = (kk, av); }
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            let orow = &mut c[i * n..(i + 1) * n];
            for (kk, &av) in arow.iter().enumerate() {
                let brow = &b[kk * n..(kk + 1) * n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
        acc += c[0];
    }
    let gf = 2.0 * (m * k * n * reps) as f64 / t0.elapsed().as_secs_f64() / 1e9;
    println!("serial ikj:          {:5.1} GFLOP/s (acc {acc:.1})", gf);
}
