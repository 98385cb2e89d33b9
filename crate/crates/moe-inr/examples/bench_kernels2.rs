use std::time::Instant;

fn main() {
    // Shapes from the hot path: batch 2048, widths 66/264.
    for (m, k, n, label) in [
        (2048usize, 66usize, 66usize, "fwd  2048x66x66 "),
        (2048, 132, 66, "fwd  2048x132x66"),
        (2048, 66, 3, "fwd  2048x66x3  "),
    ] {
        let a = vec![0.5f64; m * k];
        let b = vec![0.25f64; k * n];
        let g = vec![0.1f64; m * n];
        let reps = 20;

        let t0 = Instant::now();
        let mut tot = 0.0;
        for _ in 0..reps {
            tot += moe_inr::bench_matmul(&a, &b, m, k, n)[0];
        }
        let nn_t = t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        for _ in 0..reps {
            tot += moe_inr::bench_matmul_nt(&g, &b, m, n, k)[0];
        }
        let nt_t = t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        for _ in 0..reps {
            tot += moe_inr::bench_matmul_tn(&a, &g, m, k, n)[0];
        }
        let tn_t = t0.elapsed().as_secs_f64();
        let gf = |t: f64| 2.0 * (m * k * n * reps) as f64 / t / 1e9;
        println!("{label}: nn {:5.1}  nt {:5.1}  tn {:5.1} GFLOP/s   (x {tot:.1})", gf(nn_t), gf(nt_t), gf(tn_t));
    }
}
