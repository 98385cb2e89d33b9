use std::time::Instant;

fn main() {
    let n = 512 * 66;
    let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.1).sin() * 0.5).collect();
    let reps = 6000;

    // Fresh Vec per rep (current engine behavior).
    let t0 = Instant::now();
    let mut acc = 0.0;
    for _ in 0..reps {
        let y: Vec<f64> = x.iter().map(|&v| (30.0 * v).sin()).collect();
        acc += y[0];
        // drop y
    }
    println!("fresh alloc sin: {:5.1} ns/elem (acc {acc:.2})", t0.elapsed().as_nanos() as f64 / (reps * n) as f64);

    // Reused buffer.
    let mut y = vec![0.0f64; n];
    let t0 = Instant::now();
    for _ in 0..reps {
        for (o, &v) in y.iter_mut().zip(&x) {
            *o = (30.0 * v).sin();
        }
        acc += y[0];
    }
    println!("reused buf  sin: {:5.1} ns/elem (acc {acc:.2})", t0.elapsed().as_nanos() as f64 / (reps * n) as f64);

    // Fresh Vec, trivial op.
    let t0 = Instant::now();
    for _ in 0..reps {
        let y: Vec<f64> = x.iter().map(|&v| v * v).collect();
        acc += y[0];
    }
    println!("fresh alloc sq : {:5.1} ns/elem (acc {acc:.2})", t0.elapsed().as_nanos() as f64 / (reps * n) as f64);

    let t0 = Instant::now();
    for _ in 0..reps {
        for (o, &v) in y.iter_mut().zip(&x) {
            *o = v * v;
        }
        acc += y[0];
    }
    println!("reused buf  sq : {:5.1} ns/elem (acc {acc:.2})", t0.elapsed().as_nanos() as f64 / (reps * n) as f64);
}
