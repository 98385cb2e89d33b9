use moe_inr::autodiff::{Graph, Op, Tensor};
use std::time::Instant;

fn main() {
    let (m, w) = (512usize, 66usize);
    let x = Tensor::new(vec![m, w], (0..m * w).map(|i| (i as f64 * 0.1).sin() * 0.5).collect()).unwrap();
    let ww = Tensor::new(vec![w, w], (0..w * w).map(|i| (i as f64 * 0.01).cos() * 0.1).collect()).unwrap();
    let b = Tensor::new(vec![1, w], vec![0.01; w]).unwrap();
    let reps = 300;

    for (label, op, nargs) in [
        ("linear ", Op::Linear, 3),
        ("sin    ", Op::Sin { scale: 30.0 }, 1),
        ("square ", Op::Square, 1),
    ] {
        // Fresh small graph per rep: 20 applies then drop, like training.
        let t0 = Instant::now();
        let mut total_nodes = 0usize;
        for _ in 0..reps {
            let mut g: Graph<f64> = Graph::new();
            let xv = g.param(&x);
            let wv = g.param(&ww);
            let bv = g.param(&b);
            for _ in 0..20 {
                let args = [xv, wv, bv];
                g.apply(op.clone(), &args[..nargs]).unwrap();
            }
            total_nodes += g.len();
        }
        println!(
            "{label}: {:7.1} us/apply  ({} nodes)",
            t0.elapsed().as_micros() as f64 / (reps * 20) as f64,
            total_nodes
        );
    }
}
