//! Quick throughput probe: seconds per training iteration at several batch sizes.

use moe_inr::autodiff::AdamConfig;
use moe_inr::moe::{MoeConfig, MoeModel, SingleConfig, SingleModel};
use moe_inr::signals::synthetic_image;
use moe_inr::training::{subset_batch, train, train_single, TrainOptions, TrainSchedule};

fn main() {
    let img = synthetic_image(128);
    for batch in [512usize, 1024, 2048] {
        let sched = TrainSchedule {
            pretrain_iters: 0,
            total_iters: 30,
            batch_size: batch,
            optimizer: AdamConfig::with_lr(1e-4, 1.0),
            seed: 0,
            log_every: 1000,
            snapshot_every: 0,
            ..TrainSchedule::default()
        };
        let mut model = MoeModel::<f64>::new(MoeConfig::image_small(), 0).unwrap();
        let (c, v) = (img.coords.clone(), img.values.clone());
        let t0 = std::time::Instant::now();
        train(&mut model, &sched, &TrainOptions::default(), |_, rng| {
            Ok(subset_batch(&c, &v, None, batch, rng))
        }, |_, _| None)
        .unwrap();
        let moe_ms = t0.elapsed().as_secs_f64() * 1000.0 / 30.0;

        let mut base = SingleModel::<f64>::new(
            SingleConfig::base(2, 3, moe_inr::nets::ActivationFamily::sine()),
            0,
        )
        .unwrap();
        let (c, v) = (img.coords.clone(), img.values.clone());
        let t0 = std::time::Instant::now();
        train_single(&mut base, &sched, moe_inr::training::ReconLossKind::SquaredError, |_, rng| {
            Ok(subset_batch(&c, &v, None, batch, rng))
        }, |_, _| None)
        .unwrap();
        let base_ms = t0.elapsed().as_secs_f64() * 1000.0 / 30.0;
        println!("batch {:5}: moe-small {:7.1} ms/iter, base {:7.1} ms/iter", batch, moe_ms, base_ms);
    }
}
