//! Wall-time attribution inside one training iteration, by brute timing.

use moe_inr::autodiff::{AdamConfig, AdamState, Graph, Tensor};
use moe_inr::moe::{MoeConfig, MoeModel};
use moe_inr::signals::synthetic_image;
use moe_inr::training::{moe_recon_loss, subset_batch};
use rand::SeedableRng;
use std::time::Instant;

fn main() {
    let img = synthetic_image(128);
    let model = MoeModel::<f64>::new(MoeConfig::image_small(), 0).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let batch = subset_batch(&img.coords, &img.values, None, 512, &mut rng);
    let reps = 30;

    let (mut t_build, mut t_fwd, mut t_loss, mut t_bwd, mut t_collect, mut t_adam) =
        (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let mut params: Vec<Tensor<f64>> = model.store.values().to_vec();
    let mut adam = AdamState::new(AdamConfig::with_lr(1e-4, 1.0), &params);
    for _ in 0..reps {
        let t0 = Instant::now();
        let mut g = Graph::new();
        let bind = model.store.bind(&mut g);
        let x = g.constant(model.encode_coords(&batch.coords).unwrap());
        let y = g.constant(batch.values.clone());
        t_build += t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let latent = model.expert_latent_graph(&mut g, &bind, x).unwrap();
        let mut outs = Vec::new();
        for e in 0..4 {
            outs.push(model.expert_forward_graph(&mut g, &bind, e, latent).unwrap());
        }
        let (_, q) = model.manager_probs_graph(&mut g, &bind, x, latent).unwrap();
        t_fwd += t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let loss = moe_recon_loss(&mut g, q, &outs, y).unwrap();
        t_loss += t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let mut grads = g.backward(loss).unwrap();
        t_bwd += t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let collected: Vec<Option<Tensor<f64>>> = bind
            .vars()
            .iter()
            .zip(model.store.values())
            .map(|(v, p)| Some(grads.take_or_zeros(*v, p.shape())))
            .collect();
        drop(g);
        t_collect += t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        adam.step(&mut params, &collected, |_| false).unwrap();
        t_adam += t0.elapsed().as_secs_f64();
    }
    let ms = |t: f64| t * 1000.0 / reps as f64;
    println!("build {:6.1}  fwd {:6.1}  loss {:6.1}  bwd {:6.1}  collect {:6.1}  adam {:6.1}  (ms/iter)",
        ms(t_build), ms(t_fwd), ms(t_loss), ms(t_bwd), ms(t_collect), ms(t_adam));
}
