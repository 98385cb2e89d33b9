//! Losses, manager pretraining, and the phased training loop.
//!
//! A run has up to three phases: manager pretraining against a fixed expert
//! assignment (cross entropy), a main phase training everything with the
//! soft mixture reconstruction loss, and a final phase where the manager and
//! both encoders are frozen and only the expert heads keep training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::moe::MoeModel;
use crate::moe::SingleModel;
use crate::scalar::Scalar;

/// Iteration budget and optimizer settings for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    /// Manager pretraining iterations (0 skips pretraining).
    pub pretrain_iters: usize,
    /// Main training iterations, split into the all-parameters phase and the
    /// experts-only phase.
    pub total_iters: usize,
    /// Fraction of `total_iters` training every parameter.
    pub t_all: f64,
    /// Fraction training only the expert heads. Must satisfy t_all + t_e = 1.
    pub t_e: f64,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
    /// Cadence of loss log rows.
    pub log_every: usize,
    /// Cadence of metric snapshots (0 = only at the end).
    pub snapshot_every: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            pretrain_iters: 1000,
            total_iters: 5000,
            t_all: 0.8,
            t_e: 0.2,
            batch_size: 2048,
            optimizer: AdamConfig::with_lr(1e-4, 0.99995),
            seed: 0,
            log_every: 50,
            snapshot_every: 0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if (self.t_all + self.t_e - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "t_all + t_e must equal 1, got {} + {}",
                self.t_all, self.t_e
            )));
        }
        if !(0.0..=1.0).contains(&self.t_all) {
            return Err(Error::Config("t_all must lie in [0, 1]".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }

    /// First iteration of the experts-only phase.
    pub fn phase_boundary(&self) -> usize {
        (self.t_all * self.total_iters as f64).floor() as usize
    }
}

// --- losses ----------------------------------------------------------------

/// Mean cross entropy between manager probabilities and an expert assignment:
/// `mean over samples of -log q[label]`.
pub fn segmentation_loss<S: Scalar>(g: &mut Graph<S>, q: Var, labels: &[usize]) -> Result<Var> {
    let (batch, n) = {
        let t = g.value(q);
        (t.rows(), t.cols())
    };
    if labels.len() != batch {
        return Err(Error::Shape {
            op: "segmentation_loss",
            detail: format!("{} labels for batch {}", labels.len(), batch),
        });
    }
    let mut onehot = vec![S::zero(); batch * n];
    for (r, &l) in labels.iter().enumerate() {
        if l >= n {
            return Err(Error::Config(format!("label {} out of range for {} experts", l, n)));
        }
        onehot[r * n + l] = S::one();
    }
    let oh = g.constant(Tensor::new(vec![batch, n], onehot)?);
    let lq = g.log(q)?;
    let picked = g.mul(oh, lq)?;
    let per_sample = g.sum(picked, Some(1))?;
    let mean = g.mean(per_sample, None)?;
    g.mul_scalar(mean, S::from_f64(-1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconLossKind {
    /// Squared error per channel (images, audio).
    SquaredError,
    /// Absolute error (signed distance fields).
    AbsoluteError,
}

/// Soft mixture reconstruction loss:
/// `mean over batch of (1/N) sum_i q_i * err(out_i, y)`, where `err` is the
/// per-sample mean over output channels of the squared error.
pub fn moe_recon_loss<S: Scalar>(
    g: &mut Graph<S>,
    q: Var,
    expert_outputs: &[Var],
    y: Var,
) -> Result<Var> {
    weighted_recon_loss(g, q, expert_outputs, y, ReconLossKind::SquaredError)
}

/// The L1 variant used for SDF fitting; surface, fine, and coarse points all
/// weigh equally.
pub fn sdf_recon_loss<S: Scalar>(
    g: &mut Graph<S>,
    q: Var,
    expert_outputs: &[Var],
    y: Var,
) -> Result<Var> {
    weighted_recon_loss(g, q, expert_outputs, y, ReconLossKind::AbsoluteError)
}

pub fn weighted_recon_loss<S: Scalar>(
    g: &mut Graph<S>,
    q: Var,
    expert_outputs: &[Var],
    y: Var,
    kind: ReconLossKind,
) -> Result<Var> {
    let n = expert_outputs.len();
    if g.shape(q)[1] != n {
        return Err(Error::Shape {
            op: "moe_recon_loss",
            detail: format!("q has {} columns for {} experts", g.shape(q)[1], n),
        });
    }
    let mut per_expert = Vec::with_capacity(n);
    for &out in expert_outputs {
        let d = g.sub(out, y)?;
        let e = match kind {
            ReconLossKind::SquaredError => g.square(d)?,
            ReconLossKind::AbsoluteError => g.abs(d)?,
        };
        per_expert.push(g.mean(e, Some(1))?);
    }
    let errs = g.concat(&per_expert)?;
    let weighted = g.mul(q, errs)?;
    let per_sample = g.sum(weighted, Some(1))?;
    let scaled = g.mul_scalar(per_sample, S::from_f64(1.0 / n as f64))?;
    g.mean(scaled, None)
}

/// Plain reconstruction loss for single-network baselines.
pub fn single_recon_loss<S: Scalar>(
    g: &mut Graph<S>,
    out: Var,
    y: Var,
    kind: ReconLossKind,
) -> Result<Var> {
    let d = g.sub(out, y)?;
    let e = match kind {
        ReconLossKind::SquaredError => g.square(d)?,
        ReconLossKind::AbsoluteError => g.abs(d)?,
    };
    g.mean(e, None)
}

// --- pretraining targets -----------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretrainKind {
    None,
    /// I.i.d. uniform expert per coordinate (3D: per cell of a 64^3 grid).
    Random,
    /// Regular block partition of the domain into `n_experts` regions.
    Grid,
    /// K-means over coordinates concatenated with signal values.
    Kmeans,
    /// Grid map used as a frozen router; the manager never trains.
    FixedSubdivision,
    /// Random map used as a frozen router.
    FixedRandom,
}

impl PretrainKind {
    pub fn is_fixed(&self) -> bool {
        matches!(self, PretrainKind::FixedSubdivision | PretrainKind::FixedRandom)
    }
}

/// Resolution of the cell grid used for 3D random assignments.
const RANDOM_CELL_RES: usize = 64;

/// A per-coordinate expert assignment, generated once and reused for every
/// pretraining iteration.
#[derive(Debug, Clone)]
pub struct PretrainTarget {
    pub kind: PretrainKind,
    /// One label per dataset coordinate, index-aligned.
    pub labels: Vec<usize>,
    pub n_experts: usize,
    /// Cell lookup for 3D kinds so off-dataset points can be labeled.
    cell_map: Option<CellMap>,
}

#[derive(Debug, Clone)]
struct CellMap {
    res: usize,
    dim: usize,
    lo: f64,
    hi: f64,
    labels: Vec<usize>,
}

impl CellMap {
    fn lookup(&self, coord: &[f64]) -> usize {
        let mut idx = 0;
        for &c in coord.iter().take(self.dim) {
            let t = ((c - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0);
            let cell = ((t * self.res as f64) as usize).min(self.res - 1);
            idx = idx * self.res + cell;
        }
        self.labels[idx]
    }
}

impl PretrainTarget {
    pub fn label_of(&self, index: usize, coord: &[f64]) -> usize {
        match &self.cell_map {
            Some(map) => map.lookup(coord),
            None => self.labels[index],
        }
    }

    /// Fraction of coordinates assigned to each expert.
    pub fn shares(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.n_experts];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts.iter().map(|&c| c as f64 / self.labels.len() as f64).collect()
    }
}

/// Split `n` into `dim` near-equal factors (largest first) for block grids.
fn block_dims(n: usize, dim: usize) -> Vec<usize> {
    let mut dims = vec![1usize; dim];
    let mut remaining = n;
    for d in 0..dim {
        let left = dim - d;
        let target = (remaining as f64).powf(1.0 / left as f64).round() as usize;
        let mut f = target.max(1).min(remaining);
        while remaining % f != 0 {
            f -= 1;
        }
        dims[d] = f;
        remaining /= f;
    }
    dims[dim - 1] *= remaining;
    dims.sort_unstable_by(|a, b| b.cmp(a));
    dims
}

/// Generate the expert assignment used for manager pretraining.
///
/// `values` is required for the kmeans kind (coordinates are concatenated
/// with signal values as clustering features) and ignored otherwise.
pub fn make_pretrain_target(
    kind: PretrainKind,
    coords: &Tensor<f64>,
    values: Option<&Tensor<f64>>,
    n_experts: usize,
    seed: u64,
) -> Result<PretrainTarget> {
    if coords.is_empty() {
        return Err(Error::Config("pretraining needs a nonempty coordinate set".into()));
    }
    let (n, dim) = (coords.rows(), coords.cols());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cell_map = None;
    let labels: Vec<usize> = match kind {
        PretrainKind::None => Vec::new(),
        PretrainKind::Random | PretrainKind::FixedRandom => {
            if dim == 3 {
                // Per-cell assignment over the SDF domain.
                let total = RANDOM_CELL_RES.pow(3);
                let cells: Vec<usize> = (0..total).map(|_| rng.gen_range(0..n_experts)).collect();
                let map =
                    CellMap { res: RANDOM_CELL_RES, dim: 3, lo: -1.2, hi: 1.2, labels: cells };
                let labels = (0..n)
                    .map(|r| map.lookup(&coords.data()[r * dim..(r + 1) * dim]))
                    .collect();
                cell_map = Some(map);
                labels
            } else {
                (0..n).map(|_| rng.gen_range(0..n_experts)).collect()
            }
        }
        PretrainKind::Grid | PretrainKind::FixedSubdivision => {
            let dims = block_dims(n_experts, dim);
            // Domain bounds from the data so images ([-1,1]^2) and SDF
            // domains ([-1.2,1.2]^3) both partition cleanly.
            let mut lo = vec![f64::INFINITY; dim];
            let mut hi = vec![f64::NEG_INFINITY; dim];
            for r in 0..n {
                for d in 0..dim {
                    let c = coords.get2(r, d);
                    lo[d] = lo[d].min(c);
                    hi[d] = hi[d].max(c);
                }
            }
            (0..n)
                .map(|r| {
                    let mut idx = 0;
                    for d in 0..dim {
                        let span = (hi[d] - lo[d]).max(f64::MIN_POSITIVE);
                        let t = ((coords.get2(r, d) - lo[d]) / span).clamp(0.0, 1.0);
                        let cell = ((t * dims[d] as f64) as usize).min(dims[d] - 1);
                        idx = idx * dims[d] + cell;
                    }
                    idx
                })
                .collect()
        }
        PretrainKind::Kmeans => {
            let values = values.ok_or_else(|| {
                Error::Config("kmeans pretraining needs signal values".into())
            })?;
            if values.rows() != n {
                return Err(Error::Config("kmeans values must align with coordinates".into()));
            }
            let vd = values.cols();
            let fdim = dim + vd;
            let mut feats = vec![0.0f64; n * fdim];
            for r in 0..n {
                feats[r * fdim..r * fdim + dim]
                    .copy_from_slice(&coords.data()[r * dim..(r + 1) * dim]);
                feats[r * fdim + dim..(r + 1) * fdim]
                    .copy_from_slice(&values.data()[r * vd..(r + 1) * vd]);
            }
            kmeans_labels(&feats, n, fdim, n_experts, 50, &mut rng)
        }
    };
    Ok(PretrainTarget { kind, labels, n_experts, cell_map })
}

/// Lloyd's algorithm with seeded initialization from k distinct samples.
fn kmeans_labels(
    feats: &[f64],
    n: usize,
    dim: usize,
    k: usize,
    iters: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let mut centroid_idx: Vec<usize> = Vec::with_capacity(k);
    while centroid_idx.len() < k {
        let cand = rng.gen_range(0..n);
        if !centroid_idx.contains(&cand) {
            centroid_idx.push(cand);
        }
    }
    let mut centroids: Vec<f64> =
        centroid_idx.iter().flat_map(|&i| feats[i * dim..(i + 1) * dim].to_vec()).collect();
    let mut labels = vec![0usize; n];
    for _ in 0..iters {
        for r in 0..n {
            let f = &feats[r * dim..(r + 1) * dim];
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let cent = &centroids[c * dim..(c + 1) * dim];
                let d: f64 = f.iter().zip(cent).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            labels[r] = best;
        }
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for r in 0..n {
            counts[labels[r]] += 1;
            for d in 0..dim {
                sums[labels[r] * dim + d] += feats[r * dim + d];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for d in 0..dim {
                    centroids[c * dim + d] = sums[c * dim + d] / counts[c] as f64;
                }
            }
        }
    }
    labels
}

// --- training loops ----------------------------------------------------------

/// One training batch handed to the loop by the data source.
pub struct Batch {
    pub coords: Tensor<f64>,
    pub values: Tensor<f64>,
    /// Expert labels aligned with the batch rows, for auxiliary segmentation
    /// supervision or fixed routing.
    pub labels: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    All,
    ExpertsOnly,
}

impl Phase {
    pub fn code(&self) -> char {
        match self {
            Phase::Pretrain => 'P',
            Phase::All => 'A',
            Phase::ExpertsOnly => 'B',
        }
    }
}

#[derive(Debug, Clone)]
pub struct LogRow {
    pub iter: usize,
    pub phase: Phase,
    pub loss: f64,
    /// Snapshot metric at this iteration, when one was taken.
    pub metric: Option<f64>,
    pub lr: f64,
    /// Fraction of batch samples routed (argmax) to each expert.
    pub expert_shares: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub rows: Vec<LogRow>,
    pub final_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub loss: ReconLossKind,
    /// Add the segmentation loss (weight 1) during the all-parameters phase.
    pub aux_segmentation: bool,
    /// Route by the fixed target instead of the manager; manager and manager
    /// encoder stay frozen for the whole run.
    pub fixed_manager: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { loss: ReconLossKind::SquaredError, aux_segmentation: false, fixed_manager: false }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainReport {
    /// (iteration, cross entropy) samples.
    pub ce_curve: Vec<(usize, f64)>,
    /// Argmax agreement with the target over the full coordinate set.
    pub agreement: f64,
    /// Per-expert share of the argmax assignment after pretraining.
    pub shares: Vec<f64>,
}

fn map_loss_err(e: Error, iter: usize) -> Error {
    match e {
        Error::NonFinite { .. } => Error::NonFiniteLoss { iter, loss: f64::NAN },
        other => other,
    }
}

/// Train the manager (head, manager encoder, expert encoder) to reproduce a
/// fixed expert assignment by cross entropy. Expert heads never move.
pub fn pretrain_manager<S: Scalar>(
    model: &mut MoeModel<S>,
    coords: &Tensor<f64>,
    target: &PretrainTarget,
    schedule: &TrainSchedule,
) -> Result<PretrainReport> {
    schedule.validate()?;
    if target.kind == PretrainKind::None || target.kind.is_fixed() || schedule.pretrain_iters == 0 {
        return Ok(PretrainReport { ce_curve: Vec::new(), agreement: 0.0, shares: Vec::new() });
    }
    if target.labels.len() != coords.rows() {
        return Err(Error::Config("pretraining target does not cover the coordinates".into()));
    }
    let x_all = model.encode_coords(coords)?;
    let n = coords.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed.wrapping_add(0x9e37_79b9));
    let mut adam = AdamState::new(schedule.optimizer, model.store.values());
    let frozen: Vec<bool> = (0..model.store.len()).map(|i| !model.is_pretrain_param(i)).collect();
    let mut curve = Vec::new();

    for iter in 0..schedule.pretrain_iters {
        let (bx, blabels) = sample_rows_with_labels(&x_all, &target.labels, schedule.batch_size, &mut rng);
        let mut g = Graph::new();
        let bind = model.store.bind_where(&mut g, |i| !frozen[i]);
        let xv = g.constant(bx);
        let latent = model.expert_latent_graph(&mut g, &bind, xv).map_err(|e| map_loss_err(e, iter))?;
        let (_, q) = model
            .manager_probs_graph(&mut g, &bind, xv, latent)
            .map_err(|e| map_loss_err(e, iter))?;
        let loss = segmentation_loss(&mut g, q, &blabels).map_err(|e| map_loss_err(e, iter))?;
        let loss_val = g.value(loss).item().as_f64();
        let mut grads = g.backward(loss)?;
        let collected: Vec<Option<Tensor<S>>> = bind
            .vars()
            .iter()
            .zip(model.store.values())
            .map(|(v, p)| Some(grads.take_or_zeros(*v, p.shape())))
            .collect();
        adam.step(model.store.values_mut(), &collected, |i| frozen[i])?;
        if iter % schedule.log_every.max(1) == 0 || iter + 1 == schedule.pretrain_iters {
            curve.push((iter, loss_val));
        }
    }

    // Final argmax agreement and balance over the whole coordinate set.
    let q = model.manager_probs(coords)?;
    let ne = model.n_experts();
    let mut agree = 0usize;
    let mut counts = vec![0usize; ne];
    for r in 0..n {
        let row = &q.data()[r * ne..(r + 1) * ne];
        let mut best = 0;
        for i in 1..ne {
            if row[i] > row[best] {
                best = i;
            }
        }
        counts[best] += 1;
        if best == target.labels[r] {
            agree += 1;
        }
    }
    Ok(PretrainReport {
        ce_curve: curve,
        agreement: agree as f64 / n as f64,
        shares: counts.iter().map(|&c| c as f64 / n as f64).collect(),
    })
}

fn sample_rows_with_labels<S: Scalar>(
    x: &Tensor<S>,
    labels: &[usize],
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> (Tensor<S>, Vec<usize>) {
    let (n, d) = (x.rows(), x.cols());
    if batch >= n {
        return (x.clone(), labels.to_vec());
    }
    let mut data = Vec::with_capacity(batch * d);
    let mut out_labels = Vec::with_capacity(batch);
    for _ in 0..batch {
        let r = rng.gen_range(0..n);
        data.extend_from_slice(&x.data()[r * d..(r + 1) * d]);
        out_labels.push(labels[r]);
    }
    (Tensor::new(vec![batch, d], data).unwrap(), out_labels)
}

/// Main training loop over a mixture model.
///
/// `next_batch` supplies coordinates/values (and labels when aux supervision
/// or fixed routing is on); `snapshot` may compute a full-signal metric at
/// the schedule's snapshot cadence.
pub fn train<S: Scalar>(
    model: &mut MoeModel<S>,
    schedule: &TrainSchedule,
    opts: &TrainOptions,
    mut next_batch: impl FnMut(usize, &mut ChaCha8Rng) -> Result<Batch>,
    mut snapshot: impl FnMut(&MoeModel<S>, usize) -> Option<f64>,
) -> Result<TrainReport> {
    schedule.validate()?;
    let boundary = schedule.phase_boundary();
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed.wrapping_add(0x51ed_270b));
    let mut adam = AdamState::new(schedule.optimizer, model.store.values());
    let expert_head: Vec<bool> =
        (0..model.store.len()).map(|i| model.is_expert_head_param(i)).collect();
    let manager_side: Vec<bool> = (0..model.store.len())
        .map(|i| {
            let name = model.store.name(i);
            name.starts_with("mgr") || name.starts_with("menc")
        })
        .collect();
    let mut report = TrainReport::default();

    for iter in 0..schedule.total_iters {
        let phase = if iter < boundary { Phase::All } else { Phase::ExpertsOnly };
        let batch = next_batch(iter, &mut rng)?;
        let ne = model.n_experts();

        let mut g = Graph::new();
        let bind = model.store.bind_where(&mut g, |i| match phase {
            Phase::All => !(opts.fixed_manager && manager_side[i]),
            Phase::ExpertsOnly => expert_head[i],
            Phase::Pretrain => unreachable!(),
        });
        let x = g.constant(model.encode_coords(&batch.coords)?);
        let y = g.constant(batch.values.cast::<S>());

        let forward = (|| -> Result<(Var, Vec<f64>)> {
            let latent = model.expert_latent_graph(&mut g, &bind, x)?;
            let mut expert_outputs = Vec::with_capacity(ne);
            for e in 0..ne {
                expert_outputs.push(model.expert_forward_graph(&mut g, &bind, e, latent)?);
            }
            let q = if opts.fixed_manager {
                let labels = batch.labels.as_ref().ok_or_else(|| {
                    Error::Config("fixed manager routing needs batch labels".into())
                })?;
                let mut onehot = vec![S::zero(); labels.len() * ne];
                for (r, &l) in labels.iter().enumerate() {
                    onehot[r * ne + l] = S::one();
                }
                g.constant(Tensor::new(vec![labels.len(), ne], onehot)?)
            } else {
                let (_, q) = model.manager_probs_graph(&mut g, &bind, x, latent)?;
                q
            };
            let mut loss = weighted_recon_loss(&mut g, q, &expert_outputs, y, opts.loss)?;
            if opts.aux_segmentation && phase == Phase::All && !opts.fixed_manager {
                if let Some(labels) = &batch.labels {
                    let seg = segmentation_loss(&mut g, q, labels)?;
                    loss = g.add(loss, seg)?;
                }
            }
            // Batch routing shares from the soft weights' argmax.
            let qt = g.value(q);
            let mut counts = vec![0usize; ne];
            for r in 0..qt.rows() {
                let row = &qt.data()[r * ne..(r + 1) * ne];
                let mut best = 0;
                for i in 1..ne {
                    if row[i] > row[best] {
                        best = i;
                    }
                }
                counts[best] += 1;
            }
            let shares = counts.iter().map(|&c| c as f64 / qt.rows() as f64).collect();
            Ok((loss, shares))
        })();
        let (loss, shares) = forward.map_err(|e| map_loss_err(e, iter))?;

        let loss_val = g.value(loss).item().as_f64();
        if !loss_val.is_finite() {
            return Err(Error::NonFiniteLoss { iter, loss: loss_val });
        }
        let lr = adam.current_lr();
        let mut grads = g.backward(loss)?;
        let collected: Vec<Option<Tensor<S>>> = bind
            .vars()
            .iter()
            .zip(model.store.values())
            .map(|(v, p)| Some(grads.take_or_zeros(*v, p.shape())))
            .collect();
        drop(g);
        adam.step(model.store.values_mut(), &collected, |i| match phase {
            Phase::All => opts.fixed_manager && manager_side[i],
            Phase::ExpertsOnly => !expert_head[i],
            Phase::Pretrain => unreachable!(),
        })?;

        let want_log = iter % schedule.log_every.max(1) == 0 || iter + 1 == schedule.total_iters;
        let want_snap = (schedule.snapshot_every > 0 && iter % schedule.snapshot_every == 0)
            || iter + 1 == schedule.total_iters;
        if want_log || want_snap {
            let metric = if want_snap { snapshot(model, iter) } else { None };
            report.rows.push(LogRow { iter, phase, loss: loss_val, metric, lr, expert_shares: shares });
        }
        report.final_loss = loss_val;
    }
    Ok(report)
}

/// Training loop for single-network baselines; the phase schedule has no
/// effect beyond the iteration count.
pub fn train_single<S: Scalar>(
    model: &mut SingleModel<S>,
    schedule: &TrainSchedule,
    loss_kind: ReconLossKind,
    mut next_batch: impl FnMut(usize, &mut ChaCha8Rng) -> Result<Batch>,
    mut snapshot: impl FnMut(&SingleModel<S>, usize) -> Option<f64>,
) -> Result<TrainReport> {
    schedule.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed.wrapping_add(0x51ed_270b));
    let mut adam = AdamState::new(schedule.optimizer, model.store.values());
    let mut report = TrainReport::default();

    for iter in 0..schedule.total_iters {
        let batch = next_batch(iter, &mut rng)?;
        let mut g = Graph::new();
        let bind = model.bind(&mut g);
        let x = g.constant(model.encode_coords(&batch.coords)?);
        let y = g.constant(batch.values.cast::<S>());
        let out = model.forward_train(&mut g, &bind, x).map_err(|e| map_loss_err(e, iter))?;
        let loss = single_recon_loss(&mut g, out, y, loss_kind).map_err(|e| map_loss_err(e, iter))?;
        let loss_val = g.value(loss).item().as_f64();
        if !loss_val.is_finite() {
            return Err(Error::NonFiniteLoss { iter, loss: loss_val });
        }
        let lr = adam.current_lr();
        let mut grads = g.backward(loss)?;
        let collected: Vec<Option<Tensor<S>>> = bind
            .vars()
            .iter()
            .zip(model.store.values())
            .map(|(v, p)| Some(grads.take_or_zeros(*v, p.shape())))
            .collect();
        drop(g);
        adam.step(model.store.values_mut(), &collected, |_| false)?;

        let want_log = iter % schedule.log_every.max(1) == 0 || iter + 1 == schedule.total_iters;
        let want_snap = (schedule.snapshot_every > 0 && iter % schedule.snapshot_every == 0)
            || iter + 1 == schedule.total_iters;
        if want_log || want_snap {
            let metric = if want_snap { snapshot(model, iter) } else { None };
            report.rows.push(LogRow {
                iter,
                phase: Phase::All,
                loss: loss_val,
                metric,
                lr,
                expert_shares: Vec::new(),
            });
        }
        report.final_loss = loss_val;
    }
    Ok(report)
}

/// Sample a batch of rows (with replacement) from resident coordinate/value
/// tensors; `batch >= n` returns the full set in order.
pub fn subset_batch(
    coords: &Tensor<f64>,
    values: &Tensor<f64>,
    labels: Option<&[usize]>,
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> Batch {
    let (n, d) = (coords.rows(), coords.cols());
    let vd = values.cols();
    if batch >= n {
        return Batch {
            coords: coords.clone(),
            values: values.clone(),
            labels: labels.map(|l| l.to_vec()),
        };
    }
    let mut c = Vec::with_capacity(batch * d);
    let mut v = Vec::with_capacity(batch * vd);
    let mut l = labels.map(|_| Vec::with_capacity(batch));
    for _ in 0..batch {
        let r = rng.gen_range(0..n);
        c.extend_from_slice(&coords.data()[r * d..(r + 1) * d]);
        v.extend_from_slice(&values.data()[r * vd..(r + 1) * vd]);
        if let (Some(out), Some(src)) = (&mut l, labels) {
            out.push(src[r]);
        }
    }
    Batch {
        coords: Tensor::new(vec![batch, d], c).unwrap(),
        values: Tensor::new(vec![batch, vd], v).unwrap(),
        labels: l,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;
    use crate::moe::{Conditioning, MoeConfig};
    use crate::nets::ActivationFamily;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn rand_tensor(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn rand_probs(r: &mut ChaCha8Rng, batch: usize, n: usize) -> Tensor<f64> {
        let mut data = vec![0.0f64; batch * n];
        for row in data.chunks_mut(n) {
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = r.gen_range(0.01..1.0);
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        Tensor::new(vec![batch, n], data).unwrap()
    }

    fn tiny_model(seed: u64) -> MoeModel<f64> {
        MoeModel::new(MoeConfig::uniform(3, 2, 2, 8, 1, ActivationFamily::sine()), seed).unwrap()
    }

    // --- loss oracles ----------------------------------------------------

    /// Scalar brute-force version of the mixture reconstruction loss.
    fn brute_moe_loss(q: &Tensor<f64>, outs: &[Tensor<f64>], y: &Tensor<f64>, l1: bool) -> f64 {
        let (batch, n) = (q.rows(), q.cols());
        let ch = y.cols();
        let mut total = 0.0;
        for r in 0..batch {
            let mut per_sample = 0.0;
            for e in 0..n {
                let mut err = 0.0;
                for c in 0..ch {
                    let d = outs[e].get2(r, c) - y.get2(r, c);
                    err += if l1 { d.abs() } else { d * d };
                }
                per_sample += q.get2(r, e) * (err / ch as f64);
            }
            total += per_sample / n as f64;
        }
        total / batch as f64
    }

    fn brute_seg_loss(q: &Tensor<f64>, labels: &[usize]) -> f64 {
        let mut total = 0.0;
        for (r, &l) in labels.iter().enumerate() {
            total += -(q.get2(r, l).max(1e-12)).ln();
        }
        total / labels.len() as f64
    }

    #[test]
    fn segmentation_loss_uniform_is_log_n() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::full(&[6, 4], 0.25f64));
        let labels = vec![0, 1, 2, 3, 0, 2];
        let loss = segmentation_loss(&mut g, q, &labels).unwrap();
        assert!((g.value(loss).item() - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn segmentation_loss_one_hot_match_is_zero() {
        let labels = vec![1usize, 0, 2];
        let mut data = vec![0.0f64; 9];
        for (r, &l) in labels.iter().enumerate() {
            data[r * 3 + l] = 1.0;
        }
        let mut g = Graph::new();
        let q = g.constant(Tensor::new(vec![3, 3], data).unwrap());
        let loss = segmentation_loss(&mut g, q, &labels).unwrap();
        assert!(g.value(loss).item().abs() < 1e-12);
    }

    #[test]
    fn segmentation_loss_matches_brute_force() {
        for seed in 0..5u64 {
            let mut r = rng(seed);
            let q = rand_probs(&mut r, 17, 5);
            let labels: Vec<usize> = (0..17).map(|_| r.gen_range(0..5)).collect();
            let mut g = Graph::new();
            let qv = g.constant(q.clone());
            let loss = segmentation_loss(&mut g, qv, &labels).unwrap();
            assert!((g.value(loss).item() - brute_seg_loss(&q, &labels)).abs() < 1e-12);
        }
    }

    #[test]
    fn segmentation_loss_rejects_out_of_range_labels() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::full(&[2, 3], 1.0f64 / 3.0));
        assert!(segmentation_loss(&mut g, q, &[0, 5]).is_err());
    }

    #[test]
    fn moe_recon_loss_hand_example() {
        // Two experts, q = [1, 0], expert0 outputs 0, gt 1: loss = 1/2.
        let mut g = Graph::new();
        let q = g.constant(Tensor::new(vec![1, 2], vec![1.0f64, 0.0]).unwrap());
        let e0 = g.constant(Tensor::new(vec![1, 1], vec![0.0f64]).unwrap());
        let e1 = g.constant(Tensor::new(vec![1, 1], vec![123.0f64]).unwrap());
        let y = g.constant(Tensor::new(vec![1, 1], vec![1.0f64]).unwrap());
        let loss = moe_recon_loss(&mut g, q, &[e0, e1], y).unwrap();
        assert!((g.value(loss).item() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn moe_recon_loss_zero_when_all_experts_match() {
        let mut r = rng(2);
        let y = rand_tensor(&mut r, &[7, 3]);
        let q = rand_probs(&mut r, 7, 4);
        let mut g = Graph::new();
        let yv = g.constant(y.clone());
        let outs: Vec<Var> = (0..4).map(|_| g.constant(y.clone())).collect();
        let qv = g.constant(q);
        let loss = moe_recon_loss(&mut g, qv, &outs, yv).unwrap();
        assert_eq!(g.value(loss).item(), 0.0);
    }

    #[test]
    fn moe_recon_loss_matches_brute_force() {
        for seed in 0..5u64 {
            let mut r = rng(seed + 100);
            let (batch, n, ch) = (11, 4, 3);
            let q = rand_probs(&mut r, batch, n);
            let outs: Vec<Tensor<f64>> = (0..n).map(|_| rand_tensor(&mut r, &[batch, ch])).collect();
            let y = rand_tensor(&mut r, &[batch, ch]);
            let mut g = Graph::new();
            let qv = g.constant(q.clone());
            let ov: Vec<Var> = outs.iter().map(|t| g.constant(t.clone())).collect();
            let yv = g.constant(y.clone());
            let loss = moe_recon_loss(&mut g, qv, &ov, yv).unwrap();
            let expect = brute_moe_loss(&q, &outs, &y, false);
            assert!((g.value(loss).item() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn sdf_recon_loss_hand_example_and_brute_force() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::new(vec![1, 1], vec![1.0f64]).unwrap());
        let e0 = g.constant(Tensor::new(vec![1, 1], vec![0.3f64]).unwrap());
        let y = g.constant(Tensor::new(vec![1, 1], vec![0.1f64]).unwrap());
        let loss = sdf_recon_loss(&mut g, q, &[e0], y).unwrap();
        assert!((g.value(loss).item() - 0.2).abs() < 1e-15);

        for seed in 0..5u64 {
            let mut r = rng(seed + 200);
            let (batch, n) = (9, 3);
            let q = rand_probs(&mut r, batch, n);
            let outs: Vec<Tensor<f64>> = (0..n).map(|_| rand_tensor(&mut r, &[batch, 1])).collect();
            let y = rand_tensor(&mut r, &[batch, 1]);
            let mut g = Graph::new();
            let qv = g.constant(q.clone());
            let ov: Vec<Var> = outs.iter().map(|t| g.constant(t.clone())).collect();
            let yv = g.constant(y.clone());
            let loss = sdf_recon_loss(&mut g, qv, &ov, yv).unwrap();
            let expect = brute_moe_loss(&q, &outs, &y, true);
            assert!((g.value(loss).item() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn single_expert_moe_loss_is_plain_mse() {
        let mut r = rng(4);
        let out = rand_tensor(&mut r, &[13, 3]);
        let y = rand_tensor(&mut r, &[13, 3]);
        let mut g = Graph::new();
        let q = g.constant(Tensor::full(&[13, 1], 1.0f64));
        let ov = g.constant(out.clone());
        let yv = g.constant(y.clone());
        let loss = moe_recon_loss(&mut g, q, &[ov], yv).unwrap();
        let mse: f64 = out
            .data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / out.len() as f64;
        assert!((g.value(loss).item() - mse).abs() < 1e-12);
    }

    #[test]
    fn full_losses_match_finite_differences_through_the_model() {
        let model = tiny_model(5);
        let coords = rand_tensor(&mut rng(6), &[5, 2]);
        let y = rand_tensor(&mut rng(7), &[5, 2]);
        let params: Vec<Tensor<f64>> = model.store.values().to_vec();
        let labels = vec![0usize, 1, 2, 0, 1];

        for kind in [ReconLossKind::SquaredError, ReconLossKind::AbsoluteError] {
            let model_ref = &model;
            let coords_ref = &coords;
            let y_ref = &y;
            let err = finite_diff_check(
                move |g, vars| {
                    let bind = crate::nets::Binding::from_vars(vars.to_vec());
                    let x = g.constant(model_ref.encode_coords(coords_ref)?);
                    let yv = g.constant(y_ref.cast());
                    let latent = model_ref.expert_latent_graph(g, &bind, x)?;
                    let mut outs = Vec::new();
                    for e in 0..model_ref.n_experts() {
                        outs.push(model_ref.expert_forward_graph(g, &bind, e, latent)?);
                    }
                    let (_, q) = model_ref.manager_probs_graph(g, &bind, x, latent)?;
                    weighted_recon_loss(g, q, &outs, yv, kind)
                },
                &params,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "{:?} fd error {}", kind, err);
        }

        let model_ref = &model;
        let coords_ref = &coords;
        let err = finite_diff_check(
            move |g, vars| {
                let bind = crate::nets::Binding::from_vars(vars.to_vec());
                let x = g.constant(model_ref.encode_coords(coords_ref)?);
                let latent = model_ref.expert_latent_graph(g, &bind, x)?;
                let (_, q) = model_ref.manager_probs_graph(g, &bind, x, latent)?;
                segmentation_loss(g, q, &labels)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "segmentation fd error {}", err);
    }

    #[test]
    fn recon_gradient_reaches_manager_only_when_experts_disagree() {
        let model = tiny_model(8);
        let coords = rand_tensor(&mut rng(9), &[6, 2]);
        let y = rand_tensor(&mut rng(10), &[6, 2]);

        let manager_grad_norm = |identical: bool| -> f64 {
            let mut m = MoeModel::<f64>::new(model.config().clone(), 8).unwrap();
            if identical {
                // Make every expert identical so their outputs agree exactly.
                let src: Vec<(String, Tensor<f64>)> = (0..m.store.len())
                    .filter(|&i| m.store.name(i).starts_with("exp0."))
                    .map(|i| (m.store.name(i).to_string(), m.store.values()[i].clone()))
                    .collect();
                for e in 1..m.n_experts() {
                    for (name, val) in &src {
                        let target = name.replace("exp0.", &format!("exp{}.", e));
                        for i in 0..m.store.len() {
                            if m.store.name(i) == target {
                                *m.store.get_mut(crate::nets::ParamId(i)) = val.clone();
                            }
                        }
                    }
                }
            }
            let mut g = Graph::new();
            let bind = m.bind(&mut g);
            let x = g.constant(m.encode_coords(&coords).unwrap());
            let yv = g.constant(y.clone());
            let latent = m.expert_latent_graph(&mut g, &bind, x).unwrap();
            let mut outs = Vec::new();
            for e in 0..m.n_experts() {
                outs.push(m.expert_forward_graph(&mut g, &bind, e, latent).unwrap());
            }
            let (_, q) = m.manager_probs_graph(&mut g, &bind, x, latent).unwrap();
            let loss = moe_recon_loss(&mut g, q, &outs, yv).unwrap();
            let mut grads = g.backward(loss).unwrap();
            let mut norm = 0.0;
            for i in 0..m.store.len() {
                if m.store.name(i).starts_with("mgr") {
                    let gt = grads.take_or_zeros(bind.vars()[i], m.store.values()[i].shape());
                    norm += gt.data().iter().map(|v| v * v).sum::<f64>();
                }
            }
            norm.sqrt()
        };

        assert!(manager_grad_norm(false) > 1e-8);
        assert!(manager_grad_norm(true) < 1e-14);
    }

    #[test]
    fn encoder_receives_gradient_through_manager_path_alone() {
        // Detach the expert path: experts run on a constant copy of the
        // latent, so any encoder gradient must arrive via the manager.
        let model = tiny_model(12);
        assert_eq!(model.config().conditioning, Conditioning::Concatenate);
        let coords = rand_tensor(&mut rng(13), &[6, 2]);
        let y = rand_tensor(&mut rng(14), &[6, 2]);
        let mut g = Graph::new();
        let bind = model.bind(&mut g);
        let x = g.constant(model.encode_coords(&coords).unwrap());
        let yv = g.constant(y);
        let latent = model.expert_latent_graph(&mut g, &bind, x).unwrap();
        let latent_const = g.constant(g.value(latent).clone());
        let mut outs = Vec::new();
        for e in 0..model.n_experts() {
            outs.push(model.expert_forward_graph(&mut g, &bind, e, latent_const).unwrap());
        }
        let (_, q) = model.manager_probs_graph(&mut g, &bind, x, latent).unwrap();
        let loss = moe_recon_loss(&mut g, q, &outs, yv).unwrap();
        let mut grads = g.backward(loss).unwrap();
        let mut norm = 0.0;
        for i in 0..model.store.len() {
            if model.store.name(i).starts_with("eenc") {
                let gt = grads.take_or_zeros(bind.vars()[i], model.store.values()[i].shape());
                norm += gt.data().iter().map(|v| v * v).sum::<f64>();
            }
        }
        assert!(norm.sqrt() > 1e-10, "encoder grad through manager path is zero");
    }

    // --- pretraining targets ---------------------------------------------

    fn grid_coords(n_side: usize) -> Tensor<f64> {
        let mut data = Vec::with_capacity(n_side * n_side * 2);
        for i in 0..n_side {
            for j in 0..n_side {
                data.push(-1.0 + 2.0 * j as f64 / (n_side - 1) as f64);
                data.push(-1.0 + 2.0 * i as f64 / (n_side - 1) as f64);
            }
        }
        Tensor::new(vec![n_side * n_side, 2], data).unwrap()
    }

    #[test]
    fn random_target_is_balanced() {
        let coords = Tensor::new(vec![1_000_000, 1], vec![0.0; 1_000_000]).unwrap();
        let t = make_pretrain_target(PretrainKind::Random, &coords, None, 4, 7).unwrap();
        for share in t.shares() {
            assert!((share - 0.25).abs() < 0.01, "share {}", share);
        }
    }

    #[test]
    fn grid_target_makes_quadrants() {
        let coords = grid_coords(16);
        let t = make_pretrain_target(PretrainKind::Grid, &coords, None, 4, 0).unwrap();
        // Quadrant pattern: label fully determined by the sign pair.
        for r in 0..coords.rows() {
            let (x, y) = (coords.get2(r, 0), coords.get2(r, 1));
            let expect = (if x < 0.0 { 0 } else { 2 }) + (if y < 0.0 { 0 } else { 1 });
            assert_eq!(t.labels[r], expect, "at ({}, {})", x, y);
        }
        let shares = t.shares();
        for s in shares {
            assert_eq!(s, 0.25);
        }
    }

    #[test]
    fn targets_are_deterministic_per_seed() {
        let coords = grid_coords(8);
        let a = make_pretrain_target(PretrainKind::Random, &coords, None, 4, 3).unwrap();
        let b = make_pretrain_target(PretrainKind::Random, &coords, None, 4, 3).unwrap();
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn kmeans_requires_values_and_separates_blobs() {
        let coords = grid_coords(8);
        assert!(make_pretrain_target(PretrainKind::Kmeans, &coords, None, 2, 0).is_err());
        // Two value blobs on an otherwise uniform grid.
        let n = coords.rows();
        let values = Tensor::new(
            vec![n, 1],
            (0..n).map(|i| if i < n / 2 { 0.0 } else { 10.0 }).collect(),
        )
        .unwrap();
        let t = make_pretrain_target(PretrainKind::Kmeans, &coords, Some(&values), 2, 0).unwrap();
        // All of the first half must share one label, the second half the other.
        let first = t.labels[0];
        assert!(t.labels[..n / 2].iter().all(|&l| l == first));
        assert!(t.labels[n / 2..].iter().all(|&l| l != first));
    }

    #[test]
    fn random_3d_target_is_cellwise() {
        let mut data = Vec::new();
        // Two points inside the same 64^3 cell, one far away.
        data.extend_from_slice(&[0.001, 0.001, 0.001]);
        data.extend_from_slice(&[0.002, 0.002, 0.002]);
        data.extend_from_slice(&[-1.0, -1.0, -1.0]);
        let coords = Tensor::new(vec![3, 3], data).unwrap();
        let t = make_pretrain_target(PretrainKind::Random, &coords, None, 8, 1).unwrap();
        assert_eq!(t.labels[0], t.labels[1]);
        // Cell lookup agrees with the per-index labels.
        assert_eq!(t.label_of(2, &[-1.0, -1.0, -1.0]), t.labels[2]);
    }

    // --- training loops ----------------------------------------------------

    fn toy_signal(n_side: usize) -> (Tensor<f64>, Tensor<f64>) {
        let coords = grid_coords(n_side);
        let n = coords.rows();
        let values = Tensor::new(
            vec![n, 2],
            (0..n)
                .flat_map(|r| {
                    let (x, y) = (coords.get2(r, 0), coords.get2(r, 1));
                    [(3.0 * x).sin() * 0.5, (2.0 * y).cos() * 0.5]
                })
                .collect(),
        )
        .unwrap();
        (coords, values)
    }

    fn quick_schedule(total: usize, pretrain: usize, lr: f64) -> TrainSchedule {
        TrainSchedule {
            pretrain_iters: pretrain,
            total_iters: total,
            batch_size: 64,
            optimizer: AdamConfig::with_lr(lr, 1.0),
            seed: 3,
            log_every: 10,
            snapshot_every: 0,
            ..TrainSchedule::default()
        }
    }

    #[test]
    fn pretrain_constant_label_converges() {
        let mut model = tiny_model(21);
        let (coords, _) = toy_signal(12);
        let labels = vec![0usize; coords.rows()];
        let target = PretrainTarget {
            kind: PretrainKind::Random,
            labels,
            n_experts: 3,
            cell_map: None,
        };
        let schedule = quick_schedule(0, 300, 2e-3);
        let report = pretrain_manager(&mut model, &coords, &target, &schedule).unwrap();
        assert!(report.agreement >= 0.99, "agreement {}", report.agreement);
        let first = report.ce_curve.first().unwrap().1;
        let last = report.ce_curve.last().unwrap().1;
        assert!(last < first);
        assert!(last.is_finite());
    }

    #[test]
    fn pretraining_leaves_expert_heads_untouched() {
        let mut model = tiny_model(22);
        let (coords, _) = toy_signal(8);
        let target =
            make_pretrain_target(PretrainKind::Random, &coords, None, 3, 5).unwrap();
        let before = model.store.bits_where(|n| n.starts_with("exp"));
        let schedule = quick_schedule(0, 50, 1e-3);
        pretrain_manager(&mut model, &coords, &target, &schedule).unwrap();
        let after = model.store.bits_where(|n| n.starts_with("exp"));
        assert_eq!(before, after);
        // And the manager side did move.
        assert_ne!(
            model.store.bits_where(|n| n.starts_with("mgr")),
            MoeModel::<f64>::new(model.config().clone(), 22).unwrap().store.bits_where(|n| n.starts_with("mgr"))
        );
    }

    #[test]
    fn phase_b_freezes_manager_and_encoders_bitwise() {
        let mut model = tiny_model(23);
        let (coords, values) = toy_signal(12);
        let schedule = TrainSchedule {
            pretrain_iters: 0,
            total_iters: 40,
            t_all: 0.5,
            t_e: 0.5,
            batch_size: 32,
            optimizer: AdamConfig::with_lr(1e-3, 1.0),
            seed: 9,
            log_every: 1000,
            snapshot_every: 0,
        };
        let boundary = schedule.phase_boundary();
        assert_eq!(boundary, 20);

        // Split the run at the boundary to capture the frozen-block bits.
        let frozen_pred = |n: &str| n.starts_with("mgr") || n.starts_with("menc") || n.starts_with("eenc");
        let mut schedule_a = schedule.clone();
        schedule_a.total_iters = boundary;
        schedule_a.t_all = 1.0;
        schedule_a.t_e = 0.0;
        let c3 = coords.clone();
        let v3 = values.clone();
        train(&mut model, &schedule_a, &TrainOptions::default(), |_, rng| {
            Ok(subset_batch(&c3, &v3, None, 32, rng))
        }, |_, _| None)
        .unwrap();
        let bits_at_boundary = model.store.bits_where(frozen_pred);
        let expert_bits_at_boundary = model.store.bits_where(|n| n.starts_with("exp0"));
        let mut schedule_b = schedule.clone();
        schedule_b.total_iters = boundary;
        schedule_b.t_all = 0.0;
        schedule_b.t_e = 1.0;
        train(&mut model, &schedule_b, &TrainOptions::default(), |_, rng| {
            Ok(subset_batch(&coords, &values, None, 32, rng))
        }, |_, _| None)
        .unwrap();
        assert_eq!(model.store.bits_where(frozen_pred), bits_at_boundary);
        // Expert heads did continue to move during phase B.
        assert_ne!(model.store.bits_where(|n| n.starts_with("exp0")), expert_bits_at_boundary);
    }

    #[test]
    fn zero_learning_rate_leaves_model_unchanged() {
        let mut model = tiny_model(24);
        let before = model.store.bits_where(|_| true);
        let (coords, values) = toy_signal(8);
        let schedule = TrainSchedule {
            pretrain_iters: 0,
            total_iters: 1,
            optimizer: AdamConfig::with_lr(0.0, 1.0),
            batch_size: 16,
            seed: 1,
            ..TrainSchedule::default()
        };
        train(&mut model, &schedule, &TrainOptions::default(), |_, rng| {
            Ok(subset_batch(&coords, &values, None, 16, rng))
        }, |_, _| None)
        .unwrap();
        assert_eq!(model.store.bits_where(|_| true), before);
    }

    #[test]
    fn training_reduces_loss_on_a_toy_signal() {
        let mut model = tiny_model(25);
        let (coords, values) = toy_signal(16);
        let schedule = TrainSchedule {
            pretrain_iters: 0,
            total_iters: 400,
            batch_size: 256,
            optimizer: AdamConfig::with_lr(2e-3, 1.0),
            seed: 11,
            log_every: 1,
            snapshot_every: 0,
            ..TrainSchedule::default()
        };
        let report = train(&mut model, &schedule, &TrainOptions::default(), |_, rng| {
            Ok(subset_batch(&coords, &values, None, 256, rng))
        }, |_, _| None)
        .unwrap();
        let early = report.rows[10].loss;
        let late = report.final_loss;
        assert!(late < early, "late {} vs early {}", late, early);
    }

    #[test]
    fn identical_seeds_give_identical_runs() {
        let run = || {
            let mut model = tiny_model(26);
            let (coords, values) = toy_signal(10);
            let schedule = quick_schedule(60, 0, 1e-3);
            train(&mut model, &schedule, &TrainOptions::default(), move |_, rng| {
                Ok(subset_batch(&coords, &values, None, 64, rng))
            }, |_, _| None)
            .unwrap()
            .final_loss
        };
        let (a, b) = (run(), run());
        assert!((a - b).abs() < 1e-10, "{} vs {}", a, b);
        assert_eq!(a, b);
    }

    #[test]
    fn fixed_manager_never_updates_manager_side() {
        let mut model = tiny_model(27);
        let (coords, values) = toy_signal(10);
        let target = make_pretrain_target(PretrainKind::FixedRandom, &coords, None, 3, 2).unwrap();
        let mgr_before = model.store.bits_where(|n| n.starts_with("mgr") || n.starts_with("menc"));
        let schedule = quick_schedule(30, 0, 1e-3);
        let labels = target.labels.clone();
        let opts = TrainOptions { fixed_manager: true, ..TrainOptions::default() };
        train(&mut model, &schedule, &opts, move |_, rng| {
            Ok(subset_batch(&coords, &values, Some(&labels), 64, rng))
        }, |_, _| None)
        .unwrap();
        assert_eq!(model.store.bits_where(|n| n.starts_with("mgr") || n.starts_with("menc")), mgr_before);
    }

    #[test]
    fn schedule_validation_catches_bad_fractions() {
        let mut s = TrainSchedule::default();
        s.t_all = 0.7;
        s.t_e = 0.2;
        assert!(s.validate().is_err());
    }
}
