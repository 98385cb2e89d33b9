//! Mixture-of-experts INR: a shared expert encoder feeding N expert heads,
//! plus a manager (encoder + head) that scores experts per input sample.
//!
//! Training evaluates every expert and weights their losses by the manager's
//! probabilities; inference routes each sample to the argmax expert only.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{kernels, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::nets::{
    component_layers, ActivationFamily, Binding, ComponentSpec, FourierFeatureMap, Mlp,
    ParamStore,
};
use crate::scalar::Scalar;

/// How the expert encoder's features reach the manager.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// Manager sees only its own encoder.
    None,
    /// Column-wise max over the batch of expert features, added to the
    /// manager features (widths must match).
    Max,
    /// Column-wise mean over the batch, added likewise.
    Mean,
    /// Per-sample concatenation of manager and expert features.
    Concatenate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoeConfig {
    pub n_experts: usize,
    /// Coordinate dimension (2 = image, 1 = audio, 3 = SDF).
    pub in_dim: usize,
    /// Signal channels (3 = RGB, 1 = amplitude or distance).
    pub out_dim: usize,
    /// `None` = pass-through: experts see the (encoded) coordinates directly.
    pub expert_encoder: Option<ComponentSpec>,
    pub expert: ComponentSpec,
    pub manager_encoder: Option<ComponentSpec>,
    pub manager: ComponentSpec,
    pub activation: ActivationFamily,
    pub conditioning: Conditioning,
}

impl MoeConfig {
    /// The image-reconstruction default: 4 experts, every component 128x2.
    pub fn image_default() -> Self {
        Self::uniform(4, 2, 3, 128, 2, ActivationFamily::sine())
    }

    /// Smaller variant with the same shape at width 66 (~98.7k parameters).
    pub fn image_small() -> Self {
        Self::uniform(4, 2, 3, 66, 2, ActivationFamily::sine())
    }

    pub fn audio_default() -> Self {
        Self::uniform(4, 1, 1, 128, 2, ActivationFamily::sine())
    }

    pub fn audio_small() -> Self {
        Self::uniform(4, 1, 1, 66, 2, ActivationFamily::sine())
    }

    /// SDF config: 8 experts, wide encoder, narrow experts.
    pub fn sdf_small() -> Self {
        Self {
            n_experts: 8,
            in_dim: 3,
            out_dim: 1,
            expert_encoder: Some(ComponentSpec::new(256, 2)),
            expert: ComponentSpec::new(32, 2),
            manager_encoder: Some(ComponentSpec::new(64, 2)),
            manager: ComponentSpec::new(64, 2),
            activation: ActivationFamily::sine(),
            conditioning: Conditioning::Concatenate,
        }
    }

    pub fn sdf_large() -> Self {
        Self {
            n_experts: 8,
            in_dim: 3,
            out_dim: 1,
            expert_encoder: Some(ComponentSpec::new(512, 2)),
            expert: ComponentSpec::new(64, 2),
            manager_encoder: Some(ComponentSpec::new(128, 2)),
            manager: ComponentSpec::new(128, 2),
            activation: ActivationFamily::sine(),
            conditioning: Conditioning::Concatenate,
        }
    }

    /// All four components at the same `width x layers`.
    pub fn uniform(
        n_experts: usize,
        in_dim: usize,
        out_dim: usize,
        width: usize,
        hidden_layers: usize,
        activation: ActivationFamily,
    ) -> Self {
        let c = ComponentSpec::new(width, hidden_layers);
        Self {
            n_experts,
            in_dim,
            out_dim,
            expert_encoder: Some(c),
            expert: c,
            manager_encoder: Some(c),
            manager: c,
            activation,
            conditioning: Conditioning::Concatenate,
        }
    }

    /// The vanilla formulation: no encoders, no conditioning; experts and
    /// manager are independent MLPs on the coordinates.
    pub fn vanilla(
        n_experts: usize,
        in_dim: usize,
        out_dim: usize,
        expert: ComponentSpec,
        manager: ComponentSpec,
        activation: ActivationFamily,
    ) -> Self {
        Self {
            n_experts,
            in_dim,
            out_dim,
            expert_encoder: None,
            expert,
            manager_encoder: None,
            manager,
            activation,
            conditioning: Conditioning::None,
        }
    }

    /// Width of the encoding fed to both encoders (Fourier features expand it).
    pub fn net_in_dim(&self) -> usize {
        self.activation.input_width(self.in_dim)
    }

    /// Expert-encoder output width (the expert latent).
    pub fn expert_latent_dim(&self) -> usize {
        match &self.expert_encoder {
            Some(c) => c.width,
            None => self.net_in_dim(),
        }
    }

    pub fn manager_latent_dim(&self) -> usize {
        match &self.manager_encoder {
            Some(c) => c.width,
            None => self.net_in_dim(),
        }
    }

    /// Input width of the manager head under the configured conditioning.
    pub fn manager_head_in_dim(&self) -> usize {
        match self.conditioning {
            Conditioning::None | Conditioning::Max | Conditioning::Mean => {
                self.manager_latent_dim()
            }
            Conditioning::Concatenate => self.manager_latent_dim() + self.expert_latent_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_experts == 0 {
            return Err(Error::Config("n_experts must be at least 1".into()));
        }
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::Config("in_dim and out_dim must be positive".into()));
        }
        if matches!(self.conditioning, Conditioning::Max | Conditioning::Mean)
            && self.expert_latent_dim() != self.manager_latent_dim()
        {
            return Err(Error::Config(format!(
                "max/mean conditioning needs matching encoder widths, got expert {} vs manager {}",
                self.expert_latent_dim(),
                self.manager_latent_dim()
            )));
        }
        Ok(())
    }

    fn comp_count(in_dim: usize, c: &ComponentSpec, out_dim: usize) -> usize {
        (in_dim + 1) * c.width + c.hidden_layers * (c.width + 1) * c.width + (c.width + 1) * out_dim
    }

    /// Exact trainable-parameter count for this configuration.
    pub fn count_parameters(&self) -> usize {
        let net_in = self.net_in_dim();
        let mut total = 0;
        if let Some(c) = &self.expert_encoder {
            total += Self::comp_count(net_in, c, c.width);
        }
        total += self.n_experts * Self::comp_count(self.expert_latent_dim(), &self.expert, self.out_dim);
        if let Some(c) = &self.manager_encoder {
            total += Self::comp_count(net_in, c, c.width);
        }
        total += Self::comp_count(self.manager_head_in_dim(), &self.manager, self.n_experts);
        total
    }
}

/// Training-time forward pass handles.
pub struct MoeForward {
    /// Expert-encoder output, `batch x latent`.
    pub latent: Var,
    /// Manager probabilities, `batch x n_experts` (softmax rows).
    pub q: Var,
    /// Manager logits before the softmax.
    pub logits: Var,
    /// Per-expert reconstructions, each `batch x out`.
    pub expert_outputs: Vec<Var>,
}

pub struct MoeModel<S: Scalar> {
    config: MoeConfig,
    pub store: ParamStore<S>,
    expert_encoder: Option<Mlp>,
    experts: Vec<Mlp>,
    manager_encoder: Option<Mlp>,
    manager: Mlp,
    fourier: Option<FourierFeatureMap>,
    seed: u64,
}

impl<S: Scalar> MoeModel<S> {
    pub fn new(config: MoeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let family = &config.activation;
        let net_in = config.net_in_dim();
        let finer_k = family.finer_bias_k();

        let expert_encoder = match &config.expert_encoder {
            Some(c) => Some(Mlp::build(
                &mut store,
                "eenc",
                &component_layers(net_in, *c, c.width, family, true, false),
                &mut rng,
                finer_k,
            )?),
            None => None,
        };
        let latent_dim = config.expert_latent_dim();
        let mut experts = Vec::with_capacity(config.n_experts);
        for i in 0..config.n_experts {
            // With no encoder the experts see raw coordinates, so their first
            // layer needs the first-layer init.
            let net_first = expert_encoder.is_none();
            experts.push(Mlp::build(
                &mut store,
                &format!("exp{}", i),
                &component_layers(latent_dim, config.expert, config.out_dim, family, net_first, true),
                &mut rng,
                if net_first { finer_k } else { None },
            )?);
        }
        let manager_encoder = match &config.manager_encoder {
            Some(c) => Some(Mlp::build(
                &mut store,
                "menc",
                &component_layers(net_in, *c, c.width, family, true, false),
                &mut rng,
                finer_k,
            )?),
            None => None,
        };
        let mgr_first = manager_encoder.is_none() && config.conditioning == Conditioning::None;
        let manager = Mlp::build(
            &mut store,
            "mgr",
            &component_layers(
                config.manager_head_in_dim(),
                config.manager,
                config.n_experts,
                family,
                mgr_first,
                true,
            ),
            &mut rng,
            if mgr_first { finer_k } else { None },
        )?;

        let fourier = match family {
            ActivationFamily::SoftplusFourier { sigma, n_frequencies } => Some(
                FourierFeatureMap::new(config.in_dim, *n_frequencies, *sigma, seed ^ 0x0f0f_0f0f),
            ),
            _ => None,
        };

        Ok(Self { config, store, expert_encoder, experts, manager_encoder, manager, fourier, seed })
    }

    pub fn config(&self) -> &MoeConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_experts(&self) -> usize {
        self.config.n_experts
    }

    pub fn count_parameters(&self) -> usize {
        self.config.count_parameters()
    }

    /// Apply the fixed input encoding (Fourier features when configured) and
    /// cast to the working precision.
    pub fn encode_coords(&self, coords: &Tensor<f64>) -> Result<Tensor<S>> {
        match &self.fourier {
            Some(map) => Ok(map.encode(coords)?.cast()),
            None => Ok(coords.cast()),
        }
    }

    pub fn bind(&self, g: &mut Graph<S>) -> Binding {
        self.store.bind(g)
    }

    /// Differentiable expert-encoder features for `x` (`batch x net_in`).
    pub fn expert_latent_graph(&self, g: &mut Graph<S>, bind: &Binding, x: Var) -> Result<Var> {
        match &self.expert_encoder {
            Some(enc) => enc.forward(g, bind, x),
            None => Ok(x),
        }
    }

    /// Manager probabilities given the expert latent (for conditioning).
    pub fn manager_probs_graph(
        &self,
        g: &mut Graph<S>,
        bind: &Binding,
        x: Var,
        latent: Var,
    ) -> Result<(Var, Var)> {
        let m_latent = match &self.manager_encoder {
            Some(enc) => enc.forward(g, bind, x)?,
            None => x,
        };
        let head_in = match self.config.conditioning {
            Conditioning::None => m_latent,
            Conditioning::Concatenate => g.concat(&[m_latent, latent])?,
            Conditioning::Max => {
                let pooled = g.batch_max(latent)?;
                g.add(m_latent, pooled)?
            }
            Conditioning::Mean => {
                let pooled = g.mean(latent, Some(0))?;
                g.add(m_latent, pooled)?
            }
        };
        let logits = self.manager.forward(g, bind, head_in)?;
        let q = g.softmax(logits)?;
        Ok((logits, q))
    }

    /// Differentiable forward of one expert head on a shared latent.
    pub fn expert_forward_graph(
        &self,
        g: &mut Graph<S>,
        bind: &Binding,
        index: usize,
        latent: Var,
    ) -> Result<Var> {
        self.experts[index].forward(g, bind, latent)
    }

    /// Full training forward: every expert evaluated, soft manager weights.
    pub fn forward_train(&self, g: &mut Graph<S>, bind: &Binding, x: Var) -> Result<MoeForward> {
        let latent = self.expert_latent_graph(g, bind, x)?;
        let expert_outputs = self
            .experts
            .iter()
            .map(|e| e.forward(g, bind, latent))
            .collect::<Result<Vec<_>>>()?;
        let (logits, q) = self.manager_probs_graph(g, bind, x, latent)?;
        Ok(MoeForward { latent, q, logits, expert_outputs })
    }

    // --- plain (no-tape) inference ------------------------------------

    /// Expert-encoder features, `batch x latent_dim`.
    pub fn expert_latent(&self, coords: &Tensor<f64>) -> Result<Tensor<S>> {
        let x = self.encode_coords(coords)?;
        match &self.expert_encoder {
            Some(enc) => enc.eval(&self.store, &x),
            None => Ok(x),
        }
    }

    fn manager_probs_from(&self, x: &Tensor<S>, latent: &Tensor<S>) -> Result<Tensor<S>> {
        let m_latent = match &self.manager_encoder {
            Some(enc) => enc.eval(&self.store, x)?,
            None => x.clone(),
        };
        let head_in = match self.config.conditioning {
            Conditioning::None => m_latent,
            Conditioning::Concatenate => {
                let (m, a, b) = (m_latent.rows(), m_latent.cols(), latent.cols());
                let mut data = vec![S::zero(); m * (a + b)];
                for r in 0..m {
                    data[r * (a + b)..r * (a + b) + a]
                        .copy_from_slice(&m_latent.data()[r * a..(r + 1) * a]);
                    data[r * (a + b) + a..(r + 1) * (a + b)]
                        .copy_from_slice(&latent.data()[r * b..(r + 1) * b]);
                }
                Tensor::new(vec![m, a + b], data)?
            }
            Conditioning::Max | Conditioning::Mean => {
                let (m, n) = (latent.rows(), latent.cols());
                let mut pooled = latent.data()[..n].to_vec();
                if self.config.conditioning == Conditioning::Max {
                    for r in 1..m {
                        for j in 0..n {
                            let v = latent.data()[r * n + j];
                            if v > pooled[j] {
                                pooled[j] = v;
                            }
                        }
                    }
                } else {
                    for r in 1..m {
                        for j in 0..n {
                            pooled[j] = pooled[j] + latent.data()[r * n + j];
                        }
                    }
                    let c = S::from_f64(m as f64);
                    for v in pooled.iter_mut() {
                        *v = *v / c;
                    }
                }
                let mut out = m_latent.clone();
                for row in out.data_mut().chunks_mut(n) {
                    for (v, p) in row.iter_mut().zip(&pooled) {
                        *v = *v + *p;
                    }
                }
                out
            }
        };
        let logits = self.manager.eval(&self.store, &head_in)?;
        let n = logits.cols();
        let mut q = vec![S::zero(); logits.len()];
        for (orow, lrow) in q.chunks_mut(n).zip(logits.data().chunks(n)) {
            kernels::softmax_row(lrow, orow);
        }
        Tensor::new(vec![logits.rows(), n], q)
    }

    /// Selection probabilities `q`, `batch x n_experts`; rows sum to 1.
    pub fn manager_probs(&self, coords: &Tensor<f64>) -> Result<Tensor<S>> {
        let x = self.encode_coords(coords)?;
        let latent = match &self.expert_encoder {
            Some(enc) => enc.eval(&self.store, &x)?,
            None => x.clone(),
        };
        self.manager_probs_from(&x, &latent)
    }

    /// All experts evaluated on a shared latent, stacked `batch x N x out`.
    pub fn experts_outputs(&self, latent: &Tensor<S>) -> Result<Tensor<S>> {
        let (m, n, o) = (latent.rows(), self.config.n_experts, self.config.out_dim);
        let mut data = vec![S::zero(); m * n * o];
        for (e, expert) in self.experts.iter().enumerate() {
            let out = expert.eval(&self.store, latent)?;
            for r in 0..m {
                data[(r * n + e) * o..(r * n + e) * o + o]
                    .copy_from_slice(&out.data()[r * o..(r + 1) * o]);
            }
        }
        Tensor::new(vec![m, n, o], data)
    }

    /// Argmax routing: each sample runs through its selected expert only.
    /// Ties break to the lowest expert index.
    pub fn route_and_reconstruct(&self, coords: &Tensor<f64>) -> Result<(Tensor<S>, Vec<usize>)> {
        let x = self.encode_coords(coords)?;
        let latent = match &self.expert_encoder {
            Some(enc) => enc.eval(&self.store, &x)?,
            None => x.clone(),
        };
        let q = self.manager_probs_from(&x, &latent)?;
        let m = latent.rows();
        let n = self.config.n_experts;
        let assignment: Vec<usize> = (0..m)
            .map(|r| {
                let row = &q.data()[r * n..(r + 1) * n];
                let mut best = 0;
                for (i, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect();

        let o = self.config.out_dim;
        let ld = latent.cols();
        let mut out = vec![S::zero(); m * o];
        for (e, expert) in self.experts.iter().enumerate() {
            let rows: Vec<usize> = (0..m).filter(|&r| assignment[r] == e).collect();
            if rows.is_empty() {
                continue;
            }
            let mut sub = Vec::with_capacity(rows.len() * ld);
            for &r in &rows {
                sub.extend_from_slice(&latent.data()[r * ld..(r + 1) * ld]);
            }
            let sub = Tensor::new(vec![rows.len(), ld], sub)?;
            let y = expert.eval(&self.store, &sub)?;
            for (k, &r) in rows.iter().enumerate() {
                out[r * o..(r + 1) * o].copy_from_slice(&y.data()[k * o..(k + 1) * o]);
            }
        }
        Ok((Tensor::new(vec![m, o], out)?, assignment))
    }

    /// True when the parameter at `store` index `i` belongs to an expert head
    /// (the only parameters trained in the final schedule phase).
    pub fn is_expert_head_param(&self, index: usize) -> bool {
        let name = self.store.name(index);
        name.starts_with("exp") && name.as_bytes().get(3).is_some_and(|b| b.is_ascii_digit())
    }

    /// True when the parameter participates in manager pretraining
    /// (manager head, manager encoder, and expert encoder).
    pub fn is_pretrain_param(&self, index: usize) -> bool {
        let name = self.store.name(index);
        name.starts_with("mgr") || name.starts_with("menc") || name.starts_with("eenc")
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let meta = serde_json::json!({
            "kind": "moe",
            "config": self.config,
            "seed": self.seed,
            "precision_bits": S::BITS,
        });
        crate::nets::save_params(&self.store, meta, path)
    }

    /// Rebuild a model from a checkpoint written by [`MoeModel::save`].
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<MoeModel<S>> {
        let (store, meta) = crate::nets::load_params(path)?;
        let config: MoeConfig = serde_json::from_value(meta["config"].clone())
            .map_err(|e| Error::Serialize(e.to_string()))?;
        let seed = meta["seed"].as_u64().unwrap_or(0);
        let mut model = MoeModel::<S>::new(config, seed)?;
        if store.len() != model.store.len() {
            return Err(Error::Serialize("checkpoint entry count mismatch".into()));
        }
        for i in 0..store.len() {
            if store.name(i) != model.store.name(i)
                || store.values()[i].shape() != model.store.values()[i].shape()
            {
                return Err(Error::Serialize(format!("checkpoint entry {} mismatch", i)));
            }
        }
        model.store = store.cast();
        Ok(model)
    }
}

/// Non-MoE baseline: one MLP from coordinates to signal, in the same
/// component convention (encoder block + head block).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleConfig {
    pub in_dim: usize,
    pub out_dim: usize,
    pub encoder: ComponentSpec,
    pub head: ComponentSpec,
    pub activation: ActivationFamily,
}

impl SingleConfig {
    /// The 4-hidden-layer, width-128 baseline (~99.8k parameters for images).
    pub fn base(in_dim: usize, out_dim: usize, activation: ActivationFamily) -> Self {
        Self {
            in_dim,
            out_dim,
            encoder: ComponentSpec::new(128, 2),
            head: ComponentSpec::new(128, 2),
            activation,
        }
    }

    /// Base with the head widened to 512 (~642.8k parameters for images).
    pub fn wider(in_dim: usize, out_dim: usize, activation: ActivationFamily) -> Self {
        Self { head: ComponentSpec::new(512, 2), ..Self::base(in_dim, out_dim, activation) }
    }

    pub fn net_in_dim(&self) -> usize {
        self.activation.input_width(self.in_dim)
    }

    pub fn layers(&self) -> Vec<crate::nets::LayerSpec> {
        let mut specs = component_layers(
            self.net_in_dim(),
            self.encoder,
            self.encoder.width,
            &self.activation,
            true,
            false,
        );
        specs.extend(component_layers(
            self.encoder.width,
            self.head,
            self.out_dim,
            &self.activation,
            false,
            true,
        ));
        specs
    }

    pub fn count_parameters(&self) -> usize {
        crate::nets::param_count(&self.layers())
    }
}

pub struct SingleModel<S: Scalar> {
    config: SingleConfig,
    pub store: ParamStore<S>,
    mlp: Mlp,
    fourier: Option<FourierFeatureMap>,
    seed: u64,
}

impl<S: Scalar> SingleModel<S> {
    pub fn new(config: SingleConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mlp = Mlp::build(
            &mut store,
            "net",
            &config.layers(),
            &mut rng,
            config.activation.finer_bias_k(),
        )?;
        let fourier = match &config.activation {
            ActivationFamily::SoftplusFourier { sigma, n_frequencies } => Some(
                FourierFeatureMap::new(config.in_dim, *n_frequencies, *sigma, seed ^ 0x0f0f_0f0f),
            ),
            _ => None,
        };
        Ok(Self { config, store, mlp, fourier, seed })
    }

    pub fn config(&self) -> &SingleConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn count_parameters(&self) -> usize {
        self.mlp.param_count()
    }

    pub fn encode_coords(&self, coords: &Tensor<f64>) -> Result<Tensor<S>> {
        match &self.fourier {
            Some(map) => Ok(map.encode(coords)?.cast()),
            None => Ok(coords.cast()),
        }
    }

    pub fn bind(&self, g: &mut Graph<S>) -> Binding {
        self.store.bind(g)
    }

    pub fn forward_train(&self, g: &mut Graph<S>, bind: &Binding, x: Var) -> Result<Var> {
        self.mlp.forward(g, bind, x)
    }

    pub fn reconstruct(&self, coords: &Tensor<f64>) -> Result<Tensor<S>> {
        let x = self.encode_coords(coords)?;
        self.mlp.eval(&self.store, &x)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let meta = serde_json::json!({
            "kind": "single",
            "config": self.config,
            "seed": self.seed,
            "precision_bits": S::BITS,
        });
        crate::nets::save_params(&self.store, meta, path)
    }
}
