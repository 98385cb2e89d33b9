//! MLP building blocks: layer specs, activations, initialization schemes,
//! Fourier feature encodings, and parameter storage/serialization.
//!
//! Component convention used throughout (and by the parameter-count
//! book-keeping): a component of `width w` with `L` hidden layers maps
//! `in -> w`, applies `L` layers `w -> w`, then `w -> out`. Encoders keep the
//! activation on their output layer; signal heads end with an identity layer.

use std::io::{Read, Write};
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{kernels, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default frequency scale for sine layers.
pub const DEFAULT_W0: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sine { w0: f64 },
    Softplus,
    Identity,
    Finer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// First layer of a sine network: U[-1/fan_in, 1/fan_in].
    SirenFirst,
    /// Hidden sine layers: U[-sqrt(6/fan_in)/w0, sqrt(6/fan_in)/w0].
    SirenHidden,
    /// U[-sqrt(6/fan_in), sqrt(6/fan_in)].
    UniformKaiming,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_width: usize,
    pub out_width: usize,
    pub activation: Activation,
    pub init: InitScheme,
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        (self.in_width + 1) * self.out_width
    }
}

/// Activation family for a whole network; per-layer specs derive from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationFamily {
    Sine { w0: f64 },
    Softplus,
    /// Softplus MLP over a fixed Fourier feature encoding of the input.
    SoftplusFourier { sigma: f64, n_frequencies: usize },
    Finer { bias_k: f64 },
}

impl ActivationFamily {
    pub fn sine() -> Self {
        ActivationFamily::Sine { w0: DEFAULT_W0 }
    }

    pub fn fourier() -> Self {
        ActivationFamily::SoftplusFourier { sigma: 10.0, n_frequencies: 128 }
    }

    pub fn finer() -> Self {
        ActivationFamily::Finer { bias_k: 1.0 }
    }

    fn hidden_activation(&self) -> Activation {
        match self {
            ActivationFamily::Sine { w0 } => Activation::Sine { w0: *w0 },
            ActivationFamily::Softplus | ActivationFamily::SoftplusFourier { .. } => {
                Activation::Softplus
            }
            ActivationFamily::Finer { .. } => Activation::Finer,
        }
    }

    fn first_init(&self) -> InitScheme {
        match self {
            ActivationFamily::Sine { .. } | ActivationFamily::Finer { .. } => InitScheme::SirenFirst,
            _ => InitScheme::UniformKaiming,
        }
    }

    fn hidden_init(&self) -> InitScheme {
        match self {
            ActivationFamily::Sine { .. } | ActivationFamily::Finer { .. } => InitScheme::SirenHidden,
            _ => InitScheme::UniformKaiming,
        }
    }

    /// Width of the coordinate encoding fed to the first layer.
    pub fn input_width(&self, coord_dim: usize) -> usize {
        match self {
            ActivationFamily::SoftplusFourier { n_frequencies, .. } => 2 * n_frequencies,
            _ => coord_dim,
        }
    }

    /// FINER first-layer bias range, if applicable.
    pub fn finer_bias_k(&self) -> Option<f64> {
        match self {
            ActivationFamily::Finer { bias_k } => Some(*bias_k),
            _ => None,
        }
    }
}

/// `width x layers` shorthand for one component MLP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub width: usize,
    pub hidden_layers: usize,
}

impl ComponentSpec {
    pub fn new(width: usize, hidden_layers: usize) -> Self {
        Self { width, hidden_layers }
    }
}

/// Layer chain for one component: `in -> w`, `hidden` x `w -> w`, `w -> out`.
///
/// `net_first` marks a component whose first layer sees raw coordinates (it
/// then gets the first-layer init). `final_identity` strips the activation
/// from the output layer (signal heads); encoders keep it.
pub fn component_layers(
    in_dim: usize,
    comp: ComponentSpec,
    out_dim: usize,
    family: &ActivationFamily,
    net_first: bool,
    final_identity: bool,
) -> Vec<LayerSpec> {
    let act = family.hidden_activation();
    let mut specs = Vec::with_capacity(comp.hidden_layers + 2);
    let mut widths = vec![in_dim];
    widths.extend(std::iter::repeat(comp.width).take(comp.hidden_layers + 1));
    widths.push(out_dim);
    let n = widths.len() - 1;
    for i in 0..n {
        let init = if i == 0 && net_first { family.first_init() } else { family.hidden_init() };
        let activation = if i == n - 1 && final_identity { Activation::Identity } else { act };
        specs.push(LayerSpec { in_width: widths[i], out_width: widths[i + 1], activation, init });
    }
    specs
}

pub fn param_count(specs: &[LayerSpec]) -> usize {
    specs.iter().map(|s| s.param_count()).sum()
}

/// Weight bound used by [`InitScheme`] for a given fan-in.
pub fn weight_bound(init: InitScheme, fan_in: usize, w0: f64) -> f64 {
    match init {
        InitScheme::SirenFirst => 1.0 / fan_in as f64,
        InitScheme::SirenHidden => (6.0 / fan_in as f64).sqrt() / w0,
        InitScheme::UniformKaiming => (6.0 / fan_in as f64).sqrt(),
    }
}

/// Sample weights and bias for one layer.
///
/// Biases default to U[-1/sqrt(fan_in), 1/sqrt(fan_in)]; a FINER network's
/// first layer widens its bias to U[-k, k] instead.
pub fn init_layer(
    spec: &LayerSpec,
    rng: &mut ChaCha8Rng,
    finer_first_bias_k: Option<f64>,
) -> (Tensor<f64>, Tensor<f64>) {
    let w0 = match spec.activation {
        Activation::Sine { w0 } => w0,
        _ => DEFAULT_W0,
    };
    let wb = weight_bound(spec.init, spec.in_width, w0);
    let wdist = Uniform::new_inclusive(-wb, wb);
    let weights: Vec<f64> =
        (0..spec.in_width * spec.out_width).map(|_| wdist.sample(rng)).collect();
    let bb = match finer_first_bias_k {
        Some(k) => k,
        None => 1.0 / (spec.in_width as f64).sqrt(),
    };
    let bdist = Uniform::new_inclusive(-bb, bb);
    let bias: Vec<f64> = (0..spec.out_width).map(|_| bdist.sample(rng)).collect();
    (
        Tensor::new(vec![spec.in_width, spec.out_width], weights).unwrap(),
        Tensor::new(vec![1, spec.out_width], bias).unwrap(),
    )
}

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Ordered, named parameter tensors for one model.
///
/// The store owns the authoritative values; graphs bind them per iteration
/// and the optimizer updates them in place by index.
pub struct ParamStore<S> {
    names: Vec<String>,
    values: Vec<Tensor<S>>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.values[id.0]
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn values(&self) -> &[Tensor<S>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.values
    }

    pub fn total_values(&self) -> usize {
        self.values.iter().map(|t| t.len()).sum()
    }

    /// Bind every parameter into `g` as a trainable leaf, in store order.
    pub fn bind(&self, g: &mut Graph<S>) -> Binding {
        Binding { vars: self.values.iter().map(|t| g.param(t)).collect() }
    }

    /// Bind parameters selectively: frozen entries enter the graph as
    /// constants, so backward never walks their subgraphs.
    pub fn bind_where(&self, g: &mut Graph<S>, trainable: impl Fn(usize) -> bool) -> Binding {
        Binding {
            vars: self
                .values
                .iter()
                .enumerate()
                .map(|(i, t)| if trainable(i) { g.param(t) } else { g.constant(t.clone()) })
                .collect(),
        }
    }

    /// Indices whose name matches `pred`; used for freeze masks.
    pub fn indices_where(&self, pred: impl Fn(&str) -> bool) -> Vec<usize> {
        (0..self.names.len()).filter(|&i| pred(&self.names[i])).collect()
    }

    /// Raw bit pattern of the selected parameters, for exact freeze checks.
    pub fn bits_where(&self, pred: impl Fn(&str) -> bool) -> Vec<u64> {
        let mut out = Vec::new();
        for (name, t) in self.names.iter().zip(&self.values) {
            if pred(name) {
                out.extend(t.data().iter().map(|v| v.as_f64().to_bits()));
            }
        }
        out
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(|t| t.cast()).collect(),
        }
    }
}

/// Per-graph parameter bindings, indexed by [`ParamId`].
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    /// Wrap an existing var list (vars must follow store order).
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// An MLP: layer specs plus handles to its parameters in a store.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<LayerSpec>,
    weights: Vec<ParamId>,
    biases: Vec<ParamId>,
}

impl Mlp {
    /// Initialize parameters for `specs` into `store` under `prefix.`.
    pub fn build<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        specs: &[LayerSpec],
        rng: &mut ChaCha8Rng,
        finer_bias_k: Option<f64>,
    ) -> Result<Self> {
        let mut weights = Vec::with_capacity(specs.len());
        let mut biases = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            if i > 0 && specs[i - 1].out_width != spec.in_width {
                return Err(Error::Shape {
                    op: "mlp_build",
                    detail: format!(
                        "layer {} out width {} does not chain into layer {} in width {}",
                        i - 1,
                        specs[i - 1].out_width,
                        i,
                        spec.in_width
                    ),
                });
            }
            let k = if i == 0 && matches!(spec.activation, Activation::Finer) {
                finer_bias_k
            } else {
                None
            };
            let (w, b) = init_layer(spec, rng, k);
            weights.push(store.add(format!("{}.w{}", prefix, i), w.cast()));
            biases.push(store.add(format!("{}.b{}", prefix, i), b.cast()));
        }
        Ok(Self { layers: specs.to_vec(), weights, biases })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn in_width(&self) -> usize {
        self.layers[0].in_width
    }

    pub fn out_width(&self) -> usize {
        self.layers[self.layers.len() - 1].out_width
    }

    pub fn param_count(&self) -> usize {
        param_count(&self.layers)
    }

    /// Differentiable forward through the graph.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, bind: &Binding, x: Var) -> Result<Var> {
        if g.shape(x)[1] != self.in_width() {
            return Err(Error::Shape {
                op: "mlp_forward",
                detail: format!("input width {} vs layer {}", g.shape(x)[1], self.in_width()),
            });
        }
        let mut h = x;
        for (i, spec) in self.layers.iter().enumerate() {
            let z = g.apply(
                crate::autodiff::Op::Linear,
                &[h, bind.var(self.weights[i]), bind.var(self.biases[i])],
            )?;
            h = match spec.activation {
                Activation::Sine { w0 } => g.sin(z, S::from_f64(w0))?,
                Activation::Softplus => g.softplus(z)?,
                Activation::Finer => g.finer(z)?,
                Activation::Identity => z,
            };
        }
        Ok(h)
    }

    /// Plain inference forward, no tape.
    pub fn eval<S: Scalar>(&self, store: &ParamStore<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        if x.rank() != 2 || x.cols() != self.in_width() {
            return Err(Error::Shape {
                op: "mlp_eval",
                detail: format!("input {:?} vs in width {}", x.shape(), self.in_width()),
            });
        }
        let m = x.rows();
        let mut h = x.data().to_vec();
        let mut width = x.cols();
        for (i, spec) in self.layers.iter().enumerate() {
            let w = store.get(self.weights[i]);
            let b = store.get(self.biases[i]);
            let mut z = kernels::matmul_nn(&h, w.data(), m, width, spec.out_width);
            let brow = b.data();
            for row in z.chunks_mut(spec.out_width) {
                for (zv, bv) in row.iter_mut().zip(brow) {
                    *zv = *zv + *bv;
                }
            }
            apply_activation(&spec.activation, &mut z);
            h = z;
            width = spec.out_width;
        }
        Tensor::new(vec![m, width], h)
    }
}

pub(crate) fn apply_activation<S: Scalar>(act: &Activation, z: &mut [S]) {
    match act {
        Activation::Identity => {}
        Activation::Sine { w0 } => {
            let s = S::from_f64(*w0);
            for v in z.iter_mut() {
                *v = kernels::fsin(s * *v);
            }
        }
        Activation::Softplus => {
            for v in z.iter_mut() {
                *v = v.max(S::zero()) + (-v.abs()).exp().ln_1p();
            }
        }
        Activation::Finer => {
            for v in z.iter_mut() {
                *v = kernels::fsin((v.abs() + S::one()) * *v);
            }
        }
    }
}

/// Fixed random Fourier feature encoding `x -> [sin(2 pi x B), cos(2 pi x B)]`.
#[derive(Debug, Clone)]
pub struct FourierFeatureMap {
    /// `coord_dim x n_frequencies`, entries ~ N(0, sigma^2), never trained.
    b: Tensor<f64>,
    sigma: f64,
}

impl FourierFeatureMap {
    pub fn new(coord_dim: usize, n_frequencies: usize, sigma: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Box-Muller keeps us independent of distribution crates' internals.
        let n = coord_dim * n_frequencies;
        let mut data = Vec::with_capacity(n);
        while data.len() < n {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let r = (-2.0 * u1.ln()).sqrt();
            let (s, c) = (2.0 * std::f64::consts::PI * u2).sin_cos();
            data.push(r * c * sigma);
            if data.len() < n {
                data.push(r * s * sigma);
            }
        }
        Self { b: Tensor::new(vec![coord_dim, n_frequencies], data).unwrap(), sigma }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn n_frequencies(&self) -> usize {
        self.b.cols()
    }

    pub fn coord_dim(&self) -> usize {
        self.b.rows()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.b.cols()
    }

    pub fn frequencies(&self) -> &Tensor<f64> {
        &self.b
    }

    pub(crate) fn from_matrix(b: Tensor<f64>, sigma: f64) -> Self {
        Self { b, sigma }
    }

    /// Encode a `batch x coord_dim` tensor into `batch x 2 n_frequencies`.
    pub fn encode(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        if x.rank() != 2 || x.cols() != self.b.rows() {
            return Err(Error::Shape {
                op: "fourier_encode",
                detail: format!("input {:?} vs B {:?}", x.shape(), self.b.shape()),
            });
        }
        let (m, d, f) = (x.rows(), x.cols(), self.b.cols());
        let proj = kernels::matmul_nn(x.data(), self.b.data(), m, d, f);
        let two_pi = 2.0 * std::f64::consts::PI;
        let mut out = vec![0.0f64; m * 2 * f];
        for r in 0..m {
            for j in 0..f {
                let (s, c) = (two_pi * proj[r * f + j]).sin_cos();
                out[r * 2 * f + j] = s;
                out[r * 2 * f + f + j] = c;
            }
        }
        Tensor::new(vec![m, 2 * f], out)
    }
}

// --- parameter serialization ---------------------------------------------

const MAGIC: &[u8; 4] = b"MOEP";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct FileHeader {
    version: u32,
    entries: Vec<EntryHeader>,
    meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct EntryHeader {
    name: String,
    shape: Vec<usize>,
}

/// Write a store as a JSON header plus flat little-endian f64 payload.
pub fn save_params<S: Scalar>(
    store: &ParamStore<S>,
    meta: serde_json::Value,
    path: impl AsRef<Path>,
) -> Result<()> {
    let header = FileHeader {
        version: FORMAT_VERSION,
        entries: store
            .names
            .iter()
            .zip(&store.values)
            .map(|(name, t)| EntryHeader { name: name.clone(), shape: t.shape().to_vec() })
            .collect(),
        meta,
    };
    let hjson = serde_json::to_vec(&header).map_err(|e| Error::Serialize(e.to_string()))?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MAGIC)?;
    f.write_all(&(hjson.len() as u32).to_le_bytes())?;
    f.write_all(&hjson)?;
    for t in &store.values {
        for v in t.data() {
            f.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

/// Read a parameter file back; values load at f64 and can be `cast()` down.
pub fn load_params(path: impl AsRef<Path>) -> Result<(ParamStore<f64>, serde_json::Value)> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Serialize("bad magic in parameter file".into()));
    }
    let mut len4 = [0u8; 4];
    f.read_exact(&mut len4)?;
    let hlen = u32::from_le_bytes(len4) as usize;
    let mut hjson = vec![0u8; hlen];
    f.read_exact(&mut hjson)?;
    let header: FileHeader =
        serde_json::from_slice(&hjson).map_err(|e| Error::Serialize(e.to_string()))?;
    if header.version != FORMAT_VERSION {
        return Err(Error::Serialize(format!("unsupported version {}", header.version)));
    }
    let mut store = ParamStore::new();
    for entry in header.entries {
        let n: usize = entry.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            f.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        store.add(entry.name, Tensor::new(entry.shape, data)?);
    }
    Ok((store, header.meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn sine_specs(widths: &[(usize, usize)], w0: f64) -> Vec<LayerSpec> {
        widths
            .iter()
            .enumerate()
            .map(|(i, &(iw, ow))| LayerSpec {
                in_width: iw,
                out_width: ow,
                activation: Activation::Sine { w0 },
                init: if i == 0 { InitScheme::SirenFirst } else { InitScheme::SirenHidden },
            })
            .collect()
    }

    #[test]
    fn zeroed_network_outputs_zero() {
        let mut store = ParamStore::<f64>::new();
        let specs = sine_specs(&[(2, 8), (8, 3)], 30.0);
        let mlp = Mlp::build(&mut store, "net", &specs, &mut rng(0), None).unwrap();
        for t in store.values_mut() {
            *t = Tensor::zeros(t.shape());
        }
        let x = Tensor::new(vec![4, 2], vec![0.3; 8]).unwrap();
        let y = mlp.eval(&store, &x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_with_identity_weights_is_identity() {
        let mut store = ParamStore::<f64>::new();
        let specs = vec![LayerSpec {
            in_width: 3,
            out_width: 3,
            activation: Activation::Identity,
            init: InitScheme::UniformKaiming,
        }];
        let mlp = Mlp::build(&mut store, "net", &specs, &mut rng(0), None).unwrap();
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        *store.get_mut(ParamId(0)) = eye;
        *store.get_mut(ParamId(1)) = Tensor::zeros(&[1, 3]);
        let x = Tensor::new(vec![2, 3], vec![0.1, -0.5, 2.0, 0.0, 1.0, -1.0]).unwrap();
        let y = mlp.eval(&store, &x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn two_layer_sine_mlp_matches_direct_composition() {
        let mut store = ParamStore::<f64>::new();
        let specs = vec![
            LayerSpec {
                in_width: 2,
                out_width: 8,
                activation: Activation::Sine { w0: 30.0 },
                init: InitScheme::SirenFirst,
            },
            LayerSpec {
                in_width: 8,
                out_width: 1,
                activation: Activation::Sine { w0: 1.0 },
                init: InitScheme::SirenHidden,
            },
        ];
        let mlp = Mlp::build(&mut store, "net", &specs, &mut rng(1), None).unwrap();
        let x = Tensor::new(vec![5, 2], (0..10).map(|i| i as f64 * 0.1 - 0.5).collect()).unwrap();
        let y = mlp.eval(&store, &x).unwrap();

        let w1 = store.get(ParamId(0));
        let b1 = store.get(ParamId(1));
        let w2 = store.get(ParamId(2));
        let b2 = store.get(ParamId(3));
        for r in 0..5 {
            for o in 0..1 {
                let mut z2 = b2.data()[o];
                for h in 0..8 {
                    let mut z1 = b1.data()[h];
                    for c in 0..2 {
                        z1 += x.get2(r, c) * w1.get2(c, h);
                    }
                    z2 += (30.0 * z1).sin() * w2.get2(h, o);
                }
                let expect = z2.sin();
                assert!((y.get2(r, o) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn graph_forward_matches_eval_forward() {
        let mut store = ParamStore::<f64>::new();
        let specs = component_layers(
            2,
            ComponentSpec::new(16, 2),
            3,
            &ActivationFamily::sine(),
            true,
            true,
        );
        let mlp = Mlp::build(&mut store, "net", &specs, &mut rng(2), None).unwrap();
        let x = Tensor::new(vec![7, 2], (0..14).map(|i| (i as f64).sin()).collect()).unwrap();
        let direct = mlp.eval(&store, &x).unwrap();

        let mut g = Graph::new();
        let bind = store.bind(&mut g);
        let xv = g.constant(x);
        let yv = mlp.forward(&mut g, &bind, xv).unwrap();
        assert_eq!(g.value(yv), &direct);
    }

    #[test]
    fn siren_hidden_bound_for_fan_in_128() {
        let bound = weight_bound(InitScheme::SirenHidden, 128, 30.0);
        assert!((bound - 0.007216878364870322).abs() < 1e-15);
        let spec = LayerSpec {
            in_width: 128,
            out_width: 781,
            activation: Activation::Sine { w0: 30.0 },
            init: InitScheme::SirenHidden,
        };
        // ~1e5 draws: all inside the bound and the max observed close to it.
        let (w, _) = init_layer(&spec, &mut rng(3), None);
        let max = w.data().iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        assert!(max <= bound);
        assert!(max >= 0.99 * bound, "max {} bound {}", max, bound);
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let spec = LayerSpec {
            in_width: 32,
            out_width: 16,
            activation: Activation::Sine { w0: 30.0 },
            init: InitScheme::SirenFirst,
        };
        let (w1, b1) = init_layer(&spec, &mut rng(9), None);
        let (w2, b2) = init_layer(&spec, &mut rng(9), None);
        assert_eq!(w1, w2);
        assert_eq!(b1, b2);
    }

    #[test]
    fn fourier_encode_of_zero_is_zero_sin_one_cos() {
        let map = FourierFeatureMap::new(2, 5, 10.0, 0);
        let x = Tensor::zeros(&[3, 2]);
        let y = map.encode(&x).unwrap();
        assert_eq!(y.shape(), &[3, 10]);
        for r in 0..3 {
            for j in 0..5 {
                assert_eq!(y.get2(r, j), 0.0);
                assert_eq!(y.get2(r, 5 + j), 1.0);
            }
        }
    }

    #[test]
    fn fourier_branches_satisfy_pythagoras() {
        let map = FourierFeatureMap::new(3, 16, 10.0, 4);
        let x = Tensor::new(vec![6, 3], (0..18).map(|i| (i as f64 * 0.37).cos()).collect()).unwrap();
        let y = map.encode(&x).unwrap();
        for r in 0..6 {
            for j in 0..16 {
                let s = y.get2(r, j);
                let c = y.get2(r, 16 + j);
                assert!((s * s + c * c - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn finer_activation_values() {
        let mut z = vec![0.0f64, 1e-3];
        apply_activation(&Activation::Finer, &mut z);
        assert_eq!(z[0], 0.0);
        assert!((z[1] - 1e-3).abs() < 2e-6, "finer(1e-3) = {}", z[1]);
    }

    #[test]
    fn base_sine_mlp_has_the_documented_parameter_count() {
        // Encoder 128x2 into head 128x2, image coordinates in, RGB out.
        let family = ActivationFamily::sine();
        let mut specs = component_layers(2, ComponentSpec::new(128, 2), 128, &family, true, false);
        specs.extend(component_layers(128, ComponentSpec::new(128, 2), 3, &family, false, true));
        assert_eq!(param_count(&specs), 99_843);
    }

    #[test]
    fn doubling_widths_roughly_quadruples_weights() {
        let family = ActivationFamily::sine();
        let narrow = component_layers(2, ComponentSpec::new(64, 2), 3, &family, true, true);
        let wide = component_layers(2, ComponentSpec::new(128, 2), 3, &family, true, true);
        let (n, w) = (param_count(&narrow) as f64, param_count(&wide) as f64);
        assert!(w / n > 3.5 && w / n < 4.5, "ratio {}", w / n);
    }

    #[test]
    fn params_roundtrip_through_file() {
        let mut store = ParamStore::<f64>::new();
        let specs = sine_specs(&[(2, 4), (4, 1)], 30.0);
        let _ = Mlp::build(&mut store, "net", &specs, &mut rng(5), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.moep");
        save_params(&store, serde_json::json!({"seed": 5}), &path).unwrap();
        let (loaded, meta) = load_params(&path).unwrap();
        assert_eq!(meta["seed"], 5);
        assert_eq!(loaded.len(), store.len());
        for i in 0..store.len() {
            assert_eq!(loaded.values()[i], store.values()[i]);
            assert_eq!(loaded.name(i), store.name(i));
        }
    }
}
