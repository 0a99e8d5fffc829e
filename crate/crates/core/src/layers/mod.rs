//! Network building blocks and the [`Network`] container used for the
//! generator, critic, JS discriminator and the IDS MLP.

mod attention;
mod checkpoint;

pub use attention::{AttentionBlock, AttentionOutput};
pub use checkpoint::Checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;
pub const DEFAULT_KEY_DIM: usize = 16;
pub const BATCHNORM_EPSILON: f64 = 1e-5;
pub const BATCHNORM_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn leaky() -> Self {
        Activation::LeakyRelu {
            slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    pub fn apply(self, g: &mut Graph, x: Var) -> Result<Var> {
        match self {
            Activation::LeakyRelu { slope } => g.leaky_relu(x, slope),
            Activation::Tanh => g.tanh(x),
            Activation::Sigmoid => g.sigmoid(x),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { units: usize },
    Activation { activation: Activation },
    BatchNorm,
    /// Self-attention with residual over the current width, treated as tokens.
    Attention { key_dim: usize },
    Dropout { rate: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Generator,
    Critic,
    Discriminator,
    Classifier,
}

/// Ordered layer descriptors plus the input width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub role: Role,
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
}

/// Options shared by the spec constructors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockOptions {
    /// Indices into the hidden-layer list after which attention is inserted.
    pub attention_after: Vec<usize>,
    pub key_dim: usize,
    pub batchnorm: bool,
    pub leaky_slope: f64,
    pub dropout: f64,
}

impl Default for BlockOptions {
    fn default() -> Self {
        BlockOptions {
            attention_after: Vec::new(),
            key_dim: DEFAULT_KEY_DIM,
            batchnorm: false,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            dropout: 0.0,
        }
    }
}

impl NetworkSpec {
    fn hidden_stack(hidden: &[usize], opts: &BlockOptions) -> Vec<LayerSpec> {
        let mut layers = Vec::new();
        for (i, &units) in hidden.iter().enumerate() {
            layers.push(LayerSpec::Dense { units });
            if opts.attention_after.contains(&i) {
                layers.push(LayerSpec::Attention {
                    key_dim: opts.key_dim,
                });
            }
            if opts.batchnorm {
                layers.push(LayerSpec::BatchNorm);
            }
            layers.push(LayerSpec::Activation {
                activation: Activation::LeakyRelu {
                    slope: opts.leaky_slope,
                },
            });
            if opts.dropout > 0.0 {
                layers.push(LayerSpec::Dropout { rate: opts.dropout });
            }
        }
        layers
    }

    /// Dense stack ending in a Tanh output of width `out_dim`.
    pub fn generator(latent_dim: usize, hidden: &[usize], out_dim: usize, opts: &BlockOptions) -> Self {
        let mut layers = Self::hidden_stack(hidden, opts);
        layers.push(LayerSpec::Dense { units: out_dim });
        layers.push(LayerSpec::Activation {
            activation: Activation::Tanh,
        });
        NetworkSpec {
            role: Role::Generator,
            input_dim: latent_dim,
            layers,
        }
    }

    /// Dense stack ending in a single unbounded score.
    pub fn critic(input_dim: usize, hidden: &[usize], opts: &BlockOptions) -> Self {
        let mut layers = Self::hidden_stack(hidden, opts);
        layers.push(LayerSpec::Dense { units: 1 });
        NetworkSpec {
            role: Role::Critic,
            input_dim,
            layers,
        }
    }

    /// Dense stack ending in a single logit; the sigmoid lives in the loss.
    pub fn discriminator(input_dim: usize, hidden: &[usize], opts: &BlockOptions) -> Self {
        let mut spec = Self::critic(input_dim, hidden, opts);
        spec.role = Role::Discriminator;
        spec
    }

    /// Dense stack ending in `classes` logits; softmax lives in the loss.
    pub fn classifier(input_dim: usize, hidden: &[usize], classes: usize, opts: &BlockOptions) -> Self {
        let mut layers = Self::hidden_stack(hidden, opts);
        layers.push(LayerSpec::Dense { units: classes });
        NetworkSpec {
            role: Role::Classifier,
            input_dim,
            layers,
        }
    }

    /// Width of the final layer, after checking every layer.
    pub fn output_dim(&self) -> Result<usize> {
        if self.input_dim == 0 {
            return Err(Error::config("network input width must be positive"));
        }
        let mut width = self.input_dim;
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerSpec::Dense { units } => {
                    if *units == 0 {
                        return Err(Error::config(format!("layer {}: dense width 0", i)));
                    }
                    width = *units;
                }
                LayerSpec::Attention { key_dim } => {
                    if *key_dim == 0 {
                        return Err(Error::config(format!("layer {}: attention key_dim 0", i)));
                    }
                }
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(rate) {
                        return Err(Error::config(format!("layer {}: dropout rate {}", i, rate)));
                    }
                }
                LayerSpec::Activation { activation } => {
                    if let Activation::LeakyRelu { slope } = activation {
                        if !(*slope > 0.0 && *slope < 1.0) {
                            return Err(Error::config(format!(
                                "layer {}: leaky slope {} outside (0, 1)",
                                i, slope
                            )));
                        }
                    }
                }
                LayerSpec::BatchNorm => {}
            }
        }
        Ok(width)
    }

    pub fn validate(&self) -> Result<()> {
        let out = self.output_dim()?;
        match self.role {
            Role::Generator => {
                if !matches!(
                    self.layers.last(),
                    Some(LayerSpec::Activation {
                        activation: Activation::Tanh
                    })
                ) {
                    return Err(Error::config("generator output activation must be Tanh"));
                }
            }
            Role::Critic | Role::Discriminator => {
                if out != 1 {
                    return Err(Error::config(format!(
                        "{:?} must output a single value, got width {}",
                        self.role, out
                    )));
                }
            }
            Role::Classifier => {
                if out < 2 {
                    return Err(Error::config("classifier needs at least two outputs"));
                }
            }
        }
        Ok(())
    }

    pub fn has_attention(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, LayerSpec::Attention { .. }))
    }

    pub fn has_batchnorm(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, LayerSpec::BatchNorm))
    }
}

/// Running statistics for one batch-norm layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running-stat updates, dropout active.
    Train,
    /// Running statistics, no dropout.
    Eval,
}

#[derive(Clone, Debug)]
enum Layer {
    Dense { weight: usize, bias: usize },
    Act(Activation),
    BatchNorm { gamma: usize, beta: usize, stats: usize },
    Attention { query: usize, key: usize, value: usize, key_dim: usize },
    Dropout { rate: f64 },
}

/// Parameter leaves of a network placed on one graph.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps externally created vars, one per parameter in network order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// A parametrized feed-forward network.
#[derive(Clone, Debug)]
pub struct Network {
    spec: NetworkSpec,
    seed: u64,
    layers: Vec<Layer>,
    params: Vec<Tensor>,
    param_names: Vec<String>,
    bn_stats: Vec<BatchNormStats>,
    dropout_rng: ChaCha8Rng,
}

impl Network {
    /// Builds a network with He-uniform weights and zero biases.
    pub fn build(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut params = Vec::new();
        let mut names = Vec::new();
        let mut bn_stats = Vec::new();
        let mut width = spec.input_dim;
        for (i, layer) in spec.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Dense { units } => {
                    let bound = (6.0 / width as f64).sqrt();
                    let w: Vec<f64> = (0..width * units)
                        .map(|_| rng.gen_range(-bound..bound))
                        .collect();
                    params.push(Tensor::new(vec![width, units], w)?);
                    names.push(format!("layer{}.weight", i));
                    params.push(Tensor::zeros(&[units]));
                    names.push(format!("layer{}.bias", i));
                    layers.push(Layer::Dense {
                        weight: params.len() - 2,
                        bias: params.len() - 1,
                    });
                    width = units;
                }
                LayerSpec::Activation { activation } => layers.push(Layer::Act(activation)),
                LayerSpec::BatchNorm => {
                    params.push(Tensor::ones(&[width]));
                    names.push(format!("layer{}.gamma", i));
                    params.push(Tensor::zeros(&[width]));
                    names.push(format!("layer{}.beta", i));
                    bn_stats.push(BatchNormStats {
                        mean: vec![0.0; width],
                        var: vec![1.0; width],
                    });
                    layers.push(Layer::BatchNorm {
                        gamma: params.len() - 2,
                        beta: params.len() - 1,
                        stats: bn_stats.len() - 1,
                    });
                }
                LayerSpec::Attention { key_dim } => {
                    let block = AttentionBlock::init(key_dim, &mut rng)?;
                    params.push(block.w_query);
                    names.push(format!("layer{}.w_query", i));
                    params.push(block.w_key);
                    names.push(format!("layer{}.w_key", i));
                    params.push(block.w_value);
                    names.push(format!("layer{}.w_value", i));
                    let n = params.len();
                    layers.push(Layer::Attention {
                        query: n - 3,
                        key: n - 2,
                        value: n - 1,
                        key_dim,
                    });
                }
                LayerSpec::Dropout { rate } => layers.push(Layer::Dropout { rate }),
            }
        }
        Ok(Network {
            spec: spec.clone(),
            seed,
            layers,
            params,
            param_names: names,
            bn_stats,
            dropout_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d80f),
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim().expect("validated at build")
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn batchnorm_stats(&self) -> &[BatchNormStats] {
        &self.bn_stats
    }

    /// Attention blocks in layer order.
    pub fn attention_blocks(&self) -> Vec<AttentionBlock> {
        self.layers
            .iter()
            .filter_map(|l| match *l {
                Layer::Attention {
                    query,
                    key,
                    value,
                    key_dim,
                } => Some(AttentionBlock {
                    w_query: self.params[query].clone(),
                    w_key: self.params[key].clone(),
                    w_value: self.params[value].clone(),
                    key_dim,
                }),
                _ => None,
            })
            .collect()
    }

    /// SHA-256 over the bit patterns of every parameter.
    pub fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            for v in p.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        format!("{:x}", h.finalize())
    }

    /// Places the parameters on `g`; `trainable = false` inserts them as
    /// constants so no gradient reaches them.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|p| g.leaf(p.clone(), trainable))
                .collect(),
        }
    }

    /// Forward pass. `Mode::Train` updates batch-norm running statistics.
    pub fn forward(&mut self, g: &mut Graph, bound: &Bound, x: Var, mode: Mode) -> Result<Var> {
        let mut updates = Vec::new();
        let mut rng = self.dropout_rng.clone();
        let out = self.run(g, bound, x, mode, &mut updates, &mut rng)?;
        self.dropout_rng = rng;
        for (idx, mean, var) in updates {
            let s = &mut self.bn_stats[idx];
            for (r, m) in s.mean.iter_mut().zip(&mean) {
                *r = BATCHNORM_MOMENTUM * *r + (1.0 - BATCHNORM_MOMENTUM) * m;
            }
            for (r, v) in s.var.iter_mut().zip(&var) {
                *r = BATCHNORM_MOMENTUM * *r + (1.0 - BATCHNORM_MOMENTUM) * v;
            }
        }
        Ok(out)
    }

    /// Inference-mode forward of a `[batch, input_dim]` matrix.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let mut updates = Vec::new();
        let mut rng = self.dropout_rng.clone();
        let out = self.run(&mut g, &bound, xv, Mode::Eval, &mut updates, &mut rng)?;
        Ok(g.value(out).clone())
    }

    fn run(
        &self,
        g: &mut Graph,
        bound: &Bound,
        x: Var,
        mode: Mode,
        updates: &mut Vec<(usize, Vec<f64>, Vec<f64>)>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        if bound.vars.len() != self.params.len() {
            return Err(Error::contract("bound parameters do not match network"));
        }
        let batch = match g.shape(x) {
            [b, d] if *d == self.spec.input_dim => *b,
            s => {
                return Err(Error::shape(
                    "network",
                    format!("expected [batch, {}], got {:?}", self.spec.input_dim, s),
                ))
            }
        };
        let p = &bound.vars;
        let mut h = x;
        for layer in &self.layers {
            h = match *layer {
                Layer::Dense { weight, bias } => {
                    let z = g.matmul(h, p[weight])?;
                    g.add_row(z, p[bias])?
                }
                Layer::Act(a) => a.apply(g, h)?,
                Layer::BatchNorm { gamma, beta, stats } => {
                    let normalized = match mode {
                        Mode::Train => {
                            let (xn, mean, var) = batchnorm_train(g, h, batch)?;
                            updates.push((stats, mean, var));
                            xn
                        }
                        Mode::Eval => {
                            let s = &self.bn_stats[stats];
                            let shift = Tensor::from_parts(
                                vec![s.mean.len()],
                                s.mean.iter().map(|m| -m).collect(),
                            );
                            let inv = Tensor::from_parts(
                                vec![s.var.len()],
                                s.var
                                    .iter()
                                    .map(|v| 1.0 / (v + BATCHNORM_EPSILON).sqrt())
                                    .collect(),
                            );
                            let shift = g.constant(shift);
                            let inv = g.constant(inv);
                            let c = g.add_row(h, shift)?;
                            g.mul_row(c, inv)?
                        }
                    };
                    let scaled = g.mul_row(normalized, p[gamma])?;
                    g.add_row(scaled, p[beta])?
                }
                Layer::Attention {
                    query,
                    key,
                    value,
                    key_dim,
                } => {
                    let (att, _) = attention::attend(g, h, p[query], p[key], p[value], key_dim)?;
                    g.add(h, att)?
                }
                Layer::Dropout { rate } => {
                    if mode == Mode::Train && rate > 0.0 {
                        let keep = 1.0 - rate;
                        let shape = g.shape(h).to_vec();
                        let n: usize = shape.iter().product();
                        let mask: Vec<f64> = (0..n)
                            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                            .collect();
                        let m = g.constant(Tensor::from_parts(shape, mask));
                        g.mul(h, m)?
                    } else {
                        h
                    }
                }
            };
        }
        Ok(h)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_network(self)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut net = Network::build(&ck.spec, ck.seed)?;
        if ck.params.len() != net.params.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} parameter tensors, spec needs {}",
                ck.params.len(),
                net.params.len()
            )));
        }
        for (i, (have, want)) in ck.params.iter().zip(&net.params).enumerate() {
            if have.shape() != want.shape() {
                return Err(Error::Format(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    i,
                    have.shape(),
                    want.shape()
                )));
            }
        }
        if ck.batchnorm.len() != net.bn_stats.len() {
            return Err(Error::Format("batch-norm state count mismatch".into()));
        }
        net.params = ck.params.clone();
        net.bn_stats = ck.batchnorm.clone();
        Ok(net)
    }
}

/// Batch normalization with batch statistics. Returns the normalized
/// activations and the batch mean and (biased) variance.
fn batchnorm_train(g: &mut Graph, x: Var, batch: usize) -> Result<(Var, Vec<f64>, Vec<f64>)> {
    let inv_b = 1.0 / batch as f64;
    let s = g.sum_leading(x)?;
    let mean = g.scale(s, inv_b)?;
    let mean_b = g.broadcast_leading(mean, batch)?;
    let centered = g.sub(x, mean_b)?;
    let sq = g.mul(centered, centered)?;
    let ss = g.sum_leading(sq)?;
    let var = g.scale(ss, inv_b)?;
    let var_eps = g.add_const(var, BATCHNORM_EPSILON)?;
    let std = g.sqrt(var_eps)?;
    let inv = g.recip(std)?;
    let out = g.mul_row(centered, inv)?;
    Ok((out, g.value(mean).data().to_vec(), g.value(var).data().to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn relu_spec() -> NetworkSpec {
        NetworkSpec::critic(3, &[4, 4], &BlockOptions::default())
    }

    #[test]
    fn same_seed_gives_identical_parameters() {
        let a = Network::build(&relu_spec(), 11).unwrap();
        let b = Network::build(&relu_spec(), 11).unwrap();
        let c = Network::build(&relu_spec(), 12).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.param_hash(), c.param_hash());
    }

    #[test]
    fn he_uniform_bounds_and_zero_bias() {
        let net = Network::build(&relu_spec(), 3).unwrap();
        let w0 = &net.params()[0];
        let bound = (6.0f64 / 3.0).sqrt();
        assert!(w0.data().iter().all(|v| v.abs() <= bound));
        assert!(net.params()[1].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_weights_propagate_zero() {
        let mut net = Network::build(&relu_spec(), 3).unwrap();
        for p in net.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let out = net.predict(&Tensor::zeros(&[5, 3])).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn generator_output_in_tanh_range() {
        let opts = BlockOptions {
            batchnorm: true,
            attention_after: vec![0],
            ..BlockOptions::default()
        };
        let spec = NetworkSpec::generator(10, &[8, 16], 4, &opts);
        assert!(spec.has_attention() && spec.has_batchnorm());
        let mut net = Network::build(&spec, 5).unwrap();
        let z = Tensor::new(vec![6, 10], (0..60).map(|i| (i as f64 * 0.37).sin() * 3.0).collect()).unwrap();
        let mut g = Graph::new();
        let b = net.bind(&mut g, true);
        let zv = g.constant(z.clone());
        let y = net.forward(&mut g, &b, zv, Mode::Train).unwrap();
        assert_eq!(g.shape(y), &[6, 4]);
        assert!(g.value(y).data().iter().all(|v| v.abs() <= 1.0));
        let eval = net.predict(&z).unwrap();
        assert!(eval.data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn invalid_specs_are_config_errors() {
        let mut spec = relu_spec();
        spec.layers.insert(0, LayerSpec::Dense { units: 0 });
        assert!(matches!(Network::build(&spec, 0), Err(Error::Config(_))));

        let mut spec = relu_spec();
        spec.layers.push(LayerSpec::Dense { units: 3 });
        assert!(matches!(spec.validate(), Err(Error::Config(_))));

        let mut spec = NetworkSpec::generator(4, &[4], 2, &BlockOptions::default());
        spec.layers.pop();
        assert!(spec.validate().is_err());
    }

    #[test]
    fn wrong_input_width_is_shape_error() {
        let net = Network::build(&relu_spec(), 0).unwrap();
        assert!(matches!(
            net.predict(&Tensor::zeros(&[2, 4])),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn batchnorm_running_stats_move_toward_batch() {
        let opts = BlockOptions {
            batchnorm: true,
            ..BlockOptions::default()
        };
        let spec = NetworkSpec::generator(2, &[3], 2, &opts);
        let mut net = Network::build(&spec, 1).unwrap();
        let before = net.batchnorm_stats()[0].clone();
        let mut g = Graph::new();
        let b = net.bind(&mut g, false);
        let x = g.constant(Tensor::new(vec![4, 2], vec![1.0, 2.0, -1.0, 0.5, 3.0, -2.0, 0.0, 1.0]).unwrap());
        net.forward(&mut g, &b, x, Mode::Train).unwrap();
        assert_ne!(before, net.batchnorm_stats()[0]);
    }
}
