//! The three-player training loop: `n_critic` critic steps, one JS
//! discriminator step and one generator step per epoch.
//!
//! Each phase draws from its own RNG stream, so enabling the discriminator
//! never shifts the minibatches or noise seen by the critic and generator.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::layers::{BlockOptions, Checkpoint, Mode, Network, NetworkSpec, DEFAULT_KEY_DIM};
use crate::losses::{self, GpSample, LossBreakdown};
use crate::optim::{clip_global_norm, Adam, AdamConfig};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Plain,
    Sa,
    Js,
    SaJs,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Plain, Variant::Sa, Variant::Js, Variant::SaJs];

    pub fn has_attention(self) -> bool {
        matches!(self, Variant::Sa | Variant::SaJs)
    }

    pub fn has_discriminator(self) -> bool {
        matches!(self, Variant::Js | Variant::SaJs)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Plain => "plain",
            Variant::Sa => "sa",
            Variant::Js => "js",
            Variant::SaJs => "sa_js",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Variant::Plain),
            "sa" => Ok(Variant::Sa),
            "js" => Ok(Variant::Js),
            "sa_js" => Ok(Variant::SaJs),
            other => Err(Error::config(format!("unknown variant {:?}", other))),
        }
    }
}

/// How the JS regularizer weight evolves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    Constant,
    /// `r = L_C / L_D`.
    Ratio,
    /// `r = |L_C| / (L_D + eps)`.
    AbsRatio,
}

impl FromStr for ScheduleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(ScheduleMode::Constant),
            "ratio" => Ok(ScheduleMode::Ratio),
            "abs_ratio" => Ok(ScheduleMode::AbsRatio),
            other => Err(Error::config(format!("unknown schedule {:?}", other))),
        }
    }
}

impl ScheduleMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleMode::Constant => "constant",
            ScheduleMode::Ratio => "ratio",
            ScheduleMode::AbsRatio => "abs_ratio",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub n_critic: usize,
    pub epochs: usize,
    pub lr_g: f64,
    pub lr_c: f64,
    pub lr_d: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub lambda_gp: f64,
    pub latent_dim: usize,
    pub grad_clip_norm: f64,
    pub seed: u64,
    pub variant: Variant,
    pub lambda_js: f64,
    pub schedule: ScheduleMode,
    pub update_period: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            n_critic: 5,
            epochs: 10_000,
            lr_g: 1e-4,
            lr_c: 1e-4,
            lr_d: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.9,
            lambda_gp: 10.0,
            latent_dim: 100,
            grad_clip_norm: 1.0,
            seed: 0,
            variant: Variant::Plain,
            lambda_js: 1.0,
            schedule: ScheduleMode::Ratio,
            update_period: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.n_critic == 0 || self.latent_dim == 0 {
            return Err(Error::config("batch_size, n_critic and latent_dim must be positive"));
        }
        for (name, v) in [("lr_g", self.lr_g), ("lr_c", self.lr_c), ("lr_d", self.lr_d)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{} must be positive", name)));
            }
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::config("Adam betas must lie in [0, 1)"));
        }
        if self.lambda_gp < 0.0 || self.grad_clip_norm < 0.0 {
            return Err(Error::config("lambda_gp and grad_clip_norm must be non-negative"));
        }
        if !(0.0..=JS_LAMBDA_MAX).contains(&self.lambda_js) {
            return Err(Error::config("lambda_js must lie in [0, 10]"));
        }
        if self.update_period == 0 {
            return Err(Error::config("update_period must be positive"));
        }
        Ok(())
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
        }
    }
}

/// Hidden widths and attention placement for the three networks.
///
/// Attention indices are ignored for variants without self-attention.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub generator_hidden: Vec<usize>,
    pub generator_attention_after: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub critic_attention_after: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub discriminator_attention_after: Vec<usize>,
    pub key_dim: usize,
    pub generator_batchnorm: bool,
    pub critic_batchnorm: bool,
}

impl Architecture {
    /// Full-size layouts per variant.
    pub fn paper(variant: Variant) -> Self {
        let (gh, ga, ch, ca, dh, da) = match variant {
            Variant::Plain => (vec![128, 256, 512], vec![], vec![512, 256, 128], vec![], vec![], vec![]),
            Variant::Sa => (
                vec![128, 256, 512],
                vec![0, 1, 2],
                vec![512, 256, 128],
                vec![1, 2],
                vec![],
                vec![],
            ),
            Variant::Js => (
                vec![64, 64, 128, 256, 512, 1024],
                vec![],
                vec![128, 64, 32, 16],
                vec![],
                vec![128, 64, 32, 16],
                vec![],
            ),
            Variant::SaJs => (
                vec![128, 256, 512],
                vec![0, 1, 2],
                vec![128, 64],
                vec![0, 1],
                vec![128, 64],
                vec![0, 1],
            ),
        };
        Architecture {
            generator_hidden: gh,
            generator_attention_after: ga,
            critic_hidden: ch,
            critic_attention_after: ca,
            discriminator_hidden: dh,
            discriminator_attention_after: da,
            key_dim: DEFAULT_KEY_DIM,
            generator_batchnorm: true,
            critic_batchnorm: false,
        }
    }

    /// Small layout shared by all variants, for toy data and desk-scale runs.
    /// Attention sits on the 16-wide layer.
    pub fn compact(width: usize) -> Self {
        Architecture {
            generator_hidden: vec![width, 8],
            generator_attention_after: vec![1],
            critic_hidden: vec![width, 8],
            critic_attention_after: vec![1],
            discriminator_hidden: vec![width, 8],
            discriminator_attention_after: vec![1],
            key_dim: 4,
            generator_batchnorm: false,
            critic_batchnorm: false,
        }
    }

    fn opts(&self, attention: &[usize], variant: Variant, batchnorm: bool) -> BlockOptions {
        BlockOptions {
            attention_after: if variant.has_attention() {
                attention.to_vec()
            } else {
                Vec::new()
            },
            key_dim: self.key_dim,
            batchnorm,
            ..BlockOptions::default()
        }
    }
}

/// Generator, critic, optional JS discriminator and their optimizer states.
#[derive(Clone, Debug)]
pub struct GanBundle {
    pub variant: Variant,
    pub latent_dim: usize,
    pub generator: Network,
    pub critic: Network,
    pub discriminator: Option<Network>,
    pub opt_g: Adam,
    pub opt_c: Adam,
    pub opt_d: Option<Adam>,
}

impl GanBundle {
    pub fn new(cfg: &TrainConfig, arch: &Architecture, data_dim: usize) -> Result<Self> {
        cfg.validate()?;
        let v = cfg.variant;
        let g_spec = NetworkSpec::generator(
            cfg.latent_dim,
            &arch.generator_hidden,
            data_dim,
            &arch.opts(&arch.generator_attention_after, v, arch.generator_batchnorm),
        );
        let c_spec = NetworkSpec::critic(
            data_dim,
            &arch.critic_hidden,
            &arch.opts(&arch.critic_attention_after, v, arch.critic_batchnorm),
        );
        let generator = Network::build(&g_spec, derive_seed(cfg.seed, 1))?;
        let critic = Network::build(&c_spec, derive_seed(cfg.seed, 2))?;
        let discriminator = if v.has_discriminator() {
            let d_spec = NetworkSpec::discriminator(
                data_dim,
                &arch.discriminator_hidden,
                &arch.opts(&arch.discriminator_attention_after, v, arch.critic_batchnorm),
            );
            Some(Network::build(&d_spec, derive_seed(cfg.seed, 3))?)
        } else {
            None
        };
        let opt_d = discriminator
            .as_ref()
            .map(|d| Adam::new(cfg.adam(cfg.lr_d), d.params()));
        let bundle = GanBundle {
            variant: v,
            latent_dim: cfg.latent_dim,
            opt_g: Adam::new(cfg.adam(cfg.lr_g), generator.params()),
            opt_c: Adam::new(cfg.adam(cfg.lr_c), critic.params()),
            generator,
            critic,
            discriminator,
            opt_d,
        };
        bundle.check()?;
        Ok(bundle)
    }

    /// Verifies the variant invariants.
    pub fn check(&self) -> Result<()> {
        let v = self.variant;
        if self.discriminator.is_some() != v.has_discriminator() || self.opt_d.is_some() != v.has_discriminator() {
            return Err(Error::contract(format!("variant {} and discriminator presence disagree", v)));
        }
        let attention = self.generator.spec().has_attention() || self.critic.spec().has_attention();
        if v.has_attention() && !attention {
            return Err(Error::contract(format!("variant {} requires attention blocks", v)));
        }
        let any_attention = attention
            || self
                .discriminator
                .as_ref()
                .map_or(false, |d| d.spec().has_attention());
        if !v.has_attention() && any_attention {
            return Err(Error::contract(format!("variant {} must not contain attention", v)));
        }
        Ok(())
    }

    pub fn data_dim(&self) -> usize {
        self.generator.output_dim()
    }

    /// Hashes of the generator, critic and (if present) discriminator.
    pub fn param_hashes(&self) -> (String, String, Option<String>) {
        (
            self.generator.param_hash(),
            self.critic.param_hash(),
            self.discriminator.as_ref().map(Network::param_hash),
        )
    }

    pub fn to_checkpoint(&self) -> BundleCheckpoint {
        BundleCheckpoint {
            variant: self.variant,
            latent_dim: self.latent_dim,
            generator: self.generator.to_checkpoint(),
            critic: self.critic.to_checkpoint(),
            discriminator: self.discriminator.as_ref().map(Network::to_checkpoint),
            opt_g: self.opt_g.clone(),
            opt_c: self.opt_c.clone(),
            opt_d: self.opt_d.clone(),
        }
    }

    pub fn from_checkpoint(ck: &BundleCheckpoint) -> Result<Self> {
        let b = GanBundle {
            variant: ck.variant,
            latent_dim: ck.latent_dim,
            generator: Network::from_checkpoint(&ck.generator)?,
            critic: Network::from_checkpoint(&ck.critic)?,
            discriminator: ck
                .discriminator
                .as_ref()
                .map(Network::from_checkpoint)
                .transpose()?,
            opt_g: ck.opt_g.clone(),
            opt_c: ck.opt_c.clone(),
            opt_d: ck.opt_d.clone(),
        };
        b.check()?;
        Ok(b)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BundleCheckpoint {
    pub variant: Variant,
    pub latent_dim: usize,
    pub generator: Checkpoint,
    pub critic: Checkpoint,
    pub discriminator: Option<Checkpoint>,
    pub opt_g: Adam,
    pub opt_c: Adam,
    pub opt_d: Option<Adam>,
}

impl BundleCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

pub const JS_LAMBDA_MIN: f64 = 0.1;
pub const JS_LAMBDA_MAX: f64 = 10.0;
pub const JS_STEP_UP: f64 = 1.05;
pub const JS_STEP_DOWN: f64 = 0.95;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JsScheduleState {
    pub lambda_js: f64,
    pub update_period: usize,
    pub mode: ScheduleMode,
    /// Last computed ratio, if an update has happened.
    pub ratio: Option<f64>,
    pub eps_denominator: f64,
    /// Updates where the denominator was zero and `eps_denominator` was used.
    pub zero_denominator_events: u64,
}

impl JsScheduleState {
    pub fn new(lambda_js: f64, update_period: usize, mode: ScheduleMode) -> Self {
        JsScheduleState {
            lambda_js,
            update_period: update_period.max(1),
            mode,
            ratio: None,
            eps_denominator: 1e-8,
            zero_denominator_events: 0,
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self::new(cfg.lambda_js, cfg.update_period, cfg.schedule)
    }

    /// Applies the multiplicative rule when `epoch` is a multiple of the
    /// update period. Returns whether an update happened.
    pub fn update(&mut self, l_c: f64, l_js: f64, epoch: usize) -> bool {
        if self.mode == ScheduleMode::Constant || epoch == 0 || epoch % self.update_period != 0 {
            return false;
        }
        let r = match self.mode {
            ScheduleMode::Ratio => {
                let den = if l_js == 0.0 {
                    self.zero_denominator_events += 1;
                    self.eps_denominator
                } else {
                    l_js
                };
                l_c / den
            }
            ScheduleMode::AbsRatio => l_c.abs() / (l_js + self.eps_denominator),
            ScheduleMode::Constant => unreachable!(),
        };
        self.ratio = Some(r);
        let factor = if r > 1.0 { JS_STEP_UP } else { JS_STEP_DOWN };
        self.lambda_js = (self.lambda_js * factor).clamp(JS_LAMBDA_MIN, JS_LAMBDA_MAX);
        true
    }
}

/// Free-function form of [`JsScheduleState::update`].
pub fn update_lambda_js(sched: &JsScheduleState, l_c: f64, l_js: f64, epoch: usize) -> JsScheduleState {
    let mut next = sched.clone();
    next.update(l_c, l_js, epoch);
    next
}

/// Independent RNG streams for the three phases.
#[derive(Clone, Debug)]
pub struct PhaseRngs {
    pub critic: ChaCha8Rng,
    pub discriminator: ChaCha8Rng,
    pub generator: ChaCha8Rng,
}

impl PhaseRngs {
    pub fn new(seed: u64) -> Self {
        let stream = |s: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        };
        PhaseRngs {
            critic: stream(1),
            discriminator: stream(2),
            generator: stream(3),
        }
    }
}

/// SplitMix64 mix of a base seed and a tag.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn standard_normal<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::from_parts(vec![rows, cols], data)
}

/// Draws `m` rows; with replacement only when `m` exceeds the row count.
pub fn sample_batch<R: Rng>(data: &Tensor, m: usize, rng: &mut R) -> Result<(Tensor, bool)> {
    let n = data.rows();
    if n == 0 {
        return Err(Error::contract("cannot sample from an empty dataset"));
    }
    if m <= n {
        let idx = sample_indices(rng, n, m).into_vec();
        Ok((data.select_rows(&idx), false))
    } else {
        let idx: Vec<usize> = (0..m).map(|_| rng.gen_range(0..n)).collect();
        Ok((data.select_rows(&idx), true))
    }
}

/// Loss values of one critic step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CriticStep {
    pub wasserstein: f64,
    pub gp: f64,
    pub total: f64,
}

/// Phase (A): one critic update. The generator is evaluated as a constant.
pub fn critic_step<R: Rng>(
    bundle: &mut GanBundle,
    data: &Tensor,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(CriticStep, bool)> {
    let (real, replaced) = sample_batch(data, cfg.batch_size, rng)?;
    let m = real.rows();
    let z = standard_normal(m, bundle.latent_dim, rng);
    let mut g = Graph::new();
    let gb = bundle.generator.bind(&mut g, false);
    let zv = g.constant(z);
    let fake_v = bundle.generator.forward(&mut g, &gb, zv, Mode::Train)?;
    let fake = g.value(fake_v).clone();
    let sample = GpSample::draw(&real, &fake, rng)?;

    let cb = bundle.critic.bind(&mut g, true);
    let rv = g.constant(real);
    let fv = g.constant(fake);
    let sr = bundle.critic.forward(&mut g, &cb, rv, Mode::Train)?;
    let sf = bundle.critic.forward(&mut g, &cb, fv, Mode::Train)?;
    let w = losses::wasserstein_critic_graph(&mut g, sr, sf)?;
    let critic = &mut bundle.critic;
    let gp = losses::gradient_penalty_graph(&mut g, &sample.x_hat, |g, x| {
        critic.forward(g, &cb, x, Mode::Train)
    })?;
    let pen = g.scale(gp, cfg.lambda_gp)?;
    let loss = g.add(w, pen)?;
    let step = CriticStep {
        wasserstein: g.value(w).item(),
        gp: g.value(gp).item(),
        total: g.value(loss).item(),
    };
    let mut grads = g.grad_values(loss, cb.vars())?;
    clip_global_norm(&mut grads, cfg.grad_clip_norm);
    bundle.opt_c.step(bundle.critic.params_mut(), &grads)?;
    Ok((step, replaced))
}

/// Phase (B): one discriminator update; returns the BCE loss. A no-op
/// returning `None` for variants without a discriminator.
pub fn discriminator_step<R: Rng>(
    bundle: &mut GanBundle,
    data: &Tensor,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Option<f64>> {
    let (disc, opt) = match (bundle.discriminator.as_mut(), bundle.opt_d.as_mut()) {
        (Some(d), Some(o)) => (d, o),
        _ => return Ok(None),
    };
    let (real, _) = sample_batch(data, cfg.batch_size, rng)?;
    let z = standard_normal(real.rows(), bundle.latent_dim, rng);
    let mut g = Graph::new();
    let gb = bundle.generator.bind(&mut g, false);
    let zv = g.constant(z);
    let fake_v = bundle.generator.forward(&mut g, &gb, zv, Mode::Train)?;
    let fake = g.value(fake_v).clone();
    let db = disc.bind(&mut g, true);
    let rv = g.constant(real);
    let fv = g.constant(fake);
    let ur = disc.forward(&mut g, &db, rv, Mode::Train)?;
    let uf = disc.forward(&mut g, &db, fv, Mode::Train)?;
    let loss = losses::js_discriminator_graph(&mut g, ur, uf)?;
    let value = g.value(loss).item();
    let mut grads = g.grad_values(loss, db.vars())?;
    clip_global_norm(&mut grads, cfg.grad_clip_norm);
    opt.step(disc.params_mut(), &grads)?;
    Ok(Some(value))
}

/// Phase (C): one generator update against the frozen critic and
/// discriminator. Only the generator fields of the breakdown are set.
pub fn generator_step<R: Rng>(
    bundle: &mut GanBundle,
    cfg: &TrainConfig,
    lambda_js: f64,
    rng: &mut R,
) -> Result<LossBreakdown> {
    let z = standard_normal(cfg.batch_size, bundle.latent_dim, rng);
    let mut g = Graph::new();
    let gb = bundle.generator.bind(&mut g, true);
    let zv = g.constant(z);
    let fake = bundle.generator.forward(&mut g, &gb, zv, Mode::Train)?;
    let cb = bundle.critic.bind(&mut g, false);
    let sf = bundle.critic.forward(&mut g, &cb, fake, Mode::Train)?;
    let ms = g.mean(sf)?;
    let l_w = g.neg(ms)?;
    let (total, l_js) = match bundle.discriminator.as_mut() {
        Some(disc) => {
            let db = disc.bind(&mut g, false);
            let uf = disc.forward(&mut g, &db, fake, Mode::Train)?;
            let js = losses::generator_js_graph(&mut g, uf)?;
            let weighted = g.scale(js, lambda_js)?;
            (g.add(l_w, weighted)?, g.value(js).item())
        }
        None => (l_w, 0.0),
    };
    let out = LossBreakdown {
        l_g_wasserstein: g.value(l_w).item(),
        l_g_js: l_js,
        l_g_total: g.value(total).item(),
        ..LossBreakdown::default()
    };
    let mut grads = g.grad_values(total, gb.vars())?;
    clip_global_norm(&mut grads, cfg.grad_clip_norm);
    bundle.opt_g.step(bundle.generator.params_mut(), &grads)?;
    Ok(out)
}

/// Summary of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Epoch-final losses of every phase.
    pub losses: LossBreakdown,
    /// Mean critic total loss over the epoch's critic steps.
    pub critic_mean: f64,
    pub lambda_js: f64,
}

/// Result of one pass over the three phases.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochOutcome {
    /// Epoch-final losses of every phase.
    pub losses: LossBreakdown,
    /// Mean critic total loss over the epoch's critic steps.
    pub critic_mean: f64,
    /// Whether any minibatch had to be drawn with replacement.
    pub replaced: bool,
}

/// Runs phases (A), (B) and (C) once with the current λ_JS. The schedule
/// itself is advanced by the caller (see [`Trainer::step_epoch`]).
pub fn train_epoch(
    bundle: &mut GanBundle,
    data: &Tensor,
    cfg: &TrainConfig,
    sched: &JsScheduleState,
    rngs: &mut PhaseRngs,
) -> Result<EpochOutcome> {
    let mut losses = LossBreakdown::default();
    let mut replaced = false;
    let mut critic_sum = 0.0;
    for _ in 0..cfg.n_critic {
        let (s, r) = critic_step(bundle, data, cfg, &mut rngs.critic)?;
        replaced |= r;
        critic_sum += s.total;
        losses.l_c_wasserstein = s.wasserstein;
        losses.gp_term = s.gp;
        losses.l_c_total = s.total;
    }
    if let Some(l_d) = discriminator_step(bundle, data, cfg, &mut rngs.discriminator)? {
        losses.l_d_bce = l_d;
    }
    let lambda = if bundle.discriminator.is_some() { sched.lambda_js } else { 0.0 };
    let gl = generator_step(bundle, cfg, lambda, &mut rngs.generator)?;
    losses.l_g_wasserstein = gl.l_g_wasserstein;
    losses.l_g_js = gl.l_g_js;
    losses.l_g_total = gl.l_g_total;
    Ok(EpochOutcome {
        losses,
        critic_mean: critic_sum / cfg.n_critic as f64,
        replaced,
    })
}

/// Owns a bundle, its data slice, RNG streams, schedule state and history.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub bundle: GanBundle,
    pub schedule: JsScheduleState,
    pub history: Vec<EpochRecord>,
    pub warnings: Vec<String>,
    rngs: PhaseRngs,
    data: Tensor,
    window_c: Vec<f64>,
    window_d: Vec<f64>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, arch: &Architecture, data: Tensor) -> Result<Self> {
        if data.shape().len() != 2 || data.rows() == 0 {
            return Err(Error::contract("training data must be a non-empty matrix"));
        }
        if data.data().iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::contract("training data must lie in [-1, 1]"));
        }
        let bundle = GanBundle::new(&cfg, arch, data.cols())?;
        let mut warnings = Vec::new();
        if cfg.batch_size > data.rows() {
            let msg = format!(
                "batch size {} exceeds {} rows; sampling with replacement",
                cfg.batch_size,
                data.rows()
            );
            log::warn!("{}", msg);
            warnings.push(msg);
        }
        Ok(Trainer {
            schedule: JsScheduleState::from_config(&cfg),
            rngs: PhaseRngs::new(cfg.seed),
            cfg,
            bundle,
            history: Vec::new(),
            warnings,
            data,
            window_c: Vec::new(),
            window_d: Vec::new(),
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }

    /// Trains one more epoch and records it.
    pub fn step_epoch(&mut self) -> Result<&EpochRecord> {
        let epoch = self.history.len() + 1;
        let lambda = if self.bundle.discriminator.is_some() {
            self.schedule.lambda_js
        } else {
            0.0
        };
        let out = train_epoch(
            &mut self.bundle,
            &self.data,
            &self.cfg,
            &self.schedule,
            &mut self.rngs,
        )?;
        let l = out.losses;
        let all = [
            l.l_c_wasserstein,
            l.gp_term,
            l.l_c_total,
            l.l_d_bce,
            l.l_g_wasserstein,
            l.l_g_js,
            l.l_g_total,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training loss"));
        }
        if self.bundle.discriminator.is_some() {
            self.window_c.push(out.critic_mean);
            self.window_d.push(l.l_d_bce);
            if epoch % self.schedule.update_period == 0 {
                let n = self.window_c.len() as f64;
                let lc = self.window_c.iter().sum::<f64>() / n;
                let ld = self.window_d.iter().sum::<f64>() / n;
                self.schedule.update(lc, ld, epoch);
                self.window_c.clear();
                self.window_d.clear();
            }
        }
        self.history.push(EpochRecord {
            epoch,
            losses: l,
            critic_mean: out.critic_mean,
            lambda_js: lambda,
        });
        Ok(self.history.last().expect("just pushed"))
    }

    /// Trains until `cfg.epochs` epochs are done.
    pub fn run(&mut self) -> Result<()> {
        while self.history.len() < self.cfg.epochs {
            self.step_epoch()?;
        }
        Ok(())
    }

    pub fn synthesize(&self, count: usize, seed: u64) -> Result<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        synthesize(&self.bundle, count, &mut rng)
    }
}

/// `G(z)` for `z ~ N(0, I)` with inference-mode batch norm.
pub fn synthesize<R: Rng>(bundle: &GanBundle, count: usize, rng: &mut R) -> Result<Tensor> {
    if count == 0 {
        return Err(Error::contract("synthesize needs a positive count"));
    }
    let z = standard_normal(count, bundle.latent_dim, rng);
    bundle.generator.predict(&z)
}

pub const HISTORY_HEADER: [&str; 10] = [
    "epoch",
    "l_c_wasserstein",
    "gp_term",
    "l_c_total",
    "critic_mean",
    "l_d_bce",
    "l_g_wasserstein",
    "l_g_js",
    "l_g_total",
    "lambda_js",
];

/// Writes one CSV row per epoch.
pub fn write_history_csv<W: Write>(out: W, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HISTORY_HEADER)?;
    for r in history {
        let l = &r.losses;
        w.write_record([
            r.epoch.to_string(),
            l.l_c_wasserstein.to_string(),
            l.gp_term.to_string(),
            l.l_c_total.to_string(),
            r.critic_mean.to_string(),
            l.l_d_bce.to_string(),
            l.l_g_wasserstein.to_string(),
            l.l_g_js.to_string(),
            l.l_g_total.to_string(),
            r.lambda_js.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
