//! Central-difference checks of graph gradients.
//!
//! The suites here build small random networks and losses and report the
//! worst relative error over a number of random instances. Tests and the
//! acceptance run both call them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::layers::{Activation, Bound, LayerSpec, Mode, Network, NetworkSpec, Role};
use crate::losses;
use crate::tensor::Tensor;

/// Step used by the suites.
pub const STEP: f64 = 1e-6;

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape")
}

/// Norm-wise relative error `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-8)
}

/// Compares graph gradients of a scalar objective with central differences.
///
/// The error is taken over the gradient of all inputs concatenated, so a
/// tensor whose gradient vanishes analytically (a bias feeding batch norm,
/// say) is judged against the scale of the whole gradient rather than
/// against its own rounding noise.
pub fn check<F>(inputs: &[Tensor], h: f64, mut f: F) -> Result<f64>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let analytic: Vec<f64> = g.grad_values(out, &vars)?.into_iter().flat_map(Tensor::into_data).collect();

    let mut eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };
    let mut numeric = Vec::with_capacity(analytic.len());
    for (k, t) in inputs.iter().enumerate() {
        for i in 0..t.len() {
            let mut xs = inputs.to_vec();
            xs[k].data_mut()[i] = t.data()[i] + h;
            let up = eval(&xs)?;
            xs[k].data_mut()[i] = t.data()[i] - h;
            let down = eval(&xs)?;
            numeric.push((up - down) / (2.0 * h));
        }
    }
    Ok(rel_error(&analytic, &numeric))
}

fn classifier(layers: Vec<LayerSpec>, input_dim: usize) -> NetworkSpec {
    NetworkSpec { role: Role::Classifier, input_dim, layers }
}

/// Parameters moved off the init so biases and BN affine terms are
/// non-trivial.
fn perturbed(net: &Network, scale: f64, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    net.params()
        .iter()
        .map(|p| {
            let noise = uniform(p.shape(), -scale, scale, rng);
            p.zip_map(&noise, |a, b| a + b).expect("same shape")
        })
        .collect()
}

/// Error of `sum(net(x) * proj)` over the input and all parameters.
fn check_network(spec: &NetworkSpec, batch: usize, seed: u64, mode: Mode) -> Result<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let net = Network::build(spec, seed)?;
    let mut params = perturbed(&net, 0.3, &mut r);
    let x = uniform(&[batch, spec.input_dim], -1.0, 1.0, &mut r);
    let proj = uniform(&[batch, spec.output_dim()?], -1.0, 1.0, &mut r);
    params.insert(0, x);
    check(&params, STEP, |g, vars| {
        let mut net = net.clone();
        let bound = Bound::from_vars(vars[1..].to_vec());
        let out = net.forward(g, &bound, vars[0], mode)?;
        let p = g.constant(proj.clone());
        let prod = g.mul(out, p)?;
        g.sum(prod)
    })
}

/// Worst error per layer type over `instances` random instances. Each
/// non-dense layer sits between two dense layers.
pub fn layer_suite(instances: u64) -> Result<Vec<(&'static str, f64)>> {
    let cases: Vec<(&'static str, Option<LayerSpec>, Mode)> = vec![
        ("dense", None, Mode::Train),
        ("leaky_relu", Some(LayerSpec::Activation { activation: Activation::leaky() }), Mode::Train),
        ("tanh", Some(LayerSpec::Activation { activation: Activation::Tanh }), Mode::Train),
        ("sigmoid", Some(LayerSpec::Activation { activation: Activation::Sigmoid }), Mode::Train),
        ("batchnorm/train", Some(LayerSpec::BatchNorm), Mode::Train),
        ("batchnorm/eval", Some(LayerSpec::BatchNorm), Mode::Eval),
        ("attention", Some(LayerSpec::Attention { key_dim: 3 }), Mode::Train),
    ];
    let mut out = Vec::new();
    for (name, layer, mode) in cases {
        let mut worst: f64 = 0.0;
        for seed in 0..instances {
            let err = match &layer {
                None => check_network(&classifier(vec![LayerSpec::Dense { units: 3 }], 4), 5, seed, mode)?,
                Some(l) => {
                    let spec = classifier(
                        vec![LayerSpec::Dense { units: 5 }, l.clone(), LayerSpec::Dense { units: 3 }],
                        4,
                    );
                    check_network(&spec, 6, 100 + seed, mode)?
                }
            };
            worst = worst.max(err);
        }
        out.push((name, worst));
    }
    Ok(out)
}

/// Dense, LeakyReLU, dense: a 2-layer critic on 3 inputs.
pub fn small_critic(seed: u64) -> Result<Network> {
    let spec = NetworkSpec {
        role: Role::Critic,
        input_dim: 3,
        layers: vec![
            LayerSpec::Dense { units: 6 },
            LayerSpec::Activation { activation: Activation::leaky() },
            LayerSpec::Dense { units: 1 },
        ],
    };
    Network::build(&spec, seed)
}

fn critic_error(seed: u64) -> Result<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let net = small_critic(seed)?;
    let real = uniform(&[5, 3], -1.0, 1.0, &mut r);
    let fake = uniform(&[5, 3], -1.0, 1.0, &mut r);
    let eps: Vec<f64> = uniform(&[5], 0.0, 1.0, &mut r).into_data();
    let x_hat = losses::GpSample::with_eps(&real, &fake, eps)?.x_hat;
    let params = perturbed(&net, 0.2, &mut r);
    check(&params, STEP, |g, vars| {
        let mut net = net.clone();
        let bound = Bound::from_vars(vars.to_vec());
        let rv = g.constant(real.clone());
        let fv = g.constant(fake.clone());
        let sr = net.forward(g, &bound, rv, Mode::Train)?;
        let sf = net.forward(g, &bound, fv, Mode::Train)?;
        let w = losses::wasserstein_critic_graph(g, sr, sf)?;
        let gp = losses::gradient_penalty_graph(g, &x_hat, |g, x| net.forward(g, &bound, x, Mode::Train))?;
        let pen = g.scale(gp, 10.0)?;
        g.add(w, pen)
    })
}

/// Error of the gradient of the GP term alone w.r.t. critic weights, which
/// needs a backward pass through a gradient.
pub fn gp_double_backward_error(seed: u64) -> Result<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed + 50);
    let net = small_critic(seed + 50)?;
    let x_hat = uniform(&[7, 3], -1.0, 1.0, &mut r);
    let params = perturbed(&net, 0.2, &mut r);
    check(&params, STEP, |g, vars| {
        let mut net = net.clone();
        let bound = Bound::from_vars(vars.to_vec());
        losses::gradient_penalty_graph(g, &x_hat, |g, x| net.forward(g, &bound, x, Mode::Train))
    })
}

fn bce_error(seed: u64) -> Result<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed + 200);
    let ur = uniform(&[6, 1], -4.0, 4.0, &mut r);
    let uf = uniform(&[6, 1], -4.0, 4.0, &mut r);
    check(&[ur, uf], STEP, |g, v| losses::js_discriminator_graph(g, v[0], v[1]))
}

/// `-mean C(G(z)) + lambda * softplus(-D(G(z)))` w.r.t. generator weights;
/// with `lambda = 0` this is the plain generator loss.
fn generator_error(seed: u64, with_js: bool) -> Result<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed + 300);
    let critic = small_critic(seed + 300)?;
    let disc = small_critic(seed + 301)?;
    let gen_spec = NetworkSpec {
        role: Role::Generator,
        input_dim: 4,
        layers: vec![
            LayerSpec::Dense { units: 5 },
            LayerSpec::BatchNorm,
            LayerSpec::Activation { activation: Activation::leaky() },
            LayerSpec::Dense { units: 3 },
            LayerSpec::Activation { activation: Activation::Tanh },
        ],
    };
    let gen = Network::build(&gen_spec, seed)?;
    let z = uniform(&[6, 4], -1.5, 1.5, &mut r);
    let lambda = if with_js { r.gen_range(0.1..10.0) } else { 0.0 };
    let params = perturbed(&gen, 0.2, &mut r);
    check(&params, STEP, |g, vars| {
        let mut gen = gen.clone();
        let mut critic = critic.clone();
        let mut disc = disc.clone();
        let bound = Bound::from_vars(vars.to_vec());
        let zv = g.constant(z.clone());
        let fake = gen.forward(g, &bound, zv, Mode::Train)?;
        let cb = critic.bind(g, false);
        let s = critic.forward(g, &cb, fake, Mode::Train)?;
        let ms = g.mean(s)?;
        let lw = g.neg(ms)?;
        if !with_js {
            return Ok(lw);
        }
        let db = disc.bind(g, false);
        let u = disc.forward(g, &db, fake, Mode::Train)?;
        let js = losses::generator_js_graph(g, u)?;
        let wjs = g.scale(js, lambda)?;
        g.add(lw, wjs)
    })
}

/// Worst error per loss over `instances` random instances.
pub fn loss_suite(instances: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut worst = [0.0f64; 4];
    for seed in 0..instances {
        worst[0] = worst[0].max(critic_error(seed)?);
        worst[1] = worst[1].max(bce_error(seed)?);
        worst[2] = worst[2].max(generator_error(seed, false)?);
        worst[3] = worst[3].max(generator_error(seed, true)?);
    }
    Ok(vec![
        ("critic+gp", worst[0]),
        ("discriminator_bce", worst[1]),
        ("generator_wgan", worst[2]),
        ("generator_total", worst[3]),
    ])
}
