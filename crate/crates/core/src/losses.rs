//! Adversarial objectives: the Wasserstein critic and generator losses, the
//! gradient penalty on interpolated points, the BCE loss of the auxiliary JS
//! discriminator and the generator's JS regularizer.
//!
//! Each objective has a value-level form over score slices and a graph form
//! used during training.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{stable_softplus, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Floor applied to the squared per-row gradient norm before the square
/// root, keeping the derivative finite at a zero gradient.
pub const GRAD_NORM_EPS: f64 = 1e-12;

/// Per-step loss values of all three players.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_c_wasserstein: f64,
    pub gp_term: f64,
    pub l_c_total: f64,
    pub l_d_bce: f64,
    pub l_g_wasserstein: f64,
    pub l_g_js: f64,
    pub l_g_total: f64,
}

fn mean(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    Ok(xs.iter().sum::<f64>() / xs.len() as f64)
}

/// `E[C(fake)] - E[C(real)]`, the critic loss without a penalty.
pub fn wasserstein_critic_loss(scores_real: &[f64], scores_fake: &[f64]) -> Result<f64> {
    if scores_real.len() != scores_fake.len() {
        return Err(Error::contract(format!(
            "critic batches differ: {} real vs {} fake",
            scores_real.len(),
            scores_fake.len()
        )));
    }
    Ok(mean(scores_fake)? - mean(scores_real)?)
}

pub fn critic_loss(scores_real: &[f64], scores_fake: &[f64], gp: f64, lambda_gp: f64) -> Result<f64> {
    if lambda_gp < 0.0 {
        return Err(Error::config("lambda_gp must be non-negative"));
    }
    Ok(wasserstein_critic_loss(scores_real, scores_fake)? + lambda_gp * gp)
}

/// `-[y log s(u) + (1 - y) log(1 - s(u))]` in logit space.
pub fn bce_with_logits(logit: f64, target: f64) -> f64 {
    target * stable_softplus(-logit) + (1.0 - target) * stable_softplus(logit)
}

pub fn js_discriminator_loss(logits_real: &[f64], logits_fake: &[f64]) -> Result<f64> {
    if logits_real.len() != logits_fake.len() {
        return Err(Error::contract("discriminator batches differ in size"));
    }
    let per: Vec<f64> = logits_real
        .iter()
        .zip(logits_fake)
        .map(|(&r, &f)| bce_with_logits(r, 1.0) + bce_with_logits(f, 0.0))
        .collect();
    mean(&per)
}

/// `E[-log s(D(G(z)))]`.
pub fn generator_js_regularizer(logits_fake: &[f64]) -> Result<f64> {
    let per: Vec<f64> = logits_fake.iter().map(|&u| bce_with_logits(u, 1.0)).collect();
    mean(&per)
}

/// Generator objective. Only the generator fields of the breakdown are set.
///
/// `lambda_js` is meaningful only together with discriminator logits.
pub fn generator_total_loss(
    scores_fake: &[f64],
    logits_fake: Option<&[f64]>,
    lambda_js: Option<f64>,
) -> Result<LossBreakdown> {
    let l_w = -mean(scores_fake)?;
    let (l_js, lambda) = match (logits_fake, lambda_js) {
        (None, Some(_)) => {
            return Err(Error::config(
                "lambda_js given but no discriminator logits are available",
            ))
        }
        (None, None) => (0.0, 0.0),
        (Some(u), lam) => {
            let lam = lam.unwrap_or(0.0);
            if lam < 0.0 {
                return Err(Error::config("lambda_js must be non-negative"));
            }
            if u.len() != scores_fake.len() {
                return Err(Error::contract("critic and discriminator batches differ"));
            }
            (generator_js_regularizer(u)?, lam)
        }
    };
    let total = if logits_fake.is_some() { l_w + lambda * l_js } else { l_w };
    Ok(LossBreakdown {
        l_g_wasserstein: l_w,
        l_g_js: l_js,
        l_g_total: total,
        ..LossBreakdown::default()
    })
}

/// Interpolation weights and points for one gradient-penalty evaluation.
#[derive(Clone, Debug)]
pub struct GpSample {
    pub eps: Vec<f64>,
    pub x_hat: Tensor,
}

impl GpSample {
    /// Draws one `eps ~ U(0, 1)` per row.
    pub fn draw<R: Rng>(x_real: &Tensor, x_fake: &Tensor, rng: &mut R) -> Result<Self> {
        let eps: Vec<f64> = (0..x_real.rows()).map(|_| rng.gen::<f64>()).collect();
        Self::with_eps(x_real, x_fake, eps)
    }

    pub fn with_eps(x_real: &Tensor, x_fake: &Tensor, eps: Vec<f64>) -> Result<Self> {
        if x_real.shape() != x_fake.shape() || x_real.shape().len() != 2 {
            return Err(Error::shape(
                "gradient_penalty",
                format!("real {:?} vs fake {:?}", x_real.shape(), x_fake.shape()),
            ));
        }
        if eps.len() != x_real.rows() {
            return Err(Error::contract("one interpolation weight per row is required"));
        }
        let d = x_real.cols();
        let mut data = Vec::with_capacity(x_real.len());
        for (i, &e) in eps.iter().enumerate() {
            let r = &x_real.data()[i * d..(i + 1) * d];
            let f = &x_fake.data()[i * d..(i + 1) * d];
            data.extend(r.iter().zip(f).map(|(&a, &b)| e * a + (1.0 - e) * b));
        }
        Ok(GpSample {
            eps,
            x_hat: Tensor::new(x_real.shape().to_vec(), data)?,
        })
    }
}

/// Critic loss `mean(fake) - mean(real)` on the graph.
pub fn wasserstein_critic_graph(g: &mut Graph, scores_real: Var, scores_fake: Var) -> Result<Var> {
    let mf = g.mean(scores_fake)?;
    let mr = g.mean(scores_real)?;
    g.sub(mf, mr)
}

/// Gradient penalty `mean_i (||grad_x C(x_hat_i)|| - 1)^2` on the graph.
///
/// `x_hat` is inserted as a differentiable leaf. The returned node depends on
/// the critic parameters through the input gradient, so backpropagating it
/// yields the second-order term the critic update needs.
pub fn gradient_penalty_graph<F>(g: &mut Graph, x_hat: &Tensor, mut critic: F) -> Result<Var>
where
    F: FnMut(&mut Graph, Var) -> Result<Var>,
{
    let batch = x_hat.rows();
    let x = g.param(x_hat.clone());
    let scores = critic(g, x)?;
    if g.shape(scores) != [batch, 1] {
        return Err(Error::contract(format!(
            "critic must return one score per row, got shape {:?}",
            g.shape(scores)
        )));
    }
    let total = g.sum(scores)?;
    let grad = g.grad(total, &[x])?[0];
    let sq = g.mul(grad, grad)?;
    let ss = g.sum_last(sq)?;
    let ss = g.clamp_min(ss, GRAD_NORM_EPS)?;
    let norm = g.sqrt(ss)?;
    let dev = g.add_const(norm, -1.0)?;
    let dev2 = g.mul(dev, dev)?;
    g.mean(dev2)
}

/// Value-level gradient penalty with freshly drawn interpolation weights.
pub fn gradient_penalty<F, R>(x_real: &Tensor, x_fake: &Tensor, rng: &mut R, critic: F) -> Result<f64>
where
    F: FnMut(&mut Graph, Var) -> Result<Var>,
    R: Rng,
{
    let sample = GpSample::draw(x_real, x_fake, rng)?;
    let mut g = Graph::new();
    let gp = gradient_penalty_graph(&mut g, &sample.x_hat, critic)?;
    Ok(g.value(gp).item())
}

/// `mean[BCE(u_real, 1) + BCE(u_fake, 0)]` on the graph.
pub fn js_discriminator_graph(g: &mut Graph, logits_real: Var, logits_fake: Var) -> Result<Var> {
    let nr = g.neg(logits_real)?;
    let a = g.softplus(nr)?;
    let b = g.softplus(logits_fake)?;
    let ma = g.mean(a)?;
    let mb = g.mean(b)?;
    g.add(ma, mb)
}

/// `mean[-log s(u_fake)]` on the graph.
pub fn generator_js_graph(g: &mut Graph, logits_fake: Var) -> Result<Var> {
    let n = g.neg(logits_fake)?;
    let sp = g.softplus(n)?;
    g.mean(sp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn critic_loss_examples() {
        assert_eq!(critic_loss(&[1.0, 1.0], &[0.0, 0.0], 0.0, 10.0).unwrap(), -1.0);
        assert_eq!(critic_loss(&[0.3, -2.0], &[0.3, -2.0], 0.0, 10.0).unwrap(), 0.0);
        assert_eq!(critic_loss(&[2.0, 4.0], &[1.0, 1.0], 0.5, 10.0).unwrap(), 3.0);
        assert!(matches!(critic_loss(&[], &[], 0.0, 1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn no_penalty_reduces_to_plain_wasserstein() {
        let r = [0.4, -1.2, 3.3];
        let f = [0.1, 0.0, -0.7];
        assert_eq!(
            critic_loss(&r, &f, 123.0, 0.0).unwrap(),
            wasserstein_critic_loss(&r, &f).unwrap()
        );
    }

    #[test]
    fn bce_examples() {
        assert!((js_discriminator_loss(&[0.0], &[0.0]).unwrap() - 2.0 * LN2).abs() < 1e-12);
        assert!(js_discriminator_loss(&[30.0], &[-30.0]).unwrap() < 1e-12);
        let v = js_discriminator_loss(&[0.5], &[-0.5]).unwrap();
        let expected = 2.0 * (1.0 + (-0.5f64).exp()).ln();
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.948).abs() < 1e-3);
        assert!(js_discriminator_loss(&[1e6], &[-1e6]).unwrap().is_finite());
    }

    #[test]
    fn js_regularizer_examples() {
        assert!((generator_js_regularizer(&[0.0]).unwrap() - LN2).abs() < 1e-15);
        assert!(generator_js_regularizer(&[30.0]).unwrap() < 1e-12);
    }

    #[test]
    fn generator_total_examples() {
        assert_eq!(generator_total_loss(&[1.0, 3.0], None, None).unwrap().l_g_total, -2.0);
        let b = generator_total_loss(&[0.0], Some(&[0.0]), Some(1.0)).unwrap();
        assert!((b.l_g_total - LN2).abs() < 1e-15);
        let plain = generator_total_loss(&[0.7, -0.2], None, None).unwrap();
        let zero = generator_total_loss(&[0.7, -0.2], Some(&[1.0, 2.0]), Some(0.0)).unwrap();
        assert_eq!(plain.l_g_total, zero.l_g_total);
        assert!(matches!(
            generator_total_loss(&[0.0], None, Some(1.0)),
            Err(Error::Config(_))
        ));
    }

    fn linear_critic(w: Vec<f64>) -> impl FnMut(&mut Graph, Var) -> Result<Var> {
        move |g: &mut Graph, x: Var| {
            let n = w.len();
            let wv = g.constant(Tensor::new(vec![n, 1], w.clone()).unwrap());
            g.matmul(x, wv)
        }
    }

    #[test]
    fn unit_linear_critic_has_zero_penalty() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let real = Tensor::new(vec![3, 2], vec![1.0, 2.0, -0.5, 0.3, 0.9, -0.9]).unwrap();
        let fake = Tensor::new(vec![3, 2], vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let gp = gradient_penalty(&real, &fake, &mut rng, linear_critic(vec![0.6, 0.8])).unwrap();
        assert_eq!(gp, 0.0);
        let gp1 = gradient_penalty(&real, &fake, &mut rng, linear_critic(vec![0.0, -1.0])).unwrap();
        assert_eq!(gp1, 0.0);
        let gp2 = gradient_penalty(&real, &fake, &mut rng, linear_critic(vec![2.0, 0.0])).unwrap();
        assert_eq!(gp2, 1.0);
    }

    #[test]
    fn non_scalar_critic_is_contract_error() {
        let x = Tensor::zeros(&[2, 2]);
        let mut g = Graph::new();
        let r = gradient_penalty_graph(&mut g, &x, |_g, v| Ok(v));
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn interpolation_is_rowwise() {
        let real = Tensor::new(vec![2, 2], vec![1.0, 1.0, 2.0, 2.0]).unwrap();
        let fake = Tensor::new(vec![2, 2], vec![0.0, 0.0, 0.0, 0.0]).unwrap();
        let s = GpSample::with_eps(&real, &fake, vec![0.25, 0.5]).unwrap();
        assert_eq!(s.x_hat.data(), &[0.25, 0.25, 1.0, 1.0]);
        assert!(GpSample::with_eps(&real, &Tensor::zeros(&[2, 3]), vec![0.1, 0.2]).is_err());
    }
}
