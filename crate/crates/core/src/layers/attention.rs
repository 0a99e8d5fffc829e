use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Scaled dot-product self-attention over the scalar tokens of a dense
/// projection.
///
/// A width-`L` activation is reshaped to `L` tokens of width 1. Each token is
/// projected to a query and key of width `key_dim` and to a value of width 1,
/// so the block output has the same shape as its input and the caller can add
/// the residual directly.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionBlock {
    pub w_query: Tensor,
    pub w_key: Tensor,
    pub w_value: Tensor,
    pub key_dim: usize,
}

/// Output of [`AttentionBlock::forward_tokens`].
#[derive(Clone, Debug)]
pub struct AttentionOutput {
    /// `[L, 1]` weighted sums of values, without the residual.
    pub output: Tensor,
    /// `[L, L]` attention weights; row `i` holds `alpha_ij` over `j`.
    pub weights: Tensor,
}

impl AttentionBlock {
    pub fn new(w_query: Tensor, w_key: Tensor, w_value: Tensor) -> Result<Self> {
        let key_dim = *w_query.shape().last().unwrap_or(&0);
        if key_dim == 0 {
            return Err(Error::config("attention key dimension must be positive"));
        }
        if w_query.shape() != [1, key_dim] || w_key.shape() != [1, key_dim] {
            return Err(Error::shape(
                "attention",
                format!(
                    "query/key projections must be [1, {}], got {:?} and {:?}",
                    key_dim,
                    w_query.shape(),
                    w_key.shape()
                ),
            ));
        }
        if w_value.shape() != [1, 1] {
            return Err(Error::shape(
                "attention",
                format!("value projection must be [1, 1], got {:?}", w_value.shape()),
            ));
        }
        Ok(AttentionBlock {
            w_query,
            w_key,
            w_value,
            key_dim,
        })
    }

    /// He-uniform projections with fan-in equal to the token width.
    pub fn init(key_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if key_dim == 0 {
            return Err(Error::config("attention key dimension must be positive"));
        }
        let bound = 6.0_f64.sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-bound..bound)).collect() };
        let wq = Tensor::new(vec![1, key_dim], draw(key_dim))?;
        let wk = Tensor::new(vec![1, key_dim], draw(key_dim))?;
        let wv = Tensor::new(vec![1, 1], draw(1))?;
        Self::new(wq, wk, wv)
    }

    /// Attention over a single sequence of `L` scalar tokens, shape `[L, 1]`.
    pub fn forward_tokens(&self, tokens: &Tensor) -> Result<AttentionOutput> {
        let l = match tokens.shape() {
            [l, 1] => *l,
            s => {
                return Err(Error::shape(
                    "attention",
                    format!("tokens must be [L, 1], got {:?}", s),
                ))
            }
        };
        let mut g = Graph::new();
        let x = g.constant(tokens.reshape(&[1, l])?);
        let wq = g.constant(self.w_query.clone());
        let wk = g.constant(self.w_key.clone());
        let wv = g.constant(self.w_value.clone());
        let (out, weights) = attend(&mut g, x, wq, wk, wv, self.key_dim)?;
        Ok(AttentionOutput {
            output: g.value(out).reshape(&[l, 1])?,
            weights: g.value(weights).reshape(&[l, l])?,
        })
    }
}

/// Graph form of the block for a batch `x: [B, L]`.
///
/// Returns the `[B, L]` attention output (no residual) and the `[B, L, L]`
/// weight tensor.
pub(crate) fn attend(
    g: &mut Graph,
    x: Var,
    w_query: Var,
    w_key: Var,
    w_value: Var,
    key_dim: usize,
) -> Result<(Var, Var)> {
    if key_dim == 0 {
        return Err(Error::config("attention key dimension must be positive"));
    }
    let (b, l) = match g.shape(x) {
        [b, l] => (*b, *l),
        s => {
            return Err(Error::shape(
                "attention",
                format!("expected [batch, tokens], got {:?}", s),
            ))
        }
    };
    let tokens = g.reshape(x, &[b * l, 1])?;
    let q = g.matmul(tokens, w_query)?;
    let q = g.reshape(q, &[b, l, key_dim])?;
    let k = g.matmul(tokens, w_key)?;
    let k = g.reshape(k, &[b, l, key_dim])?;
    let v = g.matmul(tokens, w_value)?;
    let v = g.reshape(v, &[b, l, 1])?;

    let kt = g.transpose_last2(k)?;
    let scores = g.batch_matmul(q, kt)?;
    let scores = g.scale(scores, 1.0 / (key_dim as f64).sqrt())?;
    let weights = g.softmax_last(scores)?;
    let out = g.batch_matmul(weights, v)?;
    let out = g.reshape(out, &[b, l])?;
    Ok((out, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn block(seed: u64, key_dim: usize) -> AttentionBlock {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AttentionBlock::init(key_dim, &mut rng).unwrap()
    }

    #[test]
    fn zero_query_key_gives_uniform_weights() {
        let mut b = block(1, 4);
        b.w_query = Tensor::zeros(&[1, 4]);
        b.w_key = Tensor::zeros(&[1, 4]);
        let tokens = Tensor::new(vec![3, 1], vec![0.5, -1.0, 2.0]).unwrap();
        let out = b.forward_tokens(&tokens).unwrap();
        for w in out.weights.data() {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        let wv = b.w_value.item();
        let mean_v = (0.5 - 1.0 + 2.0) * wv / 3.0;
        for o in out.output.data() {
            assert!((o - mean_v).abs() < 1e-12);
        }
    }

    #[test]
    fn single_token_returns_its_value() {
        let b = block(7, 16);
        let tokens = Tensor::new(vec![1, 1], vec![0.37]).unwrap();
        let out = b.forward_tokens(&tokens).unwrap();
        assert_eq!(out.weights.data(), &[1.0]);
        assert!((out.output.item() - 0.37 * b.w_value.item()).abs() < 1e-15);
    }

    #[test]
    fn zero_key_dim_is_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(AttentionBlock::init(0, &mut rng), Err(Error::Config(_))));
    }
}
