use candle_core::{DType, Tensor, D};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{leaky_relu, leaky_relu_grad, Dense, Scope};

/// A Wasserstein critic with an explicit input gradient.
///
/// `input_gradient` must stay differentiable with respect to the critic's own
/// parameters so that the gradient penalty can be trained.
pub trait Critic {
    /// Scores each row of `x` `(n, d)`, returning `(n,)`.
    fn score(&self, x: &Tensor) -> Result<Tensor>;
    /// `∂ score_i / ∂ x_i` for every row, `(n, d)`.
    fn input_gradient(&self, x: &Tensor) -> Result<Tensor>;
}

/// `f(x) = w·x + b`.
#[derive(Debug, Clone)]
pub struct LinearCritic {
    pub weight: Tensor,
    pub bias: f64,
}

impl Critic for LinearCritic {
    fn score(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.broadcast_mul(&self.weight)?.sum(D::Minus1)?.affine(1.0, self.bias)?)
    }

    fn input_gradient(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.weight.broadcast_as(x.shape())?.contiguous()?)
    }
}

/// Three-layer LeakyReLU critic without normalisation layers.
#[derive(Debug, Clone)]
pub struct MlpCritic {
    l1: Dense,
    l2: Dense,
    l3: Dense,
}

const CRITIC_SLOPE: f64 = 0.2;

impl MlpCritic {
    pub fn new(scope: &Scope<'_>, dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            l1: Dense::new(&scope.sub("l1"), dim, hidden, true)?,
            l2: Dense::new(&scope.sub("l2"), hidden, hidden, true)?,
            l3: Dense::new(&scope.sub("l3"), hidden, 1, true)?,
        })
    }
}

impl Critic for MlpCritic {
    fn score(&self, x: &Tensor) -> Result<Tensor> {
        let h = leaky_relu(&self.l1.forward(x)?, CRITIC_SLOPE)?;
        let h = leaky_relu(&self.l2.forward(&h)?, CRITIC_SLOPE)?;
        Ok(self.l3.forward(&h)?.squeeze(D::Minus1)?)
    }

    fn input_gradient(&self, x: &Tensor) -> Result<Tensor> {
        // Chain rule through the two activations; their derivative masks are
        // piecewise constant, so only the weight matrices carry parameter gradients.
        let h1 = self.l1.forward(x)?;
        let h2 = self.l2.forward(&leaky_relu(&h1, CRITIC_SLOPE)?)?;
        let g = self.l3.weight.t()?.broadcast_as(h2.shape())?;
        let g = (g * leaky_relu_grad(&h2, CRITIC_SLOPE)?)?;
        let g = g.matmul(&self.l2.weight.t()?)?;
        let g = (g * leaky_relu_grad(&h1, CRITIC_SLOPE)?)?;
        Ok(g.matmul(&self.l1.weight.t()?)?)
    }
}

/// Mean over the batch of `(‖∇ critic(x̂)‖₂ − 1)²` at `x̂ = u·real + (1−u)·fake`,
/// `u ~ U(0,1)` per row.
pub fn gradient_penalty<C: Critic + ?Sized>(
    critic: &C,
    real: &Tensor,
    fake: &Tensor,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    let (n, _) = real.dims2()?;
    let u: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    gradient_penalty_with(critic, real, fake, &u)
}

pub(crate) fn gradient_penalty_with<C: Critic + ?Sized>(
    critic: &C,
    real: &Tensor,
    fake: &Tensor,
    u: &[f64],
) -> Result<Tensor> {
    if real.dims() != fake.dims() {
        return Err(Error::invalid(format!("real {:?} and fake {:?} batches differ", real.dims(), fake.dims())));
    }
    let (n, _) = real.dims2()?;
    if u.len() != n {
        return Err(Error::invalid("one interpolation weight per row required"));
    }
    let u = Tensor::from_slice(u, (n, 1), real.device())?.to_dtype(real.dtype())?;
    let one_minus = u.affine(-1.0, 1.0)?;
    let mixed = (real.detach().broadcast_mul(&u)? + fake.detach().broadcast_mul(&one_minus)?)?;
    let grad = critic.input_gradient(&mixed)?;
    let norm = (grad.sqr()?.sum(D::Minus1)? + 1e-16)?.sqrt()?;
    let penalty = norm.affine(1.0, -1.0)?.sqr()?.mean_all()?;
    let value = penalty.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if !value.is_finite() {
        return Err(Error::Training(format!("gradient penalty is not finite ({value})")));
    }
    Ok(penalty)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use candle_core::{Device, Var};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_critic_penalty_is_analytic() {
        let dev = Device::Cpu;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (scale, expected) in [(0.0, 1.0), (1.0, 0.0), (3.0, 4.0)] {
            let w = Tensor::new(&[0.6f64 * scale, 0.0, -0.8 * scale], &dev).unwrap();
            let critic = LinearCritic { weight: w, bias: 0.7 };
            for seed in 0..3 {
                let real = Tensor::randn(seed as f64, 2.0, (16, 3), &dev).unwrap();
                let fake = Tensor::randn(-1.0, 0.5, (16, 3), &dev).unwrap();
                let gp = gradient_penalty(&critic, &real, &fake, &mut rng).unwrap().to_scalar::<f64>().unwrap();
                assert!((gp - expected).abs() < 1e-6, "‖w‖={scale}: {gp}");
            }
        }
    }

    #[test]
    fn mlp_input_gradient_matches_autograd() {
        let store = ParamStore::new(5);
        let critic = MlpCritic::new(&store.root(), 6, 16).unwrap();
        let x = Var::from_tensor(&Tensor::randn(0f32, 1.0, (8, 6), &Device::Cpu).unwrap()).unwrap();
        let grads = critic.score(x.as_tensor()).unwrap().sum_all().unwrap().backward().unwrap();
        let auto = grads.get(x.as_tensor()).unwrap();
        let ours = critic.input_gradient(x.as_tensor()).unwrap();
        let diff = (auto - ours).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(diff < 1e-5, "{diff}");
    }

    #[test]
    fn penalty_gradient_reaches_critic_weights() {
        let store = ParamStore::new(6);
        let critic = MlpCritic::new(&store.root(), 4, 8).unwrap();
        let real = Tensor::randn(0f32, 1.0, (10, 4), &Device::Cpu).unwrap();
        let fake = Tensor::randn(1f32, 1.0, (10, 4), &Device::Cpu).unwrap();
        let gp = gradient_penalty(&critic, &real, &fake, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let grads = gp.backward().unwrap();
        let w1 = store.get("l1.weight").unwrap();
        let g = grads.get(&w1).expect("penalty must depend on first-layer weights");
        assert!(g.abs().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap() > 0.0);
    }

    #[test]
    fn mismatched_batches_rejected() {
        let critic = LinearCritic { weight: Tensor::new(&[1f32, 0.0], &Device::Cpu).unwrap(), bias: 0.0 };
        let a = Tensor::zeros((3, 2), DType::F32, &Device::Cpu).unwrap();
        let b = Tensor::zeros((4, 2), DType::F32, &Device::Cpu).unwrap();
        assert!(gradient_penalty(&critic, &a, &b, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
