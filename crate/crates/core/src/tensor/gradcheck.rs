//! Central finite-difference checks of the analytic backward kernels, in `f64`.

use super::ops::{self, ConvSpec, PoolSpec};
use super::{shape_err, Result, Tensor};

/// A layer viewed as a function of all its differentiable operands (data and parameters).
pub trait Differentiable {
    fn forward(&self, operands: &[Tensor<f64>]) -> Result<Tensor<f64>>;
    /// Gradients for every operand, in operand order.
    fn backward(&self, operands: &[Tensor<f64>], upstream: &Tensor<f64>) -> Result<Vec<Tensor<f64>>>;
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / scale
}

/// Deterministic projection weights in [-1, 1] (xorshift), so the scalar probe is `Σ r·y`.
fn projection(n: usize) -> Vec<f64> {
    let mut state = 0x9E37_79B9_7F4A_7C15u64;
    (0..n)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}

/// Worst relative error between analytic and central-difference gradients over every
/// entry of every operand.
pub fn grad_check(layer: &dyn Differentiable, operands: &[Tensor<f64>], eps: f64) -> Result<f64> {
    let out = layer.forward(operands)?;
    let r = projection(out.len());
    let upstream = Tensor::from_vec(out.shape(), r.clone())?;
    let analytic = layer.backward(operands, &upstream)?;
    if analytic.len() != operands.len() {
        return shape_err("grad_check", format!("{} gradients for {} operands", analytic.len(), operands.len()));
    }
    let probe = |ops: &[Tensor<f64>]| -> Result<f64> {
        let y = layer.forward(ops)?;
        Ok(y.data().iter().zip(&r).map(|(a, b)| a * b).sum())
    };

    let mut worst = 0.0f64;
    let mut work = operands.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        if grad.shape() != operands[i].shape() {
            return shape_err("grad_check", format!("operand {i}: gradient {:?}", grad.shape()));
        }
        for j in 0..operands[i].len() {
            let orig = operands[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let plus = probe(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let minus = probe(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(grad.data()[j], numeric));
        }
    }
    Ok(worst)
}

/// Operands: input, weight, bias.
pub struct ConvProbe(pub ConvSpec);

impl Differentiable for ConvProbe {
    fn forward(&self, o: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        ops::conv1d_forward(&o[0], &o[1], &o[2], &self.0)
    }

    fn backward(&self, o: &[Tensor<f64>], up: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let g = ops::conv1d_backward(&o[0], &o[1], &self.0, up)?;
        Ok(vec![g.input.expect("input gradient requested"), g.weight, g.bias])
    }
}

pub struct ReluProbe;

impl Differentiable for ReluProbe {
    fn forward(&self, o: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        Ok(ops::relu(&o[0]))
    }

    fn backward(&self, o: &[Tensor<f64>], up: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        Ok(vec![ops::relu_backward(&o[0], up)?])
    }
}

pub struct MaxPoolProbe(pub PoolSpec);

impl Differentiable for MaxPoolProbe {
    fn forward(&self, o: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        Ok(ops::maxpool1d(&o[0], &self.0)?.0)
    }

    fn backward(&self, o: &[Tensor<f64>], up: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let (_, argmax) = ops::maxpool1d(&o[0], &self.0)?;
        Ok(vec![ops::maxpool1d_backward(o[0].shape(), &argmax, up)?])
    }
}

pub struct AvgPoolProbe(pub PoolSpec);

impl Differentiable for AvgPoolProbe {
    fn forward(&self, o: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        ops::avgpool1d(&o[0], &self.0)
    }

    fn backward(&self, o: &[Tensor<f64>], up: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        Ok(vec![ops::avgpool1d_backward(o[0].shape(), &self.0, up)?])
    }
}

/// Every operand is one concatenated input.
pub struct ConcatProbe;

impl Differentiable for ConcatProbe {
    fn forward(&self, o: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        let refs: Vec<&Tensor<f64>> = o.iter().collect();
        ops::concat_channels(&refs)
    }

    fn backward(&self, o: &[Tensor<f64>], up: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let widths: Vec<usize> = o.iter().map(|t| t.shape()[0]).collect();
        ops::concat_channels_backward(up, &widths)
    }
}

pub struct GlobalAvgPoolProbe;

impl Differentiable for GlobalAvgPoolProbe {
    fn forward(&self, o: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        ops::global_avg_pool(&o[0])
    }

    fn backward(&self, o: &[Tensor<f64>], up: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        Ok(vec![ops::global_avg_pool_backward(o[0].shape(), up)?])
    }
}

/// Operands: input, weight, bias.
pub struct LinearProbe;

impl Differentiable for LinearProbe {
    fn forward(&self, o: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        ops::linear(&o[0], &o[1], &o[2])
    }

    fn backward(&self, o: &[Tensor<f64>], up: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let g = ops::linear_backward(&o[0], &o[1], up)?;
        Ok(vec![g.input, g.weight, g.bias])
    }
}

/// Operand: logits. Output is the scalar loss as a length-1 tensor.
pub struct SoftmaxCeProbe(pub usize);

impl Differentiable for SoftmaxCeProbe {
    fn forward(&self, o: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        let (loss, _) = ops::softmax_cross_entropy(o[0].data(), self.0)?;
        Tensor::from_vec(&[1], vec![loss])
    }

    fn backward(&self, o: &[Tensor<f64>], up: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let (_, grad) = ops::softmax_cross_entropy(o[0].data(), self.0)?;
        let scale = up.data()[0];
        Ok(vec![Tensor::from_vec(o[0].shape(), grad.into_iter().map(|g| g * scale).collect())?])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TOL: f64 = 1e-3;
    const EPS: f64 = 1e-6;

    fn uniform(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Distinct values at least 0.01 apart, so no pooling window has a near-tie.
    fn spread(shape: &[usize], seed: u64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - 0.005 * n as f64).collect();
        v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Tensor::from_vec(shape, v).unwrap()
    }

    #[test]
    fn conv_gradients() {
        for (spec, t) in [
            (ConvSpec::new(3, 4, 7, 2, 3), 19),
            (ConvSpec::new(2, 5, 3, 1, 1), 8),
            (ConvSpec::new(4, 3, 5, 1, 2), 9),
            (ConvSpec::pointwise(6, 2), 5),
            (ConvSpec::new(2, 2, 4, 3, 0), 13),
        ] {
            let [o, i, k] = spec.weight_shape();
            let operands = [uniform(&[i, t], 1), uniform(&[o, i, k], 2), uniform(&[o], 3)];
            let err = grad_check(&ConvProbe(spec), &operands, EPS).unwrap();
            assert!(err < TOL, "{spec:?}: {err}");
        }
    }

    #[test]
    fn relu_gradient_away_from_zero() {
        let mut x = uniform(&[4, 10], 4);
        for v in x.data_mut() {
            if v.abs() < 0.1 {
                *v += 0.2f64.copysign(*v);
            }
        }
        assert!(grad_check(&ReluProbe, &[x], EPS).unwrap() < 1e-6);
    }

    #[test]
    fn pooling_gradients() {
        for spec in [PoolSpec::new(3, 2, 1), PoolSpec::new(3, 1, 1), PoolSpec::new(2, 2, 0)] {
            let x = spread(&[3, 11], 5);
            assert!(grad_check(&MaxPoolProbe(spec), &[x.clone()], EPS).unwrap() < TOL, "max {spec:?}");
            assert!(grad_check(&AvgPoolProbe(spec), &[x], EPS).unwrap() < TOL, "avg {spec:?}");
        }
    }

    #[test]
    fn concat_and_global_pool_gradients() {
        let parts = [uniform(&[2, 6], 6), uniform(&[3, 6], 7), uniform(&[1, 6], 8)];
        assert!(grad_check(&ConcatProbe, &parts, EPS).unwrap() < TOL);
        assert!(grad_check(&GlobalAvgPoolProbe, &[uniform(&[5, 7], 9)], EPS).unwrap() < TOL);
    }

    #[test]
    fn linear_gradients() {
        let operands = [uniform(&[6], 10), uniform(&[4, 6], 11), uniform(&[4], 12)];
        assert!(grad_check(&LinearProbe, &operands, EPS).unwrap() < TOL);
    }

    #[test]
    fn softmax_cross_entropy_gradients() {
        for label in [0, 4, 9] {
            let logits = uniform(&[10], 13 + label as u64);
            assert!(grad_check(&SoftmaxCeProbe(label), &[logits], EPS).unwrap() < TOL);
        }
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(1.0, 0.5), 0.5);
        assert!((relative_error(1e-10, 0.0) - 1e-2).abs() < 1e-12);
    }
}
