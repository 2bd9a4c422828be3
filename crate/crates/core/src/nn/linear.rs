//! Fully connected layer on (batch, features) matrices.

use ndarray::{Array1, Array2, ArrayViewMutD, Axis};
use rand_chacha::ChaCha8Rng;

use super::{he_normal, join_path, Layer, Scalar};

#[derive(Debug, Clone)]
pub struct Linear<S: Scalar> {
    /// (dout, din).
    weight: Array2<S>,
    bias: Array1<S>,
    wgrad: Array2<S>,
    bgrad: Array1<S>,
    cache: Option<Array2<S>>,
}

impl<S: Scalar> Linear<S> {
    pub fn new(din: usize, dout: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut init = he_normal::<S>(rng, din);
        Linear {
            weight: Array2::from_shape_simple_fn((dout, din), &mut init),
            bias: Array1::zeros(dout),
            wgrad: Array2::zeros((dout, din)),
            bgrad: Array1::zeros(dout),
            cache: None,
        }
    }

    /// (b, din) → (b, dout).
    pub fn forward(&mut self, x: &Array2<S>) -> Array2<S> {
        assert_eq!(x.dim().1, self.weight.dim().1, "feature contract violated");
        let mut out = x.dot(&self.weight.t());
        out += &self.bias;
        self.cache = Some(x.clone());
        out
    }

    pub fn backward(&mut self, gout: &Array2<S>) -> Array2<S> {
        let x = self.cache.as_ref().expect("forward before backward");
        self.wgrad = &self.wgrad + &gout.t().dot(x);
        self.bgrad = &self.bgrad + &gout.sum_axis(Axis(0));
        gout.dot(&self.weight)
    }
}

impl<S: Scalar> Layer<S> for Linear<S> {
    fn visit_params(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, ArrayViewMutD<'_, S>, ArrayViewMutD<'_, S>),
    ) {
        f(
            &join_path(prefix, "weight"),
            self.weight.view_mut().into_dyn(),
            self.wgrad.view_mut().into_dyn(),
        );
        f(
            &join_path(prefix, "bias"),
            self.bias.view_mut().into_dyn(),
            self.bgrad.view_mut().into_dyn(),
        );
    }

    fn zero_grads(&mut self) {
        self.wgrad.fill(S::zero());
        self.bgrad.fill(S::zero());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::fd;
    use crate::seeds::rng_from_seed;

    #[test]
    fn forward_matches_manual_product() {
        let mut rng = rng_from_seed(1);
        let mut lin = Linear::<f64>::new(3, 2, &mut rng);
        lin.bias[0] = 0.5;
        let x = ndarray::arr2(&[[1.0, 2.0, 3.0]]);
        let y = lin.forward(&x);
        let want0 = lin.weight[[0, 0]] + 2.0 * lin.weight[[0, 1]] + 3.0 * lin.weight[[0, 2]] + 0.5;
        assert!((y[[0, 0]] - want0).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = rng_from_seed(5);
        let mut lin = Linear::<f64>::new(4, 3, &mut rng);
        let mut init = he_normal::<f64>(&mut rng, 1);
        let x = Array2::from_shape_simple_fn((2, 4), &mut init);
        let rvec = Array2::from_shape_simple_fn((2, 3), &mut init);
        lin.forward(&x);
        let gin = lin.backward(&rvec);
        let mut loss = |l: &mut Linear<f64>| (&l.forward(&x) * &rvec).sum();
        fd::check_param_grads(&mut lin, &mut loss, 8, 1e-7);

        // Input gradient against finite differences.
        let h = 1e-6;
        for flat in 0..x.len() {
            let idx = (flat / 4, flat % 4);
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let numeric =
                ((&lin.forward(&xp) * &rvec).sum() - (&lin.forward(&xm) * &rvec).sum()) / (2.0 * h);
            assert!(fd::rel_err(gin[idx], numeric) < 1e-7);
        }
    }
}
