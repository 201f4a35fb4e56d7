use serde::{Deserialize, Serialize};

use crate::tensor::{Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    /// `clamp(x / 6 + 1/2, 0, 1)`.
    HardSigmoid,
    Tanh,
    Relu,
    /// Exact form `x * Phi(x)` with the Gaussian CDF.
    Gelu,
}

impl Activation {
    #[inline]
    pub fn apply<T: Float>(self, x: T) -> T {
        match self {
            Activation::Sigmoid => sigmoid_scalar(x),
            Activation::HardSigmoid => (x / T::c(6.0) + T::c(0.5)).max(T::zero()).min(T::one()),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(T::zero()),
            Activation::Gelu => x * gaussian_cdf(x),
        }
    }

    /// Derivative at `x`. Kinks (relu at 0, hard-sigmoid at +-3) take the
    /// left derivative.
    #[inline]
    pub fn derivative<T: Float>(self, x: T) -> T {
        match self {
            Activation::Sigmoid => {
                let s = sigmoid_scalar(x);
                s * (T::one() - s)
            }
            Activation::HardSigmoid => {
                if x > T::c(-3.0) && x <= T::c(3.0) {
                    T::one() / T::c(6.0)
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                T::one() - t * t
            }
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Gelu => {
                let pdf = (-(x * x) / T::c(2.0)).exp() / T::c((2.0 * std::f64::consts::PI).sqrt());
                gaussian_cdf(x) + x * pdf
            }
        }
    }

    pub fn forward<T: Float>(self, x: &Tensor<T>) -> Tensor<T> {
        x.map(|v| self.apply(v))
    }

    /// Gradient w.r.t. the pre-activation `x`.
    pub fn backward<T: Float>(self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
        x.zip_map(grad_out, |v, g| g * self.derivative(v))
            .expect("activation gradient shape")
    }
}

#[inline]
fn sigmoid_scalar<T: Float>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn gaussian_cdf<T: Float>(x: T) -> T {
    T::c(0.5) * (T::one() + (x / T::c(std::f64::consts::SQRT_2)).erf())
}

pub fn sigmoid<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    Activation::Sigmoid.forward(x)
}

pub fn hard_sigmoid<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    Activation::HardSigmoid.forward(x)
}

pub fn tanh<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    Activation::Tanh.forward(x)
}

pub fn relu<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    Activation::Relu.forward(x)
}

pub fn gelu<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    Activation::Gelu.forward(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_points() {
        assert_eq!(Activation::Sigmoid.apply(0.0f64), 0.5);
        assert_eq!(Activation::HardSigmoid.apply(0.0f64), 0.5);
        assert_eq!(Activation::HardSigmoid.apply(10.0f64), 1.0);
        assert_eq!(Activation::HardSigmoid.apply(-10.0f64), 0.0);
        for x in [0.5f64, 1.0, 7.0] {
            assert_eq!(Activation::Relu.apply(-x), 0.0);
        }
        assert_eq!(Activation::Gelu.apply(0.0f64), 0.0);
        // Phi(1) = 0.841344746...
        assert!((Activation::Gelu.apply(1.0f64) - 0.841_344_746_068_543).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(Activation::Sigmoid.apply(-1000.0f64), 0.0);
        assert_eq!(Activation::Sigmoid.apply(1000.0f64), 1.0);
        assert!(Activation::Sigmoid.apply(-1000.0f32).is_finite());
    }

    #[test]
    fn bounded_ranges() {
        for i in -50..=50 {
            let x = i as f64 * 0.37;
            for a in [Activation::Sigmoid, Activation::HardSigmoid] {
                let y = a.apply(x);
                assert!((0.0..=1.0).contains(&y));
            }
            assert!((-1.0..=1.0).contains(&Activation::Tanh.apply(x)));
        }
    }
}
