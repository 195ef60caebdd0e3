use serde::{Deserialize, Serialize};

use crate::scalar::{c, Scalar};

/// Elementwise nonlinearities. `Gelu` is the tanh approximation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unary {
    Relu,
    Gelu,
    Exp,
    Log,
    Sqrt,
}

const GELU_K: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

pub fn apply<T: Scalar>(kind: Unary, x: T) -> T {
    match kind {
        Unary::Relu => x.max(T::zero()),
        Unary::Gelu => {
            let u = c::<T>(GELU_K) * (x + c::<T>(GELU_A) * x * x * x);
            c::<T>(0.5) * x * (T::one() + u.tanh())
        }
        Unary::Exp => x.exp(),
        Unary::Log => x.ln(),
        Unary::Sqrt => x.sqrt(),
    }
}

/// d/dx of `apply(kind, x)`; `y` is the forward output.
pub fn derivative<T: Scalar>(kind: Unary, x: T, y: T) -> T {
    match kind {
        Unary::Relu => {
            if x > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        Unary::Gelu => {
            let k = c::<T>(GELU_K);
            let a = c::<T>(GELU_A);
            let u = k * (x + a * x * x * x);
            let t = u.tanh();
            let du = k * (T::one() + c::<T>(3.0) * a * x * x);
            c::<T>(0.5) * (T::one() + t) + c::<T>(0.5) * x * (T::one() - t * t) * du
        }
        Unary::Exp => y,
        Unary::Log => T::one() / x,
        Unary::Sqrt => c::<T>(0.5) / y,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert_eq!(apply(Unary::Relu, -1.0f64), 0.0);
        assert_eq!(apply(Unary::Gelu, 0.0f64), 0.0);
        assert_eq!(apply(Unary::Exp, 0.0f64), 1.0);
        // tanh-approximate gelu(1) = 0.5 (1 + tanh(0.79788456 * 1.044715))
        assert!((apply(Unary::Gelu, 1.0f64) - 0.8411919906082768).abs() < 1e-12);
    }
}
