use serde::{Deserialize, Serialize};

// Largest double strictly below one.
const ONE_MINUS: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Linear,
}

impl Activation {
    /// Applies the activation. Sigmoid and tanh saturate at the nearest
    /// representable values inside their open ranges.
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => tanh(x),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Linear => 1.0,
        }
    }

    pub(crate) fn apply_slice(self, v: &mut [f64]) {
        if self != Activation::Linear {
            v.iter_mut().for_each(|x| *x = self.apply(*x));
        }
    }

    /// `grad *= f'(y)` elementwise.
    pub(crate) fn backprop_slice(self, y: &[f64], grad: &mut [f64]) {
        if self != Activation::Linear {
            grad.iter_mut()
                .zip(y)
                .for_each(|(g, &y)| *g *= self.derivative_from_output(y));
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, ONE_MINUS)
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    x.tanh().clamp(-ONE_MINUS, ONE_MINUS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn open_ranges_and_monotone() {
        let xs: Vec<f64> = (-2000..=2000).map(|i| i as f64 * 0.05).collect();
        for w in xs.windows(2) {
            let (a, b) = (sigmoid(w[0]), sigmoid(w[1]));
            assert!(a > 0.0 && a < 1.0 && a <= b);
            let (a, b) = (tanh(w[0]), tanh(w[1]));
            assert!(a > -1.0 && a < 1.0 && a <= b);
        }
        assert!(sigmoid(1e6) < 1.0 && sigmoid(-1e6) > 0.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }
}
