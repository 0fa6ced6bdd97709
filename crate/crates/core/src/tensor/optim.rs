use super::Real;

/// Adam hyperparameters. The learning rate is passed per step so that a
/// schedule can drive it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter array.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
        }
    }
}

/// Adam with bias correction over a fixed, ordered list of parameter arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    /// Number of completed steps.
    pub step: u64,
    pub states: Vec<AdamState<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, sizes: impl IntoIterator<Item = usize>) -> Self {
        Adam {
            config,
            step: 0,
            states: sizes.into_iter().map(AdamState::new).collect(),
        }
    }

    /// Applies one update. `params[i]` pairs with `grads[i]` and `states[i]`;
    /// a `None` gradient leaves that array and its moments untouched.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[Option<&[T]>], lr: f64) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let (bc1, bc2, eps, lr) = (T::lit(bc1), T::lit(bc2), T::lit(c.eps), T::lit(lr));
        for ((p, g), st) in params.iter_mut().zip(grads).zip(self.states.iter_mut()) {
            let Some(g) = g else { continue };
            for i in 0..p.len() {
                st.m[i] = b1 * st.m[i] + one_b1 * g[i];
                st.v[i] = b2 * st.v[i] + one_b2 * g[i] * g[i];
                let m_hat = st.m[i] / bc1;
                let v_hat = st.v[i] / bc2;
                p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut adam = Adam::<f64>::new(AdamConfig::default(), [3]);
        let mut w = vec![1.0, -2.0, 0.5];
        let g = vec![0.0; 3];
        adam.step(&mut [&mut w], &[Some(&g)], 0.1);
        assert_eq!(w, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn one_step_on_square_descends() {
        let mut adam = Adam::<f64>::new(AdamConfig::default(), [1]);
        let mut w = vec![1.0];
        let g = vec![2.0 * w[0]];
        adam.step(&mut [&mut w], &[Some(&g)], 0.1);
        assert!(w[0] < 1.0);
    }

    #[test]
    fn converges_on_convex_quadratic() {
        // f(x, y) = (x - 3)^2 + 10 (y + 1)^2, minimizer (3, -1)
        let mut adam = Adam::<f64>::new(AdamConfig::default(), [2]);
        let mut w = vec![0.0, 0.0];
        let mut lr = 0.5;
        for step in 0..200 {
            if step == 100 {
                lr = 0.05;
            }
            let g = vec![2.0 * (w[0] - 3.0), 20.0 * (w[1] + 1.0)];
            adam.step(&mut [&mut w], &[Some(&g)], lr);
        }
        assert!((w[0] - 3.0).abs() < 1e-3, "{w:?}");
        assert!((w[1] + 1.0).abs() < 1e-3, "{w:?}");
    }
}
