use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::NumericError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moment estimates for an ordered list of named parameters.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    names: Vec<String>,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Self {
        let (mut names, mut first, mut second) = (Vec::new(), Vec::new(), Vec::new());
        for (name, t) in params {
            names.push(name.to_string());
            first.push(vec![0.0; t.len()]);
            second.push(vec![0.0; t.len()]);
        }
        Self {
            config,
            step: 0,
            names,
            first,
            second,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected Adam update in place.
    ///
    /// All gradients are validated before any parameter changes, so a
    /// rejected update leaves both parameters and state untouched.
    pub fn update(&mut self, params: &mut [Tensor], grads: &[Vec<f64>]) -> Result<(), NumericError> {
        if params.len() != self.names.len() || grads.len() != self.names.len() {
            return Err(NumericError::InvalidArgument(format!(
                "adam: expected {} parameters, got {} params and {} grads",
                self.names.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((name, p), g) in self.names.iter().zip(params.iter()).zip(grads) {
            if p.len() != g.len() {
                return Err(NumericError::InvalidArgument(format!(
                    "adam: gradient for `{name}` has {} entries, parameter has {}",
                    g.len(),
                    p.len()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NumericError::NonFiniteGradient { param: name.clone() });
            }
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);

        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            let mut data = p.data().to_vec();
            for j in 0..data.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                data[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            *p = Tensor::new(p.shape().to_vec(), data).map_err(|_| NumericError::NonFinite {
                context: format!("adam update of `{}`", self.names[i]),
            })?;
        }
        Ok(())
    }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm measured before clipping.
pub fn clip_gradients(grads: &mut [Vec<f64>], max_norm: f64) -> Result<f64, NumericError> {
    if !(max_norm > 0.0) || !max_norm.is_finite() {
        return Err(NumericError::InvalidArgument(format!(
            "max_norm must be positive, got {max_norm}"
        )));
    }
    if grads.iter().flatten().any(|v| !v.is_finite()) {
        return Err(NumericError::NonFinite {
            context: "gradient clipping input".into(),
        });
    }
    let norm = grads.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        grads.iter_mut().flatten().for_each(|v| *v *= scale);
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state_for(params: &[Tensor], lr: f64) -> AdamState {
        let names = ["a", "b", "c", "d"];
        AdamState::new(AdamConfig::with_lr(lr), names.iter().copied().zip(params.iter()))
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = vec![Tensor::vector(vec![1.0, -2.0]).unwrap()];
        let before = params.clone();
        let mut st = state_for(&params, 0.01);
        for _ in 0..3 {
            st.update(&mut params, &[vec![0.0, 0.0]]).unwrap();
        }
        assert_eq!(params, before);
        assert_eq!(st.step(), 3);
    }

    #[test]
    fn first_step_matches_hand_rolled_adam() {
        let (lr, b1, b2, eps) = (0.001, 0.9, 0.999, 1e-8);
        let (p0, g) = (0.25f64, 1.0f64);
        // one step by hand
        let m = (1.0 - b1) * g;
        let v = (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1);
        let v_hat = v / (1.0 - b2);
        let oracle = p0 - lr * m_hat / (v_hat.sqrt() + eps);

        let mut params = vec![Tensor::vector(vec![p0]).unwrap()];
        let mut st = state_for(&params, lr);
        st.update(&mut params, &[vec![g]]).unwrap();
        let got = params[0].data()[0];
        assert!((got - oracle).abs() < 1e-15);
        assert!((got - p0 + lr).abs() < 1e-10);
    }

    #[test]
    fn identical_params_get_identical_updates() {
        let mut params = vec![
            Tensor::vector(vec![0.3, 0.3]).unwrap(),
            Tensor::vector(vec![0.3, 0.3]).unwrap(),
        ];
        let mut st = state_for(&params, 0.05);
        let g = vec![0.7, 0.7];
        st.update(&mut params, &[g.clone(), g]).unwrap();
        assert_eq!(params[0], params[1]);
        assert_eq!(params[0].data()[0], params[0].data()[1]);
    }

    #[test]
    fn non_finite_gradient_names_parameter_and_aborts() {
        let mut params = vec![
            Tensor::vector(vec![1.0]).unwrap(),
            Tensor::vector(vec![2.0]).unwrap(),
        ];
        let before = params.clone();
        let mut st = state_for(&params, 0.1);
        let err = st.update(&mut params, &[vec![1.0], vec![f64::NAN]]).unwrap_err();
        assert!(err.to_string().contains("`b`"), "{err}");
        assert_eq!(params, before);
        assert_eq!(st.step(), 0);
    }

    #[test]
    fn clipping_reference_cases() {
        let mut small = vec![vec![0.3, 0.4]];
        clip_gradients(&mut small, 1.0).unwrap();
        assert_eq!(small, vec![vec![0.3, 0.4]]);

        let mut g = vec![vec![3.0, 4.0]];
        let norm = clip_gradients(&mut g, 1.0).unwrap();
        assert_eq!(norm, 5.0);
        assert!((g[0][0] - 0.6).abs() < 1e-15 && (g[0][1] - 0.8).abs() < 1e-15);

        let mut multi = vec![vec![1.0, -2.0, 3.0], vec![4.0], vec![-5.0, 6.0]];
        clip_gradients(&mut multi, 1.0).unwrap();
        let after: f64 = multi.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        assert!((after - 1.0).abs() < 1e-12);

        assert!(clip_gradients(&mut g, 0.0).is_err());
        assert!(clip_gradients(&mut g, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn clipping_never_grows_and_keeps_direction(
            a in proptest::collection::vec(-10.0f64..10.0, 1..8),
            b in proptest::collection::vec(-10.0f64..10.0, 1..8),
            max_norm in 0.01f64..5.0,
        ) {
            let original = vec![a, b];
            let mut clipped = original.clone();
            let before = clip_gradients(&mut clipped, max_norm).unwrap();
            let after = clipped.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(after <= before + 1e-12);
            if before > 1e-9 {
                let dot: f64 = original.iter().flatten().zip(clipped.iter().flatten()).map(|(x, y)| x * y).sum();
                let cos = dot / (before * after);
                prop_assert!((cos - 1.0).abs() < 1e-12);
            }
            // deterministic
            let mut again = original.clone();
            clip_gradients(&mut again, max_norm).unwrap();
            prop_assert_eq!(again, clipped);
        }
    }
}
