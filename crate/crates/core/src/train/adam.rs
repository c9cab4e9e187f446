use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params
            .entries()
            .iter()
            .map(|e| Tensor::zeros(e.value.shape()))
            .collect();
        AdamState {
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }
}

/// One bias-corrected adaptive-moment update.
///
/// Every gradient is checked before anything is modified: a non-finite entry
/// aborts the step, naming the offending tensor, and leaves parameters and
/// state untouched.
pub fn adam_step(params: &mut ParamStore, grads: &[Tensor], state: &mut AdamState, hyper: &AdamConfig) -> Result<()> {
    if grads.len() != params.len() || state.first_moment.len() != params.len() {
        return Err(Error::dim(
            "adam_step",
            format!(
                "{} parameters, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                state.first_moment.len()
            ),
        ));
    }
    for (id, g) in params.ids().zip(grads) {
        if g.shape() != params.get(id).shape() {
            return Err(Error::dim(
                "adam_step",
                format!("gradient shape {:?} for {}", g.shape(), params.name(id)),
            ));
        }
        if !g.is_finite() {
            return Err(Error::Numeric(format!("non-finite gradient in {}", params.name(id))));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - hyper.beta1.powi(t);
    let bias2 = 1.0 - hyper.beta2.powi(t);
    let ids: Vec<_> = params.ids().collect();
    for (i, id) in ids.into_iter().enumerate() {
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        let w = params.get_mut(id).data_mut();
        for (((w, m), v), g) in w.iter_mut().zip(m).zip(v).zip(grads[i].data()) {
            *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
            *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *w -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamStore {
        let mut store = ParamStore::new();
        store.add("x", Tensor::scalar(value));
        store
    }

    #[test]
    fn zero_gradient_leaves_parameters_and_decays_moments() {
        let mut store = single(1.5);
        let mut state = AdamState::new(&store);
        let hyper = AdamConfig::default();
        adam_step(&mut store, &[Tensor::scalar(2.0)], &mut state, &hyper).unwrap();
        let after_first = store.values()[0].item();
        let (m, v) = (state.first_moment[0].item(), state.second_moment[0].item());

        adam_step(&mut store, &[Tensor::scalar(0.0)], &mut state, &hyper).unwrap();
        assert_eq!(state.first_moment[0].item(), hyper.beta1 * m);
        assert_eq!(state.second_moment[0].item(), hyper.beta2 * v);
        // The parameter still moves by the decayed momentum, so check a fresh state instead.
        let mut fresh = AdamState::new(&store);
        let before = store.values()[0].item();
        adam_step(&mut store, &[Tensor::scalar(0.0)], &mut fresh, &hyper).unwrap();
        assert_eq!(store.values()[0].item(), before);
        assert!(after_first < 1.5);
    }

    #[test]
    fn constant_gradient_steps_approach_learning_rate() {
        let mut store = single(0.0);
        let mut state = AdamState::new(&store);
        let hyper = AdamConfig {
            learning_rate: 0.01,
            ..AdamConfig::default()
        };
        let mut last = 0.0;
        for _ in 0..5000 {
            let before = store.values()[0].item();
            adam_step(&mut store, &[Tensor::scalar(-3.0)], &mut state, &hyper).unwrap();
            last = store.values()[0].item() - before;
        }
        // Gradient is negative, so the parameter climbs at ~lr per step.
        assert!((last - 0.01).abs() < 1e-6, "{last}");
    }

    #[test]
    fn quadratic_converges() {
        // f(x) = (x - 3)², from x = 0.
        let mut store = single(0.0);
        let mut state = AdamState::new(&store);
        let hyper = AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        };
        for _ in 0..500 {
            let x = store.values()[0].item();
            adam_step(&mut store, &[Tensor::scalar(2.0 * (x - 3.0))], &mut state, &hyper).unwrap();
        }
        let x = store.values()[0].item();
        assert!((x - 3.0).abs() < 1e-4, "x = {x}");
    }

    #[test]
    fn non_finite_gradient_aborts_without_changes() {
        let mut store = single(1.0);
        store.add("y", Tensor::scalar(2.0));
        let mut state = AdamState::new(&store);
        let err = adam_step(
            &mut store,
            &[Tensor::scalar(1.0), Tensor::scalar(f64::NAN)],
            &mut state,
            &AdamConfig::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains('y'), "{err}");
        assert_eq!(state.step, 0);
        assert_eq!(store.values()[0].item(), 1.0);
    }
}
