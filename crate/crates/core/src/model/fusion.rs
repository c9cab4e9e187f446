use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{PROB_MAX, PROB_MIN};
use crate::nn::{Bound, Init, Linear, ParamStore};
use crate::tensor::{Graph, Var};

/// Gated blend of a condition's hidden state with the purchase hidden state.
///
/// With `x = [h_cond, h_pur]`:
///
/// ```text
/// α  = σ(W_α·x + b_α)
/// γ  = σ(W_γ·x + b_γ)
/// h' = tanh(W·[γ ∘ h_cond, h_pur] + b)
/// out = α ∘ h_cond + (1 - α) ∘ h'
/// ```
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GruFusion {
    pub hidden_dim: usize,
    /// `W_α`, `b_α`
    pub update: Linear,
    /// `W_γ`, `b_γ`
    pub reset: Linear,
    /// `W`, `b`
    pub candidate: Linear,
}

impl GruFusion {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, hidden_dim: usize) -> Self {
        GruFusion {
            hidden_dim,
            update: Linear::new(store, init, &format!("{name}.update"), 2 * hidden_dim, hidden_dim),
            reset: Linear::new(store, init, &format!("{name}.reset"), 2 * hidden_dim, hidden_dim),
            candidate: Linear::new(store, init, &format!("{name}.candidate"), 2 * hidden_dim, hidden_dim),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, h_cond: Var, h_pur: Var) -> Result<Var> {
        let (sc, sp) = (g.shape(h_cond).to_vec(), g.shape(h_pur).to_vec());
        if sc != sp || sc.len() != 2 || sc[1] != self.hidden_dim {
            return Err(Error::dim(
                "gru_fuse",
                format!("expected two [B, {}] states, got {sc:?} and {sp:?}", self.hidden_dim),
            ));
        }
        let joined = g.concat(&[h_cond, h_pur], 1)?;
        let alpha = self.update.forward(g, p, joined)?;
        let alpha = g.sigmoid(alpha);
        let gamma = self.reset.forward(g, p, joined)?;
        let gamma = g.sigmoid(gamma);

        let gated = g.mul(gamma, h_cond)?;
        let cand_in = g.concat(&[gated, h_pur], 1)?;
        let cand = self.candidate.forward(g, p, cand_in)?;
        let cand = g.tanh(cand);

        let keep = g.mul(alpha, h_cond)?;
        let neg = g.scale(alpha, -1.0);
        let one_minus_alpha = g.shift(neg, 1.0);
        let blend = g.mul(one_minus_alpha, cand)?;
        g.add(keep, blend)
    }
}

/// `clamp(σ(w·h + b))`: a probability from a hidden state through a learned
/// scalar projection.
pub fn conditional_prob(g: &mut Graph, p: &Bound, projection: &Linear, h: Var) -> Result<Var> {
    if projection.output != 1 {
        return Err(Error::dim("conditional_prob", "projection must map to one output"));
    }
    let logit = projection.forward(g, p, h)?;
    let prob = g.sigmoid(logit);
    Ok(g.clamp(prob, PROB_MIN, PROB_MAX))
}

fn check_probabilities(g: &Graph, vars: &[Var]) -> Result<()> {
    for v in vars {
        if let Some(bad) = g.value(*v).data().iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::Contract(format!("probability {bad} outside [0, 1]")));
        }
    }
    Ok(())
}

/// `Σ_c p_c · q_c` over browse, collect, cart. The three products are summed
/// in ascending order per element, so the result does not depend on the order
/// the conditions are listed in. Not clamped: the sum can exceed 1.
pub fn total_probability(g: &mut Graph, marginals: [Var; 3], conditionals: [Var; 3]) -> Result<Var> {
    check_probabilities(g, &marginals)?;
    check_probabilities(g, &conditionals)?;
    let mut terms = Vec::with_capacity(3);
    for (pm, q) in marginals.into_iter().zip(conditionals) {
        terms.push(g.mul(pm, q)?);
    }
    g.add_n(&terms)
}

/// Plain-number version of [`total_probability`], sharing its summation order.
pub fn total_probability_value(marginals: [f64; 3], conditionals: [f64; 3]) -> Result<f64> {
    if marginals.iter().chain(&conditionals).any(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::Contract("total probability inputs must lie in [0, 1]".into()));
    }
    let mut terms: Vec<f64> = marginals.iter().zip(&conditionals).map(|(a, b)| a * b).collect();
    terms.sort_by(f64::total_cmp);
    Ok(terms.iter().sum())
}
