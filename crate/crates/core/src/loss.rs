//! Task losses and their uncertainty-weighted combination.
//!
//! Each task `i` owns a learnable `s_i = ln σ_i²`. Classification losses are
//! weighted by `exp(-s_i)`, the regression loss by `½·exp(-s_reg)`, and the
//! penalty `Σ ln σ_i = ½·Σ s_i` keeps the variances from growing without bound:
//!
//! ```text
//! total = Σ_cls exp(-s_i)·L_i + ½·exp(-s_reg)·L_reg + ½·Σ_all s_i
//! ```
//!
//! At `s = 0` this is exactly `Σ L_cls + ½·L_reg`, the equal-weight scheme.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

pub const PROB_MIN: f64 = 1e-7;
pub const PROB_MAX: f64 = 1.0 - 1e-7;

pub const CLASSIFICATION_TASKS: usize = 4;
/// Columns of the `s` vector: four classification tasks, then order volume.
pub const TASK_NAMES: [&str; 5] = ["bbr", "cbr", "car", "pbr", "ov"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossScheme {
    #[default]
    Uncertainty,
    EqualWeight,
}

/// Mean binary cross-entropy of probabilities `p` against 0/1 labels `y`.
pub fn bce(g: &mut Graph, p: Var, y: Var) -> Result<Var> {
    if let Some(bad) = g
        .value(p)
        .data()
        .iter()
        .find(|v| !(PROB_MIN..=PROB_MAX).contains(*v))
    {
        return Err(Error::Contract(format!(
            "probability {bad} outside [{PROB_MIN}, {PROB_MAX}]"
        )));
    }
    let complement_y = g.value(y).map(|v| 1.0 - v);
    let complement_y = g.constant(complement_y);
    let log_p = g.log(p)?;
    let one_minus_p = g.scale(p, -1.0);
    let one_minus_p = g.shift(one_minus_p, 1.0);
    let log_q = g.log(one_minus_p)?;
    let pos = g.mul(y, log_p)?;
    let neg = g.mul(complement_y, log_q)?;
    let ll = g.add(pos, neg)?;
    let mean = g.mean_all(ll);
    Ok(g.scale(mean, -1.0))
}

/// Mean squared error.
pub fn mse(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    let diff = g.sub(pred, target)?;
    let sq = g.mul(diff, diff)?;
    Ok(g.mean_all(sq))
}

/// Plain-number cross-entropy of a single prediction.
pub fn bce_value(p: f64, y: f64) -> Result<f64> {
    if !(PROB_MIN..=PROB_MAX).contains(&p) {
        return Err(Error::Contract(format!("probability {p} outside clamp range")));
    }
    Ok(-(y * p.ln() + (1.0 - y) * (1.0 - p).ln()))
}

/// Per-task losses of one batch, all one-element graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct TaskLosses {
    /// Browse, collect, cart, purchase.
    pub classification: [Var; CLASSIFICATION_TASKS],
    pub regression: Var,
}

/// Plain-number snapshot of a combined loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub bbr: f64,
    pub cbr: f64,
    pub car: f64,
    pub pbr: f64,
    pub ov: f64,
    /// `exp(-s_i)` per task, in [`TASK_NAMES`] order.
    pub weights: [f64; 5],
    /// `½·Σ s_i`
    pub regularizer: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn raw(&self) -> [f64; 5] {
        [self.bbr, self.cbr, self.car, self.pbr, self.ov]
    }

    /// `σ_i² = 1 / weight_i`
    pub fn variances(&self) -> [f64; 5] {
        self.weights.map(|w| 1.0 / w)
    }

    /// Recomputes the total from the raw losses and weights.
    pub fn recombined(&self) -> f64 {
        let raw = self.raw();
        let cls: f64 = (0..CLASSIFICATION_TASKS).map(|i| self.weights[i] * raw[i]).sum();
        cls + 0.5 * self.weights[4] * raw[4] + self.regularizer
    }

    /// Element-wise mean of several breakdowns (epoch averages).
    pub fn mean(items: &[LossBreakdown]) -> Option<LossBreakdown> {
        let n = items.len() as f64;
        let first = items.first()?;
        let mut acc = first.clone();
        for it in &items[1..] {
            acc.bbr += it.bbr;
            acc.cbr += it.cbr;
            acc.car += it.car;
            acc.pbr += it.pbr;
            acc.ov += it.ov;
            for (a, b) in acc.weights.iter_mut().zip(it.weights) {
                *a += b;
            }
            acc.regularizer += it.regularizer;
            acc.total += it.total;
        }
        acc.bbr /= n;
        acc.cbr /= n;
        acc.car /= n;
        acc.pbr /= n;
        acc.ov /= n;
        acc.weights.iter_mut().for_each(|w| *w /= n);
        acc.regularizer /= n;
        acc.total /= n;
        Some(acc)
    }
}

fn check_losses(g: &Graph, losses: &TaskLosses) -> Result<()> {
    for (name, v) in TASK_NAMES.iter().zip(losses.classification.iter().chain([&losses.regression])) {
        let value = g.value(*v).item();
        if !value.is_finite() || value < 0.0 {
            return Err(Error::Numeric(format!("task loss {name} is {value}")));
        }
    }
    Ok(())
}

fn breakdown(g: &Graph, losses: &TaskLosses, weights: [f64; 5], regularizer: f64, total: Var) -> LossBreakdown {
    let v = |x: Var| g.value(x).item();
    let [b, c, a, p] = losses.classification.map(v);
    LossBreakdown {
        bbr: b,
        cbr: c,
        car: a,
        pbr: p,
        ov: v(losses.regression),
        weights,
        regularizer,
        total: v(total),
    }
}

/// Uncertainty-weighted total. `log_vars` is the `[5]` vector of `s_i` in
/// [`TASK_NAMES`] order.
pub fn uncertainty_combine(g: &mut Graph, losses: &TaskLosses, log_vars: Var) -> Result<(Var, LossBreakdown)> {
    check_losses(g, losses)?;
    if g.shape(log_vars) != [TASK_NAMES.len()] {
        return Err(Error::dim(
            "uncertainty_combine",
            format!("expected [5] log-variances, got {:?}", g.shape(log_vars)),
        ));
    }
    let s = g.value(log_vars).clone();
    if !s.is_finite() {
        return Err(Error::Numeric("non-finite log-variance".into()));
    }

    let mut total: Option<Var> = None;
    for (i, &loss) in losses.classification.iter().enumerate() {
        let si = g.slice(log_vars, 0, i, 1)?;
        let neg = g.scale(si, -1.0);
        let w = g.exp(neg);
        let term = g.mul(w, loss)?;
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    let reg_s = g.slice(log_vars, 0, CLASSIFICATION_TASKS, 1)?;
    let neg = g.scale(reg_s, -1.0);
    let w = g.exp(neg);
    let weighted = g.mul(w, losses.regression)?;
    let reg_term = g.scale(weighted, 0.5);
    let total = g.add(total.expect("four tasks"), reg_term)?;
    let s_sum = g.sum_all(log_vars);
    let penalty = g.scale(s_sum, 0.5);
    let total = g.add(total, penalty)?;

    let weights: [f64; 5] = std::array::from_fn(|i| (-s.data()[i]).min(700.0).exp());
    let regularizer = g.value(penalty).item();
    Ok((total, breakdown(g, losses, weights, regularizer, total)))
}

/// `Σ L_cls + ½·L_reg`; bitwise identical to [`uncertainty_combine`] at `s = 0`.
pub fn equal_weight_combine(g: &mut Graph, losses: &TaskLosses) -> Result<(Var, LossBreakdown)> {
    check_losses(g, losses)?;
    let [b, c, a, p] = losses.classification;
    let t = g.add(b, c)?;
    let t = g.add(t, a)?;
    let t = g.add(t, p)?;
    let reg = g.scale(losses.regression, 0.5);
    let total = g.add(t, reg)?;
    Ok((total, breakdown(g, losses, [1.0; 5], 0.0, total)))
}

/// Combines with the chosen scheme; `log_vars` is ignored for equal weights.
pub fn combine(g: &mut Graph, scheme: LossScheme, losses: &TaskLosses, log_vars: Var) -> Result<(Var, LossBreakdown)> {
    match scheme {
        LossScheme::Uncertainty => uncertainty_combine(g, losses, log_vars),
        LossScheme::EqualWeight => equal_weight_combine(g, losses),
    }
}

/// Initial `s` vector (unit variances).
pub fn initial_log_variances() -> Tensor {
    Tensor::zeros(&[TASK_NAMES.len()])
}
