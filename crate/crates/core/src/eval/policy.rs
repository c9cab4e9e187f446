use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ExampleRecord;
use crate::error::{Error, Result};

/// One user's coupon outcome.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvent {
    pub received: bool,
    pub verified: bool,
    /// Money spent on coupons this user redeemed.
    pub verified_amount: f64,
    /// Orders placed with a redeemed coupon.
    pub order_volume: f64,
    pub transaction_amount: f64,
}

/// Aggregates and ratios of a coupon campaign. A ratio whose denominator is
/// zero is `None`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyMetrics {
    pub received: usize,
    pub verified: usize,
    pub verified_amount: f64,
    pub order_volume: f64,
    pub transaction_amount: f64,
    /// Verified users per coupon received.
    pub verification_rate: Option<f64>,
    /// Verified amount per order.
    pub cost_per_order: Option<f64>,
    /// Transaction amount per verified amount.
    pub roi: Option<f64>,
}

fn ratio(num: f64, den: f64, what: &str) -> Result<f64> {
    if den == 0.0 {
        Err(Error::UndefinedMetric(format!("{what}: zero denominator")))
    } else {
        Ok(num / den)
    }
}

pub fn verification_rate(verified: usize, received: usize) -> Result<f64> {
    ratio(verified as f64, received as f64, "verification rate")
}

pub fn cost_per_order(verified_amount: f64, order_volume: f64) -> Result<f64> {
    ratio(verified_amount, order_volume, "cost per order")
}

pub fn roi(transaction_amount: f64, verified_amount: f64) -> Result<f64> {
    ratio(transaction_amount, verified_amount, "ROI")
}

pub fn policy_metrics(events: &[PolicyEvent]) -> PolicyMetrics {
    let received = events.iter().filter(|e| e.received).count();
    let verified = events.iter().filter(|e| e.verified).count();
    let verified_amount = events.iter().map(|e| e.verified_amount).sum();
    let order_volume = events.iter().map(|e| e.order_volume).sum();
    let transaction_amount = events.iter().map(|e| e.transaction_amount).sum();
    PolicyMetrics {
        received,
        verified,
        verified_amount,
        order_volume,
        transaction_amount,
        verification_rate: verification_rate(verified, received).ok(),
        cost_per_order: cost_per_order(verified_amount, order_volume).ok(),
        roi: roi(transaction_amount, verified_amount).ok(),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// A uniformly random subset of users.
    #[default]
    Random,
    /// The users with the highest purchase scores.
    Model,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Strategy::Random),
            "model" => Ok(Strategy::Model),
            other => Err(Error::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CouponConfig {
    /// Share of the population that receives a coupon.
    pub budget_fraction: f64,
    pub coupon_value: f64,
    pub order_value: f64,
}

impl Default for CouponConfig {
    fn default() -> Self {
        CouponConfig {
            budget_fraction: 0.2,
            coupon_value: 5.0,
            order_value: 30.0,
        }
    }
}

/// Hands out `round(budget_fraction · n)` coupons and logs what each user did.
///
/// A coupon is verified when its holder purchased; the model strategy ranks
/// by `scores` (ties go to the lower index), the random strategy shuffles
/// with `seed`.
pub fn simulate_coupons(
    strategy: Strategy,
    scores: &[f64],
    population: &[ExampleRecord],
    config: &CouponConfig,
    seed: u64,
) -> Result<Vec<PolicyEvent>> {
    if scores.len() != population.len() {
        return Err(Error::Input(format!(
            "{} scores for {} users",
            scores.len(),
            population.len()
        )));
    }
    if !(0.0..=1.0).contains(&config.budget_fraction) {
        return Err(Error::Config("budget fraction must lie in [0, 1]".into()));
    }
    let budget = (config.budget_fraction * population.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..population.len()).collect();
    match strategy {
        Strategy::Model => {
            if scores.iter().any(|s| s.is_nan()) {
                return Err(Error::Input("NaN score".into()));
            }
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        }
        Strategy::Random => order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed)),
    }

    let mut events = vec![PolicyEvent::default(); population.len()];
    for &i in &order[..budget] {
        let r = &population[i];
        let verified = r.labels.purchase == 1;
        let orders = if verified { r.order_volume as f64 } else { 0.0 };
        events[i] = PolicyEvent {
            received: true,
            verified,
            verified_amount: if verified { config.coupon_value } else { 0.0 },
            order_volume: orders,
            transaction_amount: orders * config.order_value,
        };
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_examples() {
        assert_eq!(verification_rate(25, 100).unwrap(), 0.25);
        assert_eq!(cost_per_order(50.0, 200.0).unwrap(), 0.25);
        assert_eq!(roi(300.0, 50.0).unwrap(), 6.0);
        assert!(matches!(verification_rate(0, 0), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn empty_campaign_has_no_ratios() {
        let m = policy_metrics(&[PolicyEvent::default(); 3]);
        assert_eq!(m.received, 0);
        assert_eq!(m.verification_rate, None);
        assert_eq!(m.roi, None);
    }
}
