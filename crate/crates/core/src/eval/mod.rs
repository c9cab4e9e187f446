//! Metrics, baselines and the coupon-policy simulation.

mod baselines;
mod metrics;
mod policy;
mod report;

pub use baselines::{run_baseline, AnyModel, BaselineRun, LinearBaseline, Variant};
pub use metrics::{auc, f1, regression_metrics, RegressionMetrics};
pub use policy::{
    cost_per_order, policy_metrics, roi, simulate_coupons, verification_rate, CouponConfig, PolicyEvent,
    PolicyMetrics, Strategy,
};
pub use report::{
    classification_table, evaluate, predict_all, regression_table, report_from_outputs, write_metrics_csv,
    ClassificationMetrics, MetricsReport,
};
