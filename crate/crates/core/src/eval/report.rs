use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{Batch, Behavior, ExampleRecord};
use crate::error::{Error, Result};
use crate::model::{MultiTaskModel, TaskOutputs};

use super::metrics::{auc, f1, regression_metrics, RegressionMetrics};
use super::policy::PolicyMetrics;

const PREDICT_CHUNK: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub task: Behavior,
    pub auc: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    /// Browse, collect, cart, purchase.
    pub classification: Vec<ClassificationMetrics>,
    pub regression: RegressionMetrics,
    pub policy: Option<PolicyMetrics>,
}

impl MetricsReport {
    pub fn task(&self, b: Behavior) -> &ClassificationMetrics {
        &self.classification[b as usize]
    }
}

/// Runs `model` over `records` in inference mode.
pub fn predict_all<M: MultiTaskModel + ?Sized>(model: &M, records: &[ExampleRecord]) -> Result<Vec<TaskOutputs>> {
    let mut out = Vec::with_capacity(records.len());
    for chunk in records.chunks(PREDICT_CHUNK) {
        out.extend(model.predict(&Batch::from_slice(chunk)?)?);
    }
    Ok(out)
}

/// Scores every task from precomputed predictions.
pub fn report_from_outputs(
    model: &str,
    outputs: &[TaskOutputs],
    records: &[ExampleRecord],
    threshold: f64,
) -> Result<MetricsReport> {
    if outputs.len() != records.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} records",
            outputs.len(),
            records.len()
        )));
    }
    let mut classification = Vec::with_capacity(4);
    for b in Behavior::ALL {
        let scores: Vec<f64> = outputs.iter().map(|o| o.probability(b)).collect();
        let labels: Vec<u8> = records.iter().map(|r| r.labels.get(b)).collect();
        classification.push(ClassificationMetrics {
            task: b,
            auc: auc(&scores, &labels)?,
            f1: f1(&scores, &labels, threshold)?,
        });
    }
    let preds: Vec<f64> = outputs.iter().map(|o| o.ov_pred).collect();
    let targets: Vec<f64> = records.iter().map(|r| r.order_volume as f64).collect();
    Ok(MetricsReport {
        model: model.to_string(),
        classification,
        regression: regression_metrics(&preds, &targets)?,
        policy: None,
    })
}

pub fn evaluate<M: MultiTaskModel + ?Sized>(
    label: &str,
    model: &M,
    records: &[ExampleRecord],
    threshold: f64,
) -> Result<MetricsReport> {
    let outputs = predict_all(model, records)?;
    report_from_outputs(label, &outputs, records, threshold)
}

#[derive(Serialize)]
struct CsvRow<'a> {
    model: &'a str,
    task: &'a str,
    auc: Option<f64>,
    f1: Option<f64>,
    mae: Option<f64>,
    mape: Option<f64>,
    wmape: Option<f64>,
}

/// One row per model and task; classification rows leave the regression
/// columns empty and vice versa.
pub fn write_metrics_csv<W: Write>(reports: &[MetricsReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        for c in &r.classification {
            w.serialize(CsvRow {
                model: &r.model,
                task: c.task.name(),
                auc: Some(c.auc),
                f1: Some(c.f1),
                mae: None,
                mape: None,
                wmape: None,
            })?;
        }
        w.serialize(CsvRow {
            model: &r.model,
            task: "order_volume",
            auc: None,
            f1: None,
            mae: Some(r.regression.mae),
            mape: Some(r.regression.mape),
            wmape: Some(r.regression.wmape),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// AUC and F1 per behaviour, one line per model.
pub fn classification_table(reports: &[MetricsReport]) -> String {
    let mut s = format!("{:<12}", "Model");
    for b in Behavior::ALL {
        let _ = write!(s, " | {:^19}", b.name());
    }
    s.push('\n');
    let _ = write!(s, "{:<12}", "");
    for _ in Behavior::ALL {
        let _ = write!(s, " | {:>9} {:>9}", "AUC", "F1");
    }
    s.push('\n');
    for r in reports {
        let _ = write!(s, "{:<12}", r.model);
        for c in &r.classification {
            let _ = write!(s, " | {:>9.5} {:>9.5}", c.auc, c.f1);
        }
        s.push('\n');
    }
    s
}

/// Order-volume error per model.
pub fn regression_table(reports: &[MetricsReport]) -> String {
    let mut s = format!("{:<12} | {:>9} | {:>9} | {:>9}\n", "Model", "MAE", "MAPE", "WMAPE");
    for r in reports {
        let m = &r.regression;
        let _ = writeln!(s, "{:<12} | {:>9.5} | {:>9.5} | {:>9.5}", r.model, m.mae, m.mape, m.wmape);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(name: &str) -> MetricsReport {
        MetricsReport {
            model: name.into(),
            classification: Behavior::ALL
                .iter()
                .map(|&task| ClassificationMetrics {
                    task,
                    auc: 0.75,
                    f1: 0.5,
                })
                .collect(),
            regression: RegressionMetrics {
                mae: 1.0,
                mape: 0.25,
                wmape: 0.5,
            },
            policy: None,
        }
    }

    #[test]
    fn tables_have_one_row_per_model() {
        let reports = [report("LR"), report("TPG-DNN")];
        let cls = classification_table(&reports);
        assert_eq!(cls.lines().count(), 4);
        assert!(cls.lines().nth(3).unwrap().starts_with("TPG-DNN"));
        assert!(cls.contains("0.75000"));
        let reg = regression_table(&reports);
        assert_eq!(reg.lines().count(), 3);
        assert!(reg.contains("0.25000"));
    }

    #[test]
    fn csv_leaves_the_other_kind_of_column_empty() {
        let mut bytes = Vec::new();
        write_metrics_csv(&[report("LR")], &mut bytes).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "model,task,auc,f1,mae,mape,wmape");
        assert_eq!(lines[1], "LR,browse,0.75,0.5,,,");
        assert_eq!(lines[5], "LR,order_volume,,,1.0,0.25,0.5");
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let records = crate::data::FunnelWorld::new(&Default::default())
            .unwrap()
            .population(0, 0, 2)
            .unwrap();
        assert!(matches!(report_from_outputs("x", &[], &records, 0.5), Err(Error::Input(_))));
    }
}
