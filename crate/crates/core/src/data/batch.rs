use super::record::{Behavior, ExampleRecord};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Model-ready view of a slice of records.
///
/// Sequence counts enter the network as `ln(1 + count)`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub size: usize,
    /// `fields[f][b]`: category of field `f` for example `b`.
    pub fields: Vec<Vec<usize>>,
    /// `[B, t, d]`
    pub short: Tensor,
    /// `[B, T, d]`
    pub long: Tensor,
    /// Browse, collect, cart, purchase labels, each `[B, 1]`.
    pub labels: [Tensor; 4],
    /// `[B, 1]`
    pub order_volume: Tensor,
}

impl Batch {
    pub fn new(records: &[&ExampleRecord]) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::Input("empty batch".into()))?;
        let n_fields = first.fields.len();
        let (t, d) = first.short_dims();
        let (tl, dl) = first.long_dims();
        if t == 0 || tl == 0 || d == 0 || d != dl {
            return Err(Error::Input(format!(
                "sequences must be non-empty with matching channels, got {t}×{d} and {tl}×{dl}"
            )));
        }
        let size = records.len();
        let mut fields = vec![Vec::with_capacity(size); n_fields];
        let mut short = Vec::with_capacity(size * t * d);
        let mut long = Vec::with_capacity(size * tl * d);
        let mut labels: [Vec<f64>; 4] = Default::default();
        let mut volume = Vec::with_capacity(size);
        for r in records {
            if r.fields.len() != n_fields || r.short_dims() != (t, d) || r.long_dims() != (tl, d) {
                return Err(Error::Input("records in a batch disagree on dimensions".into()));
            }
            for (col, &v) in fields.iter_mut().zip(&r.fields) {
                col.push(v);
            }
            short.extend(r.short_seq.iter().flatten().map(|&c| f64::ln_1p(c as f64)));
            long.extend(r.long_seq.iter().flatten().map(|&c| f64::ln_1p(c as f64)));
            for (slot, b) in labels.iter_mut().zip(Behavior::ALL) {
                slot.push(r.labels.get(b) as f64);
            }
            volume.push(r.order_volume as f64);
        }
        let column = |v: Vec<f64>| Tensor::new(vec![size, 1], v);
        let [lb, lc, la, lp] = labels;
        Ok(Batch {
            size,
            fields,
            short: Tensor::new(vec![size, t, d], short)?,
            long: Tensor::new(vec![size, tl, d], long)?,
            labels: [column(lb)?, column(lc)?, column(la)?, column(lp)?],
            order_volume: column(volume)?,
        })
    }

    pub fn from_slice(records: &[ExampleRecord]) -> Result<Self> {
        let refs: Vec<&ExampleRecord> = records.iter().collect();
        Batch::new(&refs)
    }

    pub fn label(&self, b: Behavior) -> &Tensor {
        &self.labels[b as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Labels;

    fn record(fields: Vec<usize>, short: Vec<Vec<u32>>, purchase: u8) -> ExampleRecord {
        ExampleRecord {
            fields,
            long_seq: vec![vec![0; short[0].len()]],
            short_seq: short,
            labels: Labels {
                browse: 1,
                collect: 0,
                cart: 1,
                purchase,
            },
            order_volume: u32::from(purchase) * 4,
            truth: None,
        }
    }

    #[test]
    fn stacks_records_by_field_and_log_scales_counts() {
        let a = record(vec![1, 2], vec![vec![0, 3], vec![1, 0]], 1);
        let b = record(vec![0, 5], vec![vec![7, 0], vec![0, 0]], 0);
        let batch = Batch::new(&[&a, &b]).unwrap();
        assert_eq!(batch.fields, vec![vec![1, 0], vec![2, 5]]);
        assert_eq!(batch.short.shape(), &[2, 2, 2]);
        assert_eq!(batch.short.data()[1], 4f64.ln());
        assert_eq!(batch.short.data()[4], 8f64.ln());
        assert_eq!(batch.label(Behavior::Purchase).data(), &[1.0, 0.0]);
        assert_eq!(batch.label(Behavior::Collect).data(), &[0.0, 0.0]);
        assert_eq!(batch.order_volume.data(), &[4.0, 0.0]);
    }

    #[test]
    fn rejects_empty_and_ragged_batches() {
        assert!(Batch::new(&[]).is_err());
        let a = record(vec![1, 2], vec![vec![0, 3]], 1);
        let b = record(vec![1], vec![vec![0, 3]], 1);
        assert!(Batch::new(&[&a, &b]).is_err());
        let c = record(vec![1, 2], vec![vec![0, 3], vec![0, 0]], 1);
        assert!(Batch::new(&[&a, &c]).is_err());
    }
}
