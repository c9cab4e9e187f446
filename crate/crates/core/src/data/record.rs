use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The four funnel behaviours, in the order used throughout the crate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Behavior {
    Browse,
    Collect,
    Cart,
    Purchase,
}

impl Behavior {
    pub const ALL: [Behavior; 4] = [
        Behavior::Browse,
        Behavior::Collect,
        Behavior::Cart,
        Behavior::Purchase,
    ];

    /// Behaviours that condition a purchase.
    pub const CONDITIONS: [Behavior; 3] = [Behavior::Browse, Behavior::Collect, Behavior::Cart];

    pub fn name(self) -> &'static str {
        match self {
            Behavior::Browse => "browse",
            Behavior::Collect => "collect",
            Behavior::Cart => "cart",
            Behavior::Purchase => "purchase",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    pub browse: u8,
    pub collect: u8,
    pub cart: u8,
    pub purchase: u8,
}

impl Labels {
    pub fn get(&self, b: Behavior) -> u8 {
        match b {
            Behavior::Browse => self.browse,
            Behavior::Collect => self.collect,
            Behavior::Cart => self.cart,
            Behavior::Purchase => self.purchase,
        }
    }
}

/// Generator-side probabilities behind one record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub p_browse: f64,
    pub p_collect: f64,
    pub p_cart: f64,
    pub q_browse: f64,
    pub q_collect: f64,
    pub q_cart: f64,
    /// `1 - Π_c (1 - p_c · q_c)`
    pub p_purchase: f64,
}

/// One user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    /// Categorical index per static field (numeric features already binned).
    pub fields: Vec<usize>,
    /// `t × d` daily behaviour counts, oldest day first.
    pub short_seq: Vec<Vec<u32>>,
    /// `T × d` period aggregates, oldest period first.
    pub long_seq: Vec<Vec<u32>>,
    pub labels: Labels,
    pub order_volume: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<GroundTruth>,
}

impl ExampleRecord {
    pub fn validate(&self) -> Result<()> {
        let l = &self.labels;
        if [l.browse, l.collect, l.cart, l.purchase].iter().any(|&v| v > 1) {
            return Err(Error::Input("labels must be 0 or 1".into()));
        }
        if l.purchase == 0 && self.order_volume != 0 {
            return Err(Error::Input(format!(
                "order volume {} on a non-purchasing record",
                self.order_volume
            )));
        }
        check_matrix("short_seq", &self.short_seq)?;
        check_matrix("long_seq", &self.long_seq)?;
        Ok(())
    }

    pub fn short_dims(&self) -> (usize, usize) {
        (self.short_seq.len(), self.short_seq.first().map_or(0, Vec::len))
    }

    pub fn long_dims(&self) -> (usize, usize) {
        (self.long_seq.len(), self.long_seq.first().map_or(0, Vec::len))
    }
}

fn check_matrix(name: &str, m: &[Vec<u32>]) -> Result<()> {
    let Some(first) = m.first() else {
        return Err(Error::Input(format!("{name} has no rows")));
    };
    if first.is_empty() || m.iter().any(|r| r.len() != first.len()) {
        return Err(Error::Input(format!("{name} rows are empty or ragged")));
    }
    Ok(())
}

pub type Dataset = Vec<ExampleRecord>;
