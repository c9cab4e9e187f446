use serde::{Deserialize, Serialize};

use super::params::{Bound, Init, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Field {
    pub name: String,
    pub cardinality: usize,
}

/// Categorical fields feeding the embedding layer. Every field embeds to the
/// same width so that field vectors can be multiplied elementwise.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSchema {
    pub fields: Vec<Field>,
    pub embedding_dim: usize,
}

impl FieldSchema {
    pub fn new(cardinalities: &[usize], embedding_dim: usize) -> Result<Self> {
        if cardinalities.is_empty() {
            return Err(Error::Config("schema needs at least one field".into()));
        }
        if embedding_dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        let fields = cardinalities
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                if c == 0 {
                    Err(Error::Config(format!("field f{i} has zero cardinality")))
                } else {
                    Ok(Field {
                        name: format!("f{i}"),
                        cardinality: c,
                    })
                }
            })
            .collect::<Result<_>>()?;
        Ok(FieldSchema {
            fields,
            embedding_dim,
        })
    }

    pub fn num_fields(&self) -> usize {
        self.fields.len()
    }

    /// Checks one example's indices against the vocabularies.
    pub fn validate(&self, indices: &[usize]) -> Result<()> {
        if indices.len() != self.fields.len() {
            return Err(Error::Input(format!(
                "expected {} categorical fields, got {}",
                self.fields.len(),
                indices.len()
            )));
        }
        for (field, &i) in self.fields.iter().zip(indices) {
            if i >= field.cardinality {
                return Err(Error::Input(format!(
                    "index {i} out of vocabulary for field {} (cardinality {})",
                    field.name, field.cardinality
                )));
            }
        }
        Ok(())
    }
}

/// One lookup table per field.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Embedding {
    pub schema: FieldSchema,
    pub tables: Vec<ParamId>,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, schema: FieldSchema) -> Self {
        let d = schema.embedding_dim;
        let tables = schema
            .fields
            .iter()
            .map(|f| store.add(format!("{name}.{}", f.name), init.uniform(&[f.cardinality, d], d)))
            .collect();
        Embedding { schema, tables }
    }

    /// `indices[field][example]` to the stacked embedding matrix, laid out
    /// channels-last as `[B, D, M]` (entry `[b, d, i]` is component `d` of
    /// field `i`'s vector).
    pub fn forward(&self, g: &mut Graph, p: &Bound, indices: &[Vec<usize>]) -> Result<Var> {
        if indices.len() != self.schema.num_fields() {
            return Err(Error::Input(format!(
                "expected {} categorical fields, got {}",
                self.schema.num_fields(),
                indices.len()
            )));
        }
        let batch = indices[0].len();
        let d = self.schema.embedding_dim;
        let mut columns = Vec::with_capacity(indices.len());
        for ((field, table), rows) in self.schema.fields.iter().zip(&self.tables).zip(indices) {
            if rows.len() != batch {
                return Err(Error::Input(format!("field {} has a ragged batch", field.name)));
            }
            if let Some(bad) = rows.iter().find(|&&r| r >= field.cardinality) {
                return Err(Error::Input(format!(
                    "index {bad} out of vocabulary for field {} (cardinality {})",
                    field.name, field.cardinality
                )));
            }
            let rows = g.gather(p[*table], rows)?;
            columns.push(g.reshape(rows, &[batch, d, 1])?);
        }
        g.concat(&columns, 2)
    }
}
