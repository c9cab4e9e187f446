//! Reusable layers. Every layer registers its tensors in a [`ParamStore`] at
//! construction and reads them back through a [`Bound`] during the forward
//! pass, so the same layer can run on any graph.

mod attention;
mod cin;
mod embedding;
mod layers;
mod params;

pub use attention::{attention, sinusoidal_positions, Encoded, Head, MultiHeadAttention, SequenceEncoder};
pub use cin::{Cin, Pooling};
pub use embedding::{Embedding, Field, FieldSchema};
pub use layers::{Linear, Prelu, ResidualBlock, PRELU_INIT};
pub use params::{Bound, Init, NamedTensor, ParamId, ParamStore};
