//! Encoders, decoder, and the named-parameter plumbing shared with the
//! latent operator.

mod autoencoder;
mod embedding;
mod mlp;
mod params;

pub use autoencoder::{
    BoundEncoders, BoundModel, Decoder, EncoderPair, KoopmanAutoencoder, ModelConfig,
};
pub use embedding::ParamEmbedding;
pub use mlp::{Activation, BoundMlp, Mlp};
pub use params::{Bindings, Parameters};
