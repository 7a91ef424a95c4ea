//! Image and expression encoders, the contrastive training loop and the
//! `BLPC` checkpoint format.

mod checkpoint;
mod encoder;
mod train;

pub use checkpoint::{ModelCheckpoint, BLPC_MAGIC};
pub use encoder::{Activation, Encoder, EncoderGrads, EncoderSpec, ForwardCache, Layer};
pub use train::{evaluate_loss, train, TrainConfig};

pub(crate) mod seed_string {
    //! TOML integers are signed 64-bit, so seeds are written as strings.
    //! Hand-written configs may still use a plain integer.
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Int(u64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Int(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(D::Error::custom),
        }
    }
}
