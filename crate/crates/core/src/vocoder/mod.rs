//! Neural vocoder, its adversarial critic, and the Griffin-Lim fallback.

mod discriminator;
mod generator;
mod griffin_lim;
mod import;

pub use discriminator::{DiscriminatorConfig, MultiScaleDiscriminator, ScaleOutput};
pub use generator::{Generator, GeneratorConfig};
pub use griffin_lim::{griffin_lim, griffin_lim_with_trace, mel_to_linear};
pub use import::{export_vocoder, import_vocoder, VocoderArchiveHeader, VOCODER_FORMAT};
