//! Multi-scale generator, patch discriminator and checkpoint container.

mod checkpoint;
mod discriminator;
mod generator;

pub use checkpoint::{blend, interpolate_params, EffectiveParams, MultiScaleCheckpoint, Stage, CHECKPOINT_VERSION};
pub use discriminator::{discriminate, init_discriminator, DiscriminatorConfig, PatchDiscriminator};
pub use generator::{generate, generate_with, BlockType, GenerateOptions, Generator, GeneratorConfig};
pub(crate) use generator::forward_eager;
