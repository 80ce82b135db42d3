//! Feature extraction and FS → FFPE embedding translation.

mod extractor;
mod penalty;
mod translator;

pub use extractor::{ConvExtractor, ExtractorConfig, ExtractorTrainReport, FeatureExtractor};
pub use penalty::{gradient_penalty, Critic, LinearCritic, MlpCritic};
pub use translator::{
    cycle_error, translate_embedding, translate_embeddings, EmbeddingMap, IdentityMap, TranslatorConfig, TranslatorInit,
    TranslatorLosses, TranslatorPair, TranslatorTrainer, UNetFc,
};
