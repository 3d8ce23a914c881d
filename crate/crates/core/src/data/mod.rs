//! Transcripts, feature files, manifests, batching, and the synthetic
//! corpus generator.

mod batch;
mod features;
mod manifest;
mod synth;
mod vocab;

pub use batch::{make_batches, UtteranceBatch};
pub use features::{read_features, write_features, Cmvn, FEATURE_MAGIC, FEATURE_VERSION};
pub use manifest::MIN_FRAMES;
pub use manifest::{load_manifest, write_manifest, CorpusStats, Manifest, ManifestEntry, Utterance};
pub use synth::{
    oracle_decode, read_prototypes, render_utterance, token_char, SynthConfig, SynthCorpus, PROTOTYPES_FILE,
    VOCAB_FILE,
};
pub use vocab::{encode_targets, pad_targets, Vocabulary, EOS, EOS_TOKEN, UNK, UNK_TOKEN};
