//! Sentence scoring with a loaded checkpoint.

use std::path::Path;

use crate::checkpoint::{checkpoint_id, config_hash, Checkpoint};
use crate::error::Result;
use crate::model::{predict_batch, Prediction};
use crate::text::{encode, BasicTokenizer, Tokenizer};

/// An immutable model snapshot with its tokenizer; safe to share across threads.
pub struct Scorer {
    checkpoint: Checkpoint,
    tokenizer: Box<dyn Tokenizer>,
    checkpoint_id: String,
    config_hash: String,
}

impl std::fmt::Debug for Scorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scorer")
            .field("checkpoint_id", &self.checkpoint_id)
            .field("config_hash", &self.config_hash)
            .finish_non_exhaustive()
    }
}

impl Scorer {
    pub fn new(checkpoint: Checkpoint) -> Result<Self> {
        let bytes = checkpoint.to_bytes()?;
        Ok(Self {
            checkpoint_id: checkpoint_id(&bytes),
            config_hash: config_hash(checkpoint.params.config()),
            checkpoint,
            tokenizer: Box::new(BasicTokenizer),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::new(crate::checkpoint::load_checkpoint(path)?)
    }

    pub fn with_tokenizer(mut self, tokenizer: Box<dyn Tokenizer>) -> Self {
        self.tokenizer = tokenizer;
        self
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.checkpoint
    }

    pub fn checkpoint_id(&self) -> &str {
        &self.checkpoint_id
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    /// Predictions in input order.
    pub fn score<S: AsRef<str>>(&self, sentences: &[S]) -> Result<Vec<Prediction>> {
        let seq_len = self.checkpoint.params.config().seq_len;
        let inputs = sentences
            .iter()
            .map(|s| encode(s.as_ref(), &self.checkpoint.vocab, self.tokenizer.as_ref(), seq_len))
            .collect::<Result<Vec<_>>>()?;
        predict_batch(&inputs, &self.checkpoint.params)
    }
}
