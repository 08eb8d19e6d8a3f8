use alloc::format;

use serde::{Deserialize, Serialize};

use crate::embed::{Provider, TOKEN_DIM, TOKEN_VOCAB};
use crate::{Error, Result};

/// Shape of a surrogate. One config drives both the factorized-attention
/// backbone and, when `multimodal`, the cross-attention text blocks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    /// Side length of the square input grid.
    pub grid: usize,
    pub depth: usize,
    pub hidden: usize,
    pub head_dim: usize,
    pub heads: usize,
    pub kernel_multiplier: usize,
    pub latent_multiplier: usize,
    pub patch_kernel: usize,
    pub patch_stride: usize,
    /// Hidden width of the post-deconvolution MLP in each multimodal block.
    pub recombine_width: usize,
    pub multimodal: bool,
    /// Source of the text vector; ignored unless `multimodal`.
    pub provider: Provider,
    /// Vocabulary of the trainable token table (tokenizer provider only).
    pub token_vocab: usize,
    /// Adds the input field to the output projection.
    pub input_residual: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self::next_step_baseline()
    }
}

impl ArchConfig {
    pub fn next_step_baseline() -> Self {
        Self {
            grid: 64,
            depth: 1,
            hidden: 32,
            head_dim: 4,
            heads: 4,
            kernel_multiplier: 2,
            latent_multiplier: 2,
            patch_kernel: 8,
            patch_stride: 4,
            recombine_width: 128,
            multimodal: false,
            provider: Provider::SentenceStore,
            token_vocab: TOKEN_VOCAB,
            input_residual: false,
        }
    }

    pub fn next_step_multimodal(provider: Provider) -> Self {
        Self {
            head_dim: 1,
            heads: 1,
            multimodal: true,
            provider,
            ..Self::next_step_baseline()
        }
    }

    pub fn fixed_future_baseline() -> Self {
        Self {
            hidden: 64,
            ..Self::next_step_baseline()
        }
    }

    pub fn fixed_future_multimodal(provider: Provider) -> Self {
        Self {
            multimodal: true,
            provider,
            ..Self::next_step_baseline()
        }
    }

    /// Patches per side: `(grid − kernel) / stride + 1`.
    pub fn patch_side(&self) -> usize {
        (self.grid - self.patch_kernel) / self.patch_stride + 1
    }

    pub fn patches(&self) -> usize {
        self.patch_side() * self.patch_side()
    }

    /// Width of the text vector entering the sentence projection.
    pub fn llm_dim(&self) -> usize {
        match self.provider {
            Provider::Tokenizer => TOKEN_DIM,
            p => p.dim(),
        }
    }

    pub fn latent(&self) -> usize {
        self.latent_multiplier * self.hidden
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("architecture: {m}")));
        if self.grid == 0 || self.hidden == 0 || self.head_dim == 0 || self.heads == 0 {
            return bad("grid, hidden, head_dim and heads must be positive");
        }
        if self.kernel_multiplier == 0 || self.latent_multiplier == 0 || self.recombine_width == 0 {
            return bad("multipliers and recombine width must be positive");
        }
        if self.patch_stride == 0 || self.patch_kernel == 0 || self.patch_kernel > self.grid {
            return bad("patch kernel must fit the grid and stride must be positive");
        }
        if !(self.grid - self.patch_kernel).is_multiple_of(self.patch_stride) {
            return bad("patch stride must tile the grid exactly so the deconvolution restores it");
        }
        if !self.latent().is_multiple_of(self.heads) {
            return bad("latent width must be divisible by heads");
        }
        if self.multimodal && self.provider == Provider::Tokenizer && self.token_vocab == 0 {
            return bad("token vocabulary must be positive");
        }
        Ok(())
    }
}
