use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::embed::Provider;
use crate::model::ArchConfig;
use crate::text::DescriptionFlags;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Frame `t` to frame `t + 1` over every transition.
    NextStep,
    /// Initial condition to the final frame.
    FixedFuture,
    /// Next-step training followed by autoregressive rollout evaluation.
    Rollout,
}

/// Text conditioning; absent means an unconditioned baseline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextSpec {
    pub flags: DescriptionFlags,
    pub provider: Provider,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferSpec {
    /// Dataset names combined for pretraining. Shallow-Water is refused.
    pub pretrain: Vec<String>,
    pub finetune: String,
    pub pretrain_epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub task: Task,
    /// Names of the datasets the run trains and evaluates on.
    pub datasets: Vec<String>,
    pub text: Option<TextSpec>,
    pub seeds: Vec<u64>,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Random training pairs drawn per epoch; `None` uses all of them.
    pub pairs_per_epoch: Option<usize>,
    /// Fixed, evenly spaced subset of validation pairs; `None` uses all.
    pub val_pairs: Option<usize>,
    /// Same for test pairs.
    pub test_pairs: Option<usize>,
    pub rollout_steps: usize,
    /// Divide fields by the per-dataset training RMS.
    pub normalize: bool,
    /// Replaces the task preset when given; `multimodal` and `provider` are
    /// still taken from `text`.
    pub arch: Option<ArchConfig>,
    pub transfer: Option<TransferSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: Task::NextStep,
            datasets: Vec::new(),
            text: None,
            seeds: vec![0, 1, 2],
            split: [0.8, 0.1, 0.1],
            epochs: 20,
            batch_size: 32,
            lr: 1e-3,
            weight_decay: 0.0,
            pairs_per_epoch: None,
            val_pairs: None,
            test_pairs: None,
            rollout_steps: 40,
            normalize: false,
            arch: None,
            transfer: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.split.iter().any(|f| !(0.0..=1.0).contains(f)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!(
                "split fractions {:?} must lie in [0, 1] and sum to 1",
                self.split
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) || !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("invalid lr {} or weight_decay {}", self.lr, self.weight_decay));
        }
        if self.task == Task::Rollout && self.rollout_steps == 0 {
            return bad("rollout_steps must be positive".into());
        }
        if self.datasets.is_empty() && self.transfer.is_none() {
            return bad("no datasets named".into());
        }
        if let Some(t) = &self.transfer {
            if t.pretrain.is_empty() {
                return bad("transfer needs at least one pretraining dataset".into());
            }
        }
        self.arch().validate()
    }

    /// Architecture implied by the task, text spec and override.
    pub fn arch(&self) -> ArchConfig {
        let fixed = self.task == Task::FixedFuture;
        let mut a = match (self.arch, self.text, fixed) {
            (Some(a), _, _) => a,
            (None, None, false) => ArchConfig::next_step_baseline(),
            (None, None, true) => ArchConfig::fixed_future_baseline(),
            (None, Some(t), false) => ArchConfig::next_step_multimodal(t.provider),
            (None, Some(t), true) => ArchConfig::fixed_future_multimodal(t.provider),
        };
        a.multimodal = self.text.is_some();
        if let Some(t) = self.text {
            a.provider = t.provider;
        }
        a
    }

    /// Copy with the text flags replaced, keeping everything else.
    pub fn with_flags(&self, flags: DescriptionFlags) -> Result<Self> {
        let mut c = self.clone();
        match &mut c.text {
            Some(t) => t.flags = flags,
            None => return Err(Error::Config("ablation needs a text-conditioned base config".into())),
        }
        Ok(c)
    }
}
