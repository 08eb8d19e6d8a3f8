use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::embed::{tokenize_with_vocab, EmbeddingStore, Provider};
use crate::model::{ArchConfig, TextInput};
use crate::sim::Trajectory;
use crate::tensor::Tensor;
use crate::text::render_description;
use crate::{Error, Result};

use super::config::{Task, TextSpec};

/// Named collection of trajectories sharing one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub trajectories: Vec<Trajectory>,
}

/// One supervised example: frame `input` of a trajectory predicts frame `target`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pair {
    pub dataset: usize,
    pub traj: usize,
    pub input: usize,
    pub target: usize,
}

/// Pairs for the given trajectories of one dataset.
pub fn build_pairs(task: Task, dataset: usize, trajs: &[usize], frames: usize) -> Vec<Pair> {
    let mut out = Vec::new();
    for &traj in trajs {
        match task {
            Task::NextStep | Task::Rollout => {
                out.extend((0..frames.saturating_sub(1)).map(|t| Pair {
                    dataset,
                    traj,
                    input: t,
                    target: t + 1,
                }));
            }
            Task::FixedFuture if frames > 1 => out.push(Pair {
                dataset,
                traj,
                input: 0,
                target: frames - 1,
            }),
            Task::FixedFuture => {}
        }
    }
    out
}

/// Per-trajectory conditioning, precomputed once per experiment.
#[derive(Clone, Debug, PartialEq)]
pub enum TextBank {
    None,
    /// `[dataset][trajectory]` vectors of width `dim`.
    Vectors {
        dim: usize,
        rows: Vec<Vec<Vec<f32>>>,
    },
    Tokens(Vec<Vec<Vec<u32>>>),
}

impl TextBank {
    pub fn build(
        datasets: &[&Dataset],
        text: Option<TextSpec>,
        arch: &ArchConfig,
        store: Option<&EmbeddingStore>,
    ) -> Result<Self> {
        let Some(spec) = text else { return Ok(TextBank::None) };
        let descriptions = |d: &Dataset| {
            d.trajectories
                .iter()
                .map(|t| render_description(&t.params, spec.flags))
                .collect::<Vec<_>>()
        };
        match spec.provider {
            Provider::Tokenizer => Ok(TextBank::Tokens(
                datasets
                    .iter()
                    .map(|d| {
                        descriptions(d)
                            .iter()
                            .map(|s| tokenize_with_vocab(&s.text, arch.token_vocab).ids)
                            .collect()
                    })
                    .collect(),
            )),
            provider => {
                let store = store
                    .ok_or_else(|| Error::Config(format!("provider {} needs an embedding store", provider.name())))?;
                if store.dim() != arch.llm_dim() {
                    return Err(Error::Config(format!(
                        "store width {} does not match model text width {}",
                        store.dim(),
                        arch.llm_dim()
                    )));
                }
                let mut rows = Vec::with_capacity(datasets.len());
                for d in datasets {
                    let mut r = Vec::with_capacity(d.trajectories.len());
                    for s in descriptions(d) {
                        r.push(store.lookup(&s, provider)?.values);
                    }
                    rows.push(r);
                }
                Ok(TextBank::Vectors { dim: store.dim(), rows })
            }
        }
    }
}

/// Text for one batch, owned so the model can borrow it.
#[derive(Clone, Debug)]
pub(crate) enum BatchText {
    None,
    Vectors(Tensor<f32>),
    Tokens(Vec<Vec<u32>>),
}

impl BatchText {
    pub(crate) fn input(&self) -> Option<TextInput<'_, f32>> {
        match self {
            BatchText::None => None,
            BatchText::Vectors(t) => Some(TextInput::Vectors(t)),
            BatchText::Tokens(t) => Some(TextInput::Tokens(t)),
        }
    }
}

/// Datasets of one experiment with their conditioning and field scales.
#[derive(Clone, Debug)]
pub struct Corpus<'a> {
    pub datasets: Vec<&'a Dataset>,
    pub text: TextBank,
    /// Fields are divided by these before entering the model.
    pub scales: Vec<f32>,
    pub grid: usize,
}

impl<'a> Corpus<'a> {
    pub fn new(
        datasets: Vec<&'a Dataset>,
        text: Option<TextSpec>,
        arch: &ArchConfig,
        store: Option<&EmbeddingStore>,
    ) -> Result<Self> {
        for d in &datasets {
            if d.trajectories.is_empty() {
                return Err(Error::Config(format!("dataset {} is empty", d.name)));
            }
            if let Some(t) = d.trajectories.iter().find(|t| t.grid != arch.grid) {
                return Err(Error::Config(format!(
                    "dataset {} has grid {} but the model expects {}",
                    d.name, t.grid, arch.grid
                )));
            }
        }
        let text = TextBank::build(&datasets, text, arch, store)?;
        let scales = vec![1.0; datasets.len()];
        Ok(Self {
            datasets,
            text,
            scales,
            grid: arch.grid,
        })
    }

    pub fn trajectory(&self, dataset: usize, traj: usize) -> &Trajectory {
        &self.datasets[dataset].trajectories[traj]
    }

    /// Sets each dataset's scale to the RMS of its listed trajectories.
    pub fn normalize_by(&mut self, trajs: &[Vec<usize>]) {
        for (d, list) in trajs.iter().enumerate() {
            let (mut s, mut n) = (0f64, 0usize);
            for &i in list {
                let f = &self.datasets[d].trajectories[i].frames;
                s += f.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>();
                n += f.len();
            }
            let rms = if n > 0 {
                num_traits::Float::sqrt(s / n as f64)
            } else {
                0.0
            };
            self.scales[d] = if rms > 0.0 && rms.is_finite() { rms as f32 } else { 1.0 };
        }
    }

    pub(crate) fn text_for(&self, items: &[(usize, usize)]) -> BatchText {
        match &self.text {
            TextBank::None => BatchText::None,
            TextBank::Vectors { dim, rows } => {
                let mut data = Vec::with_capacity(items.len() * dim);
                for &(d, t) in items {
                    data.extend_from_slice(&rows[d][t]);
                }
                BatchText::Vectors(Tensor::new([items.len(), *dim], data).expect("rows have the store width"))
            }
            TextBank::Tokens(ids) => BatchText::Tokens(items.iter().map(|&(d, t)| ids[d][t].clone()).collect()),
        }
    }

    /// Scaled input and target fields `[b, n, n]` plus text for `pairs`.
    pub(crate) fn batch(&self, pairs: &[Pair]) -> (Tensor<f32>, Tensor<f32>, BatchText) {
        let n = self.grid;
        let mut x = Vec::with_capacity(pairs.len() * n * n);
        let mut y = Vec::with_capacity(pairs.len() * n * n);
        for p in pairs {
            let t = self.trajectory(p.dataset, p.traj);
            let s = self.scales[p.dataset];
            x.extend(t.frame(p.input).iter().map(|v| v / s));
            y.extend(t.frame(p.target).iter().map(|v| v / s));
        }
        let items: Vec<_> = pairs.iter().map(|p| (p.dataset, p.traj)).collect();
        let shape = [pairs.len(), n, n];
        (
            Tensor::new(shape, x).expect("frames are n×n"),
            Tensor::new(shape, y).expect("frames are n×n"),
            self.text_for(&items),
        )
    }
}

/// `k` evenly spaced items, or all of them.
pub(crate) fn spaced<T: Copy>(items: &[T], k: Option<usize>) -> Vec<T> {
    match k {
        Some(k) if k < items.len() => (0..k).map(|i| items[i * items.len() / k]).collect(),
        _ => items.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_counts_per_task() {
        assert_eq!(build_pairs(Task::NextStep, 0, &[3, 5], 101).len(), 200);
        let ff = build_pairs(Task::FixedFuture, 1, &[3], 101);
        assert_eq!(
            ff,
            vec![Pair {
                dataset: 1,
                traj: 3,
                input: 0,
                target: 100
            }]
        );
    }

    #[test]
    fn spaced_subset() {
        let v: Vec<usize> = (0..10).collect();
        assert_eq!(spaced(&v, Some(5)), vec![0, 2, 4, 6, 8]);
        assert_eq!(spaced(&v, None).len(), 10);
        assert_eq!(spaced(&v, Some(20)).len(), 10);
    }
}
