use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::SurrogateModel;
use crate::sim::Trajectory;
use crate::tensor::Tensor;
use crate::{Error, Result};

use super::data::Corpus;

/// Anything that maps one field to the next.
pub trait NextFrame {
    fn next_frame(&mut self, field: &[f32]) -> Result<Vec<f32>>;
}

impl<F: FnMut(&[f32]) -> Result<Vec<f32>>> NextFrame for F {
    fn next_frame(&mut self, field: &[f32]) -> Result<Vec<f32>> {
        self(field)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutCurve {
    /// MSE against ground-truth frame `k + 1` after `k + 1` steps.
    pub per_step: Vec<f64>,
    /// Sum of `per_step`.
    pub accumulated: f64,
}

impl RolloutCurve {
    pub fn from_steps(per_step: Vec<f64>) -> Self {
        let accumulated = per_step.iter().sum();
        Self { per_step, accumulated }
    }

    /// Pointwise mean of equal-length curves.
    pub fn mean(curves: &[RolloutCurve]) -> Result<Self> {
        let len = curves.first().map_or(0, |c| c.per_step.len());
        if curves.is_empty() || curves.iter().any(|c| c.per_step.len() != len) {
            return Err(Error::dim("RolloutCurve::mean", "empty or ragged curves"));
        }
        let k = curves.len() as f64;
        Ok(Self::from_steps(
            (0..len)
                .map(|i| curves.iter().map(|c| c.per_step[i]).sum::<f64>() / k)
                .collect(),
        ))
    }
}

/// Feeds predictions back `steps` times from frame 0.
pub fn rollout(predictor: &mut dyn NextFrame, traj: &Trajectory, steps: usize) -> Result<RolloutCurve> {
    if steps >= traj.frame_count() {
        return Err(Error::Config(format!(
            "rollout of {steps} steps needs more than {} frames",
            traj.frame_count()
        )));
    }
    let mut state = traj.frame(0).to_vec();
    let mut curve = Vec::with_capacity(steps);
    for k in 1..=steps {
        state = predictor.next_frame(&state)?;
        let truth = traj.frame(k);
        if state.len() != truth.len() {
            return Err(Error::dim(
                "rollout",
                format!("predictor returned {} values", state.len()),
            ));
        }
        let mse = state.iter().zip(truth).map(|(&a, &b)| sq((a - b) as f64)).sum::<f64>() / truth.len() as f64;
        curve.push(mse);
    }
    Ok(RolloutCurve::from_steps(curve))
}

/// Rollout of a trained next-step model with its trajectory's text held fixed.
pub fn rollout_model(
    model: &SurrogateModel<f32>,
    corpus: &Corpus<'_>,
    dataset: usize,
    traj: usize,
    steps: usize,
) -> Result<RolloutCurve> {
    let text = corpus.text_for(&[(dataset, traj)]);
    let scale = corpus.scales[dataset];
    let n = corpus.grid;
    let mut step = |field: &[f32]| -> Result<Vec<f32>> {
        let x = Tensor::new([1, n, n], field.iter().map(|v| v / scale).collect())?;
        let y = model.predict(&x, text.input())?;
        Ok(y.into_data().into_iter().map(|v| v * scale).collect())
    };
    rollout(&mut step, corpus.trajectory(dataset, traj), steps)
}

fn sq(x: f64) -> f64 {
    x * x
}
