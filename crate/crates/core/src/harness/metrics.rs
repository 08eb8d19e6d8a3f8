use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::config::Task;
use super::experiment::SeedOutcome;
use super::rollout::RolloutCurve;

/// Per-seed values with their mean and sample standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub per_seed: Vec<f64>,
    pub mean: f64,
    /// Zero for a single seed.
    pub std: f64,
}

impl Stat {
    pub fn from_values(per_seed: Vec<f64>) -> Self {
        let n = per_seed.len() as f64;
        let mean = if per_seed.is_empty() {
            0.0
        } else {
            per_seed.iter().sum::<f64>() / n
        };
        let std = if per_seed.len() < 2 {
            0.0
        } else {
            let ss: f64 = per_seed.iter().map(|v| (v - mean) * (v - mean)).sum();
            num_traits::Float::sqrt(ss / (n - 1.0))
        };
        Self { per_seed, mean, std }
    }
}

/// Test relative L² of one dataset under one setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub dataset: String,
    /// Setting, e.g. `"baseline"`, a flag label such as `"BCQ"`, `"pretrain"`.
    pub label: String,
    pub rel_l2: Stat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutRow {
    pub dataset: String,
    pub label: String,
    /// Per-seed curves, each averaged over the test trajectories.
    pub curves: Vec<RolloutCurve>,
    pub mean_curve: RolloutCurve,
    /// Accumulated MSE of each seed's curve.
    pub accumulated: Stat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub seeds: Vec<u64>,
    pub rows: Vec<MetricRow>,
    pub rollouts: Vec<RolloutRow>,
    /// Checkpoint provenance, one line per training stage and seed.
    pub lineage: Vec<String>,
}

impl MetricsReport {
    /// Folds seed outcomes that share one configuration. Row order follows
    /// the first outcome.
    pub fn aggregate(task: Task, label: &str, outcomes: &[SeedOutcome]) -> Result<Self> {
        let first = outcomes
            .first()
            .ok_or_else(|| Error::Config("no seed outcomes to aggregate".into()))?;
        let mut rows = Vec::new();
        for (i, (dataset, sub, _)) in first.test.iter().enumerate() {
            let vals = outcomes
                .iter()
                .map(|o| o.test.get(i).map(|t| t.2))
                .collect::<Option<Vec<_>>>();
            let vals = vals.ok_or_else(|| Error::Config("seed outcomes disagree on rows".into()))?;
            rows.push(MetricRow {
                dataset: dataset.clone(),
                label: join(label, sub),
                rel_l2: Stat::from_values(vals),
            });
        }
        let mut rollouts = Vec::new();
        for (i, (dataset, _)) in first.rollouts.iter().enumerate() {
            let curves = outcomes
                .iter()
                .map(|o| o.rollouts.get(i).map(|r| r.1.clone()))
                .collect::<Option<Vec<_>>>();
            let curves = curves.ok_or_else(|| Error::Config("seed outcomes disagree on rollouts".into()))?;
            rollouts.push(RolloutRow {
                dataset: dataset.clone(),
                label: label.into(),
                mean_curve: RolloutCurve::mean(&curves)?,
                accumulated: Stat::from_values(curves.iter().map(|c| c.accumulated).collect()),
                curves,
            });
        }
        let report = Self {
            task,
            seeds: outcomes.iter().map(|o| o.seed).collect(),
            rows,
            rollouts,
            lineage: outcomes.iter().flat_map(|o| o.lineage.iter().cloned()).collect(),
        };
        report.validate()?;
        Ok(report)
    }

    /// Appends another report's rows; seeds must agree.
    pub fn merge(&mut self, other: MetricsReport) -> Result<()> {
        if self.seeds != other.seeds {
            return Err(Error::Config("merging reports with different seeds".into()));
        }
        self.rows.extend(other.rows);
        self.rollouts.extend(other.rollouts);
        self.lineage.extend(other.lineage);
        Ok(())
    }

    pub fn row(&self, dataset: &str, label: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.dataset == dataset && r.label == label)
    }

    /// All values finite, stats consistent with their seeds, accumulated
    /// errors equal to curve sums.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Degenerate(m));
        let check_stat = |what: &str, s: &Stat| -> Result<()> {
            let again = Stat::from_values(s.per_seed.clone());
            let ok = s.per_seed.len() == self.seeds.len()
                && s.per_seed.iter().all(|v| v.is_finite())
                && again.mean == s.mean
                && again.std == s.std;
            if ok {
                Ok(())
            } else {
                Err(Error::Degenerate(format!(
                    "inconsistent or non-finite statistic for {what}"
                )))
            }
        };
        for r in &self.rows {
            check_stat(&r.dataset, &r.rel_l2)?;
        }
        for r in &self.rollouts {
            check_stat(&r.dataset, &r.accumulated)?;
            for c in r.curves.iter().chain(core::iter::once(&r.mean_curve)) {
                if c.per_step.iter().any(|v| !v.is_finite()) {
                    return bad(format!("non-finite rollout curve for {}", r.dataset));
                }
                let sum: f64 = c.per_step.iter().sum();
                if (sum - c.accumulated).abs() > 1e-7 * sum.abs().max(1.0) {
                    return bad(format!(
                        "accumulated rollout error of {} is not the curve sum",
                        r.dataset
                    ));
                }
            }
        }
        Ok(())
    }
}

fn join(label: &str, sub: &str) -> String {
    match (label.is_empty(), sub.is_empty()) {
        (_, true) => label.into(),
        (true, false) => sub.into(),
        (false, false) => format!("{label}/{sub}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std() {
        let s = Stat::from_values(alloc::vec![1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
        assert_eq!(Stat::from_values(alloc::vec![4.0]).std, 0.0);
    }
}
