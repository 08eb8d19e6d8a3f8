use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::{Hooks, SurrogateModel};
use crate::rng;
use crate::tensor::{Adam, AdamConfig, Graph};
use crate::{Error, Result};

use super::data::{Corpus, Pair};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub pairs_per_epoch: Option<usize>,
    /// Drives batch order and per-epoch subsampling.
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights of the best validation epoch.
    pub model: SurrogateModel<f32>,
    /// Validation loss of the untrained model.
    pub initial_val: f64,
    pub history: Vec<EpochRecord>,
    /// 0 when no epoch beat the initial weights.
    pub best_epoch: usize,
    pub best_val: f64,
}

/// Mean per-sample relative L² over `pairs`.
pub fn evaluate(model: &SurrogateModel<f32>, corpus: &Corpus<'_>, pairs: &[Pair], batch_size: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let per = corpus.grid * corpus.grid;
    let mut total = 0f64;
    for chunk in pairs.chunks(batch_size.max(1)) {
        let (x, y, text) = corpus.batch(chunk);
        let p = model.predict(&x, text.input())?;
        for (ps, ys) in p.data().chunks(per).zip(y.data().chunks(per)) {
            let num: f64 = ps.iter().zip(ys).map(|(&a, &b)| sq((a - b) as f64)).sum();
            let den: f64 = ys.iter().map(|&b| sq(b as f64)).sum();
            if den == 0.0 {
                return Err(Error::Degenerate("relative L² against an all-zero target".into()));
            }
            total += num_traits::Float::sqrt(num / den);
        }
    }
    Ok(total / pairs.len() as f64)
}

/// Adam on relative L², keeping the weights with the lowest validation loss.
/// `observe` sees every training batch before it is used.
pub fn train(
    mut model: SurrogateModel<f32>,
    corpus: &Corpus<'_>,
    train_pairs: &[Pair],
    val_pairs: &[Pair],
    opts: &TrainOptions,
    observe: &mut dyn FnMut(&[Pair]),
) -> Result<TrainOutcome> {
    let bs = opts.batch_size.max(1);
    let initial_val = evaluate(&model, corpus, val_pairs, bs)?;
    let mut best = (0usize, initial_val, model.params().flat());
    let mut history = Vec::with_capacity(opts.epochs);
    if opts.epochs > 0 && train_pairs.is_empty() {
        return Err(Error::Config("no training pairs".into()));
    }
    let mut adam = Adam::new(opts.adam, model.params());
    let mut order_rng = rng::named_stream(opts.seed, "batches");
    let mut order: Vec<Pair> = train_pairs.to_vec();

    for epoch in 1..=opts.epochs {
        rng::shuffle(&mut order_rng, &mut order);
        let take = opts.pairs_per_epoch.map_or(order.len(), |k| k.min(order.len()));
        let (mut sum, mut count) = (0f64, 0usize);
        for (bi, chunk) in order[..take].chunks(bs).enumerate() {
            observe(chunk);
            let abort = |detail: alloc::string::String| Error::Training {
                epoch,
                batch: bi,
                detail,
            };
            let (x, y, text) = corpus.batch(chunk);
            let grads = {
                let mut g = Graph::with_params(model.params());
                let step = (|| {
                    let xv = g.input(x)?;
                    let yv = g.input(y)?;
                    let pred = model.forward(&mut g, xv, text.input(), Hooks::default())?;
                    let loss = g.relative_l2(pred, yv)?;
                    Ok::<_, Error>(loss)
                })();
                let loss = step.map_err(|e| match e {
                    Error::NonFinite { .. } | Error::Degenerate(_) => abort(format!("{e}")),
                    other => other,
                })?;
                let lv = g.value(loss)[0] as f64;
                if !lv.is_finite() {
                    return Err(abort(format!("loss is {lv}")));
                }
                sum += lv * chunk.len() as f64;
                count += chunk.len();
                g.backward(loss)
                    .map_err(|e| abort(format!("{e}")))?
                    .into_param_vec(model.params().len())
            };
            if grads.iter().flatten().flatten().any(|v| !v.is_finite()) {
                return Err(abort("non-finite gradient".into()));
            }
            adam.step(model.params_mut(), &grads);
        }
        let val_loss = evaluate(&model, corpus, val_pairs, bs)?;
        if !val_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                batch: 0,
                detail: format!("validation loss is {val_loss}"),
            });
        }
        history.push(EpochRecord {
            epoch,
            train_loss: sum / count.max(1) as f64,
            val_loss,
        });
        if val_loss < best.1 {
            best = (epoch, val_loss, model.params().flat());
        }
    }
    model.params_mut().load_flat(&best.2)?;
    Ok(TrainOutcome {
        model,
        initial_val,
        history,
        best_epoch: best.0,
        best_val: best.1,
    })
}

fn sq(x: f64) -> f64 {
    x * x
}
