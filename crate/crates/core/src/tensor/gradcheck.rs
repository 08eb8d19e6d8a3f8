//! Finite-difference gradient checks in f64.
//!
//! Error metric: ‖analytic − numeric‖∞ / max(‖analytic‖∞, ‖numeric‖∞, 1e-8).

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;

use super::{Gradients, Graph, Tensor, Var};
use crate::embed::Provider;
use crate::model::{ArchConfig, Hooks, SurrogateModel, TextInput};
use crate::rng::{self, Rng};
use crate::Result;

/// Central-difference step for single ops.
pub const OP_STEP: f64 = 1e-6;

/// Smallest directional derivative used as the error denominator in model
/// checks. Roundoff in the extrapolated difference of an O(1) loss is near
/// 1e-11, so values below this are compared in absolute terms.
pub const MODEL_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = analytic.iter().chain(numeric).fold(1e-8f64, |m, x| m.max(x.abs()));
    diff / scale
}

pub fn rand_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng::uniform(rng, -1.0, 1.0))
}

/// Worst error of `f` over every input. The output is contracted with a
/// fixed weight pattern to give a scalar; at most 24 coordinates per input
/// are probed.
pub fn check_op<F>(inputs: &[Tensor<f64>], seed: u64, f: F) -> Result<f64>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    let mut pick_rng = rng::named_stream(seed, "gradcheck/picks");
    let loss_of = |g: &mut Graph<'_, f64>, vars: &[Var]| -> Result<Var> {
        let y = f(g, vars)?;
        let shape = g.shape(y).to_vec();
        let w = g.input(Tensor::from_fn(shape, |i| ((i * 7919 % 13) as f64 - 6.0) / 6.0))?;
        let p = g.mul(y, w)?;
        g.sum(p)
    };
    let at = |shifted: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars = shifted.iter().map(|t| g.leaf(t.clone())).collect::<Result<Vec<_>>>()?;
        let l = loss_of(&mut g, &vars)?;
        Ok(g.value(l)[0])
    };
    let mut g = Graph::new();
    let vars = inputs.iter().map(|t| g.leaf(t.clone())).collect::<Result<Vec<_>>>()?;
    let loss = loss_of(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let mut worst = 0.0f64;
    for (k, t) in inputs.iter().enumerate() {
        let n = t.numel();
        let analytic = grads.wrt(vars[k]).map_or_else(|| vec![0.0; n], |s| s.to_vec());
        let picks: Vec<usize> = if n <= 24 {
            (0..n).collect()
        } else {
            (0..24).map(|_| rng::index(&mut pick_rng, n)).collect()
        };
        let (mut a, mut num) = (Vec::new(), Vec::new());
        for &i in &picks {
            let mut shifted = inputs.to_vec();
            shifted[k].data_mut()[i] += OP_STEP;
            let up = at(&shifted)?;
            shifted[k].data_mut()[i] -= 2.0 * OP_STEP;
            let down = at(&shifted)?;
            num.push((up - down) / (2.0 * OP_STEP));
            a.push(analytic[i]);
        }
        worst = worst.max(rel_err(&a, &num));
    }
    Ok(worst)
}

/// Worst error per op over `trials` random draws.
pub fn op_suite(trials: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut out: Vec<(&'static str, f64)> = Vec::new();
    let mut note = |name: &'static str, e: f64| match out.iter_mut().find(|(n, _)| *n == name) {
        Some(slot) => slot.1 = slot.1.max(e),
        None => out.push((name, e)),
    };
    for s in 0..trials {
        let r = &mut rng::stream(1000 + s, 0);
        let seed = 99 + s;
        let (a, b) = (rand_tensor(r, &[3, 4]), rand_tensor(r, &[4, 5]));
        note("matmul", check_op(&[a, b], seed, |g, v| g.matmul(v[0], v[1]))?);
        let (a, b) = (rand_tensor(r, &[2, 3, 4]), rand_tensor(r, &[2, 4, 2]));
        note("matmul batched", check_op(&[a, b], seed, |g, v| g.matmul(v[0], v[1]))?);
        let (a, b) = (rand_tensor(r, &[2, 3, 3, 4]), rand_tensor(r, &[4, 2]));
        note(
            "matmul shared rhs",
            check_op(&[a, b], seed, |g, v| g.matmul(v[0], v[1]))?,
        );
        let (a, b) = (rand_tensor(r, &[3, 4]), rand_tensor(r, &[2, 4, 2]));
        note(
            "matmul shared lhs",
            check_op(&[a, b], seed, |g, v| g.matmul(v[0], v[1]))?,
        );

        let (a, b) = (rand_tensor(r, &[2, 3, 4]), rand_tensor(r, &[2, 3, 4]));
        note(
            "add",
            check_op(&[a.clone(), b.clone()], seed, |g, v| g.add(v[0], v[1]))?,
        );
        note(
            "sub",
            check_op(&[a.clone(), b.clone()], seed, |g, v| g.sub(v[0], v[1]))?,
        );
        note(
            "mul",
            check_op(&[a.clone(), b.clone()], seed, |g, v| g.mul(v[0], v[1]))?,
        );
        note(
            "scale",
            check_op(core::slice::from_ref(&a), seed, |g, v| g.scale(v[0], -1.7))?,
        );
        note("gelu", check_op(core::slice::from_ref(&a), seed, |g, v| g.gelu(v[0]))?);
        let bias = rand_tensor(r, &[3, 4]);
        note(
            "add_bias",
            check_op(&[a.clone(), bias], seed, |g, v| g.add_bias(v[0], v[1]))?,
        );
        note("sum", check_op(&[a], seed, |g, v| g.sum(v[0]))?);

        let x = rand_tensor(r, &[3, 2, 5]);
        let (gain, bias) = (rand_tensor(r, &[5]), rand_tensor(r, &[5]));
        note(
            "layer_norm",
            check_op(&[x.clone(), gain, bias], seed, |g, v| g.layer_norm(v[0], v[1], v[2]))?,
        );
        let sharp = Tensor::new([3, 2, 5], x.data().iter().map(|v| v * 3.0).collect())?;
        note("softmax", check_op(&[sharp], seed, |g, v| g.softmax(v[0]))?);

        let x = rand_tensor(r, &[2, 3, 4, 5]);
        note(
            "permute",
            check_op(core::slice::from_ref(&x), seed, |g, v| g.permute(v[0], &[2, 0, 3, 1]))?,
        );
        note(
            "reshape",
            check_op(core::slice::from_ref(&x), seed, |g, v| g.reshape(v[0], &[6, 20]))?,
        );
        note(
            "mean_axis",
            check_op(core::slice::from_ref(&x), seed, |g, v| g.mean_axis(v[0], 1))?,
        );
        note("mean_axis", check_op(&[x], seed, |g, v| g.mean_axis(v[0], 3))?);

        let (x, k) = (rand_tensor(r, &[2, 3, 9, 9]), rand_tensor(r, &[4, 3, 3, 3]));
        note("conv2d", check_op(&[x, k], seed, |g, v| g.conv2d(v[0], v[1], 2))?);
        let (x, k) = (rand_tensor(r, &[2, 3, 4, 4]), rand_tensor(r, &[3, 2, 4, 4]));
        note(
            "conv_transpose2d",
            check_op(&[x, k], seed, |g, v| g.conv_transpose2d(v[0], v[1], 2))?,
        );

        let table = rand_tensor(r, &[7, 3]);
        let tokens = vec![vec![1, 4, 4, 6], vec![0], vec![2, 3]];
        note(
            "embed_mean",
            check_op(&[table], seed, |g, v| g.embed_mean(v[0], &tokens))?,
        );
        let (p, t) = (rand_tensor(r, &[3, 2, 4]), rand_tensor(r, &[3, 2, 4]));
        note(
            "relative_l2",
            check_op(&[p.clone(), t.clone()], seed, |g, v| g.relative_l2(v[0], v[1]))?,
        );
        note("mse", check_op(&[p, t], seed, |g, v| g.mse(v[0], v[1]))?);
    }
    Ok(out)
}

/// Grid-16, width-4 surrogate used by the whole-model check.
pub fn tiny_config(multimodal: bool, provider: Provider) -> ArchConfig {
    ArchConfig {
        grid: 16,
        hidden: 4,
        head_dim: 2,
        heads: 2,
        recombine_width: 6,
        multimodal,
        provider,
        token_vocab: 32,
        ..ArchConfig::next_step_baseline()
    }
}

/// Per parameter tensor, compares `⟨∇L, d⟩` against a Richardson-extrapolated
/// central difference of `L(θ ± h·d)` along a random ±1 direction `d`. The
/// token-table direction covers the rows in use plus one unused row.
///
/// Attention and text weights are scaled up first so the text path carries
/// a measurable share of the loss. Errors use [`MODEL_FLOOR`].
pub fn model_gradcheck(config: ArchConfig, seed: u64) -> Result<Vec<(String, f64)>> {
    let mut model = SurrogateModel::<f64>::new(config, seed)?;
    for id in model.params().ids().collect::<Vec<_>>() {
        let name = model.params().name(id).to_string();
        if name.ends_with(".q") || name.ends_with(".k") || name.starts_with("text.") {
            model
                .params_mut()
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v *= 4.0);
        }
    }
    let mut r = rng::named_stream(seed, "gradcheck/model");
    let (b, n) = (2, config.grid);
    let fields = rand_tensor(&mut r, &[b, n, n]);
    let target = rand_tensor(&mut r, &[b, n, n]);
    let vectors = rand_tensor(&mut r, &[b, config.llm_dim()]);
    let vocab = config.token_vocab as u32;
    let tokens = vec![vec![3 % vocab, 9 % vocab, 9 % vocab, 30 % vocab], vec![0, 17 % vocab]];
    let used: Vec<usize> = tokens
        .iter()
        .flatten()
        .map(|&t| t as usize)
        .chain([5 % config.token_vocab])
        .collect();
    let text = match (config.multimodal, config.provider) {
        (false, _) => None,
        (true, Provider::Tokenizer) => Some(TextInput::Tokens(&tokens)),
        (true, _) => Some(TextInput::Vectors(&vectors)),
    };
    let forward = |m: &SurrogateModel<f64>, grads: bool| -> Result<(f64, Option<Gradients<f64>>)> {
        let mut g = Graph::with_params(m.params());
        let x = g.input(fields.clone())?;
        let y = m.forward(&mut g, x, text, Hooks::default())?;
        let t = g.input(target.clone())?;
        let l = g.relative_l2(y, t)?;
        let v = g.value(l)[0];
        Ok((v, if grads { Some(g.backward(l)?) } else { None }))
    };
    let grads = forward(&model, true)?.1.expect("requested");
    let mut out = Vec::new();
    for id in model.params().ids() {
        let name = model.params().name(id).to_string();
        let numel = model.params().get(id).numel();
        let analytic = grads.param(id).map_or_else(|| vec![0.0; numel], |s| s.to_vec());
        let mut dir: Vec<f64> = (0..numel)
            .map(|_| if r.next_u64() & 1 == 0 { 1.0 } else { -1.0 })
            .collect();
        if name == "text.table" {
            for (row, chunk) in dir.chunks_mut(config.llm_dim()).enumerate() {
                if !used.contains(&row) {
                    chunk.iter_mut().for_each(|v| *v = 0.0);
                }
            }
        }
        let along = |h: f64| -> Result<f64> {
            let mut m = model.clone();
            for (p, d) in m.params_mut().get_mut(id).data_mut().iter_mut().zip(&dir) {
                *p += h * d;
            }
            Ok(forward(&m, false)?.0)
        };
        let (h1, h2) = (1e-4, 5e-5);
        let c1 = (along(h1)? - along(-h1)?) / (2.0 * h1);
        let c2 = (along(h2)? - along(-h2)?) / (2.0 * h2);
        let numeric = (4.0 * c2 - c1) / 3.0;
        let exact: f64 = analytic.iter().zip(&dir).map(|(a, d)| a * d).sum();
        let scale = exact.abs().max(numeric.abs()).max(MODEL_FLOOR);
        out.push((name, (exact - numeric).abs() / scale));
    }
    Ok(out)
}
