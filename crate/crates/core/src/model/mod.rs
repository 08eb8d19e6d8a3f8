//! Factorized-attention surrogate with optional cross-attention text
//! conditioning.
//!
//! Data flow for a batch of fields `[b, n, n]`:
//!
//! 1. pointwise lift of (field, x, y) to grid features `[b, n, n, h]`;
//! 2. multimodal block (text on): patch tokens attend from the projected
//!    sentence, the result is deconvolved back to the grid and added;
//! 3. `depth` factorized attention blocks;
//! 4. a second multimodal block sharing the patch embedding of step 2;
//! 5. pointwise head to one channel.

mod config;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

pub use config::ArchConfig;

use crate::embed::Provider;
use crate::tensor::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use crate::{Error, Result};

/// Text conditioning for one batch.
#[derive(Clone, Copy, Debug)]
pub enum TextInput<'a, T> {
    /// Precomputed vectors `[b, llm_dim]`.
    Vectors(&'a Tensor<T>),
    /// Token ids per sample, averaged through the trainable table.
    Tokens(&'a [Vec<u32>]),
}

/// Test-only switches on the forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Hooks {
    /// Forces factorized-attention logits off the diagonal to −∞.
    pub mask_factorized: bool,
}

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: ParamId,
    b: Option<ParamId>,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct FactBlock {
    ln1: Norm,
    to_in: Linear,
    qx: ParamId,
    kx: ParamId,
    qy: ParamId,
    ky: ParamId,
    value: Linear,
    out: Linear,
    ln2: Norm,
    ff1: Linear,
    ff2: Linear,
}

/// Cross-attention plus recombination; every weight is bias-free so a zero
/// output projection makes the whole block an exact identity.
#[derive(Clone, Copy, Debug)]
pub struct MmBlock {
    q: ParamId,
    k: ParamId,
    v: ParamId,
    o: ParamId,
    deconv: ParamId,
    fc1: ParamId,
    fc2: ParamId,
}

impl MmBlock {
    /// The output projection `Wᴼ`.
    pub fn output_projection(&self) -> ParamId {
        self.o
    }
}

#[derive(Clone, Debug)]
struct TextPath {
    table: Option<ParamId>,
    fc1: Linear,
    fc2: Linear,
    up: Linear,
    patch_w: ParamId,
    patch_b: ParamId,
    before: MmBlock,
    after: MmBlock,
}

#[derive(Clone, Debug)]
struct Layout {
    lift_field: ParamId,
    lift_coord: ParamId,
    lift_b: ParamId,
    blocks: Vec<FactBlock>,
    text: Option<TextPath>,
    head1: Linear,
    head2: Linear,
}

struct Builder<'a, T> {
    store: &'a mut ParamStore<T>,
    seed: u64,
}

impl<T: Scalar> Builder<'_, T> {
    fn uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        self.store.add_uniform(self.seed, name, shape, fan_in)
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Result<Linear> {
        let w = self.uniform(&format!("{name}.w"), &[fan_in, fan_out], fan_in)?;
        let b = if bias {
            Some(self.uniform(&format!("{name}.b"), &[fan_out], fan_in)?)
        } else {
            None
        };
        Ok(Linear { w, b })
    }

    fn norm(&mut self, name: &str, width: usize) -> Result<Norm> {
        let gain = self
            .store
            .add(&format!("{name}.gain"), Tensor::from_fn([width], |_| T::one()))?;
        let bias = self.store.add_zeros(&format!("{name}.bias"), &[width])?;
        Ok(Norm { gain, bias })
    }

    fn mm_block(&mut self, name: &str, c: &ArchConfig) -> Result<MmBlock> {
        let (h, a, k, w) = (c.hidden, c.heads * c.head_dim, c.patch_kernel, c.recombine_width);
        Ok(MmBlock {
            q: self.uniform(&format!("{name}.q"), &[h, a], h)?,
            k: self.uniform(&format!("{name}.k"), &[h, a], h)?,
            v: self.uniform(&format!("{name}.v"), &[h, a], h)?,
            o: self.uniform(&format!("{name}.o"), &[a, h], a)?,
            deconv: self.uniform(&format!("{name}.deconv"), &[h, h, k, k], h * k * k)?,
            fc1: self.uniform(&format!("{name}.fc1"), &[h, w], h)?,
            fc2: self.uniform(&format!("{name}.fc2"), &[w, h], w)?,
        })
    }
}

fn build_layout<T: Scalar>(c: &ArchConfig, store: &mut ParamStore<T>, seed: u64) -> Result<Layout> {
    let mut b = Builder { store, seed };
    let h = c.hidden;
    let lift_field = b.uniform("lift.field", &[1, h], 3)?;
    let lift_coord = b.uniform("lift.coord", &[2, h], 3)?;
    let lift_b = b.uniform("lift.b", &[h], 3)?;
    let text = if c.multimodal {
        let l = c.llm_dim();
        let table = match c.provider {
            Provider::Tokenizer => Some(b.uniform("text.table", &[c.token_vocab, l], 1)?),
            _ => None,
        };
        let k = c.patch_kernel;
        Some(TextPath {
            table,
            fc1: b.linear("text.fc1", l, l, true)?,
            fc2: b.linear("text.fc2", l, c.patches(), true)?,
            up: b.linear("text.up", 1, h, true)?,
            patch_w: b.uniform("patch.w", &[h, h, k, k], h * k * k)?,
            patch_b: b.uniform("patch.b", &[h], h * k * k)?,
            before: b.mm_block("mm_before", c)?,
            after: b.mm_block("mm_after", c)?,
        })
    } else {
        None
    };
    let (km, lm) = (c.kernel_multiplier * h, c.latent());
    let qk = c.heads * c.head_dim;
    let mut blocks = Vec::with_capacity(c.depth);
    for i in 0..c.depth {
        let p = format!("ff{i}");
        blocks.push(FactBlock {
            ln1: b.norm(&format!("{p}.ln1"), h)?,
            to_in: b.linear(&format!("{p}.in"), h, km, true)?,
            qx: b.uniform(&format!("{p}.qx"), &[km, qk], km)?,
            kx: b.uniform(&format!("{p}.kx"), &[km, qk], km)?,
            qy: b.uniform(&format!("{p}.qy"), &[km, qk], km)?,
            ky: b.uniform(&format!("{p}.ky"), &[km, qk], km)?,
            value: b.linear(&format!("{p}.value"), h, lm, true)?,
            out: b.linear(&format!("{p}.out"), lm, h, true)?,
            ln2: b.norm(&format!("{p}.ln2"), h)?,
            ff1: b.linear(&format!("{p}.ff1"), h, lm, true)?,
            ff2: b.linear(&format!("{p}.ff2"), lm, h, true)?,
        });
    }
    let head1 = b.linear("head.fc1", h, h, true)?;
    let head2 = b.linear("head.fc2", h, 1, true)?;
    Ok(Layout {
        lift_field,
        lift_coord,
        lift_b,
        blocks,
        text,
        head1,
        head2,
    })
}

/// Network weights plus the layout that addresses them.
#[derive(Clone, Debug)]
pub struct SurrogateModel<T> {
    config: ArchConfig,
    params: ParamStore<T>,
    layout: Layout,
}

impl<T: Scalar> SurrogateModel<T> {
    /// Fresh weights; equal `(seed, parameter name)` pairs initialize equally
    /// across configs.
    pub fn new(config: ArchConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let layout = build_layout(&config, &mut params, seed)?;
        Ok(Self { config, params, layout })
    }

    /// Model with the given flat parameter vector in declaration order.
    pub fn from_flat(config: ArchConfig, flat: &[T]) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        m.params.load_flat(flat)?;
        Ok(m)
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn cast<U: Scalar>(&self) -> SurrogateModel<U> {
        SurrogateModel {
            config: self.config,
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    /// The (before, after) multimodal blocks, if any.
    pub fn multimodal_blocks(&self) -> Option<(MmBlock, MmBlock)> {
        self.layout.text.as_ref().map(|t| (t.before, t.after))
    }

    fn text_path(&self) -> Result<&TextPath> {
        self.layout
            .text
            .as_ref()
            .ok_or_else(|| Error::Config("model has no text path".into()))
    }

    fn linear<'p>(&'p self, g: &mut Graph<'p, T>, x: Var, l: Linear) -> Result<Var> {
        let w = g.param(l.w);
        let y = g.matmul(x, w)?;
        match l.b {
            Some(b) => {
                let b = g.param(b);
                g.add_bias(y, b)
            }
            None => Ok(y),
        }
    }

    fn weight<'p>(&'p self, g: &mut Graph<'p, T>, x: Var, w: ParamId) -> Result<Var> {
        let w = g.param(w);
        g.matmul(x, w)
    }

    /// `[b, n, n]` fields to `[b, n, n, h]` grid features, with coordinates
    /// `i / (n − 1)` along each axis.
    pub fn lift<'p>(&'p self, g: &mut Graph<'p, T>, fields: Var) -> Result<Var> {
        let n = self.config.grid;
        let s = g.shape(fields).to_vec();
        if s.len() != 3 || s[1] != n || s[2] != n {
            return Err(Error::dim("lift", format!("expected [b, {n}, {n}], got {s:?}")));
        }
        let h = self.config.hidden;
        let f = g.reshape(fields, &[s[0], n, n, 1])?;
        let wf = g.param(self.layout.lift_field);
        let f = g.matmul(f, wf)?;
        let denom = (n.max(2) - 1) as f64;
        let coords = Tensor::from_fn([n, n, 2], |k| {
            let (i, j, c) = (k / (2 * n), (k / 2) % n, k % 2);
            T::of_f64(if c == 0 { i } else { j } as f64 / denom)
        });
        let coords = g.input(coords)?;
        let wc = g.param(self.layout.lift_coord);
        let pos = g.matmul(coords, wc)?;
        debug_assert_eq!(g.shape(pos), [n, n, h]);
        let x = g.add_bias(f, pos)?;
        let b = g.param(self.layout.lift_b);
        g.add_bias(x, b)
    }

    /// Convolutional patch embedding of grid features: `[b, n, n, h]` to
    /// `[b, p, h]`.
    pub fn patch_embed<'p>(&'p self, g: &mut Graph<'p, T>, feats: Var) -> Result<Var> {
        let t = self.text_path()?;
        let c = &self.config;
        let s = g.shape(feats).to_vec();
        if s.len() != 4 || s[1] != c.grid || s[2] != c.grid || s[3] != c.hidden {
            return Err(Error::dim(
                "patch_embed",
                format!("expected [b, {}, {}, {}], got {s:?}", c.grid, c.grid, c.hidden),
            ));
        }
        let x = g.permute(feats, &[0, 3, 1, 2])?;
        let w = g.param(t.patch_w);
        let y = g.conv2d(x, w, c.patch_stride)?;
        let y = g.permute(y, &[0, 2, 3, 1])?;
        let y = g.reshape(y, &[s[0], c.patches(), c.hidden])?;
        let b = g.param(t.patch_b);
        g.add_bias(y, b)
    }

    /// Text vector to per-patch tokens `[b, p, h]`.
    pub fn project_sentence<'p>(&'p self, g: &mut Graph<'p, T>, text: TextInput<'_, T>) -> Result<Var> {
        let t = self.text_path()?;
        let c = &self.config;
        let e = match (text, t.table) {
            (TextInput::Vectors(v), None) => {
                let s = v.shape();
                if s.len() != 2 || s[1] != c.llm_dim() {
                    return Err(Error::Config(format!(
                        "text vectors have shape {s:?}, model expects [b, {}]",
                        c.llm_dim()
                    )));
                }
                g.input(v.clone())?
            }
            (TextInput::Tokens(seqs), Some(table)) => {
                let table = g.param(table);
                g.embed_mean(table, seqs)?
            }
            (TextInput::Vectors(_), Some(_)) => {
                return Err(Error::Config("tokenizer model needs token ids, got vectors".into()))
            }
            (TextInput::Tokens(_), None) => {
                return Err(Error::Config("store-backed model needs vectors, got token ids".into()))
            }
        };
        let b = g.shape(e)[0];
        let x = self.linear(g, e, t.fc1)?;
        let x = g.gelu(x)?;
        let x = self.linear(g, x, t.fc2)?;
        let x = g.reshape(x, &[b, c.patches(), 1])?;
        self.linear(g, x, t.up)
    }

    /// Text vectors `[b, llm_dim]` as they enter the projection: the given
    /// vectors, or the mean of the token-table rows.
    pub fn text_vectors(&self, text: TextInput<'_, T>) -> Result<Tensor<T>> {
        let t = self.text_path()?;
        match (text, t.table) {
            (TextInput::Vectors(v), None) => Ok(v.clone()),
            (TextInput::Tokens(seqs), Some(table)) => {
                let mut g = Graph::with_params(&self.params);
                let tv = g.param(table);
                let e = g.embed_mean(tv, seqs)?;
                Ok(g.tensor(e))
            }
            _ => Err(Error::Config(
                "text input kind does not match the model's provider".into(),
            )),
        }
    }

    /// Multi-head attention with queries from `z_sentence` and keys/values
    /// from `z_data`. Returns the projected output `[b, p_q, h]` and the
    /// attention weights `[b, heads, p_q, p_kv]`.
    pub fn cross_attention<'p>(
        &'p self,
        g: &mut Graph<'p, T>,
        block: MmBlock,
        z_data: Var,
        z_sentence: Var,
    ) -> Result<(Var, Var)> {
        let (sd, ss) = (g.shape(z_data).to_vec(), g.shape(z_sentence).to_vec());
        let h = self.config.hidden;
        if sd.len() != 3 || ss.len() != 3 || sd[0] != ss[0] || sd[2] != h || ss[2] != h {
            return Err(Error::dim("cross_attention", format!("data {sd:?}, sentence {ss:?}")));
        }
        let (b, pq, pk) = (ss[0], ss[1], sd[1]);
        let (heads, dk) = (self.config.heads, self.config.head_dim);
        let q = self.weight(g, z_sentence, block.q)?;
        let q = g.reshape(q, &[b, pq, heads, dk])?;
        let q = g.permute(q, &[0, 2, 1, 3])?;
        let k = self.weight(g, z_data, block.k)?;
        let k = g.reshape(k, &[b, pk, heads, dk])?;
        let k = g.permute(k, &[0, 2, 3, 1])?;
        let v = self.weight(g, z_data, block.v)?;
        let v = g.reshape(v, &[b, pk, heads, dk])?;
        let v = g.permute(v, &[0, 2, 1, 3])?;
        let logits = g.matmul(q, k)?;
        let logits = g.scale(logits, 1.0 / num_traits::Float::sqrt(dk as f64))?;
        let attn = g.softmax(logits)?;
        let o = g.matmul(attn, v)?;
        let o = g.permute(o, &[0, 2, 1, 3])?;
        let o = g.reshape(o, &[b, pq, heads * dk])?;
        let o = self.weight(g, o, block.o)?;
        Ok((o, attn))
    }

    /// Conditions grid features on the sentence tokens and adds the
    /// deconvolved result back onto the grid.
    pub fn multimodal_block<'p>(
        &'p self,
        g: &mut Graph<'p, T>,
        block: MmBlock,
        feats: Var,
        z_sentence: Var,
    ) -> Result<Var> {
        let c = &self.config;
        let b = g.shape(feats)[0];
        let z = self.patch_embed(g, feats)?;
        let (m, _) = self.cross_attention(g, block, z, z_sentence)?;
        let side = c.patch_side();
        let m = g.reshape(m, &[b, side, side, c.hidden])?;
        let m = g.permute(m, &[0, 3, 1, 2])?;
        let w = g.param(block.deconv);
        let up = g.conv_transpose2d(m, w, c.patch_stride)?;
        let up = g.permute(up, &[0, 2, 3, 1])?;
        let r = self.weight(g, up, block.fc1)?;
        let r = g.gelu(r)?;
        let r = self.weight(g, r, block.fc2)?;
        g.add(feats, r)
    }

    /// Softmax kernel `[b, heads, n, n]` along one axis from pooled features.
    fn axis_kernel<'p>(
        &'p self,
        g: &mut Graph<'p, T>,
        pooled: Var,
        wq: ParamId,
        wk: ParamId,
        mask: bool,
    ) -> Result<Var> {
        let s = g.shape(pooled).to_vec();
        let (b, n) = (s[0], s[1]);
        let (heads, dk) = (self.config.heads, self.config.head_dim);
        let q = self.weight(g, pooled, wq)?;
        let q = g.reshape(q, &[b, n, heads, dk])?;
        let q = g.permute(q, &[0, 2, 1, 3])?;
        let k = self.weight(g, pooled, wk)?;
        let k = g.reshape(k, &[b, n, heads, dk])?;
        let k = g.permute(k, &[0, 2, 3, 1])?;
        let logits = g.matmul(q, k)?;
        let mut logits = g.scale(logits, 1.0 / num_traits::Float::sqrt(dk as f64))?;
        if mask {
            // −1e30 is finite in f32 and underflows to an exact zero in softmax
            let m = Tensor::from_fn([b, heads, n, n], |i| {
                let (r, c) = ((i / n) % n, i % n);
                if r == c {
                    T::zero()
                } else {
                    T::of_f64(-1e30)
                }
            });
            let m = g.input(m)?;
            logits = g.add(logits, m)?;
        }
        g.softmax(logits)
    }

    fn norm<'p>(&'p self, g: &mut Graph<'p, T>, x: Var, n: Norm) -> Result<Var> {
        let (gain, bias) = (g.param(n.gain), g.param(n.bias));
        g.layer_norm(x, gain, bias)
    }

    /// Axis-factorized attention block `block` (0-based) on `[b, n, n, h]`.
    pub fn factorized_block<'p>(&'p self, g: &mut Graph<'p, T>, block: usize, feats: Var, hooks: Hooks) -> Result<Var> {
        let blk = *self
            .layout
            .blocks
            .get(block)
            .ok_or_else(|| Error::Config(format!("no factorized block {block}")))?;
        let c = &self.config;
        let s = g.shape(feats).to_vec();
        if s.len() != 4 || s[1] != s[2] || s[3] != c.hidden {
            return Err(Error::dim("factorized_block", format!("grid features {s:?}")));
        }
        let (b, n) = (s[0], s[1]);
        let heads = c.heads;
        let dv = c.latent() / heads;

        let u = self.norm(g, feats, blk.ln1)?;
        let t = self.linear(g, u, blk.to_in)?;
        let px = g.mean_axis(t, 2)?;
        let py = g.mean_axis(t, 1)?;
        let ax = self.axis_kernel(g, px, blk.qx, blk.kx, hooks.mask_factorized)?;
        let ay = self.axis_kernel(g, py, blk.qy, blk.ky, hooks.mask_factorized)?;

        let v = self.linear(g, u, blk.value)?;
        let v = g.reshape(v, &[b, n, n, heads, dv])?;
        let v = g.permute(v, &[0, 3, 1, 2, 4])?;
        let v = g.reshape(v, &[b, heads, n, n * dv])?;
        let v = g.matmul(ax, v)?;
        let v = g.reshape(v, &[b, heads, n, n, dv])?;
        let v = g.permute(v, &[0, 1, 3, 2, 4])?;
        let v = g.reshape(v, &[b, heads, n, n * dv])?;
        let v = g.matmul(ay, v)?;
        let v = g.reshape(v, &[b, heads, n, n, dv])?;
        let v = g.permute(v, &[0, 3, 2, 1, 4])?;
        let v = g.reshape(v, &[b, n, n, heads * dv])?;
        let o = self.linear(g, v, blk.out)?;
        let x = g.add(feats, o)?;

        let u = self.norm(g, x, blk.ln2)?;
        let f = self.linear(g, u, blk.ff1)?;
        let f = g.gelu(f)?;
        let f = self.linear(g, f, blk.ff2)?;
        g.add(x, f)
    }

    /// Full forward pass on `[b, n, n]` fields; returns `[b, n, n]`.
    pub fn forward<'p>(
        &'p self,
        g: &mut Graph<'p, T>,
        fields: Var,
        text: Option<TextInput<'_, T>>,
        hooks: Hooks,
    ) -> Result<Var> {
        let b = g.shape(fields).first().copied().unwrap_or(0);
        let mut x = self.lift(g, fields)?;
        let text_path = match (&self.layout.text, text) {
            (Some(tp), Some(text)) => {
                let z = self.project_sentence(g, text)?;
                if g.shape(z)[0] != b {
                    return Err(Error::dim(
                        "forward",
                        format!("{} text rows for {b} fields", g.shape(z)[0]),
                    ));
                }
                Some((tp.before, tp.after, z))
            }
            (Some(_), None) => return Err(Error::Config("multimodal model requires a text embedding".into())),
            (None, _) => None,
        };
        if let Some((before, _, z)) = text_path {
            x = self.multimodal_block(g, before, x, z)?;
        }
        for i in 0..self.layout.blocks.len() {
            x = self.factorized_block(g, i, x, hooks)?;
        }
        if let Some((_, after, z)) = text_path {
            x = self.multimodal_block(g, after, x, z)?;
        }
        let y = self.linear(g, x, self.layout.head1)?;
        let y = g.gelu(y)?;
        let y = self.linear(g, y, self.layout.head2)?;
        let n = self.config.grid;
        let y = g.reshape(y, &[b, n, n])?;
        if self.config.input_residual {
            g.add(y, fields)
        } else {
            Ok(y)
        }
    }

    /// Inference on a batch of fields.
    pub fn predict(&self, fields: &Tensor<T>, text: Option<TextInput<'_, T>>) -> Result<Tensor<T>> {
        let mut g = Graph::with_params(&self.params);
        let x = g.input(fields.clone())?;
        let y = self.forward(&mut g, x, text, Hooks::default())?;
        Ok(g.tensor(y))
    }

    /// Parameter names in declaration order.
    pub fn parameter_names(&self) -> Vec<String> {
        self.params.iter().map(|(_, n, _)| n.into()).collect()
    }
}
