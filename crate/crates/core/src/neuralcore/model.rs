//! Set encoder and multiset decoder.
//!
//! Encoder: a per-element MLP embeds each of the `P` descriptor rows,
//! `n_q` learned queries cross-attend over the embeddings, a stack of
//! self-attention + feed-forward blocks mixes the queries, and the
//! concatenated queries are projected to the latent `z`.
//!
//! Decoder: a three-layer GELU MLP from a latent to `P_max` descriptor slots.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::tape::{Segment, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Descriptor dimension D_f.
    pub input_dim: usize,
    pub width: usize,
    pub n_queries: usize,
    pub heads: usize,
    pub n_blocks: usize,
    pub ff_width: usize,
    pub latent_dim: usize,
    pub decoder_hidden: usize,
    /// Decoder slot count.
    pub p_max: usize,
}

impl ModelConfig {
    /// Full-size network for inputs of dimension `input_dim`.
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            width: 256,
            n_queries: 8,
            heads: 4,
            n_blocks: 4,
            ff_width: 256,
            latent_dim: 128,
            decoder_hidden: 256,
            p_max: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.input_dim,
            self.width,
            self.n_queries,
            self.heads,
            self.ff_width,
            self.latent_dim,
            self.decoder_hidden,
            self.p_max,
        ];
        if positive.contains(&0) {
            return Err(Error::invalid(format!(
                "model dimensions must be positive: {self:?}"
            )));
        }
        if self.width % self.heads != 0 {
            return Err(Error::invalid(format!(
                "width {} is not divisible by {} heads",
                self.width, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    /// `N(0, 1/fan_in)` with fan-in the row count.
    Weight,
    Zero,
    Unit,
}

#[derive(Debug, Clone, Copy)]
struct LinearIdx {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct AttentionIdx {
    q: LinearIdx,
    k: LinearIdx,
    v: LinearIdx,
    o: LinearIdx,
}

#[derive(Debug, Clone, Copy)]
struct BlockIdx {
    attn: AttentionIdx,
    ff1: LinearIdx,
    ff2: LinearIdx,
}

/// Name, shape and initializer of every parameter, plus typed indices into
/// that list.
#[derive(Debug, Clone)]
struct Layout {
    specs: Vec<Spec>,
    encoder_count: usize,
    elem1: LinearIdx,
    elem2: LinearIdx,
    queries: usize,
    cross: AttentionIdx,
    blocks: Vec<BlockIdx>,
    out: LinearIdx,
    dec: [LinearIdx; 3],
}

type Spec = (String, usize, usize, Init);

fn add(specs: &mut Vec<Spec>, name: String, rows: usize, cols: usize, init: Init) -> usize {
    specs.push((name, rows, cols, init));
    specs.len() - 1
}

fn linear(specs: &mut Vec<Spec>, name: &str, fan_in: usize, fan_out: usize) -> LinearIdx {
    LinearIdx {
        w: add(specs, format!("{name}.w"), fan_in, fan_out, Init::Weight),
        b: add(specs, format!("{name}.b"), 1, fan_out, Init::Zero),
    }
}

fn attention(specs: &mut Vec<Spec>, prefix: &str, w: usize) -> AttentionIdx {
    AttentionIdx {
        q: linear(specs, &format!("{prefix}.q"), w, w),
        k: linear(specs, &format!("{prefix}.k"), w, w),
        v: linear(specs, &format!("{prefix}.v"), w, w),
        o: linear(specs, &format!("{prefix}.o"), w, w),
    }
}

impl Layout {
    fn new(c: &ModelConfig) -> Self {
        let mut specs = Vec::new();
        let s = &mut specs;
        let w = c.width;
        let elem1 = linear(s, "enc.elem1", c.input_dim, w);
        let elem2 = linear(s, "enc.elem2", w, w);
        let queries = add(s, "enc.queries".into(), c.n_queries, w, Init::Unit);
        let cross = attention(s, "enc.cross", w);
        let blocks = (0..c.n_blocks)
            .map(|i| BlockIdx {
                attn: attention(s, &format!("enc.block{i}.attn"), w),
                ff1: linear(s, &format!("enc.block{i}.ff1"), w, c.ff_width),
                ff2: linear(s, &format!("enc.block{i}.ff2"), c.ff_width, w),
            })
            .collect();
        let out = linear(s, "enc.out", c.n_queries * w, c.latent_dim);
        let encoder_count = s.len();
        let dec = [
            linear(s, "dec.l1", c.latent_dim, c.decoder_hidden),
            linear(s, "dec.l2", c.decoder_hidden, c.decoder_hidden),
            linear(s, "dec.l3", c.decoder_hidden, c.p_max * c.input_dim),
        ];
        Self {
            specs,
            encoder_count,
            elem1,
            elem2,
            queries,
            cross,
            blocks,
            out,
            dec,
        }
    }
}

/// All encoder and decoder weights, in a fixed named order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Deterministic initialization: weights `N(0, 1/fan_in)`, zero biases,
    /// unit Gaussian queries.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::with_capacity(layout.specs.len());
        let mut tensors = Vec::with_capacity(layout.specs.len());
        for (name, rows, cols, init) in &layout.specs {
            let data: Vec<f64> = match init {
                Init::Zero => vec![0.0; rows * cols],
                Init::Unit => (0..rows * cols)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect(),
                Init::Weight => {
                    let normal =
                        Normal::new(0.0, 1.0 / (*rows as f64).sqrt()).expect("positive std");
                    (0..rows * cols).map(|_| normal.sample(&mut rng)).collect()
                }
            };
            names.push(name.clone());
            tensors.push(Tensor::new(*rows, *cols, data)?);
        }
        Ok(Self {
            config,
            names,
            tensors,
        })
    }

    /// Rebuilds parameters from named tensors (e.g. a checkpoint), checking
    /// names and shapes against the layout of `config`.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if named.len() != layout.specs.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter tensors, found {}",
                layout.specs.len(),
                named.len()
            )));
        }
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for ((name, t), (want, rows, cols, _)) in named.into_iter().zip(&layout.specs) {
            if &name != want || t.shape() != (*rows, *cols) {
                return Err(Error::invalid(format!(
                    "parameter {name} {:?} does not match expected {want} ({rows} × {cols})",
                    t.shape()
                )));
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(Self {
            config,
            names,
            tensors,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Number of leading tensors that belong to the encoder.
    pub fn encoder_tensor_count(&self) -> usize {
        Layout::new(&self.config).encoder_count
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Registers every parameter on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        let vars = self.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        BoundModel {
            config: self.config,
            layout: Layout::new(&self.config),
            vars,
        }
    }

    /// Latent of one set of `P × D_f` standardized descriptor rows.
    pub fn encode_set(&self, rows: &Tensor) -> Result<Vec<f64>> {
        let batch = SetBatch::new(rows.clone(), vec![rows.rows()])?;
        let z = self.encode_batch(&batch)?;
        Ok(z.into_data())
    }

    /// Latents (`B × d_z`) of a batch of sets, without recording gradients.
    pub fn encode_batch(&self, batch: &SetBatch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let m = self.bind(&mut tape);
        let z = m.encode(&mut tape, batch)?;
        Ok(tape.value(z).clone())
    }

    /// `P_max × D_f` reconstruction of one latent.
    pub fn decode_multiset(&self, q: &[f64]) -> Result<Tensor> {
        let out = self.decode_batch(&Tensor::new(1, q.len(), q.to_vec())?)?;
        out.reshaped(self.config.p_max, self.config.input_dim)
    }

    /// `B × (P_max · D_f)` reconstructions of a batch of latents.
    pub fn decode_batch(&self, q: &Tensor) -> Result<Tensor> {
        if q.cols() != self.config.latent_dim {
            return Err(Error::invalid(format!(
                "latent has {} entries, expected {}",
                q.cols(),
                self.config.latent_dim
            )));
        }
        let mut tape = Tape::new();
        let m = self.bind(&mut tape);
        let qv = tape.constant(q.clone());
        let out = m.decode(&mut tape, qv);
        Ok(tape.value(out).clone())
    }
}

/// Variable-size sets stacked row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct SetBatch {
    rows: Tensor,
    sizes: Vec<usize>,
}

impl SetBatch {
    pub fn new(rows: Tensor, sizes: Vec<usize>) -> Result<Self> {
        if sizes.contains(&0) {
            return Err(Error::invalid("every set needs at least one element"));
        }
        if sizes.iter().sum::<usize>() != rows.rows() {
            return Err(Error::invalid("set sizes do not add up to the row count"));
        }
        if !rows.is_finite() {
            return Err(Error::NonFinite("encoder input".into()));
        }
        Ok(Self { rows, sizes })
    }

    pub fn rows(&self) -> &Tensor {
        &self.rows
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }
}

/// Parameters registered on a tape.
#[derive(Debug, Clone)]
pub struct BoundModel {
    config: ModelConfig,
    layout: Layout,
    vars: Vec<Var>,
}

impl BoundModel {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn lin(&self, tape: &mut Tape, x: Var, l: LinearIdx) -> Var {
        tape.linear(x, self.vars[l.w], self.vars[l.b])
    }

    /// `B × d_z` latents.
    pub fn encode(&self, tape: &mut Tape, batch: &SetBatch) -> Result<Var> {
        let c = &self.config;
        if batch.rows.cols() != c.input_dim {
            return Err(Error::invalid(format!(
                "descriptor rows have width {}, model expects {}",
                batch.rows.cols(),
                c.input_dim
            )));
        }
        let b = batch.len();
        let nq = c.n_queries;
        let l = &self.layout;

        let x = tape.constant(batch.rows.clone());
        let h = self.lin(tape, x, l.elem1);
        let h = tape.gelu(h);
        let elems = self.lin(tape, h, l.elem2);

        let mut k_start = 0;
        let cross_segments: Vec<Segment> = batch
            .sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let s = Segment {
                    q_start: i * nq,
                    q_len: nq,
                    k_start,
                    k_len: n,
                };
                k_start += n;
                s
            })
            .collect();
        let self_segments: Vec<Segment> = (0..b)
            .map(|i| Segment {
                q_start: i * nq,
                q_len: nq,
                k_start: i * nq,
                k_len: nq,
            })
            .collect();

        let queries = self.vars[l.queries];
        let q_proj = self.lin(tape, queries, l.cross.q);
        let q = tape.tile_rows(q_proj, b);
        let k = self.lin(tape, elems, l.cross.k);
        let v = self.lin(tape, elems, l.cross.v);
        let a = tape.attention(q, k, v, c.heads, cross_segments);
        let a = self.lin(tape, a, l.cross.o);
        let tiled = tape.tile_rows(queries, b);
        let mut hq = tape.add(tiled, a);

        for blk in &l.blocks {
            let q = self.lin(tape, hq, blk.attn.q);
            let k = self.lin(tape, hq, blk.attn.k);
            let v = self.lin(tape, hq, blk.attn.v);
            let a = tape.attention(q, k, v, c.heads, self_segments.clone());
            let a = self.lin(tape, a, blk.attn.o);
            hq = tape.add(hq, a);
            let f = self.lin(tape, hq, blk.ff1);
            let f = tape.gelu(f);
            let f = self.lin(tape, f, blk.ff2);
            hq = tape.add(hq, f);
        }
        let flat = tape.reshape(hq, b, nq * c.width);
        Ok(self.lin(tape, flat, l.out))
    }

    /// `B × (P_max · D_f)` reconstructions; row `b` holds the `P_max` slots
    /// of item `b` back to back.
    pub fn decode(&self, tape: &mut Tape, q: Var) -> Var {
        let [l1, l2, l3] = self.layout.dec;
        let h = self.lin(tape, q, l1);
        let h = tape.gelu(h);
        let h = self.lin(tape, h, l2);
        let h = tape.gelu(h);
        self.lin(tape, h, l3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            input_dim: 6,
            width: 8,
            n_queries: 3,
            heads: 2,
            n_blocks: 2,
            ff_width: 8,
            latent_dim: 4,
            decoder_hidden: 8,
            p_max: 3,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = ModelParams::init(small(), 1).unwrap();
        assert_eq!(a, ModelParams::init(small(), 1).unwrap());
        assert_ne!(a, ModelParams::init(small(), 2).unwrap());
        assert_eq!(a.names()[0], "enc.elem1.w");
        assert!(a.names()[a.encoder_tensor_count()].starts_with("dec."));
        assert!(a.names()[..a.encoder_tensor_count()]
            .iter()
            .all(|n| n.starts_with("enc.")));
    }

    #[test]
    fn full_size_shapes() {
        let p = ModelParams::init(ModelConfig::new(192), 0).unwrap();
        let rows = Tensor::new(1, 192, (0..192).map(|i| (i as f64 * 0.1).sin()).collect()).unwrap();
        let z = p.encode_set(&rows).unwrap();
        assert_eq!(z.len(), 128);
        assert!(z.iter().all(|v| v.is_finite()));
        let out = p.decode_multiset(&z).unwrap();
        assert_eq!(out.shape(), (10, 192));
    }

    #[test]
    fn zero_weights_decode_to_bias() {
        let mut p = ModelParams::init(small(), 3).unwrap();
        let n = p.encoder_tensor_count();
        for t in &mut p.tensors_mut()[n..] {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let last = p.tensors().len() - 1;
        p.tensors_mut()[last].data_mut()[0] = 2.5;
        let out = p.decode_multiset(&[1.0, -1.0, 0.5, 0.0]).unwrap();
        assert_eq!(out.get(0, 0), 2.5);
        assert!(out.data()[1..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn distinct_latents_decode_differently() {
        let p = ModelParams::init(small(), 3).unwrap();
        let a = p.decode_multiset(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        let b = p.decode_multiset(&[0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn rejects_bad_input() {
        let p = ModelParams::init(small(), 0).unwrap();
        assert!(p.encode_set(&Tensor::zeros(2, 5)).is_err());
        let mut bad = Tensor::zeros(1, 6);
        bad.data_mut()[2] = f64::NAN;
        assert!(p.encode_set(&bad).is_err());
        let mut c = small();
        c.heads = 3;
        assert!(ModelParams::init(c, 0).is_err());
    }
}
