//! Named parameter tensors and the index layout the forward pass uses.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::ndcore::{Real, Rng, Tape, Tensor, Var};

use super::config::{OmniMaeConfig, StackConfig};

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Normal(0, 0.02²) truncated at two standard deviations.
    TruncNormal,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub init: Init,
    /// Whether decoupled weight decay applies.
    pub decay: bool,
}

/// Indices of one pre-norm transformer block.
#[derive(Debug, Clone)]
pub struct BlockIds {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone)]
pub struct EncoderIds {
    pub embed_w: usize,
    pub embed_b: usize,
    pub blocks: Vec<BlockIds>,
    pub norm_g: usize,
    pub norm_b: usize,
}

#[derive(Debug, Clone)]
pub struct DecoderIds {
    pub proj_w: usize,
    pub proj_b: usize,
    pub mask_token: usize,
    pub blocks: Vec<BlockIds>,
    pub norm_g: usize,
    pub norm_b: usize,
    pub pred_w: usize,
    pub pred_b: usize,
}

/// Parameter specs in a fixed order plus typed indices into that order.
#[derive(Debug, Clone)]
pub struct Layout {
    pub specs: Vec<ParamSpec>,
    pub encoder: EncoderIds,
    pub decoders: Vec<DecoderIds>,
}

struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn add(&mut self, name: String, dims: &[usize], init: Init, decay: bool) -> usize {
        self.specs.push(ParamSpec {
            name,
            dims: dims.to_vec(),
            init,
            decay,
        });
        self.specs.len() - 1
    }

    fn linear(&mut self, prefix: &str, din: usize, dout: usize) -> (usize, usize) {
        let w = self.add(
            format!("{prefix}.weight"),
            &[din, dout],
            Init::TruncNormal,
            true,
        );
        let b = self.add(format!("{prefix}.bias"), &[dout], Init::Zeros, true);
        (w, b)
    }

    fn norm(&mut self, prefix: &str, d: usize) -> (usize, usize) {
        let g = self.add(format!("{prefix}.gain"), &[d], Init::Ones, false);
        let b = self.add(format!("{prefix}.bias"), &[d], Init::Zeros, false);
        (g, b)
    }

    fn block(&mut self, prefix: &str, d: usize) -> BlockIds {
        let (ln1_g, ln1_b) = self.norm(&format!("{prefix}.norm1"), d);
        let (wq, bq) = self.linear(&format!("{prefix}.attn.q"), d, d);
        let (wk, bk) = self.linear(&format!("{prefix}.attn.k"), d, d);
        let (wv, bv) = self.linear(&format!("{prefix}.attn.v"), d, d);
        let (wo, bo) = self.linear(&format!("{prefix}.attn.out"), d, d);
        let (ln2_g, ln2_b) = self.norm(&format!("{prefix}.norm2"), d);
        let (w1, b1) = self.linear(&format!("{prefix}.mlp.fc1"), d, 4 * d);
        let (w2, b2) = self.linear(&format!("{prefix}.mlp.fc2"), 4 * d, d);
        BlockIds {
            ln1_g,
            ln1_b,
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
            ln2_g,
            ln2_b,
            w1,
            b1,
            w2,
            b2,
        }
    }

    fn stack(&mut self, prefix: &str, s: &StackConfig) -> Vec<BlockIds> {
        (0..s.depth)
            .map(|i| self.block(&format!("{prefix}.blocks.{i}"), s.dim))
            .collect()
    }
}

impl Layout {
    pub fn new(cfg: &OmniMaeConfig) -> Self {
        let mut b = Builder { specs: Vec::new() };
        let (d_enc, d_dec, p) = (cfg.encoder.dim, cfg.decoder.dim, cfg.patch_len());

        let (embed_w, embed_b) = b.linear("encoder.embed", p, d_enc);
        let blocks = b.stack("encoder", &cfg.encoder);
        let (norm_g, norm_b) = b.norm("encoder.norm", d_enc);
        let encoder = EncoderIds {
            embed_w,
            embed_b,
            blocks,
            norm_g,
            norm_b,
        };

        let names: &[&str] = match cfg.decoder_count() {
            1 => &["decoder"],
            _ => &["decoder.image", "decoder.video"],
        };
        let decoders = names
            .iter()
            .map(|prefix| {
                let (proj_w, proj_b) = b.linear(&format!("{prefix}.proj"), d_enc, d_dec);
                let mask_token =
                    b.add(format!("{prefix}.mask_token"), &[d_dec], Init::Zeros, false);
                let blocks = b.stack(prefix, &cfg.decoder);
                let (norm_g, norm_b) = b.norm(&format!("{prefix}.norm"), d_dec);
                let (pred_w, pred_b) = b.linear(&format!("{prefix}.pred"), d_dec, p);
                DecoderIds {
                    proj_w,
                    proj_b,
                    mask_token,
                    blocks,
                    norm_g,
                    norm_b,
                    pred_w,
                    pred_b,
                }
            })
            .collect();

        Layout {
            specs: b.specs,
            encoder,
            decoders,
        }
    }

    pub fn param_count(&self) -> usize {
        self.specs
            .iter()
            .map(|s| s.dims.iter().product::<usize>())
            .sum()
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }
}

/// Parameter values, one tensor per [`ParamSpec`] in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = f64> {
    tensors: Vec<Tensor<T>>,
}

fn trunc_normal(rng: &mut crate::ndcore::Stream) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z * INIT_STD;
        }
    }
}

impl<T: Real> ModelParams<T> {
    /// Initializes every tensor from its own keyed stream, so adding or
    /// reordering parameters does not perturb the others.
    pub fn init(layout: &Layout, seed: u64) -> Self {
        let rng = Rng::new(seed);
        let tensors = layout
            .specs
            .iter()
            .map(|s| match s.init {
                Init::Zeros => Tensor::zeros(&s.dims),
                Init::Ones => Tensor::ones(&s.dims),
                Init::TruncNormal => {
                    let mut st = rng.stream(&format!("init/{}", s.name), 0);
                    let n = s.dims.iter().product();
                    let data = (0..n).map(|_| T::lit(trunc_normal(&mut st))).collect();
                    Tensor::from_vec(&s.dims, data).expect("spec dims are positive")
                }
            })
            .collect();
        ModelParams { tensors }
    }

    pub fn from_tensors(layout: &Layout, tensors: Vec<Tensor<T>>) -> Result<Self> {
        if tensors.len() != layout.specs.len() {
            return Err(Error::shape(format!(
                "layout has {} parameters, got {}",
                layout.specs.len(),
                tensors.len()
            )));
        }
        for (s, t) in layout.specs.iter().zip(&tensors) {
            if t.dims() != s.dims.as_slice() {
                return Err(Error::shape(format!(
                    "{}: expected dims {:?}, got {:?}",
                    s.name,
                    s.dims,
                    t.dims()
                )));
            }
        }
        Ok(ModelParams { tensors })
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, i: usize) -> &Tensor<T> {
        &self.tensors[i]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Records every parameter on `tape`, returning their handles in layout order.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.param(t.clone())).collect()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}
