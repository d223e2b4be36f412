//! The omnivorous encoder and the lightweight reconstruction decoder.
//!
//! The encoder embeds only the kept patches, adds their positional rows and
//! runs pre-norm transformer blocks followed by a final LayerNorm. The
//! decoder projects those tokens to its own width, scatters them back into
//! an `N`-row sequence whose masked rows hold the learned mask token, adds
//! positional rows for all `N` positions, and predicts every patch's pixels.
//! There is no class token.

pub mod checkpoint;
mod config;
mod params;
pub mod posenc;

pub use config::{DecoderMode, OmniMaeConfig, Preset, StackConfig};
pub use params::{BlockIds, DecoderIds, EncoderIds, Init, Layout, ModelParams, ParamSpec};
pub use posenc::positional_encoding;

use crate::error::{Error, Result};
use crate::masking::{apply_mask, generate_mask, Mask, MaskSpec};
use crate::ndcore::{Real, Tape, Tensor, Var};
use crate::patchify::{patchify, prepare, GridShape, Modality, PatchGrid, VisualTensor};

/// Maps raw 0–255 pixels to `[-1, 1]` before the patch embedding.
pub fn scale_input<T: Real>(pixels: &Tensor<T>) -> Tensor<T> {
    let half = T::lit(127.5);
    pixels.map(|v| v / half - T::one())
}

/// A configuration together with its parameter layout.
#[derive(Debug, Clone)]
pub struct OmniMae {
    cfg: OmniMaeConfig,
    layout: Layout,
}

/// Tape handles produced by [`OmniMae::forward_on`].
#[derive(Debug, Clone)]
pub struct ForwardVars {
    /// `K×D` encoder output.
    pub encoded: Var,
    /// `N×p` pixel predictions.
    pub pred: Var,
    pub mask: Mask,
}

impl OmniMae {
    pub fn new(cfg: OmniMaeConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(OmniMae {
            layout: Layout::new(&cfg),
            cfg,
        })
    }

    pub fn config(&self) -> &OmniMaeConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn init_params<T: Real>(&self, seed: u64) -> ModelParams<T> {
        ModelParams::init(&self.layout, seed)
    }

    fn block<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &[Var],
        ids: &BlockIds,
        stack: &StackConfig,
        x: Var,
    ) -> Result<Var> {
        let eps = T::lit(self.cfg.ln_eps);
        let h = tape.layernorm(x, p[ids.ln1_g], p[ids.ln1_b], eps)?;
        let q = tape.linear(h, p[ids.wq], p[ids.bq])?;
        let k = tape.linear(h, p[ids.wk], p[ids.bk])?;
        let v = tape.linear(h, p[ids.wv], p[ids.bv])?;
        let dh = stack.head_dim();
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let mut heads = Vec::with_capacity(stack.heads);
        for head in 0..stack.heads {
            let qh = tape.slice_cols(q, head * dh, dh)?;
            let kh = tape.slice_cols(k, head * dh, dh)?;
            let vh = tape.slice_cols(v, head * dh, dh)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax(scores)?;
            heads.push(tape.matmul(attn, vh)?);
        }
        let merged = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)?
        };
        let o = tape.linear(merged, p[ids.wo], p[ids.bo])?;
        let x = tape.add(x, o)?;

        let h = tape.layernorm(x, p[ids.ln2_g], p[ids.ln2_b], eps)?;
        let h = tape.linear(h, p[ids.w1], p[ids.b1])?;
        let h = tape.gelu(h);
        let h = tape.linear(h, p[ids.w2], p[ids.b2])?;
        tape.add(x, h)
    }

    /// Encodes `kept[K×p]` at grid `positions`. Cost depends on `K` only.
    /// Rows are fed to the embedding as given; [`forward_on`](Self::forward_on)
    /// passes them through [`scale_input`] first.
    pub fn encode_on<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &[Var],
        kept: Var,
        positions: &[usize],
        grid: GridShape,
    ) -> Result<Var> {
        if positions.is_empty() {
            return Err(Error::param("encoder needs at least one kept patch"));
        }
        if let Some(&bad) = positions.iter().find(|&&i| i >= grid.len()) {
            return Err(Error::Index(format!(
                "position {bad} outside grid {grid} of {} patches",
                grid.len()
            )));
        }
        let enc = &self.layout.encoder;
        let mut x = tape.linear(kept, p[enc.embed_w], p[enc.embed_b])?;
        let pe = positional_encoding::<T>(grid, self.cfg.encoder.dim)?.gather_rows(positions)?;
        let pe = tape.constant(pe);
        x = tape.add(x, pe)?;
        for ids in &enc.blocks {
            x = self.block(tape, p, ids, &self.cfg.encoder, x)?;
        }
        tape.layernorm(x, p[enc.norm_g], p[enc.norm_b], T::lit(self.cfg.ln_eps))
    }

    /// Predicts all `N` patches from the encoded kept tokens.
    pub fn decode_on<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &[Var],
        encoded: Var,
        mask: &Mask,
        grid: GridShape,
        modality: Modality,
    ) -> Result<Var> {
        if mask.total() != grid.len() {
            return Err(Error::shape(format!(
                "mask covers {} patches, grid {grid} has {}",
                mask.total(),
                grid.len()
            )));
        }
        if tape.value(encoded).rows() != mask.kept().len() {
            return Err(Error::shape(format!(
                "{} encoded rows for {} kept patches",
                tape.value(encoded).rows(),
                mask.kept().len()
            )));
        }
        let dec = &self.layout.decoders[self.cfg.decoder_slot(modality)];
        let y = tape.linear(encoded, p[dec.proj_w], p[dec.proj_b])?;
        let mut z = tape.scatter_rows(y, p[dec.mask_token], mask.kept(), grid.len())?;
        let pe = tape.constant(positional_encoding::<T>(grid, self.cfg.decoder.dim)?);
        z = tape.add(z, pe)?;
        for ids in &dec.blocks {
            z = self.block(tape, p, ids, &self.cfg.decoder, z)?;
        }
        let z = tape.layernorm(z, p[dec.norm_g], p[dec.norm_b], T::lit(self.cfg.ln_eps))?;
        tape.linear(z, p[dec.pred_w], p[dec.pred_b])
    }

    /// Patchifies `x` (replicating images to the patch depth) and returns the grid.
    pub fn patchify<T: Real>(&self, x: &VisualTensor<T>) -> Result<PatchGrid<T>> {
        patchify(&prepare(x, &self.cfg.patch)?, &self.cfg.patch)
    }

    /// Full pretraining forward on a tape: mask, encode kept patches, decode all.
    pub fn forward_on<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &[Var],
        grid: &PatchGrid<T>,
        spec: &MaskSpec,
    ) -> Result<ForwardVars> {
        let mask = generate_mask(grid.shape, spec)?;
        self.forward_masked_on(tape, p, grid, mask)
    }

    pub fn forward_masked_on<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &[Var],
        grid: &PatchGrid<T>,
        mask: Mask,
    ) -> Result<ForwardVars> {
        let (kept, positions) = apply_mask(grid, &mask)?;
        let kept = tape.constant(scale_input(&kept));
        let encoded = self.encode_on(tape, p, kept, &positions, grid.shape)?;
        let pred = self.decode_on(tape, p, encoded, &mask, grid.shape, grid.modality)?;
        Ok(ForwardVars {
            encoded,
            pred,
            mask,
        })
    }

    /// Tape-free encoder evaluation.
    pub fn encode<T: Real>(
        &self,
        params: &ModelParams<T>,
        kept: &Tensor<T>,
        positions: &[usize],
        grid: GridShape,
    ) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let kept = tape.constant(kept.clone());
        let out = self.encode_on(&mut tape, &p, kept, positions, grid)?;
        Ok(tape.value(out).clone())
    }

    /// Tape-free decoder evaluation.
    pub fn decode<T: Real>(
        &self,
        params: &ModelParams<T>,
        encoded: &Tensor<T>,
        mask: &Mask,
        grid: GridShape,
        modality: Modality,
    ) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let e = tape.constant(encoded.clone());
        let out = self.decode_on(&mut tape, &p, e, mask, grid, modality)?;
        Ok(tape.value(out).clone())
    }

    /// Returns `(predictions N×p, mask, grid)`.
    pub fn forward<T: Real>(
        &self,
        params: &ModelParams<T>,
        x: &VisualTensor<T>,
        spec: &MaskSpec,
    ) -> Result<(Tensor<T>, Mask, PatchGrid<T>)> {
        let grid = self.patchify(x)?;
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let out = self.forward_on(&mut tape, &p, &grid, spec)?;
        Ok((tape.value(out.pred).clone(), out.mask, grid))
    }

    /// Matmul multiply-accumulates of one forward pass, read from the tape meter.
    pub fn measure_macs<T: Real>(
        &self,
        params: &ModelParams<T>,
        x: &VisualTensor<T>,
        spec: &MaskSpec,
    ) -> Result<u64> {
        let grid = self.patchify(x)?;
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        self.forward_on(&mut tape, &p, &grid, spec)?;
        Ok(tape.macs())
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng as _;

    use super::*;
    use crate::masking::MaskKind;
    use crate::ndcore::Rng;
    use crate::patchify::PatchConfig;

    fn toy() -> OmniMae {
        OmniMae::new(OmniMaeConfig::toy()).unwrap()
    }

    fn random_pixels(dims: &[usize], seed: u64) -> Tensor {
        let mut s = Rng::new(seed).stream("model.test", 0);
        let n = dims.iter().product();
        Tensor::from_vec(
            dims,
            (0..n).map(|_| s.random_range(0..=255) as f64).collect(),
        )
        .unwrap()
    }

    #[test]
    fn toy_shapes() {
        let m = toy();
        let params = m.init_params::<f64>(1);
        let img = VisualTensor::image(random_pixels(&[1, 32, 32, 3], 1)).unwrap();
        let (pred, mask, grid) = m
            .forward(&params, &img, &MaskSpec::random(0.5, 3).unwrap())
            .unwrap();
        assert_eq!(pred.dims(), &[4, 1536]);
        assert_eq!(mask.kept().len(), 2);
        assert_eq!(grid.shape, GridShape::new(1, 2, 2));

        let vid = VisualTensor::video(random_pixels(&[4, 32, 32, 3], 2)).unwrap();
        let (pred, _, _) = m
            .forward(&params, &vid, &MaskSpec::random(0.5, 3).unwrap())
            .unwrap();
        assert_eq!(pred.dims(), &[8, 1536]);
        assert!(pred.all_finite());
    }

    #[test]
    fn encode_shape_and_position_checks() {
        let m = toy();
        let params = m.init_params::<f64>(1);
        let grid = GridShape::new(2, 2, 2);
        let kept = random_pixels(&[3, 1536], 4).map(|v| v / 255.0);
        let out = m.encode(&params, &kept, &[0, 5, 7], grid).unwrap();
        assert_eq!(out.dims(), &[3, 16]);
        assert!(out.all_finite());
        assert!(matches!(
            m.encode(&params, &kept, &[0, 5, 8], grid),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn encoder_is_permutation_equivariant() {
        let m = toy();
        let params = m.init_params::<f64>(9);
        let grid = GridShape::new(2, 2, 2);
        let kept = random_pixels(&[5, 1536], 5).map(|v| v / 255.0);
        let pos = [1, 2, 4, 6, 7];
        let base = m.encode(&params, &kept, &pos, grid).unwrap();
        let perm = [3, 0, 4, 2, 1];
        let kept_p = kept.gather_rows(&perm).unwrap();
        let pos_p: Vec<usize> = perm.iter().map(|&i| pos[i]).collect();
        let out = m.encode(&params, &kept_p, &pos_p, grid).unwrap();
        let want = base.gather_rows(&perm).unwrap();
        assert!(out.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn full_mask_reduces_to_plain_vit() {
        // K = N: every patch is encoded in patch order
        let m = toy();
        let params = m.init_params::<f64>(2);
        let vid = VisualTensor::video(random_pixels(&[2, 32, 32, 3], 6)).unwrap();
        let grid = m.patchify(&vid).unwrap();
        let enc_all = m
            .encode(
                &params,
                &scale_input(&grid.patches),
                &(0..4).collect::<Vec<_>>(),
                grid.shape,
            )
            .unwrap();
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let fv = m
            .forward_on(&mut tape, &p, &grid, &MaskSpec::random(0.0, 0).unwrap())
            .unwrap();
        assert_eq!(tape.value(fv.encoded), &enc_all);
    }

    #[test]
    fn decode_extreme_masks() {
        let m = toy();
        let params = m.init_params::<f64>(3);
        let grid = GridShape::new(2, 2, 2);
        let spec = MaskSpec::random(0.0, 0).unwrap();
        let all = Mask::from_kept(8, (0..8).collect(), spec).unwrap();
        let enc = random_pixels(&[8, 16], 7).map(|v| v / 255.0);
        let out = m
            .decode(&params, &enc, &all, grid, Modality::Video)
            .unwrap();
        assert_eq!(out.dims(), &[8, 1536]);

        let one = Mask::from_kept(8, vec![5], spec).unwrap();
        assert_eq!(one.masked_count(), 7);
        let out = m
            .decode(
                &params,
                &enc.gather_rows(&[0]).unwrap(),
                &one,
                grid,
                Modality::Video,
            )
            .unwrap();
        assert_eq!(out.dims(), &[8, 1536]);

        // scattered decoder input: exactly one row differs from the mask token
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let dec = &m.layout().decoders[0];
        let e = tape.constant(enc.gather_rows(&[0]).unwrap());
        let y = tape.linear(e, p[dec.proj_w], p[dec.proj_b]).unwrap();
        let z = tape
            .scatter_rows(y, p[dec.mask_token], one.kept(), 8)
            .unwrap();
        let token = params.get(dec.mask_token);
        let differing: Vec<usize> = (0..8)
            .filter(|&r| tape.value(z).row(r) != token.data())
            .collect();
        assert_eq!(differing, vec![5]);
    }

    #[test]
    fn decoder_output_independent_of_mask_when_tokens_are_zero() {
        // zero mask token and zero encoded rows (with zero projection bias at
        // init) make every decoder input row a pure positional row, so the
        // output cannot depend on which rows were masked
        let m = toy();
        let params = m.init_params::<f64>(4);
        let grid = GridShape::new(1, 2, 2);
        let spec = MaskSpec::random(0.5, 0).unwrap();
        let a = Mask::from_kept(4, vec![0, 3], spec).unwrap();
        let b = Mask::from_kept(4, vec![1, 2], spec).unwrap();
        let zeros = Tensor::zeros(&[2, 16]);
        let out_a = m
            .decode(&params, &zeros, &a, grid, Modality::Image)
            .unwrap();
        let out_b = m
            .decode(&params, &zeros, &b, grid, Modality::Image)
            .unwrap();
        assert_eq!(out_a, out_b);
    }

    #[test]
    fn shared_tokens_get_identical_encodings_across_masks() {
        // per-token determinism: the encoder output for a patch depends on the
        // whole kept set, so compare two masks through the same kept rows
        let m = toy();
        let params = m.init_params::<f64>(5);
        let vid = VisualTensor::video(random_pixels(&[4, 32, 32, 3], 8)).unwrap();
        let grid = m.patchify(&vid).unwrap();
        let s1 = MaskSpec::random(0.5, 11).unwrap();
        let s2 = MaskSpec::random(0.5, 12).unwrap();
        let run = |spec: &MaskSpec| {
            let mut tape = Tape::new();
            let p = params.bind(&mut tape);
            let fv = m.forward_on(&mut tape, &p, &grid, spec).unwrap();
            (tape.value(fv.encoded).clone(), fv.mask)
        };
        let (e1, m1) = run(&s1);
        let (e1b, _) = run(&s1);
        assert_eq!(e1, e1b);
        let (e2, m2) = run(&s2);
        assert_ne!(m1.kept(), m2.kept());
        // feeding mask 2's kept set explicitly reproduces run 2 row for row
        let (kept2, pos2) = apply_mask(&grid, &m2).unwrap();
        let direct = m
            .encode(&params, &scale_input(&kept2), &pos2, grid.shape)
            .unwrap();
        assert_eq!(direct, e2);
    }

    #[test]
    fn separate_decoders_route_by_modality() {
        let cfg = OmniMaeConfig {
            decoder_mode: DecoderMode::Separate,
            ..OmniMaeConfig::toy()
        };
        let m = OmniMae::new(cfg).unwrap();
        assert_eq!(m.layout().decoders.len(), 2);
        let params = m.init_params::<f64>(6);
        let img = VisualTensor::image(random_pixels(&[1, 32, 32, 3], 9)).unwrap();
        let spec = MaskSpec::random(0.5, 1).unwrap();
        let grid = m.patchify(&img).unwrap();
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let fv = m.forward_on(&mut tape, &p, &grid, &spec).unwrap();
        let loss = tape.sum(fv.pred);
        let g = tape.backward(loss).unwrap();
        let video_dec = &m.layout().decoders[1];
        assert!(g.get(p[video_dec.pred_w]).is_none());
        assert!(g.get(p[m.layout().decoders[0].pred_w]).is_some());
    }

    #[test]
    fn tube_mask_forward_runs() {
        let m = toy();
        let params = m.init_params::<f64>(7);
        let vid = VisualTensor::video(random_pixels(&[4, 32, 32, 3], 10)).unwrap();
        let spec = MaskSpec::new(MaskKind::Tube, 0.5, 2).unwrap();
        let (pred, mask, _) = m.forward(&params, &vid, &spec).unwrap();
        assert_eq!(mask.kept().len(), 4);
        assert_eq!(pred.rows(), 8);
    }

    #[test]
    fn single_precision_forward() {
        let m = toy();
        let params = m.init_params::<f32>(1);
        let img = VisualTensor::<f32>::image(random_pixels(&[1, 32, 32, 3], 1).cast()).unwrap();
        let (pred, _, _) = m
            .forward(&params, &img, &MaskSpec::random(0.5, 3).unwrap())
            .unwrap();
        assert!(pred.all_finite());
        let _ = PatchConfig::new(1, 1, 1);
    }
}
