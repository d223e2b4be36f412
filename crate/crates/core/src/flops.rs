//! Analytical multiply-accumulate counts for a configuration and masking
//! ratio, and the instrumented counterpart read from the tape meter.
//!
//! Only matrix products are counted. On `n` tokens of width `m` a block costs
//! `4·n·m²` for the q/k/v/out projections, `2·n²·m` for scores and the
//! weighted sum, and `8·n·m²` for the MLP. The encoder sees `K` tokens, the
//! decoder all `N`.

use std::fmt;

use crate::error::{Error, Result};
use crate::masking::{kept_count, MaskSpec};
use crate::model::{OmniMae, OmniMaeConfig, Preset, StackConfig};
use crate::ndcore::Tensor;
use crate::patchify::{GridShape, Modality, VisualTensor, CHANNELS};

/// Input extents used for the preset tables: 224×224 images and
/// 16-frame 224×224 clips.
pub const REFERENCE_SIZE: usize = 224;
pub const REFERENCE_FRAMES: usize = 16;

/// Reference masking ratios used for "vs reference" columns.
pub const REFERENCE_RATIO_IMAGE: f64 = 0.75;
pub const REFERENCE_RATIO_VIDEO: f64 = 0.90;

/// Query ratios of the final models.
pub const QUERY_RATIO_IMAGE: f64 = 0.90;
pub const QUERY_RATIO_VIDEO: f64 = 0.95;

/// Published compute reductions: `(preset, modality, vs full, vs reference)`.
pub const PUBLISHED: [(Preset, Modality, f64, f64); 6] = [
    (Preset::VitB, Modality::Image, 5.9, 1.8),
    (Preset::VitB, Modality::Video, 7.8, 1.3),
    (Preset::VitL, Modality::Image, 7.1, 2.0),
    (Preset::VitL, Modality::Video, 11.6, 1.5),
    (Preset::VitH, Modality::Image, 7.2, 2.0),
    (Preset::VitH, Modality::Video, 11.3, 1.4),
];

/// MAC counts per stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Stages {
    pub patch_embed: u64,
    pub encoder_attn_proj: u64,
    pub encoder_attn_mix: u64,
    pub encoder_mlp: u64,
    pub adapter: u64,
    pub decoder_attn_proj: u64,
    pub decoder_attn_mix: u64,
    pub decoder_mlp: u64,
    pub output_proj: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopsReport {
    pub n: usize,
    pub k: usize,
    pub stages: Stages,
}

impl FlopsReport {
    /// Everything that runs on the `K` kept tokens, adapter included.
    pub fn encoder(&self) -> u64 {
        let s = &self.stages;
        s.patch_embed + s.encoder_attn_proj + s.encoder_attn_mix + s.encoder_mlp + s.adapter
    }

    /// Everything that runs on all `N` tokens.
    pub fn decoder(&self) -> u64 {
        let s = &self.stages;
        s.decoder_attn_proj + s.decoder_attn_mix + s.decoder_mlp + s.output_proj
    }

    pub fn total(&self) -> u64 {
        self.encoder() + self.decoder()
    }

    /// Matrix-product subtotal; equal to [`total`](Self::total) because only
    /// products are counted.
    pub fn matmul_total(&self) -> u64 {
        self.total()
    }
}

fn stack_macs(s: &StackConfig, n: u64) -> (u64, u64, u64) {
    let (m, l) = (s.dim as u64, s.depth as u64);
    (l * 4 * n * m * m, l * 2 * n * n * m, l * 8 * n * m * m)
}

/// Patch grid for the reference input of `modality`.
pub fn reference_grid(cfg: &OmniMaeConfig, modality: Modality) -> Result<GridShape> {
    let frames = match modality {
        Modality::Image => cfg.patch.t,
        Modality::Video => REFERENCE_FRAMES,
    };
    cfg.patch.grid_for(frames, REFERENCE_SIZE, REFERENCE_SIZE)
}

/// Counts for an arbitrary grid.
pub fn count_macs_for(cfg: &OmniMaeConfig, grid: GridShape, ratio: f64) -> Result<FlopsReport> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::param(format!(
            "masking ratio must lie in [0, 1), got {ratio}"
        )));
    }
    let n = grid.len();
    let k = kept_count(n, ratio);
    if k == 0 {
        return Err(Error::param(format!(
            "ratio {ratio} keeps no patches out of {n}"
        )));
    }
    let (p, d_enc, d_dec) = (
        cfg.patch_len() as u64,
        cfg.encoder.dim as u64,
        cfg.decoder.dim as u64,
    );
    let (kk, nn) = (k as u64, n as u64);
    let (eap, eam, emlp) = stack_macs(&cfg.encoder, kk);
    let (dap, dam, dmlp) = stack_macs(&cfg.decoder, nn);
    Ok(FlopsReport {
        n,
        k,
        stages: Stages {
            patch_embed: kk * p * d_enc,
            encoder_attn_proj: eap,
            encoder_attn_mix: eam,
            encoder_mlp: emlp,
            adapter: kk * d_enc * d_dec,
            decoder_attn_proj: dap,
            decoder_attn_mix: dam,
            decoder_mlp: dmlp,
            output_proj: nn * d_dec * p,
        },
    })
}

/// Counts for the reference input of `modality`.
pub fn count_macs(cfg: &OmniMaeConfig, modality: Modality, ratio: f64) -> Result<FlopsReport> {
    count_macs_for(cfg, reference_grid(cfg, modality)?, ratio)
}

/// One row of the compute-reduction table.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioRow {
    pub preset: Preset,
    pub modality: Modality,
    pub ratio: f64,
    pub report: FlopsReport,
    /// `total(r = 0) / total(ratio)`.
    pub vs_full: f64,
    pub reference_ratio: f64,
    /// `total(reference_ratio) / total(ratio)`.
    pub vs_reference: f64,
}

impl RatioRow {
    pub const CSV_HEADER: &'static str =
        "preset,modality,ratio,macs_encoder,macs_decoder,macs_total,vs_full,vs_reference";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.4},{:.4}",
            self.preset,
            self.modality,
            self.ratio,
            self.report.encoder(),
            self.report.decoder(),
            self.report.total(),
            self.vs_full,
            self.vs_reference
        )
    }

    /// Published `(vs full, vs reference)` for this preset and modality.
    pub fn published(&self) -> Option<(f64, f64)> {
        PUBLISHED
            .iter()
            .find(|(p, m, _, _)| *p == self.preset && *m == self.modality)
            .map(|&(_, _, f, r)| (f, r))
    }
}

/// Masking ratios per modality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioPair {
    pub image: f64,
    pub video: f64,
}

impl RatioPair {
    pub const QUERY: RatioPair = RatioPair {
        image: QUERY_RATIO_IMAGE,
        video: QUERY_RATIO_VIDEO,
    };
    pub const REFERENCE: RatioPair = RatioPair {
        image: REFERENCE_RATIO_IMAGE,
        video: REFERENCE_RATIO_VIDEO,
    };

    pub fn get(&self, m: Modality) -> f64 {
        match m {
            Modality::Image => self.image,
            Modality::Video => self.video,
        }
    }
}

pub fn ratio_row(
    cfg: &OmniMaeConfig,
    modality: Modality,
    ratio: f64,
    reference: f64,
) -> Result<RatioRow> {
    let report = count_macs(cfg, modality, ratio)?;
    let full = count_macs(cfg, modality, 0.0)?.total() as f64;
    let base = count_macs(cfg, modality, reference)?.total() as f64;
    let t = report.total() as f64;
    Ok(RatioRow {
        preset: cfg.preset,
        modality,
        ratio,
        report,
        vs_full: full / t,
        reference_ratio: reference,
        vs_reference: base / t,
    })
}

/// Rows for every configuration and modality.
pub fn ratio_table(
    cfgs: &[OmniMaeConfig],
    ratios: RatioPair,
    baselines: RatioPair,
) -> Result<Vec<RatioRow>> {
    let mut rows = Vec::new();
    for cfg in cfgs {
        for m in Modality::ALL {
            rows.push(ratio_row(cfg, m, ratios.get(m), baselines.get(m))?);
        }
    }
    Ok(rows)
}

/// The ViT-B/L/H table at the final-model and reference ratios.
pub fn preset_table() -> Result<Vec<RatioRow>> {
    ratio_table(
        &[
            OmniMaeConfig::vit_b(),
            OmniMaeConfig::vit_l(),
            OmniMaeConfig::vit_h(),
        ],
        RatioPair::QUERY,
        RatioPair::REFERENCE,
    )
}

/// Aligned text rendering of a table.
pub struct TableDisplay<'a>(pub &'a [RatioRow]);

impl fmt::Display for TableDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<7} {:<6} {:>5} {:>5} {:>5} {:>16} {:>16} {:>16} {:>8} {:>8}",
            "preset",
            "input",
            "ratio",
            "N",
            "K",
            "encoder MACs",
            "decoder MACs",
            "total MACs",
            "vs full",
            "vs ref"
        )?;
        for r in self.0 {
            writeln!(
                f,
                "{:<7} {:<6} {:>5.2} {:>5} {:>5} {:>16} {:>16} {:>16} {:>7.2}x {:>7.2}x",
                r.preset.as_str(),
                r.modality.as_str(),
                r.ratio,
                r.report.n,
                r.report.k,
                r.report.encoder(),
                r.report.decoder(),
                r.report.total(),
                r.vs_full,
                r.vs_reference
            )?;
        }
        Ok(())
    }
}

/// Runs a real forward pass on a constant input of `frames×height×width` and
/// returns the tape's matrix-product meter.
pub fn measure_macs(
    cfg: &OmniMaeConfig,
    modality: Modality,
    ratio: f64,
    frames: usize,
    height: usize,
    width: usize,
) -> Result<u64> {
    let model = OmniMae::new(*cfg)?;
    let params = model.init_params::<f64>(0);
    let pixels = Tensor::full(&[frames, height, width, CHANNELS], 128.0);
    let x = VisualTensor::new(pixels, modality)?;
    model.measure_macs(&params, &x, &MaskSpec::random(ratio, 0)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_counts() {
        let b = OmniMaeConfig::vit_b();
        let h = OmniMaeConfig::vit_h();
        let nk = |c: &OmniMaeConfig, m, r| {
            let rep = count_macs(c, m, r).unwrap();
            (rep.n, rep.k)
        };
        assert_eq!(nk(&b, Modality::Image, 0.90), (196, 19));
        assert_eq!(nk(&b, Modality::Video, 0.95), (1568, 78));
        assert_eq!(nk(&h, Modality::Image, 0.90), (256, 25));
        assert_eq!(nk(&h, Modality::Video, 0.95), (2048, 102));
    }

    #[test]
    fn hand_derived_vit_b() {
        // ViT-B image, K = 19, N = 196, p = 1536, D = 768, d = 384
        let (k, n, p, d_enc, d_dec) = (19u64, 196u64, 1536u64, 768u64, 384u64);
        let enc =
            k * p * d_enc + 12 * (12 * k * d_enc * d_enc + 2 * k * k * d_enc) + k * d_enc * d_dec;
        let dec = 4 * (12 * n * d_dec * d_dec + 2 * n * n * d_dec) + n * d_dec * p;
        let r = count_macs(&OmniMaeConfig::vit_b(), Modality::Image, 0.9).unwrap();
        assert_eq!((r.encoder(), r.decoder()), (enc, dec));
    }

    #[test]
    fn baselines_equal_to_queries_give_unit_ratios() {
        let rows = ratio_table(
            &[OmniMaeConfig::vit_l()],
            RatioPair::QUERY,
            RatioPair::QUERY,
        )
        .unwrap();
        assert!(rows.iter().all(|r| r.vs_reference == 1.0));
        let r0 = ratio_row(&OmniMaeConfig::vit_b(), Modality::Video, 0.0, 0.0).unwrap();
        assert_eq!(r0.vs_full, 1.0);
    }

    #[test]
    fn depth_linearity_and_stage_independence() {
        let base = OmniMaeConfig::vit_b();
        let mut deep = base;
        deep.encoder.depth *= 2;
        let a = count_macs(&base, Modality::Video, 0.9).unwrap().stages;
        let b = count_macs(&deep, Modality::Video, 0.9).unwrap().stages;
        assert_eq!(b.encoder_attn_proj, 2 * a.encoder_attn_proj);
        assert_eq!(b.encoder_attn_mix, 2 * a.encoder_attn_mix);
        assert_eq!(b.encoder_mlp, 2 * a.encoder_mlp);
        let d1 = count_macs(&base, Modality::Video, 0.5).unwrap();
        let d2 = count_macs(&base, Modality::Video, 0.95).unwrap();
        assert_eq!(d1.decoder(), d2.decoder());
        let mut prev = 0.0;
        for r in [0.0, 0.3, 0.6, 0.9, 0.95] {
            let v = ratio_row(&base, Modality::Image, r, 0.75).unwrap().vs_full;
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn invalid_ratio() {
        assert!(count_macs(&OmniMaeConfig::vit_b(), Modality::Image, 1.0).is_err());
    }
}
