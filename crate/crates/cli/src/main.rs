use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use omnimae::datapipe::{
    build_epoch_plan, simulate_epoch, write_synthetic, DatasetHandle, IoModel, Replication,
};
use omnimae::flops::{ratio_row, RatioPair, RatioRow, TableDisplay};
use omnimae::masking::{MaskKind, MaskSpec};
use omnimae::model::checkpoint::Checkpoint;
use omnimae::model::{OmniMae, OmniMaeConfig, Preset};
use omnimae::ndcore::{BackwardFault, Tensor};
use omnimae::patchify::{Modality, PatchConfig, VisualTensor};
use omnimae::reconstruct::{ratio_dir, reconstruct, write_frames};
use omnimae::run::{pretrain, RunConfig};
use omnimae::trainer::{grad_check, GRAD_CHECK_PROBES};
use omnimae::{ppm, Error};

#[derive(Parser)]
#[command(
    name = "omnimae",
    version,
    about = "Masked autoencoding for images and videos"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic dataset as OMNT files plus a manifest.
    GenData(GenData),
    /// Train from a key=value run file.
    Pretrain(PretrainArgs),
    /// Render reconstructions from a checkpoint at one or more masking ratios.
    Reconstruct(ReconstructArgs),
    /// Print the analytical compute table.
    Flops(FlopsArgs),
    /// Simulate epoch time of I/O-bound loading under sample replication.
    SimulateIo(SimArgs),
    /// Compare tape gradients with central differences on the toy model.
    Gradcheck(GradArgs),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    images: usize,
    #[arg(long, default_value_t = 8)]
    videos: usize,
    /// Image side length in pixels.
    #[arg(long, default_value_t = 32)]
    image_size: usize,
    #[arg(long, default_value_t = 4)]
    video_frames: usize,
    #[arg(long, default_value_t = 32)]
    video_size: usize,
    /// Patch extents the dimensions must divide into.
    #[arg(long, default_value = "2x16x16")]
    patch: PatchConfig,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PretrainArgs {
    /// Run file.
    config: PathBuf,
    /// Overrides `out_dir` from the run file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// An `.omnt` sample or a `.ppm` image.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.75,0.90,0.95")]
    ratios: Vec<f64>,
    #[arg(long, default_value = "random")]
    kind: MaskKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    VitB,
    VitL,
    VitH,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModalityArg {
    Image,
    Video,
    All,
}

impl ModalityArg {
    fn list(self) -> Vec<Modality> {
        match self {
            ModalityArg::Image => vec![Modality::Image],
            ModalityArg::Video => vec![Modality::Video],
            ModalityArg::All => Modality::ALL.to_vec(),
        }
    }
}

#[derive(Args)]
struct FlopsArgs {
    #[arg(long, value_enum, default_value = "all")]
    preset: PresetArg,
    #[arg(long, value_enum, default_value = "all")]
    modality: ModalityArg,
    /// Masking ratio; defaults to 0.90 for images and 0.95 for videos.
    #[arg(long)]
    ratio: Option<f64>,
    /// Baseline ratio; defaults to 0.75 for images and 0.90 for videos.
    #[arg(long)]
    reference: Option<f64>,
    #[arg(long)]
    csv: bool,
    /// Fail unless every row with published figures is within 10% of them.
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    replication: Vec<usize>,
    #[arg(long, default_value_t = 256)]
    count: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 40.0)]
    read_ms: f64,
    #[arg(long, default_value_t = 10.0)]
    jitter_ms: f64,
    #[arg(long, default_value_t = 60.0)]
    decode_ms: f64,
    #[arg(long, default_value_t = 50.0)]
    compute_ms: f64,
    #[arg(long, default_value_t = 8)]
    workers: usize,
    #[arg(long, default_value_t = 32)]
    in_flight: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fail unless epoch time is non-increasing in the replication factor.
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct GradArgs {
    #[arg(long, value_enum, default_value = "all")]
    modality: ModalityArg,
    #[arg(long, default_value_t = 0.5)]
    ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Corrupt one backward rule: gelu, softmax or layernorm.
    #[arg(long)]
    inject_fault: Option<BackwardFault>,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

/// A check that ran but did not hold; exits with status 1.
#[derive(Debug)]
struct CheckFailed(String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

fn gen_data(a: GenData) -> Result<()> {
    a.patch.grid_for(a.patch.t, a.image_size, a.image_size)?;
    a.patch
        .grid_for(a.video_frames, a.video_size, a.video_size)?;
    let mut sets = Vec::new();
    if a.images > 0 {
        sets.push(DatasetHandle::synthetic(
            "image",
            Modality::Image,
            a.images,
            a.seed,
            1,
            a.image_size,
            a.image_size,
        )?);
    }
    if a.videos > 0 {
        sets.push(DatasetHandle::synthetic(
            "video",
            Modality::Video,
            a.videos,
            a.seed,
            a.video_frames,
            a.video_size,
            a.video_size,
        )?);
    }
    if sets.is_empty() {
        bail!(Error::Usage("nothing to generate".into()));
    }
    let entries = write_synthetic(&a.out, &sets)?;
    println!(
        "wrote {} samples and {}",
        entries.len(),
        a.out.join("manifest.txt").display()
    );
    Ok(())
}

fn cmd_pretrain(a: PretrainArgs) -> Result<()> {
    let mut cfg = RunConfig::read(&a.config)?;
    if let Some(out) = a.out {
        cfg.out_dir = out;
    }
    let rep = pretrain(&cfg)?;
    println!("trained {} steps over {} epochs", rep.steps, rep.epochs);
    if let Some((m, loss)) = rep.last {
        println!("last step: {m} loss {loss:.6}");
    }
    println!("log: {}", rep.log.display());
    println!("checkpoint: {}", rep.checkpoint.display());
    Ok(())
}

fn read_input(path: &Path) -> Result<VisualTensor> {
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("ppm"))
    {
        let (w, h, rgb) = ppm::read(path)?;
        let px = rgb.into_iter().map(f64::from).collect();
        Ok(VisualTensor::image(Tensor::from_vec(&[1, h, w, 3], px)?)?)
    } else {
        Ok(VisualTensor::read_omnt(path)?)
    }
}

fn cmd_reconstruct(a: ReconstructArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let model = OmniMae::new(ck.config)?;
    let x = read_input(&a.input)?;
    write_frames(&x, a.out.join("input"))?;
    for &r in &a.ratios {
        let spec = MaskSpec::new(a.kind, r, a.seed)?;
        let rec = reconstruct(&model, &ck.params, &x, &spec)?;
        let dir = a.out.join(ratio_dir(r));
        let files = write_frames(&rec.composite, &dir)?;
        println!(
            "r={r:.2}: {} of {} patches masked, {} frame(s) in {}",
            rec.mask.masked_count(),
            rec.mask.total(),
            files.len(),
            dir.display()
        );
    }
    Ok(())
}

fn cmd_flops(a: FlopsArgs) -> Result<()> {
    let presets: Vec<OmniMaeConfig> = match a.preset {
        PresetArg::VitB => vec![OmniMaeConfig::vit_b()],
        PresetArg::VitL => vec![OmniMaeConfig::vit_l()],
        PresetArg::VitH => vec![OmniMaeConfig::vit_h()],
        PresetArg::All => [Preset::VitB, Preset::VitL, Preset::VitH]
            .into_iter()
            .map(OmniMaeConfig::from_preset)
            .collect::<omnimae::Result<_>>()?,
    };
    let mut rows: Vec<RatioRow> = Vec::new();
    for cfg in &presets {
        for m in a.modality.list() {
            let r = a.ratio.unwrap_or(RatioPair::QUERY.get(m));
            let base = a.reference.unwrap_or(RatioPair::REFERENCE.get(m));
            rows.push(ratio_row(cfg, m, r, base)?);
        }
    }
    if a.csv {
        println!("{}", RatioRow::CSV_HEADER);
        for r in &rows {
            println!("{}", r.csv());
        }
    } else {
        print!("{}", TableDisplay(&rows));
    }
    if a.check {
        let mut bad = Vec::new();
        for r in &rows {
            let published_setting = r.ratio == RatioPair::QUERY.get(r.modality)
                && r.reference_ratio == RatioPair::REFERENCE.get(r.modality);
            let Some((full, reference)) = r.published().filter(|_| published_setting) else {
                continue;
            };
            for (got, want, what) in [
                (r.vs_full, full, "vs full"),
                (r.vs_reference, reference, "vs reference"),
            ] {
                if (got - want).abs() > 0.1 * want {
                    bad.push(format!(
                        "{} {} {what}: {got:.2} vs {want}",
                        r.preset, r.modality
                    ));
                }
            }
        }
        if !bad.is_empty() {
            bail!(CheckFailed(bad.join("; ")));
        }
        eprintln!("check passed");
    }
    Ok(())
}

fn cmd_simulate(a: SimArgs) -> Result<()> {
    let io = IoModel {
        read_ms: a.read_ms,
        jitter_ms: a.jitter_ms,
        decode_ms: a.decode_ms,
        compute_ms: a.compute_ms,
        workers: a.workers,
        in_flight: a.in_flight,
    };
    let ds = [DatasetHandle::synthetic(
        "video",
        Modality::Video,
        a.count,
        a.seed,
        16,
        224,
        224,
    )?];
    println!("R,epoch_ms,distinct_loads,steps");
    let mut times = Vec::new();
    for &r in &a.replication {
        let plan = build_epoch_plan(&ds, a.batch_size, Replication::uniform(r), &[1], a.seed)?;
        let rep = simulate_epoch(&plan, &io, a.seed)?;
        println!(
            "{r},{:.3},{},{}",
            rep.epoch_ms, rep.distinct_loads, rep.steps
        );
        times.push((r, rep.epoch_ms));
    }
    if a.check {
        let mut sorted = times.clone();
        sorted.sort_by_key(|t| t.0);
        if let Some(w) = sorted.windows(2).find(|w| w[1].1 > w[0].1) {
            bail!(CheckFailed(format!(
                "epoch time rises from {:.1} ms at R={} to {:.1} ms at R={}",
                w[0].1, w[0].0, w[1].1, w[1].0
            )));
        }
        eprintln!("check passed");
    }
    Ok(())
}

fn cmd_gradcheck(a: GradArgs) -> Result<()> {
    let model = OmniMae::new(OmniMaeConfig::toy())?;
    let params = model.init_params::<f64>(a.seed);
    let mask = MaskSpec::random(a.ratio, a.seed)?;
    let mut worst = 0.0f64;
    for m in a.modality.list() {
        let frames = if m == Modality::Image { 1 } else { 4 };
        let x = DatasetHandle::synthetic(m.as_str(), m, 1, a.seed, frames, 32, 32)?.get(0)?;
        let rep = grad_check(&model, &params, &x, mask, a.inject_fault, a.seed)?;
        println!(
            "{m}: max relative error {:.3e} at {}[{}] (analytic {:.6e}, numeric {:.6e}; {} probes, up to {} per tensor)",
            rep.max_rel_err, rep.param, rep.coord, rep.analytic, rep.numeric, rep.probes, GRAD_CHECK_PROBES
        );
        worst = worst.max(rep.max_rel_err);
    }
    if worst.is_nan() || worst >= a.tolerance {
        bail!(CheckFailed(format!(
            "max relative error {worst:.3e} ≥ {:.0e}",
            a.tolerance
        )));
    }
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<CheckFailed>().is_some() {
        return 1;
    }
    match e.downcast_ref::<Error>() {
        Some(Error::Parameter(_) | Error::Usage(_) | Error::Parse { .. } | Error::Shape(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::GenData(a) => gen_data(a).context("gen-data"),
        Cmd::Pretrain(a) => cmd_pretrain(a).context("pretrain"),
        Cmd::Reconstruct(a) => cmd_reconstruct(a).context("reconstruct"),
        Cmd::Flops(a) => cmd_flops(a).context("flops"),
        Cmd::SimulateIo(a) => cmd_simulate(a).context("simulate-io"),
        Cmd::Gradcheck(a) => cmd_gradcheck(a).context("gradcheck"),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
