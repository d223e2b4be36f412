//! Keep/drop partitions over a patch grid.
//!
//! Four strategies are supported: uniform random, tube (same spatial
//! positions in every time slab), causal (a raster-order prefix) and frame
//! (whole time slabs). All are pure functions of `(grid, spec)`.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;

use crate::error::{Error, Result};
use crate::ndcore::{Real, Rng, Tensor};
use crate::patchify::{GridShape, PatchGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskKind {
    Random,
    Tube,
    Causal,
    Frame,
}

impl MaskKind {
    pub const ALL: [MaskKind; 4] = [
        MaskKind::Random,
        MaskKind::Tube,
        MaskKind::Causal,
        MaskKind::Frame,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MaskKind::Random => "random",
            MaskKind::Tube => "tube",
            MaskKind::Causal => "causal",
            MaskKind::Frame => "frame",
        }
    }
}

impl fmt::Display for MaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MaskKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::param(format!("unknown mask kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskSpec {
    pub kind: MaskKind,
    /// Fraction of patches masked, in `[0, 1)`.
    pub ratio: f64,
    pub seed: u64,
}

impl MaskSpec {
    pub fn new(kind: MaskKind, ratio: f64, seed: u64) -> Result<Self> {
        if !ratio.is_finite() || !(0.0..1.0).contains(&ratio) {
            return Err(Error::param(format!(
                "masking ratio must lie in [0, 1), got {ratio}"
            )));
        }
        Ok(MaskSpec { kind, ratio, seed })
    }

    pub fn random(ratio: f64, seed: u64) -> Result<Self> {
        Self::new(MaskKind::Random, ratio, seed)
    }

    pub fn with_seed(self, seed: u64) -> Self {
        MaskSpec { seed, ..self }
    }
}

/// `floor(n · (1 − r))`, with a tolerance of 1e-9 so that products which are
/// whole numbers in exact arithmetic are not floored down by binary rounding
/// (e.g. `10 · (1 − 0.9)` evaluates to 0.999…).
pub fn kept_count(n: usize, ratio: f64) -> usize {
    ((n as f64) * (1.0 - ratio) + 1e-9).floor() as usize
}

/// A partition of `0..n` into kept and masked patch indices, both ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    n: usize,
    kept: Vec<usize>,
    masked: Vec<usize>,
    spec: MaskSpec,
}

impl Mask {
    /// Builds a mask from an explicit kept set.
    pub fn from_kept(n: usize, mut kept: Vec<usize>, spec: MaskSpec) -> Result<Self> {
        kept.sort_unstable();
        if kept.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::param("kept indices repeat"));
        }
        if kept.last().is_some_and(|&k| k >= n) {
            return Err(Error::Index(format!("kept index out of range for N = {n}")));
        }
        if kept.is_empty() {
            return Err(Error::param("a mask must keep at least one patch"));
        }
        let mut is_kept = vec![false; n];
        for &k in &kept {
            is_kept[k] = true;
        }
        let masked = (0..n).filter(|&i| !is_kept[i]).collect();
        Ok(Mask {
            n,
            kept,
            masked,
            spec,
        })
    }

    /// Total patch count `N`.
    pub fn total(&self) -> usize {
        self.n
    }

    /// Masked count `M`.
    pub fn masked_count(&self) -> usize {
        self.masked.len()
    }

    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    pub fn masked(&self) -> &[usize] {
        &self.masked
    }

    pub fn spec(&self) -> &MaskSpec {
        &self.spec
    }

    pub fn is_kept(&self, i: usize) -> bool {
        self.kept.binary_search(&i).is_ok()
    }
}

fn too_high(spec: &MaskSpec, units: usize, what: &str) -> Error {
    Error::param(format!(
        "{} masking at ratio {} keeps no {what} out of {units}; the minimum \
         representable kept fraction is 1/{units}, so the ratio must be ≤ {}",
        spec.kind,
        spec.ratio,
        1.0 - 1.0 / units as f64
    ))
}

fn sample_sorted(rng: &mut crate::ndcore::Stream, n: usize, k: usize) -> Vec<usize> {
    let mut v = index::sample(rng, n, k).into_vec();
    v.sort_unstable();
    v
}

pub fn generate_mask(grid: GridShape, spec: &MaskSpec) -> Result<Mask> {
    let spec = MaskSpec::new(spec.kind, spec.ratio, spec.seed)?;
    let n = grid.len();
    if n == 0 {
        return Err(Error::param("cannot mask an empty grid"));
    }
    let mut rng = Rng::new(spec.seed).stream("mask", 0);
    let kept = match spec.kind {
        MaskKind::Random => {
            let k = kept_count(n, spec.ratio);
            if k == 0 {
                return Err(too_high(&spec, n, "patches"));
            }
            sample_sorted(&mut rng, n, k)
        }
        MaskKind::Causal => {
            let k = kept_count(n, spec.ratio);
            if k == 0 {
                return Err(too_high(&spec, n, "patches"));
            }
            (0..k).collect()
        }
        MaskKind::Tube => {
            let s = grid.spatial();
            let ks = kept_count(s, spec.ratio);
            if ks == 0 {
                return Err(too_high(&spec, s, "spatial positions"));
            }
            let cols = sample_sorted(&mut rng, s, ks);
            (0..grid.nt)
                .flat_map(|tau| cols.iter().map(move |&c| tau * s + c))
                .collect()
        }
        MaskKind::Frame => {
            let kt = kept_count(grid.nt, spec.ratio).max(1);
            let slots = sample_sorted(&mut rng, grid.nt, kt);
            let s = grid.spatial();
            slots
                .iter()
                .flat_map(|&tau| tau * s..(tau + 1) * s)
                .collect()
        }
    };
    Mask::from_kept(n, kept, spec)
}

/// Gathers the kept patch rows, in kept-index order, with their positions.
pub fn apply_mask<T: Real>(g: &PatchGrid<T>, m: &Mask) -> Result<(Tensor<T>, Vec<usize>)> {
    if m.total() != g.len() {
        return Err(Error::shape(format!(
            "mask covers {} patches but the grid has {}",
            m.total(),
            g.len()
        )));
    }
    Ok((g.patches.gather_rows(m.kept())?, m.kept().to_vec()))
}

/// Text form `kind:ratio:seed:N:[i,j,...]`.
impl fmt::Display for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}:{}:[",
            self.spec.kind, self.spec.ratio, self.spec.seed, self.n
        )?;
        for (i, k) in self.kept.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{k}")?;
        }
        f.write_str("]")
    }
}

impl FromStr for Mask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("mask text {s:?}: {m}"));
        let mut parts = s.trim().splitn(5, ':');
        let mut next = |what: &str| parts.next().ok_or_else(|| bad(&format!("missing {what}")));
        let kind: MaskKind = next("kind")?.parse()?;
        let ratio: f64 = next("ratio")?.parse().map_err(|_| bad("bad ratio"))?;
        let seed: u64 = next("seed")?.parse().map_err(|_| bad("bad seed"))?;
        let n: usize = next("N")?.parse().map_err(|_| bad("bad N"))?;
        let list = next("kept list")?;
        let inner = list
            .strip_prefix('[')
            .and_then(|l| l.strip_suffix(']'))
            .ok_or_else(|| bad("kept list must be bracketed"))?;
        let kept = inner
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| t.trim().parse::<usize>().map_err(|_| bad("bad index")))
            .collect::<Result<Vec<_>>>()?;
        Mask::from_kept(n, kept, MaskSpec::new(kind, ratio, seed)?)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::patchify::{Modality, PatchConfig};

    fn g(nt: usize, nh: usize, nw: usize) -> GridShape {
        GridShape::new(nt, nh, nw)
    }

    #[test]
    fn extreme_ratio_counts() {
        let m = generate_mask(g(1, 14, 14), &MaskSpec::random(0.90, 1).unwrap()).unwrap();
        assert_eq!(m.kept().len(), 19);
        let m = generate_mask(g(8, 14, 14), &MaskSpec::random(0.95, 1).unwrap()).unwrap();
        assert_eq!(m.kept().len(), 78);
        assert_eq!(m.masked_count(), 1568 - 78);
    }

    #[test]
    fn zero_ratio_keeps_everything() {
        for kind in MaskKind::ALL {
            let m = generate_mask(g(2, 3, 3), &MaskSpec::new(kind, 0.0, 9).unwrap()).unwrap();
            assert_eq!(m.kept(), (0..18).collect::<Vec<_>>().as_slice());
            assert!(m.masked().is_empty());
        }
    }

    #[test]
    fn tube_and_causal_counts() {
        let spec = MaskSpec::new(MaskKind::Tube, 0.90, 4).unwrap();
        let m = generate_mask(g(8, 14, 14), &spec).unwrap();
        assert_eq!(m.kept().len(), 152);
        let spec = MaskSpec::new(MaskKind::Causal, 0.90, 4).unwrap();
        let m = generate_mask(g(8, 14, 14), &spec).unwrap();
        assert_eq!(m.kept(), (0..156).collect::<Vec<_>>().as_slice());
    }

    #[test]
    fn frame_keeps_at_least_one_slot() {
        let spec = MaskSpec::new(MaskKind::Frame, 0.95, 2).unwrap();
        let m = generate_mask(g(8, 14, 14), &spec).unwrap();
        assert_eq!(m.kept().len(), 196);
    }

    #[test]
    fn too_high_ratio_names_the_limit() {
        let err = generate_mask(g(1, 2, 2), &MaskSpec::random(0.9, 0).unwrap()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Parameter(_)));
        assert!(msg.contains("1/4") && msg.contains("0.75"), "{msg}");
        let tube = MaskSpec::new(MaskKind::Tube, 0.9, 0).unwrap();
        assert!(generate_mask(g(8, 2, 2), &tube).is_err());
    }

    #[test]
    fn ratio_out_of_range_rejected() {
        assert!(MaskSpec::random(1.0, 0).is_err());
        assert!(MaskSpec::random(-0.1, 0).is_err());
        assert!(MaskSpec::random(f64::NAN, 0).is_err());
    }

    #[test]
    fn apply_mask_gathers_rows() {
        let grid = PatchGrid {
            shape: g(1, 2, 2),
            cfg: PatchConfig::new(1, 1, 1).unwrap(),
            modality: Modality::Image,
            patches: Tensor::from_vec(&[4, 3], (0..12).map(|v| v as f64).collect()).unwrap(),
        };
        let spec = MaskSpec::random(0.0, 0).unwrap();
        let full = Mask::from_kept(4, (0..4).collect(), spec).unwrap();
        let (rows, pos) = apply_mask(&grid, &full).unwrap();
        assert_eq!(rows, grid.patches);
        assert_eq!(pos, vec![0, 1, 2, 3]);

        let one = Mask::from_kept(4, vec![0], spec).unwrap();
        let (rows, _) = apply_mask(&grid, &one).unwrap();
        assert_eq!(rows.data(), grid.patches.row(0));

        let wrong = Mask::from_kept(5, vec![0], spec).unwrap();
        assert!(matches!(apply_mask(&grid, &wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn text_form_roundtrip() {
        let m = generate_mask(g(2, 4, 4), &MaskSpec::random(0.75, 77).unwrap()).unwrap();
        let s = m.to_string();
        assert!(s.starts_with("random:0.75:77:32:["), "{s}");
        assert_eq!(s.parse::<Mask>().unwrap(), m);
        assert!("random:0.5:1:4:[]".parse::<Mask>().is_err());
        assert!("random:0.5:1:4:[4]".parse::<Mask>().is_err());
        assert!("blob:0.5:1:4:[0]".parse::<Mask>().is_err());
    }

    proptest! {
        #[test]
        fn partition_is_exact(nt in 1usize..5, nh in 1usize..6, nw in 1usize..6,
                              r in 0.0f64..0.6, seed in any::<u64>(), k in 0usize..4) {
            let kind = MaskKind::ALL[k];
            let units = if kind == MaskKind::Tube { nh * nw } else { nt * nh * nw };
            let res = generate_mask(g(nt, nh, nw), &MaskSpec::new(kind, r, seed).unwrap());
            if kind != MaskKind::Frame && kept_count(units, r) == 0 {
                prop_assert!(matches!(res, Err(Error::Parameter(_))));
                return Ok(());
            }
            let m = res.unwrap();
            let mut all: Vec<usize> = m.kept().iter().chain(m.masked()).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..nt * nh * nw).collect::<Vec<_>>());
            prop_assert!(m.kept().windows(2).all(|w| w[0] < w[1]));
            prop_assert!(m.masked().windows(2).all(|w| w[0] < w[1]));
        }
    }
}
