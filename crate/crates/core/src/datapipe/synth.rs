//! Deterministic synthetic images and videos.
//!
//! Images are a per-channel linear gradient with a few solid rectangles on
//! top. Videos draw the same kind of static scene and add one rectangle that
//! moves by a constant integer velocity per frame and never leaves the frame.
//! All pixel values are integers in `[0, 255]`.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::ndcore::{Rng, Tensor};
use crate::patchify::{Modality, VisualTensor, CHANNELS};

use super::{DatasetHandle, Source};

/// A rectangle `[y0, y0+h) × [x0, x0+w)` filled with one color.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub y0: usize,
    pub x0: usize,
    pub h: usize,
    pub w: usize,
    pub color: [u8; 3],
}

/// The moving rectangle of a synthetic video: its position in frame 0 and
/// its per-frame displacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Motion {
    pub rect: Rect,
    pub dy: isize,
    pub dx: isize,
}

impl Motion {
    /// Top-left corner in frame `k`.
    pub fn origin(&self, k: usize) -> (usize, usize) {
        let y = self.rect.y0 as isize + self.dy * k as isize;
        let x = self.rect.x0 as isize + self.dx * k as isize;
        (y as usize, x as usize)
    }
}

fn random_color(s: &mut crate::ndcore::Stream) -> [u8; 3] {
    [s.random(), s.random(), s.random()]
}

fn random_rect(s: &mut crate::ndcore::Stream, height: usize, width: usize) -> Rect {
    let h = s.random_range(height.div_ceil(6).max(1)..=height.div_ceil(2).max(1));
    let w = s.random_range(width.div_ceil(6).max(1)..=width.div_ceil(2).max(1));
    Rect {
        y0: s.random_range(0..=height - h),
        x0: s.random_range(0..=width - w),
        h,
        w,
        color: random_color(s),
    }
}

fn background(s: &mut crate::ndcore::Stream, height: usize, width: usize) -> Vec<f64> {
    let mut coef = [[0.0f64; 3]; CHANNELS];
    for c in coef.iter_mut() {
        let base = s.random_range(30.0..225.0);
        let gy = s.random_range(-60.0..60.0);
        let gx = s.random_range(-60.0..60.0);
        *c = [base, gy, gx];
    }
    let mut out = Vec::with_capacity(height * width * CHANNELS);
    for y in 0..height {
        for x in 0..width {
            let fy = y as f64 / height as f64 - 0.5;
            let fx = x as f64 / width as f64 - 0.5;
            for c in &coef {
                out.push((c[0] + c[1] * fy + c[2] * fx).round().clamp(0.0, 255.0));
            }
        }
    }
    out
}

fn paint(frame: &mut [f64], width: usize, y0: usize, x0: usize, r: &Rect) {
    for y in y0..y0 + r.h {
        for x in x0..x0 + r.w {
            let at = (y * width + x) * CHANNELS;
            for c in 0..CHANNELS {
                frame[at + c] = r.color[c] as f64;
            }
        }
    }
}

/// Motion of the moving rectangle for video `id`, or `None` for images.
pub fn video_motion(handle: &DatasetHandle, id: usize) -> Result<Option<Motion>> {
    let Source::Synthetic {
        seed,
        frames,
        height,
        width,
    } = handle.source
    else {
        return Err(Error::param(format!(
            "{} is not a synthetic dataset",
            handle.name
        )));
    };
    if handle.modality == Modality::Image {
        return Ok(None);
    }
    let mut s = Rng::new(seed).stream("synth/motion", id as u64);
    let max_step =
        |extent: usize, size: usize| ((extent - size) / frames.max(2).saturating_sub(1)).min(3);
    let h = s.random_range(height.div_ceil(5).max(1)..=height.div_ceil(3).max(1));
    let w = s.random_range(width.div_ceil(5).max(1)..=width.div_ceil(3).max(1));
    let (my, mx) = (max_step(height, h) as i64, max_step(width, w) as i64);
    let dy = s.random_range(-my..=my) as isize;
    let mut dx = s.random_range(-mx..=mx) as isize;
    if dy == 0 && dx == 0 && mx > 0 {
        dx = 1;
    }
    let span = |d: isize| d.unsigned_abs() * (frames - 1);
    // choose a start such that the whole trajectory stays in bounds
    let y_lo = if dy < 0 { span(dy) } else { 0 };
    let y_hi = height - h - if dy > 0 { span(dy) } else { 0 };
    let x_lo = if dx < 0 { span(dx) } else { 0 };
    let x_hi = width - w - if dx > 0 { span(dx) } else { 0 };
    Ok(Some(Motion {
        rect: Rect {
            y0: s.random_range(y_lo..=y_hi),
            x0: s.random_range(x_lo..=x_hi),
            h,
            w,
            color: random_color(&mut s),
        },
        dy,
        dx,
    }))
}

/// Sample `id` of a synthetic dataset; a pure function of `(seed, id)`.
pub fn generate_synthetic(handle: &DatasetHandle, id: usize) -> Result<VisualTensor<f64>> {
    let Source::Synthetic {
        seed,
        frames,
        height,
        width,
    } = handle.source
    else {
        return Err(Error::param(format!(
            "{} is not a synthetic dataset",
            handle.name
        )));
    };
    if id >= handle.count {
        return Err(Error::Index(format!(
            "sample {id} out of range for {} with {} samples",
            handle.name, handle.count
        )));
    }
    let mut s = Rng::new(seed).stream("synth/scene", id as u64);
    let mut still = background(&mut s, height, width);
    let rects = s.random_range(1..=3);
    for _ in 0..rects {
        let r = random_rect(&mut s, height, width);
        paint(&mut still, width, r.y0, r.x0, &r);
    }
    let frame_len = height * width * CHANNELS;
    let mut data = Vec::with_capacity(frames * frame_len);
    let motion = video_motion(handle, id)?;
    for k in 0..frames {
        let mut f = still.clone();
        if let Some(m) = &motion {
            let (y, x) = m.origin(k);
            paint(&mut f, width, y, x, &m.rect);
        }
        data.extend(f);
    }
    let t = Tensor::from_vec(&[frames, height, width, CHANNELS], data)?;
    VisualTensor::new(t, handle.modality)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn video(seed: u64) -> DatasetHandle {
        DatasetHandle::synthetic("vid", Modality::Video, 16, seed, 4, 32, 32).unwrap()
    }

    #[test]
    fn deterministic_and_in_range() {
        let img = DatasetHandle::synthetic("img", Modality::Image, 8, 3, 1, 32, 32).unwrap();
        for h in [&img, &video(3)] {
            for id in 0..h.count {
                let a = generate_synthetic(h, id).unwrap();
                assert_eq!(a, generate_synthetic(h, id).unwrap());
                assert!(a
                    .pixels()
                    .data()
                    .iter()
                    .all(|&v| (0.0..=255.0).contains(&v) && v.fract() == 0.0));
            }
        }
        assert_ne!(
            generate_synthetic(&img, 0).unwrap(),
            generate_synthetic(&img, 1).unwrap()
        );
        assert!(matches!(generate_synthetic(&img, 8), Err(Error::Index(_))));
    }

    #[test]
    fn moving_rectangle_is_an_exact_shift() {
        for seed in 0..4 {
            let h = video(seed);
            for id in 0..h.count {
                let v = generate_synthetic(&h, id).unwrap();
                let m = video_motion(&h, id).unwrap().unwrap();
                for k in 0..v.frames() - 1 {
                    let (y0, x0) = m.origin(k);
                    let (y1, x1) = m.origin(k + 1);
                    assert_eq!(
                        (y1 as isize - y0 as isize, x1 as isize - x0 as isize),
                        (m.dy, m.dx)
                    );
                    let (a, b) = (v.frame(k), v.frame(k + 1));
                    for dy in 0..m.rect.h {
                        for dx in 0..m.rect.w {
                            let pa = ((y0 + dy) * 32 + x0 + dx) * 3;
                            let pb = ((y1 + dy) * 32 + x1 + dx) * 3;
                            assert_eq!(a[pa..pa + 3], b[pb..pb + 3]);
                            let c = m.rect.color.map(f64::from);
                            assert_eq!(a[pa..pa + 3], c);
                        }
                    }
                }
            }
        }
    }
}
