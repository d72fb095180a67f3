//! Aligned HR/LR patch sampling, padding of undersized images and
//! dihedral augmentation.

use rand::Rng;

use super::dataset::ImagePair;
use super::image_io::Rgb8;
use crate::error::{arg_err, shape_err, Result};
use crate::model::Dihedral;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Images that can be cropped and padded by the sampler.
pub trait PatchImage: Sized {
    fn dims(&self) -> (usize, usize);
    fn crop_window(&self, y0: usize, x0: usize, h: usize, w: usize) -> Self;
    /// Extends to at least `h x w` by mirroring about the bottom and right
    /// edges (edge pixel repeated, then the interior in reverse).
    fn pad_symmetric(&self, h: usize, w: usize) -> Self;
}

/// Mirrored index into `0..n` for any `i`, with period `2n`.
pub fn mirror_index(i: usize, n: usize) -> usize {
    let m = i % (2 * n);
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

impl PatchImage for Rgb8 {
    fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn crop_window(&self, y0: usize, x0: usize, h: usize, w: usize) -> Self {
        self.crop(y0, x0, h, w)
    }

    fn pad_symmetric(&self, h: usize, w: usize) -> Self {
        let (h, w) = (h.max(self.height), w.max(self.width));
        let mut data = Vec::with_capacity(h * w * 3);
        for y in 0..h {
            let sy = mirror_index(y, self.height);
            for x in 0..w {
                let o = (sy * self.width + mirror_index(x, self.width)) * 3;
                data.extend_from_slice(&self.data[o..o + 3]);
            }
        }
        Rgb8 { height: h, width: w, data }
    }
}

impl<T: Scalar> PatchImage for Tensor<T> {
    fn dims(&self) -> (usize, usize) {
        (self.shape().h, self.shape().w)
    }

    fn crop_window(&self, y0: usize, x0: usize, h: usize, w: usize) -> Self {
        self.crop(y0, x0, h, w).expect("window checked by caller")
    }

    fn pad_symmetric(&self, h: usize, w: usize) -> Self {
        let s = self.shape();
        let mut shape = s;
        shape.h = h.max(s.h);
        shape.w = w.max(s.w);
        Tensor::from_fn(shape, |n, c, y, x| self.at(n, c, mirror_index(y, s.h), mirror_index(x, s.w)))
    }
}

/// Pads an undersized HR/LR pair up to `patch_hr` (and `patch_hr / scale`)
/// per side. Padding whole LR pixels keeps the two grids aligned.
pub fn pad_pair<I: PatchImage>(hr: &I, lr: &I, scale: usize, patch_hr: usize) -> (I, I) {
    let lp = patch_hr / scale;
    let (lh, lw) = lr.dims();
    let (th, tw) = (lh.max(lp), lw.max(lp));
    (hr.pad_symmetric(th * scale, tw * scale), lr.pad_symmetric(th, tw))
}

/// Crops a `patch_hr` HR window at a uniformly random offset that is a
/// multiple of `scale`, and the matching `patch_hr / scale` LR window.
/// Returns `(lr_patch, hr_patch)`.
pub fn sample_patch<I: PatchImage, R: Rng + ?Sized>(
    hr: &I,
    lr: &I,
    scale: usize,
    patch_hr: usize,
    rng: &mut R,
) -> Result<(I, I)> {
    if scale == 0 || patch_hr == 0 || !patch_hr.is_multiple_of(scale) {
        return arg_err("sample_patch", format!("patch {patch_hr} is not a positive multiple of scale {scale}"));
    }
    let lp = patch_hr / scale;
    let (lh, lw) = lr.dims();
    let (hh, hw) = hr.dims();
    if (hh, hw) != (lh * scale, lw * scale) {
        return shape_err("sample_patch", format!("HR {hh}x{hw} is not LR {lh}x{lw} times {scale}"));
    }
    if lh < lp || lw < lp {
        return arg_err("sample_patch", format!("image {hh}x{hw} is smaller than the {patch_hr} patch"));
    }
    let ly = rng.gen_range(0..=lh - lp);
    let lx = rng.gen_range(0..=lw - lp);
    Ok((lr.crop_window(ly, lx, lp, lp), hr.crop_window(ly * scale, lx * scale, patch_hr, patch_hr)))
}

impl<T: Scalar> ImagePair<T> {
    /// [`sample_patch`] on this pair.
    pub fn sample_patch<R: Rng + ?Sized>(&self, patch_hr: usize, rng: &mut R) -> Result<(Tensor<T>, Tensor<T>)> {
        sample_patch(&self.hr, &self.lr, self.scale, patch_hr, rng)
    }
}

/// Applies the same dihedral transform to both patches.
pub fn augment_with<T: Scalar>(lr: &Tensor<T>, hr: &Tensor<T>, d: Dihedral) -> Result<(Tensor<T>, Tensor<T>)> {
    if d.swaps_axes() {
        for t in [lr, hr] {
            let s = t.shape();
            if s.h != s.w {
                return arg_err("augment", format!("quarter-turn of non-square patch {}x{}", s.h, s.w));
            }
        }
    }
    Ok((d.apply(lr), d.apply(hr)))
}

/// Draws one of four rotations and an independent horizontal flip.
pub fn draw_transform<R: Rng + ?Sized>(rng: &mut R) -> Dihedral {
    let rot = rng.gen_range(0..4u8);
    let flip = rng.gen_bool(0.5);
    Dihedral { rot, flip }
}

pub fn augment<T: Scalar, R: Rng + ?Sized>(lr: &Tensor<T>, hr: &Tensor<T>, rng: &mut R) -> Result<(Tensor<T>, Tensor<T>)> {
    augment_with(lr, hr, draw_transform(rng))
}
