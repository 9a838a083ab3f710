//! Photometric (SSIM + L1) and geometric (normalized depth-consistency)
//! losses, generic over plain values and dual numbers.
//!
//! Intensities are normalized to `[0, 1]`; the SSIM uses a 3x3 window with
//! constants `C1 = 0.01²` and `C2 = 0.03²`. A pixel contributes the SSIM term
//! only when its full 3x3 neighborhood is warp-valid and inside the image;
//! the L1 term is averaged over all warp-valid pixels.

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthMap, Grid, Pose};

use super::dual::{PerturbedRelPose, Smooth};

const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
/// Minimum fraction of warp-valid pixels for a usable edge.
const MIN_VALID_FRACTION: f64 = 0.01;

/// Bilinear sample with generic sub-pixel coordinates; `None` outside the
/// image. Gradients flow through the interpolation weights.
fn sample_generic<S: Smooth>(grid: &Grid, u: S, v: S) -> Option<S> {
    let (uv, vv) = (u.value(), v.value());
    if !(uv >= 0.0 && vv >= 0.0 && uv <= (grid.width - 1) as f64 && vv <= (grid.height - 1) as f64)
    {
        return None;
    }
    let x0 = (uv.floor() as usize).min(grid.width.saturating_sub(2));
    let y0 = (vv.floor() as usize).min(grid.height.saturating_sub(2));
    let (x1, y1) = (x0 + 1, y0 + 1);
    let fx = u.add_const(-(x0 as f64));
    let fy = v.add_const(-(y0 as f64));
    let one_minus_fx = -fx + S::constant(1.0);
    let one_minus_fy = -fy + S::constant(1.0);
    let v00 = grid.at(x0, y0);
    let v10 = grid.at(x1, y0);
    let v01 = grid.at(x0, y1);
    let v11 = grid.at(x1, y1);
    Some(
        one_minus_fx * one_minus_fy.scale(v00)
            + fx * one_minus_fy.scale(v10)
            + one_minus_fx * fy.scale(v01)
            + fx * fy.scale(v11),
    )
}

/// Warp the source image into the target view. Returns per-pixel samples
/// (None = masked) given target pseudo-depth, the affine depth parameters of
/// the target frame and a perturbed target->source transform.
fn warp_generic<S: Smooth>(
    source: &Grid,
    target_pseudo: &DepthMap,
    affine: (S, S),
    rel: &PerturbedRelPose<S>,
    k: &CameraIntrinsics,
) -> Vec<Option<S>> {
    let (w, h) = (target_pseudo.width(), target_pseudo.height());
    let mut out = vec![None; w * h];
    for y in 0..h {
        for x in 0..w {
            if !target_pseudo.is_valid(x, y) {
                continue;
            }
            let d = affine.0.scale(target_pseudo.depth(x, y)) + affine.1;
            if d.value() <= 0.0 {
                continue;
            }
            let px = [
                d.scale((x as f64 - k.cx) / k.fx),
                d.scale((y as f64 - k.cy) / k.fy),
                d,
            ];
            let ps = rel.transform(&px);
            if ps[2].value() <= 1e-9 {
                continue;
            }
            let u = (ps[0] / ps[2]).scale(k.fx).add_const(k.cx);
            let v = (ps[1] / ps[2]).scale(k.fy).add_const(k.cy);
            out[y * w + x] = sample_generic(source, u, v);
        }
    }
    out
}

/// Core of the photometric loss over generic scalars.
pub(super) fn photometric_core<S: Smooth>(
    target_image: &Grid,
    source_image: &Grid,
    target_pseudo: &DepthMap,
    affine: (S, S),
    rel: &PerturbedRelPose<S>,
    k: &CameraIntrinsics,
) -> Result<S> {
    if !target_image.same_size(source_image) || !target_image.same_size(&target_pseudo.values) {
        return Err(Error::DimensionMismatch(
            "image and depth sizes differ".into(),
        ));
    }
    let (w, h) = (target_image.width, target_image.height);
    let warped = warp_generic(source_image, target_pseudo, affine, rel, k);

    let valid_count = warped.iter().filter(|s| s.is_some()).count();
    let valid_fraction = valid_count as f64 / (w * h) as f64;
    if valid_fraction < MIN_VALID_FRACTION {
        return Err(Error::InsufficientOverlap { valid_fraction });
    }

    // L1 over the valid mask.
    let mut l1 = S::constant(0.0);
    for (idx, sample) in warped.iter().enumerate() {
        if let Some(s) = sample {
            l1 = l1 + (*s - S::constant(target_image.data[idx])).abs();
        }
    }
    l1 = l1.scale(1.0 / valid_count as f64);

    // SSIM over pixels whose full 3x3 neighborhood is valid.
    let mut ssim_sum = S::constant(0.0);
    let mut ssim_count = 0usize;
    for y in 1..h - 1 {
        'pixel: for x in 1..w - 1 {
            let mut mu_x = 0.0;
            let mut mu_x2 = 0.0;
            let mut mu_y = S::constant(0.0);
            let mut mu_y2 = S::constant(0.0);
            let mut mu_xy = S::constant(0.0);
            for dy in 0..3 {
                for dx in 0..3 {
                    let idx = (y + dy - 1) * w + (x + dx - 1);
                    let Some(sy) = &warped[idx] else {
                        continue 'pixel;
                    };
                    let sx = target_image.data[idx];
                    mu_x += sx;
                    mu_x2 += sx * sx;
                    mu_y = mu_y + *sy;
                    mu_y2 = mu_y2 + *sy * *sy;
                    mu_xy = mu_xy + sy.scale(sx);
                }
            }
            let inv9 = 1.0 / 9.0;
            mu_x *= inv9;
            mu_x2 *= inv9;
            let mu_y = mu_y.scale(inv9);
            let mu_y2 = mu_y2.scale(inv9);
            let mu_xy = mu_xy.scale(inv9);
            let sigma_x2 = mu_x2 - mu_x * mu_x;
            let sigma_y2 = mu_y2 - mu_y * mu_y;
            let sigma_xy = mu_xy - mu_y.scale(mu_x);

            let num = (mu_y.scale(2.0 * mu_x).add_const(SSIM_C1))
                * (sigma_xy.scale(2.0).add_const(SSIM_C2));
            let den = (mu_y * mu_y).add_const(mu_x * mu_x + SSIM_C1)
                * sigma_y2.add_const(sigma_x2 + SSIM_C2);
            let ssim = num / den;
            ssim_sum = ssim_sum + (-ssim).add_const(1.0).scale(0.5);
            ssim_count += 1;
        }
    }
    if ssim_count == 0 {
        return Err(Error::InsufficientOverlap { valid_fraction });
    }
    let ssim_term = ssim_sum.scale(1.0 / ssim_count as f64);
    Ok(ssim_term.scale(0.85) + l1.scale(0.15))
}

/// Inverse-warping reconstruction error between a target frame and a source
/// frame: `0.85·(1−SSIM)/2 + 0.15·L1`, averaged over the valid mask.
///
/// `target_depth` is metric; `pose_t_to_s` maps target-frame coordinates into
/// the source frame. Errors with `InsufficientOverlap` when fewer than 1% of
/// the pixels survive warping.
pub fn photometric_loss(
    target_image: &Grid,
    source_image: &Grid,
    target_depth: &DepthMap,
    pose_t_to_s: &Pose,
    k: &CameraIntrinsics,
) -> Result<f64> {
    photometric_core::<f64>(
        target_image,
        source_image,
        target_depth,
        (1.0, 0.0),
        &PerturbedRelPose::frozen(pose_t_to_s),
        k,
    )
}

/// Core of the geometric loss over generic scalars. Frame `a` is the frame
/// whose pixels are iterated; `rel` maps a-frame coordinates into frame `b`.
pub(super) fn geometric_core<S: Smooth>(
    pseudo_a: &DepthMap,
    affine_a: (S, S),
    pseudo_b: &DepthMap,
    affine_b: (S, S),
    rel: &PerturbedRelPose<S>,
    k: &CameraIntrinsics,
) -> Result<S> {
    let (w, h) = (pseudo_a.width(), pseudo_a.height());
    let mut sum = S::constant(0.0);
    let mut count = 0usize;
    for y in 0..h {
        for x in 0..w {
            if !pseudo_a.is_valid(x, y) {
                continue;
            }
            let d_a = affine_a.0.scale(pseudo_a.depth(x, y)) + affine_a.1;
            if d_a.value() <= 0.0 {
                continue;
            }
            let pa = [
                d_a.scale((x as f64 - k.cx) / k.fx),
                d_a.scale((y as f64 - k.cy) / k.fy),
                d_a,
            ];
            let pb = rel.transform(&pa);
            let z = pb[2];
            if z.value() <= 1e-9 {
                continue;
            }
            let u = (pb[0] / z).scale(k.fx).add_const(k.cx);
            let v = (pb[1] / z).scale(k.fy).add_const(k.cy);
            let (uv, vv) = (u.value(), v.value());
            if !(uv >= 0.0
                && vv >= 0.0
                && uv <= (w - 1) as f64
                && vv <= (h - 1) as f64)
            {
                continue;
            }
            // All four neighbors of the sample must be valid depth.
            let x0 = (uv.floor() as usize).min(w.saturating_sub(2));
            let y0 = (vv.floor() as usize).min(h.saturating_sub(2));
            if !(pseudo_b.is_valid(x0, y0)
                && pseudo_b.is_valid(x0 + 1, y0)
                && pseudo_b.is_valid(x0, y0 + 1)
                && pseudo_b.is_valid(x0 + 1, y0 + 1))
            {
                continue;
            }
            let Some(pseudo_sample) = sample_generic(&pseudo_b.values, u, v) else {
                continue;
            };
            let d_b = affine_b.0 * pseudo_sample + affine_b.1;
            if d_b.value() <= 0.0 {
                continue;
            }
            let term = (z - d_b).abs() / (z + d_b);
            sum = sum + term;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InsufficientOverlap {
            valid_fraction: 0.0,
        });
    }
    Ok(sum.scale(1.0 / count as f64))
}

/// Normalized point-cloud consistency between two metric depth maps:
/// the mean over valid pixels of `|z' − D_j(p')| / (z' + D_j(p'))`, where a
/// pixel of `depth_i` is transported by `pose_i_to_j` (frame-i coordinates to
/// frame-j coordinates), `z'` is its transported depth and `p'` its
/// reprojection. Every per-pixel term lies in `[0, 1)`.
pub fn geometric_loss(
    depth_i: &DepthMap,
    depth_j: &DepthMap,
    pose_i_to_j: &Pose,
    k: &CameraIntrinsics,
) -> Result<f64> {
    geometric_core::<f64>(
        depth_i,
        (1.0, 0.0),
        depth_j,
        (1.0, 0.0),
        &PerturbedRelPose::frozen(pose_i_to_j),
        k,
    )
}

/// Anchor for the affine-depth regression: pixel, metric target depth and
/// weight.
#[derive(Debug, Clone, Copy)]
pub struct Anchor {
    pub pixel: Vector2<f64>,
    pub target_depth: f64,
    pub weight: f64,
}
