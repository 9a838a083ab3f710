//! Weighted regression of per-frame affine depth parameters from sparse
//! anchors, and anchor construction from RANSAC-filtered feature matches.

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::geometry::{bilinear_sample, triangulate_midpoint, CameraIntrinsics, DepthMap, Pose};

use super::loss::Anchor;
use super::AffineDepthParams;

/// Result of the affine-depth regression; `fallback` marks a degenerate
/// design resolved by the weighted-median ratio.
#[derive(Debug, Clone, Copy)]
pub struct LwlrFit {
    pub params: AffineDepthParams,
    pub fallback: bool,
}

/// Weighted least squares of `target = A·pseudo + B` over the anchors.
///
/// Falls back to `A = weighted-median(target/pseudo), B = 0` when the design
/// is numerically rank-deficient or produces a non-positive scale.
pub fn lwlr_fit(pseudo: &DepthMap, anchors: &[Anchor]) -> Result<LwlrFit> {
    if anchors.iter().any(|a| a.weight < 0.0) {
        return Err(Error::InvalidArgument("negative anchor weight".into()));
    }
    // Usable anchors: positive weight, valid pseudo-depth under the sample
    // footprint.
    let mut samples: Vec<(f64, f64, f64)> = Vec::new(); // (pseudo, target, w)
    for a in anchors {
        if a.weight == 0.0 {
            continue;
        }
        let (u, v) = (a.pixel[0], a.pixel[1]);
        let x0 = u.floor().max(0.0) as usize;
        let y0 = v.floor().max(0.0) as usize;
        if x0 + 1 >= pseudo.width() || y0 + 1 >= pseudo.height() {
            continue;
        }
        if !(pseudo.is_valid(x0, y0)
            && pseudo.is_valid(x0 + 1, y0)
            && pseudo.is_valid(x0, y0 + 1)
            && pseudo.is_valid(x0 + 1, y0 + 1))
        {
            continue;
        }
        let Some(p) = bilinear_sample(&pseudo.values, u, v) else {
            continue;
        };
        samples.push((p, a.target_depth, a.weight));
    }

    if samples.len() < 2 {
        return Err(Error::RankDeficient(format!(
            "{} usable anchors, need at least 2",
            samples.len()
        )));
    }
    let spread = samples
        .iter()
        .map(|s| s.0)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    if spread.1 - spread.0 < 1e-12 {
        return Err(Error::RankDeficient(
            "all anchor pseudo-depths equal".into(),
        ));
    }

    let (mut sw, mut sp, mut spp, mut st, mut spt) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(p, t, w) in &samples {
        sw += w;
        sp += w * p;
        spp += w * p * p;
        st += w * t;
        spt += w * p * t;
    }
    if sw <= 0.0 {
        return Err(Error::RankDeficient("all anchor weights zero".into()));
    }
    let det = sw * spp - sp * sp;
    let degenerate = det.abs() < 1e-12 * sw * spp.max(1.0);
    let (a, b) = if degenerate {
        (f64::NAN, f64::NAN)
    } else {
        (
            (sw * spt - sp * st) / det,
            (spp * st - sp * spt) / det,
        )
    };

    if !degenerate && a > 0.0 {
        return Ok(LwlrFit {
            params: AffineDepthParams::new(a, b)?,
            fallback: false,
        });
    }

    // Weighted median of per-anchor ratios.
    let mut ratios: Vec<(f64, f64)> = samples
        .iter()
        .filter(|(p, _, _)| *p > 1e-12)
        .map(|&(p, t, w)| (t / p, w))
        .collect();
    if ratios.is_empty() {
        return Err(Error::RankDeficient("no positive pseudo-depths".into()));
    }
    ratios.sort_by(|x, y| x.0.total_cmp(&y.0));
    let half: f64 = ratios.iter().map(|r| r.1).sum::<f64>() / 2.0;
    let mut acc = 0.0;
    let mut med = ratios[ratios.len() / 2].0;
    for (r, w) in &ratios {
        acc += w;
        if acc >= half {
            med = *r;
            break;
        }
    }
    Ok(LwlrFit {
        params: AffineDepthParams::new(med.max(1e-9), 0.0)?,
        fallback: true,
    })
}

/// Triangulate RANSAC inlier matches into metric depth anchors for both
/// frames of an edge.
///
/// `edge_pose` is the pose of the second frame expressed in the first (the
/// edge measurement); its translation scale fixes the anchor scale. The
/// anchor weight is `confidence · exp(-r²/σ²)` with `r` the worst reprojection
/// residual in pixels. Rays that triangulate behind either camera or with
/// parallax below `min_parallax_rad` are discarded; no surviving anchor is an
/// error.
pub fn anchor_from_matches(
    inliers: &[(Vector2<f64>, Vector2<f64>)],
    edge_pose: &Pose,
    k: &CameraIntrinsics,
    confidence: f64,
    min_parallax_rad: f64,
) -> Result<(Vec<Anchor>, Vec<Anchor>)> {
    let mut anchors_i = Vec::new();
    let mut anchors_j = Vec::new();
    let inv = edge_pose.inverse();
    const SIGMA_PX: f64 = 1.0;
    for (pi, pj) in inliers {
        let xi = k.normalize(pi[0], pi[1]);
        let xj = k.normalize(pj[0], pj[1]);
        let Some((point_i, _angle)) = triangulate_midpoint(&xi, &xj, edge_pose, min_parallax_rad)
        else {
            continue;
        };
        let point_j = inv.transform_point(&point_i);
        if point_i[2] <= 0.0 || point_j[2] <= 0.0 {
            continue;
        }
        let (Some(proj_i), Some(proj_j)) = (k.project(&point_i), k.project(&point_j)) else {
            continue;
        };
        let residual = (proj_i - pi).norm().max((proj_j - pj).norm());
        let weight = confidence * (-(residual * residual) / (SIGMA_PX * SIGMA_PX)).exp();
        anchors_i.push(Anchor {
            pixel: *pi,
            target_depth: point_i[2],
            weight,
        });
        anchors_j.push(Anchor {
            pixel: *pj,
            target_depth: point_j[2],
            weight,
        });
    }
    if anchors_i.is_empty() {
        return Err(Error::NoAnchors);
    }
    Ok((anchors_i, anchors_j))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Grid;
    use nalgebra::Vector3;

    fn flat_pseudo(w: usize, h: usize) -> DepthMap {
        // Varied pseudo-depths so the design has spread.
        DepthMap::dense(Grid::from_fn(w, h, |x, y| {
            2.0 + 0.01 * x as f64 + 0.02 * y as f64
        }))
    }

    fn anchors_from_affine(pseudo: &DepthMap, a: f64, b: f64, n: usize) -> Vec<Anchor> {
        (0..n)
            .map(|i| {
                let x = (i * 7) % (pseudo.width() - 1);
                let y = (i * 5) % (pseudo.height() - 1);
                Anchor {
                    pixel: Vector2::new(x as f64, y as f64),
                    target_depth: a * pseudo.depth(x, y) + b,
                    weight: 1.0,
                }
            })
            .collect()
    }

    // Oracle: anchors generated from target = 2·pseudo + 0.5 recover (2, 0.5).
    #[test]
    fn exact_affine_recovery() {
        let pseudo = flat_pseudo(32, 24);
        let anchors = anchors_from_affine(&pseudo, 2.0, 0.5, 40);
        let fit = lwlr_fit(&pseudo, &anchors).unwrap();
        assert!(!fit.fallback);
        assert!((fit.params.a - 2.0).abs() < 1e-9);
        assert!((fit.params.b - 0.5).abs() < 1e-9);
    }

    #[test]
    fn identity_when_pseudo_equals_target() {
        let pseudo = flat_pseudo(32, 24);
        let anchors = anchors_from_affine(&pseudo, 1.0, 0.0, 30);
        let fit = lwlr_fit(&pseudo, &anchors).unwrap();
        assert!((fit.params.a - 1.0).abs() < 1e-9);
        assert!(fit.params.b.abs() < 1e-9);
    }

    #[test]
    fn zero_weight_anchors_excluded() {
        let pseudo = flat_pseudo(32, 24);
        let mut anchors = anchors_from_affine(&pseudo, 2.0, 0.5, 40);
        // Corrupt 20% of targets but zero their weights.
        for a in anchors.iter_mut().take(8) {
            a.target_depth = 99.0;
            a.weight = 0.0;
        }
        let fit = lwlr_fit(&pseudo, &anchors).unwrap();
        assert!((fit.params.a - 2.0).abs() < 1e-9);
        assert!((fit.params.b - 0.5).abs() < 1e-9);
    }

    #[test]
    fn rank_deficient_errors() {
        let pseudo = flat_pseudo(32, 24);
        let one = anchors_from_affine(&pseudo, 2.0, 0.5, 1);
        assert!(matches!(
            lwlr_fit(&pseudo, &one),
            Err(Error::RankDeficient(_))
        ));

        // All-equal pseudo values (same pixel repeated).
        let same: Vec<Anchor> = (0..5)
            .map(|_| Anchor {
                pixel: Vector2::new(3.0, 3.0),
                target_depth: 4.0,
                weight: 1.0,
            })
            .collect();
        assert!(matches!(
            lwlr_fit(&pseudo, &same),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn negative_scale_falls_back_to_median_ratio() {
        let pseudo = flat_pseudo(32, 24);
        // Targets anti-correlated with pseudo: LS slope is negative.
        let anchors: Vec<Anchor> = (0..20)
            .map(|i| {
                let x = (i * 7) % 31;
                let y = (i * 5) % 23;
                Anchor {
                    pixel: Vector2::new(x as f64, y as f64),
                    target_depth: 10.0 - 2.0 * pseudo.depth(x, y),
                    weight: 1.0,
                }
            })
            .collect();
        let fit = lwlr_fit(&pseudo, &anchors).unwrap();
        assert!(fit.fallback);
        assert!(fit.params.a > 0.0);
        assert_eq!(fit.params.b, 0.0);
    }

    // Oracle: noiseless triangulation reproduces the generating depths.
    #[test]
    fn triangulation_matches_true_depths() {
        let k = CameraIntrinsics::new(80.0, 80.0, 32.0, 24.0, 64, 48).unwrap();
        let edge = Pose::from_axis_angle(
            Vector3::new(0.0, 0.02, 0.0),
            Vector3::new(0.3, 0.0, 0.05),
        );
        let mut matches = Vec::new();
        let mut true_depths = Vec::new();
        for gx in 0..8 {
            for gy in 0..6 {
                let p_i = Vector3::new(
                    (gx as f64 - 3.5) * 0.8,
                    (gy as f64 - 2.5) * 0.6,
                    5.0 + 0.3 * gx as f64,
                );
                let p_j = edge.inverse().transform_point(&p_i);
                let (Some(px_i), Some(px_j)) = (k.project(&p_i), k.project(&p_j)) else {
                    continue;
                };
                matches.push((px_i, px_j));
                true_depths.push((p_i[2], p_j[2]));
            }
        }
        let (ai, aj) = anchor_from_matches(&matches, &edge, &k, 1.0, 1e-5).unwrap();
        assert_eq!(ai.len(), matches.len());
        for ((a_i, a_j), (d_i, d_j)) in ai.iter().zip(&aj).zip(&true_depths) {
            assert!((a_i.target_depth - d_i).abs() < 1e-6);
            assert!((a_j.target_depth - d_j).abs() < 1e-6);
            assert!(a_i.weight > 0.99);
        }
    }

    #[test]
    fn parallel_rays_discarded_and_empty_errors() {
        let k = CameraIntrinsics::new(80.0, 80.0, 32.0, 24.0, 64, 48).unwrap();
        // Zero baseline: every pair triangulates with no parallax.
        let edge = Pose::identity();
        let matches = vec![(Vector2::new(30.0, 20.0), Vector2::new(30.0, 20.0)); 4];
        assert!(matches!(
            anchor_from_matches(&matches, &edge, &k, 1.0, 1e-5),
            Err(Error::NoAnchors)
        ));
    }

    #[test]
    fn behind_camera_anchors_rejected() {
        let k = CameraIntrinsics::new(80.0, 80.0, 32.0, 24.0, 64, 48).unwrap();
        // Construct a match pair whose rays intersect behind the cameras:
        // crossing rays with a lateral baseline.
        let edge = Pose::new(
            nalgebra::UnitQuaternion::identity(),
            Vector3::new(1.0, 0.0, 0.0),
        );
        // Diverging rays: the closest approach lies behind both cameras.
        let matches = vec![(Vector2::new(10.0, 24.0), Vector2::new(60.0, 24.0))];
        let r = anchor_from_matches(&matches, &edge, &k, 1.0, 1e-5);
        assert!(matches!(r, Err(Error::NoAnchors)));
    }
}
