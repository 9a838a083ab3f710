//! The mixture-of-experts pose-decoder bank.
//!
//! One geometric decoder (five-point RANSAC) and a set of parametric
//! regressors specialized per motion regime. The geometric branch recovers
//! rotation and a unit translation direction; its metric scale is fused in
//! from the best-confidence parametric candidate. Indicator-weighted
//! selection routes each edge to one decoder (hard assignment) or blends all
//! decoders (soft weights, used only inside relaxed-gradient evaluation).

mod five_point;

pub use five_point::{
    essential_minimal, five_point_ransac, sampson_distance, FivePointResult, RansacConfig,
};

use nalgebra::{DMatrix, DVector, Quaternion, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::rng::Stream;

/// One decoder's ego-motion output.
///
/// `rotation` and `t_norm` describe the pose of the later frame expressed in
/// the earlier frame; `t_norm` is unit (or zero for a no-translation
/// estimate). `scale` is absent for the pure-geometric branch.
#[derive(Debug, Clone)]
pub struct EgoMotionCandidate {
    pub rotation: UnitQuaternion<f64>,
    pub t_norm: Vector3<f64>,
    pub scale: Option<f64>,
    pub confidence: f64,
}

impl EgoMotionCandidate {
    /// Metric relative pose; `None` when no scale is attached to a nonzero
    /// translation direction.
    pub fn to_pose(&self) -> Option<Pose> {
        let t_mag = self.t_norm.norm();
        match self.scale {
            Some(s) => Some(Pose::new(self.rotation, self.t_norm * s)),
            None if t_mag == 0.0 => Some(Pose::new(self.rotation, Vector3::zeros())),
            None => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    Geometric,
    Parametric,
}

/// One decoder of the bank. Parametric decoders hold a flat parameter vector
/// of an affine regressor (see [`parametric_decode`]); the geometric decoder
/// has no parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecoderSpec {
    pub id: usize,
    pub kind: DecoderKind,
    pub regime_tag: String,
    pub params: Vec<f64>,
}

/// Number of regression outputs: axis-angle (3), translation (3), log-scale,
/// confidence.
const DECODE_OUTPUTS: usize = 8;

/// Parameter count of a parametric decoder over feature dimension `dim` per
/// frame: an 8 x (2*dim) weight matrix plus 8 biases, row-major.
pub fn parametric_param_len(feature_dim: usize) -> usize {
    DECODE_OUTPUTS * (2 * feature_dim + 1)
}

/// An immutable, validated decoder bank: contiguous ids starting at 0 and
/// exactly one geometric decoder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecoderBank {
    decoders: Vec<DecoderSpec>,
}

impl DecoderBank {
    pub fn new(decoders: Vec<DecoderSpec>) -> Result<Self> {
        if decoders.is_empty() {
            return Err(Error::InvalidArgument("empty decoder bank".into()));
        }
        for (i, d) in decoders.iter().enumerate() {
            if d.id != i {
                return Err(Error::InvalidArgument(format!(
                    "decoder ids must be contiguous from 0; slot {i} has id {}",
                    d.id
                )));
            }
        }
        let n_geo = decoders
            .iter()
            .filter(|d| d.kind == DecoderKind::Geometric)
            .count();
        if n_geo != 1 {
            return Err(Error::InvalidArgument(format!(
                "bank must contain exactly one geometric decoder, found {n_geo}"
            )));
        }
        Ok(DecoderBank { decoders })
    }

    pub fn len(&self) -> usize {
        self.decoders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decoders.is_empty()
    }

    pub fn decoders(&self) -> &[DecoderSpec] {
        &self.decoders
    }

    pub fn geometric_id(&self) -> usize {
        self.decoders
            .iter()
            .position(|d| d.kind == DecoderKind::Geometric)
            .expect("validated at construction")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::BadFile {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        std::fs::write(path, text).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let bank: DecoderBank = serde_json::from_str(&text).map_err(|e| Error::BadFile {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        DecoderBank::new(bank.decoders)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Deterministic affine regression of an ego-motion candidate from the
/// concatenated per-frame features.
///
/// Output layout: axis-angle rotation, raw translation vector (normalized
/// into `t_norm`), log-scale, confidence (through softplus).
pub fn parametric_decode(
    spec: &DecoderSpec,
    features_i: &[f64],
    features_j: &[f64],
) -> Result<EgoMotionCandidate> {
    if spec.kind != DecoderKind::Parametric {
        return Err(Error::InvalidArgument(format!(
            "decoder {} is not parametric",
            spec.id
        )));
    }
    if features_i.len() != features_j.len() {
        return Err(Error::DimensionMismatch(format!(
            "feature dims {} vs {}",
            features_i.len(),
            features_j.len()
        )));
    }
    let dim = features_i.len();
    let expected = parametric_param_len(dim);
    if spec.params.len() != expected {
        return Err(Error::DimensionMismatch(format!(
            "decoder {} has {} params, feature dim {dim} needs {expected}",
            spec.id,
            spec.params.len()
        )));
    }
    let input_len = 2 * dim + 1;
    let mut y = [0.0f64; DECODE_OUTPUTS];
    for (row, out) in y.iter_mut().enumerate() {
        let w = &spec.params[row * input_len..(row + 1) * input_len];
        let mut acc = w[2 * dim]; // bias
        for (c, f) in features_i.iter().enumerate() {
            acc += w[c] * f;
        }
        for (c, f) in features_j.iter().enumerate() {
            acc += w[dim + c] * f;
        }
        *out = acc;
    }
    let rotation = UnitQuaternion::from_scaled_axis(Vector3::new(y[0], y[1], y[2]));
    let v = Vector3::new(y[3], y[4], y[5]);
    let t_norm = if v.norm() > 1e-12 {
        v.normalize()
    } else {
        Vector3::zeros()
    };
    Ok(EgoMotionCandidate {
        rotation,
        t_norm,
        scale: Some(y[6].clamp(-30.0, 30.0).exp()),
        confidence: softplus(y[7]),
    })
}

/// Attach the learned branch's scale to a geometric candidate.
pub fn fuse_scale(
    geo: &EgoMotionCandidate,
    learned: &EgoMotionCandidate,
) -> Result<EgoMotionCandidate> {
    if geo.scale.is_some() {
        return Err(Error::InvalidArgument(
            "geometric candidate already carries a scale".into(),
        ));
    }
    let Some(scale) = learned.scale else {
        return Err(Error::NoScaleSource);
    };
    Ok(EgoMotionCandidate {
        rotation: geo.rotation,
        t_norm: geo.t_norm,
        scale: Some(scale),
        confidence: geo.confidence,
    })
}

/// Inputs the geometric decoder needs when it is selected.
pub struct GeometricContext<'a> {
    pub matches: &'a [(Vector2<f64>, Vector2<f64>)],
    pub intrinsics: &'a crate::geometry::CameraIntrinsics,
    pub ransac: &'a RansacConfig,
}

/// Outcome of indicator-weighted decoder selection.
#[derive(Debug, Clone)]
pub struct MoeOutcome {
    pub pose: Pose,
    /// Decoder that produced the pose (hard selection), or `None` for a soft
    /// blend.
    pub chosen: Option<usize>,
    /// Set when a selected geometric decoder failed and the highest-weight
    /// parametric decoder answered instead.
    pub geometric_fallback: bool,
    /// The geometric inlier set when the geometric branch ran successfully.
    pub inliers: Option<Vec<usize>>,
}

/// Indicator-weighted decoder selection (the Θ semantics).
///
/// A hard one-hot assignment returns exactly the selected decoder's pose: a
/// parametric decoder's pose bit-identically, the geometric decoder routed
/// through [`fuse_scale`] with the highest-confidence parametric scale
/// (ties broken by lowest decoder id). Soft weights blend rotations by a
/// sign-aligned weighted quaternion average and translations linearly. A
/// degenerate geometric selection falls back to the highest-weight parametric
/// decoder and flags the event.
pub fn moe_select(
    bank: &DecoderBank,
    assignment: &[f64],
    features_i: &[f64],
    features_j: &[f64],
    geo: &GeometricContext,
    rng: &mut Stream,
) -> Result<MoeOutcome> {
    if assignment.len() != bank.len() {
        return Err(Error::DimensionMismatch(format!(
            "assignment over {} decoders, bank holds {}",
            assignment.len(),
            bank.len()
        )));
    }
    if assignment.iter().any(|&w| w < 0.0) {
        return Err(Error::InvalidArgument("negative selection weight".into()));
    }
    let sum: f64 = assignment.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "selection weights sum to {sum}, expected 1"
        )));
    }

    let parametric_candidates = |bank: &DecoderBank| -> Result<Vec<(usize, EgoMotionCandidate)>> {
        bank.decoders()
            .iter()
            .filter(|d| d.kind == DecoderKind::Parametric)
            .map(|d| Ok((d.id, parametric_decode(d, features_i, features_j)?)))
            .collect()
    };

    let geometric_pose = |rng: &mut Stream| -> Result<(Pose, Vec<usize>)> {
        let result = five_point_ransac(geo.matches, geo.intrinsics, geo.ransac, rng)?;
        let params = parametric_candidates(bank)?;
        // Highest confidence wins the scale; ties break to the lowest id.
        let best = params
            .iter()
            .max_by(|a, b| {
                a.1.confidence
                    .partial_cmp(&b.1.confidence)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(b.0.cmp(&a.0))
            })
            .ok_or(Error::NoScaleSource)?;
        let fused = fuse_scale(&result.candidate, &best.1)?;
        let pose = fused.to_pose().ok_or(Error::NoScaleSource)?;
        Ok((pose, result.inliers))
    };

    // Hard one-hot: exactly one nonzero weight.
    let nonzero: Vec<usize> = assignment
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(i, _)| i)
        .collect();
    if nonzero.len() == 1 {
        let id = nonzero[0];
        let spec = &bank.decoders()[id];
        match spec.kind {
            DecoderKind::Parametric => {
                let cand = parametric_decode(spec, features_i, features_j)?;
                let pose = cand.to_pose().ok_or(Error::NoScaleSource)?;
                return Ok(MoeOutcome {
                    pose,
                    chosen: Some(id),
                    geometric_fallback: false,
                    inliers: None,
                });
            }
            DecoderKind::Geometric => match geometric_pose(rng) {
                Ok((pose, inliers)) => {
                    return Ok(MoeOutcome {
                        pose,
                        chosen: Some(id),
                        geometric_fallback: false,
                        inliers: Some(inliers),
                    });
                }
                Err(Error::DegenerateGeometry(_)) | Err(Error::InsufficientMatches { .. }) => {
                    // Fall back to the highest-weight parametric decoder;
                    // with a one-hot geometric assignment that is the best
                    // parametric candidate by confidence.
                    let params = parametric_candidates(bank)?;
                    let best = params
                        .iter()
                        .max_by(|a, b| {
                            a.1.confidence
                                .partial_cmp(&b.1.confidence)
                                .unwrap_or(std::cmp::Ordering::Equal)
                                .then(b.0.cmp(&a.0))
                        })
                        .ok_or(Error::NoScaleSource)?;
                    let pose = best.1.to_pose().ok_or(Error::NoScaleSource)?;
                    return Ok(MoeOutcome {
                        pose,
                        chosen: Some(best.0),
                        geometric_fallback: true,
                        inliers: None,
                    });
                }
                Err(e) => return Err(e),
            },
        }
    }

    // Soft weights: evaluate every decoder with positive weight and blend.
    let mut poses: Vec<(f64, Pose)> = Vec::new();
    let mut fallback = false;
    let mut inliers = None;
    for &id in &nonzero {
        let spec = &bank.decoders()[id];
        let pose = match spec.kind {
            DecoderKind::Parametric => parametric_decode(spec, features_i, features_j)?
                .to_pose()
                .ok_or(Error::NoScaleSource)?,
            DecoderKind::Geometric => match geometric_pose(rng) {
                Ok((pose, inl)) => {
                    inliers = Some(inl);
                    pose
                }
                Err(Error::DegenerateGeometry(_)) | Err(Error::InsufficientMatches { .. }) => {
                    fallback = true;
                    continue;
                }
                Err(e) => return Err(e),
            },
        };
        poses.push((assignment[id], pose));
    }
    if poses.is_empty() {
        return Err(Error::DegenerateGeometry(
            "no decoder produced a pose".into(),
        ));
    }
    let wsum: f64 = poses.iter().map(|(w, _)| w).sum();

    // Sign-aligned weighted quaternion average.
    let reference = poses[0].1.rotation.into_inner();
    let mut q_acc = Quaternion::new(0.0, 0.0, 0.0, 0.0);
    let mut t_acc = Vector3::zeros();
    for (w, pose) in &poses {
        let mut q = pose.rotation.into_inner();
        if q.coords.dot(&reference.coords) < 0.0 {
            q = -q;
        }
        q_acc += q * (*w / wsum);
        t_acc += pose.translation * (*w / wsum);
    }
    let rotation = UnitQuaternion::new_normalize(q_acc);
    Ok(MoeOutcome {
        pose: Pose::new(rotation, t_acc),
        chosen: None,
        geometric_fallback: fallback,
        inliers,
    })
}

/// One supervised sample for decoder fitting.
#[derive(Debug, Clone)]
pub struct FitSample {
    pub features_i: Vec<f64>,
    pub features_j: Vec<f64>,
    /// True relative pose (pose of frame j in frame i).
    pub relative: Pose,
}

/// Least-squares fit of a parametric decoder on (feature pair, ego-motion)
/// samples; ridge-regularized normal equations per output row.
pub fn fit_parametric_decoder(
    samples: &[FitSample],
    id: usize,
    regime_tag: &str,
    ridge: f64,
) -> Result<DecoderSpec> {
    let Some(first) = samples.first() else {
        return Err(Error::InvalidArgument("no samples".into()));
    };
    let dim = first.features_i.len();
    let input_len = 2 * dim + 1;
    let n = samples.len();
    if n < input_len {
        return Err(Error::RankDeficient(format!(
            "{n} samples for {input_len} unknowns per output"
        )));
    }

    let mut x = DMatrix::<f64>::zeros(n, input_len);
    let mut targets = DMatrix::<f64>::zeros(n, DECODE_OUTPUTS);
    for (r, s) in samples.iter().enumerate() {
        for (c, f) in s.features_i.iter().enumerate() {
            x[(r, c)] = *f;
        }
        for (c, f) in s.features_j.iter().enumerate() {
            x[(r, dim + c)] = *f;
        }
        x[(r, 2 * dim)] = 1.0;

        let omega = s.relative.rotation.scaled_axis();
        let t = s.relative.translation;
        let t_norm = t.norm();
        let dir = if t_norm > 1e-12 {
            t / t_norm
        } else {
            Vector3::zeros()
        };
        let row = [
            omega[0],
            omega[1],
            omega[2],
            dir[0],
            dir[1],
            dir[2],
            t_norm.max(1e-9).ln(),
            // softplus(1.0) target: full confidence out of the box
            (std::f64::consts::E - 1.0f64).ln(),
        ];
        for (c, v) in row.iter().enumerate() {
            targets[(r, c)] = *v;
        }
    }

    let xtx = x.transpose() * &x + DMatrix::identity(input_len, input_len) * ridge;
    let chol = xtx
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("normal equations not positive definite".into()))?;
    let mut params = vec![0.0; DECODE_OUTPUTS * input_len];
    for out in 0..DECODE_OUTPUTS {
        let xty = x.transpose() * targets.column(out);
        let w: DVector<f64> = chol.solve(&xty);
        for c in 0..input_len {
            params[out * input_len + c] = w[c];
        }
    }
    Ok(DecoderSpec {
        id,
        kind: DecoderKind::Parametric,
        regime_tag: regime_tag.to_string(),
        params,
    })
}
