//! Sliding-window scale-agnostic bundle adjustment.
//!
//! One window holds K frames, a sampled edge set with initial relative-pose
//! measurements, K pose variables and K per-frame affine depth parameters.
//! [`optimize_window`] minimizes `Σ_(i,j)∈Φ (α·L_photo + β·L_geo)` by
//! first-order descent with backtracking line search; pose updates live on
//! the manifold through a right-multiplicative retraction and gradients come
//! from 16-lane dual numbers per edge (two pose tangents plus the two affine
//! pairs). The first window pose is gauge-fixed.

mod dual;
mod loss;
mod lwlr;

pub use dual::{Dual, PerturbedRelPose, Smooth};
pub use loss::{geometric_loss, photometric_loss, Anchor};
pub use lwlr::{anchor_from_matches, lwlr_fit, LwlrFit};

use nalgebra::Vector6;

use crate::error::{Error, Result};
use crate::gating::CorrelationGraph;
use crate::geometry::{CameraIntrinsics, DepthMap, Grid, Pose};

/// Per-frame affine map from pseudo-depth to working metric depth:
/// `D = a·D̂ + b` with `a > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineDepthParams {
    pub a: f64,
    pub b: f64,
}

impl AffineDepthParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if a <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "affine depth scale must be positive, got {a}"
            )));
        }
        Ok(AffineDepthParams { a, b })
    }

    pub fn identity() -> Self {
        AffineDepthParams { a: 1.0, b: 0.0 }
    }
}

/// Image and pseudo-depth of one window frame.
#[derive(Debug, Clone)]
pub struct WindowFrame {
    pub image: Grid,
    pub pseudo_depth: DepthMap,
}

/// A sliding-window bundle-adjustment problem.
#[derive(Debug, Clone)]
pub struct WindowProblem {
    pub camera: CameraIntrinsics,
    pub frames: Vec<WindowFrame>,
    /// Sampled edge set; every edge must carry an initial measurement.
    pub graph: CorrelationGraph,
    /// Initial pose variables (pose of frame k in the window's base frame).
    pub poses: Vec<Pose>,
    pub affine: Vec<AffineDepthParams>,
    pub alpha: f64,
    pub beta: f64,
    pub iterations: usize,
}

impl WindowProblem {
    fn validate(&self) -> Result<()> {
        let k = self.frames.len();
        if k < 2 {
            return Err(Error::InvalidArgument("window needs >= 2 frames".into()));
        }
        if self.graph.window_len != k || self.poses.len() != k || self.affine.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "window of {k} frames with {} graph nodes, {} poses, {} affine entries",
                self.graph.window_len,
                self.poses.len(),
                self.affine.len()
            )));
        }
        if !self.graph.is_connected() {
            return Err(Error::InvalidArgument("window graph not connected".into()));
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::InvalidArgument("loss weights must be >= 0".into()));
        }
        if self.graph.edges.iter().any(|e| e.measurement.is_none()) {
            return Err(Error::InvalidArgument(
                "every window edge needs an initial measurement".into(),
            ));
        }
        Ok(())
    }
}

/// How the window optimizer takes its steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WindowOptimizer {
    /// Gradient descent with backtracking line search: the loss trace is
    /// nonincreasing over accepted steps.
    #[default]
    GradientDescent,
    /// Adam with fixed step size; no monotonicity contract.
    Adam,
}

/// Step-schedule configuration for [`optimize_window`].
#[derive(Debug, Clone)]
pub struct WindowSchedule {
    pub optimizer: WindowOptimizer,
    /// Initial trial step length for the line search.
    pub step0: f64,
    /// Adam learning rate (used by [`WindowOptimizer::Adam`]).
    pub adam_lr: f64,
    /// Stop when the gradient infinity norm falls below this.
    pub grad_tol: f64,
}

impl Default for WindowSchedule {
    fn default() -> Self {
        WindowSchedule {
            optimizer: WindowOptimizer::GradientDescent,
            step0: 1e-2,
            adam_lr: 1e-4,
            grad_tol: 1e-6,
        }
    }
}

/// Output of a window refinement.
#[derive(Debug, Clone)]
pub struct WindowSolution {
    pub poses: Vec<Pose>,
    pub affine: Vec<AffineDepthParams>,
    /// Loss after initialization and after every accepted step.
    pub trace: Vec<f64>,
    /// Set when no step was ever accepted within the budget.
    pub no_progress: bool,
    /// Edges dropped for insufficient warp overlap.
    pub dropped_edges: Vec<(usize, usize)>,
    /// Final gradient infinity norm.
    pub grad_norm: f64,
}

const LANES: usize = 16;

struct EdgeTask {
    i: usize,
    j: usize,
}

/// Evaluate the total window loss at the given variables (f64 path).
fn total_loss(
    problem: &WindowProblem,
    edges: &[EdgeTask],
    poses: &[Pose],
    affine: &[AffineDepthParams],
) -> Result<f64> {
    let k_cam = &problem.camera;
    let mut total = 0.0;
    for e in edges {
        let (i, j) = (e.i, e.j);
        let rel = poses[i].between(&poses[j]); // maps j-coords -> i-coords
        if problem.alpha > 0.0 {
            let metric_j = (affine[j].a, affine[j].b);
            total += problem.alpha
                * loss::photometric_core::<f64>(
                    &problem.frames[j].image,
                    &problem.frames[i].image,
                    &problem.frames[j].pseudo_depth,
                    metric_j,
                    &PerturbedRelPose::frozen(&rel),
                    k_cam,
                )?;
        }
        if problem.beta > 0.0 {
            total += problem.beta
                * loss::geometric_core::<f64>(
                    &problem.frames[j].pseudo_depth,
                    (affine[j].a, affine[j].b),
                    &problem.frames[i].pseudo_depth,
                    (affine[i].a, affine[i].b),
                    &PerturbedRelPose::frozen(&rel),
                    k_cam,
                )?;
        }
    }
    Ok(total)
}

/// Gradient of the total loss with respect to the stacked parameters:
/// 6 tangent coordinates per non-gauge pose followed by (a, b) per frame.
fn total_gradient(
    problem: &WindowProblem,
    edges: &[EdgeTask],
    poses: &[Pose],
    affine: &[AffineDepthParams],
) -> Result<Vec<f64>> {
    let k = poses.len();
    let n_params = 6 * (k - 1) + 2 * k;
    let mut grad = vec![0.0; n_params];
    let k_cam = &problem.camera;

    for e in edges {
        let (i, j) = (e.i, e.j);
        let rel = poses[i].between(&poses[j]);
        // Lane layout: 0..5 pose_i tangent, 6..11 pose_j tangent,
        // 12 a_i, 13 b_i, 14 a_j, 15 b_j.
        let mut pert = PerturbedRelPose::<Dual<LANES>>::frozen(&rel);
        for a in 0..3 {
            pert.left_rot[a] = Dual::seeded(0.0, a);
            pert.left_trans[a] = Dual::seeded(0.0, 3 + a);
            pert.right_rot[a] = Dual::seeded(0.0, 6 + a);
            pert.right_trans[a] = Dual::seeded(0.0, 9 + a);
        }
        let affine_i = (
            Dual::<LANES>::seeded(affine[i].a, 12),
            Dual::<LANES>::seeded(affine[i].b, 13),
        );
        let affine_j = (
            Dual::<LANES>::seeded(affine[j].a, 14),
            Dual::<LANES>::seeded(affine[j].b, 15),
        );

        let mut edge_grad = [0.0; LANES];
        if problem.alpha > 0.0 {
            let photo = loss::photometric_core(
                &problem.frames[j].image,
                &problem.frames[i].image,
                &problem.frames[j].pseudo_depth,
                affine_j,
                &pert,
                k_cam,
            )?;
            for (g, p) in edge_grad.iter_mut().zip(&photo.g) {
                *g += problem.alpha * p;
            }
        }
        if problem.beta > 0.0 {
            let geo = loss::geometric_core(
                &problem.frames[j].pseudo_depth,
                affine_j,
                &problem.frames[i].pseudo_depth,
                affine_i,
                &pert,
                k_cam,
            )?;
            for (g, p) in edge_grad.iter_mut().zip(&geo.g) {
                *g += problem.beta * p;
            }
        }

        // Scatter: pose 0 is gauge-fixed.
        if i > 0 {
            for a in 0..6 {
                grad[6 * (i - 1) + a] += edge_grad[a];
            }
        }
        if j > 0 {
            for a in 0..6 {
                grad[6 * (j - 1) + a] += edge_grad[6 + a];
            }
        }
        let affine_base = 6 * (k - 1);
        grad[affine_base + 2 * i] += edge_grad[12];
        grad[affine_base + 2 * i + 1] += edge_grad[13];
        grad[affine_base + 2 * j] += edge_grad[14];
        grad[affine_base + 2 * j + 1] += edge_grad[15];
    }
    Ok(grad)
}

fn apply_step(
    poses: &[Pose],
    affine: &[AffineDepthParams],
    direction: &[f64],
    step: f64,
) -> Option<(Vec<Pose>, Vec<AffineDepthParams>)> {
    let k = poses.len();
    let mut new_poses = Vec::with_capacity(k);
    new_poses.push(poses[0]);
    for i in 1..k {
        let base = 6 * (i - 1);
        let delta = Vector6::from_fn(|r, _| step * direction[base + r]);
        new_poses.push(poses[i].retract(&delta));
    }
    let affine_base = 6 * (k - 1);
    let mut new_affine = Vec::with_capacity(k);
    for i in 0..k {
        let a = affine[i].a + step * direction[affine_base + 2 * i];
        let b = affine[i].b + step * direction[affine_base + 2 * i + 1];
        if a <= 1e-9 {
            return None;
        }
        new_affine.push(AffineDepthParams { a, b });
    }
    Some((new_poses, new_affine))
}

fn usable_edges(problem: &WindowProblem) -> Result<(Vec<EdgeTask>, Vec<(usize, usize)>)> {
    let mut edges = Vec::new();
    let mut dropped = Vec::new();
    for e in &problem.graph.edges {
        let task = EdgeTask { i: e.i, j: e.j };
        match total_loss(
            problem,
            std::slice::from_ref(&task),
            &problem.poses,
            &problem.affine,
        ) {
            Ok(_) => edges.push(task),
            Err(Error::InsufficientOverlap { .. }) => dropped.push((e.i, e.j)),
            Err(err) => return Err(err),
        }
    }
    if edges.is_empty() {
        return Err(Error::InsufficientOverlap {
            valid_fraction: 0.0,
        });
    }
    Ok((edges, dropped))
}

/// Total window loss `Σ_(i,j)∈Φ (α·L_photo + β·L_geo)` at the problem's
/// current variables. Edges with insufficient overlap are excluded.
pub fn window_loss(problem: &WindowProblem) -> Result<f64> {
    problem.validate()?;
    let (edges, _) = usable_edges(problem)?;
    total_loss(problem, &edges, &problem.poses, &problem.affine)
}

/// Analytic gradient of [`window_loss`] with respect to the stacked
/// parameters: 6 right-tangent coordinates per pose except the gauge-fixed
/// first, followed by `(a, b)` per frame.
pub fn window_gradient(problem: &WindowProblem) -> Result<Vec<f64>> {
    problem.validate()?;
    let (edges, _) = usable_edges(problem)?;
    total_gradient(problem, &edges, &problem.poses, &problem.affine)
}

/// Refine window poses and affine depth parameters.
///
/// Edges whose photometric loss reports insufficient overlap at the
/// initializer are dropped from the objective and listed in the solution.
/// With the gradient-descent schedule the returned trace is nonincreasing;
/// when the budget is exhausted without a single accepted step the
/// initializer is returned with `no_progress` set.
pub fn optimize_window(
    problem: &WindowProblem,
    schedule: &WindowSchedule,
) -> Result<WindowSolution> {
    problem.validate()?;
    let k = problem.frames.len();
    let (edges, dropped) = usable_edges(problem)?;

    let mut poses = problem.poses.clone();
    let mut affine = problem.affine.clone();
    let mut loss = total_loss(problem, &edges, &poses, &affine)?;
    let mut trace = vec![loss];
    let mut accepted_any = false;
    let mut step = schedule.step0;
    let mut grad_norm = f64::INFINITY;

    match schedule.optimizer {
        WindowOptimizer::GradientDescent => {
            // Polak-Ribière conjugate directions with restart to steepest
            // descent whenever conjugacy stops producing a descent direction.
            let mut prev_grad: Option<Vec<f64>> = None;
            let mut direction: Vec<f64> = Vec::new();
            for _ in 0..problem.iterations {
                let grad = total_gradient(problem, &edges, &poses, &affine)?;
                grad_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
                if grad_norm < schedule.grad_tol {
                    break;
                }
                let beta_pr = match &prev_grad {
                    Some(pg) => {
                        let num: f64 = grad.iter().zip(pg).map(|(g, p)| g * (g - p)).sum();
                        let den: f64 = pg.iter().map(|p| p * p).sum();
                        (num / den.max(1e-300)).max(0.0)
                    }
                    None => 0.0,
                };
                if direction.is_empty() {
                    direction = grad.iter().map(|g| -g).collect();
                } else {
                    for (d, g) in direction.iter_mut().zip(&grad) {
                        *d = -g + beta_pr * *d;
                    }
                }
                let mut g_dot_d: f64 = grad.iter().zip(&direction).map(|(g, d)| g * d).sum();
                if g_dot_d >= 0.0 {
                    direction = grad.iter().map(|g| -g).collect();
                    g_dot_d = -grad.iter().map(|g| g * g).sum::<f64>();
                }
                prev_grad = Some(grad);

                let mut accepted = false;
                let mut s = step;
                for _ in 0..30 {
                    if let Some((p_new, a_new)) = apply_step(&poses, &affine, &direction, s) {
                        match total_loss(problem, &edges, &p_new, &a_new) {
                            Ok(l_new) if l_new <= loss + 1e-4 * s * g_dot_d => {
                                poses = p_new;
                                affine = a_new;
                                loss = l_new;
                                trace.push(loss);
                                accepted = true;
                                accepted_any = true;
                                // Be a little adventurous next time.
                                step = (s * 2.0).min(1e3);
                                break;
                            }
                            Ok(_) | Err(Error::InsufficientOverlap { .. }) => {}
                            Err(err) => return Err(err),
                        }
                    }
                    s *= 0.5;
                }
                if !accepted {
                    break;
                }
            }
        }
        WindowOptimizer::Adam => {
            let n = 6 * (k - 1) + 2 * k;
            let (mut m, mut vyar) = (vec![0.0; n], vec![0.0; n]);
            let (b1, b2, eps) = (0.9, 0.999, 1e-8);
            for t in 1..=problem.iterations {
                let grad = total_gradient(problem, &edges, &poses, &affine)?;
                grad_norm = grad.iter().fold(0.0f64, |mx, g| mx.max(g.abs()));
                if grad_norm < schedule.grad_tol {
                    break;
                }
                let mut direction = vec![0.0; n];
                for i in 0..n {
                    m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
                    vyar[i] = b2 * vyar[i] + (1.0 - b2) * grad[i] * grad[i];
                    let m_hat = m[i] / (1.0 - b1.powi(t as i32));
                    let v_hat = vyar[i] / (1.0 - b2.powi(t as i32));
                    direction[i] = -m_hat / (v_hat.sqrt() + eps);
                }
                let Some((p_new, a_new)) =
                    apply_step(&poses, &affine, &direction, schedule.adam_lr)
                else {
                    break;
                };
                match total_loss(problem, &edges, &p_new, &a_new) {
                    Ok(l_new) => {
                        poses = p_new;
                        affine = a_new;
                        loss = l_new;
                        trace.push(loss);
                        accepted_any = true;
                    }
                    Err(Error::InsufficientOverlap { .. }) => break,
                    Err(err) => return Err(err),
                }
            }
        }
    }

    Ok(WindowSolution {
        poses,
        affine,
        trace,
        no_progress: !accepted_any,
        dropped_edges: dropped,
        grad_norm,
    })
}
