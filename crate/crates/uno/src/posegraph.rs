//! Global trajectory refinement: nonlinear least squares over the union of
//! window edges.
//!
//! The residual of edge `(i, j)` with measurement `T` is the decoupled
//! log-map of `P_j^-1 · P_i · T`, rotation rows first, weighted by the edge
//! information weights. Node 0 is anchored. A Huber kernel on the initial
//! translation residuals (δ = 3× median, weights frozen) absorbs surviving
//! bad edges; Levenberg-Marquardt with multiplicative damping solves the
//! normal equations, so the residual trace is nonincreasing over accepted
//! steps.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::geometry::{hat, inv_right_jacobian_so3, Pose};

/// One relative-pose constraint between graph nodes.
#[derive(Debug, Clone)]
pub struct PoseGraphEdge {
    pub i: usize,
    pub j: usize,
    /// Measured pose of node `j` in node `i`'s frame.
    pub measurement: Pose,
    pub weight_rot: f64,
    pub weight_trans: f64,
}

/// Pose graph: nodes are global poses, edges are relative measurements.
#[derive(Debug, Clone)]
pub struct PoseGraph {
    pub nodes: Vec<Pose>,
    pub edges: Vec<PoseGraphEdge>,
}

/// Result of [`optimize_graph`].
#[derive(Debug, Clone)]
pub struct PoseGraphSolution {
    pub poses: Vec<Pose>,
    /// Weighted squared residual after initialization and after each accepted
    /// LM step.
    pub trace: Vec<f64>,
    pub final_gradient_norm: f64,
}

/// One window's contribution to the global graph.
#[derive(Debug, Clone)]
pub struct WindowContribution {
    pub start_frame: usize,
    /// Refined window-local poses (first is the window base).
    pub poses: Vec<Pose>,
    /// Window-local edge list with per-edge confidence.
    pub edges: Vec<(usize, usize, f64)>,
}

impl PoseGraph {
    fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::InvalidArgument("empty pose graph".into()));
        }
        for e in &self.edges {
            if e.i >= self.nodes.len() || e.j >= self.nodes.len() || e.i == e.j {
                return Err(Error::InvalidArgument(format!(
                    "edge ({}, {}) out of range",
                    e.i, e.j
                )));
            }
            if e.weight_rot < 0.0 || e.weight_trans < 0.0 {
                return Err(Error::InvalidArgument("negative information weight".into()));
            }
            if !e.measurement.translation.iter().all(|v| v.is_finite())
                || !e
                    .measurement
                    .rotation
                    .into_inner()
                    .coords
                    .iter()
                    .all(|v| v.is_finite())
            {
                return Err(Error::NonFiniteResidual { i: e.i, j: e.j });
            }
        }
        Ok(())
    }

    /// Export in g2o text format (`VERTEX_SE3:QUAT` / `EDGE_SE3:QUAT`).
    pub fn to_g2o(&self) -> String {
        let mut out = String::new();
        for (id, p) in self.nodes.iter().enumerate() {
            let q = p.rotation.into_inner();
            let t = p.translation;
            writeln!(
                out,
                "VERTEX_SE3:QUAT {id} {} {} {} {} {} {} {}",
                t[0], t[1], t[2], q.i, q.j, q.k, q.w
            )
            .unwrap();
        }
        for e in &self.edges {
            let q = e.measurement.rotation.into_inner();
            let t = e.measurement.translation;
            // Diagonal 6x6 information, upper triangle in g2o order
            // (translation block first, then rotation).
            let mut info = [0.0; 21];
            let diag = [
                e.weight_trans,
                e.weight_trans,
                e.weight_trans,
                e.weight_rot,
                e.weight_rot,
                e.weight_rot,
            ];
            let mut idx = 0;
            for r in 0..6 {
                for c in r..6 {
                    if r == c {
                        info[idx] = diag[r];
                    }
                    idx += 1;
                }
            }
            write!(
                out,
                "EDGE_SE3:QUAT {} {} {} {} {} {} {} {} {}",
                e.i, e.j, t[0], t[1], t[2], q.i, q.j, q.k, q.w
            )
            .unwrap();
            for v in info {
                write!(out, " {v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Assemble the global pose graph from optimized windows.
///
/// Window edges become global edges with their window-refined relative poses
/// as measurements; duplicates keep the highest-confidence copy. Node poses
/// are initialized by chaining consecutive edges from the identity. Windows
/// must cover every frame with at least one frame of overlap.
pub fn build_global_graph(windows: &[WindowContribution]) -> Result<PoseGraph> {
    if windows.is_empty() {
        return Err(Error::InvalidArgument("no windows".into()));
    }
    let n_frames = windows
        .iter()
        .map(|w| w.start_frame + w.poses.len())
        .max()
        .unwrap();

    let mut covered = vec![false; n_frames];
    let mut best: std::collections::BTreeMap<(usize, usize), PoseGraphEdge> =
        std::collections::BTreeMap::new();
    for w in windows {
        for k in 0..w.poses.len() {
            covered[w.start_frame + k] = true;
        }
        for &(li, lj, confidence) in &w.edges {
            if li >= w.poses.len() || lj >= w.poses.len() {
                return Err(Error::InvalidArgument(format!(
                    "window at {} has edge ({li}, {lj}) outside its {} frames",
                    w.start_frame,
                    w.poses.len()
                )));
            }
            let (gi, gj) = (w.start_frame + li, w.start_frame + lj);
            let measurement = w.poses[li].between(&w.poses[lj]);
            let weight = confidence.max(1e-6);
            let edge = PoseGraphEdge {
                i: gi,
                j: gj,
                measurement,
                weight_rot: weight,
                weight_trans: weight,
            };
            match best.get(&(gi, gj)) {
                Some(existing) if existing.weight_rot >= weight => {}
                _ => {
                    best.insert((gi, gj), edge);
                }
            }
        }
    }
    if let Some(gap) = covered.iter().position(|c| !c) {
        return Err(Error::CoverageGap(gap));
    }

    let edges: Vec<PoseGraphEdge> = best.into_values().collect();

    // Chain consecutive edges from identity.
    let mut nodes = vec![Pose::identity(); n_frames];
    for k in 1..n_frames {
        let step = edges
            .iter()
            .find(|e| e.i == k - 1 && e.j == k)
            .ok_or(Error::CoverageGap(k))?;
        nodes[k] = nodes[k - 1].compose(&step.measurement);
    }
    Ok(PoseGraph { nodes, edges })
}

/// Residual of one edge at the given node poses: `log(P_j^-1 P_i T)`,
/// rotation rows first.
fn edge_residual(nodes: &[Pose], e: &PoseGraphEdge) -> Vector6<f64> {
    let err = nodes[e.j]
        .inverse()
        .compose(&nodes[e.i])
        .compose(&e.measurement);
    err.log()
}

/// Analytic Jacobians of the residual with respect to the right-tangent
/// perturbations of nodes `i` and `j`.
fn edge_jacobians(
    nodes: &[Pose],
    e: &PoseGraphEdge,
) -> (Vector6<f64>, nalgebra::Matrix6<f64>, nalgebra::Matrix6<f64>) {
    let m = nodes[e.j].inverse().compose(&nodes[e.i]);
    let n = m.compose(&e.measurement);
    let phi = n.rotation.scaled_axis();
    let jr_inv = inv_right_jacobian_so3(&phi);
    let r_m = m.rotation_matrix();
    let r_n = n.rotation_matrix();
    let r_t = e.measurement.rotation_matrix();
    let t_t = e.measurement.translation;
    let t_n = n.translation;

    let mut j_i = nalgebra::Matrix6::<f64>::zeros();
    j_i.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(jr_inv * r_t.transpose()));
    j_i.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(-r_m * hat(&t_t)));
    j_i.fixed_view_mut::<3, 3>(3, 3).copy_from(&r_m);

    let mut j_j = nalgebra::Matrix6::<f64>::zeros();
    j_j.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(-(jr_inv * r_n.transpose())));
    j_j.fixed_view_mut::<3, 3>(3, 0).copy_from(&hat(&t_n));
    j_j.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&(-Matrix3::identity()));

    let mut r = Vector6::zeros();
    r.fixed_rows_mut::<3>(0).copy_from(&phi);
    r.fixed_rows_mut::<3>(3).copy_from(&t_n);
    (r, j_i, j_j)
}

fn weighted_cost(nodes: &[Pose], edges: &[PoseGraphEdge], huber: &[f64]) -> Result<f64> {
    let mut cost = 0.0;
    for (e, &hw) in edges.iter().zip(huber) {
        let r = edge_residual(nodes, e);
        if !r.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteResidual { i: e.i, j: e.j });
        }
        let rot2 = r.fixed_rows::<3>(0).norm_squared();
        let trans2 = r.fixed_rows::<3>(3).norm_squared();
        cost += e.weight_rot * rot2 + hw * e.weight_trans * trans2;
    }
    Ok(cost)
}

/// Levenberg-Marquardt over the graph, node 0 fixed.
///
/// Returns the refined poses and the cost trace (nonincreasing over accepted
/// steps). Stops when the gradient infinity norm drops below `tol`, the
/// iteration cap is reached, or damping overflows.
pub fn optimize_graph(graph: &PoseGraph, max_iters: usize, tol: f64) -> Result<PoseGraphSolution> {
    graph.validate()?;
    let n = graph.nodes.len();
    let n_vars = 6 * (n - 1);
    let mut nodes = graph.nodes.clone();

    // Frozen Huber weights on translation residuals from the initializer.
    // Zero-information edges are skipped and so are numerically-zero
    // residuals: a chained initialization satisfies every consecutive edge
    // exactly, and a median taken over those zeros would disable the very
    // edges (loop closures) the kernel is meant to arbitrate.
    let mut trans_norms: Vec<f64> = graph
        .edges
        .iter()
        .filter(|e| e.weight_rot > 0.0 || e.weight_trans > 0.0)
        .map(|e| edge_residual(&nodes, e).fixed_rows::<3>(3).norm())
        .filter(|&r| r > 1e-9)
        .collect();
    trans_norms.sort_by(|a, b| a.total_cmp(b));
    let huber_delta = if trans_norms.is_empty() {
        f64::INFINITY
    } else {
        3.0 * trans_norms[trans_norms.len() / 2]
    };
    let huber: Vec<f64> = graph
        .edges
        .iter()
        .map(|e| {
            let rt = edge_residual(&nodes, e).fixed_rows::<3>(3).norm();
            if rt <= huber_delta {
                1.0
            } else {
                huber_delta / rt
            }
        })
        .collect();

    let mut cost = weighted_cost(&nodes, &graph.edges, &huber)?;
    let mut trace = vec![cost];
    let mut lambda = 1e-4;
    let mut grad_norm = f64::INFINITY;

    for _ in 0..max_iters {
        // Assemble normal equations.
        let mut h = DMatrix::<f64>::zeros(n_vars, n_vars);
        let mut g = DVector::<f64>::zeros(n_vars);
        for (e, &hw) in graph.edges.iter().zip(&huber) {
            let (r, j_i, j_j) = edge_jacobians(&nodes, e);
            if !r.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteResidual { i: e.i, j: e.j });
            }
            let mut w = Vector6::zeros();
            for a in 0..3 {
                w[a] = e.weight_rot;
                w[3 + a] = hw * e.weight_trans;
            }
            let blocks = [(e.i, &j_i), (e.j, &j_j)];
            for (node_a, ja) in blocks {
                if node_a == 0 {
                    continue;
                }
                let base_a = 6 * (node_a - 1);
                for col in 0..6 {
                    let mut acc = 0.0;
                    for row in 0..6 {
                        acc += ja[(row, col)] * w[row] * r[row];
                    }
                    g[base_a + col] += acc;
                }
                for (node_b, jb) in blocks {
                    if node_b == 0 {
                        continue;
                    }
                    let base_b = 6 * (node_b - 1);
                    for ca in 0..6 {
                        for cb in 0..6 {
                            let mut acc = 0.0;
                            for row in 0..6 {
                                acc += ja[(row, ca)] * w[row] * jb[(row, cb)];
                            }
                            h[(base_a + ca, base_b + cb)] += acc;
                        }
                    }
                }
            }
        }
        grad_norm = g.amax();
        if grad_norm < tol {
            break;
        }

        // Marquardt damping on the diagonal; retry with stronger damping on
        // rejected steps.
        let mut accepted = false;
        for _ in 0..12 {
            let mut h_damped = h.clone();
            for d in 0..n_vars {
                let diag = h[(d, d)];
                h_damped[(d, d)] = diag + lambda * diag.max(1e-9);
            }
            let Some(chol) = h_damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta = chol.solve(&(-&g));
            let mut trial = nodes.clone();
            for k in 1..n {
                let d = Vector6::from_fn(|r, _| delta[6 * (k - 1) + r]);
                trial[k] = trial[k].retract(&d);
            }
            let trial_cost = weighted_cost(&trial, &graph.edges, &huber)?;
            if trial_cost < cost {
                nodes = trial;
                cost = trial_cost;
                trace.push(cost);
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                break;
            }
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
        if !accepted {
            break;
        }
    }

    Ok(PoseGraphSolution {
        poses: nodes,
        trace,
        final_gradient_norm: grad_norm,
    })
}
