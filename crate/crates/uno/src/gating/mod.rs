//! Correlation volumes and Gumbel-Softmax gating.
//!
//! The window gating runs in two stages. [`sample_graph`] draws the sparse
//! inter-frame edge set Φ: per candidate edge a Bernoulli decision realized as
//! a 2-class Gumbel-Softmax, repeated for a configurable number of recursive
//! passes with a gated-average hidden-state update; consecutive edges are
//! always kept so the window stays connected. [`assign_decoders`] then draws
//! the per-edge decoder assignment Θ from a categorical over the bank.
//!
//! Both logit maps are affine in the correlation features, with coefficients
//! taken from [`GatingConfig`] (populated from the pipeline config file).

mod gumbel;

pub use gumbel::{
    gumbel_hard_with_noise, gumbel_relax_jacobian, gumbel_relax_with_noise, gumbel_sample_hard,
    gumbel_softmax_relax, log_sigmoid, sample_gumbel, sample_straight_through,
    StraightThroughDraw,
};

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::rng::Stream;

/// Pairwise correlation features over a window of `len` frames.
///
/// `values[i][j]` holds one dot product per feature channel; entry `(i, i)` is
/// the self-correlation.
#[derive(Debug, Clone)]
pub struct CorrelationVolume {
    pub len: usize,
    pub channels: usize,
    values: Vec<f64>,
}

impl CorrelationVolume {
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> &[f64] {
        let base = (i * self.len + j) * self.channels;
        &self.values[base..base + self.channels]
    }
}

/// Full dot product of the per-frame feature vectors (single channel).
pub fn build_correlation(features: &[Vec<f64>]) -> Result<CorrelationVolume> {
    let spans = [(0, features.first().map_or(0, |f| f.len()))];
    build_correlation_channels(features, &spans)
}

/// Channelwise dot products: each `(start, len)` span of the feature vectors
/// contributes one correlation channel.
pub fn build_correlation_channels(
    features: &[Vec<f64>],
    spans: &[(usize, usize)],
) -> Result<CorrelationVolume> {
    let k = features.len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "correlation volume needs at least 2 frames, got {k}"
        )));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::DimensionMismatch(
            "per-frame feature dimensions differ".into(),
        ));
    }
    for &(start, len) in spans {
        if start + len > dim {
            return Err(Error::DimensionMismatch(format!(
                "span ({start}, {len}) exceeds feature dimension {dim}"
            )));
        }
    }
    let channels = spans.len();
    let mut values = vec![0.0; k * k * channels];
    for i in 0..k {
        for j in 0..k {
            for (c, &(start, len)) in spans.iter().enumerate() {
                let dot: f64 = features[i][start..start + len]
                    .iter()
                    .zip(&features[j][start..start + len])
                    .map(|(a, b)| a * b)
                    .sum();
                values[(i * k + j) * channels + c] = dot;
            }
        }
    }
    Ok(CorrelationVolume {
        len: k,
        channels,
        values,
    })
}

/// One edge of the sampled inter-frame graph. Indices are window-local with
/// `i < j`.
#[derive(Debug, Clone)]
pub struct GraphEdge {
    pub i: usize,
    pub j: usize,
    /// Consecutive edges are forced present and carry no sampling gradient.
    pub forced: bool,
    /// Relaxed 2-class membership weights `[present, absent]`.
    pub membership_relaxed: [f64; 2],
    /// Decoder assignment, set by [`assign_decoders`].
    pub theta: Option<usize>,
    /// Relaxed decoder weights paired with `theta`.
    pub theta_relaxed: Vec<f64>,
    /// Relative pose measurement `P_i^-1 P_j`, set by the experts stage.
    pub measurement: Option<Pose>,
    pub confidence: f64,
}

/// Sparse inter-frame correlation graph over one window.
#[derive(Debug, Clone)]
pub struct CorrelationGraph {
    pub window_len: usize,
    pub edges: Vec<GraphEdge>,
}

impl CorrelationGraph {
    /// Chain graph of consecutive edges only, the floor of every sample.
    pub fn chain(window_len: usize) -> Self {
        let edges = (0..window_len.saturating_sub(1))
            .map(|i| GraphEdge {
                i,
                j: i + 1,
                forced: true,
                membership_relaxed: [1.0, 0.0],
                theta: None,
                theta_relaxed: Vec::new(),
                measurement: None,
                confidence: 0.0,
            })
            .collect();
        CorrelationGraph { window_len, edges }
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.edges.iter().any(|e| e.i == i && e.j == j)
    }

    pub fn edge(&self, i: usize, j: usize) -> Option<&GraphEdge> {
        self.edges.iter().find(|e| e.i == i && e.j == j)
    }

    pub fn edge_mut(&mut self, i: usize, j: usize) -> Option<&mut GraphEdge> {
        self.edges.iter_mut().find(|e| e.i == i && e.j == j)
    }

    /// Connectivity over the window nodes; forced chain edges make this hold
    /// for every sample, but callers may check after manual edits.
    pub fn is_connected(&self) -> bool {
        if self.window_len == 0 {
            return true;
        }
        let mut seen = vec![false; self.window_len];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(n) = stack.pop() {
            for e in &self.edges {
                let other = if e.i == n {
                    e.j
                } else if e.j == n {
                    e.i
                } else {
                    continue;
                };
                if !seen[other] {
                    seen[other] = true;
                    stack.push(other);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Hidden state of the recursive sampler: one scalar per window frame plus the
/// number of sampling passes.
#[derive(Debug, Clone)]
pub struct RecurrenceState {
    pub h: Vec<f64>,
    pub layers: usize,
}

impl RecurrenceState {
    pub fn new(window_len: usize, layers: usize) -> Result<Self> {
        if layers < 1 {
            return Err(Error::InvalidArgument("layers must be >= 1".into()));
        }
        Ok(RecurrenceState {
            h: vec![0.0; window_len],
            layers,
        })
    }
}

/// Coefficients of the gating logit maps and the temperature schedule.
///
/// Edge logit for candidate `(i, j)`:
/// `edge_bias + Σ_c edge_corr_weights[c]·C[i][j][c] + edge_prev_weight·prev(i,j)
///  + edge_h_weight·(H_i + H_j)/2`.
/// Decoder logit for class `d`:
/// `theta_bias[d] + Σ_c theta_weights[d][c]·C[i][j][c]`.
#[derive(Debug, Clone)]
pub struct GatingConfig {
    pub tau0: f64,
    pub tau_min: f64,
    pub layers: usize,
    pub edge_bias: f64,
    pub edge_corr_weights: Vec<f64>,
    pub edge_prev_weight: f64,
    pub edge_h_weight: f64,
    /// Gain of the gated-average hidden-state update.
    pub h_gain: f64,
    pub theta_weights: Vec<Vec<f64>>,
    pub theta_bias: Vec<f64>,
}

impl Default for GatingConfig {
    fn default() -> Self {
        GatingConfig {
            tau0: 1.0,
            tau_min: 0.1,
            layers: 2,
            edge_bias: 1.5,
            edge_corr_weights: Vec::new(),
            edge_prev_weight: 0.5,
            edge_h_weight: 0.25,
            h_gain: 0.5,
            theta_weights: Vec::new(),
            theta_bias: Vec::new(),
        }
    }
}

impl GatingConfig {
    fn edge_logit(&self, corr: &[f64], prev: bool, h_mean: f64) -> f64 {
        let mut logit = self.edge_bias + self.edge_h_weight * h_mean;
        for (w, c) in self.edge_corr_weights.iter().zip(corr) {
            logit += w * c;
        }
        if prev {
            logit += self.edge_prev_weight;
        }
        logit
    }

    fn theta_logits(&self, corr: &[f64], bank_size: usize) -> Vec<f64> {
        (0..bank_size)
            .map(|d| {
                let mut logit = self.theta_bias.get(d).copied().unwrap_or(0.0);
                if let Some(row) = self.theta_weights.get(d) {
                    for (w, c) in row.iter().zip(corr) {
                        logit += w * c;
                    }
                }
                logit
            })
            .collect()
    }
}

/// Sample the sparse edge set Φ.
///
/// Runs `state.layers` passes: each pass draws per-edge membership from a
/// 2-class Gumbel-Softmax on the edge logit, then updates the hidden state
/// with a gated average of each frame's mean inclusion probability.
/// Consecutive edges are always present. Relaxed weights are retained on the
/// edges for gradient evaluation.
pub fn sample_graph(
    cfg: &GatingConfig,
    corr: &CorrelationVolume,
    prev: &CorrelationGraph,
    state: &RecurrenceState,
    tau: f64,
    rng: &mut Stream,
) -> Result<(CorrelationGraph, RecurrenceState)> {
    let k = corr.len;
    if prev.window_len != k {
        return Err(Error::DimensionMismatch(format!(
            "previous graph over {} frames, correlation over {k}",
            prev.window_len
        )));
    }
    let mut state = RecurrenceState {
        h: if state.h.len() == k {
            state.h.clone()
        } else {
            vec![0.0; k]
        },
        layers: state.layers,
    };
    let mut graph = prev.clone();

    for _ in 0..state.layers {
        let mut edges = Vec::new();
        let mut incl_sum = vec![0.0; k];
        let mut incl_count = vec![0usize; k];
        for i in 0..k {
            for j in (i + 1)..k {
                let forced = j == i + 1;
                let h_mean = 0.5 * (state.h[i] + state.h[j]);
                let logit = cfg.edge_logit(corr.at(i, j), graph.contains(i, j), h_mean);
                let (present, relaxed) = if forced {
                    (true, [1.0, 0.0])
                } else {
                    let log_probs = [log_sigmoid(logit), log_sigmoid(-logit)];
                    let draw = sample_straight_through(&log_probs, tau, rng)?;
                    (draw.hard == 0, [draw.relaxed[0], draw.relaxed[1]])
                };
                let p_incl = if forced {
                    1.0
                } else {
                    1.0 / (1.0 + (-logit).exp())
                };
                incl_sum[i] += p_incl;
                incl_count[i] += 1;
                incl_sum[j] += p_incl;
                incl_count[j] += 1;
                if present {
                    edges.push(GraphEdge {
                        i,
                        j,
                        forced,
                        membership_relaxed: relaxed,
                        theta: None,
                        theta_relaxed: Vec::new(),
                        measurement: None,
                        confidence: 0.0,
                    });
                }
            }
        }
        graph = CorrelationGraph {
            window_len: k,
            edges,
        };
        for i in 0..k {
            let mean = if incl_count[i] > 0 {
                incl_sum[i] / incl_count[i] as f64
            } else {
                0.0
            };
            state.h[i] = (1.0 - cfg.h_gain) * state.h[i] + cfg.h_gain * mean;
        }
    }
    Ok((graph, state))
}

/// Draw the per-edge decoder assignment Θ over a bank of `bank_size` decoders.
///
/// Logits are affine in the edge's correlation features; the hard class and
/// the relaxed vector from the same noise are stored on each edge.
pub fn assign_decoders(
    cfg: &GatingConfig,
    corr: &CorrelationVolume,
    graph: &CorrelationGraph,
    bank_size: usize,
    tau: f64,
    rng: &mut Stream,
) -> Result<CorrelationGraph> {
    if bank_size < 1 {
        return Err(Error::InvalidArgument("bank size must be >= 1".into()));
    }
    if graph.window_len != corr.len {
        return Err(Error::DimensionMismatch(format!(
            "graph over {} frames, correlation over {}",
            graph.window_len, corr.len
        )));
    }
    let mut out = graph.clone();
    for edge in &mut out.edges {
        let logits = cfg.theta_logits(corr.at(edge.i, edge.j), bank_size);
        let draw = sample_straight_through(&logits, tau, rng)?;
        edge.theta = Some(draw.hard);
        edge.theta_relaxed = draw.relaxed;
    }
    Ok(out)
}

/// Geometric temperature annealing from `tau0` toward `tau_min` over
/// `total` back-end iterations.
pub fn annealed_tau(cfg: &GatingConfig, iter: usize, total: usize) -> f64 {
    if total <= 1 {
        return cfg.tau0.max(cfg.tau_min);
    }
    let ratio = (cfg.tau_min / cfg.tau0).max(1e-12);
    let frac = iter as f64 / (total - 1) as f64;
    (cfg.tau0 * ratio.powf(frac)).max(cfg.tau_min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn identical_unit_vectors_correlate_to_one() {
        let f = vec![vec![0.6, 0.8]; 4];
        let vol = build_correlation(&f).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((vol.at(i, j)[0] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn orthogonal_one_hots_give_identity_pattern() {
        let f: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..3).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let vol = build_correlation(&f).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_eq!(vol.at(i, j)[0], expect);
            }
        }
    }

    // Oracle: naive double-loop dot products.
    #[test]
    fn correlation_matches_brute_force() {
        let mut rng = substream(20, 0);
        let f: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..7).map(|_| rng.random::<f64>() - 0.5).collect())
            .collect();
        let vol = build_correlation(&f).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let mut dot = 0.0;
                for d in 0..7 {
                    dot += f[i][d] * f[j][d];
                }
                assert_eq!(vol.at(i, j)[0], dot);
            }
        }
    }

    #[test]
    fn correlation_needs_two_frames() {
        assert!(build_correlation(&[vec![1.0]]).is_err());
    }

    fn flat_corr(k: usize) -> CorrelationVolume {
        let f = vec![vec![1.0]; k];
        build_correlation(&f).unwrap()
    }

    #[test]
    fn saturated_logits_give_complete_graph() {
        let cfg = GatingConfig {
            edge_bias: 60.0,
            edge_prev_weight: 0.0,
            edge_h_weight: 0.0,
            edge_corr_weights: vec![],
            ..GatingConfig::default()
        };
        let corr = flat_corr(5);
        let state = RecurrenceState::new(5, 2).unwrap();
        let mut rng = substream(21, 0);
        let (g, _) = sample_graph(&cfg, &corr, &CorrelationGraph::chain(5), &state, 1.0, &mut rng)
            .unwrap();
        assert_eq!(g.edges.len(), 10);
    }

    #[test]
    fn suppressed_logits_leave_chain_only() {
        let cfg = GatingConfig {
            edge_bias: -60.0,
            edge_prev_weight: 0.0,
            edge_h_weight: 0.0,
            edge_corr_weights: vec![],
            ..GatingConfig::default()
        };
        let corr = flat_corr(5);
        let state = RecurrenceState::new(5, 2).unwrap();
        let mut rng = substream(22, 0);
        let (g, _) = sample_graph(&cfg, &corr, &CorrelationGraph::chain(5), &state, 1.0, &mut rng)
            .unwrap();
        assert_eq!(g.edges.len(), 4);
        assert!(g.edges.iter().all(|e| e.forced && e.j == e.i + 1));
    }

    // Oracle: Monte-Carlo inclusion frequency against the sigmoid probability.
    #[test]
    fn inclusion_frequency_matches_sigmoid() {
        let cfg = GatingConfig {
            edge_bias: 0.4,
            edge_prev_weight: 0.0,
            edge_h_weight: 0.0,
            edge_corr_weights: vec![0.3],
            ..GatingConfig::default()
        };
        let mut rng = substream(23, 0);
        let f: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.random::<f64>() - 0.5).collect())
            .collect();
        let corr = build_correlation(&f).unwrap();
        let state = RecurrenceState::new(5, 1).unwrap();
        let runs = 10_000;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..runs {
            let (g, _) =
                sample_graph(&cfg, &corr, &CorrelationGraph::chain(5), &state, 1.0, &mut rng)
                    .unwrap();
            for e in g.edges.iter().filter(|e| !e.forced) {
                *counts.entry((e.i, e.j)).or_insert(0usize) += 1;
            }
        }
        for i in 0..5 {
            for j in (i + 2)..5 {
                let logit = cfg.edge_bias + 0.3 * corr.at(i, j)[0];
                let p = 1.0 / (1.0 + (-logit as f64).exp());
                let freq = *counts.get(&(i, j)).unwrap_or(&0) as f64 / runs as f64;
                assert!(
                    (freq - p).abs() < 0.02,
                    "edge ({i},{j}): freq {freq} vs p {p}"
                );
            }
        }
    }

    #[test]
    fn single_class_bank_assigns_zero() {
        let corr = flat_corr(4);
        let g = CorrelationGraph::chain(4);
        let mut rng = substream(24, 0);
        let out = assign_decoders(&GatingConfig::default(), &corr, &g, 1, 1.0, &mut rng).unwrap();
        assert!(out.edges.iter().all(|e| e.theta == Some(0)));
    }

    #[test]
    fn saturated_class_always_selected() {
        let cfg = GatingConfig {
            theta_bias: vec![0.0, 50.0, 0.0],
            theta_weights: vec![vec![0.0]; 3],
            ..GatingConfig::default()
        };
        let corr = flat_corr(4);
        let g = CorrelationGraph::chain(4);
        let mut rng = substream(25, 0);
        for _ in 0..1000 {
            let out = assign_decoders(&cfg, &corr, &g, 3, 1.0, &mut rng).unwrap();
            assert!(out.edges.iter().all(|e| e.theta == Some(1)));
        }
    }

    // Oracle: uniform logits must give near-uniform class frequencies.
    #[test]
    fn uniform_logits_uniform_frequencies() {
        let corr = flat_corr(2);
        let g = CorrelationGraph::chain(2);
        let mut rng = substream(26, 0);
        let mut counts = [0usize; 8];
        let draws = 100_000;
        for _ in 0..draws {
            let out =
                assign_decoders(&GatingConfig::default(), &corr, &g, 8, 1.0, &mut rng).unwrap();
            counts[out.edges[0].theta.unwrap()] += 1;
        }
        for c in counts {
            let freq = c as f64 / draws as f64;
            assert!((0.115..=0.135).contains(&freq), "freq = {freq}");
        }
    }

    #[test]
    fn determinism_same_stream_same_graph() {
        let cfg = GatingConfig::default();
        let mut rng = substream(27, 0);
        let f: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..4).map(|_| rng.random::<f64>()).collect())
            .collect();
        let corr = build_correlation(&f).unwrap();
        let state = RecurrenceState::new(6, 2).unwrap();
        let run = |seed: u64| {
            let mut r = substream(seed, 9);
            let (g, s) =
                sample_graph(&cfg, &corr, &CorrelationGraph::chain(6), &state, 0.7, &mut r)
                    .unwrap();
            let g = assign_decoders(&cfg, &corr, &g, 5, 0.7, &mut r).unwrap();
            (
                g.edges
                    .iter()
                    .map(|e| (e.i, e.j, e.theta))
                    .collect::<Vec<_>>(),
                s.h,
            )
        };
        assert_eq!(run(99), run(99));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn sampled_graphs_are_connected(seed in 0u64..1000, bias in -5.0f64..5.0, k in 3usize..8) {
            let cfg = GatingConfig { edge_bias: bias, ..GatingConfig::default() };
            let corr = flat_corr(k);
            let state = RecurrenceState::new(k, 2).unwrap();
            let mut rng = substream(seed, 3);
            let (g, _) = sample_graph(&cfg, &corr, &CorrelationGraph::chain(k), &state, 0.5, &mut rng).unwrap();
            prop_assert!(g.is_connected());
            for e in &g.edges {
                let s = e.membership_relaxed[0] + e.membership_relaxed[1];
                prop_assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }
}
