use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use uno::geometry::Pose;
use uno::posegraph::*;
use uno::rng::substream;

fn circle_truth(n: usize) -> Vec<Pose> {
    let radius = 10.0;
    (0..n)
        .map(|k| {
            let theta = k as f64 / n as f64 * std::f64::consts::TAU;
            let pos = Vector3::new(radius * theta.cos(), 0.0, radius * theta.sin());
            let heading = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), -theta - std::f64::consts::FRAC_PI_2);
            Pose::new(heading, pos)
        })
        .collect()
}

fn ate(est: &[Pose], truth: &[Pose]) -> f64 {
    let sum: f64 = est.iter().zip(truth).map(|(a, b)| (a.translation - b.translation).norm_squared()).sum();
    (sum / est.len() as f64).sqrt()
}

fn main() {
    let n = 100;
    let truth = circle_truth(n);
    for (rot_deg, trans_rel, closure_w) in [
        (3.0f64, 0.02f64, 1.0f64),
        (4.0, 0.02, 1.0),
        (5.0, 0.02, 1.0),
        (6.0, 0.02, 1.0),
        (8.0, 0.02, 1.0),
    ] {
        let mut ratios = Vec::new();
        for seed in 0..20u64 {
            let mut rng = substream(100 + seed, 0);
            let mut gauss = |std: f64| -> f64 {
                let u1: f64 = rng.random::<f64>().clamp(1e-12, 1.0);
                let u2: f64 = rng.random();
                std * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            };
            let mut edges = Vec::new();
            for k in 1..n {
                let step = truth[k - 1].between(&truth[k]);
                let rot_std = rot_deg.to_radians() / 3.0f64.sqrt();
                let t_std = trans_rel * step.translation.norm() / 3.0f64.sqrt();
                let noise = Pose::from_axis_angle(
                    Vector3::new(gauss(rot_std), gauss(rot_std), gauss(rot_std)),
                    Vector3::new(gauss(t_std), gauss(t_std), gauss(t_std)),
                );
                edges.push(PoseGraphEdge { i: k - 1, j: k, measurement: step.compose(&noise), weight_rot: 1.0, weight_trans: 1.0 });
            }
            edges.push(PoseGraphEdge { i: 0, j: n - 1, measurement: truth[0].between(&truth[n - 1]), weight_rot: closure_w, weight_trans: closure_w });
            let mut nodes = vec![truth[0]];
            for k in 1..n {
                let next = nodes[k - 1].compose(&edges[k - 1].measurement);
                nodes.push(next);
            }
            let graph = PoseGraph { nodes: nodes.clone(), edges };
            let before = ate(&nodes, &truth);
            let sol = optimize_graph(&graph, 80, 1e-10).unwrap();
            let after = ate(&sol.poses, &truth);
            ratios.push(after / before);
        }
        ratios.sort_by(|a, b| a.total_cmp(b));
        println!(
            "rot {rot_deg}° trans {trans_rel} closure_w {closure_w}: median ratio {:.3} (min {:.3} max {:.3})",
            ratios[10], ratios[0], ratios[19]
        );
    }
}
