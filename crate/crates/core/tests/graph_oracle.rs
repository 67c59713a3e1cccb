//! Cross-checks the pose-graph optimizer against an independently written
//! dense Gauss-Newton solver. The reference solver uses a global chart
//! (left-multiplied twist per node, accumulated across iterations) and a
//! stacked whitened residual vector, so the two implementations share only
//! the objective definition.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mapfuse_core::geom::Twist;
use mapfuse_core::graph::{optimize_graph, EdgeKind, GraphEdge, PoseGraph};
use mapfuse_core::{PoseKey, Se3};

fn key(i: u32) -> PoseKey {
    PoseKey::new(0, i)
}

/// 4-node square: noisy odometry around the corners plus one exact closing
/// loop edge, the smallest graph where odometry and loop genuinely fight.
fn square_graph(seed: u64) -> PoseGraph {
    let quarter = std::f64::consts::FRAC_PI_2;
    let step = Se3::exp(&Twist::new(0.0, 0.0, quarter, 2.0, 0.0, 0.0));
    let mut gt = vec![Se3::identity()];
    for i in 0..3 {
        let prev = gt[i];
        gt.push(prev.compose(&step));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = BTreeMap::new();
    let mut edges = Vec::new();
    let mut integrated = Se3::identity();
    nodes.insert(key(0), integrated);
    for i in 0..3u32 {
        let mut xi = Vector6::zeros();
        for k in 0..6 {
            xi[k] = rng.gen_range(-0.04..0.04);
        }
        let meas = step.compose(&Se3::exp(&xi));
        edges.push(GraphEdge::weighted(EdgeKind::Odometry, key(i), key(i + 1), meas, 1.0).unwrap());
        integrated = integrated.compose(&meas);
        nodes.insert(key(i + 1), integrated);
    }
    edges.push(
        GraphEdge::weighted(EdgeKind::Loop, key(0), key(3), gt[0].delta_to(&gt[3]), 10.0).unwrap(),
    );
    PoseGraph { nodes, edges, anchor: key(0) }
}

/// Whitened residual stack at the given free-node twists.
fn stacked_residuals(graph: &PoseGraph, free: &[PoseKey], x: &DVector<f64>) -> DVector<f64> {
    let mut poses = graph.nodes.clone();
    for (i, k) in free.iter().enumerate() {
        let xi: Vector6<f64> = x.fixed_rows::<6>(6 * i).into_owned();
        poses.insert(*k, Se3::exp(&xi).compose(&graph.nodes[k]));
    }
    let mut r = DVector::zeros(6 * graph.edges.len());
    for (e_idx, e) in graph.edges.iter().enumerate() {
        let res = e
            .measurement
            .inverse()
            .compose(&poses[&e.a].inverse().compose(&poses[&e.b]))
            .log();
        let sqrt_w = e.information[(0, 0)].sqrt();
        for m in 0..6 {
            r[6 * e_idx + m] = sqrt_w * res[m];
        }
    }
    r
}

/// Plain Gauss-Newton with forward accumulation on the global chart.
fn dense_reference_solve(graph: &PoseGraph) -> BTreeMap<PoseKey, Se3> {
    let free: Vec<PoseKey> =
        graph.nodes.keys().copied().filter(|k| *k != graph.anchor).collect();
    let n = 6 * free.len();
    let mut x = DVector::<f64>::zeros(n);
    let h = 1e-5;
    for _ in 0..200 {
        let r0 = stacked_residuals(graph, &free, &x);
        let mut jac = DMatrix::<f64>::zeros(r0.len(), n);
        for c in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            let col = (stacked_residuals(graph, &free, &xp)
                - stacked_residuals(graph, &free, &xm))
                / (2.0 * h);
            jac.set_column(c, &col);
        }
        let jt = jac.transpose();
        let mut hess = &jt * &jac;
        for i in 0..n {
            hess[(i, i)] += 1e-10;
        }
        let delta = hess
            .cholesky()
            .expect("reference normal equations should stay positive definite")
            .solve(&(-(&jt * &r0)));
        let dn = delta.norm();
        x += delta;
        if dn < 1e-13 {
            break;
        }
    }
    let mut out = graph.nodes.clone();
    for (i, k) in free.iter().enumerate() {
        let xi: Vector6<f64> = x.fixed_rows::<6>(6 * i).into_owned();
        out.insert(*k, Se3::exp(&xi).compose(&graph.nodes[k]));
    }
    out
}

#[test]
fn square_matches_dense_reference_solver() {
    for seed in [11u64, 29, 63] {
        let graph = square_graph(seed);
        let ours = optimize_graph(&graph, 100, 1e-12).unwrap();
        assert!(ours.converged, "seed {seed}");
        assert!(ours.final_cost <= ours.initial_cost);
        let reference = dense_reference_solve(&graph);
        for k in graph.nodes.keys() {
            let a = ours.poses[k];
            let b = reference[k];
            let dt = (a.translation - b.translation).norm();
            let dr = a.delta_to(&b).rotation_angle();
            assert!(
                dt < 1e-6 && dr < 1e-6,
                "seed {seed} node {k}: solvers disagree by {dt} m / {dr} rad"
            );
        }
    }
}

#[test]
fn reference_confirms_anchor_gauge() {
    let graph = square_graph(7);
    let reference = dense_reference_solve(&graph);
    assert_eq!(reference[&key(0)], graph.nodes[&key(0)]);
}
