use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};

use crate::geom::{PoseKey, Se3};
use crate::{CoreError, Result};

use super::{GraphEdge, PoseGraph};

/// Step size for central-difference edge Jacobians.
const JAC_H: f64 = 1e-6;
/// Damping ceiling; a system that cannot produce a descent step below this
/// is treated as stuck rather than an error (the best iterate is returned).
const MAX_DAMPING: f64 = 1e8;

#[derive(Clone, Debug)]
pub struct OptimizeReport {
    pub poses: BTreeMap<PoseKey, Se3>,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Residual of one edge at the given endpoint estimates:
/// log(measurement⁻¹ · (T_a⁻¹ T_b)).
fn edge_residual(e: &GraphEdge, ta: &Se3, tb: &Se3) -> Vector6<f64> {
    e.measurement.inverse().compose(&ta.delta_to(tb)).log()
}

fn graph_cost(edges: &[&GraphEdge], nodes: &BTreeMap<PoseKey, Se3>) -> f64 {
    edges
        .iter()
        .map(|e| {
            let r = edge_residual(e, &nodes[&e.a], &nodes[&e.b]);
            (r.transpose() * e.information * r)[0]
        })
        .sum()
}

/// Central-difference Jacobian of the edge residual with respect to a
/// right-multiplicative increment on one endpoint.
fn numeric_jacobian(e: &GraphEdge, ta: &Se3, tb: &Se3, wrt_a: bool) -> Matrix6<f64> {
    let mut jac = Matrix6::zeros();
    for k in 0..6 {
        let mut xi = Vector6::zeros();
        xi[k] = JAC_H;
        let bump = Se3::exp(&xi);
        xi[k] = -JAC_H;
        let dump = Se3::exp(&xi);
        let (rp, rm) = if wrt_a {
            (edge_residual(e, &ta.compose(&bump), tb), edge_residual(e, &ta.compose(&dump), tb))
        } else {
            (edge_residual(e, ta, &tb.compose(&bump)), edge_residual(e, ta, &tb.compose(&dump)))
        };
        jac.set_column(k, &((rp - rm) / (2.0 * JAC_H)));
    }
    jac
}

/// Every node must be reachable from the anchor through edges.
fn check_connected(graph: &PoseGraph) -> Result<()> {
    let mut adj: BTreeMap<PoseKey, Vec<PoseKey>> = BTreeMap::new();
    for e in &graph.edges {
        adj.entry(e.a).or_default().push(e.b);
        adj.entry(e.b).or_default().push(e.a);
    }
    let mut seen = std::collections::BTreeSet::new();
    let mut queue = std::collections::VecDeque::from([graph.anchor]);
    seen.insert(graph.anchor);
    while let Some(k) = queue.pop_front() {
        for &n in adj.get(&k).into_iter().flatten() {
            if seen.insert(n) {
                queue.push_back(n);
            }
        }
    }
    if let Some(orphan) = graph.nodes.keys().find(|k| !seen.contains(k)) {
        return Err(CoreError::InvalidConfig(format!(
            "graph not connected: node {orphan} is unreachable from the anchor"
        )));
    }
    Ok(())
}

/// Levenberg-Marquardt over all non-anchor nodes. One iteration linearizes
/// once (numeric edge Jacobians); rejected steps re-solve with μ tripled,
/// accepted ones divide μ by 3. Accepted iterates never increase the cost,
/// and the result is independent of the order edges were inserted.
pub fn optimize_graph(graph: &PoseGraph, max_iter: usize, tol: f64) -> Result<OptimizeReport> {
    graph.validate()?;
    check_connected(graph)?;
    // Internal ordering fixes floating-point accumulation regardless of the
    // caller's edge order.
    let mut edges: Vec<&GraphEdge> = graph.edges.iter().collect();
    edges.sort_by(|x, y| {
        (x.a, x.b, x.kind)
            .cmp(&(y.a, y.b, y.kind))
            .then_with(|| lex_cmp(&x.measurement, &y.measurement))
    });

    let mut nodes = graph.nodes.clone();
    let free: Vec<PoseKey> = nodes.keys().copied().filter(|k| *k != graph.anchor).collect();
    let col: BTreeMap<PoseKey, usize> =
        free.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    let n = 6 * free.len();

    let initial_cost = graph_cost(&edges, &nodes);
    let mut report = OptimizeReport {
        poses: nodes.clone(),
        initial_cost,
        final_cost: initial_cost,
        iterations: 0,
        converged: true,
    };
    if n == 0 || edges.is_empty() {
        return Ok(report);
    }

    let mut cost = initial_cost;
    let mut mu = 1e-4;
    for iter in 1..=max_iter {
        report.iterations = iter;
        let mut h = DMatrix::<f64>::zeros(n, n);
        let mut g = DVector::<f64>::zeros(n);
        for e in &edges {
            let (ta, tb) = (nodes[&e.a], nodes[&e.b]);
            let r = edge_residual(e, &ta, &tb);
            let blocks: [(Option<&usize>, Matrix6<f64>); 2] = [
                (col.get(&e.a), numeric_jacobian(e, &ta, &tb, true)),
                (col.get(&e.b), numeric_jacobian(e, &ta, &tb, false)),
            ];
            for (ci, jac_i) in &blocks {
                let Some(&ci) = *ci else { continue };
                let wj = e.information * jac_i;
                let gi = jac_i.transpose() * e.information * r;
                for m in 0..6 {
                    g[6 * ci + m] += gi[m];
                }
                for (cj, jac_j) in &blocks {
                    let Some(&cj) = *cj else { continue };
                    let hij = jac_j.transpose() * wj;
                    for m in 0..6 {
                        for q in 0..6 {
                            h[(6 * cj + m, 6 * ci + q)] += hij[(m, q)];
                        }
                    }
                }
            }
        }

        // μ search on the fixed linearization.
        let mut accepted = false;
        loop {
            let mut damped = h.clone();
            for i in 0..n {
                damped[(i, i)] += mu;
            }
            let Some(chol) = damped.cholesky() else {
                mu *= 3.0;
                if mu > MAX_DAMPING {
                    return Err(CoreError::DegenerateHessian { max_damping: MAX_DAMPING });
                }
                continue;
            };
            let step = chol.solve(&(-&g));
            let step_norm = step.norm();
            let mut trial = nodes.clone();
            for (k, &c) in &col {
                let xi = step.fixed_rows::<6>(6 * c).into_owned();
                trial.insert(*k, nodes[k].compose(&Se3::exp(&xi)));
            }
            let trial_cost = graph_cost(&edges, &trial);
            if trial_cost < cost {
                nodes = trial;
                cost = trial_cost;
                mu = (mu / 3.0).max(1e-12);
                accepted = true;
            }
            if step_norm < tol {
                report.poses = nodes;
                report.final_cost = cost;
                report.converged = true;
                return Ok(report);
            }
            if accepted {
                break;
            }
            mu *= 3.0;
            if mu > MAX_DAMPING * 1e4 {
                report.poses = nodes;
                report.final_cost = cost;
                report.converged = false;
                return Ok(report);
            }
        }
    }
    report.poses = nodes;
    report.final_cost = cost;
    report.converged = false;
    Ok(report)
}

/// Total order on transforms for deterministic tie-breaking.
fn lex_cmp(x: &Se3, y: &Se3) -> std::cmp::Ordering {
    for i in 0..3 {
        match x.translation[i].total_cmp(&y.translation[i]) {
            std::cmp::Ordering::Equal => {}
            o => return o,
        }
    }
    for r in 0..3 {
        for c in 0..3 {
            match x.rotation[(r, c)].total_cmp(&y.rotation[(r, c)]) {
                std::cmp::Ordering::Equal => {}
                o => return o,
            }
        }
    }
    std::cmp::Ordering::Equal
}
