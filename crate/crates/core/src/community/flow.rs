use super::graph::FlowGraph;
use crate::error::{Error, Result};

pub const DEFAULT_TELEPORT: f64 = 0.15;
pub const DEFAULT_TOLERANCE: f64 = 1e-12;
pub const DEFAULT_MAX_ITERATIONS: usize = 10_000;

/// Stationary distribution of the teleporting random walk plus the flow on
/// each edge. Teleport steps are not recorded as edge flow.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryFlow {
    pub visit_rates: Vec<f64>,
    /// (source, target, flow), in the graph's edge order.
    pub edge_flows: Vec<(usize, usize, f64)>,
    pub teleport: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// Power iteration on P' = (1−τ)·P + τ·U, where P follows out-weight
/// proportions and dangling nodes jump uniformly. Stops when the L1 change
/// between iterates drops below `tol`.
pub fn stationary_flow(g: &FlowGraph, teleport: f64, tol: f64, max_iter: usize) -> Result<StationaryFlow> {
    let n = g.node_count();
    if n == 0 {
        return Err(Error::InvalidArgument("stationary flow of an empty graph".into()));
    }
    if !(0.0..=1.0).contains(&teleport) {
        return Err(Error::InvalidArgument(format!("teleport rate {teleport} outside [0, 1]")));
    }
    let out_w: Vec<f64> = (0..n).map(|u| g.out_weight(u)).collect();
    let uniform = 1.0 / n as f64;
    let mut p = vec![uniform; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let dangling: f64 = (0..n).filter(|&u| out_w[u] == 0.0).map(|u| p[u]).sum();
        let base = (teleport + (1.0 - teleport) * dangling) * uniform;
        next.iter_mut().for_each(|x| *x = base);
        for u in 0..n {
            if out_w[u] > 0.0 {
                let share = (1.0 - teleport) * p[u] / out_w[u];
                for (v, w) in g.out_edges(u) {
                    next[v] += share * w;
                }
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        residual = p.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut p, &mut next);
        if residual < tol {
            break;
        }
    }
    if residual >= tol {
        return Err(Error::NonConvergence {
            iterations,
            residual,
        });
    }
    let edge_flows = g
        .edges()
        .map(|(u, v, w)| (u, v, (1.0 - teleport) * p[u] * w / out_w[u]))
        .collect();
    Ok(StationaryFlow {
        visit_rates: p,
        edge_flows,
        teleport,
        iterations,
        residual,
    })
}
