//! Two-level map equation.
//!
//! For a partition into modules with exit flows q_i and member visit rates
//! p_α, with q = Σ q_i and p_i↻ = q_i + Σ_{α∈i} p_α:
//!
//! ```text
//! L = q·H(Q) + Σ_i p_i↻·H(P_i)
//!   = plogp(q) − 2·Σ plogp(q_i) − Σ plogp(p_α) + Σ plogp(p_i↻)
//! ```
//!
//! in bits, where plogp(x) = x·log2(x) and plogp(0) = 0.

use super::flow::StationaryFlow;

#[inline]
pub(crate) fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.log2()
    } else {
        0.0
    }
}

/// Codelength in bits of `assignment` (node → module id) under `flow`.
pub fn map_equation(assignment: &[usize], flow: &StationaryFlow) -> f64 {
    let modules = assignment.iter().copied().max().map_or(0, |m| m + 1);
    let mut exit = vec![0.0; modules];
    let mut member = vec![0.0; modules];
    for (&m, &p) in assignment.iter().zip(&flow.visit_rates) {
        member[m] += p;
    }
    for &(u, v, q) in &flow.edge_flows {
        if assignment[u] != assignment[v] {
            exit[assignment[u]] += q;
        }
    }
    let total_exit: f64 = exit.iter().sum();
    let node_term: f64 = flow.visit_rates.iter().map(|&p| plogp(p)).sum();
    plogp(total_exit) - 2.0 * exit.iter().map(|&q| plogp(q)).sum::<f64>() - node_term
        + exit.iter().zip(&member).map(|(&q, &p)| plogp(q + p)).sum::<f64>()
}
