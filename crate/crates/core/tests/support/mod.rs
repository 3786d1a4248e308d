//! Independent reference implementations used as test oracles. Nothing in
//! here calls into the code under test beyond plain data types.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// −Σ p ln p / ln n by direct summation over the proportions.
pub fn normalized_entropy(counts: &[u64], n: usize) -> f64 {
    let total: f64 = counts.iter().map(|&c| c as f64).sum();
    let mut h = 0.0;
    for &c in counts {
        if c > 0 {
            let p = c as f64 / total;
            h -= p * p.ln();
        }
    }
    h / (n as f64).ln()
}

/// Dense Google-matrix stationary vector by solving (I − P'ᵀ)p = 0 with
/// one row replaced by Σp = 1.
pub fn dense_stationary(n: usize, edges: &[(usize, usize, f64)], tau: f64) -> Vec<f64> {
    let mut w = DMatrix::<f64>::zeros(n, n);
    for &(u, v, x) in edges {
        w[(u, v)] += x;
    }
    let mut p_prime = DMatrix::<f64>::zeros(n, n);
    for u in 0..n {
        let out: f64 = (0..n).map(|v| w[(u, v)]).sum();
        for v in 0..n {
            let walk = if out > 0.0 { w[(u, v)] / out } else { 1.0 / n as f64 };
            p_prime[(u, v)] = (1.0 - tau) * walk + tau / n as f64;
        }
    }
    let mut a = DMatrix::<f64>::identity(n, n) - p_prime.transpose();
    let mut b = DVector::<f64>::zeros(n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    b[n - 1] = 1.0;
    let p = a.lu().solve(&b).expect("ergodic chain has a unique solution");
    p.iter().copied().collect()
}

/// Edge flows of the teleporting walk, teleport steps unrecorded.
pub fn dense_edge_flows(n: usize, edges: &[(usize, usize, f64)], tau: f64, p: &[f64]) -> Vec<(usize, usize, f64)> {
    let mut out = vec![0.0; n];
    for &(u, _, x) in edges {
        out[u] += x;
    }
    edges
        .iter()
        .map(|&(u, v, x)| (u, v, (1.0 - tau) * p[u] * x / out[u]))
        .collect()
}

fn entropy_bits(weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|&w| {
            let p = w / total;
            -p * p.log2()
        })
        .sum()
}

/// Map equation written out as q·H(Q) + Σ p↻·H(P_i).
pub fn map_equation_entropy_form(assignment: &[usize], visit: &[f64], edge_flows: &[(usize, usize, f64)]) -> f64 {
    let m = assignment.iter().max().map_or(0, |x| x + 1);
    let mut exit = vec![0.0; m];
    for &(u, v, q) in edge_flows {
        if u != v && assignment[u] != assignment[v] {
            exit[assignment[u]] += q;
        }
    }
    let q_total: f64 = exit.iter().sum();
    let mut len = q_total * entropy_bits(&exit);
    for i in 0..m {
        let mut codebook = vec![exit[i]];
        codebook.extend(
            assignment
                .iter()
                .zip(visit)
                .filter(|(a, _)| **a == i)
                .map(|(_, p)| *p),
        );
        let rate: f64 = codebook.iter().sum();
        len += rate * entropy_bits(&codebook);
    }
    len
}

/// Every set partition of 0..n as a restricted growth string.
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        let blocks = cur.iter().max().map_or(0, |m| m + 1);
        for b in 0..=blocks {
            cur.push(b);
            rec(n, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if n > 0 {
        rec(n, &mut Vec::with_capacity(n), &mut out);
    }
    out
}

/// Minimum codelength over all partitions, using the dense flow oracle.
pub fn exhaustive_min_codelength(n: usize, edges: &[(usize, usize, f64)], tau: f64) -> (f64, Vec<usize>) {
    let p = dense_stationary(n, edges, tau);
    let flows = dense_edge_flows(n, edges, tau, &p);
    set_partitions(n)
        .into_iter()
        .map(|a| (map_equation_entropy_form(&a, &p, &flows), a))
        .fold((f64::INFINITY, Vec::new()), |best, x| if x.0 < best.0 { x } else { best })
}

/// Quadratic trip rule: for each arrival, scan ahead for the first event in
/// another municipality. Input tuples are (user, time, municipality), sorted.
pub fn brute_force_trips(events: &[(u32, i64, u32)], dwell: i64) -> Vec<(u32, u32, u32, i64, i64)> {
    let mut out = Vec::new();
    for i in 1..events.len() {
        let (a, b) = (events[i - 1], events[i]);
        if a.0 != b.0 || a.2 == b.2 {
            continue;
        }
        let mut satisfied = true;
        for e in &events[i + 1..] {
            if e.0 != b.0 {
                break;
            }
            if e.2 != b.2 {
                satisfied = e.1 - b.1 >= dwell;
                break;
            }
        }
        if satisfied {
            out.push((b.0, a.2, b.2, a.1, b.1));
        }
    }
    out
}
