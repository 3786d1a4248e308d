//! Greedy multilevel map-equation minimization.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::flow::{stationary_flow, StationaryFlow, DEFAULT_MAX_ITERATIONS, DEFAULT_TELEPORT, DEFAULT_TOLERANCE};
use super::graph::FlowGraph;
use super::mapeq::{map_equation, plogp};
use crate::error::Result;

/// Moves must lower the codelength by more than this many bits.
pub const MIN_GAIN: f64 = 1e-12;
const MIN_ROUND_IMPROVEMENT: f64 = 1e-10;
const MAX_SWEEPS: usize = 200;
const MAX_TUNE_ROUNDS: usize = 50;
const MAX_ENUMERATED: usize = 10;
const SAMPLED_SUBSETS: usize = 16;
const SUBSET_BUDGET: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfomapConfig {
    pub teleport: f64,
    pub trials: usize,
    pub seed: u64,
}

impl Default for InfomapConfig {
    fn default() -> Self {
        Self {
            teleport: DEFAULT_TELEPORT,
            trials: 10,
            seed: 0,
        }
    }
}

/// Node → module assignment with its codelength.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    /// Module ids are 0..module_count, numbered by first member.
    pub assignment: Vec<usize>,
    pub codelength: f64,
    pub module_count: usize,
}

impl Partition {
    pub fn from_assignment(assignment: &[usize], flow: &StationaryFlow) -> Self {
        let mut relabel = HashMap::new();
        let assignment: Vec<usize> = assignment
            .iter()
            .map(|m| {
                let next = relabel.len();
                *relabel.entry(*m).or_insert(next)
            })
            .collect();
        Self {
            codelength: map_equation(&assignment, flow),
            module_count: relabel.len(),
            assignment,
        }
    }

    /// Member node indices of each module.
    pub fn modules(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.module_count];
        for (node, &m) in self.assignment.iter().enumerate() {
            out[m].push(node);
        }
        out
    }
}

/// Incremental vs from-scratch codelength after one optimization level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelCheck {
    pub incremental: f64,
    pub recomputed: f64,
}

/// Sparse adjacency without self-loops, at leaf or module level.
struct LevelGraph {
    flow: Vec<f64>,
    exit: Vec<f64>,
    out: Vec<Vec<(usize, f64)>>,
    inn: Vec<Vec<(usize, f64)>>,
}

impl LevelGraph {
    fn leaf(flow: &StationaryFlow) -> Self {
        Self::build(flow.visit_rates.clone(), flow.edge_flows.iter().copied())
    }

    fn build(node_flow: Vec<f64>, edges: impl Iterator<Item = (usize, usize, f64)>) -> Self {
        let n = node_flow.len();
        let mut out = vec![Vec::new(); n];
        let mut inn = vec![Vec::new(); n];
        let mut exit = vec![0.0; n];
        for (u, v, q) in edges {
            if u != v && q > 0.0 {
                out[u].push((v, q));
                inn[v].push((u, q));
                exit[u] += q;
            }
        }
        Self {
            flow: node_flow,
            exit,
            out,
            inn,
        }
    }

    fn len(&self) -> usize {
        self.flow.len()
    }

    fn is_isolated(&self, u: usize) -> bool {
        self.out[u].is_empty() && self.inn[u].is_empty()
    }

    /// Collapses each module of `assignment` (ids < len) into one node.
    /// Returns the module graph and the node → module-node map.
    fn aggregate(&self, assignment: &[usize]) -> (Self, Vec<usize>) {
        let mut index = vec![usize::MAX; self.len()];
        let mut count = 0;
        for &m in assignment {
            if index[m] == usize::MAX {
                index[m] = count;
                count += 1;
            }
        }
        let node_to_super: Vec<usize> = assignment.iter().map(|&m| index[m]).collect();
        let mut flow = vec![0.0; count];
        for (u, &s) in node_to_super.iter().enumerate() {
            flow[s] += self.flow[u];
        }
        let mut merged: HashMap<(usize, usize), f64> = HashMap::new();
        for (u, edges) in self.out.iter().enumerate() {
            for &(v, q) in edges {
                let (a, b) = (node_to_super[u], node_to_super[v]);
                if a != b {
                    *merged.entry((a, b)).or_insert(0.0) += q;
                }
            }
        }
        let mut edges: Vec<_> = merged.into_iter().map(|((a, b), q)| (a, b, q)).collect();
        edges.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
        (Self::build(flow, edges.into_iter()), node_to_super)
    }
}

/// Module flows plus the running sums the codelength is assembled from.
struct Modules {
    flow: Vec<f64>,
    exit: Vec<f64>,
    size: Vec<usize>,
    sum_exit: f64,
    sum_plogp_exit: f64,
    sum_plogp_total: f64,
}

impl Modules {
    fn new(g: &LevelGraph, assignment: &[usize]) -> Self {
        let n = g.len();
        let mut m = Self {
            flow: vec![0.0; n],
            exit: vec![0.0; n],
            size: vec![0; n],
            sum_exit: 0.0,
            sum_plogp_exit: 0.0,
            sum_plogp_total: 0.0,
        };
        for u in 0..n {
            let a = assignment[u];
            m.flow[a] += g.flow[u];
            m.size[a] += 1;
            for &(v, q) in &g.out[u] {
                if assignment[v] != a {
                    m.exit[a] += q;
                }
            }
        }
        m.sum_exit = m.exit.iter().sum();
        m.sum_plogp_exit = m.exit.iter().map(|&q| plogp(q)).sum();
        m.sum_plogp_total = m.exit.iter().zip(&m.flow).map(|(&q, &p)| plogp(q + p)).sum();
        m
    }

    fn codelength(&self, node_term: f64) -> f64 {
        plogp(self.sum_exit) - 2.0 * self.sum_plogp_exit - node_term + self.sum_plogp_total
    }

    /// Exit/flow of `old` and `new` after moving a node with the given
    /// flow, exit, and flows to/from the two modules' other members.
    fn moved(&self, node_flow: f64, node_exit: f64, old: usize, new: usize, old_links: (f64, f64), new_links: (f64, f64)) -> [(f64, f64); 2] {
        let old_exit = if self.size[old] == 1 {
            0.0
        } else {
            (self.exit[old] - node_exit + old_links.0 + old_links.1).max(0.0)
        };
        let old_flow = if self.size[old] == 1 { 0.0 } else { (self.flow[old] - node_flow).max(0.0) };
        let new_exit = (self.exit[new] + node_exit - new_links.0 - new_links.1).max(0.0);
        [(old_exit, old_flow), (new_exit, self.flow[new] + node_flow)]
    }

    fn delta(&self, old: usize, new: usize, after: [(f64, f64); 2]) -> f64 {
        let [(oe, of), (ne, nf)] = after;
        let (oe0, of0, ne0, nf0) = (self.exit[old], self.flow[old], self.exit[new], self.flow[new]);
        let sum_exit = self.sum_exit - oe0 - ne0 + oe + ne;
        let d_exit = plogp(oe) + plogp(ne) - plogp(oe0) - plogp(ne0);
        let d_total = plogp(oe + of) + plogp(ne + nf) - plogp(oe0 + of0) - plogp(ne0 + nf0);
        plogp(sum_exit) - plogp(self.sum_exit) - 2.0 * d_exit + d_total
    }

    fn apply(&mut self, old: usize, new: usize, after: [(f64, f64); 2]) {
        let [(oe, of), (ne, nf)] = after;
        let (oe0, of0, ne0, nf0) = (self.exit[old], self.flow[old], self.exit[new], self.flow[new]);
        self.sum_exit += oe + ne - oe0 - ne0;
        self.sum_plogp_exit += plogp(oe) + plogp(ne) - plogp(oe0) - plogp(ne0);
        self.sum_plogp_total += plogp(oe + of) + plogp(ne + nf) - plogp(oe0 + of0) - plogp(ne0 + nf0);
        self.exit[old] = oe;
        self.flow[old] = of;
        self.exit[new] = ne;
        self.flow[new] = nf;
        self.size[old] -= 1;
        self.size[new] += 1;
    }
}

/// Sweeps nodes in random order, moving each to the neighbouring module
/// (or a fresh empty one) with the largest codelength decrease, until a
/// sweep moves nothing. Returns the number of moves.
fn core_loop(g: &LevelGraph, assignment: &mut [usize], modules: &mut Modules, rng: &mut ChaCha8Rng) -> usize {
    let n = g.len();
    let mut free: Vec<usize> = (0..n).filter(|&m| modules.size[m] == 0).collect();
    let mut out_acc = vec![0.0; n];
    let mut in_acc = vec![0.0; n];
    let mut seen = vec![false; n];
    let mut touched = Vec::new();
    let mut order: Vec<usize> = (0..n).filter(|&u| !g.is_isolated(u)).collect();
    let mut total_moves = 0;

    for _ in 0..MAX_SWEEPS {
        order.shuffle(rng);
        let mut moves = 0;
        for &u in &order {
            let old = assignment[u];
            for &(v, q) in &g.out[u] {
                let m = assignment[v];
                if !seen[m] {
                    seen[m] = true;
                    touched.push(m);
                }
                out_acc[m] += q;
            }
            for &(v, q) in &g.inn[u] {
                let m = assignment[v];
                if !seen[m] {
                    seen[m] = true;
                    touched.push(m);
                }
                in_acc[m] += q;
            }
            let old_links = (out_acc[old], in_acc[old]);
            let mut best: Option<(usize, f64, [(f64, f64); 2])> = None;
            let mut consider = |target: usize, links: (f64, f64)| {
                let after = modules.moved(g.flow[u], g.exit[u], old, target, old_links, links);
                let d = modules.delta(old, target, after);
                if d < best.map_or(-MIN_GAIN, |b| b.1) {
                    best = Some((target, d, after));
                }
            };
            for &m in &touched {
                if m != old {
                    consider(m, (out_acc[m], in_acc[m]));
                }
            }
            if modules.size[old] > 1 {
                if let Some(&empty) = free.last() {
                    consider(empty, (0.0, 0.0));
                }
            }
            for &m in &touched {
                seen[m] = false;
                out_acc[m] = 0.0;
                in_acc[m] = 0.0;
            }
            touched.clear();

            if let Some((target, _, after)) = best {
                if free.last() == Some(&target) {
                    free.pop();
                }
                modules.apply(old, target, after);
                assignment[u] = target;
                if modules.size[old] == 0 {
                    free.push(old);
                }
                moves += 1;
            }
        }
        total_moves += moves;
        if moves == 0 {
            break;
        }
    }
    total_moves
}

/// Core loop from singletons plus aggregation on a graph with no leaf
/// trace. Returns node → module.
fn optimize_standalone(g: &LevelGraph, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut assignment: Vec<usize> = (0..g.len()).collect();
    let mut modules = Modules::new(g, &assignment);
    core_loop(g, &mut assignment, &mut modules, rng);
    loop {
        let (h, to_node) = g.aggregate(&assignment);
        let mut node_assignment: Vec<usize> = (0..h.len()).collect();
        let mut modules = Modules::new(&h, &node_assignment);
        let moves = core_loop(&h, &mut node_assignment, &mut modules, rng);
        assignment = to_node.iter().map(|&s| node_assignment[s]).collect();
        if moves == 0 {
            return assignment;
        }
    }
}

struct Optimizer<'a> {
    flow: &'a StationaryFlow,
    leaf: LevelGraph,
    node_term: f64,
}

impl<'a> Optimizer<'a> {
    fn new(flow: &'a StationaryFlow) -> Self {
        Self {
            flow,
            leaf: LevelGraph::leaf(flow),
            node_term: flow.visit_rates.iter().map(|&p| plogp(p)).sum(),
        }
    }

    /// Leaf-level pass from `init`, then repeated aggregation into module
    /// nodes until a level makes no move. Returns leaf → module.
    fn multilevel(&self, init: &[usize], rng: &mut ChaCha8Rng, trace: &mut Vec<LevelCheck>) -> Vec<usize> {
        let mut assignment = init.to_vec();
        let mut modules = Modules::new(&self.leaf, &assignment);
        core_loop(&self.leaf, &mut assignment, &mut modules, rng);
        self.check(&modules, &assignment, trace);
        loop {
            let (g, leaf_to_node) = self.leaf.aggregate(&assignment);
            let mut node_assignment: Vec<usize> = (0..g.len()).collect();
            let mut modules = Modules::new(&g, &node_assignment);
            let moves = core_loop(&g, &mut node_assignment, &mut modules, rng);
            assignment = leaf_to_node.iter().map(|&s| node_assignment[s]).collect();
            self.check(&modules, &assignment, trace);
            if moves == 0 {
                return assignment;
            }
        }
    }

    fn check(&self, modules: &Modules, assignment: &[usize], trace: &mut Vec<LevelCheck>) {
        trace.push(LevelCheck {
            incremental: modules.codelength(self.node_term),
            recomputed: map_equation(assignment, self.flow),
        });
    }

    /// Splits every module into submodules found by optimizing its
    /// internal links alone, then moves whole submodules between modules
    /// before continuing with [`Self::multilevel`].
    fn coarse_tune(&self, current: &[usize], rng: &mut ChaCha8Rng, trace: &mut Vec<LevelCheck>) -> Vec<usize> {
        let sub = self.submodules(current, rng);
        let (g, leaf_to_sub) = self.leaf.aggregate(&sub);
        let mut relabel = HashMap::new();
        let mut sub_module = vec![0; g.len()];
        for (u, &s) in leaf_to_sub.iter().enumerate() {
            let next = relabel.len();
            sub_module[s] = *relabel.entry(current[u]).or_insert(next);
        }
        let mut modules = Modules::new(&g, &sub_module);
        core_loop(&g, &mut sub_module, &mut modules, rng);
        let assignment: Vec<usize> = leaf_to_sub.iter().map(|&s| sub_module[s]).collect();
        self.check(&modules, &assignment, trace);
        self.multilevel(&assignment, rng, trace)
    }

    /// Leaf → submodule, labelled by a member leaf so ids stay below n.
    fn submodules(&self, current: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
        let n = self.leaf.len();
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (u, &m) in current.iter().enumerate() {
            members[m].push(u);
        }
        let mut sub: Vec<usize> = (0..n).collect();
        let mut local = vec![usize::MAX; n];
        for nodes in members.iter().filter(|m| m.len() > 1) {
            for (i, &u) in nodes.iter().enumerate() {
                local[u] = i;
            }
            let edges = nodes.iter().flat_map(|&u| {
                let local = &local;
                self.leaf.out[u]
                    .iter()
                    .filter(move |(v, _)| current[*v] == current[u])
                    .map(move |&(v, q)| (local[u], local[v], q))
            });
            let g = LevelGraph::build(nodes.iter().map(|&u| self.leaf.flow[u]).collect(), edges.collect::<Vec<_>>().into_iter());
            let parts = optimize_standalone(&g, rng);
            for (i, &u) in nodes.iter().enumerate() {
                sub[u] = nodes[parts[i]];
            }
        }
        sub
    }

    /// Looks for a subset of one module whose joint move to another
    /// module (or a fresh one) lowers the codelength, and applies the
    /// first one found. Modules up to [`MAX_ENUMERATED`] members offer all
    /// their splits, larger ones random connected subsets; at most
    /// [`SUBSET_BUDGET`] candidates are tried per call.
    fn subset_move(&self, current: &[usize], rng: &mut ChaCha8Rng) -> Option<Vec<usize>> {
        let n = self.leaf.len();
        let modules = Modules::new(&self.leaf, current);
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (u, &m) in current.iter().enumerate() {
            members[m].push(u);
        }
        let empty = (0..n).find(|&m| modules.size[m] == 0);
        let mut candidates: Vec<Vec<usize>> = Vec::new();
        for nodes in members.iter().filter(|m| m.len() > 1) {
            if nodes.len() <= MAX_ENUMERATED {
                candidates.extend(
                    (1u32..1 << (nodes.len() - 1))
                        .map(|mask| (1..nodes.len()).filter(|i| mask >> (i - 1) & 1 == 1).map(|i| nodes[i]).collect()),
                );
            } else {
                candidates.extend((0..SAMPLED_SUBSETS).map(|_| self.connected_subset(nodes, current, rng)));
            }
        }
        if candidates.len() > SUBSET_BUDGET {
            candidates.partial_shuffle(rng, SUBSET_BUDGET);
            candidates.truncate(SUBSET_BUDGET);
        } else {
            candidates.shuffle(rng);
        }
        let mut in_set = vec![false; n];
        let mut links = Vec::new();
        for set in candidates {
            for &u in &set {
                in_set[u] = true;
            }
            let found = self.best_unit_move(&set, &in_set, current, &modules, empty, &mut links);
            for &u in &set {
                in_set[u] = false;
            }
            if let Some(target) = found {
                let mut next = current.to_vec();
                for &u in &set {
                    next[u] = target;
                }
                return Some(next);
            }
        }
        None
    }

    /// Target module for moving `set` (a proper subset of one module) as a
    /// unit, if any move beats [`MIN_GAIN`]. `links` is scratch space.
    fn best_unit_move(
        &self,
        set: &[usize],
        in_set: &[bool],
        current: &[usize],
        modules: &Modules,
        empty: Option<usize>,
        links: &mut Vec<(usize, f64, f64)>,
    ) -> Option<usize> {
        let old = current[set[0]];
        let mut flow = 0.0;
        let mut exit = 0.0;
        links.clear();
        let add = |links: &mut Vec<(usize, f64, f64)>, m: usize, out: f64, inn: f64| match links.iter_mut().find(|l| l.0 == m) {
            Some(l) => {
                l.1 += out;
                l.2 += inn;
            }
            None => links.push((m, out, inn)),
        };
        for &u in set {
            flow += self.leaf.flow[u];
            for &(v, q) in &self.leaf.out[u] {
                if !in_set[v] {
                    exit += q;
                    add(links, current[v], q, 0.0);
                }
            }
            for &(v, q) in &self.leaf.inn[u] {
                if !in_set[v] {
                    add(links, current[v], 0.0, q);
                }
            }
        }
        let old_links = links.iter().find(|l| l.0 == old).map_or((0.0, 0.0), |l| (l.1, l.2));
        links.sort_by_key(|l| l.0);
        let mut best: Option<(usize, f64)> = None;
        let targets = links.iter().filter(|l| l.0 != old).map(|l| (l.0, (l.1, l.2)));
        for (target, l) in targets.chain(empty.map(|m| (m, (0.0, 0.0)))) {
            let after = modules.moved(flow, exit, old, target, old_links, l);
            let d = modules.delta(old, target, after);
            if d < best.map_or(-MIN_GAIN, |b| b.1) {
                best = Some((target, d));
            }
        }
        best.map(|b| b.0)
    }

    /// Random subset of a module grown along its internal links from a
    /// random member, holding at most half the members.
    fn connected_subset(&self, nodes: &[usize], current: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
        let m = current[nodes[0]];
        let target = rng.gen_range(1..=nodes.len() / 2);
        let mut set = vec![*nodes.choose(rng).expect("non-empty module")];
        let mut frontier = set.clone();
        while set.len() < target {
            let Some(u) = frontier.pop() else { break };
            let mut next: Vec<usize> = self.leaf.out[u]
                .iter()
                .chain(&self.leaf.inn[u])
                .map(|e| e.0)
                .filter(|&v| current[v] == m && !set.contains(&v))
                .collect();
            next.sort_unstable();
            next.dedup();
            next.shuffle(rng);
            for v in next {
                if set.len() < target {
                    set.push(v);
                    frontier.insert(0, v);
                }
            }
        }
        set
    }

    /// One trial: optimize from `start`, then alternate fine and coarse
    /// re-optimization while the codelength improves. When both stall,
    /// subsets of modules are tried as units.
    fn trial(&self, start: &[usize], rng: &mut ChaCha8Rng, trace: &mut Vec<LevelCheck>) -> (Vec<usize>, f64) {
        let mut best = self.multilevel(start, rng, trace);
        let mut best_len = map_equation(&best, self.flow);
        for _ in 0..MAX_TUNE_ROUNDS {
            let mut improved = false;
            for coarse in [false, true] {
                let next = if coarse {
                    self.coarse_tune(&best, rng, trace)
                } else {
                    self.multilevel(&best, rng, trace)
                };
                let len = map_equation(&next, self.flow);
                if len < best_len - MIN_ROUND_IMPROVEMENT {
                    best = next;
                    best_len = len;
                    improved = true;
                }
            }
            if improved {
                continue;
            }
            if let Some(moved) = self.subset_move(&best, rng) {
                let next = self.multilevel(&moved, rng, trace);
                let len = map_equation(&next, self.flow);
                if len < best_len - MIN_ROUND_IMPROVEMENT {
                    best = next;
                    best_len = len;
                    improved = true;
                }
            }
            if !improved {
                break;
            }
        }
        (best, best_len)
    }

    /// All connected nodes in one module, isolated nodes on their own.
    fn one_module(&self) -> Vec<usize> {
        let n = self.leaf.len();
        let first = (0..n).find(|&u| !self.leaf.is_isolated(u)).unwrap_or(0);
        (0..n).map(|u| if self.leaf.is_isolated(u) { u } else { first }).collect()
    }
}

fn run(flow: &StationaryFlow, trials: usize, seed: u64, trace: bool) -> (Partition, Vec<LevelCheck>) {
    let opt = Optimizer::new(flow);
    let trials = trials.max(1);
    let singletons: Vec<usize> = (0..opt.leaf.len()).collect();
    let one = opt.one_module();
    // The extra last trial refines the one-module partition.
    let results: Vec<(Vec<usize>, f64, Vec<LevelCheck>)> = (0..=trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let mut checks = Vec::new();
            let start = if t < trials { &singletons } else { &one };
            let (a, l) = opt.trial(start, &mut rng, &mut checks);
            if !trace {
                checks.clear();
            }
            (a, l, checks)
        })
        .collect();
    let mut checks = Vec::new();
    let mut best: Option<(Vec<usize>, f64)> = None;
    for (a, l, c) in results {
        checks.extend(c);
        if best.as_ref().is_none_or(|b| l < b.1) {
            best = Some((a, l));
        }
    }
    let (mut assignment, len) = best.expect("at least one trial");
    if map_equation(&one, flow) <= len {
        assignment = one;
    }
    (Partition::from_assignment(&assignment, flow), checks)
}

/// Best partition over `trials` seeded trials on the graph's stationary
/// flow. Deterministic for a given (seed, trials).
pub fn infomap(g: &FlowGraph, cfg: &InfomapConfig) -> Result<Partition> {
    let flow = stationary_flow(g, cfg.teleport, DEFAULT_TOLERANCE, DEFAULT_MAX_ITERATIONS)?;
    Ok(infomap_on_flow(&flow, cfg.trials, cfg.seed))
}

pub fn infomap_on_flow(flow: &StationaryFlow, trials: usize, seed: u64) -> Partition {
    run(flow, trials, seed, false).0
}

/// Like [`infomap_on_flow`], also returning the codelength consistency
/// check recorded after every optimization level of every trial.
pub fn infomap_traced(flow: &StationaryFlow, trials: usize, seed: u64) -> (Partition, Vec<LevelCheck>) {
    run(flow, trials, seed, true)
}
