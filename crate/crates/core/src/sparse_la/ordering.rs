//! Symmetric orderings applied before factorization.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use super::SparseSym;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Ordering {
    Natural,
    /// Reverse Cuthill–McKee.
    BandReducing,
    /// Minimum degree on the elimination graph.
    #[default]
    FillReducing,
}

impl Ordering {
    /// Permutation `perm` with `perm[k]` the original index eliminated k-th.
    pub fn permutation(self, a: &SparseSym) -> Vec<usize> {
        match self {
            Ordering::Natural => (0..a.dim()).collect(),
            Ordering::BandReducing => reverse_cuthill_mckee(&a.adjacency()),
            Ordering::FillReducing => minimum_degree(a.adjacency()),
        }
    }
}

fn bfs_levels(adj: &[Vec<usize>], start: usize, allowed: &[bool]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; adj.len()];
    seen[start] = true;
    let mut levels = vec![vec![start]];
    loop {
        let mut next = Vec::new();
        for &v in levels.last().expect("non-empty") {
            for &u in &adj[v] {
                if allowed[u] && !seen[u] {
                    seen[u] = true;
                    next.push(u);
                }
            }
        }
        if next.is_empty() {
            return levels;
        }
        levels.push(next);
    }
}

fn pseudo_peripheral(adj: &[Vec<usize>], start: usize, allowed: &[bool]) -> usize {
    let mut root = start;
    let mut depth = bfs_levels(adj, root, allowed).len();
    loop {
        let levels = bfs_levels(adj, root, allowed);
        let candidate = *levels
            .last()
            .expect("non-empty")
            .iter()
            .min_by_key(|&&v| (adj[v].len(), v))
            .expect("non-empty level");
        let cand_depth = bfs_levels(adj, candidate, allowed).len();
        if cand_depth > depth {
            root = candidate;
            depth = cand_depth;
        } else {
            return root;
        }
    }
}

pub(crate) fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut unvisited = vec![true; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let seed = (0..n)
            .filter(|&v| unvisited[v])
            .min_by_key(|&v| (adj[v].len(), v))
            .expect("unvisited vertex remains");
        let root = pseudo_peripheral(adj, seed, &unvisited);
        let mut queue = VecDeque::from([root]);
        unvisited[root] = false;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = adj[v].iter().copied().filter(|&u| unvisited[u]).collect();
            nbrs.sort_unstable_by_key(|&u| (adj[u].len(), u));
            for u in nbrs {
                unvisited[u] = false;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

/// Plain minimum-degree elimination on an explicit elimination graph. Ties are
/// broken by the lowest vertex index so the ordering is deterministic.
pub(crate) fn minimum_degree(mut adj: Vec<Vec<usize>>) -> Vec<usize> {
    let n = adj.len();
    let mut eliminated = vec![false; n];
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> =
        (0..n).map(|v| Reverse((adj[v].len(), v))).collect();
    let mut order = Vec::with_capacity(n);
    let mut merged = Vec::new();
    while let Some(Reverse((deg, v))) = heap.pop() {
        if eliminated[v] || deg != adj[v].len() {
            continue;
        }
        eliminated[v] = true;
        order.push(v);
        let clique = std::mem::take(&mut adj[v]);
        for &u in &clique {
            // adj[u] <- (adj[u] ∪ clique) \ {u, v}, both sorted.
            merged.clear();
            let (a, b) = (&adj[u], &clique);
            let (mut i, mut j) = (0, 0);
            while i < a.len() || j < b.len() {
                let next = match (a.get(i), b.get(j)) {
                    (Some(&x), Some(&y)) if x == y => {
                        i += 1;
                        j += 1;
                        x
                    }
                    (Some(&x), Some(&y)) if x < y => {
                        i += 1;
                        x
                    }
                    (Some(_), Some(&y)) => {
                        j += 1;
                        y
                    }
                    (Some(&x), None) => {
                        i += 1;
                        x
                    }
                    (None, Some(&y)) => {
                        j += 1;
                        y
                    }
                    (None, None) => unreachable!(),
                };
                if next != u && next != v {
                    merged.push(next);
                }
            }
            std::mem::swap(&mut adj[u], &mut merged);
            heap.push(Reverse((adj[u].len(), u)));
        }
    }
    order
}
