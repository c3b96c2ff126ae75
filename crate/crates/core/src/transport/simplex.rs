//! Primal network simplex for the uncapacitated transportation problem.
//!
//! The bipartite graph has `m` supply nodes, `n` demand nodes and one
//! artificial root. Arc `a < m*n` runs from supply `a / n` to demand `a % n`;
//! the initial basis is the star of artificial arcs through the root. Since
//! arcs are uncapacitated, every non-tree arc carries zero flow, so the whole
//! primal state lives on the spanning tree (one predecessor arc per node).
//!
//! The tree is kept strongly feasible with the usual leaving-arc rule (last
//! blocking arc along the cycle oriented from the join node), which rules out
//! cycling under degeneracy. Pricing is deterministic block search.

use crate::error::{Error, Result};
use crate::num::Real;

const NONE: usize = usize::MAX;

/// Optimal basis returned by [`solve`].
#[derive(Debug, Clone)]
pub(crate) struct Basis<T> {
    /// `(row, col, flow)` for every real tree arc (flows may be zero).
    pub arcs: Vec<(usize, usize, T)>,
    /// Flow left on artificial arcs; only rounding residue for balanced input.
    pub artificial_flow: T,
    /// Row duals `u` and column duals `v` with `u_i + v_j <= c_ij`.
    pub u: Vec<T>,
    pub v: Vec<T>,
    pub pivots: usize,
}

struct Tree<'a, T> {
    m: usize,
    n: usize,
    root: usize,
    cost: &'a [T],
    art_cost: T,
    parent: Vec<usize>,
    pred: Vec<usize>,
    /// Predecessor arc is oriented child -> parent.
    up: Vec<bool>,
    flow: Vec<T>,
    depth: Vec<usize>,
    pi: Vec<T>,
    first_child: Vec<usize>,
    next_sib: Vec<usize>,
    prev_sib: Vec<usize>,
    stack: Vec<usize>,
}

impl<'a, T: Real> Tree<'a, T> {
    fn new(cost: &'a [T], m: usize, n: usize, supply: &[T], demand: &[T], art_cost: T) -> Self {
        let nodes = m + n + 1;
        let root = m + n;
        let mut t = Tree {
            m,
            n,
            root,
            cost,
            art_cost,
            parent: vec![root; nodes],
            pred: (0..nodes).map(|v| m * n + v).collect(),
            up: vec![false; nodes],
            flow: vec![T::zero(); nodes],
            depth: vec![1; nodes],
            pi: vec![T::zero(); nodes],
            first_child: vec![NONE; nodes],
            next_sib: vec![NONE; nodes],
            prev_sib: vec![NONE; nodes],
            stack: Vec::new(),
        };
        t.parent[root] = NONE;
        t.pred[root] = NONE;
        t.depth[root] = 0;
        for i in 0..m {
            t.up[i] = true;
            t.flow[i] = supply[i];
        }
        for j in 0..n {
            let v = m + j;
            t.flow[v] = demand[j];
            t.pi[v] = art_cost;
        }
        for v in (0..root).rev() {
            t.link_child(root, v);
        }
        t
    }

    #[inline]
    fn arc_ends(&self, arc: usize) -> (usize, usize) {
        let real = self.m * self.n;
        if arc < real {
            (arc / self.n, self.m + arc % self.n)
        } else {
            let v = arc - real;
            if v < self.m {
                (v, self.root)
            } else {
                (self.root, v)
            }
        }
    }

    #[inline]
    fn arc_cost(&self, arc: usize) -> T {
        let real = self.m * self.n;
        if arc < real {
            self.cost[arc]
        } else if arc - real < self.m {
            T::zero()
        } else {
            self.art_cost
        }
    }

    fn link_child(&mut self, p: usize, c: usize) {
        let head = self.first_child[p];
        self.next_sib[c] = head;
        self.prev_sib[c] = NONE;
        if head != NONE {
            self.prev_sib[head] = c;
        }
        self.first_child[p] = c;
    }

    fn unlink_child(&mut self, p: usize, c: usize) {
        let (prev, next) = (self.prev_sib[c], self.next_sib[c]);
        if prev == NONE {
            self.first_child[p] = next;
        } else {
            self.next_sib[prev] = next;
        }
        if next != NONE {
            self.prev_sib[next] = prev;
        }
        self.prev_sib[c] = NONE;
        self.next_sib[c] = NONE;
    }

    /// Block-search pricing over real arcs; returns the most negative
    /// reduced cost of the first block containing a violating arc.
    fn find_entering(&self, next_arc: &mut usize, block: usize, eps: T) -> Option<(usize, T)> {
        let total = self.m * self.n;
        let n = self.n;
        let pi_dem = &self.pi[self.m..self.m + n];
        let mut best = -eps;
        let mut best_arc = NONE;
        let mut scanned = 0;
        let mut in_block = 0;
        let mut e = *next_arc;
        while scanned < total {
            let i = e / n;
            let j0 = e % n;
            let seg = (n - j0).min(block - in_block).min(total - scanned);
            let pi_i = self.pi[i];
            let row = &self.cost[i * n + j0..i * n + j0 + seg];
            for (k, (&c, &pj)) in row.iter().zip(&pi_dem[j0..j0 + seg]).enumerate() {
                let rc = c + pi_i - pj;
                if rc < best {
                    best = rc;
                    best_arc = e + k;
                }
            }
            scanned += seg;
            in_block += seg;
            e += seg;
            if e == total {
                e = 0;
            }
            if in_block == block {
                if best_arc != NONE {
                    *next_arc = e;
                    return Some((best_arc, best));
                }
                in_block = 0;
            }
        }
        if best_arc != NONE {
            *next_arc = e;
            Some((best_arc, best))
        } else {
            None
        }
    }

    fn join(&self, mut a: usize, mut b: usize) -> usize {
        while a != b {
            if self.depth[a] > self.depth[b] {
                a = self.parent[a];
            } else if self.depth[b] > self.depth[a] {
                b = self.parent[b];
            } else {
                a = self.parent[a];
                b = self.parent[b];
            }
        }
        a
    }

    fn pivot(&mut self, arc: usize, rc: T) -> Result<()> {
        let (s, t) = self.arc_ends(arc);
        let join = self.join(s, t);

        // Flow travels s -> t, then t up to the join, then down to s.
        let mut delta = T::infinity();
        let mut leave = NONE;
        let mut on_source_side = false;
        let mut u = s;
        while u != join {
            if self.up[u] && self.flow[u] < delta {
                delta = self.flow[u];
                leave = u;
                on_source_side = true;
            }
            u = self.parent[u];
        }
        let mut u = t;
        while u != join {
            if !self.up[u] && self.flow[u] <= delta {
                delta = self.flow[u];
                leave = u;
                on_source_side = false;
            }
            u = self.parent[u];
        }
        if leave == NONE {
            return Err(Error::SolverFailure("unbounded transportation problem".into()));
        }
        let delta = delta.max(T::zero());

        if delta > T::zero() {
            let mut u = s;
            while u != join {
                self.flow[u] = if self.up[u] {
                    self.flow[u] - delta
                } else {
                    self.flow[u] + delta
                };
                u = self.parent[u];
            }
            let mut u = t;
            while u != join {
                self.flow[u] = if self.up[u] {
                    self.flow[u] + delta
                } else {
                    self.flow[u] - delta
                };
                u = self.parent[u];
            }
        }

        // Re-hang the detached subtree: reverse the path start..=leave.
        let (start, other, start_up, sigma) = if on_source_side {
            (s, t, true, -rc)
        } else {
            (t, s, false, rc)
        };
        let mut carry_pred = arc;
        let mut carry_up = start_up;
        let mut carry_flow = delta;
        let mut new_parent = other;
        let mut v = start;
        loop {
            let old_parent = self.parent[v];
            let (old_pred, old_up, old_flow) = (self.pred[v], self.up[v], self.flow[v]);
            self.unlink_child(old_parent, v);
            self.parent[v] = new_parent;
            self.pred[v] = carry_pred;
            self.up[v] = carry_up;
            self.flow[v] = carry_flow;
            self.link_child(new_parent, v);
            if v == leave {
                break;
            }
            carry_pred = old_pred;
            carry_up = !old_up;
            carry_flow = old_flow;
            new_parent = v;
            v = old_parent;
        }

        // Shift potentials and depths of the re-hung subtree.
        self.stack.clear();
        self.stack.push(start);
        while let Some(x) = self.stack.pop() {
            self.pi[x] = self.pi[x] + sigma;
            self.depth[x] = self.depth[self.parent[x]] + 1;
            let mut c = self.first_child[x];
            while c != NONE {
                self.stack.push(c);
                c = self.next_sib[c];
            }
        }
        Ok(())
    }

    /// Recompute potentials from the root so every tree arc has exactly
    /// zero reduced cost; removes drift from incremental updates.
    fn recompute_potentials(&mut self) {
        self.pi[self.root] = T::zero();
        self.stack.clear();
        let mut c = self.first_child[self.root];
        while c != NONE {
            self.stack.push(c);
            c = self.next_sib[c];
        }
        while let Some(x) = self.stack.pop() {
            let p = self.parent[x];
            let cost = self.arc_cost(self.pred[x]);
            self.pi[x] = if self.up[x] {
                self.pi[p] - cost
            } else {
                self.pi[p] + cost
            };
            self.depth[x] = self.depth[p] + 1;
            let mut c = self.first_child[x];
            while c != NONE {
                self.stack.push(c);
                c = self.next_sib[c];
            }
        }
    }
}

/// Solve `min sum C_ij c_ij` subject to row sums `supply` and column sums
/// `demand` for a dense row-major `m x n` cost matrix.
pub(crate) fn solve<T: Real>(cost: &[T], m: usize, n: usize, supply: &[T], demand: &[T]) -> Result<Basis<T>> {
    debug_assert_eq!(cost.len(), m * n);
    let max_cost = cost.iter().fold(T::zero(), |acc, &c| acc.max(c.abs()));
    let nodes = m + n + 1;
    let art_cost = (max_cost + T::one()) * T::count(nodes);
    // Reduced costs mix potentials of magnitude ~art_cost; stay above their rounding noise.
    let eps = T::epsilon() * art_cost * T::lit(4.0);

    let mut tree = Tree::new(cost, m, n, supply, demand, art_cost);
    let total = m * n;
    let block = ((total as f64).sqrt().ceil() as usize).max(10).min(total.max(1));
    let max_pivots = 50 * total + 10 * nodes + 1000;
    let mut next_arc = 0;
    let mut pivots = 0;

    loop {
        while let Some((arc, rc)) = tree.find_entering(&mut next_arc, block, eps) {
            tree.pivot(arc, rc)?;
            pivots += 1;
            if pivots > max_pivots {
                return Err(Error::SolverFailure(format!("no convergence after {pivots} pivots")));
            }
        }
        tree.recompute_potentials();
        // Re-price against the drift-free potentials before declaring optimality.
        next_arc = 0;
        match tree.find_entering(&mut next_arc, total.max(1), eps) {
            Some((arc, rc)) => {
                tree.pivot(arc, rc)?;
                pivots += 1;
            }
            None => break,
        }
    }

    let real = m * n;
    let mut arcs = Vec::with_capacity(m + n);
    let mut artificial_flow = T::zero();
    for v in 0..tree.root {
        let a = tree.pred[v];
        if a < real {
            arcs.push((a / n, a % n, tree.flow[v]));
        } else {
            artificial_flow = artificial_flow + tree.flow[v].abs();
        }
    }
    let shift = if m > 0 { tree.pi[0] } else { T::zero() };
    let u = (0..m).map(|i| shift - tree.pi[i]).collect();
    let v = (0..n).map(|j| tree.pi[m + j] - shift).collect();
    Ok(Basis {
        arcs,
        artificial_flow,
        u,
        v,
        pivots,
    })
}
