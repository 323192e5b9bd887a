//! Primal network simplex for the balanced transportation problem.
//!
//! Sources and sinks hang off an artificial root through big-M arcs, which
//! gives a strongly feasible starting tree. The leaving arc follows
//! Cunningham's rule, so degenerate pivots cannot cycle. Entering arcs come
//! from a cyclic block search that keeps the most negative candidate of the
//! first block holding one.
//!
//! The spanning tree is stored as a preorder thread with subtree sizes and
//! last successors, so re-hanging a subtree and shifting its potentials walk
//! contiguous thread segments instead of child lists.

use ndarray::Array2;

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

struct Network {
    m: usize,
    n: usize,
    art_cost: f64,
}

impl Network {
    fn root(&self) -> usize {
        self.m + self.n
    }

    fn real_arcs(&self) -> usize {
        self.m * self.n
    }

    fn arc_count(&self) -> usize {
        self.real_arcs() + self.m + self.n
    }

    /// `(tail, head)` of an arc.
    fn ends(&self, arc: usize) -> (usize, usize) {
        let mn = self.real_arcs();
        if arc < mn {
            (arc / self.n, self.m + arc % self.n)
        } else {
            let v = arc - mn;
            if v < self.m {
                (v, self.root())
            } else {
                (self.root(), v)
            }
        }
    }

    fn arc_cost(&self, flat: &[f64], arc: usize) -> f64 {
        let mn = self.real_arcs();
        if arc < mn {
            flat[arc]
        } else if arc - mn < self.m {
            0.0
        } else {
            self.art_cost
        }
    }
}

/// Spanning tree in thread form. `up[v]` is true when `pred[v]` points from
/// `v` to `parent[v]`.
struct Tree {
    parent: Vec<usize>,
    pred: Vec<usize>,
    up: Vec<bool>,
    thread: Vec<usize>,
    rev_thread: Vec<usize>,
    succ_num: Vec<usize>,
    last_succ: Vec<usize>,
    dirty: Vec<usize>,
}

impl Tree {
    /// Every node hangs directly off `root`, in index order.
    fn star(nodes: usize, root: usize) -> Self {
        let mut t = Tree {
            parent: vec![root; nodes],
            pred: vec![NONE; nodes],
            up: vec![false; nodes],
            thread: vec![0; nodes],
            rev_thread: vec![0; nodes],
            succ_num: vec![1; nodes],
            last_succ: (0..nodes).collect(),
            dirty: Vec::new(),
        };
        t.parent[root] = NONE;
        t.succ_num[root] = nodes;
        t.last_succ[root] = root.checked_sub(1).unwrap_or(root);
        t.thread[root] = 0;
        t.rev_thread[0] = root;
        for u in 0..root {
            t.thread[u] = u + 1;
            t.rev_thread[u + 1] = u;
        }
        t
    }

    fn join(&self, mut u: usize, mut v: usize) -> usize {
        while u != v {
            if self.succ_num[u] < self.succ_num[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        u
    }

    /// Cuts the subtree holding `u_out` (whose tree arc leaves) and hangs it
    /// from `v_in` through `in_arc`, re-rooting it at `u_in`.
    fn rehang(
        &mut self,
        in_arc: usize,
        u_in: usize,
        v_in: usize,
        u_out: usize,
        join: usize,
        in_up: bool,
    ) {
        let old_rev_thread = self.rev_thread[u_out];
        let old_succ_num = self.succ_num[u_out];
        let old_last_succ = self.last_succ[u_out];
        let v_out = self.parent[u_out];

        if u_in == u_out {
            self.parent[u_in] = v_in;
            self.pred[u_in] = in_arc;
            self.up[u_in] = in_up;
            if self.thread[v_in] != u_out {
                let after = self.thread[old_last_succ];
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
                let after = self.thread[v_in];
                self.thread[v_in] = u_out;
                self.rev_thread[u_out] = v_in;
                self.thread[old_last_succ] = after;
                self.rev_thread[after] = old_last_succ;
            }
        } else {
            // when u_out directly follows v_in in the thread, join and v_out coincide
            let thread_continue = if old_rev_thread == v_in {
                self.thread[old_last_succ]
            } else {
                self.thread[v_in]
            };

            // walk the stem from u_in up to u_out, splicing each subtree after the previous one
            let mut stem = u_in;
            let mut par_stem = v_in;
            let mut last = self.last_succ[u_in];
            let mut after = self.thread[last];
            self.thread[v_in] = u_in;
            self.dirty.clear();
            self.dirty.push(v_in);
            while stem != u_out {
                let next_stem = self.parent[stem];
                self.thread[last] = next_stem;
                self.dirty.push(last);

                let before = self.rev_thread[stem];
                self.thread[before] = after;
                self.rev_thread[after] = before;

                self.parent[stem] = par_stem;
                par_stem = stem;
                stem = next_stem;

                last = if self.last_succ[stem] == self.last_succ[par_stem] {
                    self.rev_thread[par_stem]
                } else {
                    self.last_succ[stem]
                };
                after = self.thread[last];
            }
            self.parent[u_out] = par_stem;
            self.thread[last] = thread_continue;
            self.rev_thread[thread_continue] = last;
            self.last_succ[u_out] = last;

            if old_rev_thread != v_in {
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
            }
            for &u in &self.dirty {
                self.rev_thread[self.thread[u]] = u;
            }

            // stem arcs flip direction; sizes and last successors follow the new rooting
            let mut tmp_sc = 0;
            let tmp_ls = self.last_succ[u_out];
            let mut u = u_out;
            while u != u_in {
                let p = self.parent[u];
                self.pred[u] = self.pred[p];
                self.up[u] = !self.up[p];
                tmp_sc += self.succ_num[u] - self.succ_num[p];
                self.succ_num[u] = tmp_sc;
                self.last_succ[p] = tmp_ls;
                u = p;
            }
            self.pred[u_in] = in_arc;
            self.up[u_in] = in_up;
            self.succ_num[u_in] = old_succ_num;
        }

        let up_limit_out = if self.last_succ[join] == v_in {
            join
        } else {
            NONE
        };
        let last_succ_out = self.last_succ[u_out];
        let mut u = v_in;
        while u != NONE && self.last_succ[u] == v_in {
            self.last_succ[u] = last_succ_out;
            u = self.parent[u];
        }
        let replacement = if join != old_rev_thread && v_in != old_rev_thread {
            Some(old_rev_thread)
        } else if last_succ_out != old_last_succ {
            Some(last_succ_out)
        } else {
            None
        };
        if let Some(r) = replacement {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = r;
                u = self.parent[u];
            }
        }

        let mut u = v_in;
        while u != join {
            self.succ_num[u] += old_succ_num;
            u = self.parent[u];
        }
        let mut u = v_out;
        while u != join {
            self.succ_num[u] -= old_succ_num;
            u = self.parent[u];
        }
    }
}

/// Optimal flows `(source, sink, amount)` with `amount > 0`. Supplies must be
/// strictly positive and balanced; the caller checks both.
pub(crate) fn solve(a: &[f64], b: &[f64], cost: &Array2<f64>) -> Result<Vec<(usize, usize, f64)>> {
    let (m, n) = (a.len(), b.len());
    let max_cost = cost.iter().fold(0.0_f64, |acc, c| acc.max(c.abs()));
    let net = Network {
        m,
        n,
        art_cost: (max_cost + 1.0) * (m + n + 1) as f64,
    };
    let nodes = m + n + 1;
    let root = net.root();
    let arcs = net.arc_count();
    let mn = net.real_arcs();
    let tol = 1e-12 * max_cost.max(f64::MIN_POSITIVE);
    let flat: Vec<f64> = cost.iter().copied().collect();

    let mut flow = vec![0.0; arcs];
    let mut in_tree = vec![false; arcs];
    let mut pi = vec![0.0; nodes];
    let mut tree = Tree::star(nodes, root);
    for v in 0..m + n {
        let arc = mn + v;
        tree.pred[v] = arc;
        in_tree[arc] = true;
        if v < m {
            tree.up[v] = true;
            flow[arc] = a[v];
        } else {
            flow[arc] = b[v - m];
            pi[v] = net.art_cost;
        }
    }

    let block = ((arcs as f64).sqrt().ceil() as usize).max(10);
    let max_pivots = 1000 * nodes as u64 + 10 * arcs as u64;
    let mut next = 0usize;
    let mut pivots = 0u64;
    loop {
        // entering arc: most negative reduced cost in the first block that has one
        let mut best = -tol;
        let mut entering = NONE;
        let mut seen = 0usize;
        let mut in_block = 0usize;
        let mut e = next;
        let (mut i, mut j) = if e < mn { (e / n, e % n) } else { (0, 0) };
        while seen < arcs {
            if !in_tree[e] {
                let rc = if e < mn {
                    flat[e] + pi[i] - pi[m + j]
                } else {
                    let (s, t) = net.ends(e);
                    net.arc_cost(&flat, e) + pi[s] - pi[t]
                };
                if rc < best {
                    best = rc;
                    entering = e;
                }
            }
            seen += 1;
            in_block += 1;
            e += 1;
            j += 1;
            if j == n {
                j = 0;
                i += 1;
            }
            if e == arcs {
                e = 0;
                (i, j) = (0, 0);
            }
            if in_block == block {
                if entering != NONE {
                    break;
                }
                in_block = 0;
            }
        }
        next = e;
        if entering == NONE {
            break;
        }
        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::Internal(
                "network simplex exceeded its pivot budget".into(),
            ));
        }

        let (first, second) = net.ends(entering);
        let join = tree.join(first, second);

        // leaving arc (Cunningham): last blocking arc met when walking the cycle from the join
        let mut delta = f64::INFINITY;
        let mut u_out = NONE;
        let mut side = 0u8;
        let mut w = first;
        while w != join {
            if tree.up[w] && flow[tree.pred[w]] < delta {
                delta = flow[tree.pred[w]];
                u_out = w;
                side = 1;
            }
            w = tree.parent[w];
        }
        let mut w = second;
        while w != join {
            if !tree.up[w] && flow[tree.pred[w]] <= delta {
                delta = flow[tree.pred[w]];
                u_out = w;
                side = 2;
            }
            w = tree.parent[w];
        }
        if side == 0 {
            return Err(Error::Internal("unbounded transportation cycle".into()));
        }

        if delta > 0.0 {
            flow[entering] += delta;
            let mut w = first;
            while w != join {
                flow[tree.pred[w]] += if tree.up[w] { -delta } else { delta };
                w = tree.parent[w];
            }
            let mut w = second;
            while w != join {
                flow[tree.pred[w]] += if tree.up[w] { delta } else { -delta };
                w = tree.parent[w];
            }
        }
        let leaving = tree.pred[u_out];
        flow[leaving] = 0.0;
        in_tree[leaving] = false;
        in_tree[entering] = true;

        let (u_in, v_in) = if side == 1 {
            (first, second)
        } else {
            (second, first)
        };
        tree.rehang(entering, u_in, v_in, u_out, join, side == 1);

        // the re-hung subtree moves by the entering arc's reduced cost
        let shift = if side == 1 { -best } else { best };
        let end = tree.thread[tree.last_succ[u_in]];
        let mut u = u_in;
        while u != end {
            pi[u] += shift;
            u = tree.thread[u];
        }
    }
    log::debug!("network simplex {m}x{n}: {pivots} pivots");

    let mut out = Vec::new();
    for arc in 0..mn {
        if in_tree[arc] && flow[arc] > 0.0 {
            out.push((arc / n, arc % n, flow[arc]));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Checks the thread, sizes and last successors against a rebuild from `parent`.
    fn assert_consistent(t: &Tree, root: usize) {
        let nodes = t.parent.len();
        let mut seen = vec![false; nodes];
        let mut u = root;
        let mut order = Vec::new();
        for _ in 0..nodes {
            assert!(!seen[u], "thread revisits {u}");
            seen[u] = true;
            order.push(u);
            assert_eq!(t.rev_thread[t.thread[u]], u);
            u = t.thread[u];
        }
        assert_eq!(u, root, "thread is not a single cycle");
        let pos: Vec<usize> = {
            let mut p = vec![0; nodes];
            for (k, &v) in order.iter().enumerate() {
                p[v] = k;
            }
            p
        };
        for v in 0..nodes {
            // the subtree of v is the thread segment starting at v
            let size = t.succ_num[v];
            let seg: Vec<usize> = order[pos[v]..pos[v] + size].to_vec();
            assert_eq!(
                *seg.last().unwrap(),
                t.last_succ[v],
                "last successor of {v}"
            );
            for &w in &seg {
                let mut x = w;
                while x != v {
                    x = t.parent[x];
                    assert_ne!(x, NONE, "{w} is not below {v}");
                }
            }
        }
    }

    #[test]
    fn rehang_keeps_the_thread_consistent() {
        // random pivots on a 6 + 5 transportation network, checking the tree after each one
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (m, n) = (6, 5);
            let net = Network {
                m,
                n,
                art_cost: 100.0,
            };
            let root = net.root();
            let mut tree = Tree::star(m + n + 1, root);
            let mut in_tree = vec![false; net.arc_count()];
            for v in 0..m + n {
                tree.pred[v] = net.real_arcs() + v;
                tree.up[v] = v < m;
                in_tree[net.real_arcs() + v] = true;
            }
            for _ in 0..60 {
                let arc = rng.random_range(0..net.real_arcs());
                if in_tree[arc] {
                    continue;
                }
                let (first, second) = net.ends(arc);
                let join = tree.join(first, second);
                // any tree arc on the cycle may leave
                let mut cycle = Vec::new();
                let mut w = first;
                while w != join {
                    cycle.push((w, 1u8));
                    w = tree.parent[w];
                }
                let mut w = second;
                while w != join {
                    cycle.push((w, 2u8));
                    w = tree.parent[w];
                }
                let (u_out, side) = cycle[rng.random_range(0..cycle.len())];
                in_tree[tree.pred[u_out]] = false;
                in_tree[arc] = true;
                let (u_in, v_in) = if side == 1 {
                    (first, second)
                } else {
                    (second, first)
                };
                tree.rehang(arc, u_in, v_in, u_out, join, side == 1);
                assert_consistent(&tree, root);
                assert_eq!(tree.pred[u_in], arc);
                for v in 0..root {
                    let (s, t) = net.ends(tree.pred[v]);
                    let expect = if tree.up[v] {
                        (v, tree.parent[v])
                    } else {
                        (tree.parent[v], v)
                    };
                    assert_eq!((s, t), expect, "orientation of node {v}");
                }
            }
        }
    }
}
