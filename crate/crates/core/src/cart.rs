//! Least-squares regression trees used by the nuisance learners.

use rand::seq::index;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct CartParams {
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Candidate variables per split (all if `>= p`).
    pub mtry: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Split {
        var: usize,
        cut: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct RegressionTree {
    nodes: Vec<Node>,
}

/// Training rows of each leaf, indexed by the leaf's node id.
pub(crate) struct LeafRows(pub Vec<(usize, Vec<usize>)>);

struct Builder<'a, R: Rng> {
    columns: &'a [Vec<f64>],
    target: &'a [f64],
    params: CartParams,
    rng: &'a mut R,
    nodes: Vec<Node>,
    leaves: Vec<(usize, Vec<usize>)>,
}

impl<R: Rng> Builder<'_, R> {
    fn best_split(&mut self, rows: &[usize]) -> Option<(usize, f64)> {
        let p = self.columns.len();
        let min = self.params.min_leaf.max(1);
        let n = rows.len();
        if n < 2 * min {
            return None;
        }
        let mut vars: Vec<usize> = if self.params.mtry >= p {
            (0..p).collect()
        } else {
            index::sample(self.rng, p, self.params.mtry).into_vec()
        };
        vars.sort_unstable();
        let total: f64 = rows.iter().map(|&i| self.target[i]).sum();
        let base = total * total / n as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted = rows.to_vec();
        for &j in &vars {
            let x = &self.columns[j];
            sorted.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
            let mut left = 0.0;
            for k in 0..n - 1 {
                left += self.target[sorted[k]];
                let nl = k + 1;
                if nl < min || n - nl < min || x[sorted[k]] == x[sorted[k + 1]] {
                    continue;
                }
                let right = total - left;
                let gain = left * left / nl as f64 + right * right / (n - nl) as f64 - base;
                if gain > 1e-12 * (1.0 + base.abs()) && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, j, 0.5 * (x[sorted[k]] + x[sorted[k + 1]])));
                }
            }
        }
        best.map(|(_, j, c)| (j, c))
    }

    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        let mean = rows.iter().map(|&i| self.target[i]).sum::<f64>() / rows.len().max(1) as f64;
        self.nodes.push(Node::Leaf { value: mean });
        if self.params.max_depth.is_some_and(|d| depth >= d) {
            self.leaves.push((id, rows));
            return id;
        }
        let Some((var, cut)) = self.best_split(&rows) else {
            self.leaves.push((id, rows));
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.columns[var][i] <= cut);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id] = Node::Split { var, cut, left, right };
        id
    }
}

impl RegressionTree {
    /// Grows a tree on `rows`; leaves hold the mean target.
    pub fn grow<R: Rng>(
        columns: &[Vec<f64>],
        target: &[f64],
        rows: Vec<usize>,
        params: CartParams,
        rng: &mut R,
    ) -> (RegressionTree, LeafRows) {
        let mut b = Builder {
            columns,
            target,
            params,
            rng,
            nodes: Vec::new(),
            leaves: Vec::new(),
        };
        b.build(rows, 0);
        (RegressionTree { nodes: b.nodes }, LeafRows(b.leaves))
    }

    pub fn set_leaf_value(&mut self, node: usize, value: f64) {
        if let Node::Leaf { value: v } = &mut self.nodes[node] {
            *v = value;
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut id = 0;
        loop {
            match self.nodes[id] {
                Node::Leaf { value } => return value,
                Node::Split { var, cut, left, right } => {
                    id = if x[var] <= cut { left } else { right };
                }
            }
        }
    }

    #[cfg(test)]
    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn recovers_a_step() {
        let x: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|&v| if v < 20.0 { 1.0 } else { 3.0 }).collect();
        let params = CartParams {
            max_depth: Some(2),
            min_leaf: 5,
            mtry: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (tree, leaves) = RegressionTree::grow(&[x], &y, (0..40).collect(), params, &mut rng);
        assert_eq!(tree.predict(&[3.0]), 1.0);
        assert_eq!(tree.predict(&[33.0]), 3.0);
        assert_eq!(leaves.0.iter().map(|(_, r)| r.len()).sum::<usize>(), 40);
        assert_eq!(tree.leaf_count(), 2);
    }

    #[test]
    fn respects_min_leaf() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = (0..10).map(|i| if i == 9 { 100.0 } else { 0.0 }).collect();
        let params = CartParams {
            max_depth: None,
            min_leaf: 3,
            mtry: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, leaves) = RegressionTree::grow(&[x], &y, (0..10).collect(), params, &mut rng);
        assert!(leaves.0.iter().all(|(_, r)| r.len() >= 3));
    }
}
