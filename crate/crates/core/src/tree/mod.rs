//! Model-based recursive partitioning with score-based split selection.

mod split;

pub use split::{
    rank_split_variables, select_cutpoint, select_split_variable, variable_test, VariableChoice, VariableTest,
};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CenteredDesign, Dataset};
use crate::error::{HteError, Result};
use crate::models::{self, ModelFamily, ModelParams, NodeFit, Obs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeConfig {
    /// Minimum number of observations in each child of a split.
    pub min_node_size: usize,
    /// Candidate variables per split; `None` uses all covariates.
    pub mtry: Option<usize>,
    /// Stop when the Bonferroni-adjusted minimum p-value exceeds this level.
    pub alpha: f64,
    pub max_depth: Option<usize>,
    pub seed: u64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            min_node_size: 14,
            mtry: None,
            alpha: 1.0,
            max_depth: None,
            seed: 0,
        }
    }
}

impl TreeConfig {
    pub fn validate(&self, family: ModelFamily) -> Result<()> {
        // two observations per column of the (mu, tau) score
        if self.min_node_size < 4 {
            return Err(HteError::Argument(format!(
                "min_node_size {} is too small for family {family}",
                self.min_node_size
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(HteError::Argument("alpha must lie in (0, 1]".into()));
        }
        if self.mtry == Some(0) {
            return Err(HteError::Argument("mtry must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NodeKind {
    Internal {
        var: usize,
        cutpoint: f64,
        /// Unadjusted p-value of the split-variable test.
        p_value: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    /// Training row indices falling into this leaf.
    Leaf { members: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    pub depth: usize,
    pub n: usize,
    pub params: ModelParams,
    /// The node's own fit failed or saw a single treatment arm; `params`
    /// are copied from the parent.
    #[serde(default)]
    pub inherited: bool,
    #[serde(default)]
    pub capped: bool,
    pub kind: NodeKind,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf { .. })
    }

    /// Leaf reached by covariate vector `x`.
    pub fn leaf_for(&self, x: &[f64]) -> &TreeNode {
        let mut node = self;
        while let NodeKind::Internal {
            var,
            cutpoint,
            left,
            right,
            ..
        } = &node.kind
        {
            node = if x[*var] <= *cutpoint { left } else { right };
        }
        node
    }

    pub fn leaves(&self) -> Vec<&TreeNode> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            match &node.kind {
                NodeKind::Leaf { .. } => out.push(node),
                NodeKind::Internal { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        out
    }

    pub fn members(&self) -> &[usize] {
        match &self.kind {
            NodeKind::Leaf { members } => members,
            NodeKind::Internal { .. } => &[],
        }
    }

    pub fn node_count(&self) -> usize {
        match &self.kind {
            NodeKind::Leaf { .. } => 1,
            NodeKind::Internal { left, right, .. } => 1 + left.node_count() + right.node_count(),
        }
    }

    pub fn depth_below(&self) -> usize {
        match &self.kind {
            NodeKind::Leaf { .. } => 0,
            NodeKind::Internal { left, right, .. } => 1 + left.depth_below().max(right.depth_below()),
        }
    }
}

/// Counters collected while growing a tree.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrowthStats {
    pub capped_fits: usize,
    pub inherited_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub root: TreeNode,
    /// Sorted training rows used to grow the tree.
    pub subsample: Vec<usize>,
    pub stats: GrowthStats,
}

impl Tree {
    pub fn leaf_for(&self, x: &[f64]) -> &TreeNode {
        self.root.leaf_for(x)
    }

    pub fn contains(&self, row: usize) -> bool {
        self.subsample.binary_search(&row).is_ok()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Shared, prepared inputs for growing many trees on one dataset.
pub(crate) struct GrowContext<'a> {
    pub family: ModelFamily,
    pub obs: Vec<Obs>,
    pub columns: Vec<Vec<f64>>,
    pub treatment: Vec<u8>,
    pub _data: &'a Dataset,
}

impl<'a> GrowContext<'a> {
    pub fn new(data: &'a Dataset, family: ModelFamily, design: &CenteredDesign) -> Result<Self> {
        Ok(GrowContext {
            family,
            obs: models::prepare_obs(family, data, design)?,
            columns: data.covariate_columns(),
            treatment: data.samples().iter().map(|s| s.treatment).collect(),
            _data: data,
        })
    }

    fn node_obs(&self, members: &[usize]) -> Vec<Obs> {
        members.iter().map(|&i| self.obs[i]).collect()
    }

    fn both_arms(&self, members: &[usize]) -> bool {
        let treated = members.iter().filter(|&&i| self.treatment[i] == 1).count();
        treated > 0 && treated < members.len()
    }
}

struct Grower<'c, 'a> {
    ctx: &'c GrowContext<'a>,
    cfg: &'c TreeConfig,
    mtry: usize,
    rng: ChaCha8Rng,
    next_id: usize,
    stats: GrowthStats,
}

impl Grower<'_, '_> {
    fn leaf(&mut self, members: Vec<usize>, depth: usize, fit: &NodeFit, inherited: bool) -> TreeNode {
        let id = self.next_id;
        self.next_id += 1;
        TreeNode {
            id,
            depth,
            n: members.len(),
            params: fit.params.clone(),
            inherited,
            capped: fit.capped,
            kind: NodeKind::Leaf { members },
        }
    }

    /// Split variable and cutpoint for a node, trying variables in order of
    /// significance until one admits a cutpoint.
    fn find_split(&mut self, members: &[usize], fit: &NodeFit) -> Option<(usize, f64, f64)> {
        let ctx = self.ctx;
        let obs = ctx.node_obs(members);
        let scores = models::score_obs(ctx.family, &fit.params, &obs).ok()?;
        let p = ctx.columns.len();
        let mut candidates: Vec<usize> = if self.mtry >= p {
            (0..p).collect()
        } else {
            index::sample(&mut self.rng, p, self.mtry).into_vec()
        };
        candidates.sort_unstable();
        let node_cols: Vec<Vec<f64>> = candidates
            .iter()
            .map(|&j| members.iter().map(|&i| ctx.columns[j][i]).collect())
            .collect();
        let mut by_var: Vec<&[f64]> = vec![&[]; p];
        for (k, &j) in candidates.iter().enumerate() {
            by_var[j] = &node_cols[k];
        }
        let tests = rank_split_variables(&scores, &by_var, &candidates);
        let best = tests.first()?;
        if (best.p_value() * tests.len() as f64).min(1.0) > self.cfg.alpha {
            return None;
        }
        tests.iter().find_map(|t| {
            select_cutpoint(&scores, by_var[t.var], self.cfg.min_node_size).map(|c| (t.var, c, t.p_value()))
        })
    }

    fn grow(&mut self, members: Vec<usize>, fit: NodeFit, depth: usize, inherited: bool) -> TreeNode {
        let min = self.cfg.min_node_size;
        let at_max_depth = self.cfg.max_depth.is_some_and(|d| depth >= d);
        if fit.capped {
            self.stats.capped_fits += 1;
        }
        if inherited || members.len() < 2 * min || at_max_depth || fit.degenerate {
            return self.leaf(members, depth, &fit, inherited);
        }
        let Some((var, cutpoint, p_value)) = self.find_split(&members, &fit) else {
            return self.leaf(members, depth, &fit, false);
        };
        let column = &self.ctx.columns[var];
        let (left, right): (Vec<usize>, Vec<usize>) = members.iter().partition(|&&i| column[i] <= cutpoint);
        let id = self.next_id;
        self.next_id += 1;
        let left_node = self.child(left, &fit, depth + 1);
        let right_node = self.child(right, &fit, depth + 1);
        TreeNode {
            id,
            depth,
            n: members.len(),
            params: fit.params,
            inherited: false,
            capped: fit.capped,
            kind: NodeKind::Internal {
                var,
                cutpoint,
                p_value,
                left: Box::new(left_node),
                right: Box::new(right_node),
            },
        }
    }

    fn child(&mut self, members: Vec<usize>, parent: &NodeFit, depth: usize) -> TreeNode {
        let fit = if self.ctx.both_arms(&members) {
            models::fit_obs(self.ctx.family, &self.ctx.node_obs(&members)).ok()
        } else {
            None
        };
        match fit {
            Some(fit) => self.grow(members, fit, depth, false),
            None => {
                self.stats.inherited_nodes += 1;
                self.grow(members, parent.clone(), depth, true)
            }
        }
    }
}

pub(crate) fn grow_with_context(ctx: &GrowContext<'_>, cfg: &TreeConfig, subsample: Vec<usize>) -> Result<Tree> {
    cfg.validate(ctx.family)?;
    let mut subsample = subsample;
    subsample.sort_unstable();
    subsample.dedup();
    if subsample.is_empty() {
        return Err(HteError::Argument("empty subsample".into()));
    }
    if let Some(&last) = subsample.last() {
        if last >= ctx.obs.len() {
            return Err(HteError::Argument(format!("subsample index {last} out of range")));
        }
    }
    let root_fit = models::fit_obs(ctx.family, &ctx.node_obs(&subsample))?;
    let p = ctx.columns.len();
    let mut grower = Grower {
        ctx,
        cfg,
        mtry: cfg.mtry.unwrap_or(p).min(p),
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        next_id: 0,
        stats: GrowthStats::default(),
    };
    let root = grower.grow(subsample.clone(), root_fit, 0, false);
    Ok(Tree {
        root,
        subsample,
        stats: grower.stats,
    })
}

/// Grows one tree on the rows in `subsample`.
///
/// Each node is fitted, its scores tested against every candidate
/// covariate, and split at the best cutpoint of the most significant
/// variable. Growth stops at `min_node_size`, `max_depth`, when no variable
/// passes `alpha`, or when the node fit is degenerate.
pub fn grow_tree(
    data: &Dataset,
    family: ModelFamily,
    design: &CenteredDesign,
    cfg: &TreeConfig,
    subsample: &[usize],
) -> Result<Tree> {
    let ctx = GrowContext::new(data, family, design)?;
    grow_with_context(&ctx, cfg, subsample.to_vec())
}
