//! CART trees grown level by level over presorted feature columns.
//!
//! Every level walks each feature's global sort order once, so a level costs
//! `O(n_samples * n_features)` regardless of how many nodes it holds. Split
//! candidates are midpoints between consecutive distinct values inside a
//! node; the candidate with the lowest child cost wins, ties going to the
//! lower feature index and then the smaller threshold.

use ndarray::{Array2, ArrayView1};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fitted tree. `x[feature] <= threshold` goes left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: Box<Node>, right: Box<Node> },
}

impl Node {
    pub fn predict(&self, row: ArrayView1<f64>) -> f64 {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    node = if row[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            Node::Leaf { .. } => 1,
            Node::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    pub(crate) fn max_feature(&self) -> Option<usize> {
        match self {
            Node::Leaf { .. } => None,
            Node::Split { feature, left, right, .. } => {
                Some([Some(*feature), left.max_feature(), right.max_feature()].into_iter().flatten().max().unwrap())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Weighted Gini impurity on 0/1 targets.
    Gini,
    /// Weighted squared error around the node mean.
    SquaredError,
}

/// Per-split feature subsampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    #[default]
    All,
    /// `max(1, floor(sqrt(d)))` features drawn per node.
    Sqrt,
}

impl MaxFeatures {
    pub fn count(self, n_features: usize) -> usize {
        match self {
            MaxFeatures::All => n_features,
            MaxFeatures::Sqrt => ((n_features as f64).sqrt().floor() as usize).clamp(1, n_features.max(1)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self { max_depth: 8, min_samples_leaf: 5 }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(Error::Config("tree needs max_depth >= 1 and min_samples_leaf >= 1".into()));
        }
        Ok(())
    }
}

/// Column-major copy of a feature matrix with each column's argsort. Built
/// once and shared by every tree of an ensemble.
#[derive(Debug, Clone)]
pub struct Presorted {
    columns: Vec<Vec<f64>>,
    order: Vec<Vec<u32>>,
}

impl Presorted {
    pub fn new(features: &Array2<f64>) -> Result<Self> {
        if features.iter().any(|v| v.is_nan()) {
            return Err(Error::Data("features contain NaN".into()));
        }
        let columns: Vec<Vec<f64>> = features.columns().into_iter().map(|c| c.to_vec()).collect();
        let order = columns
            .iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..col.len() as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Ok(Self { columns, order })
    }

    pub fn n_samples(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.columns[feature][row]
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Stats {
    w: f64,
    wy: f64,
    wyy: f64,
    n: usize,
}

impl Stats {
    fn add(&mut self, w: f64, y: f64) {
        self.w += w;
        self.wy += w * y;
        self.wyy += w * y * y;
        self.n += 1;
    }

    fn minus(&self, o: &Stats) -> Stats {
        Stats { w: self.w - o.w, wy: self.wy - o.wy, wyy: self.wyy - o.wyy, n: self.n - o.n }
    }

    fn cost(&self, criterion: Criterion) -> f64 {
        if self.w <= 0.0 {
            return 0.0;
        }
        match criterion {
            Criterion::Gini => 2.0 * self.wy * (self.w - self.wy) / self.w,
            Criterion::SquaredError => self.wyy - self.wy * self.wy / self.w,
        }
    }
}

/// Threshold between consecutive values `lo < hi` that sends `lo` left and
/// `hi` right, even when the two are adjacent floats.
pub fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) * 0.5;
    if m >= hi || m < lo {
        lo
    } else {
        m
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    cost: f64,
    feature: usize,
    threshold: f64,
}

struct Frontier {
    arena_id: usize,
    stats: Stats,
    depth: usize,
    features: Option<Vec<bool>>,
    splittable: bool,
    // scan state for the current feature
    left: Stats,
    last: f64,
    best: Option<Candidate>,
}

enum ArenaNode {
    Leaf,
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// A grown tree whose leaves have not been given values yet.
pub struct GrownTree {
    arena: Vec<ArenaNode>,
    /// Arena id of the leaf each training row ended in (`usize::MAX` for rows
    /// with zero weight).
    pub leaf_of_row: Vec<usize>,
}

impl GrownTree {
    /// Number of arena nodes; leaf ids are below this.
    pub fn n_nodes(&self) -> usize {
        self.arena.len()
    }

    /// Arena ids of all leaves.
    pub fn leaves(&self) -> Vec<usize> {
        (0..self.arena.len()).filter(|&i| matches!(self.arena[i], ArenaNode::Leaf)).collect()
    }

    /// Leaf reached by row `row` of `data`.
    pub fn route(&self, data: &Presorted, row: usize) -> usize {
        let mut id = 0;
        while let ArenaNode::Split { feature, threshold, left, right } = self.arena[id] {
            id = if data.value(row, feature) <= threshold { left } else { right };
        }
        id
    }

    /// Converts to a nested [`Node`] using `value(leaf_id)` for every leaf.
    pub fn into_node(self, value: impl Fn(usize) -> f64) -> Node {
        fn build(arena: &[ArenaNode], id: usize, value: &dyn Fn(usize) -> f64) -> Node {
            match arena[id] {
                ArenaNode::Leaf => Node::Leaf { value: value(id) },
                ArenaNode::Split { feature, threshold, left, right } => Node::Split {
                    feature,
                    threshold,
                    left: Box::new(build(arena, left, value)),
                    right: Box::new(build(arena, right, value)),
                },
            }
        }
        build(&self.arena, 0, &value)
    }
}

/// Grows a tree on rows with positive `weights`, fitting `targets` under
/// `criterion`. With `max_features` below `All`, each node draws its feature
/// subset from `rng` in level order.
pub fn grow_tree<R: Rng>(
    data: &Presorted,
    targets: &[f64],
    weights: &[f64],
    criterion: Criterion,
    params: &TreeParams,
    max_features: MaxFeatures,
    rng: &mut R,
) -> GrownTree {
    const NONE: u32 = u32::MAX;
    let n = data.n_samples();
    let d = data.n_features();
    let k_features = max_features.count(d);

    let mut slot_of: Vec<u32> = weights.iter().map(|&w| if w > 0.0 { 0 } else { NONE }).collect();
    let mut root = Stats::default();
    for i in 0..n {
        if slot_of[i] != NONE {
            root.add(weights[i], targets[i]);
        }
    }
    let mut arena = vec![ArenaNode::Leaf];
    let mut leaf_of_row = vec![usize::MAX; n];
    let new_frontier = |arena_id, stats, depth| Frontier {
        arena_id,
        stats,
        depth,
        features: None,
        splittable: false,
        left: Stats::default(),
        last: f64::NAN,
        best: None,
    };
    let mut frontier = vec![new_frontier(0, root, 0)];

    while !frontier.is_empty() {
        let mut any = false;
        for node in frontier.iter_mut() {
            node.splittable = node.depth < params.max_depth
                && node.stats.n >= 2 * params.min_samples_leaf
                && node.stats.cost(criterion) > 0.0;
            if node.splittable {
                any = true;
                if k_features < d {
                    let mut mask = vec![false; d];
                    for f in sample_indices(rng, d, k_features) {
                        mask[f] = true;
                    }
                    node.features = Some(mask);
                }
            }
        }
        if !any {
            break;
        }

        for f in 0..d {
            if !frontier.iter().any(|nd| nd.splittable && nd.features.as_ref().is_none_or(|m| m[f])) {
                continue;
            }
            for nd in frontier.iter_mut() {
                nd.left = Stats::default();
            }
            let col = &data.columns[f];
            for &i in &data.order[f] {
                let i = i as usize;
                let s = slot_of[i];
                if s == NONE {
                    continue;
                }
                let nd = &mut frontier[s as usize];
                if !nd.splittable || nd.features.as_ref().is_some_and(|m| !m[f]) {
                    continue;
                }
                let v = col[i];
                if nd.left.n > 0 && v > nd.last {
                    let right = nd.stats.minus(&nd.left);
                    if nd.left.n >= params.min_samples_leaf && right.n >= params.min_samples_leaf {
                        let cost = nd.left.cost(criterion) + right.cost(criterion);
                        if nd.best.is_none_or(|b| cost < b.cost) {
                            nd.best = Some(Candidate { cost, feature: f, threshold: midpoint(nd.last, v) });
                        }
                    }
                }
                nd.left.add(weights[i], targets[i]);
                nd.last = v;
            }
        }

        // children slots, indexed by the old slot
        let mut next = Vec::new();
        let mut child_slots: Vec<Option<(u32, u32)>> = Vec::with_capacity(frontier.len());
        let mut split_of: Vec<Option<Candidate>> = Vec::with_capacity(frontier.len());
        for nd in &frontier {
            match nd.best.filter(|_| nd.splittable) {
                Some(c) => {
                    let (l, r) = (arena.len(), arena.len() + 1);
                    arena.push(ArenaNode::Leaf);
                    arena.push(ArenaNode::Leaf);
                    arena[nd.arena_id] =
                        ArenaNode::Split { feature: c.feature, threshold: c.threshold, left: l, right: r };
                    let ls = next.len() as u32;
                    next.push(new_frontier(l, Stats::default(), nd.depth + 1));
                    next.push(new_frontier(r, Stats::default(), nd.depth + 1));
                    child_slots.push(Some((ls, ls + 1)));
                    split_of.push(Some(c));
                }
                None => {
                    child_slots.push(None);
                    split_of.push(None);
                }
            }
        }
        for i in 0..n {
            let s = slot_of[i];
            if s == NONE {
                continue;
            }
            match (child_slots[s as usize], split_of[s as usize]) {
                (Some((l, r)), Some(c)) => {
                    let slot = if data.columns[c.feature][i] <= c.threshold { l } else { r };
                    next[slot as usize].stats.add(weights[i], targets[i]);
                    slot_of[i] = slot;
                }
                _ => {
                    leaf_of_row[i] = frontier[s as usize].arena_id;
                    slot_of[i] = NONE;
                }
            }
        }
        frontier = next;
    }
    for i in 0..n {
        if slot_of[i] != NONE {
            leaf_of_row[i] = frontier[slot_of[i] as usize].arena_id;
        }
    }
    GrownTree { arena, leaf_of_row }
}

/// Weighted class-1 fraction per leaf, indexed by arena id.
pub(crate) fn leaf_fractions(tree: &GrownTree, labels: &[f64], weights: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; tree.arena.len()];
    let mut wy = vec![0.0; tree.arena.len()];
    for (i, &leaf) in tree.leaf_of_row.iter().enumerate() {
        if leaf != usize::MAX {
            w[leaf] += weights[i];
            wy[leaf] += weights[i] * labels[i];
        }
    }
    w.iter().zip(&wy).map(|(&w, &wy)| if w > 0.0 { wy / w } else { 0.0 }).collect()
}

/// Grows a Gini tree and labels leaves with their weighted class-1 fraction.
pub(crate) fn fit_classification_tree<R: Rng>(
    data: &Presorted,
    labels: &[f64],
    weights: &[f64],
    params: &TreeParams,
    max_features: MaxFeatures,
    rng: &mut R,
) -> Node {
    let grown = grow_tree(data, labels, weights, Criterion::Gini, params, max_features, rng);
    let fractions = leaf_fractions(&grown, labels, weights);
    grown.into_node(|id| fractions[id])
}

/// A single CART classification tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub params: TreeParams,
    pub feature_count: usize,
    pub root: Node,
}

impl TreeModel {
    pub fn predict_row(&self, row: ArrayView1<f64>) -> f64 {
        self.root.predict(row)
    }
}

pub fn fit_tree(features: &Array2<f64>, labels: &[u8], params: &TreeParams) -> Result<TreeModel> {
    params.validate()?;
    super::check_training(features, labels)?;
    let data = Presorted::new(features)?;
    let y: Vec<f64> = labels.iter().map(|&v| f64::from(v)).collect();
    let w = vec![1.0; y.len()];
    // MaxFeatures::All draws nothing from the generator
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let root = fit_classification_tree(&data, &y, &w, params, MaxFeatures::All, &mut rng);
    Ok(TreeModel { params: *params, feature_count: features.ncols(), root })
}
