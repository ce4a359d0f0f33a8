//! Dynamic graded tree over dyadic levels with dense per-level storage.
//!
//! A real node is either internal (both children real) or a leaf (children
//! absent or virtual). Virtual nodes are predicted helper cells hanging
//! off real leaves; they are rebuilt, never evolved. Gradedness means:
//! every real node at level `l >= 1` with parent `q` has real nodes at
//! `(l - 1, q +- 1)`, siblings coexist, and every real leaf sees its two
//! nearest cousins on each side.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::transform::{predict, predict_bounded, project};
use super::{level_tolerance, MRConfig, FLUX_COUSINS};
use crate::error::{Error, Result};
use crate::models::{Boundary, Domain, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum NodeKind {
    Absent,
    Internal,
    Leaf,
    Virtual,
}

impl NodeKind {
    #[inline]
    pub fn is_real(self) -> bool {
        matches!(self, NodeKind::Internal | NodeKind::Leaf)
    }

    #[inline]
    pub fn is_present(self) -> bool {
        self != NodeKind::Absent
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeKey {
    pub level: u32,
    pub index: usize,
}

impl NodeKey {
    pub fn new(level: u32, index: usize) -> Self {
        NodeKey { level, index }
    }

    pub fn parent(self) -> Option<NodeKey> {
        (self.level > 0).then(|| NodeKey::new(self.level - 1, self.index / 2))
    }

    pub fn children(self) -> [NodeKey; 2] {
        [NodeKey::new(self.level + 1, 2 * self.index), NodeKey::new(self.level + 1, 2 * self.index + 1)]
    }
}

/// One cell of the adaptive mesh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LeafCell {
    pub lo: f64,
    pub hi: f64,
    pub average: f64,
    pub level: u32,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct TreeStats {
    pub leaves: usize,
    pub internal: usize,
    pub virtual_nodes: usize,
    pub deepest: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NodeRecord {
    level: u32,
    index: usize,
    kind: NodeKind,
    average: f64,
    detail: f64,
}

/// Node index lists kept alongside the dense arrays so that per-step work
/// scales with the tree rather than with the finest grid. Ignored by `==`.
#[derive(Debug, Clone, Default)]
struct Rows {
    /// Real nodes per level, ascending.
    real: Vec<Vec<usize>>,
    /// Leaves due for splitting in the current update.
    split: Vec<NodeKey>,
}

impl PartialEq for Rows {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

/// Flat position of node `(level, index)`.
#[inline]
fn flat(roots: usize, level: usize, index: usize) -> usize {
    (roots << level) - roots + index
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradedTree {
    max_level: u32,
    min_level: u32,
    roots: usize,
    boundary: Boundary,
    domain: Domain,
    // level-major flat storage, level `l` starting at `roots * (2^l - 1)`
    kind: Vec<NodeKind>,
    avg: Vec<f64>,
    detail: Vec<f64>,
    pinned: Vec<bool>,
    deletable: Vec<bool>,
    rows: Rows,
}

impl GradedTree {
    /// Tree holding only its roots, all with average zero.
    pub fn with_roots(cfg: &MRConfig, domain: Domain, boundary: Boundary) -> Result<Self> {
        cfg.validate()?;
        let levels = cfg.max_level as usize + 1;
        let total = (cfg.roots << levels) - cfg.roots;
        let mut t = GradedTree {
            max_level: cfg.max_level,
            min_level: cfg.min_level,
            roots: cfg.roots,
            boundary,
            domain,
            kind: vec![NodeKind::Absent; total],
            avg: vec![0.0; total],
            detail: vec![0.0; total],
            pinned: vec![false; total],
            deletable: vec![false; total],
            rows: Rows { real: vec![Vec::new(); levels], split: Vec::new() },
        };
        t.kind[..cfg.roots].fill(NodeKind::Leaf);
        t.collect_real();
        Ok(t)
    }

    pub fn max_level(&self) -> u32 {
        self.max_level
    }

    pub fn roots(&self) -> usize {
        self.roots
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// Number of cells on level `l`.
    #[inline]
    pub fn width(&self, level: u32) -> usize {
        self.roots << level
    }

    pub fn cell_width(&self, level: u32) -> f64 {
        self.domain.length() / self.width(level) as f64
    }

    /// Kind as stored, which never reports virtual nodes.
    #[inline]
    fn stored(&self, level: u32, index: usize) -> NodeKind {
        self.kind[flat(self.roots, level as usize, index)]
    }

    /// Only real nodes are stored. Virtual nodes follow from them: with
    /// real support around every real parent, the cousins of a leaf up to
    /// two cells away are children of its parent's neighbours, so the
    /// children of a leaf are needed exactly when a same-level neighbour of
    /// that leaf has real children.
    pub fn kind(&self, level: u32, index: usize) -> NodeKind {
        const { assert!(FLUX_COUSINS <= 2) };
        let stored = self.kind[flat(self.roots, level as usize, index)];
        if stored != NodeKind::Absent || level == 0 {
            return stored;
        }
        let (l, p) = (level - 1, index / 2);
        let o = flat(self.roots, l as usize, 0);
        if self.kind[o + p] != NodeKind::Leaf {
            return NodeKind::Absent;
        }
        let internal = |off| self.neighbor(l, p, off).is_some_and(|n| self.kind[o + n] == NodeKind::Internal);
        if internal(-1) || internal(1) {
            NodeKind::Virtual
        } else {
            NodeKind::Absent
        }
    }

    /// Stored average of a real node; other nodes report their prediction
    /// from the current coarser data.
    pub fn average(&self, level: u32, index: usize) -> f64 {
        self.value_at(level, index)
    }

    #[inline]
    pub(crate) fn set_average(&mut self, level: u32, index: usize, v: f64) {
        self.avg[flat(self.roots, level as usize, index)] = v;
    }

    /// Detail of the node against its predicted value; zero on roots and
    /// virtual nodes.
    pub fn detail(&self, level: u32, index: usize) -> f64 {
        let k = flat(self.roots, level as usize, index);
        if self.kind[k].is_real() {
            self.detail[k]
        } else {
            0.0
        }
    }

    pub fn is_pinned(&self, level: u32, index: usize) -> bool {
        self.pinned[flat(self.roots, level as usize, index)]
    }

    /// Same-level neighbour at `offset`, or `None` past a transparent end.
    #[inline]
    pub fn neighbor(&self, level: u32, index: usize, offset: isize) -> Option<usize> {
        let n = self.width(level) as isize;
        let j = index as isize + offset;
        if (0..n).contains(&j) {
            return Some(j as usize);
        }
        match self.boundary {
            Boundary::Periodic => Some(j.rem_euclid(n) as usize),
            Boundary::Transparent => None,
        }
    }

    /// Cousin used by prediction; constant extension at transparent ends.
    #[inline]
    fn stencil_index(&self, level: u32, index: usize, offset: isize) -> usize {
        self.neighbor(level, index, offset).unwrap_or(index)
    }

    /// Average of a node if present, otherwise its prediction from the
    /// coarser levels with zero details.
    pub fn value_at(&self, level: u32, index: usize) -> f64 {
        let k = flat(self.roots, level as usize, index);
        if self.kind[k].is_real() || level == 0 {
            return self.avg[k];
        }
        self.predicted(level, index)
    }

    fn predicted(&self, level: u32, index: usize) -> f64 {
        let p = index / 2;
        let (a, b) = self.predict_children(level - 1, p);
        if index.is_multiple_of(2) {
            a
        } else {
            b
        }
    }

    fn predict_children(&self, level: u32, p: usize) -> (f64, f64) {
        let l = self.stencil_index(level, p, -1);
        let r = self.stencil_index(level, p, 1);
        predict(self.value_at(level, p), self.value_at(level, l), self.value_at(level, r))
    }

    pub(crate) fn bounded_children(&self, level: u32, p: usize) -> (f64, f64) {
        self.predict_children_bounded(level, p)
    }

    fn predict_children_bounded(&self, level: u32, p: usize) -> (f64, f64) {
        let l = self.stencil_index(level, p, -1);
        let r = self.stencil_index(level, p, 1);
        predict_bounded(self.value_at(level, p), self.value_at(level, l), self.value_at(level, r))
    }

    pub fn stats(&self) -> TreeStats {
        let mut s = TreeStats::default();
        for l in 0..=self.max_level as usize {
            for i in 0..self.width(l as u32) {
                match self.kind(l as u32, i) {
                    NodeKind::Leaf => {
                        s.leaves += 1;
                        s.deepest = s.deepest.max(l as u32);
                    }
                    NodeKind::Internal => s.internal += 1,
                    NodeKind::Virtual => s.virtual_nodes += 1,
                    NodeKind::Absent => {}
                }
            }
        }
        s
    }

    pub fn leaf_count(&self) -> usize {
        let rows = &self.rows.real;
        (0..rows.len()).map(|l| rows[l].iter().filter(|&&i| self.kind[flat(self.roots, l, i)] == NodeKind::Leaf).count()).sum()
    }

    /// Keys of the real leaves in spatial order.
    pub fn leaf_keys(&self) -> Vec<NodeKey> {
        let mut out = Vec::new();
        self.leaf_keys_into(&mut out);
        out
    }

    pub(crate) fn leaf_keys_into(&self, out: &mut Vec<NodeKey>) {
        out.clear();
        // walk: descend to the leftmost leaf, emit, climb past right
        // children, step to the next sibling or root
        let (mut l, mut i) = (0u32, 0usize);
        loop {
            while self.stored(l, i) == NodeKind::Internal {
                l += 1;
                i *= 2;
            }
            out.push(NodeKey::new(l, i));
            while l > 0 && i % 2 == 1 {
                l -= 1;
                i /= 2;
            }
            i += 1;
            if l == 0 && i == self.roots {
                break;
            }
        }
    }

    /// The adaptive mesh: real leaves in order, tiling the domain.
    pub fn leaf_grid(&self) -> Result<Vec<LeafCell>> {
        let keys = self.leaf_keys();
        let mut cells = Vec::with_capacity(keys.len());
        let fine = self.width(self.max_level);
        let mut cursor = 0usize;
        for k in keys {
            let span = 1usize << (self.max_level - k.level);
            let start = k.index * span;
            if start != cursor {
                return Err(Error::Gradedness(format!("leaf ({}, {}) does not continue the tiling", k.level, k.index)));
            }
            cursor += span;
            let dx = self.cell_width(k.level);
            cells.push(LeafCell {
                lo: self.domain.lo + k.index as f64 * dx,
                hi: self.domain.lo + (k.index + 1) as f64 * dx,
                average: self.average(k.level, k.index),
                level: k.level,
                index: k.index,
            });
        }
        if cursor != fine {
            return Err(Error::Gradedness(format!("leaves cover {cursor} of {fine} finest cells")));
        }
        Ok(cells)
    }

    /// Level-`L` averages: real values where present, zero-detail prediction
    /// elsewhere.
    pub fn reconstruct_fine(&self) -> Vec<f64> {
        let mut cur = self.avg[..self.roots].to_vec();
        for l in 0..self.max_level {
            let next_level = l + 1;
            let mut next = vec![0.0; self.width(next_level)];
            for p in 0..cur.len() {
                let left = self.stencil_index(l, p, -1);
                let right = self.stencil_index(l, p, 1);
                let (a, b) = predict(cur[p], cur[left], cur[right]);
                for (c, pred) in [(2 * p, a), (2 * p + 1, b)] {
                    next[c] = if self.stored(next_level, c).is_real() { self.average(next_level, c) } else { pred };
                }
            }
            cur = next;
        }
        cur
    }

    /// Tree from an initial datum: splits while children differ from their
    /// prediction by at least the level tolerance. Cells touching a jump of
    /// the parameter field are refined to the finest level and pinned.
    pub fn init(m: &ModelSpec, cfg: &MRConfig) -> Result<Self> {
        let mut tree = GradedTree::with_roots(cfg, m.domain(), m.boundary())?;
        m.check_alignment(cfg.finest_cells())?;
        tree.pin_jumps(&m.jump_interfaces(cfg.finest_cells()));
        let lo = m.domain().lo;
        let init = m.initial();
        let exact = |t: &GradedTree, l: u32, i: usize| {
            let dx = t.cell_width(l);
            init.cell_average(lo + i as f64 * dx, lo + (i + 1) as f64 * dx)
        };
        tree.build_from(cfg, &exact)?;
        Ok(tree)
    }

    /// Same construction as [`GradedTree::init`] from level-`L` averages.
    pub fn from_fine(fine: &[f64], cfg: &MRConfig, domain: Domain, boundary: Boundary) -> Result<Self> {
        let mut tree = GradedTree::with_roots(cfg, domain, boundary)?;
        if fine.len() != cfg.finest_cells() {
            return Err(Error::LengthMismatch { expected: cfg.finest_cells(), actual: fine.len() });
        }
        let mut levels = vec![fine.to_vec()];
        for _ in 0..cfg.max_level {
            let last = levels.last().unwrap();
            let up = last.chunks_exact(2).map(|c| project(c[0], c[1])).collect();
            levels.push(up);
        }
        levels.reverse();
        let exact = |_: &GradedTree, l: u32, i: usize| levels[l as usize][i];
        tree.build_from(cfg, &exact)?;
        Ok(tree)
    }

    /// Marks every ancestor of the finest cells on both sides of the given
    /// finest-grid interfaces.
    pub fn pin_jumps(&mut self, interfaces: &[usize]) {
        let fine = self.width(self.max_level);
        for &k in interfaces {
            let mut cells = vec![];
            if let Some(c) = self.neighbor(self.max_level, k % fine, -1) {
                cells.push(c);
            }
            if k < fine {
                cells.push(k);
            }
            for c in cells {
                for l in 0..=self.max_level {
                    let idx = c >> (self.max_level - l);
                    self.pinned[flat(self.roots, l as usize, idx)] = true;
                }
            }
        }
    }

    fn build_from<F>(&mut self, cfg: &MRConfig, exact: &F) -> Result<()>
    where
        F: Fn(&GradedTree, u32, usize) -> f64,
    {
        for i in 0..self.roots {
            self.avg[flat(self.roots, 0, i)] = exact(self, 0, i);
        }
        let child_values = |t: &GradedTree, l: u32, p: usize| (exact(t, l + 1, 2 * p), exact(t, l + 1, 2 * p + 1));
        let mut work: Vec<NodeKey> = (0..self.roots).map(|i| NodeKey::new(0, i)).collect();
        let mut created = Vec::new();
        while let Some(k) = work.pop() {
            if self.stored(k.level, k.index) != NodeKind::Leaf || k.level >= self.max_level {
                continue;
            }
            let split = k.level < self.min_level || self.is_pinned(k.level, k.index) || {
                let l = k.level;
                let p = k.index;
                let left = exact(self, l, self.stencil_index(l, p, -1));
                let right = exact(self, l, self.stencil_index(l, p, 1));
                let (pred, _) = predict(self.average(l, p), left, right);
                let d = exact(self, l + 1, 2 * p) - pred;
                d.abs() >= level_tolerance(cfg, l + 1)
            };
            if split {
                created.clear();
                self.split(k.level, k.index, &child_values, &mut created);
                work.extend(created.iter().copied());
            }
        }
        self.collect_real();
        self.project_upward();
        self.compute_details();
        self.collect_real();
        Ok(())
    }

    /// Splits leaf `(l, p)`, first making its same-level neighbours real.
    fn split<F>(&mut self, level: u32, p: usize, values: &F, created: &mut Vec<NodeKey>)
    where
        F: Fn(&GradedTree, u32, usize) -> (f64, f64),
    {
        if level >= self.max_level || self.stored(level, p) != NodeKind::Leaf {
            return;
        }
        for off in [-1, 1] {
            if let Some(n) = self.neighbor(level, p, off) {
                self.make_real(level, n, values, created);
            }
        }
        let (a, b) = values(self, level, p);
        let c = level as usize + 1;
        self.kind[flat(self.roots, level as usize, p)] = NodeKind::Internal;
        for (i, v) in [(2 * p, a), (2 * p + 1, b)] {
            self.kind[flat(self.roots, c, i)] = NodeKind::Leaf;
            self.avg[flat(self.roots, c, i)] = v;
            self.detail[flat(self.roots, c, i)] = 0.0;
            self.deletable[flat(self.roots, c, i)] = false;
            created.push(NodeKey::new(level + 1, i));
        }
    }

    fn make_real<F>(&mut self, level: u32, i: usize, values: &F, created: &mut Vec<NodeKey>)
    where
        F: Fn(&GradedTree, u32, usize) -> (f64, f64),
    {
        if self.stored(level, i).is_real() {
            return;
        }
        let q = i / 2;
        self.make_real(level - 1, q, values, created);
        self.split(level - 1, q, values, created);
    }

    /// Makes `(level, index)` real by splitting ancestors, filling new nodes
    /// by prediction, then restores the virtual layer.
    pub fn refine_to(&mut self, level: u32, index: usize) -> Result<()> {
        if level > self.max_level || index >= self.width(level) {
            return Err(Error::OutOfRange(format!("node ({level}, {index}) outside the tree")));
        }
        let mut created = Vec::new();
        self.make_real(level, index, &|t: &GradedTree, l, p| t.predict_children(l, p), &mut created);
        self.collect_real();
        Ok(())
    }

    /// Refills the per-level lists of real nodes by walking down from the roots.
    fn collect_real(&mut self) {
        let rows = &mut self.rows.real;
        rows[0].clear();
        rows[0].extend(0..self.roots);
        for l in 0..self.max_level as usize {
            let (upper, lower) = rows.split_at_mut(l + 1);
            let next = &mut lower[0];
            next.clear();
            for &p in &upper[l] {
                if self.kind[flat(self.roots, l, p)] == NodeKind::Internal {
                    next.push(2 * p);
                    next.push(2 * p + 1);
                }
            }
        }
    }

    /// Internal averages from their children, finest to coarsest.
    /// Relies on the real-node lists being current.
    fn project_upward(&mut self) {
        for l in (0..self.max_level as usize).rev() {
            let (c0, f0) = (flat(self.roots, l, 0), flat(self.roots, l + 1, 0));
            for &p in &self.rows.real[l] {
                if self.kind[c0 + p] == NodeKind::Internal {
                    self.avg[c0 + p] = project(self.avg[f0 + 2 * p], self.avg[f0 + 2 * p + 1]);
                }
            }
        }
    }

    fn compute_details(&mut self) {
        for pl in 0..self.max_level as usize {
            let (p0, c0) = (flat(self.roots, pl, 0), flat(self.roots, pl + 1, 0));
            for r in 0..self.rows.real[pl].len() {
                let p = self.rows.real[pl][r];
                if self.kind[p0 + p] != NodeKind::Internal {
                    continue;
                }
                let left = self.stencil_index(pl as u32, p, -1);
                let right = self.stencil_index(pl as u32, p, 1);
                let (pred, _) = predict(self.avg[p0 + p], self.avg[p0 + left], self.avg[p0 + right]);
                let d = self.avg[c0 + 2 * p] - pred;
                self.detail[c0 + 2 * p] = d;
                self.detail[c0 + 2 * p + 1] = -d;
            }
        }
    }

    /// Thresholding and adaptation after leaf values changed. Returns true
    /// if the set of real nodes changed.
    pub fn update(&mut self, cfg: &MRConfig) -> Result<bool> {
        self.project_upward();

        // One coarse-to-fine sweep: details and deletability of the
        // children of every internal node, removal of deletable leaf
        // pairs, and collection of leaves to split.
        let roots = self.roots;
        let top = self.max_level as usize;
        let min_level = self.min_level as usize;
        for &i in &self.rows.real[0] {
            self.deletable[i] = !self.pinned[i];
        }
        let mut to_split = std::mem::take(&mut self.rows.split);
        to_split.clear();
        let mut changed = false;
        for l in 0..top {
            let (o, co) = (flat(roots, l, 0), flat(roots, l + 1, 0));
            let eps = level_tolerance(cfg, l as u32 + 1);
            for r in 0..self.rows.real[l].len() {
                let p = self.rows.real[l][r];
                match self.kind[o + p] {
                    NodeKind::Leaf => {
                        if l < min_level || !self.deletable[o + p] {
                            to_split.push(NodeKey::new(l as u32, p));
                        }
                    }
                    NodeKind::Internal => {
                        let left = self.stencil_index(l as u32, p, -1);
                        let right = self.stencil_index(l as u32, p, 1);
                        let (pred, _) = predict(self.avg[o + p], self.avg[o + left], self.avg[o + right]);
                        let (a, b) = (co + 2 * p, co + 2 * p + 1);
                        let d = self.avg[a] - pred;
                        self.detail[a] = d;
                        self.detail[b] = -d;
                        let small = d.abs() < eps;
                        self.deletable[a] = small && !self.pinned[a];
                        self.deletable[b] = small && !self.pinned[b];
                        if l < min_level
                            || !self.deletable[o + p]
                            || !self.deletable[a]
                            || !self.deletable[b]
                            || self.kind[a] != NodeKind::Leaf
                            || self.kind[b] != NodeKind::Leaf
                        {
                            continue;
                        }
                        if l + 1 < top {
                            // removing the pair must not orphan grading
                            // support of grandchildren of the neighbouring cells
                            let go = flat(roots, l + 2, 0);
                            let blocked = [-1isize, 2].iter().any(|&off| {
                                self.neighbor(l as u32 + 1, 2 * p, off).is_some_and(|n| self.kind[go + 2 * n].is_real())
                            });
                            if blocked {
                                continue;
                            }
                        }
                        self.kind[a] = NodeKind::Absent;
                        self.kind[b] = NodeKind::Absent;
                        self.kind[o + p] = NodeKind::Leaf;
                        changed = true;
                    }
                    _ => {}
                }
            }
        }
        if !changed && to_split.is_empty() {
            // same structure, so the virtual layer only needs new values
            self.rows.split = to_split;
            return Ok(false);
        }
        let mut created = Vec::new();
        let predictor = |t: &GradedTree, l: u32, p: usize| t.predict_children_bounded(l, p);
        for &k in &to_split {
            if self.stored(k.level, k.index) == NodeKind::Leaf {
                self.split(k.level, k.index, &predictor, &mut created);
            }
        }
        self.rows.split = to_split;
        changed |= !created.is_empty();

        self.collect_real();
        Ok(changed)
    }

    /// Checks every structural invariant.
    pub fn audit(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Gradedness(msg));
        for i in 0..self.roots {
            if !self.kind(0, i).is_real() {
                return fail(format!("root {i} is not real"));
            }
        }
        for l in 0..=self.max_level {
            for i in 0..self.width(l) {
                let k = self.kind(l, i);
                if !k.is_present() {
                    continue;
                }
                if l > 0 {
                    let parent = self.kind(l - 1, i / 2);
                    let sibling = self.kind(l, i ^ 1);
                    match k {
                        NodeKind::Virtual if parent != NodeKind::Leaf => {
                            return fail(format!("virtual ({l}, {i}) hangs off a non-leaf"));
                        }
                        NodeKind::Internal | NodeKind::Leaf if parent != NodeKind::Internal => {
                            return fail(format!("real ({l}, {i}) has parent of kind {parent:?}"));
                        }
                        _ => {}
                    }
                    if sibling.is_real() != k.is_real() || !sibling.is_present() {
                        return fail(format!("({l}, {i}) and its sibling disagree"));
                    }
                    if k.is_real() {
                        let q = i / 2;
                        for off in [-1, 1] {
                            if let Some(n) = self.neighbor(l - 1, q, off) {
                                if !self.kind(l - 1, n).is_real() {
                                    return fail(format!("({l}, {i}) lacks real support at ({}, {n})", l - 1));
                                }
                            }
                        }
                    }
                }
                let children = if l < self.max_level {
                    [self.kind(l + 1, 2 * i), self.kind(l + 1, 2 * i + 1)]
                } else {
                    [NodeKind::Absent; 2]
                };
                match k {
                    NodeKind::Internal if !children.iter().all(|c| c.is_real()) => {
                        return fail(format!("internal ({l}, {i}) lacks real children"));
                    }
                    NodeKind::Leaf if children.iter().any(|c| c.is_real()) => {
                        return fail(format!("leaf ({l}, {i}) has real children"));
                    }
                    NodeKind::Virtual if children.iter().any(|c| c.is_present()) => {
                        return fail(format!("virtual ({l}, {i}) has children"));
                    }
                    NodeKind::Leaf => {
                        let reach = FLUX_COUSINS as isize;
                        for off in (-reach..=reach).filter(|&o| o != 0) {
                            if let Some(c) = self.neighbor(l, i, off) {
                                if !self.kind(l, c).is_present() {
                                    return fail(format!("leaf ({l}, {i}) misses cousin ({l}, {c})"));
                                }
                            }
                        }
                    }
                    _ => {}
                }
            }
        }
        self.leaf_grid().map(|_| ())
    }

    /// Keys of all real nodes.
    pub fn real_keys(&self) -> HashSet<NodeKey> {
        let mut s = HashSet::new();
        for l in 0..=self.max_level {
            for i in 0..self.width(l) {
                if self.stored(l, i).is_real() {
                    s.insert(NodeKey::new(l, i));
                }
            }
        }
        s
    }

    /// One JSON record per present node.
    pub fn write_ndjson<W: Write>(&self, mut w: W) -> Result<()> {
        for l in 0..=self.max_level {
            for i in 0..self.width(l) {
                let kind = self.kind(l, i);
                if !kind.is_present() {
                    continue;
                }
                let rec = NodeRecord { level: l, index: i, kind, average: self.average(l, i), detail: self.detail(l, i) };
                serde_json::to_writer(&mut w, &rec)?;
                w.write_all(b"\n")?;
            }
        }
        Ok(())
    }
}

/// Number of real leaves in an NDJSON tree dump.
pub fn count_ndjson_leaves<R: BufRead>(r: R) -> Result<usize> {
    let mut n = 0;
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: NodeRecord = serde_json::from_str(&line)?;
        if rec.kind == NodeKind::Leaf {
            n += 1;
        }
    }
    Ok(n)
}
