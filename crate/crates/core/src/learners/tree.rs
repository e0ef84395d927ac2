//! Least-squares regression trees over sparse rows, with Newton leaf values.

use crate::tspm::SparseFeatureMatrix;

const MAX_BINS: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    /// Rows with `value <= threshold` go left; absent entries are zero.
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
        /// Reduction in residual sum of squares achieved by this split.
        improvement: f64,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_splits(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Split { .. })).count()
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.len() - self.n_splits()
    }

    pub fn predict_row(&self, idx: &[u32], vals: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    let v = idx.binary_search(feature).map_or(0.0, |k| vals[k]);
                    at = if v <= *threshold { *left } else { *right } as usize;
                }
            }
        }
    }

    /// Adds each split's improvement to `acc[feature]`.
    pub fn accumulate_improvement(&self, acc: &mut [f64]) {
        for n in &self.nodes {
            if let Node::Split {
                feature, improvement, ..
            } = n
            {
                acc[*feature as usize] += improvement;
            }
        }
    }
}

/// Candidate thresholds per feature, computed once per training matrix.
/// Every distinct value (zero included) gets its own bin unless a feature
/// has more than `MAX_BINS` of them, in which case bins follow quantiles.
pub(crate) struct Binning {
    cuts: Vec<Vec<f64>>,
    offsets: Vec<usize>,
    zero_bin: Vec<usize>,
    /// Bin of every stored entry, aligned with the matrix's CSR entries.
    entry_bins: Vec<u16>,
    total_bins: usize,
}

impl Binning {
    pub(crate) fn new(x: &SparseFeatureMatrix) -> Binning {
        let p = x.n_features();
        let n = x.n_rows();
        let columns = x.to_column_major();
        let mut cuts = Vec::with_capacity(p);
        for j in 0..p {
            let (_, vals) = columns.column(j);
            let mut values: Vec<f64> = vals.to_vec();
            let zeros = n - values.len();
            values.sort_by(f64::total_cmp);
            // Distinct values with multiplicities, zero included.
            let mut distinct: Vec<(f64, usize)> = Vec::new();
            let mut zero_placed = zeros == 0;
            for v in values {
                if !zero_placed && v > 0.0 {
                    distinct.push((0.0, zeros));
                    zero_placed = true;
                }
                match distinct.last_mut() {
                    Some((last, c)) if *last == v => *c += 1,
                    _ => distinct.push((v, 1)),
                }
            }
            if !zero_placed {
                distinct.push((0.0, zeros));
            }
            let mut feature_cuts = Vec::new();
            if distinct.len() <= MAX_BINS {
                for w in distinct.windows(2) {
                    feature_cuts.push(0.5 * (w[0].0 + w[1].0));
                }
            } else {
                let step = n as f64 / MAX_BINS as f64;
                let mut cumulative = 0usize;
                let mut next = step;
                for w in distinct.windows(2) {
                    cumulative += w[0].1;
                    if cumulative as f64 >= next {
                        feature_cuts.push(0.5 * (w[0].0 + w[1].0));
                        while next <= cumulative as f64 {
                            next += step;
                        }
                    }
                }
            }
            cuts.push(feature_cuts);
        }
        let bin_of = |j: usize, v: f64| cuts[j].partition_point(|&c| c < v);
        let mut offsets = Vec::with_capacity(p + 1);
        let mut total = 0;
        for c in &cuts {
            offsets.push(total);
            total += c.len() + 1;
        }
        offsets.push(total);
        let zero_bin = (0..p).map(|j| bin_of(j, 0.0)).collect();
        let (_, indices, values) = x.raw_parts();
        let entry_bins = indices
            .iter()
            .zip(values)
            .map(|(&j, &v)| bin_of(j as usize, v) as u16)
            .collect();
        Binning {
            cuts,
            offsets,
            zero_bin,
            entry_bins,
            total_bins: total,
        }
    }
}

pub(crate) struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

/// Per-bin `[Σ residual, row count]` over the stored entries of a node's
/// rows. Absent (zero) entries are recovered from the node totals.
type Histogram = Vec<[f64; 2]>;

/// Grows one tree on `rows`, fitting `residual` by least squares and
/// setting each leaf to `Σ residual / Σ hessian` over its rows.
pub(crate) struct TreeBuilder<'a> {
    x: &'a SparseFeatureMatrix,
    bins: &'a Binning,
    residual: &'a [f64],
    hessian: &'a [f64],
    params: &'a TreeParams,
}

struct SplitChoice {
    feature: usize,
    bin: usize,
    gain: f64,
}

impl<'a> TreeBuilder<'a> {
    pub(crate) fn new(
        x: &'a SparseFeatureMatrix,
        bins: &'a Binning,
        residual: &'a [f64],
        hessian: &'a [f64],
        params: &'a TreeParams,
    ) -> Self {
        TreeBuilder {
            x,
            bins,
            residual,
            hessian,
            params,
        }
    }

    pub(crate) fn grow(self, rows: &[u32]) -> RegressionTree {
        let mut nodes = Vec::new();
        let hist = self.can_split(rows.len(), 0).then(|| self.histogram(rows));
        self.build(rows, 0, hist, &mut nodes);
        RegressionTree { nodes }
    }

    fn can_split(&self, n_rows: usize, depth: usize) -> bool {
        depth < self.params.max_depth && n_rows >= 2 * self.params.min_leaf.max(1)
    }

    fn histogram(&self, rows: &[u32]) -> Histogram {
        let (indptr, indices, _) = self.x.raw_parts();
        let mut hist = vec![[0.0; 2]; self.bins.total_bins];
        for &i in rows {
            let g = self.residual[i as usize];
            for e in indptr[i as usize]..indptr[i as usize + 1] {
                let cell = &mut hist[self.bins.offsets[indices[e] as usize] + self.bins.entry_bins[e] as usize];
                cell[0] += g;
                cell[1] += 1.0;
            }
        }
        hist
    }

    fn leaf(&self, rows: &[u32]) -> Node {
        let (g, h) = rows.iter().fold((0.0, 0.0), |(g, h), &i| {
            (g + self.residual[i as usize], h + self.hessian[i as usize])
        });
        Node::Leaf {
            value: if h > 1e-300 { g / h } else { 0.0 },
        }
    }

    fn build(&self, rows: &[u32], depth: usize, hist: Option<Histogram>, nodes: &mut Vec<Node>) -> u32 {
        let at = nodes.len();
        nodes.push(Node::Leaf { value: 0.0 });
        let split = hist.as_ref().and_then(|h| self.best_split(rows, h));
        match (split, hist) {
            (Some(s), Some(parent)) => {
                let threshold = self.bins.cuts[s.feature][s.bin];
                let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = rows.iter().partition(|&&i| {
                    let (idx, vals) = self.x.row(i as usize);
                    let v = idx.binary_search(&(s.feature as u32)).map_or(0.0, |k| vals[k]);
                    v <= threshold
                });
                let (left_hist, right_hist) = self.child_histograms(parent, &left_rows, &right_rows, depth + 1);
                let left = self.build(&left_rows, depth + 1, left_hist, nodes);
                let right = self.build(&right_rows, depth + 1, right_hist, nodes);
                nodes[at] = Node::Split {
                    feature: s.feature as u32,
                    threshold,
                    left,
                    right,
                    improvement: s.gain,
                };
            }
            _ => nodes[at] = self.leaf(rows),
        }
        at as u32
    }

    /// Histograms for the children that may split further. The smaller
    /// child is accumulated directly and the larger one is the difference.
    fn child_histograms(
        &self,
        mut parent: Histogram,
        left: &[u32],
        right: &[u32],
        depth: usize,
    ) -> (Option<Histogram>, Option<Histogram>) {
        let need_left = self.can_split(left.len(), depth);
        let need_right = self.can_split(right.len(), depth);
        if !need_left && !need_right {
            return (None, None);
        }
        let left_smaller = left.len() <= right.len();
        let small = self.histogram(if left_smaller { left } else { right });
        let need_large = if left_smaller { need_right } else { need_left };
        let large = need_large.then(|| {
            for (p, s) in parent.iter_mut().zip(&small) {
                p[0] -= s[0];
                p[1] -= s[1];
            }
            parent
        });
        if left_smaller {
            (need_left.then_some(small), large)
        } else {
            (large, need_right.then_some(small))
        }
    }

    fn best_split(&self, rows: &[u32], hist: &Histogram) -> Option<SplitChoice> {
        let total_g: f64 = rows.iter().map(|&i| self.residual[i as usize]).sum();
        let total_c = rows.len() as f64;
        let parent = total_g * total_g / total_c;
        let min_leaf = self.params.min_leaf.max(1) as f64;
        let mut best: Option<SplitChoice> = None;
        for j in 0..self.x.n_features() {
            let cells = &hist[self.bins.offsets[j]..self.bins.offsets[j + 1]];
            let (stored_g, stored_c) = cells.iter().fold((0.0, 0.0), |(g, c), cell| (g + cell[0], c + cell[1]));
            let zero = self.bins.zero_bin[j];
            // With zeros in the lowest bin the right side only holds stored
            // entries, so too few of them rules out every threshold.
            if stored_c == 0.0 || (zero == 0 && stored_c < min_leaf) {
                continue;
            }
            let (mut gl, mut cl) = (0.0, 0.0);
            for (b, cell) in cells[..cells.len() - 1].iter().enumerate() {
                let (mut g, mut c) = (cell[0], cell[1]);
                if b == zero {
                    g += total_g - stored_g;
                    c += total_c - stored_c;
                }
                if c == 0.0 {
                    continue;
                }
                gl += g;
                cl += c;
                let cr = total_c - cl;
                if cr < min_leaf {
                    break;
                }
                if cl < min_leaf {
                    continue;
                }
                let gr = total_g - gl;
                let gain = gl * gl / cl + gr * gr / cr - parent;
                if gain > 1e-12 && best.as_ref().is_none_or(|s| gain > s.gain) {
                    best = Some(SplitChoice {
                        feature: j,
                        bin: b,
                        gain,
                    });
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tspm::FeatureDescriptor;

    fn matrix(rows: Vec<Vec<(u32, f64)>>, p: usize) -> SparseFeatureMatrix {
        let n = rows.len();
        SparseFeatureMatrix::from_rows(
            (0..p).map(|j| FeatureDescriptor::raw(format!("C{j}"))).collect(),
            (0..n).map(|i| format!("p{i}")).collect(),
            rows,
        )
        .unwrap()
    }

    #[test]
    fn splits_on_the_informative_feature() {
        let x = matrix(
            vec![vec![(1, 1.0)], vec![(0, 3.0), (1, 1.0)], vec![(0, 3.0)], vec![]],
            2,
        );
        let residual = [1.0, 1.0, -1.0, -1.0];
        let hessian = [0.25; 4];
        let bins = Binning::new(&x);
        let params = TreeParams {
            max_depth: 1,
            min_leaf: 1,
        };
        let tree = TreeBuilder::new(&x, &bins, &residual, &hessian, &params).grow(&[0, 1, 2, 3]);
        assert_eq!(tree.n_splits(), 1);
        match &tree.nodes()[0] {
            Node::Split {
                feature,
                threshold,
                improvement,
                ..
            } => {
                assert_eq!(*feature, 1);
                assert_eq!(*threshold, 0.5);
                assert!((improvement - 4.0).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(tree.predict_row(&[1], &[1.0]), 4.0);
        assert_eq!(tree.predict_row(&[], &[]), -4.0);
    }

    #[test]
    fn respects_min_leaf_and_depth() {
        let x = matrix((0..6).map(|i| if i < 1 { vec![(0, 1.0)] } else { vec![] }).collect(), 1);
        let residual = [5.0, -1.0, -1.0, -1.0, -1.0, -1.0];
        let hessian = [0.25; 6];
        let bins = Binning::new(&x);
        let rows: Vec<u32> = (0..6).collect();
        let params = TreeParams {
            max_depth: 3,
            min_leaf: 2,
        };
        let tree = TreeBuilder::new(&x, &bins, &residual, &hessian, &params).grow(&rows);
        assert_eq!(tree.n_splits(), 0);
        let zero_depth = TreeParams {
            max_depth: 0,
            min_leaf: 1,
        };
        assert_eq!(TreeBuilder::new(&x, &bins, &residual, &hessian, &zero_depth).grow(&rows).n_leaves(), 1);
    }

    #[test]
    fn negative_and_many_values_bin_correctly() {
        let rows: Vec<Vec<(u32, f64)>> = (0..600)
            .map(|i| {
                let v = i as f64 - 300.0;
                if v == 0.0 {
                    vec![]
                } else {
                    vec![(0, v)]
                }
            })
            .collect();
        let x = matrix(rows, 1);
        let bins = Binning::new(&x);
        assert!(bins.cuts[0].len() < MAX_BINS);
        assert!(bins.cuts[0].windows(2).all(|w| w[0] < w[1]));
        let residual: Vec<f64> = (0..600).map(|i| if i < 300 { -1.0 } else { 1.0 }).collect();
        let hessian = vec![0.25; 600];
        let params = TreeParams {
            max_depth: 1,
            min_leaf: 1,
        };
        let rows: Vec<u32> = (0..600).collect();
        let tree = TreeBuilder::new(&x, &bins, &residual, &hessian, &params).grow(&rows);
        assert_eq!(tree.n_splits(), 1);
        assert!(tree.predict_row(&[0], &[-5.0]) < 0.0);
        assert!(tree.predict_row(&[0], &[5.0]) > 0.0);
    }
}
