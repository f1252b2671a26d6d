//! Nodes, importance scores and node-value samples.
//!
//! A layer with weight `W₀ = U S Vᵀ` contributes `r + 1` nodes: the principal
//! pairs `(A_i, B_i) = (S_ii U_i, V_iᵀ)` for `i = 1..r` and its bias `b`.
//! During the first training steps each node tensor receives a sensitivity
//! `|w ∘ ∇w|`, smoothed into an importance score; averaging the scores over a
//! node gives one sample of that node's value per step.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub layer_id: usize,
    pub d1: usize,
    pub d2: usize,
    /// Principal components kept as separate nodes.
    pub r: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    /// Principal pair `(A_i, B_i)`, 1-based component index.
    Pair(usize),
    Bias,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId {
    pub layer_id: usize,
    pub kind: NodeKind,
}

impl NodeId {
    pub fn name(&self) -> String {
        match self.kind {
            NodeKind::Pair(i) => format!("L{}:A{}", self.layer_id, i),
            NodeKind::Bias => format!("L{}:b", self.layer_id),
        }
    }
}

/// Flat node numbering: layer by layer, pairs `1..=r` then the bias.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeLayout {
    layers: Vec<LayerSpec>,
    offsets: Vec<usize>,
}

impl NodeLayout {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(layers.len());
        let mut total = 0;
        for (k, l) in layers.iter().enumerate() {
            if l.r == 0 || l.r > l.d1.min(l.d2) {
                return Err(Error::InvalidParameter(format!(
                    "layer {}: r = {} must lie in 1..={}",
                    l.layer_id,
                    l.r,
                    l.d1.min(l.d2)
                )));
            }
            if layers[..k].iter().any(|o| o.layer_id == l.layer_id) {
                return Err(Error::InvalidParameter(format!(
                    "layer {} listed twice",
                    l.layer_id
                )));
            }
            offsets.push(total);
            total += l.r + 1;
        }
        Ok(NodeLayout { layers, offsets })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.r + 1).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn index_of(&self, id: NodeId) -> Option<usize> {
        let pos = self.layers.iter().position(|l| l.layer_id == id.layer_id)?;
        let layer = &self.layers[pos];
        match id.kind {
            NodeKind::Pair(i) if (1..=layer.r).contains(&i) => Some(self.offsets[pos] + i - 1),
            NodeKind::Pair(_) => None,
            NodeKind::Bias => Some(self.offsets[pos] + layer.r),
        }
    }

    pub fn node(&self, flat: usize) -> Option<NodeId> {
        let pos = self
            .offsets
            .partition_point(|&o| o <= flat)
            .checked_sub(1)?;
        let layer = &self.layers[pos];
        let local = flat - self.offsets[pos];
        let kind = match local {
            k if k < layer.r => NodeKind::Pair(k + 1),
            k if k == layer.r => NodeKind::Bias,
            _ => return None,
        };
        Some(NodeId {
            layer_id: layer.layer_id,
            kind,
        })
    }

    pub fn names(&self) -> Vec<String> {
        (0..self.len())
            .map(|k| self.node(k).expect("in range").name())
            .collect()
    }
}

/// The first `r` principal pairs of a weight matrix and the remainder.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerDecomposition {
    /// `A_i = σ_i u_i`, length `d1`.
    pub a: Vec<DVector<f64>>,
    /// `B_i = v_iᵀ`, length `d2`, unit norm.
    pub b: Vec<DVector<f64>>,
    /// All singular values, nonincreasing.
    pub singular_values: Vec<f64>,
    /// `W₀ - Σ_i A_i B_i`.
    pub residual: DMatrix<f64>,
}

impl LayerDecomposition {
    pub fn rank(&self) -> usize {
        self.a.len()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.a
            .iter()
            .zip(&self.b)
            .fold(self.residual.clone(), |acc, (a, b)| acc + a * b.transpose())
    }
}

/// Splits `w0` into its `r` leading principal pairs plus a residual.
///
/// Signs are fixed so that the largest-magnitude entry of each `u_i` is
/// nonnegative (ties go to the lowest index).
pub fn decompose_layer(w0: &DMatrix<f64>, r: usize) -> Result<LayerDecomposition> {
    let (d1, d2) = w0.shape();
    if r == 0 || r > d1.min(d2) {
        return Err(Error::InvalidParameter(format!(
            "rank {r} outside 1..={} for a {d1}x{d2} matrix",
            d1.min(d2)
        )));
    }
    if w0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "weight matrix has non-finite entries".into(),
        ));
    }
    let svd = w0
        .clone()
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested Vᵀ");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .total_cmp(&svd.singular_values[i])
            .then(i.cmp(&j))
    });

    let mut a = Vec::with_capacity(r);
    let mut b = Vec::with_capacity(r);
    for &k in order.iter().take(r) {
        let mut uk: DVector<f64> = u.column(k).into_owned();
        let mut vk: DVector<f64> = v_t.row(k).transpose();
        let pivot = uk.iter().enumerate().fold(
            0,
            |best, (i, x)| {
                if x.abs() > uk[best].abs() {
                    i
                } else {
                    best
                }
            },
        );
        if uk[pivot] < 0.0 {
            uk.neg_mut();
            vk.neg_mut();
        }
        a.push(uk * svd.singular_values[k]);
        b.push(vk);
    }
    let residual = a
        .iter()
        .zip(&b)
        .fold(w0.clone(), |acc, (ai, bi)| acc - ai * bi.transpose());
    Ok(LayerDecomposition {
        a,
        b,
        singular_values: order.iter().map(|&k| svd.singular_values[k]).collect(),
        residual,
    })
}

/// Elementwise `|w ∘ grad|`.
pub fn sensitivity(w: &DMatrix<f64>, grad: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if w.shape() != grad.shape() {
        return Err(Error::Shape(format!(
            "weights {:?} and gradients {:?} differ",
            w.shape(),
            grad.shape()
        )));
    }
    Ok(w.zip_map(grad, |a, b| (a * b).abs()))
}

/// Exponential moving averages of sensitivity and its uncertainty for one
/// tensor. Both start at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceState {
    pub smoothed: DMatrix<f64>,
    pub uncertainty: DMatrix<f64>,
    pub step: u64,
    beta1: f64,
    beta2: f64,
}

impl ImportanceState {
    pub fn new(rows: usize, cols: usize, beta1: f64, beta2: f64) -> Result<Self> {
        for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidParameter(format!(
                    "{name} = {b} must lie in [0, 1)"
                )));
            }
        }
        Ok(ImportanceState {
            smoothed: DMatrix::zeros(rows, cols),
            uncertainty: DMatrix::zeros(rows, cols),
            step: 0,
            beta1,
            beta2,
        })
    }

    pub fn betas(&self) -> (f64, f64) {
        (self.beta1, self.beta2)
    }

    /// Folds in this step's sensitivity and returns the score
    /// `Ī ∘ Ū`, where `Ū` uses the freshly updated `Ī`.
    pub fn update(&mut self, sens: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if sens.shape() != self.smoothed.shape() {
            return Err(Error::Shape(format!(
                "sensitivity {:?} does not match state {:?}",
                sens.shape(),
                self.smoothed.shape()
            )));
        }
        if sens.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Domain(
                "sensitivities must be finite and >= 0".into(),
            ));
        }
        let (b1, b2) = (self.beta1, self.beta2);
        self.smoothed = self
            .smoothed
            .zip_map(sens, |prev, s| b1 * prev + (1.0 - b1) * s);
        let deviation = sens.zip_map(&self.smoothed, |s, m| (s - m).abs());
        self.uncertainty = self
            .uncertainty
            .zip_map(&deviation, |prev, d| b2 * prev + (1.0 - b2) * d);
        self.step += 1;
        Ok(self.smoothed.component_mul(&self.uncertainty))
    }
}

fn mean(v: &[f64], what: &str) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::Shape(format!("{what} scores are empty")));
    }
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

/// `mean(score_a)/2 + mean(score_b)/2`.
pub fn node_value_pair(score_a: &[f64], score_b: &[f64]) -> Result<f64> {
    Ok(0.5 * mean(score_a, "A")? + 0.5 * mean(score_b, "B")?)
}

/// `mean(score_b)/2`; the halving mirrors the pair formula.
pub fn node_value_bias(score_b: &[f64]) -> Result<f64> {
    Ok(0.5 * mean(score_b, "bias")?)
}

/// Node-value samples: one row per training step, one column per node.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    values: DMatrix<f64>,
    names: Vec<String>,
}

impl SampleSet {
    pub fn new(values: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        if names.len() != values.ncols() {
            return Err(Error::Shape(format!(
                "{} node names for {} columns",
                names.len(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Domain("node values must be finite and >= 0".into()));
        }
        Ok(SampleSet { values, names })
    }

    /// Names `node0`, `node1`, ... for samples without a layer layout.
    pub fn unnamed(values: DMatrix<f64>) -> Result<Self> {
        let names = (0..values.ncols()).map(|k| format!("node{k}")).collect();
        SampleSet::new(values, names)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn num_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_nodes(&self) -> usize {
        self.values.ncols()
    }
}

/// Column means and the unbiased sample covariance, symmetrized.
pub fn sample_statistics(samples: &SampleSet) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let x = samples.values();
    let m = x.nrows();
    if m < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 samples, got {m}"
        )));
    }
    let mean = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.tr_mul(&centered) / (m - 1) as f64;
    Ok((mean, (&cov + cov.transpose()) * 0.5))
}

/// Rescales a covariance to unit diagonal (the covariance of z-scored data).
/// Zero-variance nodes keep a zero row and column.
pub fn standardize_covariance(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let inv_sd = cov
        .diagonal()
        .map(|v| if v > 0.0 { 1.0 / v.sqrt() } else { 0.0 });
    DMatrix::from_fn(cov.nrows(), cov.ncols(), |i, j| {
        cov[(i, j)] * inv_sd[i] * inv_sd[j]
    })
}

/// Indices of the `h` largest entries of `mean`, ties to the lower index,
/// returned in ascending order.
pub fn select_important(mean: &[f64], h: usize) -> Result<Vec<usize>> {
    let n = mean.len();
    if h == 0 || h > n {
        return Err(Error::InvalidParameter(format!(
            "important-set size {h} outside 1..={n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| mean[j].total_cmp(&mean[i]).then(i.cmp(&j)));
    let mut chosen = order[..h].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Which node tensor a dump record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TensorRole {
    #[serde(rename = "A_i", alias = "A")]
    A,
    #[serde(rename = "B_i", alias = "B")]
    B,
    #[serde(rename = "b")]
    Bias,
}

/// Values and gradients of one node tensor at one training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub layer_id: usize,
    pub tensor: TensorRole,
    /// 1-based component index; ignored for the bias.
    #[serde(default)]
    pub index: usize,
    pub values: Vec<f64>,
    pub grads: Vec<f64>,
}

impl StepRecord {
    fn key(&self) -> (usize, TensorRole, usize) {
        let index = if self.tensor == TensorRole::Bias {
            0
        } else {
            self.index
        };
        (self.layer_id, self.tensor, index)
    }
}

/// Infers the node layout implied by a set of records.
pub fn layout_from_records(records: &[StepRecord]) -> Result<NodeLayout> {
    let mut shapes: BTreeMap<(usize, TensorRole, usize), usize> = BTreeMap::new();
    for rec in records {
        if rec.tensor != TensorRole::Bias && rec.index == 0 {
            return Err(Error::Parse(format!(
                "step {} layer {}: component index must be >= 1",
                rec.step, rec.layer_id
            )));
        }
        let len = rec.values.len();
        if let Some(prev) = shapes.insert(rec.key(), len) {
            if prev != len {
                return Err(Error::Shape(format!(
                    "layer {} tensor {:?}{}: length changes from {prev} to {len}",
                    rec.layer_id, rec.tensor, rec.index
                )));
            }
        }
    }
    // layer -> ((role, component index), length)
    type Tensors = Vec<((TensorRole, usize), usize)>;
    let mut layers: BTreeMap<usize, Tensors> = BTreeMap::new();
    for ((layer, role, idx), len) in shapes {
        layers.entry(layer).or_default().push(((role, idx), len));
    }
    let mut specs = Vec::with_capacity(layers.len());
    for (layer_id, tensors) in layers {
        let dim = |role: TensorRole| -> Result<Option<usize>> {
            let mut lens = tensors
                .iter()
                .filter(|((r, _), _)| *r == role)
                .map(|(_, l)| *l);
            let first = lens.next();
            if let Some(f) = first {
                if lens.any(|l| l != f) {
                    return Err(Error::Shape(format!(
                        "layer {layer_id}: {role:?} tensors have different lengths"
                    )));
                }
            }
            Ok(first)
        };
        let (d1, d2) = match (dim(TensorRole::A)?, dim(TensorRole::B)?) {
            (Some(d1), Some(d2)) => (d1, d2),
            _ => {
                return Err(Error::Parse(format!(
                    "layer {layer_id}: missing A_i or B_i records"
                )))
            }
        };
        let r = tensors
            .iter()
            .filter(|((role, _), _)| *role != TensorRole::Bias)
            .map(|((_, i), _)| *i)
            .max()
            .unwrap_or(0);
        for i in 1..=r {
            for role in [TensorRole::A, TensorRole::B] {
                if !tensors.iter().any(|((ro, ix), _)| *ro == role && *ix == i) {
                    return Err(Error::Parse(format!(
                        "layer {layer_id}: component {i} has no {role:?} record"
                    )));
                }
            }
        }
        match dim(TensorRole::Bias)? {
            Some(len) if len == d2 => {}
            Some(len) => {
                return Err(Error::Shape(format!(
                    "layer {layer_id}: bias length {len} differs from d2 = {d2}"
                )))
            }
            None => {
                return Err(Error::Parse(format!(
                    "layer {layer_id}: missing bias record"
                )))
            }
        }
        specs.push(LayerSpec {
            layer_id,
            d1,
            d2,
            r,
        });
    }
    NodeLayout::new(specs)
}

/// Replays a stream of step records through per-tensor importance states and
/// returns one row of node values per step, in step order.
///
/// Every step must carry exactly one record for every tensor of the layout.
pub fn replay_scores(records: &[StepRecord], beta1: f64, beta2: f64) -> Result<SampleSet> {
    if records.is_empty() {
        return Err(Error::Parse("no step records".into()));
    }
    let layout = layout_from_records(records)?;
    let mut by_step: BTreeMap<u64, Vec<&StepRecord>> = BTreeMap::new();
    for rec in records {
        if rec.values.len() != rec.grads.len() {
            return Err(Error::Shape(format!(
                "step {} layer {} tensor {:?}{}: {} values but {} grads",
                rec.step,
                rec.layer_id,
                rec.tensor,
                rec.index,
                rec.values.len(),
                rec.grads.len()
            )));
        }
        by_step.entry(rec.step).or_default().push(rec);
    }

    let tensors_per_step: usize = layout.layers().iter().map(|l| 2 * l.r + 1).sum();
    let mut states: BTreeMap<(usize, TensorRole, usize), ImportanceState> = BTreeMap::new();
    let n = layout.len();
    let mut rows = Vec::with_capacity(by_step.len() * n);
    for (step, recs) in &by_step {
        if recs.len() != tensors_per_step {
            return Err(Error::Parse(format!(
                "step {step}: expected {tensors_per_step} tensor records, found {}",
                recs.len()
            )));
        }
        let mut scores: BTreeMap<(usize, TensorRole, usize), DMatrix<f64>> = BTreeMap::new();
        for rec in recs {
            let len = rec.values.len();
            let w = DMatrix::from_column_slice(len, 1, &rec.values);
            let g = DMatrix::from_column_slice(len, 1, &rec.grads);
            let sens = sensitivity(&w, &g)?;
            let state = match states.entry(rec.key()) {
                std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::btree_map::Entry::Vacant(e) => {
                    e.insert(ImportanceState::new(len, 1, beta1, beta2)?)
                }
            };
            if scores.insert(rec.key(), state.update(&sens)?).is_some() {
                return Err(Error::Parse(format!(
                    "step {step}: duplicate record for layer {} tensor {:?}{}",
                    rec.layer_id, rec.tensor, rec.index
                )));
            }
        }
        for layer in layout.layers() {
            let l = layer.layer_id;
            for i in 1..=layer.r {
                let a = &scores[&(l, TensorRole::A, i)];
                let b = &scores[&(l, TensorRole::B, i)];
                rows.push(node_value_pair(a.as_slice(), b.as_slice())?);
            }
            rows.push(node_value_bias(
                scores[&(l, TensorRole::Bias, 0)].as_slice(),
            )?);
        }
    }
    let values = DMatrix::from_row_slice(by_step.len(), n, &rows);
    SampleSet::new(values, layout.names())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn layout_indexing() {
        let layout = NodeLayout::new(vec![
            LayerSpec {
                layer_id: 0,
                d1: 4,
                d2: 3,
                r: 2,
            },
            LayerSpec {
                layer_id: 5,
                d1: 2,
                d2: 2,
                r: 1,
            },
        ])
        .unwrap();
        assert_eq!(layout.len(), 5);
        assert_eq!(layout.names(), ["L0:A1", "L0:A2", "L0:b", "L5:A1", "L5:b"]);
        for k in 0..layout.len() {
            assert_eq!(layout.index_of(layout.node(k).unwrap()), Some(k));
        }
        assert_eq!(layout.node(5), None);
        assert_eq!(
            layout.index_of(NodeId {
                layer_id: 0,
                kind: NodeKind::Pair(3)
            }),
            None
        );
        assert!(NodeLayout::new(vec![LayerSpec {
            layer_id: 0,
            d1: 2,
            d2: 3,
            r: 3
        }])
        .is_err());
        assert!(NodeLayout::new(vec![LayerSpec {
            layer_id: 0,
            d1: 2,
            d2: 3,
            r: 0
        }])
        .is_err());
    }

    #[test]
    fn decompose_diagonal() {
        let d = decompose_layer(&dmatrix![3.0, 0.0; 0.0, 1.0], 1).unwrap();
        assert!((&d.a[0] - DVector::from_vec(vec![3.0, 0.0])).norm() < 1e-14);
        assert!((&d.b[0] - DVector::from_vec(vec![1.0, 0.0])).norm() < 1e-14);
        assert!((&d.residual - dmatrix![0.0, 0.0; 0.0, 1.0]).norm() < 1e-14);
        assert!(decompose_layer(&dmatrix![3.0, 0.0; 0.0, 1.0], 3).is_err());
    }

    #[test]
    fn decompose_tail_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = DMatrix::from_fn(8, 5, |_, _| rng.sample::<f64, _>(StandardNormal));
        let d = decompose_layer(&w, 3).unwrap();
        let tail: f64 = d.singular_values[3..].iter().map(|s| s * s).sum();
        assert!((d.residual.norm_squared() - tail).abs() <= 1e-8 * tail);
        let full = decompose_layer(&w, 5).unwrap();
        assert!(full.residual.norm() < 1e-12 * w.norm());
    }

    #[test]
    fn sensitivity_examples() {
        assert_eq!(
            sensitivity(&dmatrix![2.0], &dmatrix![-3.0]).unwrap(),
            dmatrix![6.0]
        );
        let s = sensitivity(
            &dmatrix![1.0, -2.0; 0.0, 4.0],
            &dmatrix![-1.0, 1.0; 5.0, 0.5],
        )
        .unwrap();
        assert_eq!(s, dmatrix![1.0, 2.0; 0.0, 2.0]);
        assert_eq!(
            sensitivity(&dmatrix![1.0, 2.0], &dmatrix![0.0, 0.0]).unwrap(),
            dmatrix![0.0, 0.0]
        );
        assert!(matches!(
            sensitivity(&dmatrix![1.0, 2.0], &dmatrix![1.0; 2.0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn score_update_examples() {
        let mut s = ImportanceState::new(1, 1, 0.0, 0.0).unwrap();
        assert_eq!(s.update(&dmatrix![3.0]).unwrap(), dmatrix![0.0]);
        assert_eq!(s.smoothed, dmatrix![3.0]);

        let mut s = ImportanceState::new(1, 1, 0.5, 0.5).unwrap();
        let score = s.update(&dmatrix![4.0]).unwrap();
        assert_eq!((s.smoothed[0], s.uncertainty[0], score[0]), (2.0, 1.0, 2.0));
        assert_eq!(s.step, 1);

        assert!(ImportanceState::new(1, 1, 1.0, 0.5).is_err());
        assert!(s.update(&dmatrix![-1.0]).is_err());
        assert!(s.update(&dmatrix![1.0, 2.0]).is_err());
    }

    #[test]
    fn constant_stream_score_vanishes() {
        let (b, c) = (0.9f64, 2.5);
        let mut s = ImportanceState::new(1, 1, b, b).unwrap();
        let mut score = 0.0;
        for _ in 0..50 {
            score = s.update(&dmatrix![c]).unwrap()[0];
        }
        // Ī_k = c(1 - b^k); Ū_k = (1-b)·c·Σ_j b^(k-j)·b^j = (1-b)·c·k·b^k
        let ibar = c * (1.0 - b.powi(50));
        let ubar = (1.0 - b) * c * 50.0 * b.powi(50);
        assert!((s.smoothed[0] - ibar).abs() < 1e-12);
        assert!((s.uncertainty[0] - ubar).abs() < 1e-12);
        assert!((score - ibar * ubar).abs() < 1e-12);
        for _ in 50..300 {
            score = s.update(&dmatrix![c]).unwrap()[0];
        }
        assert!(score < 1e-10);
    }

    #[test]
    fn node_values() {
        assert_eq!(node_value_pair(&[2.0, 4.0], &[6.0]).unwrap(), 4.5);
        assert_eq!(node_value_pair(&[0.7; 3], &[0.7; 5]).unwrap(), 0.7);
        assert_eq!(node_value_pair(&[0.0], &[0.0]).unwrap(), 0.0);
        assert!(node_value_pair(&[], &[1.0]).is_err());
        assert_eq!(node_value_bias(&[4.0, 4.0]).unwrap(), 2.0);
        assert_eq!(node_value_bias(&[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(node_value_bias(&[0.0, 0.0]).unwrap(), 0.0);
        assert!(node_value_bias(&[]).is_err());
    }

    #[test]
    fn statistics_examples() {
        let s = SampleSet::unnamed(dmatrix![0.0, 0.0; 2.0, 2.0]).unwrap();
        let (mean, cov) = sample_statistics(&s).unwrap();
        assert_eq!(mean.as_slice(), &[1.0, 1.0]);
        assert_eq!(cov, dmatrix![2.0, 2.0; 2.0, 2.0]);
        let s = SampleSet::unnamed(dmatrix![1.0, 3.0; 1.0, 3.0; 1.0, 3.0]).unwrap();
        assert_eq!(sample_statistics(&s).unwrap().1, DMatrix::zeros(2, 2));
        assert!(sample_statistics(&SampleSet::unnamed(dmatrix![1.0, 2.0]).unwrap()).is_err());
        assert!(SampleSet::unnamed(dmatrix![-1.0]).is_err());
    }

    #[test]
    fn monte_carlo_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let l = dmatrix![
            1.0, 0.0, 0.0, 0.0, 0.0;
            0.5, 1.0, 0.0, 0.0, 0.0;
            0.0, -0.3, 0.8, 0.0, 0.0;
            0.2, 0.0, 0.1, 0.6, 0.0;
            0.0, 0.4, 0.0, -0.2, 1.2
        ];
        let truth = &l * l.transpose();
        let m = 10_000;
        let z = DMatrix::from_fn(m, 5, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = (z * l.transpose()).add_scalar(10.0);
        let (_, cov) = sample_statistics(&SampleSet::unnamed(x).unwrap()).unwrap();
        assert!((cov - truth).norm() < 0.1);
    }

    #[test]
    fn standardized_covariance_has_unit_diagonal() {
        let c = standardize_covariance(&dmatrix![4.0, 1.0, 0.0; 1.0, 1.0, 0.0; 0.0, 0.0, 0.0]);
        assert_eq!(c, dmatrix![1.0, 0.5, 0.0; 0.5, 1.0, 0.0; 0.0, 0.0, 0.0]);
    }

    #[test]
    fn important_selection() {
        assert_eq!(select_important(&[0.1, 0.9, 0.5], 2).unwrap(), vec![1, 2]);
        assert_eq!(
            select_important(&[0.1, 0.9, 0.5], 3).unwrap(),
            vec![0, 1, 2]
        );
        assert_eq!(select_important(&[0.5, 0.5, 0.1], 1).unwrap(), vec![0]);
        assert!(select_important(&[0.5], 0).is_err());
        assert!(select_important(&[0.5], 2).is_err());
    }

    fn record(
        step: u64,
        layer: usize,
        tensor: TensorRole,
        index: usize,
        values: Vec<f64>,
        grads: Vec<f64>,
    ) -> StepRecord {
        StepRecord {
            step,
            layer_id: layer,
            tensor,
            index,
            values,
            grads,
        }
    }

    #[test]
    fn replay_single_layer() {
        let recs = vec![
            record(0, 3, TensorRole::A, 1, vec![1.0, 2.0], vec![2.0, 1.0]),
            record(
                0,
                3,
                TensorRole::B,
                1,
                vec![1.0, -1.0, 1.0],
                vec![1.0, 1.0, 1.0],
            ),
            record(
                0,
                3,
                TensorRole::Bias,
                0,
                vec![0.5, 0.5, 0.5],
                vec![4.0, 4.0, 4.0],
            ),
            record(1, 3, TensorRole::A, 1, vec![1.0, 2.0], vec![0.0, 0.0]),
            record(
                1,
                3,
                TensorRole::B,
                1,
                vec![1.0, -1.0, 1.0],
                vec![1.0, 1.0, 1.0],
            ),
            record(
                1,
                3,
                TensorRole::Bias,
                0,
                vec![0.5, 0.5, 0.5],
                vec![4.0, 4.0, 4.0],
            ),
        ];
        let s = replay_scores(&recs, 0.5, 0.5).unwrap();
        assert_eq!(s.names(), ["L3:A1", "L3:b"]);
        // step 0: sens A = (2,2) → Ī=1, Ū=0.5, s=0.5; B sens 1 → s=0.125;
        // bias sens 2 → s=0.5
        assert_eq!(
            s.values().row(0).iter().copied().collect::<Vec<_>>(),
            vec![0.3125, 0.25]
        );
        // step 1: A sens 0 → Ī=0.5, Ū=0.25+0.25=0.5, s=0.25;
        // B sens 1 → Ī=0.75, Ū=0.125+0.125=0.25, s=0.1875
        assert!((s.values()[(1, 0)] - 0.5 * (0.25 + 0.1875)).abs() < 1e-15);

        let zero = replay_scores(&recs[..3], 0.0, 0.0).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn replay_rejects_incomplete_steps() {
        let recs = vec![
            record(0, 0, TensorRole::A, 1, vec![1.0], vec![1.0]),
            record(0, 0, TensorRole::B, 1, vec![1.0], vec![1.0]),
            record(0, 0, TensorRole::Bias, 0, vec![1.0], vec![1.0]),
            record(1, 0, TensorRole::A, 1, vec![1.0], vec![1.0]),
        ];
        assert!(replay_scores(&recs, 0.5, 0.5).is_err());
        assert!(replay_scores(&recs[..2], 0.5, 0.5).is_err());
        assert!(replay_scores(&[], 0.5, 0.5).is_err());
        let mismatched = vec![
            record(0, 0, TensorRole::A, 1, vec![1.0], vec![1.0, 2.0]),
            record(0, 0, TensorRole::B, 1, vec![1.0], vec![1.0]),
            record(0, 0, TensorRole::Bias, 0, vec![1.0], vec![1.0]),
        ];
        assert!(matches!(
            replay_scores(&mismatched, 0.5, 0.5),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn record_json_shape() {
        let r: StepRecord = serde_json::from_str(
            r#"{"step": 2, "layer_id": 1, "tensor": "B_i", "index": 3, "values": [1.0], "grads": [0.5]}"#,
        )
        .unwrap();
        assert_eq!((r.tensor, r.index), (TensorRole::B, 3));
        let b: StepRecord = serde_json::from_str(
            r#"{"step": 0, "layer_id": 1, "tensor": "b", "values": [], "grads": []}"#,
        )
        .unwrap();
        assert_eq!(b.tensor, TensorRole::Bias);
    }

    proptest! {
        #[test]
        fn reconstruction_and_ordering(d1 in 1usize..24, d2 in 1usize..24, seed in any::<u64>(), frac in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = DMatrix::from_fn(d1, d2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let k = d1.min(d2);
            let r = 1 + ((k - 1) as f64 * frac) as usize;
            let d = decompose_layer(&w, r).unwrap();
            prop_assert!((d.reconstruct() - &w).norm() <= 1e-8 * w.norm());
            for i in 0..r {
                prop_assert!((d.b[i].norm() - 1.0).abs() < 1e-10);
                if i > 0 {
                    prop_assert!(d.a[i].norm() <= d.a[i - 1].norm() + 1e-10);
                }
                let pivot = d.a[i].iamax();
                prop_assert!(d.a[i][pivot] >= 0.0);
            }
        }

        #[test]
        fn ema_bounded_and_scores_nonnegative(
            stream in proptest::collection::vec(0.0f64..5.0, 1..60),
            b1 in 0.0f64..0.99,
            b2 in 0.0f64..0.99,
        ) {
            let mut s = ImportanceState::new(1, 1, b1, b2).unwrap();
            for v in stream {
                let score = s.update(&dmatrix![v]).unwrap()[0];
                prop_assert!(score >= 0.0);
                prop_assert!((0.0..=5.0).contains(&s.smoothed[0]));
                prop_assert!((0.0..=5.0).contains(&s.uncertainty[0]));
            }
        }

        #[test]
        fn statistics_permutation_equivariant(seed in any::<u64>(), h in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (m, n) = (12, 6);
            let x = DMatrix::from_fn(m, n, |_, _| rng.random_range(0.0..3.0));
            let perm: Vec<usize> = {
                let mut p: Vec<usize> = (0..n).collect();
                for i in (1..n).rev() {
                    p.swap(i, rng.random_range(0..=i));
                }
                p
            };
            let xp = DMatrix::from_fn(m, n, |i, j| x[(i, perm[j])]);
            let (mean, cov) = sample_statistics(&SampleSet::unnamed(x).unwrap()).unwrap();
            let (mean_p, cov_p) = sample_statistics(&SampleSet::unnamed(xp).unwrap()).unwrap();
            for i in 0..n {
                prop_assert!((mean_p[i] - mean[perm[i]]).abs() < 1e-12);
                for j in 0..n {
                    prop_assert!((cov_p[(i, j)] - cov[(perm[i], perm[j])]).abs() < 1e-12);
                }
            }
            let imp: Vec<usize> = select_important(mean.as_slice(), h).unwrap();
            let mut imp_p: Vec<usize> = select_important(mean_p.as_slice(), h)
                .unwrap()
                .into_iter()
                .map(|k| perm[k])
                .collect();
            imp_p.sort_unstable();
            // continuous random means: ties have probability zero
            prop_assert_eq!(imp, imp_p);
        }
    }
}
