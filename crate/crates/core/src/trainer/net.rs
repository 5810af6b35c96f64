//! Softmax regression and a one-hidden-layer tanh MLP with analytic
//! gradients of the cross-entropy loss.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::data::{Dataset, RowRef};
use crate::config::{ModelKind, SimConfig};
use crate::model::{LayerShape, ModelError, ModelParams, ShapeTag};
use crate::rng::{self, Domain};

/// Lower bound on a predicted probability inside `ln`.
pub const PROB_FLOOR: f64 = 1e-12;

/// Half-width of the uniform initialization interval.
pub const INIT_SCALE: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("non-finite gradient in layer {layer} ({shape})")]
    NonFiniteGradient { layer: usize, shape: String },
    #[error("empty batch")]
    EmptyBatch,
    #[error("model expects {expected} features but data has {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainerModel {
    pub kind: ModelKind,
    pub params: ModelParams,
}

/// Cross-entropy summed over a dataset and divided by its size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Loss {
    pub total: f64,
    pub per_sample: f64,
}

pub fn architecture(kind: ModelKind, dim: usize, classes: usize, hidden: usize) -> ShapeTag {
    match kind {
        ModelKind::SoftmaxRegression => ShapeTag::dense(&[dim, classes]),
        ModelKind::Mlp1Hidden => ShapeTag::dense(&[dim, hidden, classes]),
    }
}

fn layer_views<'a>(params: &'a ModelParams) -> Vec<(ArrayView2<'a, f64>, ArrayView1<'a, f64>)> {
    let values = params.values();
    params
        .shape()
        .0
        .iter()
        .zip(params.shape().offsets())
        .map(|(layer, start)| {
            let w_end = start + layer.weight_len();
            let w = ArrayView2::from_shape((layer.inputs, layer.outputs), &values[start..w_end]).unwrap();
            let b = ArrayView1::from(&values[w_end..w_end + layer.outputs]);
            (w, b)
        })
        .collect()
}

fn softmax_rows(mut logits: Array2<f64>) -> Array2<f64> {
    for mut row in logits.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    logits
}

impl TrainerModel {
    /// Seeded uniform initialization in `[-INIT_SCALE, INIT_SCALE]`.
    pub fn init(kind: ModelKind, dim: usize, classes: usize, hidden: usize, seed: u64) -> Self {
        let shape = architecture(kind, dim, classes, hidden);
        let mut rng = rng::stream(seed, Domain::ModelInit, 0);
        let values = (0..shape.param_len())
            .map(|_| rng.gen_range(-INIT_SCALE..=INIT_SCALE))
            .collect();
        let params = ModelParams::new(values, shape).expect("sized from shape");
        Self { kind, params }
    }

    /// Wraps `params`, checking that the layer layout fits `kind`.
    pub fn from_params(kind: ModelKind, params: ModelParams) -> Result<Self, TrainError> {
        let layers = params.shape().0.len();
        let expected = match kind {
            ModelKind::SoftmaxRegression => 1,
            ModelKind::Mlp1Hidden => 2,
        };
        if layers != expected {
            return Err(TrainError::Model(ModelError::LengthMismatch {
                shape: params.shape().clone(),
                expected,
                actual: layers,
            }));
        }
        Ok(Self { kind, params })
    }

    pub fn input_dim(&self) -> usize {
        self.params.shape().0[0].inputs
    }

    pub fn num_classes(&self) -> usize {
        self.params.shape().0.last().map(|l| l.outputs).unwrap_or(0)
    }

    fn check_dim(&self, data: &Dataset) -> Result<(), TrainError> {
        if data.dim() != self.input_dim() {
            return Err(TrainError::DimensionMismatch {
                expected: self.input_dim(),
                actual: data.dim(),
            });
        }
        Ok(())
    }

    /// Hidden activations (MLP only) and class probabilities.
    fn forward_parts(&self, x: ArrayView2<f64>) -> (Option<Array2<f64>>, Array2<f64>) {
        let layers = layer_views(&self.params);
        match self.kind {
            ModelKind::SoftmaxRegression if x.is_standard_layout() => {
                let LayerShape { inputs, outputs } = self.params.shape().0[0];
                let (w, b) = self.params.values().split_at(inputs * outputs);
                let mut probs = Array2::zeros((x.nrows(), outputs));
                for (xr, mut pr) in x.rows().into_iter().zip(probs.rows_mut()) {
                    let row = RowRef::Dense(xr.to_slice().expect("standard layout"));
                    softmax_row(w, b, row, pr.as_slice_mut().expect("fresh array"));
                }
                (None, probs)
            }
            ModelKind::SoftmaxRegression => {
                let (w, b) = &layers[0];
                (None, softmax_rows(x.dot(w) + b))
            }
            ModelKind::Mlp1Hidden => {
                let (w1, b1) = &layers[0];
                let (w2, b2) = &layers[1];
                let hidden = (x.dot(w1) + b1).mapv(f64::tanh);
                let probs = softmax_rows(hidden.dot(w2) + b2);
                (Some(hidden), probs)
            }
        }
    }

    /// Row-wise class probabilities.
    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward_parts(x).1
    }

    /// Gradient of the per-sample (mean) cross-entropy over `batch`.
    pub fn gradient(&self, batch: &Dataset) -> Result<ModelParams, TrainError> {
        self.gradient_on(Batch::all(batch))
    }

    /// As [`gradient`](Self::gradient), over a row selection. Rows are
    /// processed in fixed-size blocks, so no copy of the selection is made.
    pub fn gradient_on(&self, batch: Batch<'_>) -> Result<ModelParams, TrainError> {
        if batch.is_empty() {
            return Err(TrainError::EmptyBatch);
        }
        self.check_dim(batch.data)?;
        let shape = self.params.shape().clone();
        if self.kind == ModelKind::SoftmaxRegression {
            let values = softmax_gradient(&self.params, batch);
            if values.iter().any(|v| !v.is_finite()) {
                let LayerShape { inputs, outputs } = shape.0[0];
                return Err(TrainError::NonFiniteGradient {
                    layer: 0,
                    shape: format!("{inputs}x{outputs}"),
                });
            }
            return Ok(ModelParams::new(values, shape)?);
        }
        let layers = layer_views(&self.params);
        let mut dws: Vec<Array2<f64>> = shape.0.iter().map(|l| Array2::zeros((l.inputs, l.outputs))).collect();
        let mut dbs: Vec<Array1<f64>> = shape.0.iter().map(|l| Array1::zeros(l.outputs)).collect();
        // d(mean CE)/d(logits) = (p - y) / n
        let inv_n = 1.0 / batch.len() as f64;

        batch.for_each_block(|x, labels| {
            let (hidden, mut delta) = self.forward_parts(x);
            for (mut row, &label) in delta.rows_mut().into_iter().zip(labels) {
                row[label] -= 1.0;
            }
            delta *= inv_n;
            match hidden {
                None => {
                    general_mat_mul(1.0, &x.t(), &delta, 1.0, &mut dws[0]);
                    dbs[0] += &delta.sum_axis(Axis(0));
                }
                Some(hidden) => {
                    let (w2, _) = &layers[1];
                    let mut d_hidden = delta.dot(&w2.t());
                    d_hidden.zip_mut_with(&hidden, |d, &h| *d *= 1.0 - h * h);
                    general_mat_mul(1.0, &hidden.t(), &delta, 1.0, &mut dws[1]);
                    dbs[1] += &delta.sum_axis(Axis(0));
                    general_mat_mul(1.0, &x.t(), &d_hidden, 1.0, &mut dws[0]);
                    dbs[0] += &d_hidden.sum_axis(Axis(0));
                }
            }
        });

        let mut values = Vec::with_capacity(shape.param_len());
        for (layer, (dw, db)) in dws.iter().zip(&dbs).enumerate() {
            if dw.iter().chain(db.iter()).any(|v| !v.is_finite()) {
                let LayerShape { inputs, outputs } = shape.0[layer];
                return Err(TrainError::NonFiniteGradient {
                    layer,
                    shape: format!("{inputs}x{outputs}"),
                });
            }
            values.extend(dw.iter().chain(db.iter()));
        }
        Ok(ModelParams::new(values, shape)?)
    }
}

/// `out += a * w` for `out.len() == K`; fixed `K` lets the loop vectorize.
#[inline(always)]
fn axpy<const K: usize>(out: &mut [f64], a: f64, w: &[f64]) {
    let out: &mut [f64; K] = out.try_into().expect("length K");
    let w: &[f64; K] = w.try_into().expect("length K");
    for c in 0..K {
        out[c] += a * w[c];
    }
}

#[inline(always)]
fn axpy_any(out: &mut [f64], a: f64, w: &[f64]) {
    match out.len() {
        10 => axpy::<10>(out, a, w),
        _ => out.iter_mut().zip(w).for_each(|(o, &wc)| *o += a * wc),
    }
}

/// Softmax of `b + x W` into `out`; `w` holds one row of `out.len()`
/// weights per input feature.
fn softmax_row(w: &[f64], b: &[f64], x: RowRef<'_>, out: &mut [f64]) {
    let k = out.len();
    out.copy_from_slice(b);
    x.for_each(|j, xj| axpy_any(out, xj, &w[j * k..(j + 1) * k]));
    let max = out.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut sum = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// Mean cross-entropy gradient of softmax regression in parameter layout,
/// one pass over the rows.
fn softmax_gradient(params: &ModelParams, batch: Batch<'_>) -> Vec<f64> {
    let LayerShape { inputs, outputs: k } = params.shape().0[0];
    let (w, b) = params.values().split_at(inputs * k);
    let mut grad = vec![0.0; params.len()];
    let (dw, db) = grad.split_at_mut(inputs * k);
    let mut delta = vec![0.0; k];
    let inv_n = 1.0 / batch.len() as f64;
    batch.for_each_row(|x, label| {
        softmax_row(w, b, x, &mut delta);
        delta[label] -= 1.0;
        delta.iter_mut().for_each(|d| *d *= inv_n);
        x.for_each(|j, xj| axpy_any(&mut dw[j * k..(j + 1) * k], xj, &delta));
        db.iter_mut().zip(&delta).for_each(|(g, &dc)| *g += dc);
    });
    grad
}

/// Rows per block when streaming over a batch.
const BLOCK_ROWS: usize = 256;

/// A dataset or a subset of its rows (repeats allowed).
#[derive(Clone, Copy, Debug)]
pub struct Batch<'a> {
    pub data: &'a Dataset,
    rows: Option<&'a [usize]>,
}

impl<'a> Batch<'a> {
    pub fn all(data: &'a Dataset) -> Self {
        Self { data, rows: None }
    }

    /// Panics later if an index is out of range.
    pub fn rows(data: &'a Dataset, rows: &'a [usize]) -> Self {
        Self { data, rows: Some(rows) }
    }

    pub fn len(&self) -> usize {
        self.rows.map_or(self.data.len(), <[usize]>::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Calls `f` with each row and its label, in order.
    fn for_each_row(&self, mut f: impl FnMut(RowRef<'_>, usize)) {
        let labels = self.data.labels();
        match self.rows {
            None => (0..labels.len()).for_each(|i| f(self.data.row(i), labels[i])),
            Some(rows) => rows.iter().for_each(|&i| f(self.data.row(i), labels[i])),
        }
    }

    /// Calls `f` with consecutive blocks of rows and their labels, in order.
    fn for_each_block(&self, mut f: impl FnMut(ArrayView2<f64>, &[usize])) {
        let features = self.data.features();
        let labels = self.data.labels();
        match self.rows {
            None => {
                for start in (0..labels.len()).step_by(BLOCK_ROWS) {
                    let end = (start + BLOCK_ROWS).min(labels.len());
                    f(features.slice(s![start..end, ..]), &labels[start..end]);
                }
            }
            Some(rows) => {
                for chunk in rows.chunks(BLOCK_ROWS) {
                    let x = features.select(Axis(0), chunk);
                    let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                    f(x.view(), &y);
                }
            }
        }
    }
}

/// Cross-entropy with one-hot targets and probabilities floored at
/// [`PROB_FLOOR`].
pub fn loss(model: &TrainerModel, data: &Dataset) -> Loss {
    loss_on(model, Batch::all(data))
}

pub fn loss_on(model: &TrainerModel, batch: Batch<'_>) -> Loss {
    let probs = probabilities(model, batch);
    let labels: Vec<usize> = match batch.rows {
        Some(rows) => rows.iter().map(|&i| batch.data.labels()[i]).collect(),
        None => batch.data.labels().to_vec(),
    };
    loss_from_probs(probs.view(), &labels)
}

/// Floored cross-entropy of precomputed class probabilities.
pub fn loss_from_probs(probs: ArrayView2<f64>, labels: &[usize]) -> Loss {
    let total: f64 = probs
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &label)| -row[label].max(PROB_FLOOR).ln())
        .sum();
    Loss {
        total,
        per_sample: total / labels.len().max(1) as f64,
    }
}

/// Row-wise class probabilities of `batch`, in batch order.
pub fn probabilities(model: &TrainerModel, batch: Batch<'_>) -> Array2<f64> {
    let k = model.num_classes();
    let mut probs = Array2::zeros((batch.len(), k));
    match model.kind {
        ModelKind::SoftmaxRegression => {
            let LayerShape { inputs, outputs } = model.params.shape().0[0];
            let (w, b) = model.params.values().split_at(inputs * outputs);
            let mut rows = probs.rows_mut().into_iter();
            batch.for_each_row(|x, _| {
                let mut out = rows.next().expect("one output row per input row");
                softmax_row(w, b, x, out.as_slice_mut().expect("fresh array"));
            });
        }
        ModelKind::Mlp1Hidden => {
            let mut at = 0;
            batch.for_each_block(|x, _| {
                let block = model.forward(x);
                probs.slice_mut(s![at..at + block.nrows(), ..]).assign(&block);
                at += block.nrows();
            });
        }
    }
    probs
}

/// Index of the largest entry per row; ties go to the lowest index.
pub fn argmax_rows(probs: ArrayView2<f64>) -> Vec<usize> {
    probs
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |best, (i, &p)| if p > best.1 { (i, p) } else { best },
                )
                .0
        })
        .collect()
}

/// One gradient step `params - eta * grad` over the whole `batch`.
pub fn sgd_step(model: &TrainerModel, batch: &Dataset, eta: f64) -> Result<TrainerModel, TrainError> {
    step_on(model, Batch::all(batch), eta)
}

fn step_on(model: &TrainerModel, batch: Batch<'_>, eta: f64) -> Result<TrainerModel, TrainError> {
    let grad = model.gradient_on(batch)?;
    let params = model.params.combine(1.0, &grad, -eta)?;
    Ok(TrainerModel {
        kind: model.kind,
        params,
    })
}

/// Starts from the downloaded global parameters and runs `cfg.local_iters`
/// SGD iterations on `shard`. With `cfg.batch_size == 0` (the default) every
/// iteration uses the full shard and `rng` is untouched.
pub fn local_train(
    global: &ModelParams,
    shard: &Dataset,
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ModelParams, TrainError> {
    local_train_on(global, Batch::all(shard), cfg, rng)
}

/// [`local_train`] over a row selection of a shared pool.
pub fn local_train_on(
    global: &ModelParams,
    shard: Batch<'_>,
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ModelParams, TrainError> {
    if shard.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut model = TrainerModel::from_params(cfg.model, global.clone())?;
    let minibatch = cfg.batch_size > 0 && cfg.batch_size < shard.len();
    for _ in 0..cfg.local_iters {
        model = if minibatch {
            let picks = rand::seq::index::sample(rng, shard.len(), cfg.batch_size);
            let rows: Vec<usize> = match shard.rows {
                Some(all) => picks.iter().map(|i| all[i]).collect(),
                None => picks.into_vec(),
            };
            step_on(&model, Batch::rows(shard.data, &rows), cfg.learning_rate)?
        } else {
            step_on(&model, shard, cfg.learning_rate)?
        };
    }
    Ok(model.params)
}

/// Predicted class per row; ties go to the lowest index.
pub fn predict(model: &TrainerModel, x: ArrayView2<f64>) -> Vec<usize> {
    argmax_rows(model.forward(x).view())
}

/// Weight block of layer `layer` as a matrix view; used by tests and examples.
pub fn layer_weights(params: &ModelParams, layer: usize) -> ArrayView2<'_, f64> {
    let shape = params.shape().0[layer];
    let start = params.shape().offsets()[layer];
    ArrayView2::from_shape(
        (shape.inputs, shape.outputs),
        &params.values()[start..start + shape.weight_len()],
    )
    .unwrap()
    .slice_move(s![.., ..])
}
