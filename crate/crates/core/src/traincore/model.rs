//! Dense toy network with optional LoRA pairs, manual backprop and the
//! fused per-layer SGD path.

use std::cell::Cell;
use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::TrainError;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// out × in
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraPair {
    /// r × in
    pub a: Array2<f64>,
    /// out × r
    pub b: Array2<f64>,
    pub alpha: f64,
}

impl LoraPair {
    pub fn rank(&self) -> usize {
        self.a.nrows()
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank() as f64
    }
}

/// Rows are positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Array2<f64>,
    pub targets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub layers: Vec<Dense>,
    pub vocab: usize,
    pub adapters: BTreeMap<usize, LoraPair>,
}

fn gaussian<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Array2<f64> {
    let normal = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_simple_fn((rows, cols), || normal.sample(rng))
}

/// Gradients for one layer's dense weights and, if adapted, its LoRA pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub lora: Option<(Array2<f64>, Array2<f64>)>,
}

/// Which tensors an optimizer sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trainable {
    All,
    Adapters,
}

struct Trace {
    /// inputs[l] feeds layer l; the last entry is the logits.
    acts: Vec<Array2<f64>>,
    /// x·Aᵀ for adapted layers.
    lora_u: Vec<Option<Array2<f64>>>,
}

impl ToyModel {
    /// `sizes` lists layer widths from input to vocab output.
    pub fn new<R: Rng>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need at least one layer");
        let layers = sizes
            .windows(2)
            .map(|io| Dense {
                w: gaussian(io[1], io[0], 1.0 / (io[0] as f64).sqrt(), rng),
                b: Array1::zeros(io[1]),
            })
            .collect();
        Self {
            layers,
            vocab: *sizes.last().unwrap(),
            adapters: BTreeMap::new(),
        }
    }

    /// A seeded Gaussian, B zero, on each listed layer.
    pub fn add_adapters<R: Rng>(&mut self, layers: &[usize], rank: usize, alpha: f64, rng: &mut R) {
        for &l in layers {
            let (out, inp) = self.layers[l].w.dim();
            self.adapters.insert(
                l,
                LoraPair {
                    a: gaussian(rank, inp, 1.0 / (inp as f64).sqrt(), rng),
                    b: Array2::zeros((out, rank)),
                    alpha,
                },
            );
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    fn trace(&self, x: &Array2<f64>) -> Trace {
        let last = self.layers.len() - 1;
        let mut acts = vec![x.clone()];
        let mut lora_u = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let input = &acts[l];
            let mut z = input.dot(&layer.w.t()) + &layer.b;
            let u = self.adapters.get(&l).map(|p| {
                let u = input.dot(&p.a.t());
                z.scaled_add(p.scale(), &u.dot(&p.b.t()));
                u
            });
            lora_u.push(u);
            if l < last {
                z.mapv_inplace(f64::tanh);
            }
            acts.push(z);
        }
        Trace { acts, lora_u }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        self.trace(x).acts.pop().unwrap()
    }

    pub fn loss(&self, batch: &Batch) -> Result<f64, TrainError> {
        cross_entropy(&self.forward(&batch.x), &batch.targets)
    }

    /// Loss and per-layer gradients, accumulated before any update.
    pub fn gradients(&self, batch: &Batch) -> Result<(f64, Vec<LayerGrad>), TrainError> {
        let mut grads: Vec<Option<LayerGrad>> = vec![None; self.layers.len()];
        let loss = self.backward(batch, |l, g| grads[l] = Some(g))?;
        Ok((loss, grads.into_iter().map(|g| g.expect("every layer visited")).collect()))
    }

    /// Walks layers last to first, handing each gradient to `visit` as soon
    /// as it exists.
    fn backward(
        &self,
        batch: &Batch,
        mut visit: impl FnMut(usize, LayerGrad),
    ) -> Result<f64, TrainError> {
        let trace = self.trace(&batch.x);
        let logits = trace.acts.last().unwrap();
        let (loss, mut dz) = loss_and_dlogits(logits, &batch.targets)?;
        for l in (0..self.layers.len()).rev() {
            let (grad, dx) = layer_backward(
                &self.layers[l],
                self.adapters.get(&l),
                &trace.acts[l],
                trace.lora_u[l].as_ref(),
                &dz,
            );
            visit(l, grad);
            if l > 0 {
                let h = &trace.acts[l];
                dz = dx * &h.mapv(|v| 1.0 - v * v);
            }
        }
        Ok(loss)
    }

    pub fn tensors_mut(&mut self, which: Trainable) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        match which {
            Trainable::All => {
                for layer in &mut self.layers {
                    out.push(layer.w.as_slice_mut().expect("standard layout"));
                    out.push(layer.b.as_slice_mut().expect("standard layout"));
                }
            }
            Trainable::Adapters => {
                for pair in self.adapters.values_mut() {
                    out.push(pair.a.as_slice_mut().expect("standard layout"));
                    out.push(pair.b.as_slice_mut().expect("standard layout"));
                }
            }
        }
        out
    }

    pub fn tensor_sizes(&self, which: Trainable) -> Vec<usize> {
        match which {
            Trainable::All => self.layers.iter().flat_map(|d| [d.w.len(), d.b.len()]).collect(),
            Trainable::Adapters => self.adapters.values().flat_map(|p| [p.a.len(), p.b.len()]).collect(),
        }
    }

    pub fn param_count(&self, which: Trainable) -> usize {
        self.tensor_sizes(which).iter().sum()
    }
}

/// Flattens gradients in the same order as `tensors_mut`.
pub fn grad_slices(grads: &[LayerGrad], which: Trainable) -> Vec<&[f64]> {
    let mut out = Vec::new();
    for g in grads {
        match which {
            Trainable::All => {
                out.push(g.w.as_slice().expect("standard layout"));
                out.push(g.b.as_slice().expect("standard layout"));
            }
            Trainable::Adapters => {
                if let Some((a, b)) = &g.lora {
                    out.push(a.as_slice().expect("standard layout"));
                    out.push(b.as_slice().expect("standard layout"));
                }
            }
        }
    }
    out
}

fn standard(m: Array2<f64>) -> Array2<f64> {
    if m.is_standard_layout() {
        m
    } else {
        m.as_standard_layout().into_owned()
    }
}

fn layer_backward(
    layer: &Dense,
    adapter: Option<&LoraPair>,
    x: &Array2<f64>,
    u: Option<&Array2<f64>>,
    dz: &Array2<f64>,
) -> (LayerGrad, Array2<f64>) {
    let dw = standard(dz.t().dot(x));
    let db = dz.sum_axis(Axis(0));
    let mut dx = dz.dot(&layer.w);
    let lora = match (adapter, u) {
        (Some(p), Some(u)) => {
            let s = p.scale();
            let d_b = standard(dz.t().dot(u) * s);
            let du = dz.dot(&p.b) * s;
            let d_a = standard(du.t().dot(x));
            dx = dx + du.dot(&p.a);
            Some((d_a, d_b))
        }
        _ => None,
    };
    (LayerGrad { w: dw, b: db, lora }, dx)
}

fn log_softmax_row(row: ndarray::ArrayView1<f64>) -> Array1<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.mapv(|v| v - lse)
}

fn check_targets(logits: &Array2<f64>, targets: &[usize]) -> Result<(), TrainError> {
    if targets.len() != logits.nrows() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} targets for {} positions",
            targets.len(),
            logits.nrows()
        )));
    }
    if targets.is_empty() {
        return Err(TrainError::ShapeMismatch("no positions".into()));
    }
    if let Some(t) = targets.iter().find(|&&t| t >= logits.ncols()) {
        return Err(TrainError::ShapeMismatch(format!(
            "target {t} outside vocab {}",
            logits.ncols()
        )));
    }
    Ok(())
}

/// Mean over positions of -log softmax(logits)[target].
pub fn cross_entropy(logits: &Array2<f64>, targets: &[usize]) -> Result<f64, TrainError> {
    check_targets(logits, targets)?;
    let total: f64 = logits
        .outer_iter()
        .zip(targets)
        .map(|(row, &t)| -log_softmax_row(row)[t])
        .sum();
    Ok(total / targets.len() as f64)
}

fn loss_and_dlogits(logits: &Array2<f64>, targets: &[usize]) -> Result<(f64, Array2<f64>), TrainError> {
    check_targets(logits, targets)?;
    let n = targets.len() as f64;
    let mut d = Array2::zeros(logits.raw_dim());
    let mut total = 0.0;
    for (i, (row, &t)) in logits.outer_iter().zip(targets).enumerate() {
        let lp = log_softmax_row(row);
        total -= lp[t];
        let mut drow = d.row_mut(i);
        drow.assign(&lp.mapv(|v| v.exp() / n));
        drow[t] -= 1.0 / n;
    }
    Ok((total / n, d))
}

fn check_lora(w: &Array2<f64>, a: &Array2<f64>, b: &Array2<f64>, r: usize) -> Result<(), TrainError> {
    let (out, inp) = w.dim();
    if a.dim() != (r, inp) || b.dim() != (out, r) {
        return Err(TrainError::ShapeMismatch(format!(
            "W {out}x{inp}, A {:?}, B {:?}, r {r}",
            a.dim(),
            b.dim()
        )));
    }
    if r == 0 {
        return Err(TrainError::ShapeMismatch("rank must be positive".into()));
    }
    Ok(())
}

/// W·x + (alpha/r)·B·(A·x)
pub fn lora_forward(
    w: &Array2<f64>,
    a: &Array2<f64>,
    b: &Array2<f64>,
    alpha: f64,
    r: usize,
    x: &Array1<f64>,
) -> Result<Array1<f64>, TrainError> {
    check_lora(w, a, b, r)?;
    if x.len() != w.ncols() {
        return Err(TrainError::ShapeMismatch(format!("x has {} entries, W takes {}", x.len(), w.ncols())));
    }
    let mut y = w.dot(x);
    y.scaled_add(alpha / r as f64, &b.dot(&a.dot(x)));
    Ok(y)
}

/// W + (alpha/r)·B·A
pub fn lora_merge(
    w: &Array2<f64>,
    a: &Array2<f64>,
    b: &Array2<f64>,
    alpha: f64,
    r: usize,
) -> Result<Array2<f64>, TrainError> {
    check_lora(w, a, b, r)?;
    let mut m = w.clone();
    m.scaled_add(alpha / r as f64, &b.dot(a));
    Ok(m)
}

/// Counts gradient buffers alive at once.
#[derive(Debug, Default)]
pub struct GradTracker {
    live: Cell<usize>,
    peak: Cell<usize>,
}

impl GradTracker {
    pub fn track(&self, grad: LayerGrad) -> TrackedGrad<'_> {
        let live = self.live.get() + 1;
        self.live.set(live);
        self.peak.set(self.peak.get().max(live));
        TrackedGrad { grad, tracker: self }
    }

    pub fn live(&self) -> usize {
        self.live.get()
    }

    pub fn peak(&self) -> usize {
        self.peak.get()
    }
}

pub struct TrackedGrad<'a> {
    pub grad: LayerGrad,
    tracker: &'a GradTracker,
}

impl Drop for TrackedGrad<'_> {
    fn drop(&mut self) {
        self.tracker.live.set(self.tracker.live.get() - 1);
    }
}

#[derive(Debug, Clone)]
pub struct SgdRun {
    pub model: ToyModel,
    pub loss: f64,
    pub peak_live_grads: usize,
}

fn sgd_apply(layer: &mut Dense, adapter: Option<&mut LoraPair>, g: &LayerGrad, lr: f64) {
    layer.w.scaled_add(-lr, &g.w);
    layer.b.scaled_add(-lr, &g.b);
    if let (Some(p), Some((da, db))) = (adapter, &g.lora) {
        p.a.scaled_add(-lr, da);
        p.b.scaled_add(-lr, db);
    }
}

/// Fused SGD: each layer is updated as soon as its gradient is formed and
/// the gradient is dropped before the next layer's is computed.
pub fn lomo_sgd_run(model: &ToyModel, batch: &Batch, lr: f64) -> Result<SgdRun, TrainError> {
    let mut next = model.clone();
    let tracker = GradTracker::default();
    let trace = model.trace(&batch.x);
    let (loss, mut dz) = loss_and_dlogits(trace.acts.last().unwrap(), &batch.targets)?;
    for l in (0..next.layers.len()).rev() {
        let (grad, dx) = layer_backward(
            &next.layers[l],
            next.adapters.get(&l),
            &trace.acts[l],
            trace.lora_u[l].as_ref(),
            &dz,
        );
        let tracked = tracker.track(grad);
        sgd_apply(&mut next.layers[l], next.adapters.get_mut(&l), &tracked.grad, lr);
        drop(tracked);
        if l > 0 {
            dz = dx * &trace.acts[l].mapv(|v| 1.0 - v * v);
        }
    }
    Ok(SgdRun {
        model: next,
        loss,
        peak_live_grads: tracker.peak(),
    })
}

/// Reference SGD: all gradients first, then one update.
pub fn sgd_reference(model: &ToyModel, batch: &Batch, lr: f64) -> Result<SgdRun, TrainError> {
    let tracker = GradTracker::default();
    let mut held = Vec::new();
    let loss = model.backward(batch, |_, g| held.push(tracker.track(g)))?;
    let mut next = model.clone();
    let n = next.layers.len();
    for (i, tg) in held.iter().enumerate() {
        let l = n - 1 - i;
        sgd_apply(&mut next.layers[l], next.adapters.get_mut(&l), &tg.grad, lr);
    }
    let peak = tracker.peak();
    drop(held);
    Ok(SgdRun {
        model: next,
        loss,
        peak_live_grads: peak,
    })
}
