//! Character-level dry-run trainer driven by a `TrainingConfig`.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::model::{grad_slices, lomo_sgd_run, Batch, Dense, ToyModel, Trainable};
use super::optim::{AdamState, LionState, Optimizer};
use super::quant::{dequantize, quantize_rtn, QuantBits, QuantizedTensor, DEFAULT_GROUP};
use super::TrainError;
use crate::datasets::DatasetSpec;
use crate::memory::{MethodKind, OptimizerKind};
use crate::planner::{validate, TrainingConfig};
use crate::telemetry::{TelemetryRecord, TelemetrySink};

pub const PAD: char = '\0';

/// Id 0 is padding; the rest are the sorted distinct characters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharVocab {
    chars: Vec<char>,
}

impl CharVocab {
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let set: std::collections::BTreeSet<char> = texts.into_iter().flat_map(str::chars).collect();
        let mut chars = vec![PAD];
        chars.extend(set.into_iter().filter(|&c| c != PAD));
        Self { chars }
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.len() <= 1
    }

    pub fn id(&self, c: char) -> Option<usize> {
        self.chars.binary_search(&c).ok()
    }

    pub fn char(&self, id: usize) -> Option<char> {
        self.chars.get(id).copied()
    }
}

/// One row per character: the previous `context` characters one-hot, and
/// the character itself as target.
pub fn encode_text(text: &str, vocab: &CharVocab, context: usize) -> Batch {
    let ids: Vec<usize> = text.chars().map(|c| vocab.id(c).unwrap_or(0)).collect();
    let v = vocab.len();
    let mut x = Array2::zeros((ids.len(), context * v));
    for (t, _) in ids.iter().enumerate() {
        for k in 0..context {
            let id = if t >= context - k { ids[t - (context - k)] } else { 0 };
            x[[t, k * v + id]] = 1.0;
        }
    }
    Batch { x, targets: ids }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub max_steps: Option<u64>,
    pub hidden: usize,
    pub context: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            max_steps: None,
            hidden: 64,
            context: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub method: MethodKind,
    pub steps: u64,
    pub tokens: u64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub trainable_params: usize,
    pub frozen_params: usize,
    pub optimizer_buffers: usize,
    pub vocab: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ToyModel,
    /// Quantized frozen base, for the 8- and 4-bit methods.
    pub quantized_base: Vec<QuantizedTensor>,
    pub vocab: CharVocab,
    pub summary: TrainSummary,
}

/// Replaces each layer weight with its RTN round trip.
pub fn quantize_base(model: &mut ToyModel, bits: QuantBits) -> Result<Vec<QuantizedTensor>, TrainError> {
    let mut out = Vec::new();
    for Dense { w, .. } in &mut model.layers {
        let qt = quantize_rtn(w.as_slice().expect("standard layout"), bits, DEFAULT_GROUP)?;
        w.as_slice_mut().expect("standard layout").copy_from_slice(&dequantize(&qt));
        out.push(qt);
    }
    Ok(out)
}

fn mean_loss(model: &ToyModel, batches: &[Batch]) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for b in batches {
        total += model.loss(b)?;
    }
    Ok(total / batches.len() as f64)
}

pub fn train_toy(
    cfg: &TrainingConfig,
    ds: &DatasetSpec,
    sink: &mut dyn TelemetrySink,
    opts: TrainOptions,
) -> Result<TrainOutcome, TrainError> {
    let report = validate(cfg);
    if !report.is_empty() {
        return Err(TrainError::InvalidConfig(report.problems.join("; ")));
    }
    let texts: Vec<String> = ds
        .records
        .iter()
        .map(|r| ds.training_text(r))
        .filter(|t| !t.is_empty())
        .collect();
    if texts.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if opts.context == 0 || opts.hidden == 0 {
        return Err(TrainError::InvalidArgument("context and hidden must be positive".into()));
    }

    let vocab = CharVocab::build(texts.iter().map(String::as_str));
    let batches: Vec<Batch> = texts.iter().map(|t| encode_text(t, &vocab, opts.context)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = ToyModel::new(&[opts.context * vocab.len(), opts.hidden, vocab.len()], &mut rng);

    let method = cfg.method;
    let mut quantized_base = Vec::new();
    if let Some(bits) = match method {
        MethodKind::Lora8 => Some(QuantBits::Eight),
        MethodKind::Lora4 => Some(QuantBits::Four),
        _ => None,
    } {
        quantized_base = quantize_base(&mut model, bits)?;
    }
    let which = if method.is_lora() {
        let all: Vec<usize> = (0..model.layers.len()).collect();
        model.add_adapters(&all, cfg.lora_rank.max(1) as usize, cfg.lora_alpha, &mut rng);
        Trainable::Adapters
    } else {
        Trainable::All
    };

    let sizes = model.tensor_sizes(which);
    let mut optimizer: Option<Box<dyn Optimizer>> = match (method, cfg.optimizer) {
        (MethodKind::Lomo16, _) => None,
        (_, OptimizerKind::Lion) => Some(Box::new(LionState::new(&sizes))),
        (_, OptimizerKind::Adam) => Some(Box::new(AdamState::new(&sizes))),
    };

    let initial_loss = mean_loss(&model, &batches)?;
    let planned = cfg.epochs as u64 * batches.len() as u64;
    let total_steps = opts.max_steps.map_or(planned, |m| m.min(planned));
    let mut order: Vec<usize> = (0..batches.len()).collect();
    let (mut step, mut tokens) = (0u64, 0u64);
    'epochs: loop {
        order.shuffle(&mut rng);
        for &i in &order {
            if step == total_steps {
                break 'epochs;
            }
            let batch = &batches[i];
            let loss = match optimizer.as_mut() {
                None => {
                    let run = lomo_sgd_run(&model, batch, cfg.lr)?;
                    model = run.model;
                    run.loss
                }
                Some(opt) => {
                    let (loss, grads) = model.gradients(batch)?;
                    let g = grad_slices(&grads, which);
                    opt.step(&mut model.tensors_mut(which), &g, cfg.lr)?;
                    loss
                }
            };
            step += 1;
            tokens += batch.targets.len() as u64;
            sink.record(&TelemetryRecord {
                step,
                loss,
                lr: cfg.lr,
                tokens,
            })?;
        }
    }

    let final_loss = mean_loss(&model, &batches)?;
    let trainable_params = model.param_count(which);
    let frozen_params = match which {
        Trainable::All => 0,
        Trainable::Adapters => model.param_count(Trainable::All),
    };
    let summary = TrainSummary {
        method,
        steps: step,
        tokens,
        initial_loss,
        final_loss,
        trainable_params,
        frozen_params,
        optimizer_buffers: optimizer.as_ref().map_or(0, |o| o.state_buffers()),
        vocab: vocab.len(),
    };
    Ok(TrainOutcome {
        model,
        quantized_base,
        vocab,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::DataMode;
    use crate::telemetry::VecSink;

    fn toy_ds() -> DatasetSpec {
        let mut ds = DatasetSpec::new("toy", DataMode::Instruct);
        for (q, a) in [("hi", "hello"), ("2+2", "4"), ("sky", "blue")] {
            ds = crate::datasets::add_sample(&ds, [q, a]).unwrap();
        }
        ds
    }

    fn cfg(method: MethodKind) -> TrainingConfig {
        let mut c = TrainingConfig::default();
        c.dataset = Some("toy.jsonl".into());
        c.method = method;
        c.quant_bits = crate::planner::quant_bits_for(method);
        c.lr = 3e-3;
        c.epochs = 2;
        c
    }

    #[test]
    fn vocab_and_encoding() {
        let v = CharVocab::build(["ba", "c"]);
        assert_eq!(v.len(), 4);
        assert_eq!(v.id('a'), Some(1));
        let b = encode_text("ab", &v, 2);
        assert_eq!(b.targets, vec![1, 2]);
        assert_eq!(b.x.row(1).to_vec(), vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn telemetry_is_contiguous() {
        let mut sink = VecSink::default();
        let out = train_toy(&cfg(MethodKind::Full16), &toy_ds(), &mut sink, TrainOptions::default()).unwrap();
        assert_eq!(out.summary.steps, 6);
        let steps: Vec<u64> = sink.log.records.iter().map(|r| r.step).collect();
        assert_eq!(steps, (1..=6).collect::<Vec<_>>());
        assert_eq!(sink.log.records.last().unwrap().tokens, out.summary.tokens);
    }

    #[test]
    fn lora_freezes_base() {
        for method in [MethodKind::Lora16, MethodKind::Lora8, MethodKind::Lora4] {
            let c = cfg(method);
            let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
            let ds = toy_ds();
            let out = train_toy(&c, &ds, &mut VecSink::default(), TrainOptions::default()).unwrap();
            let vocab = out.vocab.len();
            let mut base = ToyModel::new(&[8 * vocab, 64, vocab], &mut rng);
            if method != MethodKind::Lora16 {
                let bits = QuantBits::from_bits(c.quant_bits as u32).unwrap();
                quantize_base(&mut base, bits).unwrap();
            }
            assert_eq!(out.model.layers, base.layers, "{method:?}");
            assert!(out.model.adapters.values().any(|p| p.b.iter().any(|&v| v != 0.0)));
        }
    }

    #[test]
    fn empty_dataset() {
        let ds = DatasetSpec::new("none", DataMode::Instruct);
        assert!(matches!(
            train_toy(&cfg(MethodKind::Full16), &ds, &mut VecSink::default(), TrainOptions::default()),
            Err(TrainError::EmptyDataset)
        ));
    }
}
