//! Enhancement stage plus classifier head, with a batched loss and its
//! exact gradient.

use std::sync::Arc;

use ndarray::{Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::classifier::{HeadCache, ToyClassifier};
use crate::curvelet::CurveletGeometry;
use crate::error::{Error, Result};
use crate::nn::{sigmoid, softplus};
use crate::params::{Parameters, TensorVisitor};
use crate::pipeline::{ChannelTape, EnhancedStack, FeatureEnhancer, NUM_COLOURS, STACK_CHANNELS};
use crate::regularizer::{normalized_cls_loss, normalized_cls_loss_grad, reg_vjp, sparsity_loss, RegConfig};
use crate::scale_masks::NUM_BANDS;
use crate::wedge_gate::{GateMode, GateVector};

/// All learnable state of the end-to-end model.
#[derive(Debug, Clone)]
pub struct FafeModel {
    pub enhancer: FeatureEnhancer,
    pub head: ToyClassifier,
}

impl FafeModel {
    pub fn init(geometry: Arc<CurveletGeometry>, hidden: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enhancer = FeatureEnhancer::init(geometry, hidden, &mut rng)?;
        let head = ToyClassifier::init(&mut rng);
        Ok(Self { enhancer, head })
    }

    pub fn geometry(&self) -> &Arc<CurveletGeometry> {
        &self.enhancer.geometry
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            enhancer: self.enhancer.zeros_like(),
            head: ToyClassifier::zeros(),
        }
    }

    /// Probability of "fake" and the per-channel gate vectors.
    pub fn predict(&self, rgb: &Array3<f64>) -> Result<(f64, Vec<GateVector>)> {
        let (stack, gates) = self.enhancer.enhance_image_with_gates(rgb)?;
        let (logit, _) = self.head.forward(&stack.data);
        Ok((sigmoid(logit), gates))
    }
}

impl Parameters for FafeModel {
    fn visit(&self, f: &mut TensorVisitor) {
        self.enhancer.visit(f);
        self.head.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.enhancer.visit_mut(f);
        self.head.visit_mut(f);
    }
}

/// Forward cache of one image.
pub struct SampleTape<'a> {
    model: &'a FafeModel,
    channels: Vec<ChannelTape<'a>>,
    head: HeadCache,
    pub logit: f64,
}

impl<'a> SampleTape<'a> {
    pub fn forward(model: &'a FafeModel, rgb: &Array3<f64>, mode: GateMode) -> Result<Self> {
        if rgb.dim().0 != NUM_COLOURS {
            return Err(Error::BadChannelCount {
                expected: NUM_COLOURS,
                got: rgb.dim().0,
            });
        }
        let (_, h, w) = rgb.dim();
        let mut data = Array3::zeros((STACK_CHANNELS, h, w));
        let mut channels = Vec::with_capacity(NUM_COLOURS);
        for c in 0..NUM_COLOURS {
            let (tape, maps) = ChannelTape::forward(&model.enhancer, &rgb.index_axis(Axis(0), c).to_owned(), mode)?;
            for (b, m) in maps.iter().enumerate() {
                data.index_axis_mut(Axis(0), EnhancedStack::slot(c, b + 1)).assign(m);
            }
            channels.push(tape);
        }
        let (logit, head) = model.head.forward(&data);
        Ok(Self {
            model,
            channels,
            head,
            logit,
        })
    }

    pub fn gates(&self) -> Vec<&GateVector> {
        self.channels.iter().map(|c| &c.gates).collect()
    }

    /// Sum of continuous scores per colour channel.
    pub fn score_sums(&self) -> [f64; NUM_COLOURS] {
        std::array::from_fn(|c| self.channels[c].gates.score_sum())
    }

    pub fn gate_counts(&self) -> [usize; NUM_COLOURS] {
        std::array::from_fn(|c| self.channels[c].gates.active_count())
    }

    /// Gradients of `d_logit * logit + sum_c d_score_sum[c] * score_sum_c`.
    pub fn backward(&self, d_logit: f64, d_score_sum: &[f64; NUM_COLOURS]) -> Result<FafeModel> {
        let mut grads = self.model.zeros_like();
        let (d_stack, head) = self.model.head.backward(&self.head, d_logit);
        grads.head = head;
        for (c, tape) in self.channels.iter().enumerate() {
            let d_maps: Vec<_> = (1..=NUM_BANDS)
                .map(|b| d_stack.index_axis(Axis(0), EnhancedStack::slot(c, b)).to_owned())
                .collect();
            let d_scores = vec![d_score_sum[c]; tape.gates.len()];
            tape.backward(&d_maps, Some(&d_scores), &mut grads.enhancer)?;
        }
        Ok(grads)
    }
}

/// Binary cross-entropy on a logit.
pub fn bce_with_logit(logit: f64, label: f64) -> f64 {
    softplus(logit) - logit * label
}

/// Loss terms, predictions and (optionally) gradients for one batch.
pub struct BatchOutcome {
    pub loss: f64,
    pub bce: f64,
    pub reg: f64,
    pub probs: Vec<f64>,
    pub score_sums: Vec<[f64; NUM_COLOURS]>,
    pub gate_counts: Vec<[usize; NUM_COLOURS]>,
    pub grads: Option<FafeModel>,
}

/// Mean BCE plus the gate penalty averaged over the batch plus the
/// loss-sensitive term on the mean BCE.
pub fn batch_objective(
    model: &FafeModel,
    images: &[&Array3<f64>],
    labels: &[u8],
    epoch: usize,
    cfg: &RegConfig,
    mode: GateMode,
    with_grad: bool,
) -> Result<BatchOutcome> {
    if images.is_empty() {
        return Err(Error::EmptyInput);
    }
    if images.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} images vs {} labels",
            images.len(),
            labels.len()
        )));
    }
    let n = images.len() as f64;
    let tapes = images
        .par_iter()
        .map(|img| SampleTape::forward(model, img, mode))
        .collect::<Result<Vec<_>>>()?;
    let bce = tapes
        .iter()
        .zip(labels)
        .map(|(t, &y)| bce_with_logit(t.logit, y as f64))
        .sum::<f64>()
        / n;
    let score_sums: Vec<_> = tapes.iter().map(|t| t.score_sums()).collect();
    let sparsity = score_sums.iter().map(|s| sparsity_loss(s, epoch, cfg)).sum::<f64>() / n;
    let reg = sparsity + cfg.lambda_cls * normalized_cls_loss(bce, cfg);

    let grads = if with_grad {
        let cls_factor = 1.0 + cfg.lambda_cls * normalized_cls_loss_grad(bce, cfg);
        let per_sample = tapes
            .par_iter()
            .zip(labels.par_iter())
            .zip(score_sums.par_iter())
            .map(|((t, &y), s)| {
                let d_logit = cls_factor * (sigmoid(t.logit) - y as f64) / n;
                let v = reg_vjp(s, epoch, cfg);
                let d_sum = std::array::from_fn(|c| v[c] / n);
                t.backward(d_logit, &d_sum)
            })
            .collect::<Result<Vec<_>>>()?;
        // Summed in index order so the result does not depend on threading.
        let mut total = model.zeros_like();
        for g in &per_sample {
            total.add_scaled(g, 1.0);
        }
        Some(total)
    } else {
        None
    };

    Ok(BatchOutcome {
        loss: bce + reg,
        bce,
        reg,
        probs: tapes.iter().map(|t| sigmoid(t.logit)).collect(),
        gate_counts: tapes.iter().map(|t| t.gate_counts()).collect(),
        score_sums,
        grads,
    })
}
