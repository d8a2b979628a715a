use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{MetricRecord, MetricsLog};
use crate::demos::{augment, to_samples, DemoDataset, Sample};
use crate::error::{Error, Result};
use crate::numerics::{Adam, AdamConfig, Index, Tape, Tensor, Var};
use crate::policy::{forward, Architecture, Bound, GnnConfig, GraphBatch, PolicyParams, ORIENTATIONS, TRAY_OPS};
use crate::worlds::Bounds;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IlConfig {
    pub architecture: Architecture,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub seed: u64,
    /// Copies per demonstration pair, including the original.
    pub augmentation: usize,
    #[serde(default)]
    pub bounds: Bounds,
}

impl IlConfig {
    pub fn new(architecture: Architecture) -> Self {
        Self {
            architecture,
            hidden_layers: 3,
            hidden_width: 64,
            epochs: 200,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            augmentation: 10,
            bounds: Bounds::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.augmentation == 0 || self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::Contract("batch size, augmentation and learning rate must be positive".into()));
        }
        Ok(())
    }

    /// Policy configuration matching the samples' feature width and heads.
    pub fn policy_config(&self, samples: &[Sample]) -> Result<GnnConfig> {
        let first = samples.first().ok_or_else(|| Error::Contract("no training samples".into()))?;
        let dish = first.targets.tray.is_some() || first.graph.feature_width() != crate::scenegraph::BLOCK_FEATURES;
        let mut c = if self.architecture == Architecture::Mlp {
            GnnConfig::mlp(first.graph.n_objects, first.graph.n_goals, first.graph.feature_width())
        } else if dish {
            GnnConfig::dishwasher(self.architecture)
        } else {
            GnnConfig::new(self.architecture)
        };
        if self.architecture == Architecture::Mlp && dish {
            c.orientation_head = true;
            c.tray_head = true;
        }
        c.hidden_layers = self.hidden_layers;
        c.hidden_width = self.hidden_width;
        Ok(c)
    }
}

/// Summed per-head losses of one batch, each averaged over the batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HeadLosses {
    pub object: f32,
    pub goal: f32,
    pub orientation: f32,
    pub tray: f32,
}

impl HeadLosses {
    pub fn total(&self) -> f32 {
        self.object + self.goal + self.orientation + self.tray
    }

    fn add_scaled(&mut self, other: &HeadLosses, s: f32) {
        self.object += s * other.object;
        self.goal += s * other.goal;
        self.orientation += s * other.orientation;
        self.tray += s * other.tray;
    }
}

fn repeat_index(n: usize, each: usize) -> Index {
    (0..n * each).map(|i| i / each).collect::<Vec<_>>().into()
}

fn flat_targets(samples: &[&Sample], width: impl Fn(usize) -> usize, get: impl Fn(&Sample) -> Option<&Vec<f32>>) -> Vec<f32> {
    let mut out = Vec::new();
    for (b, s) in samples.iter().enumerate() {
        match get(s) {
            Some(t) => out.extend_from_slice(t),
            None => out.extend(std::iter::repeat_n(0.0, width(b))),
        }
    }
    out
}

/// Cross-entropy of the policy against one-hot expert targets, summed over heads and
/// averaged over the batch. Returns the loss node and per-head values.
pub fn imitation_loss(tape: &mut Tape, bound: &Bound, samples: &[&Sample]) -> Result<(Var, HeadLosses)> {
    let graphs: Vec<_> = samples.iter().map(|s| &s.graph).collect();
    let batch = GraphBatch::new(&graphs)?;
    let x = tape.constant(batch.features.clone());
    let out = forward(tape, bound, &batch, x, None)?;
    let n = samples.len();
    let scale = 1.0 / n as f32;
    let mut terms = Vec::new();
    let mut losses = HeadLosses::default();

    let t = flat_targets(samples, |b| batch.objects_in(b).len(), |s| s.targets.object.as_ref());
    let l = tape.cross_entropy_segments(out.p_object, &t, &batch.object_graph, n)?;
    losses.object = tape.value(l).data()[0] * scale;
    terms.push(l);

    let t = flat_targets(samples, |b| batch.goals_in(b).len(), |s| s.targets.goal.as_ref());
    let l = tape.cross_entropy_segments(out.p_goal, &t, &batch.goal_graph, n)?;
    losses.goal = tape.value(l).data()[0] * scale;
    terms.push(l);

    if let Some(po) = out.p_orientation {
        let t = flat_targets(samples, |_| ORIENTATIONS, |s| s.targets.orientation.as_ref());
        let l = tape.cross_entropy_segments(po, &t, &repeat_index(n, ORIENTATIONS), n)?;
        losses.orientation = tape.value(l).data()[0] * scale;
        terms.push(l);
    }
    if let Some(pt) = out.p_tray {
        let t = flat_targets(samples, |_| TRAY_OPS, |s| s.targets.tray.as_ref());
        let l = tape.cross_entropy_segments(pt, &t, &repeat_index(n, TRAY_OPS), n)?;
        losses.tray = tape.value(l).data()[0] * scale;
        terms.push(l);
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    Ok((tape.scale(total, scale)?, losses))
}

/// Gradients of `loss` for every bound parameter, in parameter order.
pub(crate) fn collect_grads(tape: &Tape, bound: &Bound) -> Vec<Tensor> {
    bound.vars().iter().map(|&v| tape.grad(v)).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IlReport {
    pub epoch_losses: Vec<f32>,
    pub best_epoch: Option<usize>,
    pub best_loss: f32,
    pub samples: usize,
}

/// Trains on the augmented demonstration pairs of `dataset`.
pub fn train_il(dataset: &DemoDataset, config: &IlConfig) -> Result<PolicyParams> {
    Ok(train_il_logged(dataset, config, &mut MetricsLog::disabled())?.0)
}

pub fn train_il_logged(dataset: &DemoDataset, config: &IlConfig, log: &mut MetricsLog) -> Result<(PolicyParams, IlReport)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Contract("cannot train on an empty dataset".into()));
    }
    let pairs = augment(&dataset.pairs(), config.augmentation, config.seed, &config.bounds)?;
    let samples = to_samples(&pairs)?;
    let init = PolicyParams::init(config.policy_config(&samples)?, config.seed)?;
    train_il_samples(&samples, init, config, log)
}

/// Minibatch Adam on pre-encoded samples starting from `init`; keeps the parameters of the
/// epoch with the lowest mean training loss.
pub fn train_il_samples(
    samples: &[Sample],
    init: PolicyParams,
    config: &IlConfig,
    log: &mut MetricsLog,
) -> Result<(PolicyParams, IlReport)> {
    config.validate()?;
    let mut params = init;
    let mut report = IlReport { samples: samples.len(), best_loss: f32::INFINITY, ..Default::default() };
    if config.epochs == 0 || samples.is_empty() {
        return Ok((params, report));
    }
    let mut adam = Adam::new(AdamConfig { lr: config.lr, ..AdamConfig::default() }, &params.params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_1111);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut best = params.clone();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        let mut heads = HeadLosses::default();
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (grads, value, parts) = {
                let mut tape = Tape::new();
                let bound = Bound::new(&mut tape, &params, true);
                let (loss, parts) = imitation_loss(&mut tape, &bound, &batch)?;
                tape.backward(loss)?;
                (collect_grads(&tape, &bound), tape.value(loss).data()[0], parts)
            };
            if !value.is_finite() {
                return Err(Error::Training(format!(
                    "loss became {} at epoch {} (object {}, goal {}, orientation {}, tray {})",
                    value, epoch, parts.object, parts.goal, parts.orientation, parts.tray
                )));
            }
            for (i, g) in grads.into_iter().enumerate() {
                params.params.set_grad(i, g)?;
            }
            adam.step(&mut params.params)?;
            let w = batch.len() as f32 / samples.len() as f32;
            epoch_loss += (value * w) as f64;
            heads.add_scaled(&parts, w);
        }
        let epoch_loss = epoch_loss as f32;
        report.epoch_losses.push(epoch_loss);
        log.record(MetricRecord::IlEpoch { epoch, loss: epoch_loss, heads })?;
        if epoch_loss < report.best_loss {
            report.best_loss = epoch_loss;
            report.best_epoch = Some(epoch);
            best = params.clone();
        }
    }
    best.params.clear_grads();
    Ok((best, report))
}
