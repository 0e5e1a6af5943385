use std::borrow::Cow;
use std::path::PathBuf;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::{Ffpn, ParamGroup};
use super::store::TrainMeta;
use super::FfpnConfig;
use crate::error::{ModelError, NnError};
use crate::filters::GaussianSpec;
use crate::frame_io::{load_y4m, PlanarVideo};
use crate::nn::{AdamW, GroupHyper, Tensor};
use crate::sampling::{build_input_clip, ClipTrace, SampleClip, SamplerConfig};
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_backbone: f64,
    pub lr_head: f64,
    pub weight_decay: f64,
    /// Epochs without a new best epoch-mean loss before rates are halved.
    pub patience: usize,
    pub lr_factor: f64,
    /// Stops after this many optimizer steps when set.
    pub max_steps: Option<usize>,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            epochs: 30,
            batch_size: 16,
            lr_backbone: 1e-3,
            lr_head: 1e-2,
            weight_decay: 0.01,
            patience: 5,
            lr_factor: 0.5,
            max_steps: None,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Invalid(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr_backbone > 0.0 && self.lr_backbone.is_finite()) {
            return bad("lr_backbone must be positive and finite");
        }
        if !(self.lr_head > 0.0 && self.lr_head.is_finite()) {
            return bad("lr_head must be positive and finite");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be finite and non-negative");
        }
        if self.patience == 0 {
            return bad("patience must be positive");
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return bad("lr_factor must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum VideoRef {
    InMemory(Arc<PlanarVideo>),
    /// Y4M file read when the item is sampled.
    File(PathBuf),
}

impl VideoRef {
    pub fn load(&self) -> Result<Cow<'_, PlanarVideo>, ModelError> {
        match self {
            VideoRef::InMemory(v) => Ok(Cow::Borrowed(v.as_ref())),
            VideoRef::File(p) => Ok(Cow::Owned(load_y4m(p)?)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainItem {
    pub id: String,
    pub video: VideoRef,
    /// Target strength; `None` is rejected by [`train`].
    pub label: Option<f64>,
}

/// Outcome of feeding one epoch loss to [`Plateau`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PlateauEvent {
    Improved,
    Stale,
    /// `patience` epochs passed without improvement; rates were reduced.
    Reduce,
}

/// Learning-rate halving trigger: a new best epoch-mean loss resets the
/// counter; `patience` epochs without one fire [`PlateauEvent::Reduce`]
/// and reset it.
#[derive(Debug, Clone, PartialEq)]
pub struct Plateau {
    pub patience: usize,
    pub best: f64,
    pub stale: usize,
}

impl Plateau {
    pub fn new(patience: usize) -> Self {
        Plateau {
            patience,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    pub fn observe(&mut self, loss: f64) -> PlateauEvent {
        if loss < self.best {
            self.best = loss;
            self.stale = 0;
            return PlateauEvent::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            self.stale = 0;
            PlateauEvent::Reduce
        } else {
            PlateauEvent::Stale
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    /// `(item id, trace)` of every clip in the batch.
    pub clips: Vec<(String, ClipTrace)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub event: PlateauEvent,
    /// Rates in effect after this epoch's schedule update.
    pub lr_backbone: f64,
    pub lr_head: f64,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainEvent {
    Step(StepRecord),
    Epoch(EpochRecord),
}

/// Everything that determines a training run besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSpec {
    pub config: FfpnConfig,
    pub sampler: SamplerConfig,
    pub mask_spec: GaussianSpec,
    pub schedule: TrainSchedule,
    pub seed: u64,
    pub fa_enabled: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the end of the best epoch.
    pub best: Ffpn<f32>,
    pub last: Ffpn<f32>,
    pub meta: TrainMeta,
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
}

fn build_batch(
    items: &[TrainItem],
    batch: &[usize],
    sampler: &SamplerConfig,
    mask_spec: &GaussianSpec,
    seed: u64,
    epoch: usize,
) -> Result<Vec<SampleClip>, ModelError> {
    batch
        .par_iter()
        .map(|&i| {
            let video = items[i].video.load()?;
            let mut rng = rng_for(seed, &["clip", &epoch.to_string(), &i.to_string()]);
            Ok(build_input_clip(&video, sampler, mask_spec, &mut rng)?)
        })
        .collect()
}

/// Trains from a fresh initialization with L1 loss on clip scores.
///
/// Items are visited in a per-epoch shuffled order; each batch's clips are
/// built concurrently, then forward, backward and the optimizer step run
/// sequentially in batch order. `observer` sees every step and epoch
/// record as it happens.
pub fn train(
    items: &[TrainItem],
    spec: &TrainSpec,
    observer: &mut dyn FnMut(&TrainEvent),
) -> Result<TrainOutcome, ModelError> {
    let TrainSpec {
        config,
        sampler,
        mask_spec,
        schedule,
        seed,
        fa_enabled,
    } = spec;
    let (seed, fa_enabled) = (*seed, *fa_enabled);
    if items.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if let Some(item) = items.iter().find(|it| it.label.is_none()) {
        return Err(ModelError::Unlabeled(item.id.clone()));
    }
    schedule.validate()?;
    sampler.validate()?;
    mask_spec.validate()?;
    if sampler.fragment_side() != config.input_side || sampler.clip_len() != config.clip_len {
        return Err(ModelError::Nn(NnError::Config(format!(
            "sampler yields {} frames at side {}, model expects {} at side {}",
            sampler.clip_len(),
            sampler.fragment_side(),
            config.clip_len,
            config.input_side
        ))));
    }

    let mut model = Ffpn::<f32>::init(config, &mut rng_for(seed, &["init"]))?;
    model.fa_enabled = fa_enabled;
    let groups = vec![
        GroupHyper::new(schedule.lr_backbone, schedule.weight_decay),
        GroupHyper::new(schedule.lr_head, schedule.weight_decay),
    ];
    let shapes: Vec<Vec<usize>> = model.params().iter().map(|p| p.shape.clone()).collect();
    let param_group: Vec<usize> = model.param_names().iter().map(|(_, g)| g.index()).collect();
    let mut opt = AdamW::<f32>::new(groups, &shapes, param_group);
    debug_assert_eq!(ParamGroup::Backbone.index(), 0);

    let mut plateau = Plateau::new(schedule.patience);
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut epochs = Vec::new();
    let mut steps = Vec::new();
    let mut step = 0usize;
    let limit = schedule.max_steps.unwrap_or(usize::MAX);

    'epochs: for epoch in 0..schedule.epochs {
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut rng_for(seed, &["order", &epoch.to_string()]));
        let mut abs_sum = 0.0f64;
        let mut seen = 0usize;
        for batch in order.chunks(schedule.batch_size) {
            if step >= limit {
                break;
            }
            let clips = build_batch(items, batch, sampler, mask_spec, seed, epoch)?;
            let mut grads = model.zeros_like();
            let inv_b = 1.0 / batch.len() as f32;
            let mut batch_abs = 0.0f64;
            for (clip, &i) in clips.iter().zip(batch) {
                let (frames, masks) = model.clip_tensors(clip)?;
                let (score, cache) = model.forward(&frames, &masks)?;
                let err = score as f64 - items[i].label.expect("checked");
                batch_abs += err.abs();
                let d = if err > 0.0 {
                    inv_b
                } else if err < 0.0 {
                    -inv_b
                } else {
                    0.0
                };
                model.backward(&cache, d, &mut grads)?;
            }
            {
                let grad_refs: Vec<&Tensor<f32>> = grads.params();
                let mut params = model.params_mut();
                opt.step(&mut params, &grad_refs)?;
            }
            step += 1;
            abs_sum += batch_abs;
            seen += batch.len();
            let record = StepRecord {
                epoch,
                step,
                loss: batch_abs / batch.len() as f64,
                clips: batch
                    .iter()
                    .zip(&clips)
                    .map(|(&i, c)| (items[i].id.clone(), c.trace.clone()))
                    .collect(),
            };
            observer(&TrainEvent::Step(record.clone()));
            steps.push(record);
        }
        if seen == 0 {
            break;
        }
        let mean_loss = abs_sum / seen as f64;
        let event = plateau.observe(mean_loss);
        match event {
            PlateauEvent::Improved => {
                best = model.clone();
                best_epoch = epoch;
            }
            PlateauEvent::Reduce => opt.scale_lr(schedule.lr_factor),
            PlateauEvent::Stale => {}
        }
        let record = EpochRecord {
            epoch,
            mean_loss,
            event,
            lr_backbone: opt.groups[0].lr,
            lr_head: opt.groups[1].lr,
        };
        observer(&TrainEvent::Epoch(record.clone()));
        epochs.push(record);
        if step >= limit {
            break 'epochs;
        }
    }

    let meta = TrainMeta {
        epochs: epochs.len(),
        steps: step,
        best_epoch,
        best_loss: plateau.best,
        seed,
    };
    Ok(TrainOutcome {
        best,
        last: model,
        meta,
        epochs,
        steps,
    })
}
