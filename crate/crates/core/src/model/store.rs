//! Mapping between a trained model and the checkpoint format.
//!
//! Besides one tensor per parameter, a checkpoint carries `meta.*` tensors
//! with the architecture, the sampler and mask settings the model was trained
//! with, and training bookkeeping. Each meta value is a `u64` split into four
//! 16-bit limbs (little end first), which `f32` holds exactly.

use serde::Serialize;

use super::network::Ffpn;
use super::FfpnConfig;
use crate::error::NnError;
use crate::filters::{Boundary, GaussianSpec};
use crate::nn::{Checkpoint, NamedTensor, Tensor};
use crate::sampling::SamplerConfig;

const META_CONFIG: &str = "meta.config";
const META_SAMPLER: &str = "meta.sampler";
const META_MASK: &str = "meta.mask";
const META_TRAIN: &str = "meta.train";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainMeta {
    pub epochs: usize,
    pub steps: usize,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub seed: u64,
}

/// A model with everything needed to sample inputs for it.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedModel {
    pub model: Ffpn<f32>,
    pub sampler: SamplerConfig,
    pub mask_spec: GaussianSpec,
    pub train: Option<TrainMeta>,
}

fn encode(values: &[u64]) -> Vec<f32> {
    values
        .iter()
        .flat_map(|&v| (0..4).map(move |k| ((v >> (16 * k)) & 0xffff) as f32))
        .collect()
}

fn decode(t: &NamedTensor) -> Result<Vec<u64>, NnError> {
    if !t.data.len().is_multiple_of(4) {
        return Err(NnError::Checkpoint(format!("`{}` has {} values", t.name, t.data.len())));
    }
    t.data
        .chunks_exact(4)
        .map(|limbs| {
            let mut v = 0u64;
            for (k, &l) in limbs.iter().enumerate() {
                if !(0.0..=65535.0).contains(&l) || l.fract() != 0.0 {
                    return Err(NnError::Checkpoint(format!("`{}` holds a non-limb value {l}", t.name)));
                }
                v |= (l as u64) << (16 * k);
            }
            Ok(v)
        })
        .collect()
}

fn meta(name: &str, values: &[u64]) -> NamedTensor {
    let data = encode(values);
    NamedTensor::new(name, vec![data.len() as u32], data)
}

fn read_meta(ck: &Checkpoint, name: &str, len: usize) -> Result<Vec<u64>, NnError> {
    let t = ck
        .get(name)
        .ok_or_else(|| NnError::Checkpoint(format!("missing `{name}`")))?;
    let v = decode(t)?;
    if v.len() != len {
        return Err(NnError::Checkpoint(format!("`{name}` has {} fields, expected {len}", v.len())));
    }
    Ok(v)
}

fn to_usize(v: u64, what: &str) -> Result<usize, NnError> {
    usize::try_from(v).map_err(|_| NnError::Checkpoint(format!("{what} out of range")))
}

impl LoadedModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let cfg = &self.model.config;
        let mut cfg_vals: Vec<u64> = cfg.stage_channels.iter().map(|&c| c as u64).collect();
        cfg_vals.extend(cfg.stage_strides.iter().map(|&s| s as u64));
        cfg_vals.extend([
            cfg.fa_hidden as u64,
            cfg.head_hidden as u64,
            cfg.input_side as u64,
            cfg.clip_len as u64,
            self.model.fa_enabled as u64,
        ]);
        let s = &self.sampler;
        let boundary = match self.mask_spec.boundary {
            Boundary::Reflect => 0,
            Boundary::Wrap => 1,
        };
        let mut tensors = vec![
            meta(META_CONFIG, &cfg_vals),
            meta(
                META_SAMPLER,
                &[s.segments as u64, s.frames_per_segment as u64, s.grid as u64, s.patch as u64, s.seed],
            ),
            meta(
                META_MASK,
                &[self.mask_spec.sigma.to_bits(), self.mask_spec.ksize as u64, boundary],
            ),
        ];
        if let Some(t) = &self.train {
            tensors.push(meta(
                META_TRAIN,
                &[t.epochs as u64, t.steps as u64, t.best_epoch as u64, t.best_loss.to_bits(), t.seed],
            ));
        }
        for ((name, _), p) in self.model.param_names().into_iter().zip(self.model.params()) {
            tensors.push(NamedTensor::new(
                name,
                p.shape.iter().map(|&d| d as u32).collect(),
                p.data.clone(),
            ));
        }
        Checkpoint { tensors }
    }

    /// Rebuilds the model, comparing the checkpoint's tensor table with the
    /// one its stored architecture implies.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, NnError> {
        let c = read_meta(ck, META_CONFIG, 13)?;
        let u = |i: usize| to_usize(c[i], META_CONFIG);
        let config = FfpnConfig {
            stage_channels: (0..4).map(u).collect::<Result<_, _>>()?,
            stage_strides: (4..8).map(u).collect::<Result<_, _>>()?,
            fa_hidden: u(8)?,
            head_hidden: u(9)?,
            input_side: u(10)?,
            clip_len: u(11)?,
        };
        let fa_enabled = match c[12] {
            0 => false,
            1 => true,
            v => return Err(NnError::Checkpoint(format!("bad fa flag {v}"))),
        };
        let s = read_meta(ck, META_SAMPLER, 5)?;
        let sampler = SamplerConfig {
            segments: to_usize(s[0], META_SAMPLER)?,
            frames_per_segment: to_usize(s[1], META_SAMPLER)?,
            grid: to_usize(s[2], META_SAMPLER)?,
            patch: to_usize(s[3], META_SAMPLER)?,
            seed: s[4],
        };
        let m = read_meta(ck, META_MASK, 3)?;
        let mask_spec = GaussianSpec {
            sigma: f64::from_bits(m[0]),
            ksize: to_usize(m[1], META_MASK)?,
            boundary: match m[2] {
                0 => Boundary::Reflect,
                1 => Boundary::Wrap,
                v => return Err(NnError::Checkpoint(format!("bad boundary tag {v}"))),
            },
        };
        let train = match ck.get(META_TRAIN) {
            None => None,
            Some(_) => {
                let t = read_meta(ck, META_TRAIN, 5)?;
                Some(TrainMeta {
                    epochs: to_usize(t[0], META_TRAIN)?,
                    steps: to_usize(t[1], META_TRAIN)?,
                    best_epoch: to_usize(t[2], META_TRAIN)?,
                    best_loss: f64::from_bits(t[3]),
                    seed: t[4],
                })
            }
        };

        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut model = Ffpn::<f32>::init(&config, &mut rng)?;
        model.fa_enabled = fa_enabled;
        let names = model.param_names();

        let mut problems = Vec::new();
        for ((name, _), p) in names.iter().zip(model.params()) {
            match ck.get(name) {
                None => problems.push(format!("missing `{name}` {:?}", p.shape)),
                Some(t) if t.shape() != p.shape => {
                    problems.push(format!("`{name}` is {:?}, expected {:?}", t.shape(), p.shape))
                }
                Some(_) => {}
            }
        }
        for t in &ck.tensors {
            if !t.name.starts_with("meta.") && !names.iter().any(|(n, _)| *n == t.name) {
                problems.push(format!("unexpected `{}`", t.name));
            }
        }
        if !problems.is_empty() {
            return Err(NnError::Checkpoint(format!(
                "tensor table does not match the architecture: {}",
                problems.join("; ")
            )));
        }
        for ((name, _), p) in names.iter().zip(model.params_mut()) {
            let t = ck.get(name).expect("checked above");
            *p = Tensor::new(t.shape(), t.data.clone())?;
        }
        Ok(LoadedModel {
            model,
            sampler,
            mask_spec,
            train,
        })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), NnError> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, NnError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
