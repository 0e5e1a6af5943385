use rand::Rng;

use super::{FfpnConfig, FRAME_SCALE, FRAME_SHIFT, MASK_SCALE, STAGES};
use crate::error::NnError;
use crate::nn::ops::{
    adaptive_avgpool, conv2d, conv2d_backward, fully_connected, fully_connected_backward, global_avgpool,
    global_avgpool_backward, relu, relu_backward, Conv2dGeom,
};
use crate::nn::{Scalar, Tensor};
use crate::sampling::SampleClip;

/// Optimizer group of a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Backbone,
    AttentionAndHead,
}

impl ParamGroup {
    pub fn index(self) -> usize {
        match self {
            ParamGroup::Backbone => 0,
            ParamGroup::AttentionAndHead => 1,
        }
    }
}

/// Square odd-size convolution with "same" padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
}

impl<T: Scalar> Conv<T> {
    fn he<R: Rng + ?Sized>(cin: usize, cout: usize, stride: usize, rng: &mut R) -> Self {
        let fan_in = (cin * 9) as f64;
        Conv {
            weight: Tensor::uniform(&[cout, cin, 3, 3], (6.0 / fan_in).sqrt(), rng),
            bias: Tensor::zeros(&[cout]),
            stride,
        }
    }

    /// 1×1 layer with zero weights and constant bias.
    fn constant(cin: usize, cout: usize, bias: f64) -> Self {
        Conv {
            weight: Tensor::zeros(&[cout, cin, 1, 1]),
            bias: Tensor::full(&[cout], T::of(bias)),
            stride: 1,
        }
    }

    pub fn geom(&self) -> Conv2dGeom {
        Conv2dGeom {
            stride: self.stride,
            pad: self.weight.shape[2] / 2,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        conv2d(x, &self.weight, &self.bias, self.geom())
    }

    /// Accumulates weight and bias gradients into `grad`, returns `dx`.
    fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>, grad: &mut Conv<T>) -> Result<Tensor<T>, NnError> {
        let g = conv2d_backward(x, &self.weight, dy, self.geom())?;
        grad.weight.add_assign(&g.dw);
        grad.bias.add_assign(&g.db);
        Ok(g.dx)
    }
}

/// Fully connected layer, weight `Out×In`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    fn uniform<R: Rng + ?Sized>(fin: usize, fout: usize, bound: f64, rng: &mut R) -> Self {
        Linear {
            weight: Tensor::uniform(&[fout, fin], bound, rng),
            bias: Tensor::zeros(&[fout]),
        }
    }

    fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>, grad: &mut Linear<T>) -> Result<Tensor<T>, NnError> {
        let g = fully_connected_backward(x, &self.weight, dy)?;
        grad.weight.add_assign(&g.dw);
        grad.bias.add_assign(&g.db);
        Ok(g.dx)
    }
}

/// Backbone stage: strided conv + relu, then conv + relu.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage<T> {
    pub down: Conv<T>,
    pub refine: Conv<T>,
}

/// Pooled mask → 3×3 conv + relu → 1×1 conv.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch<T> {
    pub hidden: Conv<T>,
    pub out: Conv<T>,
}

/// Frequency attention of one stage. `gamma` scales, `beta` shifts.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention<T> {
    pub gamma: Branch<T>,
    pub beta: Branch<T>,
}

/// Network parameters. The same type holds accumulated gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Ffpn<T> {
    pub config: FfpnConfig,
    /// When false, `F_i = f_i` and the attention parameters are unused.
    pub fa_enabled: bool,
    pub stages: Vec<Stage<T>>,
    pub attention: Vec<Attention<T>>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

struct StageCache<T> {
    input: Tensor<T>,
    z1: Tensor<T>,
    a1: Tensor<T>,
    z2: Tensor<T>,
    f: Tensor<T>,
}

struct BranchCache<T> {
    z: Tensor<T>,
    a: Tensor<T>,
    out: Tensor<T>,
}

struct AttentionCache<T> {
    mask: Tensor<T>,
    gamma: BranchCache<T>,
    beta: BranchCache<T>,
}

/// Activations kept for the backward pass of one clip.
pub struct ForwardCache<T> {
    stages: Vec<StageCache<T>>,
    attention: Vec<Option<AttentionCache<T>>>,
    fused: Vec<Tensor<T>>,
    pooled: Tensor<T>,
    h_pre: Tensor<T>,
    h: Tensor<T>,
    /// Per-frame scores, `N×1`.
    pub frame_scores: Tensor<T>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Smallest `|pre-activation|` over every relu input, for kink avoidance.
    pub fn min_relu_margin(&self) -> f64 {
        let mut m = f64::INFINITY;
        let mut scan = |t: &Tensor<T>| {
            for &v in &t.data {
                m = m.min(v.as_f64().abs());
            }
        };
        for s in &self.stages {
            scan(&s.z1);
            scan(&s.z2);
        }
        for a in self.attention.iter().flatten() {
            scan(&a.gamma.z);
            scan(&a.beta.z);
        }
        scan(&self.h_pre);
        m
    }
}

impl<T: Scalar> Ffpn<T> {
    /// Fan-in uniform weights, zero biases, attention at identity.
    pub fn init<R: Rng + ?Sized>(config: &FfpnConfig, rng: &mut R) -> Result<Self, NnError> {
        config.validate()?;
        let mut stages = Vec::with_capacity(STAGES);
        let mut cin = 1;
        for (&c, &s) in config.stage_channels.iter().zip(&config.stage_strides) {
            stages.push(Stage {
                down: Conv::he(cin, c, s, rng),
                refine: Conv::he(c, c, 1, rng),
            });
            cin = c;
        }
        let mut attention = Vec::with_capacity(STAGES);
        for &c in &config.stage_channels {
            attention.push(Attention {
                gamma: Branch {
                    hidden: Conv::he(1, config.fa_hidden, 1, rng),
                    out: Conv::constant(config.fa_hidden, c, 1.0),
                },
                beta: Branch {
                    hidden: Conv::he(1, config.fa_hidden, 1, rng),
                    out: Conv::constant(config.fa_hidden, c, 0.0),
                },
            });
        }
        let fin = config.head_input();
        let fc1 = Linear::uniform(fin, config.head_hidden, (6.0 / fin as f64).sqrt(), rng);
        let fc2 = Linear::uniform(config.head_hidden, 1, 1.0 / (config.head_hidden as f64).sqrt(), rng);
        Ok(Ffpn {
            config: config.clone(),
            fa_enabled: true,
            stages,
            attention,
            fc1,
            fc2,
        })
    }

    /// Same structure with every tensor zeroed.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.params_mut() {
            t.data.iter_mut().for_each(|v| *v = T::zero());
        }
        z
    }

    /// Parameter names and groups, in [`Ffpn::params`] order.
    pub fn param_names(&self) -> Vec<(String, ParamGroup)> {
        let mut out = Vec::new();
        let mut push_conv = |prefix: String, g: ParamGroup| {
            out.push((format!("{prefix}.weight"), g));
            out.push((format!("{prefix}.bias"), g));
        };
        for i in 0..self.stages.len() {
            push_conv(format!("backbone.stage{i}.down"), ParamGroup::Backbone);
            push_conv(format!("backbone.stage{i}.refine"), ParamGroup::Backbone);
        }
        for i in 0..self.attention.len() {
            for b in ["gamma", "beta"] {
                push_conv(format!("fa.stage{i}.{b}.hidden"), ParamGroup::AttentionAndHead);
                push_conv(format!("fa.stage{i}.{b}.out"), ParamGroup::AttentionAndHead);
            }
        }
        push_conv("head.fc1".into(), ParamGroup::AttentionAndHead);
        push_conv("head.fc2".into(), ParamGroup::AttentionAndHead);
        out
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for s in &self.stages {
            out.extend([&s.down.weight, &s.down.bias, &s.refine.weight, &s.refine.bias]);
        }
        for a in &self.attention {
            for b in [&a.gamma, &a.beta] {
                out.extend([&b.hidden.weight, &b.hidden.bias, &b.out.weight, &b.out.bias]);
            }
        }
        out.extend([&self.fc1.weight, &self.fc1.bias, &self.fc2.weight, &self.fc2.bias]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for s in &mut self.stages {
            out.extend([&mut s.down.weight, &mut s.down.bias, &mut s.refine.weight, &mut s.refine.bias]);
        }
        for a in &mut self.attention {
            for b in [&mut a.gamma, &mut a.beta] {
                out.extend([&mut b.hidden.weight, &mut b.hidden.bias, &mut b.out.weight, &mut b.out.bias]);
            }
        }
        out.extend([&mut self.fc1.weight, &mut self.fc1.bias, &mut self.fc2.weight, &mut self.fc2.bias]);
        out
    }

    pub fn cast<U: Scalar>(&self) -> Ffpn<U> {
        let conv = |c: &Conv<T>| Conv {
            weight: c.weight.cast(),
            bias: c.bias.cast(),
            stride: c.stride,
        };
        let branch = |b: &Branch<T>| Branch {
            hidden: conv(&b.hidden),
            out: conv(&b.out),
        };
        let linear = |l: &Linear<T>| Linear {
            weight: l.weight.cast(),
            bias: l.bias.cast(),
        };
        Ffpn {
            config: self.config.clone(),
            fa_enabled: self.fa_enabled,
            stages: self
                .stages
                .iter()
                .map(|s| Stage {
                    down: conv(&s.down),
                    refine: conv(&s.refine),
                })
                .collect(),
            attention: self
                .attention
                .iter()
                .map(|a| Attention {
                    gamma: branch(&a.gamma),
                    beta: branch(&a.beta),
                })
                .collect(),
            fc1: linear(&self.fc1),
            fc2: linear(&self.fc2),
        }
    }

    /// Scaled network inputs `(frames, masks)`, each `N×1×S×S`.
    pub fn clip_tensors(&self, clip: &SampleClip) -> Result<(Tensor<T>, Tensor<T>), NnError> {
        let n = clip.len();
        let side = clip.side();
        if n != self.config.clip_len || side != self.config.input_side || clip.hf_masks.len() != n {
            return Err(NnError::Config(format!(
                "clip of {n} frames at side {side} does not match the model ({} frames at side {})",
                self.config.clip_len, self.config.input_side
            )));
        }
        let mut frames = Vec::with_capacity(n * side * side);
        let mut masks = Vec::with_capacity(n * side * side);
        for (f, m) in clip.frames.iter().zip(&clip.hf_masks) {
            if f.height != side || m.width != side || m.height != side {
                return Err(NnError::Config("clip planes are not square at the model side".into()));
            }
            frames.extend(f.data.iter().map(|&v| T::of((v * FRAME_SCALE + FRAME_SHIFT) as f64)));
            masks.extend(m.data.iter().map(|&v| T::of((v * MASK_SCALE) as f64)));
        }
        let shape = vec![n, 1, side, side];
        Ok((Tensor::new(shape.clone(), frames)?, Tensor::new(shape, masks)?))
    }

    fn check_input(&self, x: &Tensor<T>, what: &'static str) -> Result<(), NnError> {
        let (_, c, h, w) = x.dims4(what)?;
        if c != 1 || h != self.config.input_side || w != self.config.input_side {
            return Err(NnError::Config(format!(
                "{what} {:?} does not match input side {}",
                x.shape, self.config.input_side
            )));
        }
        Ok(())
    }

    fn stages_forward(&self, x: &Tensor<T>) -> Result<Vec<StageCache<T>>, NnError> {
        self.check_input(x, "frames")?;
        let mut caches: Vec<StageCache<T>> = Vec::with_capacity(STAGES);
        for stage in &self.stages {
            let input = caches.last().map_or_else(|| x.clone(), |c| c.f.clone());
            let z1 = stage.down.forward(&input)?;
            let a1 = relu(&z1);
            let z2 = stage.refine.forward(&a1)?;
            let f = relu(&z2);
            caches.push(StageCache { input, z1, a1, z2, f });
        }
        Ok(caches)
    }

    /// Stage features `f_1..f_4` for a stack of frames `N×1×S×S`.
    pub fn backbone_forward(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>, NnError> {
        Ok(self.stages_forward(x)?.into_iter().map(|c| c.f).collect())
    }

    fn branch_forward(branch: &Branch<T>, mask: &Tensor<T>) -> Result<BranchCache<T>, NnError> {
        let z = branch.hidden.forward(mask)?;
        let a = relu(&z);
        let out = branch.out.forward(&a)?;
        Ok(BranchCache { z, a, out })
    }

    fn attention_forward(
        &self,
        stage: usize,
        mask: &Tensor<T>,
        f: &Tensor<T>,
    ) -> Result<(Tensor<T>, AttentionCache<T>), NnError> {
        let (n, c, h, w) = f.dims4("frequency_attention")?;
        let (mn, mc, _, _) = mask.dims4("frequency_attention")?;
        if mn != n || mc != 1 {
            return Err(NnError::shape(
                "frequency_attention",
                format!("mask {:?} for features {:?}", mask.shape, f.shape),
            ));
        }
        let att = &self.attention[stage];
        let pooled = adaptive_avgpool(mask, h, w)?;
        let gamma = Self::branch_forward(&att.gamma, &pooled)?;
        let beta = Self::branch_forward(&att.beta, &pooled)?;
        if gamma.out.shape != [n, c, h, w] || beta.out.shape != f.shape {
            return Err(NnError::shape(
                "frequency_attention",
                format!("branch outputs {:?}, {:?} for features {:?}", gamma.out.shape, beta.out.shape, f.shape),
            ));
        }
        let data = f
            .data
            .iter()
            .zip(&gamma.out.data)
            .zip(&beta.out.data)
            .map(|((&x, &g), &b)| g * x + b)
            .collect();
        let fused = Tensor::new(f.shape.clone(), data)?;
        Ok((
            fused,
            AttentionCache {
                mask: pooled,
                gamma,
                beta,
            },
        ))
    }

    /// `F_i = γ ⊙ f_i + β` for stage `stage`, with `mask` at input resolution.
    pub fn frequency_attention(&self, stage: usize, mask: &Tensor<T>, f: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        if stage >= self.attention.len() {
            return Err(NnError::Config(format!("no stage {stage}")));
        }
        Ok(self.attention_forward(stage, mask, f)?.0)
    }

    fn head_forward(&self, fused: &[Tensor<T>]) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>, Tensor<T>), NnError> {
        let gaps = fused.iter().map(global_avgpool).collect::<Result<Vec<_>, _>>()?;
        let n = gaps.first().map_or(0, |g| g.shape[0]);
        let width: usize = gaps.iter().map(|g| g.shape[1]).sum();
        let mut pooled = Vec::with_capacity(n * width);
        for i in 0..n {
            for g in &gaps {
                let c = g.shape[1];
                pooled.extend_from_slice(&g.data[i * c..(i + 1) * c]);
            }
        }
        let pooled = Tensor::new(vec![n, width], pooled)?;
        let h_pre = fully_connected(&pooled, &self.fc1.weight, &self.fc1.bias)?;
        let h = relu(&h_pre);
        let out = fully_connected(&h, &self.fc2.weight, &self.fc2.bias)?;
        Ok((pooled, h_pre, h, out))
    }

    fn clip_mean(frame_scores: &Tensor<T>) -> T {
        let mut acc = T::zero();
        for &v in &frame_scores.data {
            acc += v;
        }
        acc / T::of(frame_scores.len() as f64)
    }

    /// Clip score from the fused features of one clip: per-frame regression
    /// averaged over frames.
    pub fn regression_head(&self, fused: &[Tensor<T>]) -> Result<T, NnError> {
        let (_, _, _, out) = self.head_forward(fused)?;
        Ok(Self::clip_mean(&out))
    }

    /// Clip score and the cache for [`Ffpn::backward`].
    pub fn forward(&self, frames: &Tensor<T>, masks: &Tensor<T>) -> Result<(T, ForwardCache<T>), NnError> {
        self.check_input(masks, "masks")?;
        if frames.shape != masks.shape {
            return Err(NnError::shape(
                "forward",
                format!("frames {:?} vs masks {:?}", frames.shape, masks.shape),
            ));
        }
        let stages = self.stages_forward(frames)?;
        let mut attention = Vec::with_capacity(STAGES);
        let mut fused = Vec::with_capacity(STAGES);
        for (i, s) in stages.iter().enumerate() {
            if self.fa_enabled {
                let (big_f, cache) = self.attention_forward(i, masks, &s.f)?;
                fused.push(big_f);
                attention.push(Some(cache));
            } else {
                fused.push(s.f.clone());
                attention.push(None);
            }
        }
        let (pooled, h_pre, h, frame_scores) = self.head_forward(&fused)?;
        let score = Self::clip_mean(&frame_scores);
        Ok((
            score,
            ForwardCache {
                stages,
                attention,
                fused,
                pooled,
                h_pre,
                h,
                frame_scores,
            },
        ))
    }

    /// Clip score of a sampled clip.
    pub fn score_clip(&self, clip: &SampleClip) -> Result<T, NnError> {
        let (frames, masks) = self.clip_tensors(clip)?;
        Ok(self.forward(&frames, &masks)?.0)
    }

    fn branch_backward(
        branch: &Branch<T>,
        cache: &BranchCache<T>,
        mask: &Tensor<T>,
        d_out: &Tensor<T>,
        grad: &mut Branch<T>,
    ) -> Result<(), NnError> {
        let d_a = branch.out.backward(&cache.a, d_out, &mut grad.out)?;
        let d_z = relu_backward(&cache.z, &d_a)?;
        branch.hidden.backward(mask, &d_z, &mut grad.hidden)?;
        Ok(())
    }

    /// Accumulates `d_score · ∂score/∂θ` into `grads`.
    pub fn backward(&self, cache: &ForwardCache<T>, d_score: T, grads: &mut Ffpn<T>) -> Result<(), NnError> {
        let n = cache.frame_scores.shape[0];
        let d_frame = Tensor::full(&[n, 1], d_score / T::of(n as f64));
        let d_h = self.fc2.backward(&cache.h, &d_frame, &mut grads.fc2)?;
        let d_h_pre = relu_backward(&cache.h_pre, &d_h)?;
        let d_pooled = self.fc1.backward(&cache.pooled, &d_h_pre, &mut grads.fc1)?;
        let width = d_pooled.shape[1];

        let mut d_next: Option<Tensor<T>> = None;
        let mut offset: usize = self.config.stage_channels.iter().sum();
        for i in (0..self.stages.len()).rev() {
            let c = self.config.stage_channels[i];
            offset -= c;
            let mut d_gap = Vec::with_capacity(n * c);
            for row in 0..n {
                d_gap.extend_from_slice(&d_pooled.data[row * width + offset..][..c]);
            }
            let d_gap = Tensor::new(vec![n, c], d_gap)?;
            let d_fused = global_avgpool_backward(&cache.fused[i].shape, &d_gap)?;

            let sc = &cache.stages[i];
            let mut d_f = match &cache.attention[i] {
                Some(ac) => {
                    let att = &self.attention[i];
                    let g_att = &mut grads.attention[i];
                    let len = d_fused.len();
                    let mut d_f = Vec::with_capacity(len);
                    let mut d_gamma = Vec::with_capacity(len);
                    for k in 0..len {
                        let d = d_fused.data[k];
                        d_f.push(d * ac.gamma.out.data[k]);
                        d_gamma.push(d * sc.f.data[k]);
                    }
                    let d_gamma = Tensor::new(d_fused.shape.clone(), d_gamma)?;
                    Self::branch_backward(&att.gamma, &ac.gamma, &ac.mask, &d_gamma, &mut g_att.gamma)?;
                    Self::branch_backward(&att.beta, &ac.beta, &ac.mask, &d_fused, &mut g_att.beta)?;
                    Tensor::new(d_fused.shape.clone(), d_f)?
                }
                None => d_fused,
            };
            if let Some(d) = d_next.take() {
                d_f.add_assign(&d);
            }

            let stage = &self.stages[i];
            let g_stage = &mut grads.stages[i];
            let d_z2 = relu_backward(&sc.z2, &d_f)?;
            let d_a1 = stage.refine.backward(&sc.a1, &d_z2, &mut g_stage.refine)?;
            let d_z1 = relu_backward(&sc.z1, &d_a1)?;
            let d_in = stage.down.backward(&sc.input, &d_z1, &mut g_stage.down)?;
            if i > 0 {
                d_next = Some(d_in);
            }
        }
        Ok(())
    }
}
