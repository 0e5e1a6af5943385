//! AdamW with decoupled weight decay and per-group hyperparameters.

use super::tensor::{Scalar, Tensor};
use crate::error::NnError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupHyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl GroupHyper {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        GroupHyper {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state: moments per parameter, a shared step counter and the
/// hyperparameters of each group.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub groups: Vec<GroupHyper>,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    param_group: Vec<usize>,
}

impl<T: Scalar> AdamW<T> {
    /// `param_shapes[i]` belongs to group `param_group[i]`.
    pub fn new(groups: Vec<GroupHyper>, param_shapes: &[Vec<usize>], param_group: Vec<usize>) -> Self {
        assert_eq!(param_shapes.len(), param_group.len());
        assert!(param_group.iter().all(|&g| g < groups.len()), "unknown group");
        let zeros = |s: &Vec<usize>| vec![T::zero(); s.iter().product()];
        AdamW {
            groups,
            step: 0,
            m: param_shapes.iter().map(zeros).collect(),
            v: param_shapes.iter().map(zeros).collect(),
            param_group,
        }
    }

    /// Multiplies every group learning rate by `factor`.
    pub fn scale_lr(&mut self, factor: f64) {
        for g in &mut self.groups {
            g.lr *= factor;
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>]) -> Result<(), NnError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NnError::shape(
                "adamw_step",
                format!(
                    "{} params, {} grads, optimizer tracks {}",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.shape != p.shape {
                return Err(NnError::shape(
                    "adamw_step",
                    format!("param {i}: {:?} with grad {:?}", p.shape, g.shape),
                ));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let h = self.groups[self.param_group[i]];
            let lr = T::of(h.lr);
            let decay = T::of(1.0 - h.lr * h.weight_decay);
            let b1 = T::of(h.beta1);
            let b2 = T::of(h.beta2);
            let one = T::one();
            let bc1 = T::of(1.0 - h.beta1.powi(t));
            let bc2 = T::of(1.0 - h.beta2.powi(t));
            let eps = T::of(h.eps);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (pv, &gv)) in p.data.iter_mut().zip(&g.data).enumerate() {
                *pv *= decay;
                m[j] = b1 * m[j] + (one - b1) * gv;
                v[j] = b2 * v[j] + (one - b2) * gv * gv;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
