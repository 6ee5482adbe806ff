//! Adam with bias correction. Frozen parameters carry no optimizer state and
//! are never updated.

use crate::error::{Error, Result};
use crate::model::IqaModel;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

struct Slot {
    m: Vec<f32>,
    v: Vec<f32>,
}

pub struct AdamState {
    /// Completed steps; increments by one per [`AdamState::step`].
    t: u64,
    /// One slot per model parameter, `None` for frozen ones.
    slots: Vec<Option<Slot>>,
}

impl AdamState {
    pub fn new(model: &IqaModel) -> Self {
        let slots = model
            .params()
            .iter()
            .map(|p| {
                if p.trainable {
                    let len = p.value.data().len();
                    Some(Slot {
                        m: vec![0.0; len],
                        v: vec![0.0; len],
                    })
                } else {
                    None
                }
            })
            .collect();
        AdamState { t: 0, slots }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Applies one bias-corrected update to the trainable parameters.
    /// `grads` is indexed like `model.params()`; `None` entries count as
    /// zero gradient.
    pub fn step(
        &mut self,
        model: &mut IqaModel,
        grads: &[Option<Vec<f32>>],
        lr: f64,
    ) -> Result<()> {
        self.t += 1;
        let corr1 = 1.0 - BETA1.powi(self.t as i32);
        let corr2 = 1.0 - BETA2.powi(self.t as i32);
        let (b1, b2) = (BETA1 as f32, BETA2 as f32);
        let (c1, c2) = (corr1 as f32, corr2 as f32);
        let (lr32, eps) = (lr as f32, EPSILON as f32);

        for (pi, param) in model.params_mut().iter_mut().enumerate() {
            let Some(slot) = &mut self.slots[pi] else {
                continue;
            };
            let zero;
            let g: &[f32] = match &grads[pi] {
                Some(g) => g,
                None => {
                    zero = vec![0.0f32; param.value.data().len()];
                    &zero
                }
            };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NanGradient {
                    param: param.name.clone(),
                    step: self.t,
                });
            }
            let data = param.value.data_mut();
            for i in 0..data.len() {
                slot.m[i] = b1 * slot.m[i] + (1.0 - b1) * g[i];
                slot.v[i] = b2 * slot.v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = slot.m[i] / c1;
                let v_hat = slot.v[i] / c2;
                data[i] -= lr32 * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
