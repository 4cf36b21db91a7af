//! Adam moment buffers.

use crate::biencoder::AdamConfig;
use crate::encoder::{EncoderParams, ParamGrads};

#[derive(Debug, Clone)]
pub(crate) struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    pub(crate) fn new(len: usize) -> Self {
        Moments {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// Bias-corrected Adam update; `step` counts from 1.
    pub(crate) fn update(
        &mut self,
        param: &mut [f64],
        grad: &[f64],
        lr: f64,
        cfg: &AdamConfig,
        step: u64,
    ) {
        let bc1 = 1.0 - cfg.beta1.powi(step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(step as i32);
        for i in 0..param.len() {
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            param[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

/// One [`Moments`] per encoder tensor.
#[derive(Debug, Clone)]
pub(crate) struct EncoderAdam {
    tensors: Vec<Moments>,
}

impl EncoderAdam {
    pub(crate) fn new(params: &EncoderParams) -> Self {
        EncoderAdam {
            tensors: params
                .tensors()
                .iter()
                .map(|t| Moments::new(t.len()))
                .collect(),
        }
    }

    pub(crate) fn update(
        &mut self,
        params: &mut EncoderParams,
        grads: &ParamGrads,
        lr: f64,
        cfg: &AdamConfig,
        step: u64,
    ) {
        let dense_emb = grads.dense_embeddings();
        let grad_tensors: [&[f64]; 6] = [
            &dense_emb,
            &grads.query,
            &grads.key,
            &grads.value,
            &grads.out_proj,
            &grads.out_bias,
        ];
        for ((param, grad), moments) in params
            .tensors_mut()
            .into_iter()
            .zip(grad_tensors)
            .zip(&mut self.tensors)
        {
            moments.update(param, grad, lr, cfg, step);
        }
    }
}
