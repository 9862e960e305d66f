//! AdamW, the warmup + cosine learning-rate schedule, and global-norm
//! gradient clipping.

use crate::error::{Error, Result};
use crate::neuralcore::Tensor;

/// Adam moments with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamW {
    pub fn new(params: &[Tensor], weight_decay: f64) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|p| Tensor::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// `p ← p·(1 − lr·wd) − lr·m̂/(√v̂ + ε)` with bias-corrected moments.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != self.m.len()
            || grads.len() != params.len()
            || params
                .iter()
                .zip(grads)
                .zip(&self.m)
                .any(|((p, g), m)| p.shape() != g.shape() || p.shape() != m.shape())
        {
            return Err(Error::invalid(
                "optimizer state, parameters and gradients disagree in shape",
            ));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let decay = 1.0 - lr * self.weight_decay;
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((pv, gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv = *pv * decay - lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `lr_max` over `warmup` steps, then cosine decay to
/// `lr_min` at `total_steps`.
pub fn cosine_lr(
    step: usize,
    warmup: usize,
    total_steps: usize,
    lr_max: f64,
    lr_min: f64,
) -> Result<f64> {
    if total_steps <= warmup {
        return Err(Error::invalid(format!(
            "total steps ({total_steps}) must exceed warmup steps ({warmup})"
        )));
    }
    if step > total_steps {
        return Err(Error::invalid(format!(
            "step {step} beyond schedule end {total_steps}"
        )));
    }
    if step < warmup {
        return Ok(lr_max * step as f64 / warmup as f64);
    }
    let progress = (step - warmup) as f64 / (total_steps - warmup) as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_only_decays() {
        let mut p = vec![Tensor::new(1, 2, vec![2.0, -4.0]).unwrap()];
        let g = vec![Tensor::zeros(1, 2)];
        let mut opt = AdamW::new(&p, 1e-2);
        opt.step(&mut p, &g, 0.1).unwrap();
        assert_eq!(p[0].data(), &[2.0 * (1.0 - 1e-3), -4.0 * (1.0 - 1e-3)]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![Tensor::scalar(1.0)];
        let mut opt = AdamW::new(&p, 0.0);
        opt.step(&mut p, &[Tensor::scalar(0.37)], 1e-3).unwrap();
        assert!((p[0].data()[0] - (1.0 - 1e-3)).abs() < 1e-10);
        let mut q = vec![Tensor::scalar(1.0)];
        let mut opt = AdamW::new(&q, 0.0);
        opt.step(&mut q, &[Tensor::scalar(-5.0)], 1e-3).unwrap();
        assert!((q[0].data()[0] - (1.0 + 1e-3)).abs() < 1e-10);
    }

    #[test]
    fn schedule_points() {
        assert_eq!(cosine_lr(1000, 1000, 10_000, 1e-3, 1e-6).unwrap(), 1e-3);
        assert!((cosine_lr(10_000, 1000, 10_000, 1e-3, 1e-6).unwrap() - 1e-6).abs() < 1e-18);
        let mid = cosine_lr(5500, 1000, 10_000, 1e-3, 1e-6).unwrap();
        assert!((mid - 5.005e-4).abs() < 1e-12);
        assert_eq!(cosine_lr(500, 1000, 10_000, 1e-3, 1e-6).unwrap(), 5e-4);
        assert!(cosine_lr(0, 10, 10, 1e-3, 0.0).is_err());
    }

    #[test]
    fn clipping() {
        let mut g = vec![
            Tensor::new(1, 2, vec![3.0, 0.0]).unwrap(),
            Tensor::scalar(4.0),
        ];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        let after = g.iter().map(Tensor::sum_squares).sum::<f64>().sqrt();
        assert!(after <= 1.0 + 1e-12);
        let mut small = vec![Tensor::scalar(0.5)];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].data(), &[0.5]);
    }
}
