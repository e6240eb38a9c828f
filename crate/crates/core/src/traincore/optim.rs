//! Lion and a reference Adam, both over flat f64 tensors.

use super::TrainError;

pub trait Optimizer {
    fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) -> Result<(), TrainError>;
    /// Auxiliary buffers currently held.
    fn state_buffers(&self) -> usize;
}

fn check_shapes(params: &[&mut [f64]], grads: &[&[f64]], state: &[Vec<f64>]) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} params, {} grads, {} state buffers",
            params.len(),
            grads.len(),
            state.len()
        )));
    }
    for (i, ((p, g), s)) in params.iter().zip(grads).zip(state).enumerate() {
        if p.len() != g.len() || p.len() != s.len() {
            return Err(TrainError::ShapeMismatch(format!(
                "tensor {i}: param {}, grad {}, state {}",
                p.len(),
                g.len(),
                s.len()
            )));
        }
    }
    Ok(())
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LionState {
    pub momentum: Vec<Vec<f64>>,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
}

impl LionState {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            momentum: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            beta1: 0.9,
            beta2: 0.99,
            weight_decay: 0.0,
        }
    }
}

impl Optimizer for LionState {
    fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) -> Result<(), TrainError> {
        check_shapes(params, grads, &self.momentum)?;
        let (b1, b2, wd) = (self.beta1, self.beta2, self.weight_decay);
        for ((p, g), m) in params.iter_mut().zip(grads).zip(&mut self.momentum) {
            for ((pi, &gi), mi) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()) {
                let c = b1 * *mi + (1.0 - b1) * gi;
                *pi -= lr * (sign(c) + wd * *pi);
                *mi = b2 * *mi + (1.0 - b2) * gi;
            }
        }
        Ok(())
    }

    fn state_buffers(&self) -> usize {
        self.momentum.len()
    }
}

/// Pure form of one Lion update.
pub fn lion_step(
    params: &[Vec<f64>],
    grads: &[Vec<f64>],
    state: &LionState,
    lr: f64,
) -> Result<(Vec<Vec<f64>>, LionState), TrainError> {
    let mut out = params.to_vec();
    let mut next = state.clone();
    {
        let mut views: Vec<&mut [f64]> = out.iter_mut().map(|v| v.as_mut_slice()).collect();
        let gviews: Vec<&[f64]> = grads.iter().map(|v| v.as_slice()).collect();
        next.step(&mut views, &gviews, lr)?;
    }
    Ok((out, next))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
}

impl AdamState {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
        }
    }
}

impl Optimizer for AdamState {
    fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) -> Result<(), TrainError> {
        check_shapes(params, grads, &self.m)?;
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }

    fn state_buffers(&self) -> usize {
        self.m.len() + self.v.len()
    }
}
