//! Adam and a reduce-on-plateau learning-rate schedule.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient in {name} at index {index}")]
    NonFiniteGradient { name: String, index: usize },
    #[error("non-finite loss {0}")]
    NonFiniteLoss(f64),
    #[error("parameter {name}: {params} values but {grads} gradients")]
    ShapeMismatch {
        name: String,
        params: usize,
        grads: usize,
    },
    #[error("expected {expected} parameter groups, got {found}")]
    GroupCountMismatch { expected: usize, found: usize },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
}

pub type OptimResult<T> = std::result::Result<T, OptimError>;

pub const DEFAULT_LR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

/// A named, mutable parameter buffer and its gradient.
pub struct ParamGroup<'a> {
    pub name: &'a str,
    pub values: &'a mut [f64],
    pub grad: &'a [f64],
}

impl AdamState {
    /// Fresh state for parameter groups with the given lengths.
    pub fn new(sizes: &[usize], lr: f64) -> OptimResult<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(OptimError::InvalidHyperparameter(format!("lr = {lr}")));
        }
        Ok(Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// One bias-corrected Adam update applied in place. Nothing is modified
    /// when any gradient is non-finite.
    pub fn step(&mut self, groups: &mut [ParamGroup<'_>]) -> OptimResult<()> {
        if groups.len() != self.m.len() {
            return Err(OptimError::GroupCountMismatch {
                expected: self.m.len(),
                found: groups.len(),
            });
        }
        for (g, m) in groups.iter().zip(&self.m) {
            if g.values.len() != m.len() || g.grad.len() != m.len() {
                return Err(OptimError::ShapeMismatch {
                    name: g.name.to_string(),
                    params: g.values.len(),
                    grads: g.grad.len(),
                });
            }
            if let Some(index) = g.grad.iter().position(|x| !x.is_finite()) {
                return Err(OptimError::NonFiniteGradient {
                    name: g.name.to_string(),
                    index,
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((g, m), v) in groups.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..m.len() {
                let gi = g.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                g.values[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    pub patience: usize,
    pub factor: f64,
    pub min_lr: f64,
    pub threshold: f64,
    lr: f64,
    best: Option<f64>,
    bad_calls: usize,
}

impl PlateauSchedule {
    pub fn new(lr: f64) -> Self {
        Self {
            patience: 200,
            factor: 0.1,
            min_lr: 1e-8,
            threshold: 1e-12,
            lr,
            best: None,
            bad_calls: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn calls_without_improvement(&self) -> usize {
        self.bad_calls
    }

    /// Forgets the best loss so far; used when the objective itself changes.
    pub fn reset(&mut self) {
        self.best = None;
        self.bad_calls = 0;
    }

    /// Records a loss and returns the (possibly reduced) learning rate.
    ///
    /// The first call only sets the reference and counts as a call without
    /// improvement, so a constant loss reduces the rate on call `patience`.
    pub fn update(&mut self, loss: f64) -> OptimResult<f64> {
        if !loss.is_finite() {
            return Err(OptimError::NonFiniteLoss(loss));
        }
        match self.best {
            Some(best) if best - loss > self.threshold * best.abs() => {
                self.best = Some(loss);
                self.bad_calls = 0;
            }
            Some(_) => self.bad_calls += 1,
            None => {
                self.best = Some(loss);
                self.bad_calls = 1;
            }
        }
        if self.bad_calls >= self.patience {
            self.lr = (self.lr * self.factor).max(self.min_lr);
            self.bad_calls = 0;
        }
        Ok(self.lr)
    }
}
