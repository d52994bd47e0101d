use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Bias-corrected Adam over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<S> {
    pub learning_rate: S,
    pub beta1: S,
    pub beta2: S,
    pub epsilon: S,
    step: u64,
    first_moment: Vec<S>,
    second_moment: Vec<S>,
}

impl<S: Scalar> Adam<S> {
    /// Standard moments (0.9, 0.999) and epsilon 1e-8.
    pub fn new(param_count: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate: S::lit(learning_rate),
            beta1: S::lit(0.9),
            beta2: S::lit(0.999),
            epsilon: S::lit(1e-8),
            step: 0,
            first_moment: vec![S::zero(); param_count],
            second_moment: vec![S::zero(); param_count],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [S], grads: &[S]) -> Result<()> {
        if params.len() != self.first_moment.len() {
            return Err(Error::ShapeMismatch {
                expected: self.first_moment.len(),
                actual: params.len(),
            });
        }
        if grads.len() != params.len() {
            return Err(Error::ShapeMismatch {
                expected: params.len(),
                actual: grads.len(),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let one = S::one();
        let correction1 = one - self.beta1.powi(t);
        let correction2 = one - self.beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = self.beta1 * *m + (one - self.beta1) * *g;
            *v = self.beta2 * *v + (one - self.beta2) * *g * *g;
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}
