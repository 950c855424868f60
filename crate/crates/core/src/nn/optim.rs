use super::tensor::Tensor;
use super::NnError;

/// Classical momentum: `v <- momentum * v + g`, then `p <- p - lr * v`.
pub fn sgd_momentum_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    velocity: &mut [Tensor],
    lr: f64,
    momentum: f64,
) -> Result<(), NnError> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(NnError::ShapeMismatch(format!(
            "{} params, {} grads, {} velocities",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    for ((p, g), v) in params.iter().zip(grads).zip(velocity.iter()) {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(NnError::ShapeMismatch(format!(
                "param {:?}, grad {:?}, velocity {:?}",
                p.shape(),
                g.shape(),
                v.shape()
            )));
        }
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        for ((pi, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = momentum * *vi + gi;
            *pi -= lr * *vi;
        }
    }
    Ok(())
}

/// SGD with momentum and its velocity state.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(params: &[Tensor], lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<(), NnError> {
        sgd_momentum_step(params, grads, &mut self.velocity, self.lr, self.momentum)
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }
}
