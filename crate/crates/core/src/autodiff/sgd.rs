use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// SGD with classical momentum and L2 weight decay folded into the gradient:
/// `v <- momentum * v + grad + weight_decay * param`, `param <- param - lr * v`.
#[derive(Clone, Debug)]
pub struct SgdState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl SgdState {
    pub fn new(learning_rate: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::Parameter(format!(
                "learning rate must be finite and >= 0, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Parameter(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::Parameter(format!(
                "weight decay must be finite and >= 0, got {weight_decay}"
            )));
        }
        Ok(SgdState {
            learning_rate,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        })
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    /// Applies one update in place. Velocity buffers are created on the
    /// first call and must keep matching the parameter shapes afterwards.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Dimension(format!(
                "sgd: {} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::Dimension(format!(
                    "sgd: parameter {i} has shape {:?}, gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
        } else if self.velocity.len() != params.len()
            || self.velocity.iter().zip(params.iter()).any(|(v, p)| v.len() != p.len())
        {
            return Err(Error::Dimension(
                "sgd: parameter set changed shape between steps".into(),
            ));
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                *vv = self.momentum * *vv + gv + self.weight_decay * *pv;
                *pv -= self.learning_rate * *vv;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_step(state: &mut SgdState, param: &mut Tensor, grad: f64) {
        state
            .step(std::slice::from_mut(param), &[Tensor::scalar(grad)])
            .unwrap();
    }

    #[test]
    fn vanilla_step() {
        let mut s = SgdState::new(1.0, 0.0, 0.0).unwrap();
        let mut p = Tensor::scalar(1.0);
        scalar_step(&mut s, &mut p, 0.5);
        assert_eq!(p.item(), 0.5);
    }

    #[test]
    fn momentum_recurrence_unrolled_by_hand() {
        // v1 = 1, p1 = -0.1; v2 = 0.9 + 1 = 1.9, p2 = -0.1 - 0.19 = -0.29
        let mut s = SgdState::new(0.1, 0.9, 0.0).unwrap();
        let mut p = Tensor::scalar(0.0);
        scalar_step(&mut s, &mut p, 1.0);
        assert!((p.item() + 0.1).abs() < 1e-15);
        scalar_step(&mut s, &mut p, 1.0);
        assert!((p.item() + 0.29).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_only() {
        let mut s = SgdState::new(0.0005, 0.0, 0.0005).unwrap();
        let mut p = Tensor::scalar(1.0);
        scalar_step(&mut s, &mut p, 0.0);
        assert!((p.item() - 0.99999975).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut s = SgdState::new(0.1, 0.0, 0.0).unwrap();
        let mut p = vec![Tensor::zeros(vec![2])];
        assert!(matches!(
            s.step(&mut p, &[Tensor::zeros(vec![3])]),
            Err(Error::Dimension(_))
        ));
        assert!(s.step(&mut p, &[]).is_err());
    }

    #[test]
    fn velocity_tracks_parameter_shapes() {
        let mut s = SgdState::new(0.1, 0.5, 0.0).unwrap();
        let mut p = vec![Tensor::zeros(vec![2, 3]), Tensor::zeros(vec![4])];
        let g = vec![Tensor::zeros(vec![2, 3]), Tensor::zeros(vec![4])];
        s.step(&mut p, &g).unwrap();
        assert_eq!(s.velocity()[0].len(), 6);
        assert_eq!(s.velocity()[1].len(), 4);
        let mut other = vec![Tensor::zeros(vec![5]), Tensor::zeros(vec![4])];
        let g2 = vec![Tensor::zeros(vec![5]), Tensor::zeros(vec![4])];
        assert!(s.step(&mut other, &g2).is_err());
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(SgdState::new(-1.0, 0.0, 0.0).is_err());
        assert!(SgdState::new(0.1, 1.0, 0.0).is_err());
        assert!(SgdState::new(0.1, 0.0, -0.1).is_err());
    }
}
