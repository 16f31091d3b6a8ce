//! Gradients of stacked objectives and the Adam update.

use ndarray::Array2;

use crate::config::AdamConfig;
use crate::error::{Error, Result};

/// An objective over a stack of `T` weight matrices.
pub trait StackObjective {
    fn value_and_gradient(&self, stack: &[Array2<f64>]) -> Result<(f64, Vec<Array2<f64>>)>;

    fn value(&self, stack: &[Array2<f64>]) -> Result<f64> {
        Ok(self.value_and_gradient(stack)?.0)
    }
}

/// Evaluates `objective`'s gradient and rejects non-finite entries, naming the
/// first offending `(t, j, i)`.
pub fn gradient<O: StackObjective + ?Sized>(
    objective: &O,
    stack: &[Array2<f64>],
) -> Result<Vec<Array2<f64>>> {
    let (_, grads) = objective.value_and_gradient(stack)?;
    check_finite(&grads)?;
    Ok(grads)
}

pub(crate) fn check_finite(grads: &[Array2<f64>]) -> Result<()> {
    for (t, g) in grads.iter().enumerate() {
        if let Some(((j, i), v)) = g.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient entry (t={t}, j={j}, i={i}) is {v}"
            )));
        }
    }
    Ok(())
}

/// Adam accumulators shaped like the parameter stack.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(shapes: &[Array2<f64>]) -> Self {
        let zeros: Vec<_> = shapes.iter().map(|a| Array2::zeros(a.raw_dim())).collect();
        Self {
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[Array2<f64>] {
        &self.first
    }

    pub fn second_moment(&self) -> &[Array2<f64>] {
        &self.second
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    weights: &mut [Array2<f64>],
    grads: &[Array2<f64>],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if weights.len() != grads.len() || weights.len() != state.first.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weight blocks, {} gradient blocks, {} state blocks",
            weights.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for (w, g) in weights.iter().zip(grads) {
        if w.dim() != g.dim() {
            return Err(Error::DimensionMismatch(format!(
                "weights {:?} vs gradient {:?}",
                w.dim(),
                g.dim()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((w, g), (m1, m2)) in weights
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        ndarray::Zip::from(w)
            .and(g)
            .and(m1)
            .and(m2)
            .for_each(|w, &g, m1, m2| {
                *m1 = cfg.beta1 * *m1 + (1.0 - cfg.beta1) * g;
                *m2 = cfg.beta2 * *m2 + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m1 / bc1;
                let v_hat = *m2 / bc2;
                *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_gradient_leaves_weights_and_decays_moments() {
        let cfg = AdamConfig::default();
        let mut w = vec![array![[1.0, -2.0]]];
        let mut st = AdamState::new(&w);
        adam_step(&mut w, &[array![[0.5, 0.5]]], &mut st, &cfg).unwrap();
        let before = w.clone();
        let m_before = st.first_moment()[0].clone();
        adam_step(&mut w, &[array![[0.0, 0.0]]], &mut st, &cfg).unwrap();
        // First moment decays by beta1 while Adam keeps moving along the momentum.
        assert_eq!(st.first_moment()[0], &m_before * cfg.beta1);
        assert_ne!(w, before);

        let mut fresh = vec![array![[1.0, -2.0]]];
        let mut st = AdamState::new(&fresh);
        adam_step(&mut fresh, &[array![[0.0, 0.0]]], &mut st, &cfg).unwrap();
        assert_eq!(fresh[0], array![[1.0, -2.0]]);
    }

    #[test]
    fn first_step_has_magnitude_lr() {
        let cfg = AdamConfig::default();
        let mut w = vec![array![[0.0, 0.0, 0.0]]];
        let mut st = AdamState::new(&w);
        adam_step(&mut w, &[array![[3.0, -0.01, 1e3]]], &mut st, &cfg).unwrap();
        for (v, sgn) in w[0].iter().zip([-1.0, 1.0, -1.0]) {
            assert!((v - sgn * cfg.lr).abs() < 1e-8, "{v}");
        }
    }

    #[test]
    fn shape_mismatch_errors() {
        let cfg = AdamConfig::default();
        let mut w = vec![array![[0.0, 0.0]]];
        let mut st = AdamState::new(&w);
        assert!(adam_step(&mut w, &[array![[0.0]]], &mut st, &cfg).is_err());
        assert!(adam_step(&mut w, &[], &mut st, &cfg).is_err());
    }

    #[test]
    fn gradient_reports_location() {
        struct Bad;
        impl StackObjective for Bad {
            fn value_and_gradient(&self, s: &[Array2<f64>]) -> Result<(f64, Vec<Array2<f64>>)> {
                let mut g: Vec<_> = s.iter().map(|a| Array2::zeros(a.raw_dim())).collect();
                g[1][[0, 2]] = f64::NAN;
                Ok((0.0, g))
            }
        }
        let stack = vec![Array2::zeros((2, 3)), Array2::zeros((2, 3))];
        let err = gradient(&Bad, &stack).unwrap_err().to_string();
        assert!(err.contains("t=1, j=0, i=2"), "{err}");
    }
}
