//! Inner minimization of Φ¹ + λΦ² over the ridge-network parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SdrError};
use crate::model::RidgeModel;
use crate::objective::{grad_params, objective_parts, ObjectiveContext, ObjectiveValue};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub step_count: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Start outer iteration t from G_{t−1} instead of the random initialization.
    pub warm_start: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            step_count: 200,
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warm_start: true,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.step_count == 0 {
            return Err(SdrError::invalid("step_count must be ≥ 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(SdrError::invalid("learning_rate must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(SdrError::invalid(format!("{name} must lie in (0,1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(SdrError::invalid("eps must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Minimized {
    /// Best iterate seen, including the starting point.
    pub model: RidgeModel,
    pub value: ObjectiveValue,
    /// Best objective after each evaluation; entry 0 is the starting value.
    pub best_trace: Vec<f64>,
}

/// Adam on the flat parameter vector, returning the best iterate seen so the
/// result never scores worse than `start`.
pub fn minimize(start: &RidgeModel, ctx: &ObjectiveContext, cfg: &OptimizerConfig) -> Result<Minimized> {
    cfg.validate()?;
    let len = start.param_count();
    let mut params = start.params().to_vec();
    let mut m1 = vec![0.0; len];
    let mut m2 = vec![0.0; len];
    let mut best: Option<(ObjectiveValue, Vec<f64>)> = None;
    let mut best_trace = Vec::with_capacity(cfg.step_count + 2);
    let mut b1t = 1.0;
    let mut b2t = 1.0;

    for step in 0..cfg.step_count {
        let current = start.with_params(params.clone())?;
        let (value, grad) = grad_params(&current, ctx)?;
        check_finite(start, &value, &grad, step)?;
        record(&mut best, &mut best_trace, value, &params);

        b1t *= cfg.beta1;
        b2t *= cfg.beta2;
        for i in 0..len {
            m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * grad[i];
            m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let mhat = m1[i] / (1.0 - b1t);
            let vhat = m2[i] / (1.0 - b2t);
            params[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.eps);
        }
    }

    let last = start.with_params(params.clone())?;
    let value = objective_parts(&last, ctx)?;
    if !value.total.is_finite() {
        return Err(SdrError::NonFinite {
            block: "objective",
            quantity: "value",
            step: cfg.step_count,
        });
    }
    record(&mut best, &mut best_trace, value, &params);

    let (value, params) = best.expect("at least one evaluation");
    Ok(Minimized {
        model: start.with_params(params)?,
        value,
        best_trace,
    })
}

fn record(best: &mut Option<(ObjectiveValue, Vec<f64>)>, trace: &mut Vec<f64>, value: ObjectiveValue, params: &[f64]) {
    let improved = best.as_ref().is_none_or(|(b, _)| value.total < b.total);
    if improved {
        *best = Some((value, params.to_vec()));
    }
    trace.push(best.as_ref().unwrap().0.total);
}

fn check_finite(model: &RidgeModel, value: &ObjectiveValue, grad: &[f64], step: usize) -> Result<()> {
    if !value.total.is_finite() {
        return Err(SdrError::NonFinite {
            block: "objective",
            quantity: "value",
            step,
        });
    }
    let (n, m) = (model.n(), model.units());
    let blocks = [
        ("directions", 0..m * n),
        ("offsets", m * n..m * (n + 1)),
        ("coefficients", m * (n + 1)..m * (n + 2)),
    ];
    for (block, range) in blocks {
        if grad[range].iter().any(|g| !g.is_finite()) {
            return Err(SdrError::NonFinite {
                block,
                quantity: "gradient",
                step,
            });
        }
    }
    Ok(())
}
