//! Central-finite-difference verification of analytic gradients.

use crate::error::Result;
use crate::numerics::graph::{Graph, NodeId};
use crate::numerics::tensor::{DType, Tensor};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// (parameter name, max relative error over its elements)
    pub per_param: Vec<(String, f64)>,
    pub max_rel_err: f64,
    pub worst_param: String,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12)
}

/// Check the analytic gradient of `build` (which maps leaf parameters to a
/// scalar loss node) against central differences with the given step.
///
/// `build` is called with parameters in the order given; it must be a pure
/// function of their values.
pub fn grad_check<F>(params: &[(String, Tensor)], build: F, fd_step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new(DType::F64);
        let ids: Vec<NodeId> = params
            .iter()
            .zip(values)
            .map(|((name, _), v)| g.param(name, v.clone()))
            .collect();
        let loss = build(&mut g, &ids)?;
        Ok(g.value(loss).item())
    };

    // analytic pass
    let mut g = Graph::new(DType::F64);
    let ids: Vec<NodeId> = params.iter().map(|(name, t)| g.param(name, t.clone())).collect();
    let loss = build(&mut g, &ids)?;
    let grads = g.backward(loss)?;

    let mut per_param = Vec::new();
    let mut worst = ("".to_string(), 0.0f64);
    let mut values: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    for (pi, (name, _)) in params.iter().enumerate() {
        let analytic = grads
            .wrt(ids[pi])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(values[pi].shape().to_vec()));
        let mut max_err = 0.0f64;
        for i in 0..values[pi].numel() {
            let orig = values[pi].data()[i];
            values[pi].data_mut()[i] = orig + fd_step;
            let up = eval(&values)?;
            values[pi].data_mut()[i] = orig - fd_step;
            let down = eval(&values)?;
            values[pi].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * fd_step);
            max_err = max_err.max(rel_err(analytic.data()[i], numeric));
        }
        if max_err > worst.1 {
            worst = (name.clone(), max_err);
        }
        per_param.push((name.clone(), max_err));
    }
    Ok(GradCheckReport { per_param, max_rel_err: worst.1, worst_param: worst.0, tolerance })
}
