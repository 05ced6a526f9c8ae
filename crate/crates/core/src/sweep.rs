//! Batches of independent simulations over one immutable model.

use crate::error::Result;
use crate::model::{ModalSystem, StructuralModel};
use crate::par::{self, Execution};
use crate::synthesis::{simulate, SimParams};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone)]
pub struct SweepCase {
    pub label: String,
    pub params: SimParams,
}

/// Runs every case; results keep the input order.
pub fn run_sweep(
    model: &StructuralModel,
    system: &ModalSystem,
    cases: &[SweepCase],
    exec: Execution,
) -> Vec<Result<Trajectory>> {
    par::map(exec, cases, |c| {
        let mut p = c.params.clone();
        p.options.execution = Execution::Sequential;
        simulate(model, system, &p)
    })
}

/// Same run at each step size in `dts`.
pub fn step_size_sweep(
    model: &StructuralModel,
    system: &ModalSystem,
    base: &SimParams,
    dts: &[f64],
    exec: Execution,
) -> Result<Vec<Trajectory>> {
    let cases: Vec<SweepCase> = dts
        .iter()
        .map(|&dt| SweepCase {
            label: format!("dt={dt}"),
            params: SimParams { dt, ..base.clone() },
        })
        .collect();
    run_sweep(model, system, &cases, exec).into_iter().collect()
}

/// Observed convergence order from results at step sizes `h`, `h/2`, `h/4`.
pub fn observed_order(coarse: f64, mid: f64, fine: f64) -> f64 {
    ((coarse - mid).abs() / (mid - fine).abs()).log2()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_of_exact_power_law() {
        let f = |h: f64| 1.0 + 3.0 * h.powi(4);
        assert!((observed_order(f(0.1), f(0.05), f(0.025)) - 4.0).abs() < 1e-6);
    }
}
