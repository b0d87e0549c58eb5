//! Central finite-difference verification of analytic gradients.

use rand::seq::index;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::losses::Coefficients;
use crate::trainer::params::Params;
use crate::trainer::sampling::{stream, BatchPlan};
use crate::trainer::Trainer;

pub const FD_STEP: f64 = 1e-5;
pub const DEFAULT_MAX_COORDS: usize = 200;
/// Denominator floor for the relative error, so coordinates whose true
/// gradient is (numerically) zero are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockError {
    pub block: String,
    pub max_rel_error: f64,
    pub checked: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockError>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.max_rel_error < self.tolerance)
    }

    /// Fails on the first block over tolerance, naming it.
    pub fn verify(&self) -> Result<()> {
        match self.blocks.iter().find(|b| !(b.max_rel_error < self.tolerance)) {
            Some(b) => Err(Error::GradientCheck {
                block: b.block.clone(),
                error: b.max_rel_error,
                tolerance: self.tolerance,
            }),
            None => Ok(()),
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares `analytic` with central differences of `loss` on at most
/// `max_coords` seeded coordinates per parameter block.
pub fn check_gradient<F>(
    params: &Params,
    analytic: &Params,
    loss: F,
    max_coords: usize,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&Params) -> Result<f64> + Sync,
{
    if !params.same_shape(analytic) {
        return Err(Error::Shape("analytic gradient does not match parameter shapes".into()));
    }
    let mut rng = stream(seed, 0, 0, 0);
    let grad_blocks = analytic.blocks();
    let mut blocks = Vec::with_capacity(grad_blocks.len());
    for (b, (name, grad)) in grad_blocks.iter().enumerate() {
        let coords: Vec<usize> = if grad.len() <= max_coords {
            (0..grad.len()).collect()
        } else {
            let mut picked = index::sample(&mut rng, grad.len(), max_coords).into_vec();
            picked.sort_unstable();
            picked
        };
        let errors = coords
            .par_iter()
            .map(|&k| {
                let eval = |delta: f64| {
                    let mut p = params.clone();
                    p.blocks_mut()[b].1[k] += delta;
                    loss(&p)
                };
                let numeric = (eval(FD_STEP)? - eval(-FD_STEP)?) / (2.0 * FD_STEP);
                Ok(relative_error(grad[k], numeric))
            })
            .collect::<Result<Vec<f64>>>()?;
        let max_rel_error = errors.into_iter().fold(0.0, |a: f64, e| if e.is_nan() { f64::NAN } else { a.max(e) });
        blocks.push(BlockError {
            block: name.clone(),
            max_rel_error,
            checked: coords.len(),
        });
    }
    Ok(GradCheckReport { blocks, tolerance })
}

/// Finite-difference check of the training objective on a frozen plan.
pub fn gradient_check(
    trainer: &Trainer,
    params: &Params,
    plan: &BatchPlan,
    coef: &Coefficients,
    tolerance: f64,
    max_coords: usize,
) -> Result<GradCheckReport> {
    let (_, analytic) = trainer.objective(params, plan, coef, true)?;
    let analytic = analytic.expect("gradient requested");
    let loss = |p: &Params| trainer.objective(p, plan, coef, false).map(|(r, _)| r.total);
    check_gradient(params, &analytic, loss, max_coords, tolerance, trainer.config().seed)
}
