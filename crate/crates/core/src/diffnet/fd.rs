//! Central finite-difference gradient checks.
//!
//! Only forward evaluations of the loss are used, so the check is independent
//! of the tape's backward pass.

use rand::Rng as _;
use serde::Serialize;

use super::ParamSet;
use crate::error::Result;
use crate::rng;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is ~0 are judged on absolute agreement.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct FdReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares `analytic` against central differences of `loss` on
/// `num_coords` random coordinates drawn across all networks.
pub fn check<F>(
    params: &[ParamSet],
    analytic: &[ParamSet],
    loss: F,
    num_coords: usize,
    h: f64,
    seed: u64,
) -> Result<FdReport>
where
    F: Fn(&[&ParamSet]) -> Result<f64>,
{
    let sizes: Vec<usize> = params.iter().map(ParamSet::num_params).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = rng::rng_from(seed);
    let coords: Vec<(usize, usize)> = if total <= num_coords {
        sizes.iter().enumerate().flat_map(|(n, &s)| (0..s).map(move |i| (n, i))).collect()
    } else {
        (0..num_coords)
            .map(|_| {
                let mut flat = rng.random_range(0..total);
                let mut net = 0;
                while flat >= sizes[net] {
                    flat -= sizes[net];
                    net += 1;
                }
                (net, flat)
            })
            .collect()
    };

    let mut work: Vec<ParamSet> = params.to_vec();
    let mut report = FdReport { checked: 0, max_rel_err: 0.0, worst_analytic: 0.0, worst_numeric: 0.0 };
    for (net, idx) in coords {
        let orig = work[net].get_flat(idx);
        work[net].set_flat(idx, orig + h);
        let plus = loss(&work.iter().collect::<Vec<_>>())?;
        work[net].set_flat(idx, orig - h);
        let minus = loss(&work.iter().collect::<Vec<_>>())?;
        work[net].set_flat(idx, orig);
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[net].get_flat(idx);
        let err = rel_err(a, numeric);
        report.checked += 1;
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}
