use serde::Serialize;

use super::values::{check_partition_bound, BoundReport};
use crate::bmdp::BMDPInstance;
use crate::error::Result;
use crate::rsd_oracle::Partition;

/// Learned latents quantized into a state partition, with the value gaps that
/// partition would give. Reported, never asserted: a learned encoder only
/// approximates a `T`-level representation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatentDiagnostic {
    pub radius: f64,
    pub num_clusters: usize,
    /// Share of observations whose cluster is the majority cluster of their
    /// state.
    pub consistency: f64,
    pub partition: Partition,
    pub report: BoundReport,
}

/// Leader clustering of `encode(g(s, x))` over every state and factor; each
/// state joins the cluster most of its observations fall in.
pub fn latent_partition<F>(inst: &BMDPInstance, t: usize, radius: f64, encode: F) -> Result<LatentDiagnostic>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut leaders: Vec<Vec<f64>> = Vec::new();
    let mut votes = vec![Vec::new(); inst.core.num_states];
    for (s, row) in votes.iter_mut().enumerate() {
        for x in 0..inst.num_factors {
            let z = encode(inst.observe(s, x)?.as_slice())?;
            let found = leaders
                .iter()
                .position(|c| c.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() <= radius);
            let c = found.unwrap_or_else(|| {
                leaders.push(z);
                leaders.len() - 1
            });
            row.push(c);
        }
    }
    let mut agree = 0;
    let labels: Vec<usize> = votes
        .iter()
        .map(|v| {
            let mut counts = vec![0usize; leaders.len()];
            v.iter().for_each(|&c| counts[c] += 1);
            let best = (0..counts.len()).fold(0, |b, c| if counts[c] > counts[b] { c } else { b });
            agree += counts[best];
            best
        })
        .collect();
    let partition = Partition::from_labels(&labels);
    let report = check_partition_bound(&inst.core, &partition, t)?;
    let total = inst.core.num_states * inst.num_factors;
    Ok(LatentDiagnostic {
        radius,
        num_clusters: leaders.len(),
        consistency: agree as f64 / total as f64,
        partition,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bmdp::make_random_bmdp;

    #[test]
    fn oracle_encoder_gives_identity_partition() {
        let inst = make_random_bmdp(3, 4, 2, 2, 2, 3, 10).unwrap();
        let oracle = |o: &[f64]| {
            let (s, _) = inst.decode(&crate::bmdp::ObservationVec(o.to_vec()))?;
            Ok((0..4).map(|j| f64::from(j == s)).collect())
        };
        let d = latent_partition(&inst, 2, 0.1, oracle).unwrap();
        assert_eq!(d.partition, Partition::identity(4));
        assert_eq!(d.consistency, 1.0);
        assert!(d.report.max_gap.abs() <= 1e-9);

        let constant = |_: &[f64]| Ok(vec![0.0]);
        let d = latent_partition(&inst, 2, 0.1, constant).unwrap();
        assert_eq!(d.num_clusters, 1);
        assert!(d.report.state_gaps.iter().all(|&g| g >= -1e-9));
    }
}
