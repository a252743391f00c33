//! Inverts the composite noise map on measured probability tables:
//! photon-loss renormalization first, then per-qubit linear inversion,
//! yielding error-mitigated lossless tables plus bookkeeping about what the
//! inversion produced.
//!
//! At finite shot counts the linear inversion legitimately drives some
//! entries negative. Those signed quasi-probabilities are kept (clipping
//! them would bias every downstream estimator); their total magnitude is
//! surfaced as `negativity`.

use crate::error::{Error, Result};
use crate::noise::{self, LossyProbTable, Mat2, NoiseParams};
use crate::povm::ProbTable;

/// An error-mitigated table plus diagnostics. `mitigated` follows the
/// lossless convention (every group carries algebraic mass (2/K)^n) but may
/// hold negative entries at finite samples.
#[derive(Clone, Debug)]
pub struct MitigationReport {
    pub mitigated: ProbTable,
    /// Basis groups that held no data and were filled with the uniform
    /// conditional.
    pub empty_group_count: usize,
    /// Total magnitude of negative quasi-probability in the output.
    pub negativity: f64,
    /// Worst 1-norm condition number among the per-basis transitions.
    pub condition: f64,
}

fn inverse_gammas(params: &NoiseParams) -> Result<(Vec<Mat2>, f64)> {
    let mut inverses = Vec::with_capacity(params.half_k());
    let mut condition = 0.0f64;
    for (i, basis) in params.bases.iter().enumerate() {
        let gamma = noise::local_gamma(params, i);
        let det = noise::mat2_det(&gamma);
        if det.abs() <= 1e-6 {
            return Err(Error::SingularBasis {
                basis: basis.label.clone(),
                det: det.abs(),
            });
        }
        let inv = noise::mat2_inv(&gamma).expect("determinant checked above");
        let norm1 = |m: &Mat2| {
            (m[0][0].abs() + m[1][0].abs()).max(m[0][1].abs() + m[1][1].abs())
        };
        condition = condition.max(norm1(&gamma) * norm1(&inv));
        inverses.push(inv);
    }
    Ok((inverses, condition))
}

/// Undoes the photon-loss renormalization: divides each conditional by its
/// survival weight, renormalizes within the group, and restores the exact
/// group prior (2/K)^n. Empty groups are rejected here; [`mitigate`] is the
/// entry point that knows how to fill them.
pub fn invert_photon_loss(table: &LossyProbTable, params: &NoiseParams) -> Result<ProbTable> {
    if table.half_k() != params.half_k() {
        return Err(Error::DimensionMismatch(format!(
            "table with {} bases vs noise with {}",
            table.half_k(),
            params.half_k()
        )));
    }
    let n = table.num_qubits();
    let dim = 1usize << n;
    let mut out = ProbTable::zeroed(n, table.half_k())?;
    let prior = out.group_prior();
    for g in 0..table.num_groups() {
        let digits = table.basis_digits(g);
        let cond = table.conditional(g).ok_or_else(|| Error::DegenerateGroup {
            group: format!("{digits:?}"),
        })?;
        let mut rescaled = vec![0.0; dim];
        let mut total = 0.0;
        for bits in 0..dim {
            let w = noise::survival_weight(params, &digits, bits);
            if w <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "survival weight vanished for group {digits:?}, outcome {bits:b}"
                )));
            }
            let k = cond[bits] / w;
            rescaled[bits] = k;
            total += k;
        }
        if total <= 0.0 {
            return Err(Error::DegenerateGroup {
                group: format!("{digits:?}"),
            });
        }
        let group = out.group_mut(g);
        for bits in 0..dim {
            group[bits] = rescaled[bits] / total * prior;
        }
    }
    Ok(out)
}

/// Applies the inverse linear transition within every basis group. The
/// inverse blocks have unit column sums, so group masses stay at the exact
/// prior; entries pushed below zero are kept and tallied into `negativity`.
pub fn invert_linear(table: &ProbTable, params: &NoiseParams) -> Result<MitigationReport> {
    if table.half_k() != params.half_k() {
        return Err(Error::DimensionMismatch(format!(
            "table with {} bases vs noise with {}",
            table.half_k(),
            params.half_k()
        )));
    }
    let (inverses, condition) = inverse_gammas(params)?;
    let n = table.num_qubits();
    let mut out = table.clone();
    let mut negativity = 0.0;
    for g in 0..out.num_groups() {
        let digits = out.basis_digits(g);
        let group = out.group_mut(g);
        for (q, &digit) in digits.iter().enumerate() {
            noise::apply_site_matrix(group, n, q, &inverses[digit as usize]);
        }
        for v in group.iter() {
            if *v < 0.0 {
                negativity -= *v;
            }
        }
    }
    Ok(MitigationReport {
        mitigated: out,
        empty_group_count: 0,
        negativity,
        condition,
    })
}

/// Full mitigation pipeline: loss inversion, then linear inversion. Basis
/// groups with no data receive the uniform conditional (what the maximally
/// mixed state would produce) and are counted rather than silently imputed.
pub fn mitigate(table: &LossyProbTable, params: &NoiseParams) -> Result<MitigationReport> {
    if table.half_k() != params.half_k() {
        return Err(Error::DimensionMismatch(format!(
            "table with {} bases vs noise with {}",
            table.half_k(),
            params.half_k()
        )));
    }
    let n = table.num_qubits();
    let dim = 1usize << n;
    let empty_group_count = table.empty_group_count();

    // run the two inversions on the populated groups only
    let populated: Vec<usize> = (0..table.num_groups())
        .filter(|&g| table.conditional(g).is_some())
        .collect();
    if populated.is_empty() {
        return Err(Error::NoSurvivingShots);
    }
    let (inverses, condition) = inverse_gammas(params)?;
    let mut out = ProbTable::zeroed(n, table.half_k())?;
    let prior = out.group_prior();
    let mut negativity = 0.0;
    for g in 0..table.num_groups() {
        let digits = table.basis_digits(g);
        let group = out.group_mut(g);
        let cond = match table.conditional(g) {
            Some(c) => c,
            None => {
                let uniform = prior / dim as f64;
                group.iter_mut().for_each(|v| *v = uniform);
                continue;
            }
        };
        // loss inversion on the conditional
        let mut total = 0.0;
        for bits in 0..dim {
            let w = noise::survival_weight(params, &digits, bits);
            if w <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "survival weight vanished for group {digits:?}, outcome {bits:b}"
                )));
            }
            group[bits] = cond[bits] / w;
            total += group[bits];
        }
        if total <= 0.0 {
            return Err(Error::DegenerateGroup {
                group: format!("{digits:?}"),
            });
        }
        for v in group.iter_mut() {
            *v *= prior / total;
        }
        // linear inversion
        for (q, &digit) in digits.iter().enumerate() {
            noise::apply_site_matrix(group, n, q, &inverses[digit as usize]);
        }
        for v in group.iter() {
            if *v < 0.0 {
                negativity -= *v;
            }
        }
    }
    Ok(MitigationReport {
        mitigated: out,
        empty_group_count,
        negativity,
        condition,
    })
}
