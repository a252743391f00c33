//! State-property estimators over measured or mitigated probability data:
//! classical-shadow fidelity, Hamming-distance subsystem purity, and a
//! seeded experiment harness with repetition statistics.

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::emulator::{self, ShotSet};
use crate::error::{Error, Result};
use crate::mitigate;
use crate::noise::{self, NoiseParams};
use crate::povm::{self, build_povm, Design, Povm, ProbTable};
use crate::qcore::{self, StateDescriptor};

fn apply_site_complex(v: &mut [Complex64], n: usize, q: usize, m: &Array2<Complex64>) {
    let stride = 1usize << (n - 1 - q);
    let mut base = 0;
    while base < v.len() {
        for offset in 0..stride {
            let i0 = base + offset;
            let i1 = i0 + stride;
            let (a, b) = (v[i0], v[i1]);
            v[i0] = m[(0, 0)] * a + m[(0, 1)] * b;
            v[i1] = m[(1, 0)] * a + m[(1, 1)] * b;
        }
        base += 2 * stride;
    }
}

/// <t| (x)_q S_(i_q,b_q) |t> for one outcome, where S = 3|phi><phi| - I.
fn shadow_overlap(
    target: &[Complex64],
    factors: &[[Array2<Complex64>; 2]],
    digits: &[u8],
    bits: usize,
    scratch: &mut Vec<Complex64>,
) -> f64 {
    let n = digits.len();
    scratch.clear();
    scratch.extend_from_slice(target);
    for (q, &digit) in digits.iter().enumerate() {
        let bit = (bits >> (n - 1 - q)) & 1;
        apply_site_complex(scratch, n, q, &factors[digit as usize][bit]);
    }
    target
        .iter()
        .zip(scratch.iter())
        .map(|(t, v)| (t.conj() * v).re)
        .sum()
}

fn shadow_factors(povm: &Povm) -> Vec<[Array2<Complex64>; 2]> {
    (0..povm.half_k())
        .map(|i| {
            [
                povm::shadow_from_outcome(povm, &[(i, 0)])
                    .expect("valid port")
                    .matrix()
                    .clone(),
                povm::shadow_from_outcome(povm, &[(i, 1)])
                    .expect("valid port")
                    .matrix()
                    .clone(),
            ]
        })
        .collect()
}

/// Probability-weighted classical-shadow fidelity
/// `sum_(i,b) P(i,b) <t| (x)_q (3|phi><phi| - I) |t>` against a pure target.
/// The table must follow the lossless convention.
pub fn shadow_fidelity(table: &ProbTable, povm: &Povm, target: &StateDescriptor) -> Result<f64> {
    if target.num_qubits() != table.num_qubits() {
        return Err(Error::DimensionMismatch(format!(
            "target on {} qubits vs table on {}",
            target.num_qubits(),
            table.num_qubits()
        )));
    }
    if povm.half_k() != table.half_k() {
        return Err(Error::DimensionMismatch(
            "table and POVM disagree on basis count".into(),
        ));
    }
    let amps = target
        .amplitudes()
        .ok_or_else(|| Error::InvalidArgument("fidelity target must be pure".into()))?;
    let target_vec: Vec<Complex64> = amps.to_vec();
    let factors = shadow_factors(povm);
    let dim = 1usize << table.num_qubits();
    let mut scratch = Vec::with_capacity(dim);
    let mut acc = 0.0;
    for g in 0..table.num_groups() {
        let digits = table.basis_digits(g);
        for bits in 0..dim {
            // signed entries from mitigation must contribute
            let p = table.raw(g, bits);
            if p == 0.0 {
                continue;
            }
            acc += p * shadow_overlap(&target_vec, &factors, &digits, bits, &mut scratch);
        }
    }
    Ok(acc)
}

/// Per-shot classical-shadow fidelity: the average of `<t|rho_hat_m|t>` over
/// all surviving shots in the set.
pub fn shadow_fidelity_sampled(
    shots: &ShotSet,
    povm: &Povm,
    target: &StateDescriptor,
) -> Result<f64> {
    if target.num_qubits() != shots.n {
        return Err(Error::DimensionMismatch(format!(
            "target on {} qubits vs shots on {}",
            target.num_qubits(),
            shots.n
        )));
    }
    let amps = target
        .amplitudes()
        .ok_or_else(|| Error::InvalidArgument("fidelity target must be pure".into()))?;
    if shots.total_survived() == 0 {
        return Err(Error::NoSurvivingShots);
    }
    let target_vec: Vec<Complex64> = amps.to_vec();
    let factors = shadow_factors(povm);
    let mut scratch = Vec::with_capacity(target_vec.len());
    let mut acc = 0.0;
    let mut count = 0u64;
    for rep in &shots.reps {
        for shot in &rep.shots {
            let digits = emulator::decode_digits(shot.group, shots.n, shots.half_k());
            acc += shadow_overlap(
                &target_vec,
                &factors,
                &digits,
                shot.bits as usize,
                &mut scratch,
            );
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

fn checked_subsystem(subsystem: &[usize], n: usize) -> Result<Vec<usize>> {
    let mut subsystem: Vec<usize> = subsystem.to_vec();
    subsystem.sort_unstable();
    subsystem.dedup();
    if subsystem.is_empty() {
        return Err(Error::InvalidArgument("empty subsystem".into()));
    }
    if *subsystem.last().unwrap() >= n {
        return Err(Error::InvalidArgument(format!(
            "subsystem index {} out of range for {n} qubits",
            subsystem.last().unwrap()
        )));
    }
    Ok(subsystem)
}

/// Pair-correlation sum `sum_(b,b') (-2)^(-D[b,b']) c(b) c(b')` for one
/// conditional distribution.
fn hamming_pair_sum(cond: &[f64]) -> f64 {
    let mut acc = 0.0;
    for b in 0..cond.len() {
        if cond[b] == 0.0 {
            continue;
        }
        for b2 in 0..cond.len() {
            if cond[b2] == 0.0 {
                continue;
            }
            let d = ((b ^ b2) as u32).count_ones() as i32;
            acc += (-0.5f64).powi(d) * cond[b] * cond[b2];
        }
    }
    acc
}

/// Subsystem purity from a lossless probability table: marginalizes onto the
/// subsystem, then averages `(-2)^(-Hamming distance)` pair correlations of
/// the per-basis conditionals and scales by 2^|subsystem|.
pub fn hamming_purity(table: &ProbTable, subsystem: &[usize]) -> Result<f64> {
    let n = table.num_qubits();
    let subsystem = checked_subsystem(subsystem, n)?;
    let ns = subsystem.len();
    let half_k = table.half_k();
    let sub_groups = half_k.pow(ns as u32);
    let sub_dim = 1usize << ns;
    let mut marginal = vec![vec![0.0; sub_dim]; sub_groups];
    for g in 0..table.num_groups() {
        let digits = table.basis_digits(g);
        let sg = subsystem
            .iter()
            .fold(0usize, |acc, &q| acc * half_k + digits[q] as usize);
        for bits in 0..(1usize << n) {
            // signed entries from mitigation must contribute
            let p = table.raw(g, bits);
            if p == 0.0 {
                continue;
            }
            let bs = subsystem
                .iter()
                .fold(0usize, |acc, &q| (acc << 1) | ((bits >> (n - 1 - q)) & 1));
            marginal[sg][bs] += p;
        }
    }
    let mut total = 0.0;
    for group in &mut marginal {
        let mass: f64 = group.iter().sum();
        if mass <= 0.0 {
            return Err(Error::DegenerateGroup {
                group: "marginal basis group without mass".into(),
            });
        }
        for v in group.iter_mut() {
            *v /= mass;
        }
        total += hamming_pair_sum(group);
    }
    Ok((1usize << ns) as f64 * total / sub_groups as f64)
}

/// Subsystem purity directly from shot records, as a U-statistic: within
/// each subsystem basis group holding m >= 2 shots, `(-2)^(-D)` is averaged
/// over ordered pairs of distinct shots; groups are combined by unweighted
/// mean and scaled by 2^|subsystem|.
pub fn hamming_purity_sampled(shots: &ShotSet, subsystem: &[usize]) -> Result<f64> {
    let n = shots.n;
    let subsystem = checked_subsystem(subsystem, n)?;
    let ns = subsystem.len();
    let half_k = shots.half_k();
    let sub_groups = half_k.pow(ns as u32);
    let sub_dim = 1usize << ns;
    let mut counts = vec![0u64; sub_groups * sub_dim];
    for rep in &shots.reps {
        for shot in &rep.shots {
            let digits = emulator::decode_digits(shot.group, n, half_k);
            let sg = subsystem
                .iter()
                .fold(0usize, |acc, &q| acc * half_k + digits[q] as usize);
            let bs = subsystem.iter().fold(0usize, |acc, &q| {
                (acc << 1) | ((shot.bits as usize >> (n - 1 - q)) & 1)
            });
            counts[sg * sub_dim + bs] += 1;
        }
    }
    let mut group_values = Vec::new();
    for sg in 0..sub_groups {
        let slice = &counts[sg * sub_dim..(sg + 1) * sub_dim];
        let m: u64 = slice.iter().sum();
        if m < 2 {
            continue;
        }
        let mut pair_sum = 0.0;
        for b in 0..sub_dim {
            if slice[b] == 0 {
                continue;
            }
            for b2 in 0..sub_dim {
                if slice[b2] == 0 {
                    continue;
                }
                let d = ((b ^ b2) as u32).count_ones() as i32;
                pair_sum += (-0.5f64).powi(d) * (slice[b] * slice[b2]) as f64;
            }
        }
        // remove the m self-pairs (distance 0), then average ordered pairs
        let m = m as f64;
        group_values.push((pair_sum - m) / (m * (m - 1.0)));
    }
    if group_values.is_empty() {
        return Err(Error::InvalidArgument(
            "no subsystem basis group holds at least 2 shots".into(),
        ));
    }
    let mean = group_values.iter().sum::<f64>() / group_values.len() as f64;
    Ok(sub_dim as f64 * mean)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Fidelity,
    Purity,
}

/// A fully resolved experiment: one state, one noise scale, one estimator.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub state: StateDescriptor,
    pub design: Design,
    pub noise: NoiseParams,
    pub h: f64,
    pub shots: u64,
    pub reps: usize,
    pub seed: u64,
    pub estimator: Estimator,
    pub subsystem: Option<Vec<usize>>,
    pub mitigate: bool,
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Mean number of empty basis groups per repetition.
    pub empty_groups_mean: f64,
    /// Mean clipped negative mass per repetition.
    pub negativity_mean: f64,
    /// Worst per-basis transition condition number (1 when unmitigated).
    pub condition: f64,
}

/// Estimates plus repetition statistics for one experiment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimator: Estimator,
    pub design: Design,
    pub n: usize,
    pub shots: u64,
    pub reps: usize,
    pub seed: u64,
    pub h: f64,
    pub mitigated: bool,
    pub subsystem: Option<Vec<usize>>,
    pub mean: f64,
    /// Sample standard deviation over repetitions (ddof = 1).
    pub std: f64,
    pub values: Vec<f64>,
    pub diagnostics: Diagnostics,
}

/// Runs one experiment: sample, build per-repetition empirical tables,
/// optionally mitigate, estimate, and aggregate. Deterministic for a fixed
/// config regardless of thread count.
pub fn run_experiment(config: &ExperimentConfig) -> Result<EstimateReport> {
    if config.reps == 0 {
        return Err(Error::InvalidArgument("reps must be positive".into()));
    }
    let povm = build_povm(config.design);
    let params = noise::scale_noise(&config.noise, config.h);
    if params.design != config.design {
        return Err(Error::DimensionMismatch(
            "noise design differs from experiment design".into(),
        ));
    }
    let subsystem = match config.estimator {
        Estimator::Purity => Some(checked_subsystem(
            config
                .subsystem
                .as_deref()
                .ok_or_else(|| Error::InvalidArgument("purity needs a subsystem".into()))?,
            config.state.num_qubits(),
        )?),
        Estimator::Fidelity => None,
    };
    if config.estimator == Estimator::Fidelity && !config.state.is_pure() {
        return Err(Error::InvalidArgument(
            "fidelity estimation targets the prepared pure state".into(),
        ));
    }

    // `shots` counts recorded outcomes, matching how detection records
    // accumulate: lost photons are tallied separately and do not shrink the
    // data set
    let shot_set = emulator::sample_outcomes(
        &config.state,
        &povm,
        &params,
        config.shots,
        config.reps,
        config.seed,
    )?;

    // raw fidelity passes the empirical table through a zero-noise
    // mitigation, which only restores the exact group priors; raw purity
    // uses the pair U-statistic directly on the shot records
    let zero_noise = NoiseParams::zero(config.design);
    let per_rep: Vec<Result<(f64, Diagnostics)>> = (0..config.reps)
        .into_par_iter()
        .map(|r| {
            let rep_set = shot_set.single_rep(r);
            let outcome = match (config.estimator, config.mitigate) {
                (Estimator::Purity, false) => {
                    hamming_purity_sampled(&rep_set, subsystem.as_ref().unwrap())
                        .map(|v| (v, Diagnostics::default()))
                }
                (est, mit) => {
                    let noise = if mit { &params } else { &zero_noise };
                    emulator::empirical_table(&rep_set)
                        .and_then(|table| mitigate::mitigate(&table, noise))
                        .and_then(|report| {
                            let diag = Diagnostics {
                                empty_groups_mean: report.empty_group_count as f64,
                                negativity_mean: report.negativity,
                                condition: report.condition,
                            };
                            let value = match est {
                                Estimator::Fidelity => {
                                    shadow_fidelity(&report.mitigated, &povm, &config.state)?
                                }
                                Estimator::Purity => {
                                    hamming_purity(&report.mitigated, subsystem.as_ref().unwrap())?
                                }
                            };
                            Ok((value, diag))
                        })
                }
            };
            outcome.map_err(|e| Error::InvalidArgument(format!("repetition {r}: {e}")))
        })
        .collect();

    let mut values = Vec::with_capacity(config.reps);
    let mut diag_acc = Diagnostics::default();
    for item in per_rep {
        let (v, d) = item?;
        values.push(v);
        diag_acc.empty_groups_mean += d.empty_groups_mean;
        diag_acc.negativity_mean += d.negativity_mean;
        diag_acc.condition = diag_acc.condition.max(d.condition);
    }
    let reps = values.len() as f64;
    diag_acc.empty_groups_mean /= reps;
    diag_acc.negativity_mean /= reps;
    if !config.mitigate {
        diag_acc.condition = 1.0;
    }
    let mean = values.iter().sum::<f64>() / reps;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1.0)).sqrt()
    } else {
        0.0
    };

    Ok(EstimateReport {
        estimator: config.estimator,
        design: config.design,
        n: config.state.num_qubits(),
        shots: config.shots,
        reps: config.reps,
        seed: config.seed,
        h: config.h,
        mitigated: config.mitigate,
        subsystem,
        mean,
        std,
        values,
        diagnostics: diag_acc,
    })
}

// ---------------------------------------------------------------------------
// experiment file schema

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WArg {
    One(usize),
    Sweep(Vec<usize>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateSpec {
    W { w: WArg },
    Amplitudes { amplitudes: Vec<[f64; 2]> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseSource {
    Path(String),
    Inline(NoiseParams),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScaleSpec {
    One(f64),
    Sweep(Vec<f64>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MitigateSpec {
    Flag(bool),
    Keyword(String),
}

fn default_seed() -> u64 {
    42
}

/// The experiment file schema. A single file may sweep the W-state width,
/// the noise scale h, the subsystem size, and both mitigation settings;
/// [`ExperimentSpec::expand`] yields one resolved config per combination.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub state: StateSpec,
    pub design: Design,
    #[serde(default)]
    pub noise: Option<NoiseSource>,
    #[serde(default)]
    pub h: Option<ScaleSpec>,
    pub shots: u64,
    pub reps: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub estimator: Estimator,
    #[serde(default)]
    pub subsystem: Option<Vec<usize>>,
    #[serde(default)]
    pub subsystem_sizes: Option<Vec<usize>>,
    pub mitigate: MitigateSpec,
}

/// One resolved experiment with a stable key for file naming.
#[derive(Clone, Debug)]
pub struct ExperimentVariant {
    pub key: String,
    pub config: ExperimentConfig,
}

impl ExperimentSpec {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Expands sweeps into resolved configs. `noise_dir` anchors a relative
    /// noise file path.
    pub fn expand(&self, noise_dir: &Path) -> Result<Vec<ExperimentVariant>> {
        let noise = match &self.noise {
            None => NoiseParams::zero(self.design),
            Some(NoiseSource::Inline(p)) => {
                NoiseParams::new(p.design, p.bases.clone())?
            }
            Some(NoiseSource::Path(rel)) => {
                let path = noise_dir.join(rel);
                NoiseParams::from_json_str(&std::fs::read_to_string(&path).map_err(|e| {
                    Error::DataFormat(format!("noise file {}: {e}", path.display()))
                })?)?
            }
        };
        if noise.design != self.design {
            return Err(Error::InvalidArgument(format!(
                "noise is for design {}, experiment uses {}",
                noise.design, self.design
            )));
        }

        let states: Vec<(Option<usize>, StateDescriptor)> = match &self.state {
            StateSpec::W { w: WArg::One(n) } => vec![(None, qcore::w_state(*n)?)],
            StateSpec::W { w: WArg::Sweep(ns) } => {
                if ns.is_empty() {
                    return Err(Error::InvalidArgument("empty w sweep".into()));
                }
                ns.iter()
                    .map(|&n| Ok((Some(n), qcore::w_state(n)?)))
                    .collect::<Result<_>>()?
            }
            StateSpec::Amplitudes { amplitudes } => {
                let amps = amplitudes
                    .iter()
                    .map(|[re, im]| Complex64::new(*re, *im))
                    .collect();
                vec![(None, StateDescriptor::pure_normalized(amps)?)]
            }
        };

        let scales: Vec<(bool, f64)> = match &self.h {
            None => vec![(false, 1.0)],
            Some(ScaleSpec::One(h)) => vec![(false, *h)],
            Some(ScaleSpec::Sweep(hs)) => {
                if hs.is_empty() {
                    return Err(Error::InvalidArgument("empty h sweep".into()));
                }
                hs.iter().map(|&h| (true, h)).collect()
            }
        };
        for (_, h) in &scales {
            if *h < 0.0 {
                return Err(Error::InvalidArgument(format!("negative scale h = {h}")));
            }
        }

        let mitigations: Vec<bool> = match &self.mitigate {
            MitigateSpec::Flag(b) => vec![*b],
            MitigateSpec::Keyword(k) if k == "both" => vec![true, false],
            MitigateSpec::Keyword(k) => {
                return Err(Error::InvalidArgument(format!(
                    "mitigate must be true, false, or \"both\", got `{k}`"
                )))
            }
        };

        let mut variants = Vec::new();
        for (wn, state) in &states {
            let subsystems: Vec<(Option<usize>, Option<Vec<usize>>)> = match self.estimator {
                Estimator::Fidelity => vec![(None, None)],
                Estimator::Purity => {
                    if let Some(sizes) = &self.subsystem_sizes {
                        if sizes.is_empty() {
                            return Err(Error::InvalidArgument("empty subsystem sweep".into()));
                        }
                        sizes
                            .iter()
                            .map(|&s| {
                                if s == 0 || s > state.num_qubits() {
                                    return Err(Error::InvalidArgument(format!(
                                        "subsystem size {s} out of range"
                                    )));
                                }
                                Ok((Some(s), Some((0..s).collect())))
                            })
                            .collect::<Result<_>>()?
                    } else {
                        let sub = self.subsystem.clone().ok_or_else(|| {
                            Error::InvalidArgument(
                                "purity needs `subsystem` or `subsystem_sizes`".into(),
                            )
                        })?;
                        vec![(None, Some(sub))]
                    }
                }
            };
            for (swept_h, h) in &scales {
                for (size, subsystem) in &subsystems {
                    for &mit in &mitigations {
                        let mut key = String::new();
                        if let Some(wn) = wn {
                            key.push_str(&format!("w{wn}_"));
                        }
                        if *swept_h {
                            key.push_str(&format!("h{h:.2}_"));
                        }
                        if let Some(size) = size {
                            key.push_str(&format!("s{size}_"));
                        }
                        key.push_str(if mit { "mit" } else { "raw" });
                        variants.push(ExperimentVariant {
                            key,
                            config: ExperimentConfig {
                                state: state.clone(),
                                design: self.design,
                                noise: noise.clone(),
                                h: *h,
                                shots: self.shots,
                                reps: self.reps,
                                seed: self.seed,
                                estimator: self.estimator,
                                subsystem: subsystem.clone(),
                                mitigate: mit,
                            },
                        });
                    }
                }
            }
        }
        Ok(variants)
    }
}
