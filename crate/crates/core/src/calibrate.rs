//! Noise-parameter calibration: recovers the noise vector from calibration
//! count tables by maximizing summed Bhattacharyya fidelity between observed
//! and model-predicted port distributions, and validates the fitted model
//! against swept single-qubit states.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emulator::{probe_state, CountTable, PortOperatorSet};
use crate::error::{Error, Result};
use crate::noise::{self, NoiseParams};
use crate::povm::{born_table, build_povm, Design, ProbTable};
use crate::qcore::StateDescriptor;

/// Bhattacharyya fidelity (sum_i sqrt(p_i q_i))^2 between two distributions.
pub fn bhattacharyya_fidelity(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch(format!(
            "distributions of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    for dist in [p, q] {
        let mut sum = 0.0;
        for &v in dist {
            if v < -1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "distribution entry {v} is negative"
                )));
            }
            sum += v.max(0.0);
        }
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "distribution sums to {sum}, expected 1"
            )));
        }
    }
    let root_sum: f64 = p
        .iter()
        .zip(q)
        .map(|(&a, &b)| (a.max(0.0) * b.max(0.0)).sqrt())
        .sum();
    Ok((root_sum * root_sum).clamp(0.0, 1.0))
}

/// Distribution over the K ports plus a trailing lost entry predicted by the
/// noise model for a single-qubit probe.
pub fn predict_distribution(params: &NoiseParams, probe: &StateDescriptor) -> Result<Vec<f64>> {
    if probe.num_qubits() != 1 {
        return Err(Error::InvalidArgument(
            "prediction takes a single-qubit probe".into(),
        ));
    }
    let povm = build_povm(params.design);
    let table = born_table(probe, &povm)?;
    predict_from_table(&table, params)
}

/// Same as [`predict_distribution`] but reusing a precomputed noise-free
/// table (the table does not depend on the noise vector).
fn predict_from_table(table: &ProbTable, params: &NoiseParams) -> Result<Vec<f64>> {
    let lossy = noise::apply_composite(table, params)?;
    let prior = table.group_prior();
    let mut out = Vec::with_capacity(2 * table.half_k() + 1);
    let mut total = 0.0;
    for g in 0..lossy.num_groups() {
        let cond = lossy.conditional(g).expect("exact table");
        let s = lossy.survival(g);
        for &c in cond {
            let p = prior * s * c;
            total += p;
            out.push(p);
        }
    }
    out.push((1.0 - total).max(0.0));
    Ok(out)
}

/// Optimizer configuration for [`calibrate`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CalibrateConfig {
    /// Latin-hypercube start count.
    pub starts: usize,
    /// Objective-evaluation budget per simplex run.
    pub max_evals: usize,
    /// Simplex-diameter convergence threshold.
    pub tol: f64,
    pub seed: u64,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        Self {
            starts: 16,
            max_evals: 10_000,
            tol: 1e-9,
            seed: 42,
        }
    }
}

/// A calibration data set: probe states and their observed port-plus-lost
/// distributions.
#[derive(Clone, Debug)]
pub struct CalibrationProblem {
    pub design: Design,
    pub probes: Vec<(String, StateDescriptor)>,
    /// One distribution per probe over K ports + lost, in (basis, bit) port
    /// order.
    pub observed: Vec<Vec<f64>>,
    pub config: CalibrateConfig,
}

impl CalibrationProblem {
    pub fn new(
        design: Design,
        probes: Vec<(String, StateDescriptor)>,
        observed: Vec<Vec<f64>>,
        config: CalibrateConfig,
    ) -> Result<Self> {
        let k = design.ports();
        if probes.len() != observed.len() || probes.is_empty() {
            return Err(Error::InvalidArgument(
                "need one observed distribution per probe".into(),
            ));
        }
        // 4 * (K/2) parameters against C * (K/2) independent equations
        if probes.len() < 4 {
            return Err(Error::InvalidArgument(format!(
                "{} probes under-determine the {} noise parameters",
                probes.len(),
                2 * k
            )));
        }
        for (label, dist) in probes.iter().map(|(l, _)| l).zip(&observed) {
            if dist.len() != k + 1 {
                return Err(Error::DimensionMismatch(format!(
                    "probe {label}: distribution length {} != {}",
                    dist.len(),
                    k + 1
                )));
            }
            let sum: f64 = dist.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "probe {label}: observed distribution sums to {sum}"
                )));
            }
        }
        Ok(Self {
            design,
            probes,
            observed,
            config,
        })
    }

    /// Builds a problem from a count table, mapping count columns onto ports
    /// by label and rows onto probe states by their input label. Probe
    /// labels may be the six standard polarizations or any port label of the
    /// design (the default probe set for the 8- and 12-port layouts).
    pub fn from_count_table(
        design: Design,
        table: &CountTable,
        config: CalibrateConfig,
    ) -> Result<Self> {
        table.validate()?;
        let povm = build_povm(design);
        let column_for_port: Vec<usize> = (0..povm.half_k())
            .flat_map(|i| [(i, 0u8), (i, 1u8)])
            .map(|(i, b)| {
                let label = povm.port_label(i, b);
                table
                    .port_labels
                    .iter()
                    .position(|c| c == label)
                    .ok_or_else(|| {
                        Error::DataFormat(format!("count table lacks a column for port {label}"))
                    })
            })
            .collect::<Result<_>>()?;
        let resolve_probe = |label: &str| -> Result<StateDescriptor> {
            if let Ok(state) = probe_state(label) {
                return Ok(state);
            }
            povm.iter_ports()
                .find(|(_, _, port)| port.label == label)
                .map(|(_, _, port)| StateDescriptor::pure(port.ket.to_vec()))
                .transpose()?
                .ok_or_else(|| {
                    Error::DataFormat(format!("unknown probe `{label}` for design {design}"))
                })
        };
        let mut probes = Vec::new();
        let mut observed = Vec::new();
        for row in &table.rows {
            let state = resolve_probe(&row.input)?;
            let inj = row.injected as f64;
            if row.injected == 0 {
                return Err(Error::DataFormat(format!(
                    "probe {}: zero injected photons",
                    row.input
                )));
            }
            let mut dist: Vec<f64> = column_for_port
                .iter()
                .map(|&c| row.counts[c] as f64 / inj)
                .collect();
            dist.push(row.lost() as f64 / inj);
            probes.push((row.input.clone(), state));
            observed.push(dist);
        }
        Self::new(design, probes, observed, config)
    }
}

/// The fitted noise vector plus optimizer diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub lambda_opt: NoiseParams,
    /// Summed Bhattacharyya fidelity at the optimum (at most the probe count).
    pub objective_value: f64,
    pub per_probe_fidelity: Vec<f64>,
    pub starts: usize,
    pub evaluations: usize,
    pub converged: bool,
}

mod simplex {
    //! Bounded Nelder-Mead minimization with reflection 1, expansion 2,
    //! contraction 0.5, and shrink 0.5; candidates are projected onto the
    //! box.

    pub struct Outcome {
        pub x: Vec<f64>,
        pub value: f64,
        pub evals: usize,
        pub iterations: usize,
        pub converged: bool,
    }

    pub fn minimize<F: FnMut(&[f64]) -> f64>(
        mut f: F,
        x0: &[f64],
        step: f64,
        lo: f64,
        hi: f64,
        max_evals: usize,
        tol: f64,
    ) -> Outcome {
        const ALPHA: f64 = 1.0; // reflection
        const GAMMA: f64 = 2.0; // expansion
        const BETA: f64 = 0.5; // contraction
        const SIGMA: f64 = 0.5; // shrink

        let dim = x0.len();
        let project = |x: &mut [f64]| {
            for v in x.iter_mut() {
                *v = v.clamp(lo, hi);
            }
        };
        let mut evals = 0usize;
        let mut eval = |x: &[f64], evals: &mut usize| {
            *evals += 1;
            f(x)
        };

        let mut verts: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
        let mut base = x0.to_vec();
        project(&mut base);
        let v0 = eval(&base, &mut evals);
        verts.push((base.clone(), v0));
        for i in 0..dim {
            let mut x = base.clone();
            // step towards the interior when pinned at the upper bound
            x[i] = if x[i] + step <= hi { x[i] + step } else { x[i] - step };
            project(&mut x);
            let v = eval(&x, &mut evals);
            verts.push((x, v));
        }

        let mut converged = false;
        let mut iterations = 0usize;
        while evals < max_evals {
            iterations += 1;
            verts.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
            let diameter = verts[1..]
                .iter()
                .map(|(x, _)| {
                    x.iter()
                        .zip(&verts[0].0)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0f64, f64::max)
                })
                .fold(0.0f64, f64::max);
            if diameter < tol {
                converged = true;
                break;
            }

            let worst = verts.len() - 1;
            let mut centroid = vec![0.0; dim];
            for (x, _) in &verts[..worst] {
                for (c, v) in centroid.iter_mut().zip(x) {
                    *c += v;
                }
            }
            for c in &mut centroid {
                *c /= worst as f64;
            }

            let mut reflected: Vec<f64> = centroid
                .iter()
                .zip(&verts[worst].0)
                .map(|(c, w)| c + ALPHA * (c - w))
                .collect();
            project(&mut reflected);
            let fr = eval(&reflected, &mut evals);

            if fr < verts[0].1 {
                let mut expanded: Vec<f64> = centroid
                    .iter()
                    .zip(&reflected)
                    .map(|(c, r)| c + GAMMA * (r - c))
                    .collect();
                project(&mut expanded);
                let fe = eval(&expanded, &mut evals);
                verts[worst] = if fe < fr {
                    (expanded, fe)
                } else {
                    (reflected, fr)
                };
            } else if fr < verts[worst - 1].1 {
                verts[worst] = (reflected, fr);
            } else {
                let towards = if fr < verts[worst].1 {
                    &reflected
                } else {
                    &verts[worst].0
                };
                let mut contracted: Vec<f64> = centroid
                    .iter()
                    .zip(towards)
                    .map(|(c, t)| c + BETA * (t - c))
                    .collect();
                project(&mut contracted);
                let fc = eval(&contracted, &mut evals);
                if fc < verts[worst].1.min(fr) {
                    verts[worst] = (contracted, fc);
                } else {
                    let best = verts[0].0.clone();
                    for (x, v) in verts.iter_mut().skip(1) {
                        for (xi, bi) in x.iter_mut().zip(&best) {
                            *xi = bi + SIGMA * (*xi - bi);
                        }
                        project(x);
                        *v = eval(x, &mut evals);
                    }
                }
            }
        }
        verts.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let (x, value) = verts.swap_remove(0);
        Outcome {
            x,
            value,
            evals,
            iterations,
            converged,
        }
    }
}

/// Latin-hypercube start points over [lo, hi]^dim.
fn latin_hypercube(
    starts: usize,
    dim: usize,
    lo: f64,
    hi: f64,
    seed: u64,
) -> Vec<Vec<f64>> {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut points = vec![vec![0.0; dim]; starts];
    for d in 0..dim {
        let mut strata: Vec<usize> = (0..starts).collect();
        // Fisher-Yates
        for i in (1..starts).rev() {
            let j = rng.random_range(0..=i);
            strata.swap(i, j);
        }
        for (s, point) in points.iter_mut().enumerate() {
            let jitter: f64 = rng.random();
            point[d] = lo + (hi - lo) * (strata[s] as f64 + jitter) / starts as f64;
        }
    }
    points
}

/// Maximizes the summed Bhattacharyya fidelity over the noise box via
/// multi-start Nelder-Mead, followed by restart polishing of the best point.
/// Deterministic for a fixed problem and seed; ties between starts break
/// toward the lowest start index.
pub fn calibrate(problem: &CalibrationProblem) -> Result<CalibrationResult> {
    let design = problem.design;
    let povm = build_povm(design);
    let tables: Vec<ProbTable> = problem
        .probes
        .iter()
        .map(|(_, state)| born_table(state, &povm))
        .collect::<Result<_>>()?;
    let dim = 4 * design.half_k();

    let objective = |values: &[f64]| -> f64 {
        let params = match NoiseParams::unflatten(design, values) {
            Ok(p) => p,
            Err(_) => return f64::INFINITY,
        };
        let mut total = 0.0;
        for (table, observed) in tables.iter().zip(&problem.observed) {
            let predicted = match predict_from_table(table, &params) {
                Ok(p) => p,
                Err(_) => return f64::INFINITY,
            };
            match bhattacharyya_fidelity(observed, &predicted) {
                Ok(f) => total += f,
                Err(_) => return f64::INFINITY,
            }
        }
        -total
    };

    let cfg = &problem.config;
    let starts = latin_hypercube(cfg.starts.max(1), dim, 0.0, 0.8, cfg.seed);
    let outcomes: Vec<simplex::Outcome> = starts
        .par_iter()
        .map(|x0| simplex::minimize(objective, x0, 0.1, 0.0, 0.999, cfg.max_evals, cfg.tol))
        .collect();

    let mut best_idx = 0;
    for (i, o) in outcomes.iter().enumerate() {
        if o.value < outcomes[best_idx].value {
            best_idx = i;
        }
    }
    let mut evaluations: usize = outcomes.iter().map(|o| o.evals).sum();
    let mut converged = outcomes.iter().any(|o| o.converged);
    let mut best = outcomes[best_idx].x.clone();
    let mut best_value = outcomes[best_idx].value;

    // restart polishing: rebuild a fresh simplex of shrinking size around
    // the incumbent until a restart can no longer move the objective, which
    // is as converged as a collapsed simplex
    const STATIONARY_MARGIN: f64 = 1e-7;
    const MAX_POLISH_ROUNDS: usize = 16;
    let polish_steps = [0.05, 5e-3, 5e-4, 5e-5];
    for round in 0..MAX_POLISH_ROUNDS {
        let step = polish_steps[round.min(polish_steps.len() - 1)];
        let out = simplex::minimize(objective, &best, step, 0.0, 0.999, cfg.max_evals, cfg.tol);
        evaluations += out.evals;
        converged |= out.converged;
        let improvement = (best_value - out.value).max(0.0);
        if out.value < best_value {
            best = out.x;
            best_value = out.value;
        }
        if out.iterations >= 1 && improvement < STATIONARY_MARGIN * best_value.abs().max(1.0) {
            converged = true;
            break;
        }
    }

    let lambda_opt = NoiseParams::unflatten(design, &best)?;
    let per_probe_fidelity: Vec<f64> = tables
        .iter()
        .zip(&problem.observed)
        .map(|(table, observed)| {
            let predicted = predict_from_table(table, &lambda_opt)?;
            bhattacharyya_fidelity(observed, &predicted)
        })
        .collect::<Result<_>>()?;
    let result = CalibrationResult {
        lambda_opt,
        objective_value: -best_value,
        per_probe_fidelity,
        starts: cfg.starts,
        evaluations,
        converged,
    };
    if !converged {
        return Err(Error::NonConvergence {
            objective: result.objective_value,
            best: Box::new(result),
        });
    }
    Ok(result)
}

/// State family swept during model validation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepFamily {
    /// sin(theta)|H> + cos(theta)|V>
    Xz,
    /// sin(theta)|H> + i cos(theta)|V>
    Yz,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationPoint {
    pub theta: f64,
    pub family: SweepFamily,
    pub fidelity: f64,
}

fn sweep_state(family: SweepFamily, theta: f64) -> StateDescriptor {
    use num_complex::Complex64;
    let (s, c) = theta.sin_cos();
    let amps = match family {
        SweepFamily::Xz => vec![Complex64::new(s, 0.0), Complex64::new(c, 0.0)],
        SweepFamily::Yz => vec![Complex64::new(s, 0.0), Complex64::new(0.0, c)],
    };
    StateDescriptor::pure_normalized(amps).expect("unit amplitudes")
}

/// Sweeps theta over [0, 2pi) for both superposition families, comparing
/// the reference port operators against the fitted noise model with
/// Bhattacharyya fidelity. Returns the full curve.
pub fn validate_model(
    lambda: &NoiseParams,
    reference: &PortOperatorSet,
    sweep: usize,
) -> Result<Vec<ValidationPoint>> {
    if sweep < 2 {
        return Err(Error::InvalidArgument(
            "sweep needs at least 2 points".into(),
        ));
    }
    if reference.half_k() != lambda.half_k() {
        return Err(Error::DimensionMismatch(format!(
            "reference has {} gratings, noise has {} bases",
            reference.half_k(),
            lambda.half_k()
        )));
    }
    let mut points = Vec::with_capacity(2 * sweep);
    for family in [SweepFamily::Xz, SweepFamily::Yz] {
        for j in 0..sweep {
            let theta = 2.0 * std::f64::consts::PI * j as f64 / sweep as f64;
            let state = sweep_state(family, theta);
            let observed = reference.port_distribution(&state)?;
            let predicted = predict_distribution(lambda, &state)?;
            let fidelity = bhattacharyya_fidelity(&observed, &predicted)?;
            points.push(ValidationPoint {
                theta,
                family,
                fidelity,
            });
        }
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emulator::{fit_port_operators, TransmissionTable};
    use crate::noise::BasisNoise;
    use approx::assert_abs_diff_eq;

    fn reference_noise() -> NoiseParams {
        NoiseParams::new(
            Design::Octa6,
            vec![
                BasisNoise {
                    label: "z".into(),
                    p_bf: 0.012466,
                    p_ad: 0.00714,
                    p_pl: [0.223475, 0.144225],
                },
                BasisNoise {
                    label: "x".into(),
                    p_bf: 0.054692,
                    p_ad: 0.0,
                    p_pl: [0.275352, 0.162548],
                },
                BasisNoise {
                    label: "y".into(),
                    p_bf: 0.000383,
                    p_ad: 1.46e-5,
                    p_pl: [0.228934, 0.234566],
                },
            ],
        )
        .unwrap()
    }

    fn standard_probes() -> Vec<(String, StateDescriptor)> {
        crate::emulator::PROBE_LABELS
            .iter()
            .map(|l| (l.to_string(), probe_state(l).unwrap()))
            .collect()
    }

    fn synthetic_problem(truth: &NoiseParams, config: CalibrateConfig) -> CalibrationProblem {
        let probes = standard_probes();
        let observed = probes
            .iter()
            .map(|(_, state)| predict_distribution(truth, state).unwrap())
            .collect();
        CalibrationProblem::new(Design::Octa6, probes, observed, config).unwrap()
    }

    #[test]
    fn fidelity_examples() {
        assert_abs_diff_eq!(
            bhattacharyya_fidelity(&[0.3, 0.7], &[0.3, 0.7]).unwrap(),
            1.0,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            bhattacharyya_fidelity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(),
            0.0,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            bhattacharyya_fidelity(&[0.5, 0.5], &[0.9, 0.1]).unwrap(),
            0.8,
            epsilon = 1e-12
        );
        assert!(bhattacharyya_fidelity(&[0.5, 0.5], &[0.5, 0.5, 0.0]).is_err());
        assert!(bhattacharyya_fidelity(&[1.1, -0.1], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn fidelity_is_symmetric_and_discriminates() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let mut p: Vec<f64> = (0..5).map(|_| rng.random::<f64>() + 1e-3).collect();
            let mut q: Vec<f64> = (0..5).map(|_| rng.random::<f64>() + 1e-3).collect();
            let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
            p.iter_mut().for_each(|v| *v /= sp);
            q.iter_mut().for_each(|v| *v /= sq);
            let pq = bhattacharyya_fidelity(&p, &q).unwrap();
            let qp = bhattacharyya_fidelity(&q, &p).unwrap();
            assert_abs_diff_eq!(pq, qp, epsilon = 1e-12);
            assert!(pq <= 1.0);
            let pp = bhattacharyya_fidelity(&p, &p).unwrap();
            assert_abs_diff_eq!(pp, 1.0, epsilon = 1e-12);
            if p.iter().zip(&q).any(|(a, b)| (a - b).abs() > 1e-3) {
                assert!(pq < 1.0 - 1e-9);
            }
        }
    }

    #[test]
    fn predict_noise_free_ground_state() {
        let params = NoiseParams::zero(Design::Octa6);
        let h = probe_state("H").unwrap();
        let dist = predict_distribution(&params, &h).unwrap();
        let expect = [
            1.0 / 3.0,
            0.0,
            1.0 / 6.0,
            1.0 / 6.0,
            1.0 / 6.0,
            1.0 / 6.0,
            0.0,
        ];
        for (got, want) in dist.iter().zip(expect) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn predict_with_reference_noise_matches_device_counts_loosely() {
        let params = reference_noise();
        let h = probe_state("H").unwrap();
        let dist = predict_distribution(&params, &h).unwrap();
        let counts = [0.2552, 0.0035, 0.1203, 0.1343, 0.1289, 0.1291];
        for (got, want) in dist.iter().zip(counts) {
            assert!(
                (got - want).abs() < 8e-3,
                "predicted {got} vs device counts {want}"
            );
        }
        let fid = bhattacharyya_fidelity(
            &dist,
            &[
                0.2552,
                0.0035,
                0.1203,
                0.1343,
                0.1289,
                0.1291,
                1.0 - 0.7713,
            ],
        )
        .unwrap();
        assert!(fid > 0.999, "fidelity {fid}");
    }

    #[test]
    fn predict_maximally_mixed_pairs_relate_by_loss_only() {
        let params = reference_noise();
        let mixed = StateDescriptor::mixed(ndarray::Array2::from_shape_fn((2, 2), |(i, j)| {
            if i == j {
                num_complex::Complex64::new(0.5, 0.0)
            } else {
                num_complex::Complex64::new(0.0, 0.0)
            }
        }))
        .unwrap();
        let dist = predict_distribution(&params, &mixed).unwrap();
        // for I/2 each basis pair starts from (1/2, 1/2); the transitions are
        // stochastic so the pre-loss conditionals shift only via damping
        for (i, basis) in params.bases.iter().enumerate() {
            let gamma = noise::local_gamma(&params, i);
            let pre0 = 0.5 * (gamma[0][0] + gamma[0][1]);
            let pre1 = 0.5 * (gamma[1][0] + gamma[1][1]);
            let w0 = 1.0 - basis.p_pl[0];
            let w1 = 1.0 - basis.p_pl[1];
            let expect0 = pre0 * w0 / 3.0;
            let expect1 = pre1 * w1 / 3.0;
            assert_abs_diff_eq!(dist[2 * i], expect0, epsilon = 1e-12);
            assert_abs_diff_eq!(dist[2 * i + 1], expect1, epsilon = 1e-12);
        }
    }

    #[test]
    fn calibrate_zero_noise_recovers_zero() {
        let problem = synthetic_problem(
            &NoiseParams::zero(Design::Octa6),
            CalibrateConfig {
                starts: 8,
                ..CalibrateConfig::default()
            },
        );
        let result = calibrate(&problem).unwrap();
        assert_abs_diff_eq!(result.objective_value, 6.0, epsilon = 1e-6);
        for v in result.lambda_opt.flatten() {
            assert!(v.abs() < 1e-6, "recovered {v} instead of 0");
        }
    }

    #[test]
    fn calibrate_recovers_reference_noise_from_exact_model_data() {
        let truth = reference_noise();
        let problem = synthetic_problem(&truth, CalibrateConfig::default());
        let result = calibrate(&problem).unwrap();
        let recovered = result.lambda_opt.flatten();
        for (got, want) in recovered.iter().zip(truth.flatten()) {
            assert!(
                (got - want).abs() < 1e-4,
                "recovered {got} vs truth {want}"
            );
        }
        for f in &result.per_probe_fidelity {
            assert!(*f > 1.0 - 1e-9);
        }
    }

    #[test]
    fn cube8_calibration_uses_its_own_ports_as_probes() {
        // zero-noise synthetic data over the 8 port states of the cube
        // design recovers the all-zero vector
        let design = Design::Cube8;
        let povm = build_povm(design);
        let truth = NoiseParams::zero(design);
        let probes: Vec<(String, StateDescriptor)> = povm
            .iter_ports()
            .map(|(_, _, port)| {
                (
                    port.label.clone(),
                    StateDescriptor::pure(port.ket.to_vec()).unwrap(),
                )
            })
            .collect();
        let observed: Vec<Vec<f64>> = probes
            .iter()
            .map(|(_, state)| predict_distribution(&truth, state).unwrap())
            .collect();
        let problem = CalibrationProblem::new(
            design,
            probes,
            observed,
            CalibrateConfig {
                starts: 6,
                ..CalibrateConfig::default()
            },
        )
        .unwrap();
        let result = calibrate(&problem).unwrap();
        for v in result.lambda_opt.flatten() {
            assert!(v.abs() < 1e-4, "recovered {v} instead of 0");
        }

        // label resolution through a count table: a cube port label becomes
        // that port's state
        let table = crate::emulator::CountTable {
            port_labels: povm
                .iter_ports()
                .map(|(_, _, p)| p.label.clone())
                .collect(),
            rows: povm
                .iter_ports()
                .map(|(i, b, p)| {
                    let mut counts = vec![0u64; 8];
                    counts[2 * i + b as usize] = 250;
                    crate::emulator::CountRow {
                        input: p.label.clone(),
                        counts,
                        injected: 1000,
                    }
                })
                .collect(),
        };
        let problem =
            CalibrationProblem::from_count_table(design, &table, CalibrateConfig::default())
                .unwrap();
        assert_eq!(problem.probes.len(), 8);
        let (label, state) = &problem.probes[0];
        assert_eq!(label, "b1+");
        assert_abs_diff_eq!(
            crate::qcore::exact_overlap(state, &{
                StateDescriptor::pure(build_povm(design).port(0, 0).ket.to_vec()).unwrap()
            })
            .unwrap(),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn calibrate_reports_non_convergence_with_best_so_far() {
        let truth = reference_noise();
        let problem = synthetic_problem(
            &truth,
            CalibrateConfig {
                starts: 2,
                max_evals: 3, // too small to even finish the initial simplex
                ..CalibrateConfig::default()
            },
        );
        match calibrate(&problem) {
            Err(crate::error::Error::NonConvergence { objective, best }) => {
                assert!(!best.converged);
                assert!(objective <= 6.0 + 1e-9);
                assert_eq!(best.lambda_opt.half_k(), 3);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn calibrate_is_deterministic() {
        let truth = reference_noise();
        let cfg = CalibrateConfig {
            starts: 6,
            max_evals: 3000,
            ..CalibrateConfig::default()
        };
        let problem = synthetic_problem(&truth, cfg);
        let a = calibrate(&problem).unwrap();
        let b = calibrate(&problem).unwrap();
        assert_eq!(a.lambda_opt.flatten(), b.lambda_opt.flatten());
        assert_eq!(a.objective_value, b.objective_value);
        assert_eq!(a.evaluations, b.evaluations);
    }

    #[test]
    fn objective_peaks_at_the_true_noise_vector() {
        use rand::Rng;
        use rand::SeedableRng;
        let truth = reference_noise();
        let problem = synthetic_problem(&truth, CalibrateConfig::default());
        let povm = build_povm(Design::Octa6);
        let tables: Vec<ProbTable> = problem
            .probes
            .iter()
            .map(|(_, s)| born_table(s, &povm).unwrap())
            .collect();
        let objective = |values: &[f64]| -> f64 {
            let params = NoiseParams::unflatten(Design::Octa6, values).unwrap();
            tables
                .iter()
                .zip(&problem.observed)
                .map(|(t, o)| {
                    bhattacharyya_fidelity(o, &predict_from_table(t, &params).unwrap()).unwrap()
                })
                .sum()
        };
        let at_truth = objective(&truth.flatten());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let perturbed: Vec<f64> = truth
                .flatten()
                .iter()
                .map(|v| (v + 0.05 * (2.0 * rng.random::<f64>() - 1.0)).clamp(0.0, 0.999))
                .collect();
            assert!(objective(&perturbed) <= at_truth + 1e-12);
        }
    }

    #[test]
    fn validate_model_against_itself_is_perfect() {
        // reference built from the model's own port responses
        let params = reference_noise();
        let povm = build_povm(Design::Octa6);
        let mut gratings = Vec::new();
        for (i, pair) in povm.bases().iter().enumerate() {
            let mut ports = Vec::new();
            for b in 0..2u8 {
                // effective response operator: sum over ideal ports of
                // transition prob times projector, damped by survival
                let gamma = noise::local_gamma(&params, i);
                let w = 1.0 - params.bases[i].p_pl[b as usize];
                let mut op = crate::emulator::PortOperator {
                    a: 0.0,
                    d: 0.0,
                    c_re: 0.0,
                    c_im: 0.0,
                };
                for ideal in 0..2u8 {
                    let proj = povm.projector(i, ideal);
                    let coeff = gamma[b as usize][ideal as usize] * w;
                    op.a += coeff * proj[(0, 0)].re;
                    op.d += coeff * proj[(1, 1)].re;
                    op.c_re += coeff * proj[(0, 1)].re;
                    op.c_im += coeff * proj[(0, 1)].im;
                }
                ports.push(crate::emulator::FittedPort {
                    label: povm.port_label(i, b).to_string(),
                    bit: b,
                    operator: op,
                    residual: 0.0,
                });
            }
            gratings.push(crate::emulator::FittedGrating {
                label: pair.label.clone(),
                ports: [ports.remove(0), ports.remove(0)],
            });
        }
        let reference = PortOperatorSet { gratings };
        let points = validate_model(&params, &reference, 16).unwrap();
        assert_eq!(points.len(), 32);
        for p in points {
            assert!(
                p.fidelity > 1.0 - 1e-10,
                "theta {} family {:?}: fidelity {}",
                p.theta,
                p.family,
                p.fidelity
            );
        }
    }

    #[test]
    fn validation_sweep_endpoint_matches_probe() {
        // theta = 0 in the xz family is the |V> probe
        let state = sweep_state(SweepFamily::Xz, 0.0);
        let v = probe_state("V").unwrap();
        assert_abs_diff_eq!(
            crate::qcore::exact_overlap(&state, &v).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert!(validate_model(&reference_noise(), &dummy_reference(), 1).is_err());
    }

    fn dummy_reference() -> PortOperatorSet {
        let table = TransmissionTable::new(
            vec!["HV".into(), "HpmV".into(), "RCLC".into()],
            vec![
                [
                    [1.0, 0.0, 0.5, 0.5, 0.5, 0.5],
                    [0.0, 1.0, 0.5, 0.5, 0.5, 0.5],
                ],
                [
                    [0.5, 0.5, 1.0, 0.0, 0.5, 0.5],
                    [0.5, 0.5, 0.0, 1.0, 0.5, 0.5],
                ],
                [
                    [0.5, 0.5, 0.5, 0.5, 0.0, 1.0],
                    [0.5, 0.5, 0.5, 0.5, 1.0, 0.0],
                ],
            ],
        )
        .unwrap();
        fit_port_operators(&table).unwrap()
    }

    #[test]
    fn ideal_reference_with_zero_noise_validates_perfectly() {
        let reference = dummy_reference();
        let params = NoiseParams::zero(Design::Octa6);
        let points = validate_model(&params, &reference, 32).unwrap();
        for p in points {
            assert!(p.fidelity > 1.0 - 1e-10);
        }
    }
}
