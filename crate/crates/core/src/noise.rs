//! The parameterized readout-noise model: per-basis effective basis-flip and
//! amplitude-damping transitions, per-port photon loss, and the composite
//! forward map (linear transitions first, then the nonlinear loss
//! renormalization) acting on probability tables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::povm::{Design, ProbTable};

/// 2x2 column-stochastic transition block. Entry `[r][c]` is the probability
/// of observing outcome r given ideal outcome c.
pub type Mat2 = [[f64; 2]; 2];

/// Noise parameters for one basis pair.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BasisNoise {
    pub label: String,
    pub p_bf: f64,
    pub p_ad: f64,
    /// Photon-loss probability per port, indexed by outcome bit.
    pub p_pl: [f64; 2],
}

/// The full noise vector: one BasisNoise per basis pair of a design.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NoiseParams {
    pub design: Design,
    pub bases: Vec<BasisNoise>,
}

fn check_rate(name: &str, value: f64) -> Result<()> {
    if !(0.0..1.0).contains(&value) {
        return Err(Error::InvalidArgument(format!(
            "{name} = {value} is outside [0, 1)"
        )));
    }
    Ok(())
}

impl NoiseParams {
    pub fn new(design: Design, bases: Vec<BasisNoise>) -> Result<Self> {
        if bases.len() != design.half_k() {
            return Err(Error::InvalidArgument(format!(
                "design {design} needs {} basis entries, got {}",
                design.half_k(),
                bases.len()
            )));
        }
        for b in &bases {
            check_rate(&format!("p_bf({})", b.label), b.p_bf)?;
            check_rate(&format!("p_ad({})", b.label), b.p_ad)?;
            check_rate(&format!("p_pl({},0)", b.label), b.p_pl[0])?;
            check_rate(&format!("p_pl({},1)", b.label), b.p_pl[1])?;
        }
        Ok(Self { design, bases })
    }

    /// The all-zero noise vector for a design.
    pub fn zero(design: Design) -> Self {
        let bases = design
            .basis_labels()
            .into_iter()
            .map(|label| BasisNoise {
                label,
                p_bf: 0.0,
                p_ad: 0.0,
                p_pl: [0.0, 0.0],
            })
            .collect();
        Self { design, bases }
    }

    pub fn half_k(&self) -> usize {
        self.bases.len()
    }

    pub fn is_zero(&self) -> bool {
        self.bases
            .iter()
            .all(|b| b.p_bf == 0.0 && b.p_ad == 0.0 && b.p_pl == [0.0, 0.0])
    }

    /// Flattens to the optimizer layout:
    /// [p_bf(0..), p_ad(0..), p_pl(0,0), p_pl(0,1), p_pl(1,0), ...].
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(4 * self.bases.len());
        v.extend(self.bases.iter().map(|b| b.p_bf));
        v.extend(self.bases.iter().map(|b| b.p_ad));
        for b in &self.bases {
            v.push(b.p_pl[0]);
            v.push(b.p_pl[1]);
        }
        v
    }

    /// Inverse of [`flatten`](Self::flatten); values are clamped into [0, 0.999).
    pub fn unflatten(design: Design, values: &[f64]) -> Result<Self> {
        let half_k = design.half_k();
        if values.len() != 4 * half_k {
            return Err(Error::InvalidArgument(format!(
                "expected {} flattened values, got {}",
                4 * half_k,
                values.len()
            )));
        }
        let clamp = |x: f64| x.clamp(0.0, 0.999);
        let labels = design.basis_labels();
        let bases = (0..half_k)
            .map(|i| BasisNoise {
                label: labels[i].clone(),
                p_bf: clamp(values[i]),
                p_ad: clamp(values[half_k + i]),
                p_pl: [clamp(values[2 * half_k + 2 * i]), clamp(values[2 * half_k + 2 * i + 1])],
            })
            .collect();
        NoiseParams::new(design, bases)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: NoiseParams = serde_json::from_str(s)?;
        NoiseParams::new(raw.design, raw.bases)
    }
}

/// Symmetric basis-flip transition [[1-p, p], [p, 1-p]].
pub fn gamma_bf(p: f64) -> Result<Mat2> {
    check_rate("p_bf", p)?;
    Ok([[1.0 - p, p], [p, 1.0 - p]])
}

/// Amplitude-damping transition [[1, p], [0, 1-p]]: outcome 1 relaxes to
/// outcome 0 with probability p.
pub fn gamma_ad(p: f64) -> Result<Mat2> {
    check_rate("p_ad", p)?;
    Ok([[1.0, p], [0.0, 1.0 - p]])
}

pub fn mat2_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            out[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c];
        }
    }
    out
}

pub fn mat2_det(m: &Mat2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

pub fn mat2_inv(m: &Mat2) -> Option<Mat2> {
    let det = mat2_det(m);
    if det.abs() <= 1e-12 {
        return None;
    }
    Some([
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ])
}

/// The combined per-basis transition Gamma_i = Gamma_ad(i) . Gamma_bf(i),
/// amplitude damping applied after the flip, exactly in that order.
pub fn local_gamma(params: &NoiseParams, basis: usize) -> Mat2 {
    let b = &params.bases[basis];
    let bf = gamma_bf(b.p_bf).expect("validated at construction");
    let ad = gamma_ad(b.p_ad).expect("validated at construction");
    mat2_mul(&ad, &bf)
}

/// Applies a 2x2 block to qubit `q` of every entry pair in a group vector.
/// Qubit 0 is the most significant bit of the outcome index.
pub(crate) fn apply_site_matrix(v: &mut [f64], n: usize, q: usize, m: &Mat2) {
    let stride = 1usize << (n - 1 - q);
    let dim = v.len();
    let mut base = 0;
    while base < dim {
        for offset in 0..stride {
            let i0 = base + offset;
            let i1 = i0 + stride;
            let (a, b) = (v[i0], v[i1]);
            v[i0] = m[0][0] * a + m[0][1] * b;
            v[i1] = m[1][0] * a + m[1][1] * b;
        }
        base += 2 * stride;
    }
}

fn check_design_match(table: &ProbTable, params: &NoiseParams) -> Result<()> {
    if table.half_k() != params.half_k() {
        return Err(Error::DimensionMismatch(format!(
            "table with {} bases vs noise for design {} with {}",
            table.half_k(),
            params.design,
            params.half_k()
        )));
    }
    Ok(())
}

/// The linear part of the noise map: within each basis group, multiplies the
/// outcome vector by the tensor product of the per-basis transitions. Group
/// masses are preserved.
pub fn apply_linear(table: &ProbTable, params: &NoiseParams) -> Result<ProbTable> {
    check_design_match(table, params)?;
    let n = table.num_qubits();
    let gammas: Vec<Mat2> = (0..params.half_k()).map(|i| local_gamma(params, i)).collect();
    let mut out = table.clone();
    for g in 0..out.num_groups() {
        let digits = out.basis_digits(g);
        let group = out.group_mut(g);
        for (q, &digit) in digits.iter().enumerate() {
            apply_site_matrix(group, n, q, &gammas[digit as usize]);
        }
    }
    Ok(out)
}

/// A probability table conditioned on photon survival: per basis group, the
/// conditional outcome distribution (summing to 1) plus the group's survival
/// mass. Groups with no data (possible for empirical tables) are `None`.
#[derive(Clone, Debug)]
pub struct LossyProbTable {
    n: usize,
    half_k: usize,
    groups: Vec<Option<Vec<f64>>>,
    survival: Vec<f64>,
}

impl LossyProbTable {
    pub(crate) fn from_parts(
        n: usize,
        half_k: usize,
        groups: Vec<Option<Vec<f64>>>,
        survival: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(groups.len(), survival.len());
        Self {
            n,
            half_k,
            groups,
            survival,
        }
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    pub fn half_k(&self) -> usize {
        self.half_k
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    /// Conditional outcome distribution of a group, or `None` when the group
    /// saw no data.
    pub fn conditional(&self, g: usize) -> Option<&[f64]> {
        self.groups[g].as_deref()
    }

    /// Survival mass s_i of a group (1 when lossless).
    pub fn survival(&self, g: usize) -> f64 {
        self.survival[g]
    }

    pub fn empty_group_count(&self) -> usize {
        self.groups.iter().filter(|g| g.is_none()).count()
    }

    pub fn basis_digits(&self, g: usize) -> Vec<u8> {
        let mut digits = vec![0u8; self.n];
        let mut rest = g;
        for q in (0..self.n).rev() {
            digits[q] = (rest % self.half_k) as u8;
            rest /= self.half_k;
        }
        digits
    }

    pub fn group_index(&self, digits: &[u8]) -> usize {
        digits
            .iter()
            .fold(0usize, |acc, &d| acc * self.half_k + d as usize)
    }
}

/// Survival weight prod_q (1 - p_pl(i_q, b_q)) of one joint outcome.
pub(crate) fn survival_weight(params: &NoiseParams, digits: &[u8], bits: usize) -> f64 {
    let n = digits.len();
    let mut w = 1.0;
    for (q, &digit) in digits.iter().enumerate() {
        let bit = (bits >> (n - 1 - q)) & 1;
        w *= 1.0 - params.bases[digit as usize].p_pl[bit];
    }
    w
}

/// The nonlinear photon-loss map: per group, reweights the conditional
/// distribution by the per-port survival probabilities and renormalizes,
/// recording the survival mass.
pub fn apply_photon_loss(table: &ProbTable, params: &NoiseParams) -> Result<LossyProbTable> {
    check_design_match(table, params)?;
    let n = table.num_qubits();
    let dim = 1usize << n;
    let mut groups = Vec::with_capacity(table.num_groups());
    let mut survival = Vec::with_capacity(table.num_groups());
    for g in 0..table.num_groups() {
        let digits = table.basis_digits(g);
        let mass = table.group_mass(g);
        if mass <= 0.0 {
            return Err(Error::DegenerateGroup {
                group: format!("{:?}", digits),
            });
        }
        let mut weighted = vec![0.0; dim];
        let mut s = 0.0;
        for bits in 0..dim {
            let w = survival_weight(params, &digits, bits);
            let value = table.get(g, bits) / mass * w;
            weighted[bits] = value;
            s += value;
        }
        if s <= 0.0 {
            return Err(Error::DegenerateGroup {
                group: format!("{:?}", digits),
            });
        }
        for v in &mut weighted {
            *v /= s;
        }
        groups.push(Some(weighted));
        survival.push(s);
    }
    Ok(LossyProbTable::from_parts(
        n,
        table.half_k(),
        groups,
        survival,
    ))
}

/// The full forward noise map: linear transitions first, then photon loss.
pub fn apply_composite(table: &ProbTable, params: &NoiseParams) -> Result<LossyProbTable> {
    apply_photon_loss(&apply_linear(table, params)?, params)
}

/// Scales every noise rate by `h`, clamping into [0, 0.999].
pub fn scale_noise(params: &NoiseParams, h: f64) -> NoiseParams {
    assert!(h >= 0.0, "scale factor must be nonnegative");
    let clamp = |x: f64| (x * h).clamp(0.0, 0.999);
    NoiseParams {
        design: params.design,
        bases: params
            .bases
            .iter()
            .map(|b| BasisNoise {
                label: b.label.clone(),
                p_bf: clamp(b.p_bf),
                p_ad: clamp(b.p_ad),
                p_pl: [clamp(b.p_pl[0]), clamp(b.p_pl[1])],
            })
            .collect(),
    }
}
