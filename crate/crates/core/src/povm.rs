//! Metasurface port POVMs: construction of the 6/8/12-port designs,
//! quantum 2-design validation, Born-rule outcome tables, and classical
//! shadows.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::qcore::{self, HermitianOp, StateDescriptor};

/// Haar second moment of |<phi|psi>|^4 in dimension 2, i.e. 2/(d(d+1)).
pub const TWO_DESIGN_TARGET: f64 = 1.0 / 3.0;

/// Dense outcome tables are capped at this many entries.
pub const MAX_TABLE_ENTRIES: usize = 1 << 24;
/// Full Born tables are only built up to this many qubits.
pub const MAX_TABLE_QUBITS: usize = 8;

/// The supported port layouts. Port Bloch vectors form the named solid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    /// 6 ports on the +-x, +-y, +-z axes (octahedron).
    Octa6,
    /// 8 ports on the cube vertices (+-1,+-1,+-1)/sqrt(3).
    Cube8,
    /// 12 ports on the icosahedron vertices.
    Icosa12,
}

impl Design {
    pub fn ports(self) -> usize {
        match self {
            Design::Octa6 => 6,
            Design::Cube8 => 8,
            Design::Icosa12 => 12,
        }
    }

    pub fn half_k(self) -> usize {
        self.ports() / 2
    }

    pub fn label(self) -> &'static str {
        match self {
            Design::Octa6 => "octa6",
            Design::Cube8 => "cube8",
            Design::Icosa12 => "icosa12",
        }
    }

    /// Default basis labels for this design, in basis order.
    pub fn basis_labels(self) -> Vec<String> {
        match self {
            Design::Octa6 => vec!["z".into(), "x".into(), "y".into()],
            _ => (1..=self.half_k()).map(|i| format!("b{i}")).collect(),
        }
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "octa6" => Ok(Design::Octa6),
            "cube8" => Ok(Design::Cube8),
            "icosa12" => Ok(Design::Icosa12),
            other => Err(Error::InvalidArgument(format!("unknown design `{other}`"))),
        }
    }
}

/// One detection port: an outcome bit, its Bloch vector, and the pure state
/// the port projects onto.
#[derive(Clone, Debug)]
pub struct Port {
    pub bit: u8,
    pub label: String,
    pub bloch: [f64; 3],
    pub ket: Array1<Complex64>,
}

/// Two antipodal ports sharing a measurement basis.
#[derive(Clone, Debug)]
pub struct BasisPair {
    pub label: String,
    pub ports: [Port; 2],
}

/// The full local POVM: K ports grouped into K/2 antipodal basis pairs,
/// each effect being (2/K) times a rank-one projector.
#[derive(Clone, Debug)]
pub struct Povm {
    design: Design,
    bases: Vec<BasisPair>,
}

impl Povm {
    pub fn design(&self) -> Design {
        self.design
    }

    pub fn ports(&self) -> usize {
        2 * self.bases.len()
    }

    pub fn half_k(&self) -> usize {
        self.bases.len()
    }

    /// Effect weight 2/K shared by every port.
    pub fn weight(&self) -> f64 {
        2.0 / self.ports() as f64
    }

    pub fn bases(&self) -> &[BasisPair] {
        &self.bases
    }

    pub fn port(&self, basis: usize, bit: u8) -> &Port {
        &self.bases[basis].ports[bit as usize]
    }

    pub fn port_label(&self, basis: usize, bit: u8) -> &str {
        &self.port(basis, bit).label
    }

    /// All ports in (basis, outcome) order.
    pub fn iter_ports(&self) -> impl Iterator<Item = (usize, u8, &Port)> {
        self.bases
            .iter()
            .enumerate()
            .flat_map(|(i, pair)| pair.ports.iter().map(move |p| (i, p.bit, p)))
    }

    /// Rank-one projector |phi><phi| of a port.
    pub fn projector(&self, basis: usize, bit: u8) -> Array2<Complex64> {
        let ket = &self.port(basis, bit).ket;
        Array2::from_shape_fn((2, 2), |(i, j)| ket[i] * ket[j].conj())
    }

    /// POVM effect (2/K)|phi><phi| of a port.
    pub fn effect(&self, basis: usize, bit: u8) -> Array2<Complex64> {
        let w = Complex64::new(self.weight(), 0.0);
        self.projector(basis, bit).mapv(|x| x * w)
    }
}

fn port_from_bloch(bit: u8, label: &str, bloch: [f64; 3]) -> Port {
    let state = qcore::bloch_to_state(bloch).expect("design Bloch vectors are unit length");
    Port {
        bit,
        label: label.to_string(),
        bloch,
        ket: state.amplitudes().expect("bloch_to_state is pure").clone(),
    }
}

/// Builds the POVM for a design. Basis order and outcome-0 assignment are
/// fixed: outcome 0 is the port on the positive representative axis, and for
/// the six-port design the bases are (z, x, y) with outcome-0 ports H, H+V,
/// and LC.
pub fn build_povm(design: Design) -> Povm {
    let bases = match design {
        Design::Octa6 => {
            let axes: [([f64; 3], &str, [&str; 2]); 3] = [
                ([0.0, 0.0, 1.0], "z", ["H", "V"]),
                ([1.0, 0.0, 0.0], "x", ["H+V", "H-V"]),
                ([0.0, 1.0, 0.0], "y", ["LC", "RC"]),
            ];
            axes.iter()
                .map(|(v, basis, ports)| BasisPair {
                    label: basis.to_string(),
                    ports: [
                        port_from_bloch(0, ports[0], *v),
                        port_from_bloch(1, ports[1], [-v[0], -v[1], -v[2]]),
                    ],
                })
                .collect()
        }
        Design::Cube8 => {
            let s = 1.0 / 3f64.sqrt();
            let reps = [
                [s, s, s],
                [s, s, -s],
                [s, -s, s],
                [s, -s, -s],
            ];
            reps.iter()
                .enumerate()
                .map(|(i, v)| BasisPair {
                    label: format!("b{}", i + 1),
                    ports: [
                        port_from_bloch(0, &format!("b{}+", i + 1), *v),
                        port_from_bloch(1, &format!("b{}-", i + 1), [-v[0], -v[1], -v[2]]),
                    ],
                })
                .collect()
        }
        Design::Icosa12 => {
            let g = (1.0 + 5f64.sqrt()) / 2.0;
            let s = 1.0 / (1.0 + g * g).sqrt();
            let reps = [
                [0.0, s, g * s],
                [0.0, s, -g * s],
                [s, g * s, 0.0],
                [s, -g * s, 0.0],
                [g * s, 0.0, s],
                [g * s, 0.0, -s],
            ];
            reps.iter()
                .enumerate()
                .map(|(i, v)| BasisPair {
                    label: format!("b{}", i + 1),
                    ports: [
                        port_from_bloch(0, &format!("b{}+", i + 1), *v),
                        port_from_bloch(1, &format!("b{}-", i + 1), [-v[0], -v[1], -v[2]]),
                    ],
                })
                .collect()
        }
    };
    Povm { design, bases }
}

/// Outcome of the 2-design validation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FramePotentialReport {
    /// (1/K^2) sum over ordered port pairs of |<phi_k|phi_k'>|^4.
    pub frame_potential: f64,
    /// The Haar value 1/3 for qubits.
    pub target: f64,
    /// Max deviation of the probability-weighted measurement channel from
    /// its (I + rho)/3 fixed form over random probe states.
    pub channel_residual: f64,
}

impl FramePotentialReport {
    pub fn passes(&self, tol: f64) -> bool {
        (self.frame_potential - self.target).abs() <= tol && self.channel_residual < tol
    }
}

/// Frame-potential and measurement-channel test of the 2-design property.
///
/// The channel is the probability-weighted average over ports,
/// `M(rho) = sum_k P_k |phi_k><phi_k|` with `P_k = (2/K) <phi_k|rho|phi_k>`,
/// which equals `(I + rho)/3` exactly when the port states form a 2-design.
pub fn check_two_design(povm: &Povm) -> FramePotentialReport {
    let kets: Vec<&Array1<Complex64>> = povm.iter_ports().map(|(_, _, p)| &p.ket).collect();
    let k = kets.len() as f64;
    let mut pot = 0.0;
    for a in &kets {
        for b in &kets {
            let inner: Complex64 = a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum();
            pot += inner.norm_sqr().powi(2);
        }
    }
    pot /= k * k;

    let mut rng = ChaCha8Rng::seed_from_u64(0x2de5);
    let mut residual = 0.0f64;
    for probe in 0..24 {
        let rho = if probe % 2 == 0 {
            qcore::random_pure(1, &mut rng).density_matrix()
        } else {
            qcore::random_density(1, &mut rng).density_matrix()
        };
        let mut mapped = Array2::from_elem((2, 2), Complex64::new(0.0, 0.0));
        for (i, b, _) in povm.iter_ports() {
            let proj = povm.projector(i, b);
            let prob = povm.weight()
                * (0..2)
                    .flat_map(|r| (0..2).map(move |c| (r, c)))
                    .map(|(r, c)| (rho[(r, c)] * proj[(c, r)]).re)
                    .sum::<f64>();
            mapped = mapped + proj.mapv(|x| x * Complex64::new(prob, 0.0));
        }
        for r in 0..2 {
            for c in 0..2 {
                let ident = if r == c {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                };
                let expect = (ident + rho[(r, c)]) / 3.0;
                residual = residual.max((mapped[(r, c)] - expect).norm());
            }
        }
    }

    FramePotentialReport {
        frame_potential: pot,
        target: TWO_DESIGN_TARGET,
        channel_residual: residual,
    }
}

/// Joint outcome probabilities over (basis string, bit string), stored as one
/// dense vector of 2^n entries per basis group.
#[derive(Clone, Debug)]
pub struct ProbTable {
    n: usize,
    half_k: usize,
    groups: Vec<Vec<f64>>,
}

impl ProbTable {
    pub fn zeroed(n: usize, half_k: usize) -> Result<Self> {
        let num_groups = checked_group_count(n, half_k)?;
        Ok(Self {
            n,
            half_k,
            groups: vec![vec![0.0; 1 << n]; num_groups],
        })
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

    /// Noise-free mass of every basis group, (2/K)^n.
    pub fn group_prior(&self) -> f64 {
        (1.0 / self.half_k as f64).powi(self.n as i32)
    }

    /// Raw group vector (entries may be tiny negatives from inversion).
    pub fn group(&self, g: usize) -> &[f64] {
        &self.groups[g]
    }

    pub(crate) fn group_mut(&mut self, g: usize) -> &mut Vec<f64> {
        &mut self.groups[g]
    }

    /// One joint probability, clamped to be nonnegative.
    pub fn get(&self, g: usize, bits: usize) -> f64 {
        self.groups[g][bits].max(0.0)
    }

    /// One signed entry. Mitigated tables are quasi-probability tables whose
    /// estimators must see the negative parts; everything else should prefer
    /// [`get`](Self::get).
    pub fn raw(&self, g: usize, bits: usize) -> f64 {
        self.groups[g][bits]
    }

    /// Algebraic mass of a group (signed entries included).
    pub fn group_mass(&self, g: usize) -> f64 {
        self.groups[g].iter().sum()
    }

    pub fn total(&self) -> f64 {
        (0..self.num_groups()).map(|g| self.group_mass(g)).sum()
    }

    /// Decodes a group index into basis digits (qubit 0 first, 0-based).
    pub fn basis_digits(&self, g: usize) -> Vec<u8> {
        let mut digits = vec![0u8; self.n];
        let mut rest = g;
        for q in (0..self.n).rev() {
            digits[q] = (rest % self.half_k) as u8;
            rest /= self.half_k;
        }
        digits
    }

    /// Encodes basis digits (qubit 0 first, 0-based) into a group index.
    pub fn group_index(&self, digits: &[u8]) -> usize {
        debug_assert_eq!(digits.len(), self.n);
        digits
            .iter()
            .fold(0usize, |acc, &d| acc * self.half_k + d as usize)
    }

    /// Writes the table as CSV lines `basis_string,bit_string,probability`
    /// (basis digits 1-based, signed entries as stored).
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut out = String::from("basis_string,bit_string,probability\n");
        for g in 0..self.num_groups() {
            let digits = self.basis_digits(g);
            let basis: String = digits.iter().map(|d| char::from(b'1' + d)).collect();
            for bits in 0..(1usize << self.n) {
                let bit_string: String = (0..self.n)
                    .map(|q| if (bits >> (self.n - 1 - q)) & 1 == 1 { '1' } else { '0' })
                    .collect();
                out.push_str(&format!("{basis},{bit_string},{}\n", self.raw(g, bits)));
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Checks the lossless-table invariants: entries above -1e-12, every
    /// group carrying the state-independent mass (2/K)^n within 1e-9, and a
    /// total of 1 within 1e-9.
    pub fn validate_lossless(&self) -> Result<()> {
        let prior = self.group_prior();
        for (g, group) in self.groups.iter().enumerate() {
            let mut mass = 0.0;
            for &p in group {
                if p < -1e-12 {
                    return Err(Error::InvalidArgument(format!(
                        "group {g} holds entry {p} below -1e-12"
                    )));
                }
                mass += p.max(0.0);
            }
            if (mass - prior).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "group {g} mass {mass} differs from prior {prior}"
                )));
            }
        }
        let total = self.total();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "table total {total} differs from 1"
            )));
        }
        Ok(())
    }
}

pub(crate) fn checked_group_count(n: usize, half_k: usize) -> Result<usize> {
    if n == 0 {
        return Err(Error::InvalidArgument("table needs at least one qubit".into()));
    }
    if n > MAX_TABLE_QUBITS {
        return Err(Error::Capacity(format!(
            "dense tables are capped at {MAX_TABLE_QUBITS} qubits, got {n}"
        )));
    }
    let groups = half_k.pow(n as u32);
    let entries = groups.saturating_mul(1usize << n);
    if entries > MAX_TABLE_ENTRIES {
        return Err(Error::Capacity(format!(
            "table of {entries} entries exceeds the cap of {MAX_TABLE_ENTRIES}"
        )));
    }
    Ok(groups)
}

fn contract_msb_vector(v: &[Complex64], ket: &Array1<Complex64>) -> Vec<Complex64> {
    let half = v.len() / 2;
    (0..half)
        .map(|j| ket[0].conj() * v[j] + ket[1].conj() * v[half + j])
        .collect()
}

fn contract_msb_matrix(m: &[Complex64], dim: usize, ket: &Array1<Complex64>) -> Vec<Complex64> {
    // m is a dim x dim row-major density block; contracts the most
    // significant qubit against |phi><phi|.
    let h = dim / 2;
    let mut out = vec![Complex64::new(0.0, 0.0); h * h];
    for x in 0..2 {
        for y in 0..2 {
            let coeff = ket[x].conj() * ket[y];
            if coeff.norm_sqr() == 0.0 {
                continue;
            }
            for j in 0..h {
                for k in 0..h {
                    out[j * h + k] += coeff * m[(x * h + j) * dim + (y * h + k)];
                }
            }
        }
    }
    out
}

/// Born-rule joint outcome table P_(i,b) = Tr(rho E_i1,b1 x ... x E_in,bn)
/// for every basis string and bit string, grouped by basis string.
pub fn born_table(state: &StateDescriptor, povm: &Povm) -> Result<ProbTable> {
    let n = state.num_qubits();
    let half_k = povm.half_k();
    let mut table = ProbTable::zeroed(n, half_k)?;
    let weight = povm.weight().powi(n as i32);

    if let Some(amps) = state.amplitudes() {
        let root: Vec<Complex64> = amps.to_vec();
        let mut stack: Vec<(usize, usize, Vec<Complex64>)> = vec![(0, 0, root)];
        while let Some((depth, code, v)) = stack.pop() {
            if depth == n {
                let g = code >> n;
                let bits = code & ((1 << n) - 1);
                // code packs (group, bits) as interleaved radix walk; see push
                table.group_mut(g)[bits] = weight * v[0].norm_sqr();
                continue;
            }
            for i in 0..half_k {
                for b in 0..2u8 {
                    let ket = &povm.port(i, b).ket;
                    let next = contract_msb_vector(&v, ket);
                    // grow group digits in the high bits and outcome bits low
                    let g = (code >> (depth)) * half_k + i;
                    let bits = (code & ((1 << depth) - 1)) << 1 | b as usize;
                    let packed = (g << (depth + 1)) | bits;
                    stack.push((depth + 1, packed, next));
                }
            }
        }
    } else {
        let rho = state.density_matrix();
        let root: Vec<Complex64> = rho.iter().cloned().collect();
        let mut stack: Vec<(usize, usize, Vec<Complex64>)> = vec![(0, 0, root)];
        while let Some((depth, code, m)) = stack.pop() {
            let dim = 1usize << (n - depth);
            if depth == n {
                let g = code >> n;
                let bits = code & ((1 << n) - 1);
                table.group_mut(g)[bits] = weight * m[0].re;
                continue;
            }
            for i in 0..half_k {
                for b in 0..2u8 {
                    let ket = &povm.port(i, b).ket;
                    let next = contract_msb_matrix(&m, dim, ket);
                    let g = (code >> (depth)) * half_k + i;
                    let bits = (code & ((1 << depth) - 1)) << 1 | b as usize;
                    let packed = (g << (depth + 1)) | bits;
                    stack.push((depth + 1, packed, next));
                }
            }
        }
    }
    Ok(table)
}

/// 2x2 single-port shadow factor 3|phi><phi| - I.
pub(crate) fn shadow_factor(povm: &Povm, basis: usize, bit: u8) -> Array2<Complex64> {
    let mut m = povm.projector(basis, bit).mapv(|x| x * Complex64::new(3.0, 0.0));
    m[(0, 0)] -= Complex64::new(1.0, 0.0);
    m[(1, 1)] -= Complex64::new(1.0, 0.0);
    m
}

/// Classical shadow of one n-qubit outcome: the tensor product over qubits
/// of 3|phi_(i_q,b_q)><phi_(i_q,b_q)| - I. The channel inverse acts on the
/// bare projector, not the weighted effect.
pub fn shadow_from_outcome(povm: &Povm, outcome: &[(usize, u8)]) -> Result<HermitianOp> {
    if outcome.is_empty() {
        return Err(Error::InvalidArgument("empty outcome".into()));
    }
    if outcome.len() > qcore::MAX_MIXED_QUBITS {
        return Err(Error::Capacity(format!(
            "dense shadows are capped at {} qubits",
            qcore::MAX_MIXED_QUBITS
        )));
    }
    for &(i, b) in outcome {
        if i >= povm.half_k() || b > 1 {
            return Err(Error::InvalidArgument(format!(
                "port ({i},{b}) does not exist in a {}-port design",
                povm.ports()
            )));
        }
    }
    let mut acc = shadow_factor(povm, outcome[0].0, outcome[0].1);
    for &(i, b) in &outcome[1..] {
        acc = qcore::kron(&acc, &shadow_factor(povm, i, b));
    }
    HermitianOp::new(acc)
}
