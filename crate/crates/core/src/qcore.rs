//! Minimal complex linear algebra and exact quantum-state utilities.
//!
//! Everything in here is dense and desk-scale by design: pure states up to
//! 22 qubits, density matrices up to 12. These routines are the ground-truth
//! oracles that the sampling, mitigation, and estimation code is tested
//! against.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};

/// Dense pure states are capped at this many qubits.
pub const MAX_PURE_QUBITS: usize = 22;
/// Dense density matrices are capped at this many qubits.
pub const MAX_MIXED_QUBITS: usize = 12;

#[derive(Clone, Debug)]
enum Repr {
    Pure(Array1<Complex64>),
    Mixed(Array2<Complex64>),
}

/// An n-qubit state, either a normalized amplitude vector or a density
/// matrix. Immutable after construction.
#[derive(Clone, Debug)]
pub struct StateDescriptor {
    n: usize,
    repr: Repr,
}

fn qubits_for_dim(dim: usize) -> Result<usize> {
    if dim < 2 || !dim.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "dimension {dim} is not a power of two >= 2"
        )));
    }
    Ok(dim.trailing_zeros() as usize)
}

impl StateDescriptor {
    /// Wraps an amplitude vector. The vector must already be normalized to
    /// unit 2-norm within 1e-12.
    pub fn pure(amplitudes: Vec<Complex64>) -> Result<Self> {
        let n = qubits_for_dim(amplitudes.len())?;
        if n > MAX_PURE_QUBITS {
            return Err(Error::Capacity(format!(
                "pure states are capped at {MAX_PURE_QUBITS} qubits, got {n}"
            )));
        }
        let norm_sq: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if (norm_sq - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "amplitude vector is not normalized (|psi|^2 = {norm_sq})"
            )));
        }
        Ok(Self {
            n,
            repr: Repr::Pure(Array1::from(amplitudes)),
        })
    }

    /// Wraps an amplitude vector after normalizing it. Intended for user
    /// supplied configuration input.
    pub fn pure_normalized(amplitudes: Vec<Complex64>) -> Result<Self> {
        let norm_sq: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if norm_sq <= 0.0 {
            return Err(Error::InvalidArgument("zero amplitude vector".into()));
        }
        let scale = norm_sq.sqrt();
        Self::pure(amplitudes.into_iter().map(|a| a / scale).collect())
    }

    /// Wraps a density matrix. Checks Hermiticity (1e-12), unit trace
    /// (1e-12), and positive semidefiniteness (eigenvalues >= -1e-10).
    pub fn mixed(matrix: Array2<Complex64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::InvalidArgument("density matrix is not square".into()));
        }
        let n = qubits_for_dim(matrix.nrows())?;
        if n > MAX_MIXED_QUBITS {
            return Err(Error::Capacity(format!(
                "mixed states are capped at {MAX_MIXED_QUBITS} qubits, got {n}"
            )));
        }
        check_hermitian(&matrix, 1e-12)?;
        let trace: Complex64 = matrix.diag().sum();
        if (trace.re - 1.0).abs() > 1e-12 || trace.im.abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "density matrix trace is {trace}, expected 1"
            )));
        }
        if min_eigenvalue_lower_bound(&matrix) < -1e-10
            && hermitian_eigenvalues(&matrix)
                .into_iter()
                .fold(f64::INFINITY, f64::min)
                < -1e-10
        {
            return Err(Error::InvalidArgument(
                "density matrix has a negative eigenvalue".into(),
            ));
        }
        Ok(Self {
            n,
            repr: Repr::Mixed(matrix),
        })
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn is_pure(&self) -> bool {
        matches!(self.repr, Repr::Pure(_))
    }

    /// The amplitude vector, if this state is stored in pure form.
    pub fn amplitudes(&self) -> Option<&Array1<Complex64>> {
        match &self.repr {
            Repr::Pure(a) => Some(a),
            Repr::Mixed(_) => None,
        }
    }

    /// The density matrix of this state (outer product for pure states).
    pub fn density_matrix(&self) -> Array2<Complex64> {
        match &self.repr {
            Repr::Pure(a) => {
                let d = a.len();
                Array2::from_shape_fn((d, d), |(i, j)| a[i] * a[j].conj())
            }
            Repr::Mixed(m) => m.clone(),
        }
    }
}

/// The n-qubit state with amplitude 1/sqrt(n) on each weight-one bit string.
pub fn w_state(n: usize) -> Result<StateDescriptor> {
    if n == 0 {
        return Err(Error::InvalidArgument("w_state requires n >= 1".into()));
    }
    if n > MAX_PURE_QUBITS {
        return Err(Error::Capacity(format!(
            "w_state is capped at {MAX_PURE_QUBITS} qubits, got {n}"
        )));
    }
    let dim = 1usize << n;
    let amp = Complex64::new(1.0 / (n as f64).sqrt(), 0.0);
    let mut amps = vec![Complex64::new(0.0, 0.0); dim];
    for q in 0..n {
        amps[1 << (n - 1 - q)] = amp;
    }
    StateDescriptor::pure(amps)
}

/// Places the bits of `value` (MSB first) at the qubit positions `at`,
/// returning a computational index for an n-qubit register.
fn scatter_bits(at: &[usize], value: usize, n: usize) -> usize {
    let k = at.len();
    let mut idx = 0usize;
    for (j, &q) in at.iter().enumerate() {
        let bit = (value >> (k - 1 - j)) & 1;
        idx |= bit << (n - 1 - q);
    }
    idx
}

/// Reduced density matrix over the (sorted, deduplicated) qubits in `keep`.
pub fn partial_trace(state: &StateDescriptor, keep: &[usize]) -> Result<StateDescriptor> {
    let n = state.num_qubits();
    let mut keep: Vec<usize> = keep.to_vec();
    keep.sort_unstable();
    keep.dedup();
    if keep.is_empty() {
        return Err(Error::InvalidArgument(
            "partial_trace requires a nonempty keep set".into(),
        ));
    }
    if *keep.last().unwrap() >= n {
        return Err(Error::InvalidArgument(format!(
            "keep index {} out of range for {n} qubits",
            keep.last().unwrap()
        )));
    }
    let rest: Vec<usize> = (0..n).filter(|q| !keep.contains(q)).collect();
    if keep.len() > MAX_MIXED_QUBITS {
        return Err(Error::Capacity(format!(
            "reduced state would exceed the {MAX_MIXED_QUBITS}-qubit mixed cap"
        )));
    }
    let rho = state.density_matrix();
    let dk = 1usize << keep.len();
    let de = 1usize << rest.len();
    let mut out = Array2::from_elem((dk, dk), Complex64::new(0.0, 0.0));
    for j in 0..dk {
        for k in 0..dk {
            let mut acc = Complex64::new(0.0, 0.0);
            for e in 0..de {
                let row = scatter_bits(&keep, j, n) | scatter_bits(&rest, e, n);
                let col = scatter_bits(&keep, k, n) | scatter_bits(&rest, e, n);
                acc += rho[(row, col)];
            }
            out[(j, k)] = acc;
        }
    }
    StateDescriptor::mixed(out)
}

/// Tr(rho^2).
pub fn exact_purity(state: &StateDescriptor) -> f64 {
    match &state.repr {
        Repr::Pure(_) => 1.0,
        Repr::Mixed(m) => {
            let mut acc = 0.0;
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    acc += (m[(i, j)] * m[(j, i)]).re;
                }
            }
            acc
        }
    }
}

/// Tr(rho_a rho_b); equals |<a|b>|^2 when both states are pure.
pub fn exact_overlap(a: &StateDescriptor, b: &StateDescriptor) -> Result<f64> {
    if a.num_qubits() != b.num_qubits() {
        return Err(Error::DimensionMismatch(format!(
            "overlap between {}-qubit and {}-qubit states",
            a.num_qubits(),
            b.num_qubits()
        )));
    }
    let value = match (&a.repr, &b.repr) {
        (Repr::Pure(u), Repr::Pure(v)) => {
            let inner: Complex64 = u.iter().zip(v.iter()).map(|(x, y)| x.conj() * y).sum();
            inner.norm_sqr()
        }
        (Repr::Pure(u), Repr::Mixed(m)) | (Repr::Mixed(m), Repr::Pure(u)) => {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..u.len() {
                for j in 0..u.len() {
                    acc += u[i].conj() * m[(i, j)] * u[j];
                }
            }
            acc.re
        }
        (Repr::Mixed(ma), Repr::Mixed(mb)) => {
            let mut acc = 0.0;
            for i in 0..ma.nrows() {
                for j in 0..ma.ncols() {
                    acc += (ma[(i, j)] * mb[(j, i)]).re;
                }
            }
            acc
        }
    };
    Ok(value)
}

/// The single-qubit pure state with Bloch vector `v` (|v| = 1 within 1e-9).
/// The global phase is fixed by making the first nonzero amplitude real and
/// positive.
pub fn bloch_to_state(v: [f64; 3]) -> Result<StateDescriptor> {
    let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "Bloch vector has norm {norm}, expected 1"
        )));
    }
    let [x, y, z] = [v[0] / norm, v[1] / norm, v[2] / norm];
    if 1.0 + z < 1e-14 {
        return StateDescriptor::pure(vec![Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]);
    }
    // |phi><phi| = (I + v.sigma)/2 has eigenvector (1+z, x+iy) up to norm.
    let a = Complex64::new(1.0 + z, 0.0);
    let b = Complex64::new(x, y);
    let scale = (a.norm_sqr() + b.norm_sqr()).sqrt();
    StateDescriptor::pure(vec![a / scale, b / scale])
}

/// Hermiticity check with entrywise tolerance.
pub(crate) fn check_hermitian(m: &Array2<Complex64>, tol: f64) -> Result<()> {
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            let d = m[(i, j)] - m[(j, i)].conj();
            if d.norm() > tol {
                return Err(Error::InvalidArgument(format!(
                    "matrix is not Hermitian at ({i},{j}): residual {}",
                    d.norm()
                )));
            }
        }
    }
    Ok(())
}

/// Cheap Gershgorin lower bound on the smallest eigenvalue.
fn min_eigenvalue_lower_bound(m: &Array2<Complex64>) -> f64 {
    let mut bound = f64::INFINITY;
    for i in 0..m.nrows() {
        let mut radius = 0.0;
        for j in 0..m.ncols() {
            if i != j {
                radius += m[(i, j)].norm();
            }
        }
        bound = bound.min(m[(i, i)].re - radius);
    }
    bound
}

/// Eigenvalues of a complex Hermitian matrix via cyclic Jacobi rotations.
pub fn hermitian_eigenvalues(m: &Array2<Complex64>) -> Vec<f64> {
    let d = m.nrows();
    let mut a = m.clone();
    let scale: f64 = m.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt().max(1.0);
    for _sweep in 0..100 {
        let off: f64 = (0..d)
            .flat_map(|p| ((p + 1)..d).map(move |q| (p, q)))
            .map(|(p, q)| a[(p, q)].norm_sqr())
            .sum();
        if off.sqrt() <= 1e-14 * scale {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[(p, q)];
                let abs = apq.norm();
                if abs <= 1e-300 {
                    continue;
                }
                let phase = apq / abs; // e^{i phi}
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let tau = (aqq - app) / (2.0 * abs);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // U = diag-embedded [[c, s],[-s e^{-i phi}, c e^{-i phi}]];
                // apply A <- U^H A U on columns/rows p and q.
                for r in 0..d {
                    let arp = a[(r, p)];
                    let arq = a[(r, q)];
                    a[(r, p)] = arp * c - arq * s * phase.conj();
                    a[(r, q)] = arp * s + arq * c * phase.conj();
                }
                for col in 0..d {
                    let apc = a[(p, col)];
                    let aqc = a[(q, col)];
                    a[(p, col)] = apc * c - aqc * s * phase;
                    a[(q, col)] = apc * s + aqc * c * phase;
                }
            }
        }
    }
    (0..d).map(|i| a[(i, i)].re).collect()
}

/// Kronecker product of two dense complex matrices.
pub fn kron(a: &Array2<Complex64>, b: &Array2<Complex64>) -> Array2<Complex64> {
    let (ra, ca) = (a.nrows(), a.ncols());
    let (rb, cb) = (b.nrows(), b.ncols());
    Array2::from_shape_fn((ra * rb, ca * cb), |(i, j)| {
        a[(i / rb, j / cb)] * b[(i % rb, j % cb)]
    })
}

/// A Hermitian operator on a power-of-two dimension, e.g. an observable or
/// a classical shadow.
#[derive(Clone, Debug)]
pub struct HermitianOp {
    matrix: Array2<Complex64>,
}

impl HermitianOp {
    pub fn new(matrix: Array2<Complex64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::InvalidArgument("operator is not square".into()));
        }
        qubits_for_dim(matrix.nrows())?;
        check_hermitian(&matrix, 1e-12)?;
        Ok(Self { matrix })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &Array2<Complex64> {
        &self.matrix
    }

    /// Tr(rho O) for a state of matching dimension.
    pub fn expectation(&self, state: &StateDescriptor) -> Result<f64> {
        if state.dim() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "operator dim {} vs state dim {}",
                self.dim(),
                state.dim()
            )));
        }
        match &state.repr {
            Repr::Pure(u) => {
                let mut acc = Complex64::new(0.0, 0.0);
                for i in 0..u.len() {
                    for j in 0..u.len() {
                        acc += u[i].conj() * self.matrix[(i, j)] * u[j];
                    }
                }
                Ok(acc.re)
            }
            Repr::Mixed(m) => {
                let mut acc = 0.0;
                for i in 0..m.nrows() {
                    for j in 0..m.ncols() {
                        acc += (m[(i, j)] * self.matrix[(j, i)]).re;
                    }
                }
                Ok(acc)
            }
        }
    }
}

/// One standard complex Gaussian sample (Box-Muller).
fn gaussian(rng: &mut impl Rng) -> Complex64 {
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    let r = (-2.0 * u1.ln()).sqrt();
    Complex64::new(
        r * (2.0 * std::f64::consts::PI * u2).cos(),
        r * (2.0 * std::f64::consts::PI * u2).sin(),
    )
}

/// Haar-random pure state on n qubits.
pub fn random_pure(n: usize, rng: &mut impl Rng) -> StateDescriptor {
    let dim = 1usize << n;
    let amps: Vec<Complex64> = (0..dim).map(|_| gaussian(rng)).collect();
    StateDescriptor::pure_normalized(amps).expect("gaussian vector is nonzero")
}

/// Random full-rank density matrix on n qubits (normalized Ginibre G G^H).
pub fn random_density(n: usize, rng: &mut impl Rng) -> StateDescriptor {
    let dim = 1usize << n;
    let g = Array2::from_shape_fn((dim, dim), |_| gaussian(rng));
    let mut rho = Array2::from_elem((dim, dim), Complex64::new(0.0, 0.0));
    for i in 0..dim {
        for j in 0..dim {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..dim {
                acc += g[(i, k)] * g[(j, k)].conj();
            }
            rho[(i, j)] = acc;
        }
    }
    let trace: f64 = rho.diag().iter().map(|x| x.re).sum();
    rho.mapv_inplace(|x| x / trace);
    // Symmetrize away round-off so the constructor's Hermiticity check holds.
    for i in 0..dim {
        for j in (i + 1)..dim {
            let avg = (rho[(i, j)] + rho[(j, i)].conj()) * 0.5;
            rho[(i, j)] = avg;
            rho[(j, i)] = avg.conj();
        }
        rho[(i, i)] = Complex64::new(rho[(i, i)].re, 0.0);
    }
    StateDescriptor::mixed(rho).expect("Ginibre construction is PSD with unit trace")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn w_state_single_qubit_is_excited() {
        let w = w_state(1).unwrap();
        let a = w.amplitudes().unwrap();
        assert_abs_diff_eq!(a[0].norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(a[1].re, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn w_state_two_qubits() {
        let w = w_state(2).unwrap();
        let a = w.amplitudes().unwrap();
        let r = 1.0 / 2f64.sqrt();
        assert_abs_diff_eq!(a[0].norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(a[1].re, r, epsilon = 1e-15);
        assert_abs_diff_eq!(a[2].re, r, epsilon = 1e-15);
        assert_abs_diff_eq!(a[3].norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn w_state_five_qubits_has_five_equal_amplitudes() {
        let w = w_state(5).unwrap();
        let a = w.amplitudes().unwrap();
        let nonzero: Vec<_> = a.iter().filter(|x| x.norm() > 0.0).collect();
        assert_eq!(nonzero.len(), 5);
        for x in nonzero {
            assert_abs_diff_eq!(x.re, 1.0 / 5f64.sqrt(), epsilon = 1e-15);
        }
        let norm: f64 = a.iter().map(|x| x.norm_sqr()).sum();
        assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn w_state_zero_qubits_rejected() {
        assert!(matches!(w_state(0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn partial_trace_keep_all_promotes_to_mixed() {
        let w = w_state(2).unwrap();
        let r = partial_trace(&w, &[0, 1]).unwrap();
        assert!(!r.is_pure());
        let expect = w.density_matrix();
        let got = r.density_matrix();
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!((expect[(i, j)] - got[(i, j)]).norm(), 0.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn partial_trace_bell_state_is_maximally_mixed() {
        let r = 1.0 / 2f64.sqrt();
        let bell =
            StateDescriptor::pure(vec![c(r, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(r, 0.0)]).unwrap();
        let reduced = partial_trace(&bell, &[0]).unwrap();
        let m = reduced.density_matrix();
        assert_abs_diff_eq!(m[(0, 0)].re, 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(m[(1, 1)].re, 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(m[(0, 1)].norm(), 0.0, epsilon = 1e-14);
    }

    /// Brute-force partial trace, independent of the library routine: loops
    /// over explicit bit strings instead of scattered indices.
    fn brute_force_reduce(state: &StateDescriptor, keep: &[usize]) -> Array2<Complex64> {
        let n = state.num_qubits();
        let rho = state.density_matrix();
        let k = keep.len();
        let mut out = Array2::from_elem((1 << k, 1 << k), c(0.0, 0.0));
        for row in 0..(1usize << n) {
            for col in 0..(1usize << n) {
                // rows/cols must agree on every traced-out qubit
                let mut same = true;
                for q in 0..n {
                    if !keep.contains(&q) && ((row >> (n - 1 - q)) & 1) != ((col >> (n - 1 - q)) & 1)
                    {
                        same = false;
                        break;
                    }
                }
                if !same {
                    continue;
                }
                let mut jr = 0usize;
                let mut jc = 0usize;
                for (pos, &q) in keep.iter().enumerate() {
                    jr |= ((row >> (n - 1 - q)) & 1) << (k - 1 - pos);
                    jc |= ((col >> (n - 1 - q)) & 1) << (k - 1 - pos);
                }
                out[(jr, jc)] += rho[(row, col)];
            }
        }
        out
    }

    #[test]
    fn partial_trace_w4_matches_brute_force_and_closed_form() {
        let w = w_state(4).unwrap();
        for keep in [[0usize, 1], [1, 3], [0, 2]] {
            let reduced = partial_trace(&w, &keep).unwrap();
            let oracle = brute_force_reduce(&w, &keep);
            let got = reduced.density_matrix();
            for i in 0..4 {
                for j in 0..4 {
                    assert_abs_diff_eq!(
                        (oracle[(i, j)] - got[(i, j)]).norm(),
                        0.0,
                        epsilon = 1e-13
                    );
                }
            }
            // (1/2)|W2><W2| + (1/2)|00><00|
            assert_abs_diff_eq!(got[(0, 0)].re, 0.5, epsilon = 1e-13);
            assert_abs_diff_eq!(got[(1, 1)].re, 0.25, epsilon = 1e-13);
            assert_abs_diff_eq!(got[(2, 2)].re, 0.25, epsilon = 1e-13);
            assert_abs_diff_eq!(got[(1, 2)].re, 0.25, epsilon = 1e-13);
            assert_abs_diff_eq!(got[(3, 3)].norm(), 0.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn partial_trace_empty_keep_rejected() {
        let w = w_state(2).unwrap();
        assert!(matches!(
            partial_trace(&w, &[]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn purity_of_pure_and_mixed_states() {
        assert_abs_diff_eq!(exact_purity(&w_state(3).unwrap()), 1.0, epsilon = 1e-15);
        let half = Array2::from_shape_fn((2, 2), |(i, j)| {
            if i == j {
                c(0.5, 0.0)
            } else {
                c(0.0, 0.0)
            }
        });
        let mixed = StateDescriptor::mixed(half).unwrap();
        assert_abs_diff_eq!(exact_purity(&mixed), 0.5, epsilon = 1e-15);
        let reduced = partial_trace(&w_state(4).unwrap(), &[0, 1]).unwrap();
        assert_abs_diff_eq!(exact_purity(&reduced), 0.5, epsilon = 1e-13);
    }

    #[test]
    fn overlap_examples() {
        let w3 = w_state(3).unwrap();
        assert_abs_diff_eq!(exact_overlap(&w3, &w3).unwrap(), 1.0, epsilon = 1e-14);

        let zero = StateDescriptor::pure(vec![c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        let one = StateDescriptor::pure(vec![c(0.0, 0.0), c(1.0, 0.0)]).unwrap();
        assert_abs_diff_eq!(exact_overlap(&zero, &one).unwrap(), 0.0, epsilon = 1e-15);

        let mut amps = vec![c(0.0, 0.0); 8];
        amps[0b100] = c(1.0, 0.0);
        let e100 = StateDescriptor::pure(amps).unwrap();
        assert_abs_diff_eq!(
            exact_overlap(&w3, &e100).unwrap(),
            1.0 / 3.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn overlap_dimension_mismatch() {
        let a = w_state(2).unwrap();
        let b = w_state(3).unwrap();
        assert!(matches!(
            exact_overlap(&a, &b),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn bloch_axes() {
        let z = bloch_to_state([0.0, 0.0, 1.0]).unwrap();
        let a = z.amplitudes().unwrap();
        assert_abs_diff_eq!(a[0].re, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(a[1].norm(), 0.0, epsilon = 1e-14);

        let x = bloch_to_state([1.0, 0.0, 0.0]).unwrap();
        let a = x.amplitudes().unwrap();
        let r = 1.0 / 2f64.sqrt();
        assert_abs_diff_eq!(a[0].re, r, epsilon = 1e-14);
        assert_abs_diff_eq!(a[1].re, r, epsilon = 1e-14);

        let y = bloch_to_state([0.0, 1.0, 0.0]).unwrap();
        let a = y.amplitudes().unwrap();
        assert_abs_diff_eq!(a[0].re, r, epsilon = 1e-14);
        assert_abs_diff_eq!((a[1] - c(0.0, r)).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn bloch_rejects_non_unit_vector() {
        assert!(bloch_to_state([0.5, 0.0, 0.0]).is_err());
    }

    #[test]
    fn bloch_antipodal_states_are_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let v = loop {
                let v = [
                    2.0 * rng.random::<f64>() - 1.0,
                    2.0 * rng.random::<f64>() - 1.0,
                    2.0 * rng.random::<f64>() - 1.0,
                ];
                let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if norm > 1e-3 {
                    break [v[0] / norm, v[1] / norm, v[2] / norm];
                }
            };
            let plus = bloch_to_state(v).unwrap();
            let minus = bloch_to_state([-v[0], -v[1], -v[2]]).unwrap();
            assert!(exact_overlap(&plus, &minus).unwrap() < 1e-12);
        }
    }

    #[test]
    fn overlap_is_symmetric_on_random_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = random_density(2, &mut rng);
            let b = random_density(2, &mut rng);
            let ab = exact_overlap(&a, &b).unwrap();
            let ba = exact_overlap(&b, &a).unwrap();
            assert_abs_diff_eq!(ab, ba, epsilon = 1e-12);
        }
    }

    #[test]
    fn product_pure_states_have_unit_purity_after_partial_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = random_pure(1, &mut rng);
            let b = random_pure(1, &mut rng);
            let (ua, ub) = (a.amplitudes().unwrap(), b.amplitudes().unwrap());
            let mut amps = vec![c(0.0, 0.0); 4];
            for i in 0..2 {
                for j in 0..2 {
                    amps[2 * i + j] = ua[i] * ub[j];
                }
            }
            let prod = StateDescriptor::pure_normalized(amps).unwrap();
            for keep in [[0usize], [1usize]] {
                let reduced = partial_trace(&prod, &keep).unwrap();
                assert_abs_diff_eq!(exact_purity(&reduced), 1.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn jacobi_eigenvalues_match_known_spectra() {
        // sigma_y has eigenvalues +-1
        let sy = Array2::from_shape_vec(
            (2, 2),
            vec![c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0)],
        )
        .unwrap();
        let mut eig = hermitian_eigenvalues(&sy);
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_abs_diff_eq!(eig[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eig[1], 1.0, epsilon = 1e-12);

        // random PSD has nonnegative spectrum summing to its trace
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rho = random_density(3, &mut rng);
        let eig = hermitian_eigenvalues(&rho.density_matrix());
        let total: f64 = eig.iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-10);
        assert!(eig.into_iter().all(|x| x > -1e-12));
    }

    #[test]
    fn mixed_constructor_rejects_bad_matrices() {
        let not_herm = Array2::from_shape_vec(
            (2, 2),
            vec![c(0.5, 0.0), c(0.3, 0.0), c(0.1, 0.0), c(0.5, 0.0)],
        )
        .unwrap();
        assert!(StateDescriptor::mixed(not_herm).is_err());

        let bad_trace = Array2::from_shape_vec(
            (2, 2),
            vec![c(0.7, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.7, 0.0)],
        )
        .unwrap();
        assert!(StateDescriptor::mixed(bad_trace).is_err());

        let negative = Array2::from_shape_vec(
            (2, 2),
            vec![c(1.2, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-0.2, 0.0)],
        )
        .unwrap();
        assert!(StateDescriptor::mixed(negative).is_err());
    }
}
