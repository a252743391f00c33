//! Stand-in for the physical metasurface: fits per-port response operators
//! from transmission tables, generates calibration count tables, and samples
//! per-shot measurement records from noisy states.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::noise::{self, LossyProbTable, NoiseParams};
use crate::povm::{self, Design, Povm};
use crate::qcore::StateDescriptor;

/// Probe polarizations, in the column order of the transmission and count
/// file formats.
pub const PROBE_LABELS: [&str; 6] = ["H", "V", "H+V", "H-V", "RC", "LC"];

/// The pure state of a named probe polarization.
/// `LC = (|H> + i|V>)/sqrt(2)` and `RC = (|H> - i|V>)/sqrt(2)`.
pub fn probe_state(label: &str) -> Result<StateDescriptor> {
    let r = 1.0 / 2f64.sqrt();
    let amps = match label {
        "H" => vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)],
        "V" => vec![Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)],
        "H+V" => vec![Complex64::new(r, 0.0), Complex64::new(r, 0.0)],
        "H-V" => vec![Complex64::new(r, 0.0), Complex64::new(-r, 0.0)],
        "LC" => vec![Complex64::new(r, 0.0), Complex64::new(0.0, r)],
        "RC" => vec![Complex64::new(r, 0.0), Complex64::new(0.0, -r)],
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown probe polarization `{other}`"
            )))
        }
    };
    StateDescriptor::pure(amps)
}

/// Port labels of a grating, diffraction order +1 first.
fn grating_port_labels(grating: &str) -> [String; 2] {
    match grating {
        "HV" => ["H".into(), "V".into()],
        "HpmV" => ["H+V".into(), "H-V".into()],
        "RCLC" => ["LC".into(), "RC".into()],
        other => [format!("{other}+"), format!("{other}-")],
    }
}

/// Measured transmissions per grating and diffraction order under the six
/// probe polarizations. Order +1 maps to outcome 0.
#[derive(Clone, Debug)]
pub struct TransmissionTable {
    labels: Vec<String>,
    /// entries[grating][order][probe]
    entries: Vec<[[f64; 6]; 2]>,
}

impl TransmissionTable {
    pub fn new(labels: Vec<String>, entries: Vec<[[f64; 6]; 2]>) -> Result<Self> {
        if labels.len() != entries.len() || labels.is_empty() {
            return Err(Error::InvalidArgument(
                "transmission table needs one entry pair per grating".into(),
            ));
        }
        for (label, pair) in labels.iter().zip(&entries) {
            for row in pair {
                for &t in row {
                    if !(0.0..=1.0).contains(&t) {
                        return Err(Error::DataFormat(format!(
                            "transmission {t} for grating {label} is outside [0, 1]"
                        )));
                    }
                }
            }
        }
        Ok(Self { labels, entries })
    }

    pub fn num_gratings(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn transmission(&self, grating: usize, order: usize, probe: usize) -> f64 {
        self.entries[grating][order][probe]
    }

    /// Reads the CSV format `grating,order,H,V,H+V,H-V,RC,LC` with order
    /// values `+1` and `-1`, two rows per grating.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let col = |name: &str| -> Result<usize> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::DataFormat(format!("missing column `{name}`")))
        };
        let grating_col = col("grating")?;
        let order_col = col("order")?;
        let probe_cols: Vec<usize> = PROBE_LABELS
            .iter()
            .map(|p| col(p))
            .collect::<Result<_>>()?;

        let mut labels: Vec<String> = Vec::new();
        let mut entries: Vec<[[f64; 6]; 2]> = Vec::new();
        let mut seen: Vec<[bool; 2]> = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            let grating = record
                .get(grating_col)
                .ok_or_else(|| Error::DataFormat(format!("row {line}: short record")))?
                .to_string();
            let order = match record.get(order_col) {
                Some("+1") | Some("1") => 0usize,
                Some("-1") => 1usize,
                other => {
                    return Err(Error::DataFormat(format!(
                        "row {line}: bad diffraction order {other:?}"
                    )))
                }
            };
            let idx = match labels.iter().position(|l| *l == grating) {
                Some(i) => i,
                None => {
                    labels.push(grating.clone());
                    entries.push([[0.0; 6]; 2]);
                    seen.push([false; 2]);
                    labels.len() - 1
                }
            };
            for (p, &c) in probe_cols.iter().enumerate() {
                let raw = record
                    .get(c)
                    .ok_or_else(|| Error::DataFormat(format!("row {line}: short record")))?;
                entries[idx][order][p] = raw.trim().parse::<f64>().map_err(|_| {
                    Error::DataFormat(format!("row {line}, column {c}: bad float `{raw}`"))
                })?;
            }
            seen[idx][order] = true;
        }
        for (label, orders) in labels.iter().zip(&seen) {
            if !(orders[0] && orders[1]) {
                return Err(Error::DataFormat(format!(
                    "grating {label} is missing a diffraction order row"
                )));
            }
        }
        Self::new(labels, entries)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        let mut header = vec!["grating".to_string(), "order".to_string()];
        header.extend(PROBE_LABELS.iter().map(|s| s.to_string()));
        writer.write_record(&header)?;
        for (g, label) in self.labels.iter().enumerate() {
            for (order, tag) in [(0usize, "+1"), (1usize, "-1")] {
                let mut row = vec![label.clone(), tag.to_string()];
                row.extend(self.entries[g][order].iter().map(|t| t.to_string()));
                writer.write_record(&row)?;
            }
        }
        writer.flush()?;
        Ok(())
    }
}

/// 2x2 Hermitian port response operator stored as its four real degrees of
/// freedom: N = [[a, c], [conj(c), d]] with c = c_re + i c_im.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PortOperator {
    pub a: f64,
    pub d: f64,
    pub c_re: f64,
    pub c_im: f64,
}

impl PortOperator {
    pub fn matrix(&self) -> Array2<Complex64> {
        Array2::from_shape_vec(
            (2, 2),
            vec![
                Complex64::new(self.a, 0.0),
                Complex64::new(self.c_re, self.c_im),
                Complex64::new(self.c_re, -self.c_im),
                Complex64::new(self.d, 0.0),
            ],
        )
        .expect("2x2 shape")
    }

    pub fn eigenvalues(&self) -> (f64, f64) {
        let mean = 0.5 * (self.a + self.d);
        let disc =
            (0.25 * (self.a - self.d).powi(2) + self.c_re.powi(2) + self.c_im.powi(2)).sqrt();
        (mean - disc, mean + disc)
    }

    /// <psi|N|psi> (or Tr(rho N) for mixed probes).
    pub fn response(&self, probe: &StateDescriptor) -> f64 {
        let m = self.matrix();
        let rho = probe.density_matrix();
        let mut acc = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                acc += (rho[(i, j)] * m[(j, i)]).re;
            }
        }
        acc
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FittedPort {
    pub label: String,
    pub bit: u8,
    pub operator: PortOperator,
    /// Worst disagreement against the two redundant probes (H-V and LC).
    pub residual: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FittedGrating {
    pub label: String,
    pub ports: [FittedPort; 2],
}

/// Per-port response operators with the scaling convention that the
/// probability of landing in port (i, b) is response / (K/2).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PortOperatorSet {
    pub gratings: Vec<FittedGrating>,
}

impl PortOperatorSet {
    pub fn half_k(&self) -> usize {
        self.gratings.len()
    }

    pub fn ports(&self) -> usize {
        2 * self.gratings.len()
    }

    pub fn operator(&self, basis: usize, bit: u8) -> &PortOperator {
        &self.gratings[basis].ports[bit as usize].operator
    }

    pub fn port_label(&self, basis: usize, bit: u8) -> &str {
        &self.gratings[basis].ports[bit as usize].label
    }

    /// Port probabilities in (basis, bit) order followed by the lost share.
    pub fn port_distribution(&self, probe: &StateDescriptor) -> Result<Vec<f64>> {
        let scale = 1.0 / self.half_k() as f64;
        let mut out = Vec::with_capacity(self.ports() + 1);
        let mut total = 0.0;
        for grating in &self.gratings {
            for port in &grating.ports {
                let p = scale * port.operator.response(probe);
                if p < -1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "port {} produced negative probability {p}",
                        port.label
                    )));
                }
                let p = p.max(0.0);
                total += p;
                out.push(p);
            }
        }
        if total > 1.0 + 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "port probabilities sum to {total} > 1"
            )));
        }
        out.push((1.0 - total).max(0.0));
        Ok(out)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Closed-form fit of the per-port operators from a transmission table.
///
/// Uses the four independent probes (H, V, H+V, RC):
/// a = T(H), d = T(V), Re(c) = T(H+V) - (a+d)/2, Im(c) = T(RC) - (a+d)/2,
/// and reports the residual against the redundant H-V and LC probes.
pub fn fit_port_operators(table: &TransmissionTable) -> Result<PortOperatorSet> {
    let idx = |label: &str| PROBE_LABELS.iter().position(|p| *p == label).unwrap();
    let (ih, iv, ihpv, ihmv, irc, ilc) = (
        idx("H"),
        idx("V"),
        idx("H+V"),
        idx("H-V"),
        idx("RC"),
        idx("LC"),
    );
    let mut gratings = Vec::with_capacity(table.num_gratings());
    for g in 0..table.num_gratings() {
        let label = table.labels()[g].clone();
        let port_labels = grating_port_labels(&label);
        let mut ports: Vec<FittedPort> = Vec::with_capacity(2);
        for order in 0..2 {
            let t = |p: usize| table.transmission(g, order, p);
            let a = t(ih);
            let d = t(iv);
            let mean = 0.5 * (a + d);
            let c_re = t(ihpv) - mean;
            let c_im = t(irc) - mean;
            let mut op = PortOperator { a, d, c_re, c_im };
            let residual = (t(ihmv) - (mean - c_re))
                .abs()
                .max((t(ilc) - (mean - c_im)).abs());
            if residual > 0.05 {
                return Err(Error::Fit(format!(
                    "grating {label} order {order}: redundant-probe residual {residual:.4}"
                )));
            }
            let (lo, _) = op.eigenvalues();
            if lo < -1e-8 {
                return Err(Error::Fit(format!(
                    "grating {label} order {order}: operator has eigenvalue {lo:.3e}"
                )));
            }
            if lo < 0.0 {
                clip_negative_eigenvalue(&mut op, lo);
            }
            ports.push(FittedPort {
                label: port_labels[order].clone(),
                bit: order as u8,
                operator: op,
                residual,
            });
        }
        let ports: [FittedPort; 2] = [ports.remove(0), ports.remove(0)];
        gratings.push(FittedGrating { label, ports });
    }
    let set = PortOperatorSet { gratings };

    // sub-normalization: the summed response never exceeds (K/2) I
    let mut sum = PortOperator {
        a: 0.0,
        d: 0.0,
        c_re: 0.0,
        c_im: 0.0,
    };
    for grating in &set.gratings {
        for port in &grating.ports {
            sum.a += port.operator.a;
            sum.d += port.operator.d;
            sum.c_re += port.operator.c_re;
            sum.c_im += port.operator.c_im;
        }
    }
    let (_, hi) = sum.eigenvalues();
    if hi > set.half_k() as f64 + 1e-6 {
        return Err(Error::Fit(format!(
            "summed port response has eigenvalue {hi:.6} above K/2 = {}",
            set.half_k()
        )));
    }
    Ok(set)
}

/// Projects away a small negative eigenvalue, keeping the operator Hermitian.
fn clip_negative_eigenvalue(op: &mut PortOperator, lo: f64) {
    let c = Complex64::new(op.c_re, op.c_im);
    // eigenvector for `lo`: (c, lo - a), or a basis vector when off-diagonal
    // terms vanish
    let (v0, v1) = if c.norm() > 1e-14 {
        (c, Complex64::new(lo - op.a, 0.0))
    } else if op.a < op.d {
        (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0))
    } else {
        (Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0))
    };
    let norm_sq = v0.norm_sqr() + v1.norm_sqr();
    if norm_sq <= 0.0 {
        return;
    }
    op.a -= lo * v0.norm_sqr() / norm_sq;
    op.d -= lo * v1.norm_sqr() / norm_sq;
    let cross = v0 * v1.conj() / norm_sq;
    op.c_re -= lo * cross.re;
    op.c_im -= lo * cross.im;
}

/// Photon counts per port for a set of probe inputs.
#[derive(Clone, Debug)]
pub struct CountTable {
    pub port_labels: Vec<String>,
    pub rows: Vec<CountRow>,
}

#[derive(Clone, Debug)]
pub struct CountRow {
    pub input: String,
    pub counts: Vec<u64>,
    pub injected: u64,
}

impl CountRow {
    pub fn lost(&self) -> u64 {
        self.injected - self.counts.iter().sum::<u64>()
    }

    /// Port frequencies followed by the lost share; sums to exactly 1.
    pub fn distribution(&self) -> Vec<f64> {
        let inj = self.injected as f64;
        let mut out: Vec<f64> = self.counts.iter().map(|&c| c as f64 / inj).collect();
        out.push(self.lost() as f64 / inj);
        out
    }
}

impl CountTable {
    pub fn validate(&self) -> Result<()> {
        for row in &self.rows {
            if row.counts.len() != self.port_labels.len() {
                return Err(Error::DataFormat(format!(
                    "row {} has {} counts for {} ports",
                    row.input,
                    row.counts.len(),
                    self.port_labels.len()
                )));
            }
            if row.counts.iter().sum::<u64>() > row.injected {
                return Err(Error::DataFormat(format!(
                    "row {}: counts exceed injected photons",
                    row.input
                )));
            }
        }
        Ok(())
    }

    /// Reads the CSV format `input,<port labels...>,injected`.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        if headers.len() < 3 || headers.get(0) != Some("input") {
            return Err(Error::DataFormat(
                "count table must start with an `input` column".into(),
            ));
        }
        let last = headers.len() - 1;
        if headers.get(last) != Some("injected") {
            return Err(Error::DataFormat(
                "count table must end with an `injected` column".into(),
            ));
        }
        let port_labels: Vec<String> = (1..last)
            .map(|i| headers.get(i).unwrap().to_string())
            .collect();
        let mut rows = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() != headers.len() {
                return Err(Error::DataFormat(format!(
                    "row {line}: expected {} fields, got {}",
                    headers.len(),
                    record.len()
                )));
            }
            let parse = |i: usize| -> Result<u64> {
                record.get(i).unwrap().trim().parse::<u64>().map_err(|_| {
                    Error::DataFormat(format!(
                        "row {line}, column {i}: bad count `{}`",
                        record.get(i).unwrap()
                    ))
                })
            };
            let counts: Vec<u64> = (1..last).map(parse).collect::<Result<_>>()?;
            rows.push(CountRow {
                input: record.get(0).unwrap().to_string(),
                counts,
                injected: parse(last)?,
            });
        }
        let table = Self { port_labels, rows };
        table.validate()?;
        Ok(table)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        let mut header = vec!["input".to_string()];
        header.extend(self.port_labels.iter().cloned());
        header.push("injected".to_string());
        writer.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.input.clone()];
            rec.extend(row.counts.iter().map(|c| c.to_string()));
            rec.push(row.injected.to_string());
            writer.write_record(&rec)?;
        }
        writer.flush()?;
        Ok(())
    }
}

fn draw_categorical(rng: &mut ChaCha8Rng, cumulative: &[f64]) -> usize {
    let u: f64 = rng.random();
    cumulative.partition_point(|&c| c <= u)
}

fn multinomial_counts(
    ops: &PortOperatorSet,
    probe: &StateDescriptor,
    shots: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<u64>> {
    let dist = ops.port_distribution(probe)?;
    let ports = ops.ports();
    let mut cumulative = Vec::with_capacity(ports);
    let mut acc = 0.0;
    for &p in &dist[..ports] {
        acc += p;
        cumulative.push(acc);
    }
    let mut counts = vec![0u64; ports];
    for _ in 0..shots {
        let k = draw_categorical(rng, &cumulative);
        if k < ports {
            counts[k] += 1;
        }
    }
    Ok(counts)
}

/// Multinomial draw over K ports plus loss for a single probe state.
/// Counts are returned in (basis, bit) port order; the lost outcome is
/// `shots` minus the sum.
pub fn emulate_counts(
    ops: &PortOperatorSet,
    probe: &StateDescriptor,
    shots: u64,
    seed: u64,
) -> Result<Vec<u64>> {
    if probe.num_qubits() != 1 {
        return Err(Error::InvalidArgument(
            "count emulation takes a single-qubit probe".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    multinomial_counts(ops, probe, shots, &mut rng)
}

/// Emulated calibration table for the six standard probes. Each probe row
/// uses an independent seed stream.
pub fn emulate_probe_table(ops: &PortOperatorSet, shots: u64, seed: u64) -> Result<CountTable> {
    let port_labels: Vec<String> = ops
        .gratings
        .iter()
        .flat_map(|g| g.ports.iter().map(|p| p.label.clone()))
        .collect();
    let mut rows = Vec::new();
    for (row, label) in PROBE_LABELS.iter().enumerate() {
        let probe = probe_state(label)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(row as u64);
        let counts = multinomial_counts(ops, &probe, shots, &mut rng)?;
        rows.push(CountRow {
            input: label.to_string(),
            counts,
            injected: shots,
        });
    }
    Ok(CountTable { port_labels, rows })
}

/// One surviving measurement record, packed: `group` is the basis string in
/// radix K/2 (qubit 0 most significant) and `bits` the outcome string.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shot {
    pub group: u32,
    pub bits: u32,
}

#[derive(Clone, Debug)]
pub struct Repetition {
    pub shots: Vec<Shot>,
    pub lost: u64,
}

/// Sampled measurement records over one or more repetitions.
#[derive(Clone, Debug)]
pub struct ShotSet {
    pub design: Design,
    pub n: usize,
    pub shots_per_rep: u64,
    pub seed: u64,
    pub reps: Vec<Repetition>,
}

impl ShotSet {
    pub fn half_k(&self) -> usize {
        self.design.half_k()
    }

    pub fn total_survived(&self) -> u64 {
        self.reps.iter().map(|r| r.shots.len() as u64).sum()
    }

    /// Photons sent at the device: survived plus lost, over all repetitions.
    pub fn total_attempts(&self) -> u64 {
        self.reps
            .iter()
            .map(|r| r.shots.len() as u64 + r.lost)
            .sum()
    }

    /// A view containing only repetition `rep`.
    pub fn single_rep(&self, rep: usize) -> ShotSet {
        ShotSet {
            design: self.design,
            n: self.n,
            shots_per_rep: self.shots_per_rep,
            seed: self.seed,
            reps: vec![self.reps[rep].clone()],
        }
    }

    /// Writes one CSV per repetition (`rep_###.csv` with columns
    /// `basis_string,bit_string`, basis digits 1-based) plus a JSON sidecar
    /// per repetition and a `shotset.json` descriptor.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        #[derive(Serialize)]
        struct Descriptor<'a> {
            design: &'a Design,
            n: usize,
            shots_per_rep: u64,
            reps: usize,
            seed: u64,
        }
        let descr = serde_json::to_string_pretty(&Descriptor {
            design: &self.design,
            n: self.n,
            shots_per_rep: self.shots_per_rep,
            reps: self.reps.len(),
            seed: self.seed,
        })?;
        std::fs::write(dir.join("shotset.json"), descr)?;
        for (r, rep) in self.reps.iter().enumerate() {
            let mut csv_out = String::from("basis_string,bit_string\n");
            for shot in &rep.shots {
                let digits = decode_digits(shot.group, self.n, self.half_k());
                let bits = decode_bits(shot.bits, self.n);
                let basis: String = digits.iter().map(|d| char::from(b'1' + d)).collect();
                csv_out.push_str(&basis);
                csv_out.push(',');
                csv_out.push_str(&bits);
                csv_out.push('\n');
            }
            let mut file = std::fs::File::create(dir.join(format!("rep_{r:03}.csv")))?;
            file.write_all(csv_out.as_bytes())?;
            #[derive(Serialize)]
            struct Sidecar {
                shots: u64,
                lost: u64,
                seed: u64,
            }
            let sidecar = serde_json::to_string_pretty(&Sidecar {
                shots: self.shots_per_rep,
                lost: rep.lost,
                seed: self.seed,
            })?;
            std::fs::write(dir.join(format!("rep_{r:03}.json")), sidecar)?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<ShotSet> {
        #[derive(Deserialize)]
        struct Descriptor {
            design: Design,
            n: usize,
            shots_per_rep: u64,
            reps: usize,
            seed: u64,
        }
        let descr: Descriptor =
            serde_json::from_str(&std::fs::read_to_string(dir.join("shotset.json"))?)?;
        let half_k = descr.design.half_k();
        let mut reps = Vec::with_capacity(descr.reps);
        for r in 0..descr.reps {
            let csv_path = dir.join(format!("rep_{r:03}.csv"));
            let content = std::fs::read_to_string(&csv_path)?;
            let mut shots = Vec::new();
            for (i, line) in content.lines().enumerate() {
                if i == 0 {
                    continue; // header
                }
                let (basis, bits) = line.split_once(',').ok_or_else(|| {
                    Error::DataFormat(format!("{}: line {i} lacks a comma", csv_path.display()))
                })?;
                if basis.len() != descr.n || bits.len() != descr.n {
                    return Err(Error::DataFormat(format!(
                        "{}: line {i} has wrong string length",
                        csv_path.display()
                    )));
                }
                let mut group = 0u32;
                for ch in basis.chars() {
                    let digit = (ch as u32).wrapping_sub('1' as u32);
                    if digit >= half_k as u32 {
                        return Err(Error::DataFormat(format!(
                            "{}: line {i} has basis digit `{ch}`",
                            csv_path.display()
                        )));
                    }
                    group = group * half_k as u32 + digit;
                }
                let mut packed = 0u32;
                for ch in bits.chars() {
                    match ch {
                        '0' => packed <<= 1,
                        '1' => packed = (packed << 1) | 1,
                        _ => {
                            return Err(Error::DataFormat(format!(
                                "{}: line {i} has outcome bit `{ch}`",
                                csv_path.display()
                            )))
                        }
                    }
                }
                shots.push(Shot {
                    group,
                    bits: packed,
                });
            }
            #[derive(Deserialize)]
            struct Sidecar {
                lost: u64,
            }
            let sidecar: Sidecar = serde_json::from_str(&std::fs::read_to_string(
                dir.join(format!("rep_{r:03}.json")),
            )?)?;
            reps.push(Repetition {
                shots,
                lost: sidecar.lost,
            });
        }
        Ok(ShotSet {
            design: descr.design,
            n: descr.n,
            shots_per_rep: descr.shots_per_rep,
            seed: descr.seed,
            reps,
        })
    }
}

pub(crate) fn decode_digits(group: u32, n: usize, half_k: usize) -> Vec<u8> {
    let mut digits = vec![0u8; n];
    let mut rest = group as usize;
    for q in (0..n).rev() {
        digits[q] = (rest % half_k) as u8;
        rest /= half_k;
    }
    digits
}

fn decode_bits(bits: u32, n: usize) -> String {
    (0..n)
        .map(|q| {
            if (bits >> (n - 1 - q)) & 1 == 1 {
                '1'
            } else {
                '0'
            }
        })
        .collect()
}

/// Per-repetition sampling budget: either a fixed number of photons sent at
/// the device, or a target number of recorded (surviving) outcomes.
#[derive(Clone, Copy, Debug)]
enum Budget {
    Attempts(u64),
    Outcomes(u64),
}

impl Budget {
    fn per_rep(self) -> u64 {
        match self {
            Budget::Attempts(v) | Budget::Outcomes(v) => v,
        }
    }
}

fn collect_with_budget(
    budget: Budget,
    mut attempt: impl FnMut() -> Option<Shot>,
) -> Result<Repetition> {
    let mut stored = Vec::new();
    let mut lost = 0u64;
    match budget {
        Budget::Attempts(total) => {
            for _ in 0..total {
                match attempt() {
                    Some(shot) => stored.push(shot),
                    None => lost += 1,
                }
            }
        }
        Budget::Outcomes(target) => {
            let cap = target.saturating_mul(1000).max(1_000_000);
            let mut attempts = 0u64;
            while (stored.len() as u64) < target {
                if attempts >= cap {
                    return Err(Error::InvalidArgument(format!(
                        "survival rate below 0.1%: {} outcomes after {attempts} attempts",
                        stored.len()
                    )));
                }
                attempts += 1;
                match attempt() {
                    Some(shot) => stored.push(shot),
                    None => lost += 1,
                }
            }
        }
    }
    Ok(Repetition {
        shots: stored,
        lost,
    })
}

fn sample_with_budget(
    state: &StateDescriptor,
    povm: &Povm,
    params: &NoiseParams,
    budget: Budget,
    reps: usize,
    seed: u64,
) -> Result<ShotSet> {
    if povm.design() != params.design {
        return Err(Error::DimensionMismatch(format!(
            "povm design {} vs noise design {}",
            povm.design(),
            params.design
        )));
    }
    let n = state.num_qubits();
    let table_ok = povm::checked_group_count(n, povm.half_k()).is_ok();

    let repetitions: Result<Vec<Repetition>> = if table_ok {
        let table = povm::born_table(state, povm)?;
        let lossy = noise::apply_composite(&table, params)?;
        let prior = table.group_prior();
        let dim = 1usize << n;
        let mut cumulative = Vec::with_capacity(lossy.num_groups() * dim);
        let mut acc = 0.0;
        for g in 0..lossy.num_groups() {
            let cond = lossy
                .conditional(g)
                .expect("exact tables have no empty groups");
            let s = lossy.survival(g);
            for &c in cond {
                acc += prior * s * c;
                cumulative.push(acc);
            }
        }
        let survived_total = acc;
        (0..reps)
            .into_par_iter()
            .map(|rep| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(rep as u64);
                collect_with_budget(budget, || {
                    let u: f64 = rng.random();
                    if u >= survived_total {
                        return None;
                    }
                    let flat = cumulative.partition_point(|&c| c <= u);
                    Some(Shot {
                        group: (flat / dim) as u32,
                        bits: (flat % dim) as u32,
                    })
                })
            })
            .collect()
    } else if state.is_pure() {
        let amps = state.amplitudes().expect("checked pure").to_vec();
        let gammas: Vec<noise::Mat2> = (0..params.half_k())
            .map(|i| noise::local_gamma(params, i))
            .collect();
        let kets: Vec<[Array1<Complex64>; 2]> = (0..povm.half_k())
            .map(|i| [povm.port(i, 0).ket.clone(), povm.port(i, 1).ket.clone()])
            .collect();
        let weight = povm.weight();
        (0..reps)
            .into_par_iter()
            .map(|rep| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(rep as u64);
                let mut current: Vec<Complex64> = Vec::with_capacity(amps.len());
                collect_with_budget(budget, || {
                    current.clear();
                    current.extend_from_slice(&amps);
                    let mut group = 0u32;
                    let mut bits = 0u32;
                    for _q in 0..n {
                        let half = current.len() / 2;
                        // ideal port probabilities for this qubit
                        let mut u: f64 = rng.random();
                        let mut chosen = (povm.half_k() - 1, 1u8);
                        'outer: for (i, pair) in kets.iter().enumerate() {
                            for (b, ket) in pair.iter().enumerate() {
                                let mut norm_sq = 0.0;
                                for j in 0..half {
                                    let amp = ket[0].conj() * current[j]
                                        + ket[1].conj() * current[half + j];
                                    norm_sq += amp.norm_sqr();
                                }
                                let p = weight * norm_sq;
                                if u < p {
                                    chosen = (i, b as u8);
                                    break 'outer;
                                }
                                u -= p;
                            }
                        }
                        let (i, b_ideal) = chosen;
                        // collapse onto the chosen ideal port
                        let ket = &kets[i][b_ideal as usize];
                        let mut next = Vec::with_capacity(half);
                        let mut norm_sq = 0.0;
                        for j in 0..half {
                            let amp =
                                ket[0].conj() * current[j] + ket[1].conj() * current[half + j];
                            norm_sq += amp.norm_sqr();
                            next.push(amp);
                        }
                        let norm = norm_sq.sqrt();
                        if norm > 0.0 {
                            for a in &mut next {
                                *a /= norm;
                            }
                        }
                        current = next;
                        // readout transition on the outcome bit
                        let gamma = &gammas[i];
                        let stay: f64 = gamma[b_ideal as usize][b_ideal as usize];
                        let b_obs = if rng.random::<f64>() < stay {
                            b_ideal
                        } else {
                            1 - b_ideal
                        };
                        // per-port photon loss discards the whole shot
                        if rng.random::<f64>() < params.bases[i].p_pl[b_obs as usize] {
                            return None;
                        }
                        group = group * povm.half_k() as u32 + i as u32;
                        bits = (bits << 1) | b_obs as u32;
                    }
                    Some(Shot { group, bits })
                })
            })
            .collect()
    } else {
        return Err(Error::Capacity(format!(
            "no sampling path for a mixed state on {n} qubits"
        )));
    };

    Ok(ShotSet {
        design: povm.design(),
        n,
        shots_per_rep: budget.per_rep(),
        seed,
        reps: repetitions?,
    })
}

/// Samples noisy measurement records, sending `shots` photons per
/// repetition (lost shots counted, not replaced). Uses the dense-table path
/// whenever the full outcome table fits, otherwise a per-qubit sequential
/// path for pure states; the two are statistically interchangeable. Each
/// repetition draws from its own seed stream, so results do not depend on
/// scheduling.
pub fn sample_shots(
    state: &StateDescriptor,
    povm: &Povm,
    params: &NoiseParams,
    shots: u64,
    reps: usize,
    seed: u64,
) -> Result<ShotSet> {
    sample_with_budget(state, povm, params, Budget::Attempts(shots), reps, seed)
}

/// Samples until `outcomes` shots survive per repetition, the way detection
/// records accumulate in practice: lost photons are tallied but do not count
/// toward the budget.
pub fn sample_outcomes(
    state: &StateDescriptor,
    povm: &Povm,
    params: &NoiseParams,
    outcomes: u64,
    reps: usize,
    seed: u64,
) -> Result<ShotSet> {
    sample_with_budget(state, povm, params, Budget::Outcomes(outcomes), reps, seed)
}

/// Empirical conditional frequencies per basis group, pooling every
/// repetition in the set. Groups that saw no shot stay empty; survival mass
/// comes from the lost-shot accounting.
pub fn empirical_table(shots: &ShotSet) -> Result<LossyProbTable> {
    let n = shots.n;
    let half_k = shots.half_k();
    let num_groups = povm::checked_group_count(n, half_k)?;
    let dim = 1usize << n;
    if shots.total_survived() == 0 {
        return Err(Error::NoSurvivingShots);
    }
    let mut counts: Vec<u64> = vec![0; num_groups * dim];
    for rep in &shots.reps {
        for shot in &rep.shots {
            counts[shot.group as usize * dim + shot.bits as usize] += 1;
        }
    }
    let total_attempts = shots.total_attempts() as f64;
    let mut groups = Vec::with_capacity(num_groups);
    let mut survival = Vec::with_capacity(num_groups);
    for g in 0..num_groups {
        let slice = &counts[g * dim..(g + 1) * dim];
        let m: u64 = slice.iter().sum();
        if m == 0 {
            groups.push(None);
            survival.push(1.0);
            continue;
        }
        let cond: Vec<f64> = slice.iter().map(|&c| c as f64 / m as f64).collect();
        // P(survive & group) = prior * s; invert with the exact prior
        let s = (m as f64 / total_attempts) * (half_k as f64).powi(n as i32);
        groups.push(Some(cond));
        survival.push(s.clamp(f64::MIN_POSITIVE, 1.0));
    }
    Ok(LossyProbTable::from_parts(n, half_k, groups, survival))
}
