//! Minimal deterministic SVG emission for histograms and curves. No
//! graphics stack: figures are plain text with a fixed 800x500 viewport, so
//! identical inputs produce identical bytes.

use metashadow::calibrate::{SweepFamily, ValidationPoint};
use metashadow::estimate::{EstimateReport, Estimator};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 780.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 445.0;
const COLORS: [&str; 2] = ["#1f77b4", "#d62728"];

fn fmt(v: f64) -> String {
    let v = if v == 0.0 { 0.0 } else { v }; // normalize -0
    format!("{v:.6}")
}

fn fmt_tick(v: f64) -> String {
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v:.3}")
}

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        LEFT + (v - self.x_min) / (self.x_max - self.x_min) * (RIGHT - LEFT)
    }

    fn y(&self, v: f64) -> f64 {
        BOTTOM - (v - self.y_min) / (self.y_max - self.y_min) * (BOTTOM - TOP)
    }
}

fn open_svg(out: &mut String) {
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"monospace\" font-size=\"13\">\n"
    ));
    out.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"#ffffff\"/>\n"
    ));
}

fn axes(out: &mut String, frame: &Frame, x_label: &str, y_label: &str) {
    out.push_str(&format!(
        "<line x1=\"{LEFT}\" y1=\"{BOTTOM}\" x2=\"{RIGHT}\" y2=\"{BOTTOM}\" stroke=\"#000\"/>\n"
    ));
    out.push_str(&format!(
        "<line x1=\"{LEFT}\" y1=\"{TOP}\" x2=\"{LEFT}\" y2=\"{BOTTOM}\" stroke=\"#000\"/>\n"
    ));
    for i in 0..=5 {
        let t = i as f64 / 5.0;
        let xv = frame.x_min + t * (frame.x_max - frame.x_min);
        let yv = frame.y_min + t * (frame.y_max - frame.y_min);
        let xp = frame.x(xv);
        let yp = frame.y(yv);
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{BOTTOM}\" x2=\"{}\" y2=\"{}\" stroke=\"#000\"/>\n",
            fmt(xp),
            fmt(xp),
            fmt(BOTTOM + 5.0)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            fmt(xp),
            fmt(BOTTOM + 20.0),
            fmt_tick(xv)
        ));
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{LEFT}\" y2=\"{}\" stroke=\"#000\"/>\n",
            fmt(LEFT - 5.0),
            fmt(yp),
            fmt(yp)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            fmt(LEFT - 8.0),
            fmt(yp + 4.0),
            fmt_tick(yv)
        ));
    }
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
        fmt((LEFT + RIGHT) / 2.0),
        fmt(HEIGHT - 14.0),
        x_label
    ));
    out.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        fmt((TOP + BOTTOM) / 2.0),
        fmt((TOP + BOTTOM) / 2.0),
        y_label
    ));
}

fn legend(out: &mut String, labels: &[String]) {
    for (i, label) in labels.iter().enumerate() {
        let y = TOP + 16.0 + 18.0 * i as f64;
        out.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{}\"/>\n",
            fmt(RIGHT - 150.0),
            fmt(y - 10.0),
            COLORS[i % 2]
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">{}</text>\n",
            fmt(RIGHT - 132.0),
            fmt(y),
            label
        ));
    }
}

fn vertical_guide(out: &mut String, frame: &Frame, x: f64, label: &str) {
    if x < frame.x_min || x > frame.x_max {
        return;
    }
    let xp = frame.x(x);
    out.push_str(&format!(
        "<line x1=\"{}\" y1=\"{TOP}\" x2=\"{}\" y2=\"{BOTTOM}\" stroke=\"#555\" \
         stroke-dasharray=\"6 4\"/>\n",
        fmt(xp),
        fmt(xp)
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"#555\">{}</text>\n",
        fmt(xp),
        fmt(TOP - 8.0),
        label
    ));
}

fn horizontal_guide(out: &mut String, frame: &Frame, y: f64, label: &str) {
    if y < frame.y_min || y > frame.y_max {
        return;
    }
    let yp = frame.y(y);
    out.push_str(&format!(
        "<line x1=\"{LEFT}\" y1=\"{}\" x2=\"{RIGHT}\" y2=\"{}\" stroke=\"#555\" \
         stroke-dasharray=\"6 4\"/>\n",
        fmt(yp),
        fmt(yp)
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"start\" fill=\"#555\">{}</text>\n",
        fmt(LEFT + 6.0),
        fmt(yp - 5.0),
        label
    ));
}

fn series_label(report: &EstimateReport) -> String {
    if report.mitigated {
        "mitigated".to_string()
    } else {
        "unmitigated".to_string()
    }
}

/// Overlaid per-repetition histograms for up to two reports.
pub fn render_histogram(reports: &[EstimateReport]) -> Result<String, String> {
    if reports.is_empty() || reports.len() > 2 {
        return Err("histograms take one or two reports".into());
    }
    for r in reports {
        if r.values.is_empty() {
            return Err("report holds no repetition values".into());
        }
    }
    let fidelity_like = reports.iter().any(|r| r.estimator == Estimator::Fidelity);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for r in reports {
        for &v in &r.values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if fidelity_like {
        lo = lo.min(1.0);
        hi = hi.max(1.0);
    }
    let pad = (hi - lo).max(1e-9) * 0.05;
    let (lo, hi) = (lo - pad, hi + pad);

    const BINS: usize = 24;
    let mut counts = vec![vec![0usize; BINS]; reports.len()];
    let mut peak = 0usize;
    for (s, r) in reports.iter().enumerate() {
        for &v in &r.values {
            let bin = (((v - lo) / (hi - lo) * BINS as f64) as usize).min(BINS - 1);
            counts[s][bin] += 1;
            peak = peak.max(counts[s][bin]);
        }
    }
    let frame = Frame {
        x_min: lo,
        x_max: hi,
        y_min: 0.0,
        y_max: peak as f64 * 1.08,
    };

    let mut out = String::new();
    open_svg(&mut out);
    let bin_w = (RIGHT - LEFT) / BINS as f64;
    for (s, series) in counts.iter().enumerate() {
        for (b, &count) in series.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let x = LEFT + b as f64 * bin_w;
            let y = frame.y(count as f64);
            out.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\" \
                 fill-opacity=\"0.55\"/>\n",
                fmt(x),
                fmt(y),
                fmt(bin_w),
                fmt(BOTTOM - y),
                COLORS[s % 2]
            ));
        }
    }
    if fidelity_like {
        vertical_guide(&mut out, &frame, 1.0, "truth");
    }
    axes(
        &mut out,
        &frame,
        match reports[0].estimator {
            Estimator::Fidelity => "estimated fidelity",
            Estimator::Purity => "estimated purity",
        },
        "repetitions",
    );
    legend(&mut out, &reports.iter().map(series_label).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    Ok(out)
}

/// Which quantity a set of reports sweeps.
fn sweep_axis(reports: &[EstimateReport]) -> (&'static str, Vec<f64>) {
    let hs: Vec<f64> = reports.iter().map(|r| r.h).collect();
    if hs.windows(2).any(|w| w[0] != w[1]) {
        return ("error scale h", hs);
    }
    let sizes: Vec<f64> = reports
        .iter()
        .map(|r| r.subsystem.as_ref().map_or(0, |s| s.len()) as f64)
        .collect();
    if sizes.windows(2).any(|w| w[0] != w[1]) {
        return ("subsystem size", sizes);
    }
    let ns: Vec<f64> = reports.iter().map(|r| r.n as f64).collect();
    if ns.windows(2).any(|w| w[0] != w[1]) {
        return ("qubits", ns);
    }
    ("report index", (0..reports.len()).map(|i| i as f64).collect())
}

/// (x, mean, std) triples for one curve.
type SeriesPoints = Vec<(f64, f64, f64)>;

/// Mean with std error bars against the swept variable, one series per
/// mitigation setting.
pub fn render_report_curve(reports: &[EstimateReport]) -> Result<String, String> {
    if reports.is_empty() {
        return Err("curves need at least one report".into());
    }
    if reports.iter().any(|r| r.values.is_empty()) {
        return Err("report holds no repetition values".into());
    }
    let (x_label, xs) = sweep_axis(reports);
    let mut series: Vec<(String, SeriesPoints)> = Vec::new();
    for mitigated in [true, false] {
        let mut points: SeriesPoints = reports
            .iter()
            .zip(&xs)
            .filter(|(r, _)| r.mitigated == mitigated)
            .map(|(r, &x)| (x, r.mean, r.std))
            .collect();
        if points.is_empty() {
            continue;
        }
        points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        series.push((
            if mitigated { "mitigated" } else { "unmitigated" }.to_string(),
            points,
        ));
    }

    let mut x_lo = f64::INFINITY;
    let mut x_hi = f64::NEG_INFINITY;
    let mut y_lo = f64::INFINITY;
    let mut y_hi = f64::NEG_INFINITY;
    for (_, points) in &series {
        for &(x, m, s) in points {
            x_lo = x_lo.min(x);
            x_hi = x_hi.max(x);
            y_lo = y_lo.min(m - s);
            y_hi = y_hi.max(m + s);
        }
    }
    if reports.iter().any(|r| r.estimator == Estimator::Fidelity) {
        y_lo = y_lo.min(1.0);
        y_hi = y_hi.max(1.0);
    }
    let x_pad = (x_hi - x_lo).max(1e-9) * 0.05;
    let y_pad = (y_hi - y_lo).max(1e-9) * 0.08;
    let frame = Frame {
        x_min: x_lo - x_pad,
        x_max: x_hi + x_pad,
        y_min: y_lo - y_pad,
        y_max: y_hi + y_pad,
    };

    let mut out = String::new();
    open_svg(&mut out);
    horizontal_guide(&mut out, &frame, 1.0, "truth");
    for (s, (_, points)) in series.iter().enumerate() {
        let color = COLORS[s % 2];
        let path: Vec<String> = points
            .iter()
            .map(|&(x, m, _)| format!("{},{}", fmt(frame.x(x)), fmt(frame.y(m))))
            .collect();
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n",
            path.join(" "),
            color
        ));
        for &(x, m, sd) in points {
            let xp = frame.x(x);
            let (y_top, y_bot) = (frame.y(m + sd), frame.y(m - sd));
            out.push_str(&format!(
                "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{}\"/>\n",
                fmt(xp),
                fmt(y_top),
                fmt(xp),
                fmt(y_bot),
                color
            ));
            out.push_str(&format!(
                "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{}\"/>\n",
                fmt(xp),
                fmt(frame.y(m)),
                color
            ));
        }
    }
    axes(
        &mut out,
        &frame,
        x_label,
        match reports[0].estimator {
            Estimator::Fidelity => "fidelity (mean +- std)",
            Estimator::Purity => "purity (mean +- std)",
        },
    );
    legend(
        &mut out,
        &series.iter().map(|(l, _)| l.clone()).collect::<Vec<_>>(),
    );
    out.push_str("</svg>\n");
    Ok(out)
}

/// Model-validation fidelity against theta, one series per state family.
pub fn render_validation_curve(points: &[ValidationPoint]) -> Result<String, String> {
    if points.is_empty() {
        return Err("validation curve holds no points".into());
    }
    let mut y_lo = points.iter().map(|p| p.fidelity).fold(1.0f64, f64::min);
    y_lo = y_lo.min(0.99);
    let frame = Frame {
        x_min: 0.0,
        x_max: std::f64::consts::TAU,
        y_min: y_lo - (1.0 - y_lo).max(1e-4) * 0.2,
        y_max: 1.0005,
    };

    let mut out = String::new();
    open_svg(&mut out);
    horizontal_guide(&mut out, &frame, 0.99, "0.99");
    let mut labels = Vec::new();
    for (s, family) in [SweepFamily::Xz, SweepFamily::Yz].into_iter().enumerate() {
        let mut pts: Vec<&ValidationPoint> =
            points.iter().filter(|p| p.family == family).collect();
        if pts.is_empty() {
            continue;
        }
        pts.sort_by(|a, b| a.theta.partial_cmp(&b.theta).unwrap());
        let path: Vec<String> = pts
            .iter()
            .map(|p| format!("{},{}", fmt(frame.x(p.theta)), fmt(frame.y(p.fidelity))))
            .collect();
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n",
            path.join(" "),
            COLORS[s % 2]
        ));
        labels.push(
            match family {
                SweepFamily::Xz => "xz family",
                SweepFamily::Yz => "yz family",
            }
            .to_string(),
        );
    }
    axes(&mut out, &frame, "theta (rad)", "Bhattacharyya fidelity");
    legend(&mut out, &labels);
    out.push_str("</svg>\n");
    Ok(out)
}
