//! The JSON report document and its plain-text rendering.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::ser::Serialize;
use serde::{Deserialize, Serialize as SerializeDerive};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::{Error, Result};
use crate::estimate::FitResult;
use crate::inference::{infinite_as_null, SequenceResult, TestReport};
use crate::model::{LmlcSpec, ModelKind};
use crate::simulate::{SimulationReport, Strategy};

#[derive(Debug, Clone, Default, PartialEq, SerializeDerive, Deserialize)]
pub struct InputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub models: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub counts: Vec<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, SerializeDerive, Deserialize)]
pub struct ModelSection {
    pub source: String,
    pub kind: ModelKind,
    pub k: usize,
    pub t: usize,
    pub r: usize,
    pub c: usize,
    /// `k − t + r`.
    pub df: usize,
}

impl ModelSection {
    pub fn new(source: &str, spec: &LmlcSpec) -> Result<Self> {
        Ok(Self {
            source: source.to_owned(),
            kind: spec.kind(),
            k: spec.k(),
            t: spec.t(),
            r: spec.r(),
            c: spec.c(),
            df: (spec.k() + spec.r()).saturating_sub(spec.t()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, SerializeDerive, Deserialize)]
pub struct FitSection {
    pub model: String,
    pub lambda: Option<f64>,
    pub theta: Vec<f64>,
    pub m_hat: Vec<f64>,
    pub multipliers: Vec<f64>,
    #[serde(with = "infinite_as_null")]
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub kkt_residual: f64,
}

impl FitSection {
    pub fn new(model: &str, fit: &FitResult) -> Self {
        Self {
            model: model.to_owned(),
            lambda: fit.phi.lambda(),
            theta: fit.theta_hat.iter().copied().collect(),
            m_hat: fit.m_hat.iter().copied().collect(),
            multipliers: fit.multipliers.iter().copied().collect(),
            objective: fit.objective,
            converged: fit.converged,
            iterations: fit.iterations,
            kkt_residual: fit.kkt_residual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, SerializeDerive, Deserialize)]
pub struct SequenceSection {
    pub b_star: usize,
    pub per_test_level: f64,
}

impl From<&SequenceResult> for SequenceSection {
    fn from(s: &SequenceResult) -> Self {
        Self {
            b_star: s.b_star,
            per_test_level: s.per_test_level,
        }
    }
}

/// Fixture probabilities against the reference cells.
#[derive(Debug, Clone, PartialEq, SerializeDerive, Deserialize)]
pub struct FixtureSection {
    pub reference: Vec<f64>,
    pub from_theta_s: Vec<f64>,
    pub from_theta_mh: Vec<f64>,
    pub max_deviation_s: f64,
    pub max_deviation_mh: f64,
}

#[derive(Debug, Clone, Default, PartialEq, SerializeDerive, Deserialize)]
pub struct ReportFile {
    pub command: String,
    pub input: InputSection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub model: Vec<ModelSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fit: Vec<FitSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub test: Vec<TestReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<SequenceSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table1: Option<FixtureSection>,
}

/// Pretty printing with every float at 17 significant digits.
struct Precise<'a>(PrettyFormatter<'a>);

impl Formatter for Precise<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }
    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Serialize any value with 17 significant digits per float.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Precise(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

impl ReportFile {
    pub fn to_json(&self) -> Result<String> {
        to_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}

// ---------------------------------------------------------------------------
// Plain text

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn lambda_label(l: f64) -> String {
    for (num, den) in [(2, 3), (1, 3), (-1, 2)] {
        if (l - num as f64 / den as f64).abs() < 1e-12 {
            return format!("{num}/{den}");
        }
    }
    format!("{l}")
}

fn vector(out: &mut String, name: &str, v: &[f64]) {
    let cells: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    let _ = writeln!(out, "  {name:<12} {}", cells.join(" "));
}

pub fn render_fit(out: &mut String, f: &FitSection) {
    let _ = writeln!(
        out,
        "fit {} (lambda {}): converged {} in {} iterations, kkt {:.1e}, objective {:.4}",
        f.model,
        opt(f.lambda),
        f.converged,
        f.iterations,
        f.kkt_residual,
        f.objective
    );
    vector(out, "theta", &f.theta);
    vector(out, "m_hat", &f.m_hat);
}

pub fn render_test(out: &mut String, t: &TestReport) {
    let stat = if t.infinite { "inf".into() } else { format!("{:.4}", t.statistic) };
    let _ = writeln!(
        out,
        "{:?}: statistic {stat}, df {}, p-value {:.4}, critical {:.4} at level {:.4}: {}",
        t.kind,
        t.df,
        t.p_value,
        t.critical_value,
        t.level_used,
        if t.reject { "reject" } else { "accept" }
    );
}

pub fn render_fixtures(out: &mut String, t: &FixtureSection) {
    let _ = writeln!(out, "{:<6} {:>9} {:>8} {:>9}", "cell", "reference", "theta_S", "theta_MH");
    for (idx, p) in t.reference.iter().enumerate() {
        let cell = format!("({},{})", idx / 4 + 1, idx % 4 + 1);
        let _ = writeln!(
            out,
            "{cell:<6} {p:>9.4} {:>8.4} {:>9.4}",
            t.from_theta_s[idx],
            t.from_theta_mh[idx]
        );
    }
    let _ = writeln!(
        out,
        "max deviation: theta_S {:.1e}, theta_MH {:.1e}",
        t.max_deviation_s, t.max_deviation_mh
    );
}

pub fn render_sizes(out: &mut String, r: &SimulationReport) {
    if r.sizes.is_empty() {
        return;
    }
    let _ = writeln!(out, "sizes");
    let _ = writeln!(out, "{:>7} {:>6} {:>22} {:>6} {:>8}  dale", "lambda2", "lambda1", "strategy", "n", "size");
    for e in &r.sizes {
        let _ = writeln!(
            out,
            "{:>7} {:>6} {:>22} {:>6} {:>8.4}  {}{}",
            lambda_label(e.lambda2),
            lambda_label(e.lambda1),
            e.strategy.label(),
            e.n,
            e.size,
            e.dale.map_or("-".into(), |d| format!("{d:?}")),
            failures(&e.failures)
        );
    }
}

fn failures(f: &[u64]) -> String {
    if f.iter().all(|&x| x == 0) {
        String::new()
    } else {
        format!("  failures {f:?}")
    }
}

pub fn render_powers(out: &mut String, r: &SimulationReport) {
    if r.powers.is_empty() {
        return;
    }
    let mut points: Vec<usize> = r.powers.iter().map(|e| e.point).collect();
    points.sort_unstable();
    points.dedup();
    let _ = write!(out, "powers\n{:>22} {:>7} {:>6} {:>5}", "strategy", "lambda2", "lambda1", "n");
    for p in &points {
        let _ = write!(out, " {:>7}", format!("i={p}"));
    }
    out.push('\n');
    let mut keys: Vec<(Strategy, f64, f64, u64)> = Vec::new();
    for e in &r.powers {
        let key = (e.strategy, e.lambda2, e.lambda1, e.n);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    for (s, l2, l1, n) in keys {
        let _ = write!(out, "{:>22} {:>7} {:>6} {:>5}", s.label(), lambda_label(l2), lambda_label(l1), n);
        for &p in &points {
            let v = r.power(s, l1, l2, n, p).map(|e| e.power);
            let _ = write!(out, " {:>7}", opt(v));
        }
        out.push('\n');
    }
}

pub fn render_gamma(out: &mut String, r: &SimulationReport) {
    if r.gamma.is_empty() {
        return;
    }
    let _ = writeln!(out, "gamma");
    for g in &r.gamma {
        let _ = writeln!(
            out,
            "{:>7} {:>6} {:>22} {:>6} {:>9}",
            lambda_label(g.lambda2),
            lambda_label(g.lambda1),
            g.strategy.label(),
            g.n,
            opt(g.gamma)
        );
    }
}

pub fn render_simulation(out: &mut String, r: &SimulationReport) {
    render_sizes(out, r);
    render_powers(out, r);
    render_gamma(out, r);
}
