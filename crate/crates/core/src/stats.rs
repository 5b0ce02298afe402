//! Paired two-tailed t-test and Cohen's d over the two round metrics.
//!
//! The Student t distribution is evaluated through the regularized
//! incomplete beta function, computed with a modified-Lentz continued
//! fraction.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::ExperimentTable;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum StatsError {
    #[error("paired differences have zero variance")]
    ZeroVariance,
    #[error("sample lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("need at least 2 rounds, got {0}")]
    TooFewRounds(usize),
}

const LANCZOS_G: f64 = 7.0;
#[allow(clippy::excessive_precision)]
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// ln Γ(x) for x > 0 (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection keeps the series in its accurate range.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const EPS: f64 = 1e-16;
    const TINY: f64 = 1e-300;
    const MAX_ITER: usize = 10_000;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b).
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// P(|T| ≥ |t|) for Student's t with `df` degrees of freedom.
pub fn student_t_two_tailed(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    regularized_incomplete_beta(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// P(T ≤ t).
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * student_t_two_tailed(t, df);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (n − 1 denominator).
fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Method A values in `x`, Method B values in `y`, paired by round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSample {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl PairedSample {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self, StatsError> {
        if x.len() != y.len() {
            return Err(StatsError::LengthMismatch(x.len(), y.len()));
        }
        if x.len() < 2 {
            return Err(StatsError::TooFewPairs(x.len()));
        }
        Ok(PairedSample { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// y − x per pair.
    pub fn diffs(&self) -> Vec<f64> {
        self.x.iter().zip(&self.y).map(|(x, y)| y - x).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTestResult {
    pub t: f64,
    pub df: usize,
    pub p: f64,
    pub mean_x: f64,
    pub mean_y: f64,
    pub mean_diff: f64,
}

pub fn paired_t_test(sample: &PairedSample) -> Result<PairedTestResult, StatsError> {
    let d = sample.diffs();
    let n = d.len();
    let mean_diff = mean(&d);
    let sd = variance(&d).sqrt();
    if sd == 0.0 || !sd.is_finite() {
        return Err(StatsError::ZeroVariance);
    }
    let t = mean_diff / (sd / (n as f64).sqrt());
    let df = n - 1;
    Ok(PairedTestResult {
        t,
        df,
        p: student_t_two_tailed(t, df as f64),
        mean_x: mean(&sample.x),
        mean_y: mean(&sample.y),
        mean_diff,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Magnitude {
    Negligible,
    Small,
    Medium,
    Large,
}

impl Magnitude {
    /// Conventional bands at 0.2 / 0.5 / 0.8.
    pub fn of(d: f64) -> Self {
        match d.abs() {
            v if v < 0.2 => Magnitude::Negligible,
            v if v < 0.5 => Magnitude::Small,
            v if v < 0.8 => Magnitude::Medium,
            _ => Magnitude::Large,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Magnitude::Negligible => "negligible",
            Magnitude::Small => "small",
            Magnitude::Medium => "medium",
            Magnitude::Large => "large",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectSizes {
    /// mean_diff / sd_diff
    pub d_z: f64,
    /// mean_diff / sqrt((var_x + var_y) / 2)
    pub d_pooled: f64,
}

pub fn cohens_d(sample: &PairedSample) -> Result<EffectSizes, StatsError> {
    let d = sample.diffs();
    let mean_diff = mean(&d);
    let sd_diff = variance(&d).sqrt();
    let pooled = ((variance(&sample.x) + variance(&sample.y)) / 2.0).sqrt();
    if sd_diff == 0.0 || pooled == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok(EffectSizes {
        d_z: mean_diff / sd_diff,
        d_pooled: mean_diff / pooled,
    })
}

// --- report ------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Items,
    Stages,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Items => "items",
            Metric::Stages => "stages",
        }
    }

    fn label(self) -> &'static str {
        match self {
            Metric::Items => "optimization items",
            Metric::Stages => "stages covered",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: Metric,
    pub mean_a: f64,
    pub mean_b: f64,
    pub test: Result<PairedTestResult, StatsError>,
    pub effect: Result<EffectSizes, StatsError>,
}

/// A published value and the half-unit of its last printed digit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reference {
    pub label: &'static str,
    pub printed: &'static str,
    pub value: f64,
    pub half_unit: f64,
}

/// Summary statistics published alongside the reference rounds.
pub const PUBLISHED_REFERENCES: [Reference; 8] = [
    Reference {
        label: "mean items, method A",
        printed: "5.85",
        value: 5.85,
        half_unit: 0.005,
    },
    Reference {
        label: "mean stages, method A",
        printed: "1.95",
        value: 1.95,
        half_unit: 0.005,
    },
    Reference {
        label: "mean items, method B",
        printed: "6.35",
        value: 6.35,
        half_unit: 0.005,
    },
    Reference {
        label: "mean stages, method B",
        printed: "4.20",
        value: 4.20,
        half_unit: 0.005,
    },
    Reference {
        label: "p, items",
        printed: "0.043",
        value: 0.043,
        half_unit: 0.0005,
    },
    Reference {
        label: "p, stages",
        printed: "2.34e-6",
        value: 2.34e-6,
        half_unit: 0.005e-6,
    },
    Reference {
        label: "Cohen's d, items",
        printed: "0.42",
        value: 0.42,
        half_unit: 0.005,
    },
    Reference {
        label: "Cohen's d, stages",
        printed: "1.95",
        value: 1.95,
        half_unit: 0.005,
    },
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceReport {
    pub rounds: usize,
    pub metrics: Vec<MetricSummary>,
}

pub fn summarize(table: &ExperimentTable) -> Result<SignificanceReport, StatsError> {
    let rounds = table.rows.len();
    if rounds < 2 {
        return Err(StatsError::TooFewRounds(rounds));
    }
    let rows = table.metric_rows();
    let metrics = [(Metric::Items, 0, 2), (Metric::Stages, 1, 3)]
        .into_iter()
        .map(|(metric, ai, bi)| {
            let x: Vec<f64> = rows.iter().map(|r| r[ai] as f64).collect();
            let y: Vec<f64> = rows.iter().map(|r| r[bi] as f64).collect();
            let sample = PairedSample::new(x, y)?;
            Ok(MetricSummary {
                metric,
                mean_a: mean(sample.x()),
                mean_b: mean(sample.y()),
                test: paired_t_test(&sample),
                effect: cohens_d(&sample),
            })
        })
        .collect::<Result<Vec<_>, StatsError>>()?;
    Ok(SignificanceReport { rounds, metrics })
}

fn fmt_p(p: f64) -> String {
    if p < 1e-3 {
        format!("{p:.3e}")
    } else {
        format!("{p:.4}")
    }
}

impl SignificanceReport {
    pub fn metric(&self, metric: Metric) -> &MetricSummary {
        self.metrics
            .iter()
            .find(|m| m.metric == metric)
            .expect("both metrics are summarized")
    }

    /// Computed counterparts of [`PUBLISHED_REFERENCES`], in the same order.
    /// Cohen's d entries carry both variants.
    pub fn computed_references(&self) -> Vec<Vec<f64>> {
        let items = self.metric(Metric::Items);
        let stages = self.metric(Metric::Stages);
        let p = |m: &MetricSummary| m.test.as_ref().map(|t| vec![t.p]).unwrap_or_default();
        let d = |m: &MetricSummary| {
            m.effect
                .as_ref()
                .map(|e| vec![e.d_z, e.d_pooled])
                .unwrap_or_default()
        };
        vec![
            vec![items.mean_a],
            vec![stages.mean_a],
            vec![items.mean_b],
            vec![stages.mean_b],
            p(items),
            p(stages),
            d(items),
            d(stages),
        ]
    }

    /// Labels of references the computed values do not reproduce.
    pub fn divergences(&self) -> Vec<&'static str> {
        PUBLISHED_REFERENCES
            .iter()
            .zip(self.computed_references())
            .filter(|(r, computed)| !computed.iter().any(|c| (c - r.value).abs() <= r.half_unit))
            .map(|(r, _)| r.label)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,mean_A,mean_B,t,df,p,d_z,d_pooled\n");
        for m in &self.metrics {
            let (t, df, p) = match &m.test {
                Ok(r) => (
                    format!("{:.6}", r.t),
                    r.df.to_string(),
                    format!("{:.6e}", r.p),
                ),
                Err(_) => ("NA".into(), "NA".into(), "NA".into()),
            };
            let (dz, dp) = match &m.effect {
                Ok(e) => (format!("{:.6}", e.d_z), format!("{:.6}", e.d_pooled)),
                Err(_) => ("NA".into(), "NA".into()),
            };
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{t},{df},{p},{dz},{dp}",
                m.metric.as_str(),
                m.mean_a,
                m.mean_b
            );
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# Significance report\n");
        let _ = writeln!(
            out,
            "Paired two-tailed t-test over {} rounds (Method A = direct prompt, Method B = scatter pipeline; differences are B − A).\n",
            self.rounds
        );
        out.push_str("| Metric | Mean A | Mean B | Mean diff | t | df | p | d_z | d_pooled |\n");
        out.push_str("|---|---|---|---|---|---|---|---|---|\n");
        for m in &self.metrics {
            let (diff, t, df, p) = match &m.test {
                Ok(r) => (
                    format!("{:.2}", r.mean_diff),
                    format!("{:.4}", r.t),
                    r.df.to_string(),
                    fmt_p(r.p),
                ),
                Err(e) => (
                    format!("{:.2}", m.mean_b - m.mean_a),
                    e.to_string(),
                    "-".into(),
                    "-".into(),
                ),
            };
            let (dz, dp) = match &m.effect {
                Ok(e) => (
                    format!("{:.4} ({})", e.d_z, Magnitude::of(e.d_z).as_str()),
                    format!("{:.4} ({})", e.d_pooled, Magnitude::of(e.d_pooled).as_str()),
                ),
                Err(e) => (e.to_string(), "-".into()),
            };
            let _ = writeln!(
                out,
                "| {} | {:.2} | {:.2} | {diff} | {t} | {df} | {p} | {dz} | {dp} |",
                m.metric.label(),
                m.mean_a,
                m.mean_b
            );
        }

        out.push_str("\n## Conclusions\n\n");
        for m in &self.metrics {
            let line = match &m.test {
                Ok(r) if r.p < 0.05 => format!(
                    "- {}: difference is significant at alpha = 0.05 (p = {}).",
                    m.metric.label(),
                    fmt_p(r.p)
                ),
                Ok(r) => format!(
                    "- {}: no significant difference at alpha = 0.05 (p = {}).",
                    m.metric.label(),
                    fmt_p(r.p)
                ),
                Err(e) => format!(
                    "- {}: test not computed ({e}); no significance claimed.",
                    m.metric.label()
                ),
            };
            out.push_str(&line);
            out.push('\n');
        }

        out.push_str("\n## Divergence from published reference values\n\n");
        out.push_str(
            "Published summary statistics next to the values computed from the per-round data above. \
             Cohen's d is shown as d_z / d_pooled.\n\n",
        );
        out.push_str("| Quantity | Published | Computed | Status |\n|---|---|---|---|\n");
        for (r, computed) in PUBLISHED_REFERENCES.iter().zip(self.computed_references()) {
            let shown = if computed.is_empty() {
                "n/a".to_string()
            } else if r.label.starts_with("p,") {
                computed
                    .iter()
                    .map(|c| fmt_p(*c))
                    .collect::<Vec<_>>()
                    .join(" / ")
            } else {
                computed
                    .iter()
                    .map(|c| format!("{c:.2}"))
                    .collect::<Vec<_>>()
                    .join(" / ")
            };
            let matches = computed.iter().any(|c| (c - r.value).abs() <= r.half_unit);
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} |",
                r.label,
                r.printed,
                shown,
                if matches { "matches" } else { "DIVERGES" }
            );
        }
        out
    }
}
