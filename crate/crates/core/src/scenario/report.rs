//! Summary documents comparing computed numbers with reference values.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// |computed − target| ≤ tolerance.
    Within,
    /// computed ≤ target + tolerance.
    AtMost,
    /// computed ≥ target − tolerance.
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub name: String,
    pub computed: f64,
    pub target: f64,
    pub tolerance: f64,
    pub relation: Relation,
    pub pass: bool,
}

impl Comparison {
    pub fn new(
        name: impl Into<String>,
        computed: f64,
        target: f64,
        tolerance: f64,
        relation: Relation,
    ) -> Self {
        let pass = match relation {
            Relation::Within => (computed - target).abs() <= tolerance,
            Relation::AtMost => computed <= target + tolerance,
            Relation::AtLeast => computed >= target - tolerance,
        };
        Self {
            name: name.into(),
            computed,
            target,
            tolerance,
            relation,
            pass,
        }
    }

    pub fn within(name: impl Into<String>, computed: f64, target: f64, tolerance: f64) -> Self {
        Self::new(name, computed, target, tolerance, Relation::Within)
    }

    pub fn at_most(name: impl Into<String>, computed: f64, bound: f64) -> Self {
        Self::new(name, computed, bound, 0.0, Relation::AtMost)
    }

    pub fn at_least(name: impl Into<String>, computed: f64, bound: f64) -> Self {
        Self::new(name, computed, bound, 0.0, Relation::AtLeast)
    }

    pub fn line(&self) -> String {
        let rel = match self.relation {
            Relation::Within => "within",
            Relation::AtMost => "at_most",
            Relation::AtLeast => "at_least",
        };
        format!(
            "{} {}: computed {} target {} tolerance {} ({rel})",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            num(self.computed),
            num(self.target),
            num(self.tolerance),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub name: String,
    pub value: f64,
    pub sigma: Option<f64>,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub seed: u64,
    pub n_trials: u64,
    pub quantities: Vec<Quantity>,
    pub comparisons: Vec<Comparison>,
    pub notes: Vec<String>,
}

fn num(v: f64) -> String {
    if v == 0.0 || (1e-4..1e6).contains(&v.abs()) {
        format!("{v:.6}")
    } else {
        format!("{v:.6e}")
    }
}

impl Report {
    pub fn new(scenario: impl Into<String>, seed: u64, n_trials: u64) -> Self {
        Self {
            scenario: scenario.into(),
            seed,
            n_trials,
            ..Self::default()
        }
    }

    pub fn value(&mut self, name: impl Into<String>, value: f64, unit: &str) {
        self.quantities.push(Quantity {
            name: name.into(),
            value,
            sigma: None,
            unit: unit.into(),
        });
    }

    pub fn estimate(&mut self, name: impl Into<String>, value: f64, sigma: f64, unit: &str) {
        self.quantities.push(Quantity {
            name: name.into(),
            value,
            sigma: Some(sigma),
            unit: unit.into(),
        });
    }

    pub fn check(&mut self, c: Comparison) {
        self.comparisons.push(c);
    }

    pub fn note(&mut self, n: impl Into<String>) {
        self.notes.push(n.into());
    }

    pub fn failures(&self) -> Vec<&Comparison> {
        self.comparisons.iter().filter(|c| !c.pass).collect()
    }

    pub fn all_passed(&self) -> bool {
        self.comparisons.iter().all(|c| c.pass)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }
}

/// Plain-text summary; sections without entries are left out.
pub fn emit_report(report: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "scenario: {}", report.scenario);
    let _ = writeln!(out, "seed: {}", report.seed);
    let _ = writeln!(out, "trials: {}", report.n_trials);
    if !report.quantities.is_empty() {
        let _ = writeln!(out, "\n[results]");
        for q in &report.quantities {
            let unit = if q.unit.is_empty() {
                String::new()
            } else {
                format!(" {}", q.unit)
            };
            match q.sigma {
                Some(s) => {
                    let _ = writeln!(out, "{} = {} ± {}{unit}", q.name, num(q.value), num(s));
                }
                None => {
                    let _ = writeln!(out, "{} = {}{unit}", q.name, num(q.value));
                }
            }
        }
    }
    if !report.comparisons.is_empty() {
        let _ = writeln!(out, "\n[comparisons]");
        for c in &report.comparisons {
            let _ = writeln!(out, "{}", c.line());
        }
    }
    if !report.notes.is_empty() {
        let _ = writeln!(out, "\n[notes]");
        for n in &report.notes {
            let _ = writeln!(out, "{n}");
        }
    }
    let fails = report.failures().len();
    let _ = writeln!(
        out,
        "\nsummary: {} PASS, {fails} FAIL",
        report.comparisons.len() - fails
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle() -> Report {
        let mut r = Report::new("g2", 7, 100);
        r.estimate("g2_zero", 0.01, 0.005, "");
        r.check(Comparison::within("kappa", 31.71, 31.7, 0.16));
        r.check(Comparison::within("waist", 7.0, 6.5, 0.2));
        r.check(Comparison::at_most("g2_zero", 0.01, 0.2));
        r.check(Comparison::at_least("gain", 0.05, 0.0));
        r
    }

    #[test]
    fn exactly_one_fail_line() {
        let text = emit_report(&bundle());
        assert_eq!(text.lines().filter(|l| l.starts_with("FAIL")).count(), 1);
        assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 3);
        assert!(text.contains("summary: 3 PASS, 1 FAIL"));
    }

    #[test]
    fn byte_identical_and_sections_omitted() {
        assert_eq!(emit_report(&bundle()), emit_report(&bundle()));
        assert_eq!(bundle().to_json(), bundle().to_json());
        let empty = emit_report(&Report::new("spectra", 1, 1));
        assert!(
            !empty.contains("[results]")
                && !empty.contains("[comparisons]")
                && !empty.contains("[notes]")
        );
    }

    #[test]
    fn relations() {
        assert!(Comparison::at_most("x", 0.2, 0.2).pass);
        assert!(!Comparison::at_most("x", 0.21, 0.2).pass);
        assert!(!Comparison::at_least("x", -0.1, 0.0).pass);
        assert!(!Comparison::within("x", f64::NAN, 0.0, 1.0).pass);
    }
}
