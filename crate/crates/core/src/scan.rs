//! Labelled (x, estimate, sigma) tables exchanged between scenarios, estimators and fits.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub label: String,
    /// Name of the independent variable including its unit, used as CSV column header.
    pub x_label: String,
    pub x: Vec<f64>,
    pub estimate: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl ScanResult {
    pub fn new(
        label: impl Into<String>,
        x_label: impl Into<String>,
        x: Vec<f64>,
        estimate: Vec<f64>,
        sigma: Vec<f64>,
    ) -> Result<Self> {
        if x.len() != estimate.len() || x.len() != sigma.len() {
            return Err(Error::InvalidInput(format!(
                "scan columns differ in length: {} / {} / {}",
                x.len(),
                estimate.len(),
                sigma.len()
            )));
        }
        if let Some(s) = sigma.iter().find(|s| !(**s >= 0.0)) {
            return Err(Error::InvalidInput(format!("negative or NaN sigma {s}")));
        }
        Ok(Self {
            label: label.into(),
            x_label: x_label.into(),
            x,
            estimate,
            sigma,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// CSV with `# key: value` metadata lines followed by `x_label,estimate,sigma` rows.
    pub fn write_csv<W: Write>(
        &self,
        mut w: W,
        metadata: &[(&str, String)],
    ) -> std::io::Result<()> {
        writeln!(w, "# label: {}", self.label)?;
        for (k, v) in metadata {
            writeln!(w, "# {k}: {v}")?;
        }
        writeln!(w, "{},estimate,sigma", self.x_label)?;
        for i in 0..self.len() {
            writeln!(w, "{},{},{}", self.x[i], self.estimate[i], self.sigma[i])?;
        }
        Ok(())
    }

    pub fn read_csv(text: &str) -> Result<Self> {
        let mut label = String::new();
        let mut header = None;
        let (mut x, mut est, mut sig) = (Vec::new(), Vec::new(), Vec::new());
        for line in text.lines() {
            if let Some(meta) = line.strip_prefix("# ") {
                if let Some(l) = meta.strip_prefix("label: ") {
                    label = l.to_string();
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            if header.is_none() {
                header = Some(line.split(',').next().unwrap_or_default().to_string());
                continue;
            }
            let cols: Vec<f64> = line
                .split(',')
                .map(|c| {
                    c.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("{line}: {e}")))
                })
                .collect::<Result<_>>()?;
            if cols.len() != 3 {
                return Err(Error::Parse(format!("expected 3 columns: {line}")));
            }
            x.push(cols[0]);
            est.push(cols[1]);
            sig.push(cols[2]);
        }
        let x_label = header.ok_or_else(|| Error::Parse("missing CSV header".into()))?;
        Self::new(label, x_label, x, est, sig)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let s = ScanResult::new(
            "p_s",
            "detuning_MHz",
            vec![-10.0, 0.0, 12.5],
            vec![0.1, 0.5, 0.2],
            vec![0.01, 0.0, 0.02],
        )
        .unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf, &[("seed", "7".into())]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("# seed: 7\ndetuning_MHz,estimate,sigma\n"));
        assert_eq!(ScanResult::read_csv(&text).unwrap(), s);
    }

    #[test]
    fn invariants_enforced() {
        assert!(ScanResult::new("a", "x", vec![1.0], vec![], vec![]).is_err());
        assert!(ScanResult::new("a", "x", vec![1.0], vec![1.0], vec![-1.0]).is_err());
    }
}
