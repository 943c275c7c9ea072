//! Per-episode regret traces and their CSV form.

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "episode,k_value_estimate,realized_return,exact_policy_value,cumulative_regret,seed";

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub episode: u64,
    pub k_value_estimate: Option<f64>,
    pub realized_return: f64,
    pub exact_policy_value: Option<f64>,
    pub cumulative_regret: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegretTrace {
    pub rows: Vec<TraceRow>,
}

impl RegretTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn final_regret(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.cumulative_regret)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.episode,
                opt(r.k_value_estimate),
                r.realized_return,
                opt(r.exact_policy_value),
                opt(r.cumulative_regret),
                r.seed
            );
        }
        out
    }

    pub fn from_csv(text: &str, file: &str) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse { file: file.to_string(), line, message };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == CSV_HEADER => {}
            Some((_, h)) => return Err(parse_err(1, format!("unexpected header {h:?}"))),
            None => return Err(parse_err(1, "empty file".into())),
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            let n = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(parse_err(n, format!("expected 6 fields, found {}", f.len())));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|e| parse_err(n, format!("{s:?}: {e}")));
            let maybe = |s: &str| if s.trim().is_empty() { Ok(None) } else { num(s).map(Some) };
            let int = |s: &str| s.trim().parse::<u64>().map_err(|e| parse_err(n, format!("{s:?}: {e}")));
            rows.push(TraceRow {
                episode: int(f[0])?,
                k_value_estimate: maybe(f[1])?,
                realized_return: num(f[2])?,
                exact_policy_value: maybe(f[3])?,
                cumulative_regret: maybe(f[4])?,
                seed: int(f[5])?,
            });
        }
        Ok(RegretTrace { rows })
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Accumulates exact regret when the policy value is only computed every
/// `stride` episodes: between evaluations the latest exact value is used.
#[derive(Debug, Clone)]
pub struct RegretAccumulator {
    optimal: Option<f64>,
    stride: usize,
    last_exact: Option<f64>,
    total: f64,
    seed: u64,
    trace: RegretTrace,
}

impl RegretAccumulator {
    pub fn new(optimal: Option<f64>, stride: usize, seed: u64) -> Self {
        RegretAccumulator { optimal, stride, last_exact: None, total: 0.0, seed, trace: RegretTrace::default() }
    }

    /// Whether episode `k` (1-based) gets an exact evaluation.
    pub fn wants_exact(&self, k: u64) -> bool {
        self.optimal.is_some() && self.stride > 0 && (k - 1).is_multiple_of(self.stride as u64)
    }

    pub fn push(&mut self, k: u64, estimate: Option<f64>, realized: f64, exact: Option<f64>) {
        if exact.is_some() {
            self.last_exact = exact;
        }
        let cumulative = match (self.optimal, self.last_exact) {
            (Some(v), Some(e)) => {
                self.total += v - e;
                Some(self.total)
            }
            _ => None,
        };
        self.trace.rows.push(TraceRow {
            episode: k,
            k_value_estimate: estimate,
            realized_return: realized,
            exact_policy_value: exact,
            cumulative_regret: cumulative,
            seed: self.seed,
        });
    }

    pub fn finish(self) -> RegretTrace {
        self.trace
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mut acc = RegretAccumulator::new(Some(2.5), 2, 7);
        for k in 1..=5u64 {
            let exact = acc.wants_exact(k).then_some(2.0 + 0.1 * k as f64);
            acc.push(k, Some(3.0), 1.0 / 3.0, exact);
        }
        let t = acc.finish();
        assert_eq!(t.rows[1].exact_policy_value, None);
        // Episode 2 reuses the value from episode 1.
        assert!((t.rows[1].cumulative_regret.unwrap() - 0.8).abs() < 1e-12);
        let back = RegretTrace::from_csv(&t.to_csv(), "t.csv").unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn malformed_csv_reports_line() {
        let text = format!("{CSV_HEADER}\n1,2,3,4,5,6\n2,2,x,4,5,6\n");
        match RegretTrace::from_csv(&text, "bad.csv") {
            Err(Error::Parse { file, line, .. }) => {
                assert_eq!(file, "bad.csv");
                assert_eq!(line, 3);
            }
            other => panic!("{other:?}"),
        }
    }
}
