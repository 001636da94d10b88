//! Success-rate accounting and the summary table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{EpisodeResult, Outcome};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BatchError {
    #[error("batch has no trials")]
    EmptyBatch,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialBatch {
    pub results: Vec<EpisodeResult>,
}

impl TrialBatch {
    pub fn n(&self) -> usize {
        self.results.len()
    }

    pub fn successes(&self) -> usize {
        self.results
            .iter()
            .filter(|r| r.outcome == Outcome::Success)
            .count()
    }
}

/// Fraction of trials that succeeded.
pub fn success_rate(batch: &TrialBatch) -> Result<f64, BatchError> {
    ratio(batch.successes(), batch.n())
}

fn ratio(successes: usize, trials: usize) -> Result<f64, BatchError> {
    if trials == 0 {
        return Err(BatchError::EmptyBatch);
    }
    Ok(successes as f64 / trials as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub task: String,
    pub scenario: String,
    pub successes: usize,
    pub trials: usize,
    pub sr: f64,
}

/// Per-scenario rows, then one row per task, then the overall average.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub scenarios: Vec<SummaryRow>,
    pub tasks: Vec<SummaryRow>,
    pub average: Option<SummaryRow>,
}

impl SummaryTable {
    /// `groups` holds (task, scenario, batch) in presentation order.
    pub fn build(groups: &[(String, String, TrialBatch)]) -> Result<Self, BatchError> {
        let mut table = SummaryTable::default();
        let mut by_task: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();
        let (mut all_s, mut all_n) = (0, 0);
        for (order, (task, scenario, batch)) in groups.iter().enumerate() {
            let (s, n) = (batch.successes(), batch.n());
            table.scenarios.push(SummaryRow {
                task: task.clone(),
                scenario: scenario.clone(),
                successes: s,
                trials: n,
                sr: success_rate(batch)?,
            });
            let e = by_task.entry(task.as_str()).or_insert((order, 0, 0));
            e.1 += s;
            e.2 += n;
            all_s += s;
            all_n += n;
        }
        let mut tasks: Vec<_> = by_task.into_iter().collect();
        tasks.sort_by_key(|(_, (order, _, _))| *order);
        for (task, (_, s, n)) in tasks {
            table.tasks.push(SummaryRow {
                task: task.to_string(),
                scenario: "All".into(),
                successes: s,
                trials: n,
                sr: ratio(s, n)?,
            });
        }
        if all_n > 0 {
            table.average = Some(SummaryRow {
                task: "Average".into(),
                scenario: "All".into(),
                successes: all_s,
                trials: all_n,
                sr: ratio(all_s, all_n)?,
            });
        }
        Ok(table)
    }

    pub fn rows(&self) -> impl Iterator<Item = &SummaryRow> {
        self.scenarios
            .iter()
            .chain(&self.tasks)
            .chain(self.average.as_ref())
    }

    pub fn render(&self) -> String {
        let cells: Vec<[String; 4]> = self
            .rows()
            .map(|r| {
                [
                    r.task.clone(),
                    r.scenario.clone(),
                    format!("{} / {}", r.successes, r.trials),
                    format!("{:.0}%", r.sr * 100.0),
                ]
            })
            .collect();
        let header = ["Task", "Scenario", "Success / Trials", "SR"];
        let mut widths = header.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let line = |out: &mut String, row: [&str; 4]| {
            let _ = writeln!(
                out,
                "{:<w0$}  {:<w1$}  {:>w2$}  {:>w3$}",
                row[0],
                row[1],
                row[2],
                row[3],
                w0 = widths[0],
                w1 = widths[1],
                w2 = widths[2],
                w3 = widths[3]
            );
        };
        let rule = "-".repeat(widths.iter().sum::<usize>() + 6);
        let mut out = String::new();
        line(&mut out, header);
        let _ = writeln!(out, "{rule}");
        let n_sc = self.scenarios.len();
        let n_task = self.tasks.len();
        for (i, row) in cells.iter().enumerate() {
            if i == n_sc || i == n_sc + n_task {
                let _ = writeln!(out, "{rule}");
            }
            line(&mut out, [&row[0], &row[1], &row[2], &row[3]]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(successes: usize, n: usize) -> TrialBatch {
        TrialBatch {
            results: (0..n)
                .map(|i| EpisodeResult {
                    outcome: if i < successes {
                        Outcome::Success
                    } else {
                        Outcome::AbortedSafety
                    },
                    steps: 1,
                    distance_traveled: 0.0,
                    stop_wait_events: 0,
                    final_distance: None,
                    final_arc: None,
                    destination: None,
                    failure: None,
                    trace_path: None,
                })
                .collect(),
        }
    }

    #[test]
    fn rates() {
        assert_eq!(success_rate(&batch(12, 20)).unwrap(), 0.60);
        assert_eq!(success_rate(&batch(4, 5)).unwrap(), 0.80);
        assert_eq!(success_rate(&batch(0, 3)).unwrap(), 0.0);
        assert_eq!(success_rate(&TrialBatch::default()), Err(BatchError::EmptyBatch));
    }

    #[test]
    fn table_layout() {
        let groups = vec![
            ("Delivery".to_string(), "a".to_string(), batch(4, 5)),
            ("Delivery".to_string(), "b".to_string(), batch(3, 5)),
            ("Guidance".to_string(), "c".to_string(), batch(3, 5)),
            ("Guidance".to_string(), "d".to_string(), batch(2, 5)),
        ];
        let t = SummaryTable::build(&groups).unwrap();
        assert_eq!(t.scenarios.len(), 4);
        assert_eq!(t.tasks.len(), 2);
        assert_eq!(t.tasks[0].sr, 0.7);
        assert_eq!(t.tasks[1].sr, 0.5);
        let avg = t.average.as_ref().unwrap();
        assert_eq!((avg.successes, avg.trials, avg.sr), (12, 20, 0.6));
        let text = t.render();
        assert!(text.contains("12 / 20"));
        assert!(text.contains("60%"));
    }
}
