//! Line-delimited JSON metrics records.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LossBreakdown;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub reward: f64,
    pub policy: f64,
    pub value: f64,
    pub consistency: f64,
    pub total: f64,
}

impl From<&LossBreakdown> for LossTerms {
    fn from(b: &LossBreakdown) -> Self {
        Self {
            reward: b.reward_loss,
            policy: b.policy_loss,
            value: b.value_loss,
            consistency: b.consistency_loss,
            total: b.total,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricsRecord {
    Train {
        step: usize,
        env_steps: usize,
        lr: f64,
        grad_norm: f64,
        /// Target-task terms.
        loss: LossTerms,
        /// Per offline task, `None` when not computed this step.
        offline_loss: Vec<Option<f64>>,
        /// Weighted objective actually optimized.
        adapt_total: f64,
        eta: Vec<f64>,
        /// Weights under the alternative cycle-start timing, logged only.
        eta_alt: Vec<f64>,
        sim: Vec<Option<f64>>,
        eta_updated: bool,
    },
    Eval {
        step: usize,
        env_steps: usize,
        mean_return: f64,
        returns: Vec<f64>,
    },
}

impl MetricsRecord {
    pub fn env_steps(&self) -> usize {
        match self {
            MetricsRecord::Train { env_steps, .. } | MetricsRecord::Eval { env_steps, .. } => *env_steps,
        }
    }
}

pub fn write_metrics(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("metrics records serialize");
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Validation(format!("metrics line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    for line in std::io::BufReader::new(f).lines() {
        text.push_str(&line.map_err(|e| Error::io(path, e))?);
        text.push('\n');
    }
    parse_metrics(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}
