use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::il::HeadLosses;
use crate::error::{Error, Result};

/// One line of a training metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricRecord {
    IlEpoch {
        epoch: usize,
        loss: f32,
        heads: HeadLosses,
    },
    PpoUpdate {
        stage: usize,
        k: usize,
        update: usize,
        interactions: usize,
        policy_loss: f32,
        value_loss: f32,
        entropy: f32,
        il_loss: f32,
        mean_episode_return: Option<f32>,
    },
    Eval {
        label: String,
        mean: f32,
        std: f32,
        success_rate: f32,
        episodes: usize,
    },
}

/// Appends records to an optional JSONL file and keeps them in memory.
#[derive(Default)]
pub struct MetricsLog {
    writer: Option<BufWriter<File>>,
    records: Vec<MetricRecord>,
}

impl MetricsLog {
    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn to_file(path: &Path) -> Result<Self> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { writer: Some(BufWriter::new(f)), records: vec![] })
    }

    pub fn record(&mut self, r: MetricRecord) -> Result<()> {
        if let Some(w) = &mut self.writer {
            serde_json::to_writer(&mut *w, &r)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        self.records.push(r);
        Ok(())
    }

    pub fn records(&self) -> &[MetricRecord] {
        &self.records
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format(format!("line {}: {}", n + 1, e)))?);
    }
    Ok(out)
}

/// Human-readable summary of a metrics log.
pub fn summarize(records: &[MetricRecord]) -> String {
    let mut s = String::new();
    let il: Vec<_> = records
        .iter()
        .filter_map(|r| match r {
            MetricRecord::IlEpoch { epoch, loss, .. } => Some((*epoch, *loss)),
            _ => None,
        })
        .collect();
    if let (Some(first), Some(last)) = (il.first(), il.last()) {
        let best = il.iter().copied().fold((0, f32::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        s += &format!(
            "imitation: {} epochs, loss {:.4} -> {:.4}, best {:.4} at epoch {}\n",
            il.len(),
            first.1,
            last.1,
            best.1,
            best.0
        );
    }
    let mut stages: std::collections::BTreeMap<usize, (usize, usize, Option<f32>)> = Default::default();
    for r in records {
        if let MetricRecord::PpoUpdate { stage, k, interactions, mean_episode_return, .. } = r {
            let e = stages.entry(*stage).or_insert((*k, 0, None));
            e.1 = *interactions;
            e.2 = mean_episode_return.or(e.2);
        }
    }
    for (stage, (k, interactions, ret)) in stages {
        s += &format!("ppo stage {stage} (K={k}): {interactions} interactions, last return {}\n", fmt_opt(ret));
    }
    for r in records {
        if let MetricRecord::Eval { label, mean, std, success_rate, episodes } = r {
            s += &format!("eval {label}: {mean:.3} ± {std:.3}, success {:.0}% over {episodes} episodes\n", success_rate * 100.0);
        }
    }
    s
}

fn fmt_opt(v: Option<f32>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.3}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut log = MetricsLog::to_file(&path).unwrap();
        log.record(MetricRecord::IlEpoch { epoch: 0, loss: 2.0, heads: HeadLosses::default() }).unwrap();
        log.record(MetricRecord::Eval { label: "k3".into(), mean: 0.9, std: 0.01, success_rate: 0.8, episodes: 50 }).unwrap();
        drop(log);
        let back = read_metrics(&path).unwrap();
        assert_eq!(back.len(), 2);
        let text = summarize(&back);
        assert!(text.contains("imitation: 1 epochs"));
        assert!(text.contains("eval k3"));
    }
}
