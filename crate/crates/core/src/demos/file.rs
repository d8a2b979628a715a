//! Newline-delimited JSON demonstration files.
//!
//! ```text
//! {"record":"header","format":"graphmimic-demos","version":1}
//! {"record":"trajectory","traj_id":0,"spec":{...},"seed":7,"source":"scripted"}
//! {"record":"step","traj_id":0,"t":0,"scene":{...},"action":{"object":2,"goal":0}}
//! {"record":"terminal","traj_id":0,"scene":{...}}
//! ```
//!
//! Trajectory blocks may be appended to an existing file.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{DemoDataset, Pair, Source, Trajectory};
use crate::error::{Error, Result};
use crate::worlds::{ActionTuple, SceneState, WorldSpec};

pub const DEMO_FORMAT: &str = "graphmimic-demos";
pub const DEMO_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum Record {
    Header { format: String, version: u32 },
    Trajectory { traj_id: u64, spec: WorldSpec, seed: u64, source: Source },
    Step { traj_id: u64, t: usize, scene: SceneState, action: ActionTuple },
    Terminal { traj_id: u64, scene: SceneState },
}

fn header() -> Record {
    Record::Header { format: DEMO_FORMAT.into(), version: DEMO_VERSION }
}

/// Records of one trajectory, in file order.
pub fn trajectory_records(traj_id: u64, traj: &Trajectory) -> Vec<Record> {
    let mut out = Vec::with_capacity(traj.steps.len() + 2);
    out.push(Record::Trajectory { traj_id, spec: traj.spec.clone(), seed: traj.spec.seed, source: traj.source });
    for (t, pair) in traj.steps.iter().enumerate() {
        out.push(Record::Step { traj_id, t, scene: pair.scene.clone(), action: pair.action });
    }
    out.push(Record::Terminal { traj_id, scene: traj.terminal.clone() });
    out
}

fn write_records(w: &mut impl Write, records: &[Record]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Serializes a dataset to the JSONL text form.
pub fn to_jsonl(dataset: &DemoDataset) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_records(&mut buf, &[header()])?;
    for (i, traj) in dataset.trajectories.iter().enumerate() {
        write_records(&mut buf, &trajectory_records(i as u64, traj))?;
    }
    Ok(buf)
}

pub fn save(dataset: &DemoDataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&to_jsonl(dataset)?)?;
    w.flush()?;
    Ok(())
}

/// Appends trajectories to `path`, creating it with a header if needed; ids continue
/// after the largest id already present. Returns the number of step records written.
pub fn append(path: &Path, trajectories: &[Trajectory]) -> Result<usize> {
    let next_id = if path.exists() && std::fs::metadata(path)?.len() > 0 {
        let existing = read_records(path)?;
        existing
            .iter()
            .filter_map(|r| match r {
                Record::Trajectory { traj_id, .. } => Some(*traj_id + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    } else {
        let mut f = File::create(path)?;
        write_records(&mut f, &[header()])?;
        0
    };
    let mut w = BufWriter::new(OpenOptions::new().append(true).open(path)?);
    let mut steps = 0;
    for (i, traj) in trajectories.iter().enumerate() {
        write_records(&mut w, &trajectory_records(next_id + i as u64, traj))?;
        steps += traj.steps.len();
    }
    w.flush()?;
    Ok(steps)
}

fn read_records(path: &Path) -> Result<Vec<Record>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: Record =
            serde_json::from_str(&line).map_err(|e| Error::Format(format!("line {}: {}", n + 1, e)))?;
        out.push(r);
    }
    Ok(out)
}

/// Parses records into a dataset, checking the header and per-trajectory step order.
pub fn from_records(records: Vec<Record>) -> Result<DemoDataset> {
    let mut iter = records.into_iter();
    match iter.next() {
        Some(Record::Header { format, version }) => {
            if format != DEMO_FORMAT {
                return Err(Error::Format(format!("unknown format {:?}", format)));
            }
            if version != DEMO_VERSION {
                return Err(Error::Format(format!("demo file version {} is not supported (expected {})", version, DEMO_VERSION)));
            }
        }
        _ => return Err(Error::Format("missing header record".into())),
    }
    struct Partial {
        spec: WorldSpec,
        source: Source,
        steps: Vec<Pair>,
        terminal: Option<SceneState>,
    }
    let mut order = Vec::new();
    let mut partial: BTreeMap<u64, Partial> = BTreeMap::new();
    for r in iter {
        match r {
            Record::Header { .. } => return Err(Error::Format("duplicate header".into())),
            Record::Trajectory { traj_id, spec, seed, source } => {
                if seed != spec.seed {
                    return Err(Error::Format(format!("trajectory {traj_id}: seed disagrees with spec")));
                }
                if partial.insert(traj_id, Partial { spec, source, steps: vec![], terminal: None }).is_some() {
                    return Err(Error::Format(format!("trajectory {traj_id} declared twice")));
                }
                order.push(traj_id);
            }
            Record::Step { traj_id, t, scene, action } => {
                let p = partial.get_mut(&traj_id).ok_or_else(|| Error::Format(format!("step for unknown trajectory {traj_id}")))?;
                if p.terminal.is_some() || t != p.steps.len() {
                    return Err(Error::Format(format!("trajectory {traj_id}: step {t} out of order")));
                }
                p.steps.push(Pair { scene, action });
            }
            Record::Terminal { traj_id, scene } => {
                let p = partial.get_mut(&traj_id).ok_or_else(|| Error::Format(format!("terminal for unknown trajectory {traj_id}")))?;
                if p.terminal.replace(scene).is_some() {
                    return Err(Error::Format(format!("trajectory {traj_id} has two terminal records")));
                }
            }
        }
    }
    let mut trajectories = Vec::with_capacity(order.len());
    for id in order {
        let p = partial.remove(&id).expect("declared");
        let terminal = p.terminal.ok_or_else(|| Error::Format(format!("trajectory {id} has no terminal record")))?;
        trajectories.push(Trajectory { spec: p.spec, source: p.source, steps: p.steps, terminal });
    }
    Ok(DemoDataset { trajectories })
}

pub fn load(path: &Path) -> Result<DemoDataset> {
    from_records(read_records(path)?)
}

/// Replays every trajectory; reports the first divergent trajectory and step.
pub fn validate(dataset: &DemoDataset) -> Result<(), (usize, super::dataset::Divergence)> {
    for (i, t) in dataset.trajectories.iter().enumerate() {
        t.replay().map_err(|d| (i, d))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demos::blockworld_corpus;

    #[test]
    fn round_trip_is_byte_exact() {
        let d = blockworld_corpus(0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save(&d, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded, d);
        let path2 = dir.path().join("e.jsonl");
        save(&loaded, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn append_continues_ids() {
        let d = blockworld_corpus(0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        assert_eq!(append(&path, &d.trajectories[..2]).unwrap(), d.trajectories[0].len() + d.trajectories[1].len());
        append(&path, &d.trajectories[2..3]).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.trajectories, d.trajectories[..3].to_vec());
    }

    #[test]
    fn rejects_bad_version() {
        let recs = vec![Record::Header { format: DEMO_FORMAT.into(), version: 99 }];
        assert!(matches!(from_records(recs), Err(Error::Format(_))));
    }

    #[test]
    fn tampered_step_is_reported() {
        let mut d = blockworld_corpus(0).unwrap();
        d.trajectories[3].steps[2].action.goal ^= 1;
        let (traj, div) = validate(&d).unwrap_err();
        assert_eq!(traj, 3);
        assert_eq!(div.t, 3);
    }
}
