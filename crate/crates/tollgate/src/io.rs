//! File formats: trajectory, agent and toll-map CSVs, JSON reports, and wallet distribution dumps.
//!
//! Every CSV starts with a schema line `# tollgate-<kind> v<N>` followed by a header row;
//! columns are in a fixed order so consumers may read them by position.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meanfield::{Game, Sample};
use crate::model::Scenario;
use crate::population::{AgentState, PopulationSample};

pub const SCHEMA_VERSION: u32 = 1;

/// One row of a trajectory file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub sigma: Vec<f64>,
    pub class_rewards: Vec<f64>,
    pub potential: f64,
    pub epsilon: f64,
}

impl From<&Sample> for TrajectoryRow {
    fn from(s: &Sample) -> Self {
        TrajectoryRow {
            t: s.t,
            sigma: s.sigma.clone(),
            class_rewards: s.class_rewards.clone(),
            potential: s.potential,
            epsilon: s.epsilon,
        }
    }
}

impl From<&PopulationSample> for TrajectoryRow {
    fn from(s: &PopulationSample) -> Self {
        TrajectoryRow {
            t: s.t,
            sigma: s.sigma.clone(),
            class_rewards: s.class_rewards.clone(),
            potential: s.potential,
            epsilon: s.epsilon,
        }
    }
}

impl TrajectoryRow {
    pub fn point(&self) -> crate::metrics::Point<'_> {
        crate::metrics::Point {
            t: self.t,
            sigma: &self.sigma,
            class_rewards: &self.class_rewards,
        }
    }
}

/// One row of a per-agent summary file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRow {
    pub agent: usize,
    pub class: usize,
    /// Average reward per counted action; NaN without counted actions.
    pub mean_reward: f64,
    pub actions: u64,
}

/// One entry of a toll map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TollRow {
    pub class: usize,
    pub action: usize,
    pub toll: i64,
    pub max_tokens: usize,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("{other:?}"),
        },
    }
}

fn schema_line(kind: &str) -> String {
    format!("# tollgate-{kind} v{SCHEMA_VERSION}")
}

fn writer(path: &Path, kind: &str) -> Result<csv::Writer<BufWriter<File>>> {
    let mut out = create(path)?;
    writeln!(out, "{}", schema_line(kind)).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(out))
}

/// Checks the schema line and returns a reader positioned at the header row.
fn reader(path: &Path, kind: &str) -> Result<csv::Reader<Box<dyn Read>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = BufReader::new(file);
    let mut first = String::new();
    buf.read_line(&mut first).map_err(|e| Error::io(path, e))?;
    if first.trim_end() != schema_line(kind) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!(
                "expected `{}`, found `{}`",
                schema_line(kind),
                first.trim_end()
            ),
        });
    }
    Ok(csv::Reader::from_reader(Box::new(buf) as Box<dyn Read>))
}

fn finish<W: Write>(path: &Path, w: csv::Writer<W>) -> Result<()> {
    w.into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?
        .flush()
        .map_err(|e| Error::io(path, e))
}

/// Header of a trajectory file: `t, sigma_<r>..., reward_<c>..., potential, epsilon`.
pub fn trajectory_header(resources: usize, classes: usize) -> Vec<String> {
    std::iter::once("t".to_string())
        .chain((0..resources).map(|r| format!("sigma_{r}")))
        .chain((0..classes).map(|c| format!("reward_{c}")))
        .chain(["potential".to_string(), "epsilon".to_string()])
        .collect()
}

pub fn write_trajectory(path: &Path, scenario: &Scenario, rows: &[TrajectoryRow]) -> Result<()> {
    let (nr, nc) = (scenario.num_resources(), scenario.classes.len());
    let mut w = writer(path, "trajectory")?;
    w.write_record(trajectory_header(nr, nc))
        .map_err(|e| csv_err(path, e))?;
    for row in rows {
        if row.sigma.len() != nr || row.class_rewards.len() != nc {
            return Err(Error::Invalid(format!(
                "trajectory row at t = {} has the wrong width",
                row.t
            )));
        }
        let fields = std::iter::once(row.t)
            .chain(row.sigma.iter().copied())
            .chain(row.class_rewards.iter().copied())
            .chain([row.potential, row.epsilon])
            .map(|v| v.to_string());
        w.write_record(fields).map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let mut r = reader(path, "trajectory")?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let resources = header.iter().filter(|h| h.starts_with("sigma_")).count();
    let classes = header.iter().filter(|h| h.starts_with("reward_")).count();
    if header.len() != resources + classes + 3
        || header.iter().collect::<Vec<_>>() != trajectory_header(resources, classes)
    {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 2,
            message: "unexpected trajectory columns".into(),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let v: Vec<f64> = rec
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 3,
                    message: format!("not a number: `{f}`"),
                })
            })
            .collect::<Result<_>>()?;
        rows.push(TrajectoryRow {
            t: v[0],
            sigma: v[1..1 + resources].to_vec(),
            class_rewards: v[1 + resources..1 + resources + classes].to_vec(),
            potential: v[1 + resources + classes],
            epsilon: v[2 + resources + classes],
        });
    }
    Ok(rows)
}

pub fn agent_rows(agents: &[AgentState]) -> Vec<AgentRow> {
    agents
        .iter()
        .enumerate()
        .map(|(i, a)| AgentRow {
            agent: i,
            class: a.class,
            mean_reward: a.average_reward().unwrap_or(f64::NAN),
            actions: a.actions,
        })
        .collect()
}

/// Writes serializable rows under a schema line for `kind`.
pub fn write_rows<T: Serialize>(path: &Path, kind: &str, rows: &[T]) -> Result<()> {
    let mut w = writer(path, kind)?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

/// Reads rows written by [`write_rows`] with the same `kind`.
pub fn read_rows<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<Vec<T>> {
    let mut r = reader(path, kind)?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_err(path, e)))
        .collect()
}

pub fn write_agents(path: &Path, rows: &[AgentRow]) -> Result<()> {
    write_rows(path, "agents", rows)
}

pub fn read_agents(path: &Path) -> Result<Vec<AgentRow>> {
    read_rows(path, "agents")
}

pub fn write_tolls(path: &Path, tolls: &[Vec<i64>], max_tokens: usize) -> Result<()> {
    let rows: Vec<TollRow> = tolls
        .iter()
        .enumerate()
        .flat_map(|(class, t)| {
            t.iter().enumerate().map(move |(action, &toll)| TollRow {
                class,
                action,
                toll,
                max_tokens,
            })
        })
        .collect();
    write_rows(path, "tolls", &rows)
}

/// Reads a toll map back into per-class toll vectors and the token cap.
pub fn read_tolls(path: &Path) -> Result<(Vec<Vec<i64>>, usize)> {
    let rows: Vec<TollRow> = read_rows(path, "tolls")?;
    let bad = |message: &str| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: message.into(),
    };
    let max_tokens = rows
        .first()
        .ok_or_else(|| bad("empty toll map"))?
        .max_tokens;
    let mut tolls: Vec<Vec<i64>> = Vec::new();
    for row in &rows {
        if row.max_tokens != max_tokens {
            return Err(bad("token cap differs between rows"));
        }
        if row.class == tolls.len() {
            tolls.push(Vec::new());
        }
        if row.class + 1 != tolls.len() || row.action != tolls[row.class].len() {
            return Err(bad("rows must list classes and actions in order"));
        }
        tolls[row.class].push(row.toll);
    }
    Ok((tolls, max_tokens))
}

/// Stationary wallet distribution of every (class, policy) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaRow {
    pub class: usize,
    pub policy: usize,
    pub tokens: usize,
    pub mass: f64,
}

pub fn write_eta(path: &Path, game: &Game) -> Result<()> {
    let rows: Vec<EtaRow> = game
        .families()
        .iter()
        .enumerate()
        .flat_map(|(c, f)| (0..f.len()).map(move |u| (c, u)))
        .flat_map(|(c, u)| {
            game.eta(c, u)
                .iter()
                .enumerate()
                .map(move |(k, &mass)| EtaRow {
                    class: c,
                    policy: u,
                    tokens: k,
                    mass,
                })
        })
        .collect();
    write_rows(path, "eta", &rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    writeln!(out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::pigou;

    fn rows() -> Vec<TrajectoryRow> {
        vec![
            TrajectoryRow {
                t: 0.0,
                sigma: vec![0.1, 0.9],
                class_rewards: vec![-0.9],
                potential: -0.5,
                epsilon: 0.3,
            },
            TrajectoryRow {
                t: 0.5,
                sigma: vec![1.0 / 3.0, 2.0 / 3.0],
                class_rewards: vec![-0.7777],
                potential: -0.4,
                epsilon: 1e-7,
            },
        ]
    }

    #[test]
    fn trajectory_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/traj.csv");
        write_trajectory(&path, &pigou(), &rows()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# tollgate-trajectory v1"));
        assert_eq!(
            lines.next(),
            Some("t,sigma_0,sigma_1,reward_0,potential,epsilon")
        );
        assert_eq!(read_trajectory(&path).unwrap(), rows());
    }

    #[test]
    fn wrong_schema_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        std::fs::write(&path, "t,sigma_0\n0,1\n").unwrap();
        assert!(matches!(
            read_trajectory(&path),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            read_trajectory(&dir.path().join("missing.csv")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn tolls_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tolls.csv");
        let tolls = vec![vec![-2, 3], vec![0, 1, 4]];
        write_tolls(&path, &tolls, 40).unwrap();
        assert_eq!(read_tolls(&path).unwrap(), (tolls, 40));
    }

    #[test]
    fn agents_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agents.csv");
        let agents = vec![
            AgentState {
                class: 0,
                tokens: 3,
                policy: 1,
                reward_sum: -3.0,
                actions: 4,
            },
            AgentState {
                class: 1,
                tokens: 0,
                policy: 0,
                reward_sum: 0.0,
                actions: 0,
            },
        ];
        write_agents(&path, &agent_rows(&agents)).unwrap();
        let back = read_agents(&path).unwrap();
        assert_eq!(
            back[0],
            AgentRow {
                agent: 0,
                class: 0,
                mean_reward: -0.75,
                actions: 4
            }
        );
        assert!(back[1].mean_reward.is_nan());
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        write_json(&path, &rows()).unwrap();
        let back: Vec<TrajectoryRow> = read_json(&path).unwrap();
        assert_eq!(back, rows());
    }
}
