//! Road networks: edge-list parsing, demand files and K shortest simple paths.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Action;

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub id: usize,
    pub tail: usize,
    pub head: usize,
    pub free_flow: f64,
    pub capacity: f64,
    pub b: f64,
    pub power: f64,
}

/// Directed multigraph whose edges are the game's resources, indexed `0..edges.len()`.
#[derive(Debug, Clone)]
pub struct Network {
    nodes: Vec<usize>,
    edges: Vec<Edge>,
    /// Outgoing edge indices per node index, in edge order.
    out: Vec<Vec<usize>>,
    node_index: BTreeMap<usize, usize>,
}

impl Network {
    pub fn new(edges: Vec<Edge>, declared_nodes: Option<usize>) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for e in &edges {
            if !ids.insert(e.id) {
                return Err(Error::Invalid(format!("duplicate edge id {}", e.id)));
            }
        }
        let mut nodes: BTreeSet<usize> = edges.iter().flat_map(|e| [e.tail, e.head]).collect();
        if let Some(n) = declared_nodes {
            nodes.extend(1..=n);
        }
        let nodes: Vec<usize> = nodes.into_iter().collect();
        let node_index: BTreeMap<usize, usize> =
            nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
        let mut out = vec![Vec::new(); nodes.len()];
        for (i, e) in edges.iter().enumerate() {
            out[node_index[&e.tail]].push(i);
        }
        Ok(Network {
            nodes,
            edges,
            out,
            node_index,
        })
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn has_node(&self, node: usize) -> bool {
        self.node_index.contains_key(&node)
    }

    /// Free-flow cost of a path given as edge indices.
    pub fn path_cost(&self, path: &[usize]) -> f64 {
        path.iter().map(|&e| self.edges[e].free_flow).sum()
    }

    /// Up to `k` shortest simple paths by free-flow time, as edge-index lists.
    pub fn k_shortest_paths(&self, origin: usize, destination: usize, k: usize) -> Vec<Vec<usize>> {
        let (Some(&s), Some(&t)) = (
            self.node_index.get(&origin),
            self.node_index.get(&destination),
        ) else {
            return Vec::new();
        };
        if k == 0 || s == t {
            return Vec::new();
        }
        let mut banned_edges = vec![false; self.edges.len()];
        let mut banned_nodes = vec![false; self.nodes.len()];
        let Some(first) = self.dijkstra(s, t, &banned_edges, &banned_nodes) else {
            return Vec::new();
        };
        let mut found = vec![first];
        let mut candidates: BTreeSet<Candidate> = BTreeSet::new();
        while found.len() < k {
            let prev = found.last().unwrap().clone();
            let prev_nodes = self.path_nodes(s, &prev);
            for i in 0..prev.len() {
                let root = &prev[..i];
                banned_edges.fill(false);
                banned_nodes.fill(false);
                for p in &found {
                    if p.len() > i && &p[..i] == root {
                        banned_edges[p[i]] = true;
                    }
                }
                for &n in &prev_nodes[..i] {
                    banned_nodes[n] = true;
                }
                if let Some(spur) = self.dijkstra(prev_nodes[i], t, &banned_edges, &banned_nodes) {
                    let mut path = root.to_vec();
                    path.extend(spur);
                    if !found.contains(&path) {
                        candidates.insert(Candidate {
                            cost: self.path_cost(&path),
                            edges: path,
                        });
                    }
                }
            }
            match candidates.pop_first() {
                Some(c) => found.push(c.edges),
                None => break,
            }
        }
        found
    }

    fn path_nodes(&self, start: usize, path: &[usize]) -> Vec<usize> {
        let mut nodes = vec![start];
        nodes.extend(path.iter().map(|&e| self.node_index[&self.edges[e].head]));
        nodes
    }

    /// Shortest path avoiding banned edges and nodes; ties resolved by the lexicographically smaller edge list.
    fn dijkstra(
        &self,
        s: usize,
        t: usize,
        banned_edges: &[bool],
        banned_nodes: &[bool],
    ) -> Option<Vec<usize>> {
        let n = self.nodes.len();
        let mut best: Vec<Option<Candidate>> = vec![None; n];
        let mut heap = BinaryHeap::new();
        best[s] = Some(Candidate {
            cost: 0.0,
            edges: Vec::new(),
        });
        heap.push(std::cmp::Reverse(HeapEntry { cost: 0.0, node: s }));
        let mut done = vec![false; n];
        while let Some(std::cmp::Reverse(HeapEntry { node, .. })) = heap.pop() {
            if done[node] {
                continue;
            }
            done[node] = true;
            if node == t {
                break;
            }
            let here = best[node].clone().unwrap();
            for &e in &self.out[node] {
                let head = self.node_index[&self.edges[e].head];
                if banned_edges[e] || banned_nodes[head] || done[head] {
                    continue;
                }
                let mut edges = here.edges.clone();
                edges.push(e);
                let cand = Candidate {
                    cost: here.cost + self.edges[e].free_flow,
                    edges,
                };
                if best[head].as_ref().map_or(true, |b| cand < *b) {
                    heap.push(std::cmp::Reverse(HeapEntry {
                        cost: cand.cost,
                        node: head,
                    }));
                    best[head] = Some(cand);
                }
            }
        }
        best[t].take().map(|c| c.edges)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Candidate {
    cost: f64,
    edges: Vec<usize>,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cost
            .total_cmp(&other.cost)
            .then_with(|| self.edges.cmp(&other.edges))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, PartialEq)]
struct HeapEntry {
    cost: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cost
            .total_cmp(&other.cost)
            .then(self.node.cmp(&other.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// One origin-destination demand.
#[derive(Debug, Clone, PartialEq)]
pub struct OdPair {
    pub class: usize,
    pub origin: usize,
    pub destination: usize,
    pub mass: f64,
}

/// Path menus per class, plus whether the path cap was reached.
#[derive(Debug, Clone)]
pub struct PathSets {
    pub actions: Vec<Vec<Action>>,
    pub truncated: Vec<bool>,
}

/// K shortest simple paths for every OD pair; errors if a pair is disconnected.
pub fn enumerate_actions(network: &Network, ods: &[OdPair], max_paths: usize) -> Result<PathSets> {
    if max_paths == 0 {
        return Err(Error::Invalid(
            "at least one path per class is required".into(),
        ));
    }
    let mut actions = Vec::with_capacity(ods.len());
    let mut truncated = Vec::with_capacity(ods.len());
    for od in ods {
        let mut paths = network.k_shortest_paths(od.origin, od.destination, max_paths + 1);
        if paths.is_empty() {
            return Err(Error::NoPath {
                class: od.class,
                origin: od.origin,
                destination: od.destination,
            });
        }
        truncated.push(paths.len() > max_paths);
        paths.truncate(max_paths);
        actions.push(
            paths
                .into_iter()
                .map(Action::new)
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok(PathSets { actions, truncated })
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn numbers(path: &Path, line: usize, fields: &[&str]) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .map_err(|_| parse_err(path, line, format!("not a number: `{f}`")))
        })
        .collect()
}

fn node_id(path: &Path, line: usize, v: f64, declared: Option<usize>) -> Result<usize> {
    if v.fract() != 0.0 || v < 1.0 {
        return Err(parse_err(path, line, format!("invalid node id {v}")));
    }
    let id = v as usize;
    if declared.is_some_and(|n| id > n) {
        return Err(parse_err(
            path,
            line,
            format!("edge references unknown node {id}"),
        ));
    }
    Ok(id)
}

/// Parses an edge list.
///
/// Data lines hold `tail head free_flow_time capacity b power`, optionally preceded by an
/// explicit edge id. Lines in the standard TNTP layout (`tail head capacity length fft b
/// power ... ;`) are also accepted. `#` and `~` start comments; `<NUMBER OF NODES> n`
/// declares the node set and makes references to other nodes an error.
pub fn parse_network(text: &str, path: &Path) -> Result<Network> {
    let mut declared = None;
    let mut edges = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split(['#', '~']).next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('<') {
            let (key, value) = rest
                .split_once('>')
                .ok_or_else(|| parse_err(path, line, "unterminated tag"))?;
            if key.trim().eq_ignore_ascii_case("NUMBER OF NODES") {
                let n = value
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| parse_err(path, line, "invalid node count"))?;
                declared = Some(n);
            }
            continue;
        }
        let tntp = content.ends_with(';');
        let fields: Vec<&str> = content.trim_end_matches(';').split_whitespace().collect();
        let v = numbers(path, line, &fields)?;
        let (id, tail, head, fft, cap, b, power) = if tntp {
            if v.len() < 7 {
                return Err(parse_err(
                    path,
                    line,
                    "TNTP link line needs at least 7 fields",
                ));
            }
            (edges.len(), v[0], v[1], v[4], v[2], v[5], v[6])
        } else {
            match v.len() {
                6 => (edges.len(), v[0], v[1], v[2], v[3], v[4], v[5]),
                7 => {
                    if v[0].fract() != 0.0 || v[0] < 0.0 {
                        return Err(parse_err(path, line, "invalid edge id"));
                    }
                    (v[0] as usize, v[1], v[2], v[3], v[4], v[5], v[6])
                }
                n => {
                    return Err(parse_err(
                        path,
                        line,
                        format!("expected 6 or 7 fields, found {n}"),
                    ))
                }
            }
        };
        if !(fft >= 0.0 && cap > 0.0 && b >= 0.0 && power >= 0.0) {
            return Err(parse_err(
                path,
                line,
                "free-flow time, b and power must be nonnegative and capacity positive",
            ));
        }
        edges.push(Edge {
            id,
            tail: node_id(path, line, tail, declared)?,
            head: node_id(path, line, head, declared)?,
            free_flow: fft,
            capacity: cap,
            b,
            power,
        });
    }
    if edges.is_empty() {
        return Err(parse_err(path, text.lines().count().max(1), "no edges"));
    }
    Network::new(edges, declared)
}

pub fn load_network(path: &Path) -> Result<Network> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_network(&text, path)
}

/// Parses `class_id origin dest mass` lines; masses are rescaled to sum to one.
pub fn parse_od(text: &str, path: &Path) -> Result<Vec<OdPair>> {
    let mut out: Vec<OdPair> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(parse_err(
                path,
                line,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let int = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| parse_err(path, line, format!("not an integer: `{s}`")))
        };
        let class = int(fields[0])?;
        if class != out.len() {
            return Err(parse_err(
                path,
                line,
                format!("class ids must be consecutive from 0, found {class}"),
            ));
        }
        let mass: f64 = fields[3]
            .parse()
            .map_err(|_| parse_err(path, line, "invalid mass"))?;
        if !(mass > 0.0) {
            return Err(parse_err(path, line, "mass must be positive"));
        }
        out.push(OdPair {
            class,
            origin: int(fields[1])?,
            destination: int(fields[2])?,
            mass,
        });
    }
    let total: f64 = out.iter().map(|o| o.mass).sum();
    out.iter_mut().for_each(|o| o.mass /= total);
    Ok(out)
}

pub fn load_od(path: &Path) -> Result<Vec<OdPair>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_od(&text, path)
}
