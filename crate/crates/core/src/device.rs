//! Chip topology, calibration files and qubit-pair selection.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching;
use crate::sim::{PairNoiseSpec, ReadoutRates};

/// Ordered qubit pair `(q_a, q_b)`; `q_a` is simulated as qubit 0.
pub type Pair = (u32, u32);

const SHIPPED_CALIBRATION: &str = include_str!("../data/aspen_m1_like.json");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: u32,
    pub b: u32,
    pub fidelity: f64,
}

impl Edge {
    pub fn pair(&self) -> Pair {
        (self.a, self.b)
    }

    fn key(&self) -> Pair {
        (self.a.min(self.b), self.a.max(self.b))
    }
}

/// On-disk calibration schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CalibrationFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    comment: Option<String>,
    qubits: Vec<u32>,
    edges: Vec<(u32, u32, f64)>,
    #[serde(default)]
    readout: BTreeMap<String, [f64; 2]>,
}

/// Validated device: qubits, CZ-capable edges with fidelities and per-qubit
/// readout rates. Qubits missing from the readout map read out perfectly.
#[derive(Debug, Clone)]
pub struct DeviceTopology {
    pub name: Option<String>,
    pub comment: Option<String>,
    qubits: Vec<u32>,
    edges: Vec<Edge>,
    readout: BTreeMap<u32, ReadoutRates>,
    edge_index: HashMap<Pair, usize>,
    adjacency: HashMap<u32, BTreeSet<u32>>,
}

impl DeviceTopology {
    pub fn new(qubits: Vec<u32>, edges: Vec<Edge>, readout: BTreeMap<u32, ReadoutRates>) -> Result<Self> {
        let declared: BTreeSet<u32> = qubits.iter().copied().collect();
        if declared.len() != qubits.len() {
            return Err(Error::Calibration("duplicate qubit id".into()));
        }
        let mut edge_index = HashMap::new();
        let mut adjacency: HashMap<u32, BTreeSet<u32>> = HashMap::new();
        for (i, e) in edges.iter().enumerate() {
            if e.a == e.b {
                return Err(Error::Calibration(format!("self-loop on qubit {}", e.a)));
            }
            for q in [e.a, e.b] {
                if !declared.contains(&q) {
                    return Err(Error::Calibration(format!("edge ({}, {}) uses unknown qubit {q}", e.a, e.b)));
                }
            }
            if !(e.fidelity > 0.0 && e.fidelity <= 1.0) {
                return Err(Error::Calibration(format!(
                    "edge ({}, {}) fidelity {} outside (0, 1]",
                    e.a, e.b, e.fidelity
                )));
            }
            if edge_index.insert(e.key(), i).is_some() {
                return Err(Error::Calibration(format!("duplicate edge ({}, {})", e.a, e.b)));
            }
            adjacency.entry(e.a).or_default().insert(e.b);
            adjacency.entry(e.b).or_default().insert(e.a);
        }
        for (q, r) in &readout {
            if !declared.contains(q) {
                return Err(Error::Calibration(format!("readout given for unknown qubit {q}")));
            }
            ReadoutRates::new(r.eps01, r.eps10).map_err(|e| Error::Calibration(format!("qubit {q}: {e}")))?;
        }
        Ok(Self {
            name: None,
            comment: None,
            qubits,
            edges,
            readout,
            edge_index,
            adjacency,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: CalibrationFile = serde_json::from_str(text)?;
        let edges = raw
            .edges
            .iter()
            .map(|&(a, b, fidelity)| Edge { a, b, fidelity })
            .collect();
        let mut readout = BTreeMap::new();
        for (key, &[eps01, eps10]) in &raw.readout {
            let q: u32 = key
                .parse()
                .map_err(|_| Error::Calibration(format!("readout key {key:?} is not a qubit id")))?;
            readout.insert(q, ReadoutRates { eps01, eps10 });
        }
        let mut t = Self::new(raw.qubits, edges, readout)?;
        t.name = raw.name;
        t.comment = raw.comment;
        Ok(t)
    }

    pub fn to_json_string(&self) -> String {
        let raw = CalibrationFile {
            name: self.name.clone(),
            comment: self.comment.clone(),
            qubits: self.qubits.clone(),
            edges: self.edges.iter().map(|e| (e.a, e.b, e.fidelity)).collect(),
            readout: self
                .readout
                .iter()
                .map(|(q, r)| (q.to_string(), [r.eps01, r.eps10]))
                .collect(),
        };
        serde_json::to_string_pretty(&raw).expect("calibration serializes")
    }

    /// The bundled 80-qubit stand-in calibration.
    pub fn shipped() -> Self {
        Self::from_json_str(SHIPPED_CALIBRATION).expect("bundled calibration is valid")
    }

    /// `n` disjoint pairs `(2i, 2i+1)` with equal fidelity and readout; no
    /// pair touches another.
    pub fn uniform_pairs(n: usize, fidelity: f64, readout: ReadoutRates) -> Result<Self> {
        let qubits: Vec<u32> = (0..2 * n as u32).collect();
        let edges = (0..n as u32)
            .map(|i| Edge {
                a: 2 * i,
                b: 2 * i + 1,
                fidelity,
            })
            .collect();
        let readout = qubits.iter().map(|&q| (q, readout)).collect();
        Self::new(qubits, edges, readout)
    }

    pub fn qubits(&self) -> &[u32] {
        &self.qubits
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, pair: Pair) -> Option<&Edge> {
        let key = (pair.0.min(pair.1), pair.0.max(pair.1));
        self.edge_index.get(&key).map(|&i| &self.edges[i])
    }

    pub fn fidelity(&self, pair: Pair) -> Result<f64> {
        self.edge(pair)
            .map(|e| e.fidelity)
            .ok_or(Error::MissingEdge(pair.0, pair.1))
    }

    pub fn readout(&self, q: u32) -> ReadoutRates {
        self.readout.get(&q).copied().unwrap_or_default()
    }

    pub fn adjacent(&self, a: u32, b: u32) -> bool {
        self.adjacency.get(&a).is_some_and(|n| n.contains(&b))
    }

    /// Two pairs are neighbors when an endpoint of one is coupled to an
    /// endpoint of the other.
    pub fn pairs_are_neighbors(&self, p: Pair, q: Pair) -> bool {
        [p.0, p.1]
            .iter()
            .any(|&x| [q.0, q.1].iter().any(|&y| self.adjacent(x, y)))
    }

    /// Noise model of one pair, without crosstalk.
    pub fn noise_spec_for_pair(&self, pair: Pair) -> Result<PairNoiseSpec> {
        self.noise_spec_with_crosstalk(pair, 0.0)
    }

    pub fn noise_spec_with_crosstalk(&self, pair: Pair, crosstalk_p: f64) -> Result<PairNoiseSpec> {
        let f = self.fidelity(pair)?;
        PairNoiseSpec::new(f, [self.readout(pair.0), self.readout(pair.1)], crosstalk_p)
    }

    /// Edges sorted by decreasing fidelity, ties by (min id, max id).
    fn ranked_edges(&self) -> Vec<Edge> {
        let mut ranked = self.edges.clone();
        ranked.sort_by(|x, y| y.fidelity.total_cmp(&x.fidelity).then(x.key().cmp(&y.key())));
        ranked
    }
}

pub fn load_calibration(path: impl AsRef<Path>) -> Result<DeviceTopology> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DeviceTopology::from_json_str(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    Greedy,
    MaxWeightMatching,
}

impl fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMethod::Greedy => "greedy",
            SelectionMethod::MaxWeightMatching => "matching",
        })
    }
}

impl std::str::FromStr for SelectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(SelectionMethod::Greedy),
            "matching" => Ok(SelectionMethod::MaxWeightMatching),
            other => Err(Error::InvalidParameter(format!("unknown selection method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSelection {
    pub pairs: Vec<Pair>,
    pub method: SelectionMethod,
    pub fidelity_cap: Option<f64>,
}

impl PairSelection {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn total_fidelity(&self, t: &DeviceTopology) -> f64 {
        self.pairs.iter().map(|&p| t.fidelity(p).unwrap_or(0.0)).sum()
    }

    /// First `n` pairs, or an error if fewer are available.
    pub fn take(&self, n: usize) -> Result<Vec<Pair>> {
        if n > self.pairs.len() {
            return Err(Error::SelectionTooLarge {
                requested: n,
                available: self.pairs.len(),
            });
        }
        Ok(self.pairs[..n].to_vec())
    }
}

/// Repeatedly takes the best remaining edge and drops its endpoints. Edges
/// below `fidelity_cap` are never taken.
pub fn greedy_select(t: &DeviceTopology, max_pairs: Option<usize>, fidelity_cap: Option<f64>) -> PairSelection {
    let mut used = BTreeSet::new();
    let mut pairs = Vec::new();
    for e in t.ranked_edges() {
        if max_pairs.is_some_and(|m| pairs.len() >= m) {
            break;
        }
        if fidelity_cap.is_some_and(|cap| e.fidelity < cap) {
            break;
        }
        if used.contains(&e.a) || used.contains(&e.b) {
            continue;
        }
        used.insert(e.a);
        used.insert(e.b);
        pairs.push(e.pair());
    }
    PairSelection {
        pairs,
        method: SelectionMethod::Greedy,
        fidelity_cap,
    }
}

/// Fidelities are compared on an integer grid of 1e-9 so the matching is
/// exact.
fn fidelity_weight(f: f64) -> i64 {
    (f * 1e9).round() as i64
}

/// Maximum-total-fidelity vertex-disjoint edge set. Pairs are listed in
/// greedy order (decreasing fidelity, ties by id).
pub fn max_weight_matching(t: &DeviceTopology) -> PairSelection {
    let ranked = t.ranked_edges();
    let index: HashMap<u32, usize> = t.qubits.iter().enumerate().map(|(i, &q)| (q, i)).collect();
    let weighted: Vec<matching::WeightedEdge> = ranked
        .iter()
        .map(|e| (index[&e.a], index[&e.b], fidelity_weight(e.fidelity)))
        .collect();
    let mate = matching::max_weight_matching(t.qubits.len(), &weighted);
    let pairs = ranked
        .iter()
        .filter(|e| mate[index[&e.a]] == Some(index[&e.b]))
        .map(Edge::pair)
        .collect();
    PairSelection {
        pairs,
        method: SelectionMethod::MaxWeightMatching,
        fidelity_cap: None,
    }
}

pub fn select_pairs(t: &DeviceTopology, method: SelectionMethod, fidelity_cap: Option<f64>) -> PairSelection {
    match method {
        SelectionMethod::Greedy => greedy_select(t, None, fidelity_cap),
        SelectionMethod::MaxWeightMatching => {
            let mut sel = match fidelity_cap {
                Some(cap) => {
                    let kept: Vec<Edge> = t.edges.iter().copied().filter(|e| e.fidelity >= cap).collect();
                    let sub = DeviceTopology::new(t.qubits.clone(), kept, t.readout.clone())
                        .expect("subgraph of a valid topology");
                    max_weight_matching(&sub)
                }
                None => max_weight_matching(t),
            };
            sel.fidelity_cap = fidelity_cap;
            sel
        }
    }
}
