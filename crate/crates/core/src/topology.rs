//! Network description: nodes, symmetric interference neighborhoods and the
//! directed single-hop traffic links that run over them.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// External node identifier as it appears in topology files.
pub type NodeId = u32;

/// Placement attempts made by [`NetworkTopology::gen_geometric`] before giving up.
pub const GEOMETRIC_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Node<T> {
    pub id: NodeId,
    /// Energy spent per transmitted packet.
    pub energy: T,
}

impl<T> Node<T> {
    pub fn new(id: NodeId, energy: T) -> Self {
        Self { id, energy }
    }
}

/// A directed traffic link between two neighboring nodes, by node index.
#[derive(Debug, Clone, PartialEq)]
pub struct Link<T> {
    pub from: usize,
    pub to: usize,
    /// Packets per slot delivered when the transmission succeeds.
    pub capacity: T,
}

/// Validated, immutable network.
///
/// Nodes are addressed internally by their position in [`nodes`](Self::nodes);
/// links by their position in [`links`](Self::links). All derived sets are sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology<T> {
    nodes: Vec<Node<T>>,
    index: HashMap<NodeId, usize>,
    neighbors: Vec<Vec<usize>>,
    links: Vec<Link<T>>,
    out_links: Vec<Vec<usize>>,
    in_links: Vec<Vec<usize>>,
    interfering: Vec<Vec<usize>>,
    blockers: Vec<Vec<usize>>,
}

impl<T: Scalar> NetworkTopology<T> {
    /// Validates the raw description and derives N_i, O_i, I_i.
    ///
    /// `neighbor_pairs` are unordered; duplicates (in either orientation) are merged.
    pub fn build(
        nodes: Vec<Node<T>>,
        neighbor_pairs: &[(NodeId, NodeId)],
        links: &[(NodeId, NodeId, T)],
    ) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Topology("no nodes".into()));
        }
        let mut index = HashMap::with_capacity(nodes.len());
        for (k, node) in nodes.iter().enumerate() {
            if index.insert(node.id, k).is_some() {
                return Err(Error::Topology(format!("duplicate node id {}", node.id)));
            }
            if !(node.energy > T::zero()) || !node.energy.is_finite() {
                return Err(Error::Topology(format!(
                    "node {} has nonpositive energy {}",
                    node.id, node.energy
                )));
            }
        }
        let lookup = |id: NodeId| {
            index
                .get(&id)
                .copied()
                .ok_or_else(|| Error::Topology(format!("unknown node id {id}")))
        };

        let n = nodes.len();
        let mut nbr_sets = vec![BTreeSet::new(); n];
        for &(a, b) in neighbor_pairs {
            let (ia, ib) = (lookup(a)?, lookup(b)?);
            if ia == ib {
                return Err(Error::Topology(format!(
                    "node {a} listed as its own neighbor"
                )));
            }
            nbr_sets[ia].insert(ib);
            nbr_sets[ib].insert(ia);
        }
        let neighbors: Vec<Vec<usize>> = nbr_sets
            .into_iter()
            .map(|s| s.into_iter().collect())
            .collect();

        let mut seen = BTreeSet::new();
        let mut link_list = Vec::with_capacity(links.len());
        for &(a, b, capacity) in links {
            let (from, to) = (lookup(a)?, lookup(b)?);
            if from == to {
                return Err(Error::Topology(format!("self-link on node {a}")));
            }
            if neighbors[from].binary_search(&to).is_err() {
                return Err(Error::Topology(format!(
                    "link between non-neighbors {a} -> {b}"
                )));
            }
            if !seen.insert((from, to)) {
                return Err(Error::Topology(format!("duplicate link {a} -> {b}")));
            }
            if !(capacity > T::zero()) || !capacity.is_finite() {
                return Err(Error::Topology(format!(
                    "link {a} -> {b} has nonpositive capacity {capacity}"
                )));
            }
            link_list.push(Link { from, to, capacity });
        }

        let mut out_links = vec![Vec::new(); n];
        let mut in_links = vec![Vec::new(); n];
        for (k, link) in link_list.iter().enumerate() {
            out_links[link.from].push(k);
            in_links[link.to].push(k);
        }

        // Links whose success needs node i silent: receiver in N_i ∪ {i}, transmitter not i.
        let interfering = (0..n)
            .map(|i| {
                link_list
                    .iter()
                    .enumerate()
                    .filter(|(_, l)| {
                        l.from != i && (l.to == i || neighbors[i].binary_search(&l.to).is_ok())
                    })
                    .map(|(k, _)| k)
                    .collect()
            })
            .collect();

        // Nodes that must stay silent for link (i, j) to succeed: {j} ∪ N_j \ {i}.
        let blockers = link_list
            .iter()
            .map(|l| {
                let mut b: Vec<usize> = std::iter::once(l.to)
                    .chain(neighbors[l.to].iter().copied().filter(|&m| m != l.from))
                    .collect();
                b.sort_unstable();
                b
            })
            .collect();

        Ok(Self {
            nodes,
            index,
            neighbors,
            links: link_list,
            out_links,
            in_links,
            interfering,
            blockers,
        })
    }

    /// Chain 1 – 2 – … – n with traffic in both directions on every edge.
    pub fn gen_linear(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Validation(format!(
                "linear network needs n >= 2, got {n}"
            )));
        }
        let nodes = default_nodes(n);
        let mut pairs = Vec::with_capacity(n - 1);
        let mut links = Vec::with_capacity(2 * (n - 1));
        for k in 1..n as NodeId {
            pairs.push((k, k + 1));
            links.push((k, k + 1, T::one()));
            links.push((k + 1, k, T::one()));
        }
        Self::build(nodes, &pairs, &links)
    }

    /// Hub node 1 with leaves 2..=n arranged on a ring; every leaf sends to the hub.
    pub fn gen_star(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::Validation(format!(
                "star network needs n >= 3, got {n}"
            )));
        }
        let n_id = n as NodeId;
        let nodes = default_nodes(n);
        let mut pairs: Vec<(NodeId, NodeId)> = (2..=n_id).map(|k| (1, k)).collect();
        pairs.extend((2..n_id).map(|k| (k, k + 1)));
        pairs.push((2, n_id));
        let links: Vec<_> = (2..=n_id).map(|k| (k, 1, T::one())).collect();
        Self::build(nodes, &pairs, &links)
    }

    /// Random geometric graph on the unit square. Nodes closer than
    /// `connectivity_factor` interfere and exchange traffic both ways.
    /// Placement is redrawn until the graph is connected.
    pub fn gen_geometric(n: usize, connectivity_factor: f64, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Validation(format!(
                "geometric network needs n >= 2, got {n}"
            )));
        }
        if !(connectivity_factor > 0.0 && connectivity_factor <= std::f64::consts::SQRT_2) {
            return Err(Error::Validation(format!(
                "connectivity factor must lie in (0, sqrt 2], got {connectivity_factor}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..GEOMETRIC_RETRIES {
            let pos: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen(), rng.gen())).collect();
            let mut pairs = Vec::new();
            for a in 0..n {
                for b in a + 1..n {
                    let d = (pos[a].0 - pos[b].0).hypot(pos[a].1 - pos[b].1);
                    if d <= connectivity_factor {
                        pairs.push((a, b));
                    }
                }
            }
            if !is_connected(n, &pairs) {
                continue;
            }
            let id = |k: usize| k as NodeId + 1;
            let links: Vec<_> = pairs
                .iter()
                .flat_map(|&(a, b)| [(id(a), id(b), T::one()), (id(b), id(a), T::one())])
                .collect();
            let pairs: Vec<_> = pairs.iter().map(|&(a, b)| (id(a), id(b))).collect();
            return Self::build(default_nodes(n), &pairs, &links);
        }
        Err(Error::Validation(format!(
            "no connected placement of {n} nodes with factor {connectivity_factor} after {GEOMETRIC_RETRIES} attempts"
        )))
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link<T>] {
        &self.links
    }

    pub fn node_index(&self, id: NodeId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn node_id(&self, index: usize) -> NodeId {
        self.nodes[index].id
    }

    /// Link index for the directed pair of node ids, if present.
    pub fn link_index(&self, from: NodeId, to: NodeId) -> Option<usize> {
        let (f, t) = (self.node_index(from)?, self.node_index(to)?);
        self.out_links[f]
            .iter()
            .copied()
            .find(|&k| self.links[k].to == t)
    }

    /// N_i
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    /// Links transmitted by `node` (indices of O_i).
    pub fn out_links(&self, node: usize) -> &[usize] {
        &self.out_links[node]
    }

    /// Links received by `node` (indices of I_i).
    pub fn in_links(&self, node: usize) -> &[usize] {
        &self.in_links[node]
    }

    /// Nodes whose silence link `link` needs, i.e. its receiver plus the
    /// receiver's neighbors other than the transmitter.
    pub fn blockers(&self, link: usize) -> &[usize] {
        &self.blockers[link]
    }

    /// Links (k, l) with l ∈ N_i ∪ {i} and k ≠ i, by node index.
    pub fn interfering(&self, node: usize) -> &[usize] {
        &self.interfering[node]
    }

    /// Same as [`interfering`](Self::interfering) but addressed by node id.
    pub fn interfering_links(&self, id: NodeId) -> Result<&[usize]> {
        let i = self
            .node_index(id)
            .ok_or_else(|| Error::Topology(format!("unknown node id {id}")))?;
        Ok(self.interfering(i))
    }

    /// Unordered neighbor pairs (a < b by index) in a stable order.
    pub fn neighbor_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for (a, nb) in self.neighbors.iter().enumerate() {
            pairs.extend(nb.iter().filter(|&&b| b > a).map(|&b| (a, b)));
        }
        pairs
    }

    pub fn max_capacity(&self) -> T {
        self.links
            .iter()
            .map(|l| l.capacity)
            .fold(T::zero(), T::max)
    }

    /// Human-readable `from-to` label by node ids.
    pub fn link_label(&self, link: usize) -> String {
        let l = &self.links[link];
        format!("{}-{}", self.nodes[l.from].id, self.nodes[l.to].id)
    }

    /// Same network with every capacity multiplied by `factor`.
    pub fn with_scaled_capacities(&self, factor: T) -> Result<Self> {
        let mut scaled = self.clone();
        for l in &mut scaled.links {
            l.capacity *= factor;
            if !(l.capacity > T::zero()) {
                return Err(Error::Topology("capacity scale must be positive".into()));
            }
        }
        Ok(scaled)
    }
}

fn default_nodes<T: Scalar>(n: usize) -> Vec<Node<T>> {
    (1..=n as NodeId)
        .map(|id| Node {
            id,
            energy: T::one(),
        })
        .collect()
}

fn is_connected(n: usize, pairs: &[(usize, usize)]) -> bool {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in pairs {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                queue.push_back(w);
            }
        }
    }
    count == n
}

// ---- file format ----

fn one<T: Scalar>() -> T {
    T::one()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord<T: Scalar> {
    pub id: NodeId,
    #[serde(default = "one")]
    pub energy: T,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkRecord<T: Scalar> {
    pub from: NodeId,
    pub to: NodeId,
    #[serde(default = "one")]
    pub capacity: T,
}

/// On-disk JSON layout of a topology.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: DeserializeOwned"))]
pub struct TopologyFile<T: Scalar> {
    pub nodes: Vec<NodeRecord<T>>,
    pub neighbors: Vec<[NodeId; 2]>,
    pub links: Vec<LinkRecord<T>>,
}

impl<T: Scalar> From<&NetworkTopology<T>> for TopologyFile<T> {
    fn from(topo: &NetworkTopology<T>) -> Self {
        let id = |k: usize| topo.nodes[k].id;
        Self {
            nodes: topo
                .nodes
                .iter()
                .map(|n| NodeRecord {
                    id: n.id,
                    energy: n.energy,
                })
                .collect(),
            neighbors: topo
                .neighbor_pairs()
                .into_iter()
                .map(|(a, b)| [id(a), id(b)])
                .collect(),
            links: topo
                .links
                .iter()
                .map(|l| LinkRecord {
                    from: id(l.from),
                    to: id(l.to),
                    capacity: l.capacity,
                })
                .collect(),
        }
    }
}

impl<T: Scalar> TryFrom<TopologyFile<T>> for NetworkTopology<T> {
    type Error = Error;

    fn try_from(file: TopologyFile<T>) -> Result<Self> {
        let nodes = file
            .nodes
            .into_iter()
            .map(|n| Node {
                id: n.id,
                energy: n.energy,
            })
            .collect();
        let pairs: Vec<_> = file.neighbors.iter().map(|p| (p[0], p[1])).collect();
        let links: Vec<_> = file
            .links
            .iter()
            .map(|l| (l.from, l.to, l.capacity))
            .collect();
        NetworkTopology::build(nodes, &pairs, &links)
    }
}

impl<T: Scalar + Serialize + DeserializeOwned> NetworkTopology<T> {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: TopologyFile<T> = serde_json::from_str(text)?;
        file.try_into()
    }

    pub fn to_json(&self) -> String {
        let mut s =
            serde_json::to_string_pretty(&TopologyFile::from(self)).expect("topology serializes");
        s.push('\n');
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}
