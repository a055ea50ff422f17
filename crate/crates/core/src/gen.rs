//! Seedable graph generators: G(N, M) Erdős–Rényi, Barabási–Albert
//! preferential attachment, and the star graph.
//!
//! All randomness comes from a Xoshiro256++ stream seeded with
//! `seed_from_u64`, so a given spec always yields the same graph.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::GenError;
use crate::node::{EdgeRecord, NodeId, NodeRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphModel {
    /// Exactly `edges` distinct directed non-loop pairs, uniformly chosen.
    ErdosRenyi { nodes: u64, edges: u64 },
    /// Each node after the seed attaches `attach` edges to distinct
    /// existing nodes, chosen proportionally to degree.
    BarabasiAlbert { nodes: u64, attach: u64 },
    /// Every node except 0 has one edge into node 0.
    Star { nodes: u64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum IdKind {
    #[default]
    Integer,
    /// Ids rendered as `n<decimal>`.
    Text,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GenSpec {
    pub model: GraphModel,
    pub seed: u64,
    pub id_kind: IdKind,
}

impl GenSpec {
    pub fn new(model: GraphModel, seed: u64) -> Self {
        Self {
            model,
            seed,
            id_kind: IdKind::Integer,
        }
    }

    pub fn with_ids(mut self, id_kind: IdKind) -> Self {
        self.id_kind = id_kind;
        self
    }

    pub fn validate(&self) -> Result<(), GenError> {
        match self.model {
            GraphModel::ErdosRenyi { nodes, edges } => {
                let pairs = nodes.checked_mul(nodes.saturating_sub(1));
                if pairs.is_none_or(|p| edges > p) {
                    return Err(GenError::InvalidSpec(format!(
                        "{edges} edges exceed the N(N-1) = {} distinct directed pairs of {nodes} nodes",
                        pairs.map_or("overflow".to_owned(), |p| p.to_string())
                    )));
                }
            }
            GraphModel::BarabasiAlbert { nodes, attach } => {
                if attach == 0 {
                    return Err(GenError::InvalidSpec("attach must be at least 1".into()));
                }
                if nodes < attach {
                    return Err(GenError::InvalidSpec(format!(
                        "{nodes} nodes is fewer than attach = {attach}"
                    )));
                }
            }
            GraphModel::Star { .. } => {}
        }
        if self.node_count() > i64::MAX as u64 {
            return Err(GenError::InvalidSpec("too many nodes".into()));
        }
        Ok(())
    }

    pub fn node_count(&self) -> u64 {
        match self.model {
            GraphModel::ErdosRenyi { nodes, .. }
            | GraphModel::BarabasiAlbert { nodes, .. }
            | GraphModel::Star { nodes } => nodes,
        }
    }

    /// Edge count the spec will produce.
    pub fn edge_count(&self) -> u64 {
        match self.model {
            GraphModel::ErdosRenyi { edges, .. } => edges,
            GraphModel::BarabasiAlbert { nodes, attach } => ba_edge_count(nodes, attach),
            GraphModel::Star { nodes } => nodes.saturating_sub(1),
        }
    }
}

/// Seed size used by the Barabási–Albert generator.
fn ba_seed_nodes(attach: u64) -> u64 {
    attach.max(2)
}

/// `attach * (N - seed)`; with `attach = 2` this is `2 * (N - 2)`.
pub fn ba_edge_count(nodes: u64, attach: u64) -> u64 {
    attach * nodes.saturating_sub(ba_seed_nodes(attach))
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GeneratedGraph {
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<EdgeRecord>,
}

pub fn generate(spec: &GenSpec) -> Result<GeneratedGraph, GenError> {
    spec.validate()?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(spec.seed);
    let pairs = match spec.model {
        GraphModel::ErdosRenyi { nodes, edges } => erdos_renyi(nodes, edges, &mut rng),
        GraphModel::BarabasiAlbert { nodes, attach } => barabasi_albert(nodes, attach, &mut rng),
        GraphModel::Star { nodes } => (1..nodes).map(|i| (i, 0)).collect(),
    };

    let id = |i: u64| match spec.id_kind {
        IdKind::Integer => NodeId::Int(i as i64),
        IdKind::Text => NodeId::Text(format!("n{i}")),
    };
    Ok(GeneratedGraph {
        nodes: (0..spec.node_count())
            .map(|i| NodeRecord::new(id(i)))
            .collect(),
        edges: pairs
            .into_iter()
            .map(|(s, t)| EdgeRecord::new(id(s), id(t)))
            .collect(),
    })
}

/// G(N, M) by Floyd's sampling over the `N(N-1)` ordered non-loop pairs.
fn erdos_renyi(nodes: u64, edges: u64, rng: &mut impl Rng) -> Vec<(u64, u64)> {
    let space = nodes * nodes.saturating_sub(1);
    let mut chosen = HashSet::with_capacity(edges as usize);
    let mut order = Vec::with_capacity(edges as usize);
    for j in (space - edges)..space {
        let t = rng.random_range(0..=j);
        let pick = if chosen.insert(t) {
            t
        } else {
            chosen.insert(j);
            j
        };
        order.push(pick);
    }
    order
        .into_iter()
        .map(|k| {
            let source = k / (nodes - 1);
            let r = k % (nodes - 1);
            let target = if r < source { r } else { r + 1 };
            (source, target)
        })
        .collect()
}

/// Preferential attachment with `max(attach, 2)` unconnected seed nodes.
///
/// Each node is drawn with weight `max(degree, 1)`: the endpoint list holds
/// one entry per unit of degree and `isolated` holds nodes still at degree
/// zero.
fn barabasi_albert(nodes: u64, attach: u64, rng: &mut impl Rng) -> Vec<(u64, u64)> {
    let seed = ba_seed_nodes(attach).min(nodes);
    let mut edges = Vec::with_capacity(ba_edge_count(nodes, attach) as usize);
    let mut endpoints: Vec<u64> = Vec::with_capacity(2 * ba_edge_count(nodes, attach) as usize);
    let mut isolated: Vec<u64> = (0..seed).collect();
    let mut targets: Vec<u64> = Vec::with_capacity(attach as usize);

    for v in seed..nodes {
        targets.clear();
        while (targets.len() as u64) < attach {
            let draw = rng.random_range(0..endpoints.len() + isolated.len());
            let t = if draw < endpoints.len() {
                endpoints[draw]
            } else {
                isolated[draw - endpoints.len()]
            };
            if !targets.contains(&t) {
                targets.push(t);
            }
        }
        for &t in &targets {
            edges.push((v, t));
            if let Some(pos) = isolated.iter().position(|&i| i == t) {
                isolated.swap_remove(pos);
            }
            endpoints.push(t);
            endpoints.push(v);
        }
    }
    edges
}
