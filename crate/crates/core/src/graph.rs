//! The residual stream as a DAG of sub-module outputs (sources) feeding
//! branch inputs (destinations).
//!
//! Sources are ordered `[H0, A1, F1, ..., AL, FL]` and destinations
//! `[A1.in, F1.in, ..., AL.in, FL.in, readout]`. With that ordering a source
//! at index `s` reaches destination `d` exactly when `s <= d`, so the mask is
//! triangular and the graph is acyclic by construction.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    Embedding,
    /// 1-based layer
    Attn(usize),
    Ffn(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Destination {
    AttnIn(usize),
    FfnIn(usize),
    Readout,
}

impl Source {
    pub fn index(self) -> usize {
        match self {
            Source::Embedding => 0,
            Source::Attn(l) => 2 * l - 1,
            Source::Ffn(l) => 2 * l,
        }
    }

    pub fn from_index(i: usize) -> Source {
        match i {
            0 => Source::Embedding,
            i if i % 2 == 1 => Source::Attn(i.div_ceil(2)),
            i => Source::Ffn(i / 2),
        }
    }
}

impl Destination {
    pub fn index(self, n_layers: usize) -> usize {
        match self {
            Destination::AttnIn(l) => 2 * l - 2,
            Destination::FfnIn(l) => 2 * l - 1,
            Destination::Readout => 2 * n_layers,
        }
    }

    pub fn from_index(i: usize, n_layers: usize) -> Destination {
        if i >= 2 * n_layers {
            Destination::Readout
        } else if i.is_multiple_of(2) {
            Destination::AttnIn(i / 2 + 1)
        } else {
            Destination::FfnIn(i.div_ceil(2))
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Embedding => write!(f, "H0"),
            Source::Attn(l) => write!(f, "A{l}"),
            Source::Ffn(l) => write!(f, "F{l}"),
        }
    }
}

impl fmt::Display for Destination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Destination::AttnIn(l) => write!(f, "A{l}.in"),
            Destination::FfnIn(l) => write!(f, "F{l}.in"),
            Destination::Readout => write!(f, "readout"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub id: usize,
    pub source: usize,
    pub destination: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CircuitGraph {
    n_layers: usize,
    mask: Vec<bool>,
    edges: Vec<Edge>,
    /// `n_o * n_i` lookup from (source, destination) to edge id
    ids: Vec<Option<usize>>,
}

impl CircuitGraph {
    pub fn build(n_layers: usize) -> Result<Self> {
        if n_layers < 1 {
            return Err(Error::NoLayers);
        }
        let n = 2 * n_layers + 1;
        let mut mask = vec![false; n * n];
        let mut ids = vec![None; n * n];
        let mut edges = Vec::with_capacity(n * (n_layers + 1));
        for s in 0..n {
            for d in s..n {
                let id = edges.len();
                mask[s * n + d] = true;
                ids[s * n + d] = Some(id);
                edges.push(Edge {
                    id,
                    source: s,
                    destination: d,
                });
            }
        }
        Ok(CircuitGraph {
            n_layers,
            mask,
            edges,
            ids,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    /// Number of sources, `2L + 1`.
    pub fn n_sources(&self) -> usize {
        2 * self.n_layers + 1
    }

    /// Number of destinations, `2L + 1`.
    pub fn n_destinations(&self) -> usize {
        2 * self.n_layers + 1
    }

    pub fn is_valid(&self, source: usize, destination: usize) -> bool {
        let n = self.n_sources();
        source < n && destination < n && self.mask[source * n + destination]
    }

    /// Row-major `n_o × n_i` validity mask.
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn source(&self, index: usize) -> Source {
        Source::from_index(index)
    }

    pub fn destination(&self, index: usize) -> Destination {
        Destination::from_index(index, self.n_layers)
    }

    pub fn edge_index(&self, source: usize, destination: usize) -> Result<usize> {
        let n = self.n_sources();
        if source < n && destination < n {
            if let Some(id) = self.ids[source * n + destination] {
                return Ok(id);
            }
        }
        Err(Error::InvalidEdge {
            source_name: if source < n {
                self.source(source).to_string()
            } else {
                format!("#{source}")
            },
            destination: if destination < n {
                self.destination(destination).to_string()
            } else {
                format!("#{destination}")
            },
        })
    }

    pub fn edge_between(&self, source: Source, destination: Destination) -> Result<usize> {
        self.edge_index(source.index(), destination.index(self.n_layers))
    }

    pub fn sources_of(&self, destination: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_sources()).filter(move |&s| self.is_valid(s, destination))
    }

    pub fn destinations_of(&self, source: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_destinations()).filter(move |&d| self.is_valid(source, d))
    }

    /// `source \t destination \t edge_id`, one edge per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for e in &self.edges {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                self.source(e.source),
                self.destination(e.destination),
                e.id
            ));
        }
        out
    }
}
