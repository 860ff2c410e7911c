//! Metric graphs: vertices, edges with arc-length parametrization, incidence
//! and geodesic distance.

use std::collections::{BTreeMap, BTreeSet};

use petgraph::algo::dijkstra;
use petgraph::graph::{NodeIndex, UnGraph};
use serde::{Deserialize, Serialize};

use crate::KhjError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VertexKind {
    Interior,
    Boundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub id: String,
    pub kind: VertexKind,
    #[serde(default, alias = "B", skip_serializing_if = "Option::is_none")]
    pub kirchhoff_flux: Option<f64>,
    #[serde(default, alias = "h", skip_serializing_if = "Option::is_none")]
    pub dirichlet_value: Option<f64>,
}

impl Vertex {
    pub fn interior(id: &str, flux: f64) -> Self {
        Self { id: id.into(), kind: VertexKind::Interior, kirchhoff_flux: Some(flux), dirichlet_value: None }
    }

    pub fn boundary(id: &str, value: f64) -> Self {
        Self { id: id.into(), kind: VertexKind::Boundary, kirchhoff_flux: None, dirichlet_value: Some(value) }
    }

    pub fn is_interior(&self) -> bool {
        self.kind == VertexKind::Interior
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub id: String,
    pub tail: String,
    pub head: String,
    pub length: f64,
}

impl Edge {
    pub fn new(id: &str, tail: &str, head: &str, length: f64) -> Self {
        Self { id: id.into(), tail: tail.into(), head: head.into(), length }
    }
}

/// A point on the network given by an edge index and an arc coordinate
/// measured from the tail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetPoint {
    pub edge: usize,
    pub arc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every structural invariant of a network description.
pub fn validate_parts(vertices: &[Vertex], edges: &[Edge]) -> ValidationReport {
    let mut v = Vec::new();
    let mut ids = BTreeSet::new();
    for vx in vertices {
        if !ids.insert(vx.id.as_str()) {
            v.push(format!("vertex '{}': duplicate id", vx.id));
        }
        match vx.kind {
            VertexKind::Interior => {
                if vx.kirchhoff_flux.is_none() || vx.dirichlet_value.is_some() {
                    v.push(format!("vertex '{}': interior vertex needs a Kirchhoff flux and no Dirichlet value", vx.id));
                }
            }
            VertexKind::Boundary => {
                if vx.dirichlet_value.is_none() || vx.kirchhoff_flux.is_some() {
                    v.push(format!("vertex '{}': boundary vertex needs a Dirichlet value and no Kirchhoff flux", vx.id));
                }
            }
        }
        for val in [vx.kirchhoff_flux, vx.dirichlet_value].into_iter().flatten() {
            if !val.is_finite() {
                v.push(format!("vertex '{}': non-finite data", vx.id));
            }
        }
    }
    let mut edge_ids = BTreeSet::new();
    let mut pairs = BTreeSet::new();
    let mut degree: BTreeMap<&str, usize> = BTreeMap::new();
    for e in edges {
        if !edge_ids.insert(e.id.as_str()) {
            v.push(format!("edge '{}': duplicate id", e.id));
        }
        if !(e.length > 0.0 && e.length.is_finite()) {
            v.push(format!("edge '{}': length must be positive and finite", e.id));
        }
        for end in [&e.tail, &e.head] {
            if !ids.contains(end.as_str()) {
                v.push(format!("edge '{}': endpoint '{}' is not a vertex", e.id, end));
            }
        }
        if e.tail == e.head {
            v.push(format!("edge '{}': self-loop", e.id));
        } else {
            let key = if e.tail < e.head { (e.tail.as_str(), e.head.as_str()) } else { (e.head.as_str(), e.tail.as_str()) };
            if !pairs.insert(key) {
                v.push(format!("edge '{}': parallel edge between '{}' and '{}'", e.id, key.0, key.1));
            }
        }
        *degree.entry(e.tail.as_str()).or_default() += 1;
        *degree.entry(e.head.as_str()).or_default() += 1;
    }
    for vx in vertices {
        if !degree.contains_key(vx.id.as_str()) {
            v.push(format!("vertex '{}': no incident edge", vx.id));
        }
    }
    if !vertices.is_empty() && v.is_empty() {
        // union-find style flood over ids
        let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for e in edges {
            adj.entry(e.tail.as_str()).or_default().push(e.head.as_str());
            adj.entry(e.head.as_str()).or_default().push(e.tail.as_str());
        }
        let mut seen = BTreeSet::new();
        let mut stack = vec![vertices[0].id.as_str()];
        while let Some(x) = stack.pop() {
            if seen.insert(x) {
                stack.extend(adj.get(x).into_iter().flatten().copied());
            }
        }
        if seen.len() != vertices.len() {
            let missing: Vec<_> = vertices.iter().filter(|x| !seen.contains(x.id.as_str())).map(|x| x.id.clone()).collect();
            v.push(format!("network is not connected; unreachable from '{}': {}", vertices[0].id, missing.join(", ")));
        }
    }
    if vertices.is_empty() {
        v.push("network has no vertices".into());
    }
    ValidationReport { violations: v }
}

/// An immutable, validated network. Vertices and edges are stored sorted by
/// id, so all index-based loops run in a canonical order.
#[derive(Debug, Clone)]
pub struct Network {
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
    ends: Vec<(usize, usize)>,
    incidence: Vec<Vec<(usize, i8)>>,
    dist: Vec<Vec<f64>>,
}

impl Network {
    pub fn new(mut vertices: Vec<Vertex>, mut edges: Vec<Edge>) -> Result<Self, KhjError> {
        let report = validate_parts(&vertices, &edges);
        if !report.is_ok() {
            return Err(KhjError::Validation(report.violations));
        }
        vertices.sort_by(|a, b| a.id.cmp(&b.id));
        edges.sort_by(|a, b| a.id.cmp(&b.id));
        let index: BTreeMap<&str, usize> = vertices.iter().enumerate().map(|(i, v)| (v.id.as_str(), i)).collect();
        let ends: Vec<(usize, usize)> = edges.iter().map(|e| (index[e.tail.as_str()], index[e.head.as_str()])).collect();
        let mut incidence = vec![Vec::new(); vertices.len()];
        for (k, &(t, h)) in ends.iter().enumerate() {
            incidence[t].push((k, 1));
            incidence[h].push((k, -1));
        }
        let mut g = UnGraph::<(), f64>::new_undirected();
        let nodes: Vec<NodeIndex> = (0..vertices.len()).map(|_| g.add_node(())).collect();
        for (k, &(t, h)) in ends.iter().enumerate() {
            g.add_edge(nodes[t], nodes[h], edges[k].length);
        }
        let dist = nodes
            .iter()
            .map(|&s| {
                let d = dijkstra(&g, s, None, |e| *e.weight());
                nodes.iter().map(|n| d[n]).collect()
            })
            .collect();
        Ok(Self { vertices, edges, ends, incidence, dist })
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn vertex_index(&self, id: &str) -> Result<usize, KhjError> {
        self.vertices
            .binary_search_by(|v| v.id.as_str().cmp(id))
            .map_err(|_| KhjError::Lookup(format!("unknown vertex '{id}'")))
    }

    pub fn edge_index(&self, id: &str) -> Result<usize, KhjError> {
        self.edges
            .binary_search_by(|e| e.id.as_str().cmp(id))
            .map_err(|_| KhjError::Lookup(format!("unknown edge '{id}'")))
    }

    /// (tail, head) vertex indices of an edge.
    pub fn ends(&self, e: usize) -> (usize, usize) {
        self.ends[e]
    }

    pub fn length(&self, e: usize) -> f64 {
        self.edges[e].length
    }

    /// Indices of interior vertices in canonical order.
    pub fn interior_vertices(&self) -> Vec<usize> {
        (0..self.vertices.len()).filter(|&i| self.vertices[i].is_interior()).collect()
    }

    pub fn boundary_vertices(&self) -> Vec<usize> {
        (0..self.vertices.len()).filter(|&i| !self.vertices[i].is_interior()).collect()
    }

    /// Edges incident to vertex `v` with the incidence index: +1 when `v` is
    /// the tail, -1 when it is the head.
    pub fn incidence(&self, v: usize) -> &[(usize, i8)] {
        &self.incidence[v]
    }

    pub fn incidence_by_id(&self, id: &str) -> Result<Vec<(String, i8)>, KhjError> {
        let v = self.vertex_index(id)?;
        Ok(self.incidence[v].iter().map(|&(e, s)| (self.edges[e].id.clone(), s)).collect())
    }

    /// Shortest-path distance between two vertices.
    pub fn vertex_distance(&self, a: usize, b: usize) -> f64 {
        self.dist[a][b]
    }

    /// Distance from a point to a vertex.
    pub fn point_to_vertex(&self, x: NetPoint, v: usize) -> f64 {
        let (t, h) = self.ends[x.edge];
        let a = self.length(x.edge);
        (x.arc + self.dist[t][v]).min((a - x.arc) + self.dist[h][v])
    }

    pub fn geodesic(&self, x: NetPoint, y: NetPoint) -> f64 {
        let (ty, hy) = self.ends[y.edge];
        let ay = self.length(y.edge);
        let via = (self.point_to_vertex(x, ty) + y.arc).min(self.point_to_vertex(x, hy) + (ay - y.arc));
        if x.edge == y.edge {
            via.min((x.arc - y.arc).abs())
        } else {
            via
        }
    }

    /// Distance from a point to the nearest boundary vertex.
    pub fn distance_to_boundary(&self, x: NetPoint) -> f64 {
        self.boundary_vertices().into_iter().map(|v| self.point_to_vertex(x, v)).fold(f64::INFINITY, f64::min)
    }

    pub fn max_length(&self) -> f64 {
        self.edges.iter().map(|e| e.length).fold(0.0, f64::max)
    }

    pub fn min_length(&self) -> f64 {
        self.edges.iter().map(|e| e.length).fold(f64::INFINITY, f64::min)
    }

    /// A star network: interior vertex `O` and boundary vertices `v1..vN`,
    /// every edge `E{i}` tailed at `O`.
    pub fn star(lengths: &[f64], flux: f64, boundary: &[f64]) -> Result<Self, KhjError> {
        assert_eq!(lengths.len(), boundary.len());
        let mut vs = vec![Vertex::interior("O", flux)];
        let mut es = Vec::new();
        for (i, (&a, &hv)) in lengths.iter().zip(boundary).enumerate() {
            let name = format!("v{}", i + 1);
            vs.push(Vertex::boundary(&name, hv));
            es.push(Edge::new(&format!("E{}", i + 1), "O", &name, a));
        }
        Network::new(vs, es)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> Network {
        Network::new(
            vec![Vertex::boundary("O", 0.0), Vertex::interior("v1", 0.0), Vertex::boundary("v2", 0.0)],
            vec![Edge::new("a", "O", "v1", 1.0), Edge::new("b", "v1", "v2", 2.0)],
        )
        .unwrap()
    }

    #[test]
    fn incidence_signs() {
        let net = Network::star(&[1.0, 1.0, 1.0], 0.0, &[0.0, 0.0, 0.0]).unwrap();
        let inc = net.incidence_by_id("O").unwrap();
        assert_eq!(inc.len(), 3);
        assert!(inc.iter().all(|(_, s)| *s == 1));
        assert_eq!(net.incidence_by_id("v2").unwrap(), vec![("E2".to_string(), -1)]);
        assert!(net.incidence_by_id("nope").is_err());
    }

    #[test]
    fn geodesic_examples() {
        let net = Network::star(&[1.0, 1.0], 0.0, &[0.0, 0.0]).unwrap();
        let p = |e, arc| NetPoint { edge: e, arc };
        assert!((net.geodesic(p(0, 0.2), p(0, 0.7)) - 0.5).abs() < 1e-15);
        assert!((net.geodesic(p(0, 0.3), p(1, 0.4)) - 0.7).abs() < 1e-15);
        let c = chain();
        // oracle: path O -> v1 is 1, so 0.6 + 0.5
        assert!((c.geodesic(p(0, 0.4), p(1, 0.5)) - 1.1).abs() < 1e-15);
    }

    #[test]
    fn validation_reports() {
        let ok = validate_parts(
            &[Vertex::interior("O", 0.0), Vertex::boundary("a", 0.0), Vertex::boundary("b", 0.0), Vertex::boundary("c", 0.0)],
            &[Edge::new("1", "O", "a", 1.0), Edge::new("2", "O", "b", 1.0), Edge::new("3", "O", "c", 1.0)],
        );
        assert!(ok.is_ok());
        let missing = validate_parts(&[Vertex::boundary("a", 0.0)], &[Edge::new("e", "a", "zz", 1.0)]);
        assert_eq!(missing.violations.iter().filter(|s| s.contains("edge 'e'")).count(), 1);
        let split = validate_parts(
            &[Vertex::boundary("a", 0.0), Vertex::boundary("b", 0.0), Vertex::boundary("c", 0.0), Vertex::boundary("d", 0.0)],
            &[Edge::new("1", "a", "b", 1.0), Edge::new("2", "c", "d", 1.0)],
        );
        assert!(split.violations.iter().any(|s| s.contains("not connected")));
        let bad = validate_parts(&[Vertex::boundary("a", 0.0), Vertex::boundary("b", 0.0)], &[Edge::new("1", "a", "b", -1.0)]);
        assert!(!bad.is_ok());
        let par = validate_parts(
            &[Vertex::boundary("a", 0.0), Vertex::boundary("b", 0.0)],
            &[Edge::new("1", "a", "b", 1.0), Edge::new("2", "b", "a", 1.0)],
        );
        assert!(par.violations.iter().any(|s| s.contains("parallel")));
    }

    #[test]
    fn canonical_order_is_by_id() {
        let a = Network::new(
            vec![Vertex::boundary("z", 0.0), Vertex::boundary("a", 1.0)],
            vec![Edge::new("e", "z", "a", 1.0)],
        )
        .unwrap();
        assert_eq!(a.vertices()[0].id, "a");
        assert_eq!(a.ends(0), (1, 0));
    }
}
