//! Year-sliced similarity graphs: normalized cosine distances, minimum
//! spanning trees, threshold cuts, and the ultrametric they encode.
//!
//! Distances are standardized per year over every edge of that year's
//! complete graph (population sigma), so the cut-off grid lives on one
//! common z-unit scale across years.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::corpus::CompanyId;
use crate::error::{Error, Result};
use crate::pca::DenseVector;
use crate::sparsefeat::from_csv_open;

/// Clustering method label carried by every produced partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum MethodTag {
    /// Fixed-threshold cosine-distance clusters.
    Cd,
    /// Rolling-threshold cosine-distance clusters.
    Cdr,
    Sic,
    Bisc,
    External,
}

impl MethodTag {
    pub fn label(self) -> &'static str {
        match self {
            MethodTag::Cd => "CD",
            MethodTag::Cdr => "CDR",
            MethodTag::Sic => "SIC",
            MethodTag::Bisc => "BISC",
            MethodTag::External => "external",
        }
    }
}

impl std::fmt::Display for MethodTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// One cluster of a year partition; members sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cluster {
    pub id: String,
    pub members: Vec<CompanyId>,
}

/// A partition of (a subset of) one year's companies.
#[derive(Clone, Debug, PartialEq)]
pub struct YearClustering {
    pub year: i32,
    /// Cut-off in normalized z-units; `None` for code-based or external
    /// partitions where no threshold applies.
    pub theta: Option<f64>,
    pub method: MethodTag,
    pub clusters: Vec<Cluster>,
}

impl YearClustering {
    /// Cluster index per company.
    pub fn labels(&self) -> BTreeMap<CompanyId, usize> {
        let mut out = BTreeMap::new();
        for (i, cluster) in self.clusters.iter().enumerate() {
            for m in &cluster.members {
                out.insert(m.clone(), i);
            }
        }
        out
    }

    /// The partition as a canonical set of sorted member sets.
    pub fn partition(&self) -> Vec<Vec<CompanyId>> {
        let mut sets: Vec<Vec<CompanyId>> = self
            .clusters
            .iter()
            .map(|c| {
                let mut m = c.members.clone();
                m.sort();
                m
            })
            .collect();
        sets.sort();
        sets
    }

    /// True when clusters are disjoint and non-empty.
    pub fn is_valid_partition(&self) -> bool {
        let mut seen = std::collections::BTreeSet::new();
        for cluster in &self.clusters {
            if cluster.members.is_empty() {
                return false;
            }
            for m in &cluster.members {
                if !seen.insert(m.clone()) {
                    return false;
                }
            }
        }
        true
    }

    pub fn n_companies(&self) -> usize {
        self.clusters.iter().map(|c| c.members.len()).sum()
    }
}

/// Per-year standardization constants of the raw cosine distances.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizationStats {
    pub mean: f64,
    /// Population standard deviation (divide by N).
    pub std_dev: f64,
}

impl NormalizationStats {
    pub fn normalize(&self, d_cos: f64) -> f64 {
        (d_cos - self.mean) / self.std_dev
    }
}

/// One undirected edge; `a < b` index into the graph's node list.
#[derive(Clone, Copy, Debug)]
pub struct GraphEdge {
    pub a: usize,
    pub b: usize,
    /// Raw cosine distance in [0, 2].
    pub d_cos: f64,
    /// Normalized weight (z-units); set by [`normalize_distances`].
    pub cd: Option<f64>,
}

/// Complete distance graph over one year's companies with features.
#[derive(Clone, Debug)]
pub struct DistanceGraph {
    pub year: i32,
    /// Sorted company ids; edge endpoints index into this list.
    pub nodes: Vec<CompanyId>,
    pub edges: Vec<GraphEdge>,
    pub norm: Option<NormalizationStats>,
}

/// Cosine distance `1 - (a.b)/(|a||b|)`, in [0, 2]. Zero-norm input is an
/// error: the angle is undefined.
pub fn cosine_distance(a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(1.0 - a.dot(b) / (na * nb))
}

/// Builds the complete raw-distance graph over the given dense vectors.
pub fn build_distance_graph(
    year: i32,
    vectors: &BTreeMap<CompanyId, DenseVector>,
) -> Result<DistanceGraph> {
    let nodes: Vec<CompanyId> = vectors.keys().cloned().collect();
    let dense: Vec<&DVector<f64>> = nodes.iter().map(|c| &vectors[c].values).collect();
    let n = nodes.len();
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for a in 0..n {
        for b in (a + 1)..n {
            pairs.push((a, b));
        }
    }
    let edges: Vec<GraphEdge> = pairs
        .into_par_iter()
        .map(|(a, b)| {
            cosine_distance(dense[a], dense[b]).map(|d_cos| GraphEdge {
                a,
                b,
                d_cos,
                cd: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DistanceGraph {
        year,
        nodes,
        edges,
        norm: None,
    })
}

/// Standardizes the raw distances of this year's complete graph to z-units
/// (population sigma). Fails on fewer than two edges or zero variance.
pub fn normalize_distances(graph: &mut DistanceGraph) -> Result<()> {
    let n = graph.edges.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "year {}: need at least 2 edges to normalize, have {n}",
            graph.year
        )));
    }
    let mean = graph.edges.iter().map(|e| e.d_cos).sum::<f64>() / n as f64;
    let var = graph
        .edges
        .iter()
        .map(|e| (e.d_cos - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    if var == 0.0 {
        return Err(Error::ZeroVariance(format!(
            "year {}: all pairwise distances equal, panel degenerate",
            graph.year
        )));
    }
    let stats = NormalizationStats {
        mean,
        std_dev: var.sqrt(),
    };
    for e in &mut graph.edges {
        e.cd = Some(stats.normalize(e.d_cos));
    }
    graph.norm = Some(stats);
    Ok(())
}

/// One MST edge in selection order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MstEdge {
    pub a: usize,
    pub b: usize,
    /// Normalized weight.
    pub weight: f64,
}

/// Minimum spanning tree of one year's normalized graph. Edges are recorded
/// in Kruskal selection order, which doubles as the deterministic tie-break
/// record.
#[derive(Clone, Debug)]
pub struct MstForest {
    pub year: i32,
    pub nodes: Vec<CompanyId>,
    pub edges: Vec<MstEdge>,
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Kruskal MST over the normalized weights. Ties break lexicographically by
/// `(weight, min id, max id)`; node indices follow sorted company-id order,
/// so index order is id order.
pub fn build_mst(graph: &DistanceGraph) -> Result<MstForest> {
    if graph.nodes.is_empty() {
        return Err(Error::InsufficientData(format!(
            "year {}: empty graph",
            graph.year
        )));
    }
    let mut edges: Vec<(f64, usize, usize)> = graph
        .edges
        .iter()
        .map(|e| {
            let w = e.cd.ok_or_else(|| {
                Error::Validation(format!(
                    "year {}: graph not normalized before MST construction",
                    graph.year
                ))
            })?;
            Ok((w, e.a.min(e.b), e.a.max(e.b)))
        })
        .collect::<Result<Vec<_>>>()?;
    edges.sort_by(|x, y| {
        x.0.partial_cmp(&y.0)
            .expect("finite edge weights")
            .then(x.1.cmp(&y.1))
            .then(x.2.cmp(&y.2))
    });
    let n = graph.nodes.len();
    let mut uf = UnionFind::new(n);
    let mut mst_edges = Vec::with_capacity(n.saturating_sub(1));
    for (w, a, b) in edges {
        if uf.union(a, b) {
            mst_edges.push(MstEdge { a, b, weight: w });
            if mst_edges.len() == n - 1 {
                break;
            }
        }
    }
    if mst_edges.len() + 1 != n {
        return Err(Error::Validation(format!(
            "year {}: graph not connected ({} nodes, {} tree edges)",
            graph.year,
            n,
            mst_edges.len()
        )));
    }
    Ok(MstForest {
        year: graph.year,
        nodes: graph.nodes.clone(),
        edges: mst_edges,
    })
}

/// Connected components of the MST after removing every edge with weight
/// strictly above `theta`.
pub fn cut_mst(mst: &MstForest, theta: f64, method: MethodTag) -> YearClustering {
    let n = mst.nodes.len();
    let mut uf = UnionFind::new(n);
    for e in &mst.edges {
        if e.weight <= theta {
            uf.union(e.a, e.b);
        }
    }
    let mut components: BTreeMap<usize, Vec<CompanyId>> = BTreeMap::new();
    for i in 0..n {
        let root = uf.find(i);
        components.entry(root).or_default().push(mst.nodes[i].clone());
    }
    let mut clusters: Vec<Cluster> = components
        .into_values()
        .map(|mut members| {
            members.sort();
            Cluster {
                id: String::new(),
                members,
            }
        })
        .collect();
    clusters.sort_by(|a, b| a.members[0].cmp(&b.members[0]));
    for (i, c) in clusters.iter_mut().enumerate() {
        c.id = format!("{:04}", i + 1);
    }
    YearClustering {
        year: mst.year,
        theta: Some(theta),
        method,
        clusters,
    }
}

/// Maximum edge weight on the unique tree path between two companies.
pub fn ultrametric_distance(mst: &MstForest, i: &CompanyId, j: &CompanyId) -> Result<f64> {
    let find = |id: &CompanyId| {
        mst.nodes
            .binary_search(id)
            .map_err(|_| Error::Validation(format!("company {id} not in year {} tree", mst.year)))
    };
    let start = find(i)?;
    let goal = find(j)?;
    if start == goal {
        return Err(Error::Validation(format!(
            "ultrametric distance needs two distinct companies, got {i} twice"
        )));
    }
    let n = mst.nodes.len();
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for e in &mst.edges {
        adj[e.a].push((e.b, e.weight));
        adj[e.b].push((e.a, e.weight));
    }
    // DFS along the unique path, tracking the running max weight.
    let mut stack = vec![(start, f64::NEG_INFINITY)];
    let mut visited = vec![false; n];
    visited[start] = true;
    while let Some((node, max_w)) = stack.pop() {
        if node == goal {
            return Ok(max_w);
        }
        for &(next, w) in &adj[node] {
            if !visited[next] {
                visited[next] = true;
                stack.push((next, max_w.max(w)));
            }
        }
    }
    Err(Error::Validation(format!(
        "no tree path between {i} and {j} in year {}",
        mst.year
    )))
}

/// One year's fully prepared clustering inputs: the normalized complete
/// graph and its MST.
#[derive(Clone, Debug)]
pub struct YearGraph {
    pub graph: DistanceGraph,
    pub mst: MstForest,
}

/// Transforms a panel's featured companies with the global model and builds
/// the normalized graph plus MST. Companies without features that year are
/// excluded from the graph.
pub fn build_year_graph(
    panel: &crate::corpus::YearPanel,
    model: &crate::pca::PcaModel,
) -> Result<YearGraph> {
    if panel.summed_features.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "year {}: {} companies with features, need at least 2",
            panel.year,
            panel.summed_features.len()
        )));
    }
    let vector_list: Vec<(CompanyId, DenseVector)> = panel
        .summed_features
        .iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(company, v)| Ok((company.clone(), crate::pca::transform(model, v)?)))
        .collect::<Result<Vec<_>>>()?;
    let vectors: BTreeMap<CompanyId, DenseVector> = vector_list.into_iter().collect();
    let mut graph = build_distance_graph(panel.year, &vectors)?;
    normalize_distances(&mut graph)?;
    let mst = build_mst(&graph)?;
    Ok(YearGraph { graph, mst })
}

/// Audit dump of all edges: `year,id_a,id_b,d_cos,cd`.
pub fn write_edge_dump(path: &Path, graphs: &[DistanceGraph]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(from_csv_open(path))?;
    writer.write_record(["year", "id_a", "id_b", "d_cos", "cd"])?;
    for g in graphs {
        for e in &g.edges {
            writer.write_record([
                g.year.to_string().as_str(),
                g.nodes[e.a].as_str(),
                g.nodes[e.b].as_str(),
                &e.d_cos.to_string(),
                &e.cd.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
