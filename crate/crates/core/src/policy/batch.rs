use super::layers::EdgeIndex;
use crate::error::{dim_err, Error, Result};
use crate::numerics::{Index, Tensor};
use crate::scenegraph::SceneGraph;

/// Disjoint union of scene graphs, processed in one pass.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    pub features: Tensor,
    pub edges: EdgeIndex,
    pub n_graphs: usize,
    /// Graph id of every node.
    pub node_graph: Index,
    pub object_nodes: Index,
    pub object_graph: Index,
    pub goal_nodes: Index,
    pub goal_graph: Index,
    /// Start of each graph's objects in `object_nodes`, plus a final end marker.
    pub object_offsets: Vec<usize>,
    pub goal_offsets: Vec<usize>,
}

impl GraphBatch {
    pub fn new(graphs: &[&SceneGraph]) -> Result<Self> {
        let Some(first) = graphs.first() else {
            return Err(Error::EmptyGraph);
        };
        let d = first.feature_width();
        let total: usize = graphs.iter().map(|g| g.n_nodes()).sum();
        let mut features = Vec::with_capacity(total * d);
        let mut edges = Vec::with_capacity(graphs.iter().map(|g| g.edges.len()).sum());
        let mut node_graph = Vec::with_capacity(total);
        let (mut object_nodes, mut object_graph, mut goal_nodes, mut goal_graph) = (vec![], vec![], vec![], vec![]);
        let (mut object_offsets, mut goal_offsets) = (vec![0], vec![0]);
        let mut base = 0;
        for (b, g) in graphs.iter().enumerate() {
            if g.feature_width() != d {
                return Err(dim_err!("feature width {} in a batch of width {}", g.feature_width(), d));
            }
            if g.n_objects == 0 {
                return Err(Error::EmptyHead("object"));
            }
            if g.n_goals == 0 {
                return Err(Error::EmptyHead("goal"));
            }
            features.extend_from_slice(g.features.data());
            edges.extend(g.edges.iter().map(|&(s, t)| (s + base, t + base)));
            node_graph.extend(std::iter::repeat_n(b, g.n_nodes()));
            object_nodes.extend(g.object_nodes().map(|i| i + base));
            object_graph.extend(std::iter::repeat_n(b, g.n_objects));
            goal_nodes.extend(g.goal_nodes().map(|i| i + base));
            goal_graph.extend(std::iter::repeat_n(b, g.n_goals));
            object_offsets.push(object_nodes.len());
            goal_offsets.push(goal_nodes.len());
            base += g.n_nodes();
        }
        Ok(Self {
            features: Tensor::new(vec![total, d], features)?,
            edges: EdgeIndex::new(&edges, total),
            n_graphs: graphs.len(),
            node_graph: node_graph.into(),
            object_nodes: object_nodes.into(),
            object_graph: object_graph.into(),
            goal_nodes: goal_nodes.into(),
            goal_graph: goal_graph.into(),
            object_offsets,
            goal_offsets,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.edges.n_nodes
    }

    pub fn objects_in(&self, graph: usize) -> std::ops::Range<usize> {
        self.object_offsets[graph]..self.object_offsets[graph + 1]
    }

    pub fn goals_in(&self, graph: usize) -> std::ops::Range<usize> {
        self.goal_offsets[graph]..self.goal_offsets[graph + 1]
    }

    /// Object and goal counts shared by every graph, if uniform.
    pub fn uniform_counts(&self) -> Option<(usize, usize)> {
        let k = self.objects_in(0).len();
        let l = self.goals_in(0).len();
        (0..self.n_graphs)
            .all(|b| self.objects_in(b).len() == k && self.goals_in(b).len() == l)
            .then_some((k, l))
    }
}
