//! Small reference setups shared by the example configs, tests and benches.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::graph::{generate_geometric_backbone_with_degree, Adjacency, GeometricBackbone, GraphProcessSpec, MAX_RETRIES};
use crate::observation::{AgentModel, GlobalModel};
use crate::rng::{derive_stream, Purpose};

/// Directed 5-cycle plus three chords.
pub const FIVE_NODE_EDGES: [(usize, usize); 8] = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 3), (2, 1), (4, 2)];

pub fn five_node_graph() -> Adjacency {
    Adjacency::from_edges(5, &FIVE_NODE_EDGES).expect("valid reference edges")
}

/// Scalar measurements of a 2-dimensional parameter, `theta = (1, -2)`.
pub fn five_node_model() -> GlobalModel {
    let rows = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, -1.0], [0.5, 2.0]];
    let vars = [1.0, 2.0, 0.5, 1.0, 1.5];
    let agents = rows
        .iter()
        .zip(vars)
        .enumerate()
        .map(|(i, (h, c))| {
            AgentModel::new(i, DMatrix::from_row_slice(1, 2, h), DMatrix::from_element(1, 1, c))
                .expect("valid reference agent")
        })
        .collect();
    GlobalModel::new(agents, DVector::from_vec(vec![1.0, -2.0])).expect("valid reference model")
}

pub fn five_node_static() -> GraphProcessSpec {
    GraphProcessSpec::Static(five_node_graph())
}

pub fn five_node_iid(p_fail: f64) -> GraphProcessSpec {
    GraphProcessSpec::iid_failure(five_node_graph(), p_fail).expect("valid failure probability")
}

/// `n` agents with `rows` standard-normal measurement rows each, noise
/// covariance `variance * I`, and `theta = (1, 2, ..., l)`.
pub fn gaussian_rows_model(n: usize, l: usize, rows: usize, variance: f64, seed: u64) -> Result<GlobalModel> {
    let mut rng = derive_stream(seed, 0, Purpose::Aux);
    let agents = (0..n)
        .map(|i| {
            let h = DMatrix::from_fn(rows, l, |_, _| StandardNormal.sample(&mut rng));
            AgentModel::new(i, h, DMatrix::identity(rows, rows) * variance)
        })
        .collect::<Result<Vec<_>>>()?;
    GlobalModel::new(agents, DVector::from_fn(l, |k, _| (k + 1) as f64))
}

/// 20-agent, `L = 5` model with one Gaussian row per agent and unit noise.
pub fn model_a(seed: u64) -> Result<GlobalModel> {
    gaussian_rows_model(20, 5, 1, 1.0, seed)
}

/// Strongly connected 20-node geometric backbone with relative degree near
/// 0.12.
pub fn twenty_node_backbone(seed: u64) -> Result<GeometricBackbone> {
    let mut rng = derive_stream(seed, 1, Purpose::Aux);
    generate_geometric_backbone_with_degree(20, 0.12, MAX_RETRIES, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{is_strongly_connected, relative_degree};

    #[test]
    fn references_are_valid() {
        assert!(is_strongly_connected(&five_node_graph()));
        let m = five_node_model();
        assert_eq!((m.n(), m.dim()), (5, 2));
        let a = model_a(1).unwrap();
        assert_eq!((a.n(), a.dim()), (20, 5));
        let g = twenty_node_backbone(1).unwrap();
        assert!(is_strongly_connected(&g.adjacency));
        assert!((relative_degree(&g.adjacency) - 0.12).abs() <= 0.02);
    }
}
