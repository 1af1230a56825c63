use crate::error::{Error, Result};
use crate::geometry::{add, apply, Vec3};

/// A point cloud with per-node velocity and charge and explicit neighbour lists.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    pub positions: Vec<Vec3<f64>>,
    pub velocities: Vec<Vec3<f64>>,
    pub charges: Vec<f64>,
    pub neighbors: Vec<Vec<usize>>,
}

impl Graph {
    /// Every node is a neighbour of every other node.
    pub fn fully_connected(positions: Vec<Vec3<f64>>, velocities: Vec<Vec3<f64>>, charges: Vec<f64>) -> Result<Self> {
        let n = positions.len();
        let neighbors = (0..n).map(|i| (0..n).filter(|&j| j != i).collect()).collect();
        let g = Graph { positions, velocities, charges, neighbors };
        g.validate()?;
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if n == 0 {
            return Err(Error::Argument("graph has no nodes".into()));
        }
        if self.velocities.len() != n || self.charges.len() != n || self.neighbors.len() != n {
            return Err(Error::Dimension(format!(
                "graph arrays disagree: {n} positions, {} velocities, {} charges, {} neighbour lists",
                self.velocities.len(),
                self.charges.len(),
                self.neighbors.len()
            )));
        }
        for (i, nb) in self.neighbors.iter().enumerate() {
            if let Some(&j) = nb.iter().find(|&&j| j >= n || j == i) {
                return Err(Error::Argument(format!("node {i} has invalid neighbour {j}")));
            }
        }
        Ok(())
    }

    /// Node `k` of the result is node `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Graph {
        let mut inv = vec![0; perm.len()];
        for (k, &p) in perm.iter().enumerate() {
            inv[p] = k;
        }
        Graph {
            positions: perm.iter().map(|&p| self.positions[p]).collect(),
            velocities: perm.iter().map(|&p| self.velocities[p]).collect(),
            charges: perm.iter().map(|&p| self.charges[p]).collect(),
            neighbors: perm.iter().map(|&p| self.neighbors[p].iter().map(|&j| inv[j]).collect()).collect(),
        }
    }

    /// Apply `x ↦ R x + t` to positions and `v ↦ R v` to velocities.
    pub fn transformed(&self, r: &[[f64; 3]; 3], t: &Vec3<f64>) -> Graph {
        Graph {
            positions: self.positions.iter().map(|x| add(&apply(r, x), t)).collect(),
            velocities: self.velocities.iter().map(|v| apply(r, v)).collect(),
            charges: self.charges.clone(),
            neighbors: self.neighbors.clone(),
        }
    }
}

/// Several graphs laid out as one disjoint graph with global node indices.
pub(crate) struct Batch {
    pub n_nodes: usize,
    /// Centred positions (each graph about its own unit-mass centre).
    pub positions: Vec<Vec3<f64>>,
    pub velocities: Vec<Vec3<f64>>,
    pub charges: Vec<f64>,
    pub neighbors: Vec<Vec<usize>>,
    /// Mass centre of the graph each node belongs to.
    pub centers: Vec<Vec3<f64>>,
    pub recv: Vec<usize>,
    pub send: Vec<usize>,
    /// First edge id of every node's block.
    pub edge_start: Vec<usize>,
    pub max_degree: usize,
    /// Node ranges of the individual graphs.
    pub graphs: Vec<std::ops::Range<usize>>,
}

impl Batch {
    pub fn new(graphs: &[&Graph]) -> Result<Self> {
        let mut b = Batch {
            n_nodes: 0,
            positions: vec![],
            velocities: vec![],
            charges: vec![],
            neighbors: vec![],
            centers: vec![],
            recv: vec![],
            send: vec![],
            edge_start: vec![],
            max_degree: 0,
            graphs: vec![],
        };
        for g in graphs {
            g.validate()?;
            let off = b.n_nodes;
            let (centered, c) = crate::geometry::center_positions(&g.positions);
            b.positions.extend(centered);
            b.velocities.extend_from_slice(&g.velocities);
            b.charges.extend_from_slice(&g.charges);
            for (i, nb) in g.neighbors.iter().enumerate() {
                b.centers.push(c);
                b.edge_start.push(b.recv.len());
                b.max_degree = b.max_degree.max(nb.len());
                for &j in nb {
                    b.recv.push(off + i);
                    b.send.push(off + j);
                }
                b.neighbors.push(nb.iter().map(|&j| off + j).collect());
            }
            b.n_nodes += g.len();
            b.graphs.push(off..b.n_nodes);
        }
        Ok(b)
    }

    pub fn n_edges(&self) -> usize {
        self.recv.len()
    }

    /// Edge id of the `(i, j)` edge, `j` a neighbour of `i`.
    pub fn edge_id(&self, i: usize, j: usize) -> usize {
        self.edge_start[i] + self.neighbors[i].iter().position(|&k| k == j).expect("j is a neighbour of i")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Graph {
        Graph::fully_connected(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]],
            vec![[0.1; 3]; 3],
            vec![1.0, -1.0, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn permutation_relabels_neighbours() {
        let g = tiny();
        let p = g.permuted(&[2, 0, 1]);
        assert_eq!(p.positions[0], g.positions[2]);
        assert_eq!(p.neighbors[0], vec![1, 2]);
        p.validate().unwrap();
    }

    #[test]
    fn batch_layout() {
        let g = tiny();
        let b = Batch::new(&[&g, &g]).unwrap();
        assert_eq!(b.n_nodes, 6);
        assert_eq!(b.n_edges(), 12);
        assert_eq!(b.edge_id(4, 3), 8);
        assert_eq!((b.recv[8], b.send[8]), (4, 3));
        let c = b.centers[0];
        assert!((c[0] - 1.0 / 3.0).abs() < 1e-15 && (c[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_graphs_rejected() {
        let mut g = tiny();
        g.neighbors[0].push(0);
        assert!(g.validate().is_err());
        g.neighbors[0] = vec![1];
        g.charges.pop();
        assert!(matches!(g.validate(), Err(Error::Dimension(_))));
    }
}
