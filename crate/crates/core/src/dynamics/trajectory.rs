//! Meshes, node-indexed quintuples `(x, y, u, a, b)` and continuous references.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid `0 = t_0 < … < t_k = T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    nodes: Vec<f64>,
}

impl Mesh {
    /// `k` equal steps of length `T / k`.
    pub fn uniform(horizon: f64, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Domain("mesh needs at least one interval".into()));
        }
        if !(horizon > 0.0) {
            return Err(Error::Domain(format!("horizon {horizon} must be positive")));
        }
        let h = horizon / k as f64;
        let mut nodes: Vec<f64> = (0..=k).map(|j| j as f64 * h).collect();
        nodes[k] = horizon;
        Ok(Self { nodes })
    }

    /// Arbitrary strictly increasing nodes starting at zero.
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::Domain("mesh needs at least two nodes".into()));
        }
        if nodes[0] != 0.0 {
            return Err(Error::Domain("mesh must start at t = 0".into()));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("mesh nodes must be strictly increasing".into()));
        }
        Ok(Self { nodes })
    }

    /// Number of intervals.
    pub fn k(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn t(&self, j: usize) -> f64 {
        self.nodes[j]
    }

    pub fn h(&self, j: usize) -> f64 {
        self.nodes[j + 1] - self.nodes[j]
    }

    pub fn max_step(&self) -> f64 {
        (0..self.k()).map(|j| self.h(j)).fold(0.0, f64::max)
    }

    pub fn horizon(&self) -> f64 {
        self.nodes[self.k()]
    }

    /// Index `j` with `t_j ≤ t < t_{j+1}`, clamped to the last interval.
    pub fn interval(&self, t: f64) -> usize {
        let k = self.k();
        if t <= self.nodes[0] {
            return 0;
        }
        if t >= self.nodes[k] {
            return k - 1;
        }
        match self.nodes.binary_search_by(|v| v.total_cmp(&t)) {
            Ok(j) => j.min(k - 1),
            Err(j) => j - 1,
        }
    }
}

/// One value of `z = (x, y, u, a, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quintuple {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub u: DVector<f64>,
    pub a: DVector<f64>,
    pub b: DVector<f64>,
}

impl Quintuple {
    pub fn zeros(n: usize, m: usize, d: usize) -> Self {
        Self {
            x: DVector::zeros(n),
            y: DVector::zeros(n),
            u: DVector::zeros(n),
            a: DVector::zeros(m),
            b: DVector::zeros(d),
        }
    }

    pub fn parts(&self) -> [&DVector<f64>; 5] {
        [&self.x, &self.y, &self.u, &self.a, &self.b]
    }

    pub fn parts_mut(&mut self) -> [&mut DVector<f64>; 5] {
        [&mut self.x, &mut self.y, &mut self.u, &mut self.a, &mut self.b]
    }

    pub fn norm_squared(&self) -> f64 {
        self.parts().iter().map(|p| p.norm_squared()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn sub(&self, other: &Quintuple) -> Quintuple {
        Quintuple {
            x: &self.x - &other.x,
            y: &self.y - &other.y,
            u: &self.u - &other.u,
            a: &self.a - &other.a,
            b: &self.b - &other.b,
        }
    }

    pub fn add_scaled(&self, other: &Quintuple, s: f64) -> Quintuple {
        Quintuple {
            x: &self.x + &other.x * s,
            y: &self.y + &other.y * s,
            u: &self.u + &other.u * s,
            a: &self.a + &other.a * s,
            b: &self.b + &other.b * s,
        }
    }

    pub fn scale(&self, s: f64) -> Quintuple {
        Quintuple {
            x: &self.x * s,
            y: &self.y * s,
            u: &self.u * s,
            a: &self.a * s,
            b: &self.b * s,
        }
    }
}

/// A continuous-time candidate `t ↦ z(t)` with velocities.
pub trait Reference: Send + Sync {
    fn horizon(&self) -> f64;
    /// Dimensions `(n, m, d)`.
    fn dims(&self) -> (usize, usize, usize);
    fn value(&self, t: f64) -> Quintuple;
    /// Right derivative; at `T` the left derivative.
    fn velocity(&self, t: f64) -> Quintuple;
    /// Points where the velocity may jump.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// Node values `(x, y, u, a, b)` on a mesh with piecewise-linear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub mesh: Mesh,
    pub x: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub a: Vec<DVector<f64>>,
    pub b: Vec<DVector<f64>>,
}

impl Trajectory {
    /// Checks that every component has `k + 1` nodes of consistent length.
    pub fn validate(&self) -> Result<()> {
        let len = self.mesh.k() + 1;
        for (name, comp) in [("x", &self.x), ("y", &self.y), ("u", &self.u), ("a", &self.a), ("b", &self.b)] {
            if comp.len() != len {
                return Err(Error::Dimension(format!("{name} has {} nodes, expected {len}", comp.len())));
            }
            if let Some(first) = comp.first() {
                if comp.iter().any(|v| v.len() != first.len()) {
                    return Err(Error::Dimension(format!("{name} has ragged node vectors")));
                }
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.mesh.k()
    }

    pub fn node(&self, j: usize) -> Quintuple {
        Quintuple {
            x: self.x[j].clone(),
            y: self.y[j].clone(),
            u: self.u[j].clone(),
            a: self.a[j].clone(),
            b: self.b[j].clone(),
        }
    }

    /// Constant slope on `(t_j, t_{j+1})`.
    pub fn slope(&self, j: usize) -> Quintuple {
        let h = self.mesh.h(j);
        self.node(j + 1).sub(&self.node(j)).scale(1.0 / h)
    }

    /// Ordered `(n, m, d)`.
    pub fn dimensions(&self) -> (usize, usize, usize) {
        (self.x[0].len(), self.a[0].len(), self.b[0].len())
    }
}

impl Reference for Trajectory {
    fn horizon(&self) -> f64 {
        self.mesh.horizon()
    }
    fn dims(&self) -> (usize, usize, usize) {
        self.dimensions()
    }
    fn value(&self, t: f64) -> Quintuple {
        let j = self.mesh.interval(t);
        let s = (t - self.mesh.t(j)) / self.mesh.h(j);
        let lo = self.node(j);
        let hi = self.node(j + 1);
        lo.add_scaled(&hi.sub(&lo), s)
    }
    fn velocity(&self, t: f64) -> Quintuple {
        self.slope(self.mesh.interval(t))
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.mesh.nodes().to_vec()
    }
}

/// Node values of the controls `(u, a, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSchedule {
    pub mesh: Mesh,
    pub u: Vec<DVector<f64>>,
    pub a: Vec<DVector<f64>>,
    pub b: Vec<DVector<f64>>,
}

impl ControlSchedule {
    /// Samples a reference's controls at the mesh nodes.
    pub fn from_reference(reference: &dyn Reference, mesh: &Mesh) -> Self {
        let mut u = Vec::with_capacity(mesh.k() + 1);
        let mut a = Vec::with_capacity(mesh.k() + 1);
        let mut b = Vec::with_capacity(mesh.k() + 1);
        for &t in mesh.nodes() {
            let z = reference.value(t);
            u.push(z.u);
            a.push(z.a);
            b.push(z.b);
        }
        Self { mesh: mesh.clone(), u, a, b }
    }

    /// Constant controls.
    pub fn constant(mesh: &Mesh, u: DVector<f64>, a: DVector<f64>, b: DVector<f64>) -> Self {
        let len = mesh.k() + 1;
        Self {
            mesh: mesh.clone(),
            u: vec![u; len],
            a: vec![a; len],
            b: vec![b; len],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_lookup() {
        let m = Mesh::uniform(1.0, 4).unwrap();
        assert_eq!(m.interval(0.0), 0);
        assert_eq!(m.interval(0.25), 1);
        assert_eq!(m.interval(0.3), 1);
        assert_eq!(m.interval(1.0), 3);
        assert!(m.max_step() <= 0.25 + 1e-15);
    }

    #[test]
    fn rejects_bad_meshes() {
        assert!(Mesh::uniform(1.0, 0).is_err());
        assert!(Mesh::from_nodes(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(Mesh::from_nodes(vec![0.1, 1.0]).is_err());
    }

    #[test]
    fn piecewise_linear_evaluation() {
        let mesh = Mesh::uniform(1.0, 2).unwrap();
        let v = |s: f64| DVector::from_vec(vec![s]);
        let tr = Trajectory {
            mesh,
            x: vec![v(0.0), v(1.0), v(3.0)],
            y: vec![v(0.0); 3],
            u: vec![v(0.0); 3],
            a: vec![v(0.0); 3],
            b: vec![v(0.0); 3],
        };
        assert!((tr.value(0.25).x[0] - 0.5).abs() < 1e-15);
        assert!((tr.velocity(0.75).x[0] - 4.0).abs() < 1e-15);
        assert!((tr.velocity(1.0).x[0] - 4.0).abs() < 1e-15);
    }
}
