//! Problem files (JSON) and trajectory files (CSV).
//!
//! Problem files declare linear or affine fields, quadratic costs and one of
//! the built-in set families:
//!
//! ```json
//! {
//!   "set": {"kind": "orthant"},
//!   "f1": {"kind": "linear", "control": [[-1, 0], [0, -1]], "state": [[0, 0], [0, 0]]},
//!   "f2": {"kind": "linear", "control": [[], []], "state": [[1, -1], [-1, 1]]},
//!   "costs": {"phi": {"weight": [[0, 0], [0, 1]], "target": [0, 0]}},
//!   "T": 1.0,
//!   "x0": [1, 1],
//!   "controlled": {"u": false, "a": true, "b": false}
//! }
//! ```

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlMask, GrowthConstants, LinearField, Mesh, ProblemSpec, QuadraticCost, RunningCost, Trajectory};
use crate::error::{Error, Result};
use crate::geometry::{MovingSet, RegularityConstants};

/// Moving-set family of a problem file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SetFile {
    Orthant,
    Free,
    Ball { radius: f64 },
    Affine {
        #[serde(alias = "A")]
        normals: Vec<Vec<f64>>,
        #[serde(alias = "c")]
        offsets: Vec<f64>,
    },
}

/// Drift or kernel `A c + B x (+ c₀)` of a problem file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FieldFile {
    Linear {
        #[serde(alias = "A")]
        control: Vec<Vec<f64>>,
        #[serde(alias = "B")]
        state: Vec<Vec<f64>>,
    },
    Affine {
        #[serde(alias = "A")]
        control: Vec<Vec<f64>>,
        #[serde(alias = "B")]
        state: Vec<Vec<f64>>,
        #[serde(alias = "c")]
        offset: Vec<f64>,
    },
}

/// `½ (z − target)ᵀ W (z − target)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFile {
    pub weight: Vec<Vec<f64>>,
    pub target: Vec<f64>,
}

/// Running cost `l₁(x, u, a, b, ẋ)` split into its state and rate parts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StateCostFile {
    #[serde(default)]
    pub state: Option<QuadraticFile>,
    #[serde(default)]
    pub x_rate: Option<QuadraticFile>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostsFile {
    #[serde(default)]
    pub phi: Option<QuadraticFile>,
    #[serde(default)]
    pub l1: Option<StateCostFile>,
    #[serde(default)]
    pub l2: Option<QuadraticFile>,
    #[serde(default)]
    pub l3: Option<QuadraticFile>,
    #[serde(default)]
    pub l4: Option<QuadraticFile>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstantsFile {
    #[serde(default)]
    pub growth: Option<GrowthConstants>,
    #[serde(default)]
    pub regularity: Option<RegularityConstants>,
}

/// Constant controls used when no control schedule is supplied.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlsFile {
    #[serde(default)]
    pub u: Option<Vec<f64>>,
    #[serde(default)]
    pub a: Option<Vec<f64>>,
    #[serde(default)]
    pub b: Option<Vec<f64>>,
}

/// Top-level problem file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub set: SetFile,
    pub f1: FieldFile,
    pub f2: FieldFile,
    #[serde(default)]
    pub costs: CostsFile,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub constants: ConstantsFile,
    #[serde(default)]
    pub controlled: Option<ControlMask>,
    #[serde(default)]
    pub controls: ControlsFile,
}

fn matrix(rows: &[Vec<f64>], nrows: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows {
        return Err(Error::Parse(format!("{what}: expected {nrows} rows, found {}", rows.len())));
    }
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Parse(format!("{what}: ragged rows")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn square(rows: &[Vec<f64>], dim: usize, what: &str) -> Result<DMatrix<f64>> {
    let m = matrix(rows, dim, what)?;
    if m.ncols() != dim {
        return Err(Error::Parse(format!("{what}: expected {dim} columns, found {}", m.ncols())));
    }
    Ok(m)
}

fn quadratic(q: &QuadraticFile, dim: usize, what: &str) -> Result<QuadraticCost> {
    if q.target.len() != dim {
        return Err(Error::Parse(format!("{what}: target has length {}, expected {dim}", q.target.len())));
    }
    Ok(QuadraticCost::new(square(&q.weight, dim, what)?, DVector::from_column_slice(&q.target)))
}

impl FieldFile {
    fn build(&self, n: usize, what: &str) -> Result<LinearField> {
        let (control, state, offset) = match self {
            FieldFile::Linear { control, state } => (control, state, None),
            FieldFile::Affine { control, state, offset } => (control, state, Some(offset)),
        };
        let mut f = LinearField::new(matrix(control, n, what)?, square(state, n, what)?);
        if let Some(c) = offset {
            if c.len() != n {
                return Err(Error::Parse(format!("{what}: offset has length {}, expected {n}", c.len())));
            }
            f.offset = DVector::from_column_slice(c);
        }
        Ok(f)
    }
}

impl ProblemFile {
    /// Builds and validates the instance.
    pub fn build(&self) -> Result<ProblemSpec> {
        let n = self.x0.len();
        if n == 0 {
            return Err(Error::Parse("x0 must be nonempty".into()));
        }
        let mut set = match &self.set {
            SetFile::Orthant => MovingSet::orthant(n),
            SetFile::Free => MovingSet::free(n),
            SetFile::Ball { radius } => {
                if !(*radius > 0.0) {
                    return Err(Error::Parse(format!("ball radius {radius} must be positive")));
                }
                MovingSet::ball(n, *radius)
            }
            SetFile::Affine { normals, offsets } => {
                let a = matrix(normals, offsets.len(), "set normals")?;
                if a.ncols() != n {
                    return Err(Error::Parse(format!("set normals have {} columns, expected {n}", a.ncols())));
                }
                MovingSet::affine(&a, &DVector::from_column_slice(offsets))?
            }
        };
        if let Some(c) = self.constants.regularity {
            set.constants = c;
        }
        let f1 = self.f1.build(n, "f1")?;
        let f2 = self.f2.build(n, "f2")?;
        let (m, d) = (f1.control.ncols(), f2.control.ncols());
        let costs = &self.costs;
        let terminal = match &costs.phi {
            Some(q) => quadratic(q, n, "phi")?,
            None => QuadraticCost::zero(n),
        };
        let l1 = costs.l1.clone().unwrap_or_default();
        let running = RunningCost {
            state: l1.state.as_ref().map(|q| quadratic(q, 2 * n + m + d, "l1.state")).transpose()?,
            x_rate: l1.x_rate.as_ref().map(|q| quadratic(q, n, "l1.x_rate")).transpose()?,
            u_rate: costs.l2.as_ref().map(|q| quadratic(q, n, "l2")).transpose()?,
            a_rate: costs.l3.as_ref().map(|q| quadratic(q, m, "l3")).transpose()?,
            b_rate: costs.l4.as_ref().map(|q| quadratic(q, d, "l4")).transpose()?,
        };
        let spec = ProblemSpec {
            set,
            n,
            m,
            d,
            f1: Arc::new(f1),
            f2: Arc::new(f2),
            growth: self.constants.growth.unwrap_or_default(),
            terminal,
            running,
            horizon: self.horizon,
            x0: DVector::from_column_slice(&self.x0),
            controlled: self.controlled.unwrap_or_default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Constant controls `(u, a, b)`, zero where omitted.
    pub fn constant_controls(&self, spec: &ProblemSpec) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        let pick = |v: &Option<Vec<f64>>, dim: usize, what: &str| -> Result<DVector<f64>> {
            match v {
                None => Ok(DVector::zeros(dim)),
                Some(v) if v.len() == dim => Ok(DVector::from_column_slice(v)),
                Some(v) => Err(Error::Parse(format!("controls.{what} has length {}, expected {dim}", v.len()))),
            }
        };
        Ok((
            pick(&self.controls.u, spec.n, "u")?,
            pick(&self.controls.a, spec.m, "a")?,
            pick(&self.controls.b, spec.d, "b")?,
        ))
    }
}

pub fn parse_problem(text: &str) -> Result<ProblemFile> {
    Ok(serde_json::from_str(text)?)
}

pub fn load_problem(path: &Path) -> Result<ProblemFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_problem(&text)
}

/// Header `t,x1..xn,y1..yn,u1..un,a1..am,b1..bd`.
pub fn trajectory_header(n: usize, m: usize, d: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for (p, len) in [("x", n), ("y", n), ("u", n), ("a", m), ("b", d)] {
        h.extend((1..=len).map(|i| format!("{p}{i}")));
    }
    h
}

/// Writes one row per node. Values use the shortest decimal form that
/// parses back to the same `f64`.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    traj.validate()?;
    let (n, m, d) = traj.dimensions();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trajectory_header(n, m, d))?;
    for j in 0..=traj.k() {
        let mut row = vec![traj.mesh.t(j).to_string()];
        for part in traj.node(j).parts() {
            row.extend(part.iter().map(f64::to_string));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_trajectory_csv(traj, std::io::BufWriter::new(file))
}

/// Reads a trajectory; the component sizes come from the header.
pub fn read_trajectory_csv<R: Read>(input: R) -> Result<Trajectory> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let count = |p: char| header.iter().filter(|h| h.starts_with(p) && h[1..].parse::<usize>().is_ok()).count();
    let (n, m, d) = (count('x'), count('a'), count('b'));
    if count('y') != n || count('u') != n {
        return Err(Error::Parse("x, y and u columns must have equal counts".into()));
    }
    if header != trajectory_header(n, m, d) {
        return Err(Error::Parse(format!("unexpected header {}", header.join(","))));
    }
    let mut ts = Vec::new();
    let mut parts: [Vec<DVector<f64>>; 5] = Default::default();
    let lens = [n, n, n, m, d];
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("row {}: {e}", line + 2))))
            .collect::<Result<_>>()?;
        if vals.len() != header.len() {
            return Err(Error::Parse(format!("row {} has {} fields", line + 2, vals.len())));
        }
        ts.push(vals[0]);
        let mut off = 1;
        for (c, &len) in lens.iter().enumerate() {
            parts[c].push(DVector::from_column_slice(&vals[off..off + len]));
            off += len;
        }
    }
    let mesh = Mesh::from_nodes(ts)?;
    let [x, y, u, a, b] = parts;
    Ok(Trajectory { mesh, x, y, u, a, b })
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_trajectory_csv(std::io::BufReader::new(file))
}
