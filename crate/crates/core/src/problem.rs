//! Problem files: JSON description of an uncertain plant, the uncertainty
//! ranges, the controller structure and run options.
//!
//! Matrices are row-major nested arrays. A matrix with `r` rows and no
//! columns is written `[[], ..., []]`; a matrix with no rows is `[]`.
//! Omitted feedthrough blocks are zero. Controller masks use `null` for a
//! free entry and a number for a fixed one; an omitted mask is all free.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lft::{star_product, Channels, ControllerStructure, Entry, PartitionedSystem, Plant, StateSpace, UncertaintyStructure};
use crate::linalg::blocks;

pub type Rows = Vec<Vec<f64>>;
pub type MaskRows = Vec<Vec<Option<f64>>>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedthroughFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qp: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qw: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qu: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zp: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zw: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zu: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yp: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yw: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yu: Option<Rows>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantFile {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "Bp")]
    pub bp: Rows,
    #[serde(rename = "Bw")]
    pub bw: Rows,
    #[serde(rename = "Bu")]
    pub bu: Rows,
    #[serde(rename = "Cq")]
    pub cq: Rows,
    #[serde(rename = "Cz")]
    pub cz: Rows,
    #[serde(rename = "Cy")]
    pub cy: Rows,
    #[serde(rename = "D", default)]
    pub d: FeedthroughFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintyFile {
    pub blocks: Vec<usize>,
    /// Physical range of each parameter; `[-1, 1]` when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranges: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerFile {
    pub order: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ak: Option<MaskRows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bk: Option<MaskRows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ck: Option<MaskRows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dk: Option<MaskRows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Options {
    #[serde(default = "Options::default_eps")]
    pub eps: f64,
    /// Points per axis for grid certification.
    #[serde(default = "Options::default_grid")]
    pub grid: usize,
    /// Random interior starts of the worst-case searches.
    #[serde(default = "Options::default_starts")]
    pub starts: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "Options::default_max_outer")]
    pub max_outer: usize,
}

impl Options {
    fn default_eps() -> f64 {
        0.01
    }
    fn default_grid() -> usize {
        5
    }
    fn default_starts() -> usize {
        10
    }
    fn default_max_outer() -> usize {
        25
    }
}

impl Default for Options {
    fn default() -> Self {
        Self {
            eps: Self::default_eps(),
            grid: Self::default_grid(),
            starts: Self::default_starts(),
            seed: 0,
            max_outer: Self::default_max_outer(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub plant: PlantFile,
    pub uncertainty: UncertaintyFile,
    pub controller: ControllerFile,
    #[serde(default)]
    pub options: Options,
}

/// Validated problem with the uncertainty normalized to `[-1, 1]^m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub plant: Plant,
    pub structure: UncertaintyStructure,
    pub controller: ControllerStructure,
    pub kappa0: Option<Vec<f64>>,
    pub options: Options,
}

fn matrix(name: &str, rows: &Rows, nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    if rows.len() != nrows {
        return Err(Error::Parse(format!("{name}: expected {nrows} rows, found {}", rows.len())));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return Err(Error::Parse(format!("{name}: row {i} has {} entries, expected {ncols}", r.len())));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse(format!("{name}: non-finite entry in row {i}")));
        }
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn optional(name: &str, rows: &Option<Rows>, nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    match rows {
        Some(r) => matrix(name, r, nrows, ncols),
        None => Ok(DMatrix::zeros(nrows, ncols)),
    }
}

fn mask(name: &str, rows: &Option<MaskRows>, nrows: usize, ncols: usize) -> Result<DMatrix<Entry>> {
    let Some(rows) = rows else {
        return Ok(DMatrix::from_element(nrows, ncols, Entry::Free));
    };
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Parse(format!("{name}: mask must be {nrows}x{ncols}")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| match rows[i][j] {
        Some(v) => Entry::Fixed(v),
        None => Entry::Free,
    }))
}

/// Width of an input channel: column count of the first candidate with rows.
fn columns(candidates: &[Option<&Rows>]) -> usize {
    candidates
        .iter()
        .flatten()
        .find_map(|m| m.first().map(Vec::len))
        .unwrap_or(0)
}

impl ProblemFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    /// Physical range of each parameter.
    pub fn ranges(&self) -> Vec<[f64; 2]> {
        self.uncertainty
            .ranges
            .clone()
            .unwrap_or_else(|| vec![[-1.0, 1.0]; self.uncertainty.blocks.len()])
    }

    /// Validates the file and returns the problem in normalized coordinates.
    pub fn normalize(&self) -> Result<Problem> {
        let pf = &self.plant;
        let d = &pf.d;
        let structure = UncertaintyStructure::new(self.uncertainty.blocks.clone())?;
        let n = pf.a.len();
        let (q, z, y) = (pf.cq.len(), pf.cz.len(), pf.cy.len());
        let np = columns(&[Some(&pf.bp), d.qp.as_ref(), d.zp.as_ref(), d.yp.as_ref()]);
        let w = columns(&[Some(&pf.bw), d.qw.as_ref(), d.zw.as_ref(), d.yw.as_ref()]);
        let u = columns(&[Some(&pf.bu), d.qu.as_ref(), d.zu.as_ref(), d.yu.as_ref()]);
        let size = structure.size();
        if np != size && !(n == 0 && q == 0 && z == 0 && y == 0) {
            return Err(Error::Parse(format!(
                "uncertainty blocks {:?} give a {size}-wide channel but the plant's p channel has width {np}",
                self.uncertainty.blocks
            )));
        }
        if q != size {
            return Err(Error::Parse(format!(
                "uncertainty blocks {:?} give a {size}-wide channel but Cq has {q} rows",
                self.uncertainty.blocks
            )));
        }
        let np = size;
        let a = matrix("plant.A", &pf.a, n, n)?;
        let bp = matrix("plant.Bp", &pf.bp, n, np)?;
        let bw = matrix("plant.Bw", &pf.bw, n, w)?;
        let bu = matrix("plant.Bu", &pf.bu, n, u)?;
        let cq = matrix("plant.Cq", &pf.cq, q, n)?;
        let cz = matrix("plant.Cz", &pf.cz, z, n)?;
        let cy = matrix("plant.Cy", &pf.cy, y, n)?;
        let dm = [
            [("plant.D.qp", &d.qp, q, np), ("plant.D.qw", &d.qw, q, w), ("plant.D.qu", &d.qu, q, u)],
            [("plant.D.zp", &d.zp, z, np), ("plant.D.zw", &d.zw, z, w), ("plant.D.zu", &d.zu, z, u)],
            [("plant.D.yp", &d.yp, y, np), ("plant.D.yw", &d.yw, y, w), ("plant.D.yu", &d.yu, y, u)],
        ];
        let mut dblocks = Vec::new();
        for (i, row) in dm.iter().enumerate() {
            for (j, (name, m, r, c)) in row.iter().enumerate() {
                dblocks.push((i, j, optional(name, m, *r, *c)?));
            }
        }
        let refs: Vec<(usize, usize, &DMatrix<f64>)> = dblocks.iter().map(|(i, j, m)| (*i, *j, m)).collect();
        let dfull = blocks(&[q, z, y], &[np, w, u], &refs);
        let b = blocks(&[n], &[np, w, u], &[(0, 0, &bp), (0, 1, &bw), (0, 2, &bu)]);
        let c = blocks(&[q, z, y], &[n], &[(0, 0, &cq), (1, 0, &cz), (2, 0, &cy)]);
        let ch = Channels { p: np, w, u, q, z, y };
        let plant = Plant::new(StateSpace::new(a, b, c, dfull)?, ch)?;

        let ranges = self.ranges();
        if ranges.len() != structure.params() {
            return Err(Error::Parse(format!(
                "uncertainty.ranges has {} entries for {} blocks",
                ranges.len(),
                structure.params()
            )));
        }
        for (i, [lo, hi]) in ranges.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::Parse(format!("uncertainty.ranges[{i}] = [{lo}, {hi}] must be finite with lo < hi")));
            }
        }
        let plant = normalize_ranges(&plant, &structure, &ranges)?;

        let cf = &self.controller;
        let k = cf.order;
        let controller = ControllerStructure::new(
            mask("controller.ak", &cf.ak, k, k)?,
            mask("controller.bk", &cf.bk, k, y)?,
            mask("controller.ck", &cf.ck, u, k)?,
            mask("controller.dk", &cf.dk, u, y)?,
        )?;
        if let Some(k0) = &cf.kappa0 {
            if k0.len() != controller.param_count() {
                return Err(Error::Parse(format!(
                    "controller.kappa0 has {} entries, the structure has {} free parameters",
                    k0.len(),
                    controller.param_count()
                )));
            }
        }
        let o = &self.options;
        if !(o.eps > 0.0) || o.grid < 2 || o.max_outer == 0 {
            return Err(Error::Parse("options: need eps > 0, grid >= 2, max_outer >= 1".into()));
        }
        Ok(Problem {
            plant,
            structure,
            controller,
            kappa0: cf.kappa0.clone(),
            options: o.clone(),
        })
    }
}

/// Rewrites `p = (C + H Delta) q` as `p = Delta' q` with `Delta'` normalized,
/// where `C` and `H` hold the midpoints and half-widths of the ranges.
pub fn normalize_ranges(plant: &Plant, structure: &UncertaintyStructure, ranges: &[[f64; 2]]) -> Result<Plant> {
    if ranges.iter().all(|r| *r == [-1.0, 1.0]) {
        return Ok(plant.clone());
    }
    let size = structure.size();
    let mut mid = DMatrix::zeros(size, size);
    let mut half = DMatrix::zeros(size, size);
    for (range, idx) in ranges.iter().zip(structure.index_sets()) {
        for i in idx {
            mid[(i, i)] = 0.5 * (range[0] + range[1]);
            half[(i, i)] = 0.5 * (range[1] - range[0]);
        }
    }
    let upper = blocks(&[size, size], &[size, size], &[(0, 1, &DMatrix::identity(size, size)), (1, 0, &half), (1, 1, &mid)]);
    let upper = PartitionedSystem::new(StateSpace::gain(upper), size, size)?;
    let closed = star_product(&upper, &plant.uncertainty_partition()).map_err(|e| match e {
        Error::IllPosed { sigma_min, .. } => Error::IllPosed {
            context: "range midpoint loop I - D_qp C".into(),
            sigma_min,
        },
        other => other,
    })?;
    Plant::new(closed.sys, plant.ch)
}

impl Problem {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        ProblemFile::load(path)?.normalize()
    }

    /// Initial controller parameters (zeros unless given).
    pub fn initial_kappa(&self) -> Vec<f64> {
        self.kappa0
            .clone()
            .unwrap_or_else(|| vec![0.0; self.controller.param_count()])
    }
}
