//! Modal models: mode shapes and natural frequencies on a candidate grid.
//!
//! Three sources are supported: an internal plate finite-element eigen-solver,
//! an analytical clamped-free beam, and ingestion of externally computed modal
//! data from the `modal-v1` text format.

pub mod beam;
pub mod eigen;
mod io;
mod plate;

pub use beam::beam_modes_analytical;
pub use plate::{assemble_plate_model, assemble_plate_system, PlateSystem};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Isotropic material constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialSpec {
    /// Young's modulus [Pa].
    pub youngs_modulus: f64,
    /// Poisson's ratio.
    pub poisson_ratio: f64,
    /// Mass density [kg/m^3].
    pub density: f64,
}

impl MaterialSpec {
    /// Standard structural steel.
    pub fn steel() -> Self {
        Self {
            youngs_modulus: 210e9,
            poisson_ratio: 0.3,
            density: 7850.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.youngs_modulus > 0.0 && self.youngs_modulus.is_finite()) {
            return Err(Error::InvalidMaterial(format!(
                "youngs_modulus must be positive, got {}",
                self.youngs_modulus
            )));
        }
        if !(self.poisson_ratio >= 0.0 && self.poisson_ratio < 0.5) {
            return Err(Error::InvalidMaterial(format!(
                "poisson_ratio must be in [0, 0.5), got {}",
                self.poisson_ratio
            )));
        }
        if !(self.density > 0.0 && self.density.is_finite()) {
            return Err(Error::InvalidMaterial(format!(
                "density must be positive, got {}",
                self.density
            )));
        }
        Ok(())
    }
}

impl Default for MaterialSpec {
    fn default() -> Self {
        Self::steel()
    }
}

/// Rectangular cantilever plate dimensions. The clamp spans `x < clamp_depth`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateGeometry {
    pub length: f64,
    pub width: f64,
    pub thickness: f64,
    pub clamp_depth: f64,
}

impl PlateGeometry {
    /// The case-study plate: 447 mm x 76.2 mm x 3 mm, clamped over 24 mm.
    pub fn cantilever_default() -> Self {
        Self {
            length: 0.447,
            width: 0.0762,
            thickness: 0.003,
            clamp_depth: 0.024,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("length", self.length),
            ("width", self.width),
            ("thickness", self.thickness),
            ("clamp_depth", self.clamp_depth),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidGeometry(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.clamp_depth >= self.length {
            return Err(Error::InvalidGeometry(format!(
                "clamp_depth {} must be less than length {}",
                self.clamp_depth, self.length
            )));
        }
        Ok(())
    }
}

/// Mode shapes and natural frequencies sampled on a candidate grid.
///
/// Rows of `mode_shapes` correspond to `node_coords`; clamped nodes carry zero
/// shape entries and `placement_mask = false`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalModel {
    pub node_coords: Vec<(f64, f64)>,
    /// n_nodes x n_modes, column `k` is mode `k + 1`.
    pub mode_shapes: DMatrix<f64>,
    /// Natural frequencies [Hz], strictly ascending.
    pub frequencies: Vec<f64>,
    pub placement_mask: Vec<bool>,
    /// Whether each mode column has unit Euclidean norm.
    pub normalised: bool,
}

impl ModalModel {
    pub fn n_nodes(&self) -> usize {
        self.node_coords.len()
    }

    pub fn n_modes(&self) -> usize {
        self.frequencies.len()
    }

    /// Indices of nodes available for sensor placement.
    pub fn candidate_indices(&self) -> Vec<usize> {
        self.placement_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }

    /// Scale every mode column to unit Euclidean norm and orient it so the
    /// entry of largest magnitude is positive.
    pub fn normalise(&mut self) {
        for mut col in self.mode_shapes.column_iter_mut() {
            let norm = col.norm();
            if norm > 0.0 {
                col /= norm;
            }
            let (mut sign, mut best) = (1.0, 0.0);
            for &v in col.iter() {
                if v.abs() > best {
                    best = v.abs();
                    sign = if v >= 0.0 { 1.0 } else { -1.0 };
                }
            }
            if sign < 0.0 {
                col.neg_mut();
            }
        }
        self.normalised = true;
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.node_coords.len();
        if self.mode_shapes.nrows() != n {
            return Err(Error::MalformedModalData(format!(
                "row-count mismatch: {} coordinates vs {} shape rows",
                n,
                self.mode_shapes.nrows()
            )));
        }
        if self.placement_mask.len() != n {
            return Err(Error::MalformedModalData(format!(
                "row-count mismatch: {} coordinates vs {} mask entries",
                n,
                self.placement_mask.len()
            )));
        }
        if self.mode_shapes.ncols() != self.frequencies.len() {
            return Err(Error::MalformedModalData(format!(
                "{} shape columns vs {} frequencies",
                self.mode_shapes.ncols(),
                self.frequencies.len()
            )));
        }
        for w in self.frequencies.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::MalformedModalData(format!(
                    "frequencies not strictly ascending: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if self.frequencies.iter().any(|f| !f.is_finite() || *f <= 0.0) {
            return Err(Error::MalformedModalData(
                "frequencies must be finite and positive".into(),
            ));
        }
        if self.mode_shapes.iter().any(|v| !v.is_finite()) {
            return Err(Error::MalformedModalData(
                "non-finite mode shape entry".into(),
            ));
        }
        if self.normalised {
            for (k, col) in self.mode_shapes.column_iter().enumerate() {
                if (col.norm() - 1.0).abs() > 1e-9 {
                    return Err(Error::MalformedModalData(format!(
                        "mode {} not unit-normalised (norm {})",
                        k + 1,
                        col.norm()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Write to the `modal-v1` text format.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        io::save(self, path)
    }

    /// Read and validate a `modal-v1` file; raw shapes are normalised on load.
    pub fn load(path: &std::path::Path) -> Result<ModalModel> {
        io::load(path)
    }
}
