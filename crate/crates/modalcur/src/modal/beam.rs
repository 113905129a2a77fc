//! Analytical clamped-free Euler-Bernoulli beam modes.
//!
//! Closed-form mode functions sampled on an evenly spaced 1-D grid. Serves as
//! the fast fallback model and as an independent oracle for the plate solver.

use nalgebra::DMatrix;

use super::{MaterialSpec, ModalModel};
use crate::{Error, Result};

/// Roots of `cos(bl) cosh(bl) = -1` for the first eight clamped-free modes.
const BETA_L: [f64; 8] = [
    1.8751040687119611,
    4.694091132974175,
    7.854757438237613,
    10.995540734875467,
    14.13716839104647,
    17.27875953208823,
    20.42035224562606,
    23.561944902040455,
];

/// Cross-section thickness used for the beam's frequency scale [m].
const BEAM_THICKNESS: f64 = 0.003;

/// Clamped-free mode function value at normalised position `xi = x / L`.
fn mode_fn(beta_l: f64, xi: f64) -> f64 {
    let bl = beta_l * xi;
    let sigma = (beta_l.cosh() + beta_l.cos()) / (beta_l.sinh() + beta_l.sin());
    (bl.cosh() - bl.cos()) - sigma * (bl.sinh() - bl.sin())
}

/// Sample the first `n_modes` clamped-free beam modes on `n_points` nodes.
///
/// Node 0 sits at the clamped end and is excluded from the placement mask.
/// Frequencies follow the thin rectangular steel section used throughout the
/// test models.
pub fn beam_modes_analytical(length: f64, n_points: usize, n_modes: usize) -> Result<ModalModel> {
    if !(length > 0.0 && length.is_finite()) {
        return Err(Error::InvalidGeometry(format!(
            "length must be positive, got {length}"
        )));
    }
    if n_modes == 0 {
        return Err(Error::InvalidArgument("n_modes must be >= 1".into()));
    }
    if n_modes > BETA_L.len() {
        return Err(Error::InvalidArgument(format!(
            "n_modes = {n_modes} exceeds the root-finding table ({} modes)",
            BETA_L.len()
        )));
    }
    if n_points < n_modes + 1 {
        return Err(Error::InvalidArgument(format!(
            "n_points = {n_points} must be at least n_modes + 1 = {}",
            n_modes + 1
        )));
    }

    let mat = MaterialSpec::steel();
    let node_coords: Vec<(f64, f64)> = (0..n_points)
        .map(|i| (length * i as f64 / (n_points - 1) as f64, 0.0))
        .collect();

    let mut shapes = DMatrix::zeros(n_points, n_modes);
    for k in 0..n_modes {
        for (i, &(x, _)) in node_coords.iter().enumerate() {
            shapes[(i, k)] = mode_fn(BETA_L[k], x / length);
        }
    }

    let frequencies: Vec<f64> = (0..n_modes)
        .map(|k| {
            BETA_L[k].powi(2) / (2.0 * std::f64::consts::PI)
                * (mat.youngs_modulus * BEAM_THICKNESS * BEAM_THICKNESS / (12.0 * mat.density))
                    .sqrt()
                / (length * length)
        })
        .collect();

    let mut mask = vec![true; n_points];
    mask[0] = false;

    let mut model = ModalModel {
        node_coords,
        mode_shapes: shapes,
        frequencies,
        placement_mask: mask,
        normalised: false,
    };
    model.normalise();
    model.validate()?;
    Ok(model)
}
