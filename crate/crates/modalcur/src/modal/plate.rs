//! Thin-plate bending finite elements for the clamped cantilever plate.
//!
//! Uses the 12-DOF non-conforming rectangular Kirchhoff element (cubic
//! polynomial basis, 3 DOF per node: w, dw/dx, dw/dy) with consistent
//! translational mass. Only the transverse displacement is exposed as a
//! sensing candidate.

use nalgebra::{DMatrix, DVector};

use super::eigen::{dense_generalized_eig, subspace_iteration, BandedSpd};
use super::{MaterialSpec, ModalModel, PlateGeometry};
use crate::{Error, Result};

/// DOF count above which the solver switches from dense reduction to
/// banded subspace iteration.
const DENSE_DOF_LIMIT: usize = 3000;
const EIG_TOL: f64 = 1e-10;

/// Assembled free-free-reduced system matrices plus mesh bookkeeping.
pub struct PlateSystem {
    pub stiffness: BandedSpd,
    pub mass: BandedSpd,
    pub node_coords: Vec<(f64, f64)>,
    /// For each node, the free-DOF index of its transverse DOF, if unclamped.
    pub w_dof: Vec<Option<usize>>,
    pub clamped: Vec<bool>,
    pub n_free: usize,
}

/// 12-term polynomial basis of the rectangular plate element.
fn poly(x: f64, y: f64) -> [f64; 12] {
    [
        1.0,
        x,
        y,
        x * x,
        x * y,
        y * y,
        x * x * x,
        x * x * y,
        x * y * y,
        y * y * y,
        x * x * x * y,
        x * y * y * y,
    ]
}

fn poly_dx(x: f64, y: f64) -> [f64; 12] {
    [
        0.0,
        1.0,
        0.0,
        2.0 * x,
        y,
        0.0,
        3.0 * x * x,
        2.0 * x * y,
        y * y,
        0.0,
        3.0 * x * x * y,
        y * y * y,
    ]
}

fn poly_dy(x: f64, y: f64) -> [f64; 12] {
    [
        0.0,
        0.0,
        1.0,
        0.0,
        x,
        2.0 * y,
        0.0,
        x * x,
        2.0 * x * y,
        3.0 * y * y,
        x * x * x,
        3.0 * x * y * y,
    ]
}

fn poly_dxx(x: f64, y: f64) -> [f64; 12] {
    [
        0.0,
        0.0,
        0.0,
        2.0,
        0.0,
        0.0,
        6.0 * x,
        2.0 * y,
        0.0,
        0.0,
        6.0 * x * y,
        0.0,
    ]
}

fn poly_dyy(x: f64, y: f64) -> [f64; 12] {
    [
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        2.0,
        0.0,
        0.0,
        2.0 * x,
        6.0 * y,
        0.0,
        6.0 * x * y,
    ]
}

fn poly_dxy(x: f64, y: f64) -> [f64; 12] {
    [
        0.0,
        0.0,
        0.0,
        0.0,
        1.0,
        0.0,
        0.0,
        2.0 * x,
        2.0 * y,
        0.0,
        3.0 * x * x,
        3.0 * y * y,
    ]
}

/// 5-point Gauss rule on [0, 1].
const GAUSS: [(f64, f64); 5] = [
    (0.046910077030668, 0.118463442528095),
    (0.230765344947158, 0.239314335249683),
    (0.5, 0.284444444444444),
    (0.769234655052841, 0.239314335249683),
    (0.953089922969332, 0.118463442528095),
];

/// Element stiffness and mass (12x12) for a rectangle of size a x b.
fn element_matrices(
    a: f64,
    b: f64,
    material: &MaterialSpec,
    thickness: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let e = material.youngs_modulus;
    let nu = material.poisson_ratio;
    let t = thickness;
    let d0 = e * t * t * t / (12.0 * (1.0 - nu * nu));
    // Bending rigidity matrix for curvature vector [w,xx; w,yy; 2 w,xy].
    let d = DMatrix::from_row_slice(
        3,
        3,
        &[
            d0,
            d0 * nu,
            0.0,
            d0 * nu,
            d0,
            0.0,
            0.0,
            0.0,
            d0 * (1.0 - nu) / 2.0,
        ],
    );

    // Map nodal DOFs (w, w_x, w_y at 4 corners) to polynomial coefficients.
    let corners = [(0.0, 0.0), (a, 0.0), (a, b), (0.0, b)];
    let mut c = DMatrix::zeros(12, 12);
    for (n, &(x, y)) in corners.iter().enumerate() {
        let rows = [poly(x, y), poly_dx(x, y), poly_dy(x, y)];
        for (r, row) in rows.iter().enumerate() {
            for j in 0..12 {
                c[(3 * n + r, j)] = row[j];
            }
        }
    }
    let c_inv = c.try_inverse().expect("element basis matrix is invertible");

    let mut k_poly = DMatrix::zeros(12, 12);
    let mut m_poly = DMatrix::zeros(12, 12);
    for &(gx, wx) in &GAUSS {
        for &(gy, wy) in &GAUSS {
            let (x, y) = (gx * a, gy * b);
            let w = wx * wy * a * b;
            let bxx = poly_dxx(x, y);
            let byy = poly_dyy(x, y);
            let bxy = poly_dxy(x, y);
            let p = poly(x, y);
            let bmat = DMatrix::from_fn(3, 12, |r, j| match r {
                0 => bxx[j],
                1 => byy[j],
                _ => 2.0 * bxy[j],
            });
            k_poly += w * bmat.transpose() * &d * &bmat;
            let pv = DVector::from_row_slice(&p);
            m_poly += (w * material.density * t) * &pv * pv.transpose();
        }
    }

    let ke = c_inv.transpose() * k_poly * &c_inv;
    let me = c_inv.transpose() * m_poly * &c_inv;
    ((&ke + ke.transpose()) * 0.5, (&me + me.transpose()) * 0.5)
}

/// Mesh the plate and assemble banded stiffness/mass over free DOFs.
pub fn assemble_plate_system(
    geometry: &PlateGeometry,
    material: &MaterialSpec,
    element_size: f64,
) -> Result<PlateSystem> {
    geometry.validate()?;
    material.validate()?;
    if !(element_size > 0.0 && element_size.is_finite()) {
        return Err(Error::InvalidGeometry(format!(
            "element_size must be positive, got {element_size}"
        )));
    }
    // Mesh clamp and free spans separately so a node row falls exactly on
    // the clamp boundary; the clamped node set is then mesh-independent.
    let free_span = geometry.length - geometry.clamp_depth;
    let nx_clamp = (geometry.clamp_depth / element_size).round().max(1.0) as usize;
    let nx_free = (free_span / element_size).round().max(1.0) as usize;
    let ny = (geometry.width / element_size).round().max(1.0) as usize;
    if nx_free < 2 || ny < 2 {
        return Err(Error::MeshTooCoarse(format!(
            "{nx_free} x {ny} elements over the free span; need at least 2 in each direction"
        )));
    }
    let nx = nx_clamp + nx_free;
    let mut xs = Vec::with_capacity(nx + 1);
    for i in 0..=nx_clamp {
        xs.push(geometry.clamp_depth * i as f64 / nx_clamp as f64);
    }
    for i in 1..=nx_free {
        xs.push(geometry.clamp_depth + free_span * i as f64 / nx_free as f64);
    }
    let dy = geometry.width / ny as f64;
    let nyn = ny + 1;
    let n_nodes = (nx + 1) * nyn;

    let node_coords: Vec<(f64, f64)> = (0..n_nodes)
        .map(|id| (xs[id / nyn], (id % nyn) as f64 * dy))
        .collect();
    // The boundary line itself is held by the clamp jaw; leaving it free
    // would move the effective clamp one element column inboard.
    let clamped: Vec<bool> = node_coords
        .iter()
        .map(|&(x, _)| x <= geometry.clamp_depth)
        .collect();

    // Free-DOF numbering preserves (node, local-dof) order.
    let mut dof_map = vec![None; 3 * n_nodes];
    let mut n_free = 0;
    for node in 0..n_nodes {
        if !clamped[node] {
            for d in 0..3 {
                dof_map[3 * node + d] = Some(n_free);
                n_free += 1;
            }
        }
    }
    if n_free == 0 {
        return Err(Error::InvalidGeometry(
            "clamp region covers the whole plate".into(),
        ));
    }

    let element_nodes = |ex: usize, ey: usize| {
        [
            ex * nyn + ey,
            (ex + 1) * nyn + ey,
            (ex + 1) * nyn + ey + 1,
            ex * nyn + ey + 1,
        ]
    };

    let mut bw = 0usize;
    for ex in 0..nx {
        for ey in 0..ny {
            let mut lo = usize::MAX;
            let mut hi = 0usize;
            for &n in &element_nodes(ex, ey) {
                for d in 0..3 {
                    if let Some(g) = dof_map[3 * n + d] {
                        lo = lo.min(g);
                        hi = hi.max(g);
                    }
                }
            }
            if lo != usize::MAX {
                bw = bw.max(hi - lo);
            }
        }
    }

    // Element width differs between the clamp and free segments.
    let mut elem_cache: Vec<(f64, DMatrix<f64>, DMatrix<f64>)> = Vec::new();
    let mut k = BandedSpd::zeros(n_free, bw);
    let mut m = BandedSpd::zeros(n_free, bw);
    for ex in 0..nx {
        let a = xs[ex + 1] - xs[ex];
        if !elem_cache.iter().any(|(w, _, _)| *w == a) {
            let (ke, me) = element_matrices(a, dy, material, geometry.thickness);
            elem_cache.push((a, ke, me));
        }
        let (_, ke, me) = elem_cache.iter().find(|(w, _, _)| *w == a).unwrap();
        for ey in 0..ny {
            let nodes = element_nodes(ex, ey);
            let mut dofs = Vec::with_capacity(12);
            for &n in &nodes {
                for d in 0..3 {
                    dofs.push(dof_map[3 * n + d]);
                }
            }
            for (i, &di) in dofs.iter().enumerate() {
                let Some(gi) = di else { continue };
                for (j, &dj) in dofs.iter().enumerate() {
                    let Some(gj) = dj else { continue };
                    if gj <= gi {
                        k.add(gi, gj, ke[(i, j)]);
                        m.add(gi, gj, me[(i, j)]);
                        // add() folds (i,j) and (j,i) into one entry; only
                        // visit the lower triangle.
                    }
                }
            }
        }
    }

    let w_dof: Vec<Option<usize>> = (0..n_nodes).map(|n| dof_map[3 * n]).collect();
    Ok(PlateSystem {
        stiffness: k,
        mass: m,
        node_coords,
        w_dof,
        clamped,
        n_free,
    })
}

/// Solve the plate eigenproblem and package the transverse mode shapes.
pub fn assemble_plate_model(
    geometry: &PlateGeometry,
    material: &MaterialSpec,
    element_size: f64,
    n_modes: usize,
) -> Result<ModalModel> {
    if n_modes < 1 {
        return Err(Error::InvalidArgument("n_modes must be >= 1".into()));
    }
    let sys = assemble_plate_system(geometry, material, element_size)?;
    if n_modes > sys.n_free {
        return Err(Error::InvalidArgument(format!(
            "requested {n_modes} modes from a {}-DOF system",
            sys.n_free
        )));
    }
    let (lambdas, vecs) = if sys.n_free <= DENSE_DOF_LIMIT {
        dense_generalized_eig(&sys.stiffness.to_dense(), &sys.mass.to_dense(), n_modes)?
    } else {
        subspace_iteration(&sys.stiffness, &sys.mass, n_modes, EIG_TOL, 400)?
    };

    let frequencies: Vec<f64> = lambdas
        .iter()
        .map(|&l| l.max(0.0).sqrt() / (2.0 * std::f64::consts::PI))
        .collect();

    let n_nodes = sys.node_coords.len();
    let mut shapes = DMatrix::zeros(n_nodes, n_modes);
    for node in 0..n_nodes {
        if let Some(dof) = sys.w_dof[node] {
            for k in 0..n_modes {
                shapes[(node, k)] = vecs[(dof, k)];
            }
        }
    }

    let mut model = ModalModel {
        node_coords: sys.node_coords,
        mode_shapes: shapes,
        frequencies,
        placement_mask: sys.clamped.iter().map(|&c| !c).collect(),
        normalised: false,
    };
    model.normalise();
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modal::eigen::eig_residual;
    use nalgebra::DVector;

    fn small_geometry() -> PlateGeometry {
        PlateGeometry {
            length: 0.447,
            width: 0.0762,
            thickness: 0.003,
            clamp_depth: 0.024,
        }
    }

    #[test]
    fn one_element_mesh_is_too_coarse() {
        let err =
            assemble_plate_model(&small_geometry(), &MaterialSpec::steel(), 0.447, 1).unwrap_err();
        assert!(matches!(err, Error::MeshTooCoarse(_)), "{err}");
    }

    #[test]
    fn single_mode_request_yields_one_unit_column() {
        let model = assemble_plate_model(&small_geometry(), &MaterialSpec::steel(), 0.03, 1).unwrap();
        assert_eq!(model.n_modes(), 1);
        assert!((model.mode_shapes.column(0).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn first_frequency_matches_beam_estimate() {
        // Euler-Bernoulli clamped-free estimate on the free span.
        let g = small_geometry();
        let mat = MaterialSpec::steel();
        let model = assemble_plate_model(&g, &mat, 0.012, 3).unwrap();
        let l_free = 0.423;
        let expect = (1.8751040687119611f64.powi(2) / (2.0 * std::f64::consts::PI))
            * (mat.youngs_modulus * g.thickness * g.thickness / (12.0 * mat.density)).sqrt()
            / (l_free * l_free);
        let rel = (model.frequencies[0] - expect).abs() / expect;
        assert!(rel < 0.10, "f1 = {}, expect ~{expect}", model.frequencies[0]);
    }

    #[test]
    fn eigenpairs_satisfy_residual_bound() {
        let g = small_geometry();
        let mat = MaterialSpec::steel();
        let sys = assemble_plate_system(&g, &mat, 0.02).unwrap();
        let (lambdas, vecs) =
            dense_generalized_eig(&sys.stiffness.to_dense(), &sys.mass.to_dense(), 4).unwrap();
        for (k, &l) in lambdas.iter().enumerate() {
            let v: DVector<f64> = vecs.column(k).into_owned();
            let r = eig_residual(&sys.stiffness, &sys.mass, l, &v);
            assert!(r < 1e-8, "mode {k} residual {r}");
        }
    }

    #[test]
    fn mesh_refinement_converges() {
        let g = PlateGeometry {
            length: 0.2,
            width: 0.08,
            thickness: 0.003,
            clamp_depth: 0.02,
        };
        let mat = MaterialSpec::steel();
        let coarse = assemble_plate_model(&g, &mat, 0.01, 1).unwrap();
        let fine = assemble_plate_model(&g, &mat, 0.005, 1).unwrap();
        let rel = (coarse.frequencies[0] - fine.frequencies[0]).abs() / fine.frequencies[0];
        assert!(rel < 0.02, "refinement changed f1 by {rel}");
    }

    #[test]
    fn placement_mask_tracks_clamp_region() {
        let g = small_geometry();
        let model = assemble_plate_model(&g, &MaterialSpec::steel(), 0.02, 1).unwrap();
        for (i, &(x, _)) in model.node_coords.iter().enumerate() {
            assert_eq!(model.placement_mask[i], x > g.clamp_depth);
        }
    }
}
