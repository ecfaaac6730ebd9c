//! Linear-triangle assembly of the heat capacity and conductivity matrices, the layer heat
//! source, and the backward Euler step.

pub mod solver;
pub mod sparse;

use thiserror::Error;

pub use solver::{DirichletSystem, SolveError, SolverKind};
pub use sparse::CsrMatrix;

use crate::geometry::{BuildModel, GeometryError};
use crate::levelset::{Heaviside, LevelSetField};
use crate::materials::{MaterialProps, ProcessParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FemError {
    #[error("degenerate element {element} (area {area:e})")]
    DegenerateElement { element: usize, area: f64 },
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Consistent mass matrix of a linear triangle with unit coefficient.
pub fn element_mass(area: f64) -> [[f64; 3]; 3] {
    let d = area / 6.0;
    let o = area / 12.0;
    [[d, o, o], [o, d, o], [o, o, d]]
}

/// `∫ ∇Nᵀ ∇N` over a linear triangle with unit coefficient.
pub fn element_stiffness(p: [[f64; 2]; 3]) -> Result<[[f64; 3]; 3], f64> {
    let area = 0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]));
    if !(area > f64::EPSILON * 1e3 * diameter2(p)) {
        return Err(area);
    }
    let mut b = [0.0; 3];
    let mut c = [0.0; 3];
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        b[i] = p[j][1] - p[k][1];
        c[i] = p[k][0] - p[j][0];
    }
    let mut ke = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            ke[i][j] = (b[i] * b[j] + c[i] * c[j]) / (4.0 * area);
        }
    }
    Ok(ke)
}

fn diameter2(p: [[f64; 2]; 3]) -> f64 {
    (0..3)
        .map(|i| {
            let j = (i + 1) % 3;
            (p[i][0] - p[j][0]).powi(2) + (p[i][1] - p[j][1]).powi(2)
        })
        .fold(0.0, f64::max)
}

pub(crate) fn element_points(model: &BuildModel, e: usize) -> [[f64; 2]; 3] {
    let tri = model.elements()[e];
    [model.nodes()[tri[0]], model.nodes()[tri[1]], model.nodes()[tri[2]]]
}

/// Per-element volumetric heat capacity (J/(mm³·K)) and conductivity (W/(mm·K)).
#[derive(Debug, Clone, PartialEq)]
pub struct ElementCoeffs {
    pub rho_c: Vec<f64>,
    pub k: Vec<f64>,
}

/// Multiplier applied to bulk properties of element `e` at `stage`.
///
/// Part elements use bulk properties, other elements the smoothed interpolation of their mean
/// level-set value; elements above the stage carry the inactive ersatz factor on top.
pub fn element_factor(model: &BuildModel, phi_mean: f64, e: usize, stage: usize, proc: &ProcessParams) -> f64 {
    let base = if model.is_part(e) {
        1.0
    } else {
        Heaviside::new_unchecked(proc.w_heaviside).interpolate(phi_mean, proc.d_void)
    };
    if model.layer_of_element(e) > stage {
        proc.ersatz_inactive * base
    } else {
        base
    }
}

pub fn element_coeffs(
    model: &BuildModel,
    field: &LevelSetField,
    stage: usize,
    mat: &MaterialProps,
    proc: &ProcessParams,
) -> Result<ElementCoeffs, FemError> {
    model.check_stage(stage)?;
    let means = field.element_means(model);
    let factors: Vec<f64> = (0..model.element_count())
        .map(|e| element_factor(model, means[e], e, stage, proc))
        .collect();
    Ok(ElementCoeffs {
        rho_c: factors.iter().map(|f| f * mat.rho_c()).collect(),
        k: factors.iter().map(|f| f * mat.k).collect(),
    })
}

/// `C = Σ_e ρc_e ∫ NᵀN`.
pub fn assemble_c(coeffs: &ElementCoeffs, model: &BuildModel) -> CsrMatrix {
    assemble_mass(model, &coeffs.rho_c)
}

/// `K = Σ_e k_e ∫ BᵀB`.
pub fn assemble_k(coeffs: &ElementCoeffs, model: &BuildModel) -> Result<CsrMatrix, FemError> {
    assemble_stiffness(model, &coeffs.k)
}

pub fn assemble_mass(model: &BuildModel, coeff: &[f64]) -> CsrMatrix {
    let mut m = CsrMatrix::from_mesh(model);
    for (e, tri) in model.elements().iter().enumerate() {
        let me = element_mass(model.element_area(e));
        let scaled = me.map(|row| row.map(|v| v * coeff[e]));
        m.add_element(tri, &scaled);
    }
    m
}

pub fn assemble_stiffness(model: &BuildModel, coeff: &[f64]) -> Result<CsrMatrix, FemError> {
    let mut k = CsrMatrix::from_mesh(model);
    for (e, tri) in model.elements().iter().enumerate() {
        let ke = element_stiffness(element_points(model, e))
            .map_err(|area| FemError::DegenerateElement { element: e, area })?;
        let scaled = ke.map(|row| row.map(|v| v * coeff[e]));
        k.add_element(tri, &scaled);
    }
    Ok(k)
}

/// Layer heat source `Q = ∫_{Ω_L} q s_e N`, with `s_e = 1` on part elements and the smoothed
/// material factor elsewhere in layer `stage`.
pub fn assemble_q(
    model: &BuildModel,
    field: &LevelSetField,
    stage: usize,
    proc: &ProcessParams,
) -> Result<Vec<f64>, FemError> {
    model.check_stage(stage)?;
    let means = field.element_means(model);
    let h = Heaviside::new_unchecked(proc.w_heaviside);
    let mut q = vec![0.0; model.node_count()];
    if proc.q == 0.0 {
        return Ok(q);
    }
    for (e, tri) in model.elements().iter().enumerate() {
        if model.layer_of_element(e) != stage {
            continue;
        }
        let s = if model.is_part(e) { 1.0 } else { h.interpolate(means[e], proc.d_void) };
        let share = proc.q * s * model.element_area(e) / 3.0;
        for &n in tri {
            q[n] += share;
        }
    }
    Ok(q)
}

/// `A = C/dt + K`, the backward Euler system matrix.
pub fn step_matrix(c: &CsrMatrix, k: &CsrMatrix, dt: f64) -> CsrMatrix {
    c.linear_combination(1.0 / dt, k, 1.0)
}

/// Right-hand side `C/dt T_prev + Q`.
pub fn step_rhs(c: &CsrMatrix, t_prev: &[f64], q: Option<&[f64]>, dt: f64) -> Vec<f64> {
    let mut rhs = c.mul_vec(t_prev);
    rhs.iter_mut().for_each(|v| *v /= dt);
    if let Some(q) = q {
        rhs.iter_mut().zip(q).for_each(|(r, qi)| *r += qi);
    }
    rhs
}

/// One backward Euler step `(C/dt + K) T_next = C/dt T_prev + Q` with the plate held at `t_amb`.
#[allow(clippy::too_many_arguments)]
pub fn implicit_step(
    c: &CsrMatrix,
    k: &CsrMatrix,
    q: Option<&[f64]>,
    t_prev: &[f64],
    dt: f64,
    fixed: &[bool],
    t_amb: f64,
    solver: SolverKind,
) -> Result<Vec<f64>, FemError> {
    if !(dt > 0.0) {
        return Err(FemError::Dimension(format!("time step must be positive, got {dt}")));
    }
    if t_prev.len() != c.n() || fixed.len() != c.n() {
        return Err(FemError::Dimension(format!(
            "vector length {} / {} does not match {} nodes",
            t_prev.len(),
            fixed.len(),
            c.n()
        )));
    }
    let system = DirichletSystem::new(step_matrix(c, k, dt), fixed, solver)?;
    Ok(system.solve(&step_rhs(c, t_prev, q, dt), t_amb)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strip_model(nx: usize, ny: usize) -> BuildModel {
        BuildModel::build_mesh(nx as f64, ny as f64, nx, ny, 1.0).unwrap()
    }

    #[test]
    fn unit_triangle_matrices() {
        let p = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let m = element_mass(0.5);
        let expect = [[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m[i][j], 0.5 / 12.0 * expect[i][j]);
            }
        }
        let k = element_stiffness(p).unwrap();
        let expect = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((k[i][j] - expect[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn degenerate_element_rejected() {
        assert!(element_stiffness([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]).is_err());
        assert!(element_stiffness([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]]).is_err());
    }

    #[test]
    fn shared_edge_is_additive() {
        let model = strip_model(1, 1);
        let c = assemble_mass(&model, &[1.0, 1.0]);
        // nodes 0 and 3 lie on the shared diagonal of the unit cell
        assert!((c.get(0, 3) - 2.0 * 0.5 / 12.0).abs() < 1e-15);
        assert!((c.get(0, 0) - 2.0 * 0.5 / 6.0).abs() < 1e-15);
        assert!((c.get(1, 1) - 0.5 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn capacity_row_sums_give_total() {
        let model = BuildModel::build_mesh(3.0, 2.0, 6, 4, 0.5).unwrap();
        let c = assemble_mass(&model, &vec![2.5; model.element_count()]);
        let total: f64 = c.mul_vec(&vec![1.0; model.node_count()]).iter().sum();
        assert!((total - 2.5 * 6.0).abs() < 1e-12);
    }

    #[test]
    fn stiffness_kernel_scaling_symmetry() {
        let model = BuildModel::build_mesh(3.0, 2.0, 6, 4, 0.5).unwrap();
        let coeff: Vec<f64> = (0..model.element_count()).map(|e| 1.0 + e as f64 * 0.01).collect();
        let k = assemble_stiffness(&model, &coeff).unwrap();
        let ones = vec![1.0; model.node_count()];
        assert!(k.mul_vec(&ones).iter().all(|v| v.abs() < 1e-12));
        assert_eq!(k.asymmetry(), 0.0);
        let scaled: Vec<f64> = coeff.iter().map(|c| 3.0 * c).collect();
        let k3 = assemble_stiffness(&model, &scaled).unwrap();
        for i in 0..model.node_count() {
            for (j, v) in k.row(i) {
                assert!((k3.get(i, j) - 3.0 * v).abs() <= 1e-15 * v.abs().max(1.0));
            }
        }
    }

    #[test]
    fn unit_square_steady_flux() {
        // bottom edge fixed at 0, top edge at 1, insulated sides: unit flux through the square
        let model = strip_model(1, 1);
        let k = assemble_stiffness(&model, &[1.0, 1.0]).unwrap();
        let t = [0.0, 0.0, 1.0, 1.0];
        let reaction = k.mul_vec(&t);
        assert!((reaction[2] + reaction[3] - 1.0).abs() < 1e-14);
        assert!((reaction[0] + reaction[1] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn single_dof_backward_euler() {
        // one free node attached to a fixed node by a unit conductance
        let full = || CsrMatrix::from_adjacency(vec![vec![0, 1], vec![0, 1]]);
        let mut c = full();
        c.add(0, 0, 1.0);
        c.add(1, 1, 2.0);
        let mut k = full();
        k.add(0, 0, 1.0);
        k.add(0, 1, -1.0);
        k.add(1, 0, -1.0);
        k.add(1, 1, 1.0);
        let t = implicit_step(&c, &k, None, &[0.0, 10.0], 0.5, &[true, false], 0.0, SolverKind::Cholesky).unwrap();
        // c (T+ - T)/dt + k T+ = 0  =>  T+ = T / (1 + dt k / c)
        assert!((t[1] - 10.0 / (1.0 + 0.5 * 1.0 / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn ambient_is_steady() {
        let model = BuildModel::build_mesh(2.0, 2.0, 4, 4, 0.5).unwrap();
        let c = assemble_mass(&model, &vec![2.4e-3; model.element_count()]);
        let k = assemble_stiffness(&model, &vec![0.119; model.element_count()]).unwrap();
        let t0 = vec![20.0; model.node_count()];
        for solver in [SolverKind::Cholesky, SolverKind::Pcg] {
            let t = implicit_step(&c, &k, None, &t0, 1.0, &model.plate_flags(), 20.0, solver).unwrap();
            assert!(t.iter().all(|v| (v - 20.0).abs() < 1e-9));
        }
    }
}
