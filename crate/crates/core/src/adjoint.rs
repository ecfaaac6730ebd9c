//! Heat-dissipation objective and its discrete adjoint sensitivity.
//!
//! For stage `i` the cooling steps satisfy `A T^j = (C/Δt) T^{j-1}` with `A = C/Δt + K`. The
//! objective sums `(T^j - T_amb)² Δt` over part nodes of layer `i` for `j = 1..=n_obj`. Its
//! adjoint runs backward over the same horizon:
//!
//! ```text
//! A λ^n = -g^n,        A λ^j = -g^j + (C/Δt) λ^{j+1},        g^j = 2 (T^j - T_amb) Δt
//! ```
//!
//! and the gradient is `Σ_j λ^jᵀ [(∂C/Δt + ∂K) T^j - (∂C/Δt) T^{j-1}]`. Loads beyond `n_obj`
//! vanish, so stopping the sweep there is exact.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fem::{self, FemError, SolverKind};
use crate::geometry::BuildModel;
use crate::levelset::{Heaviside, LevelSetField};
use crate::materials::{MaterialProps, ProcessParams};
use crate::process::{StageHistory, StageOperators};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdjointError {
    #[error("stage {stage} has {got} cooling steps, objective needs {needed}")]
    ShortHistory { stage: usize, got: usize, needed: usize },
    #[error("stage {stage}, step {step}: {source}")]
    Solve { stage: usize, step: usize, source: FemError },
    #[error("stage {stage}: {source}")]
    Stage { stage: usize, source: FemError },
    #[error("non-finite objective in stage {0}")]
    NonFinite(usize),
}

/// Which design dependencies enter the gradient.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    /// Cooling residuals only, over active non-part elements outside the stage's laser layer.
    /// The heating step, the laser layer and the inactive ersatz region are treated as design
    /// independent.
    #[default]
    Reduced,
    /// Full derivative of the discrete objective, including the heating step, the heat source,
    /// the laser layer and the inactive region.
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub total: f64,
    pub per_stage: Vec<f64>,
}

/// Nodal `dF/dΦ`, zero on part nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityField {
    pub values: Vec<f64>,
}

fn stage_objective(history: &StageHistory, qualifying: &[usize], proc: &ProcessParams) -> f64 {
    (1..=proc.n_obj)
        .map(|j| {
            let t = history.at(j);
            qualifying.iter().map(|&n| (t[n] - proc.t_amb).powi(2)).sum::<f64>() * proc.dt_cool
        })
        .sum()
}

pub fn objective(
    histories: &[StageHistory],
    model: &BuildModel,
    proc: &ProcessParams,
) -> Result<ObjectiveValue, AdjointError> {
    let mut per_stage = Vec::with_capacity(histories.len());
    for h in histories {
        if h.t_cool.len() < proc.n_obj {
            return Err(AdjointError::ShortHistory { stage: h.stage, got: h.t_cool.len(), needed: proc.n_obj });
        }
        let value = stage_objective(h, &model.part_nodes_in_layer(h.stage), proc);
        if !value.is_finite() {
            return Err(AdjointError::NonFinite(h.stage));
        }
        per_stage.push(value);
    }
    Ok(ObjectiveValue { total: per_stage.iter().sum(), per_stage })
}

/// Adjoint vectors of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageAdjoint {
    pub stage: usize,
    /// `lambda[j - 1]` pairs with cooling step `j`, for `j = 1..=n_obj`.
    pub lambda: Vec<Vec<f64>>,
    /// Multiplier of the heating residual; only computed in [`GradientMode::Exact`].
    pub heating: Option<Vec<f64>>,
}

fn adjoint_sweep(
    ops: &StageOperators,
    history: &StageHistory,
    qualifying: &[usize],
    proc: &ProcessParams,
    mode: GradientMode,
) -> Result<StageAdjoint, AdjointError> {
    let stage = history.stage;
    let n = ops.c.n();
    let horizon = proc.n_obj;
    let mut lambda = vec![Vec::new(); horizon];
    let mut carry = vec![0.0; n];
    for j in (1..=horizon).rev() {
        let t = history.at(j);
        let mut rhs = carry;
        for &q in qualifying {
            rhs[q] -= 2.0 * (t[q] - proc.t_amb) * proc.dt_cool;
        }
        let l = ops
            .cool
            .solve_homogeneous(&rhs)
            .map_err(|e| AdjointError::Solve { stage, step: j, source: e.into() })?;
        carry = ops.c.mul_vec(&l);
        carry.iter_mut().for_each(|v| *v /= proc.dt_cool);
        lambda[j - 1] = l;
    }
    let heating = match mode {
        GradientMode::Reduced => None,
        GradientMode::Exact => Some(
            ops.heat
                .solve_homogeneous(&carry)
                .map_err(|e| AdjointError::Solve { stage, step: 0, source: e.into() })?,
        ),
    };
    Ok(StageAdjoint { stage, lambda, heating })
}

pub fn solve_adjoint_stage(
    model: &BuildModel,
    field: &LevelSetField,
    mat: &MaterialProps,
    proc: &ProcessParams,
    history: &StageHistory,
    mode: GradientMode,
    solver: SolverKind,
) -> Result<StageAdjoint, AdjointError> {
    let stage = history.stage;
    if history.t_cool.len() < proc.n_obj {
        return Err(AdjointError::ShortHistory { stage, got: history.t_cool.len(), needed: proc.n_obj });
    }
    let ops = StageOperators::new(model, field, mat, proc, stage, solver)
        .map_err(|source| AdjointError::Stage { stage, source })?;
    adjoint_sweep(&ops, history, &model.part_nodes_in_layer(stage), proc, mode)
}

fn gather(v: &[f64], tri: &[usize; 3]) -> [f64; 3] {
    [v[tri[0]], v[tri[1]], v[tri[2]]]
}

fn apply(m: &[[f64; 3]; 3], x: &[f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| m[i][0] * x[0] + m[i][1] * x[1] + m[i][2] * x[2])
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Gradient contribution of one stage, accumulated into `out`.
#[allow(clippy::too_many_arguments)]
fn accumulate_stage(
    model: &BuildModel,
    means: &[f64],
    mat: &MaterialProps,
    proc: &ProcessParams,
    history: &StageHistory,
    adjoint: &StageAdjoint,
    mode: GradientMode,
    out: &mut [f64],
) {
    let stage = history.stage;
    let h = Heaviside::new_unchecked(proc.w_heaviside);
    let rho_c = mat.rho_c();
    for (e, tri) in model.elements().iter().enumerate() {
        if model.is_part(e) {
            continue;
        }
        let layer = model.layer_of_element(e);
        let mut dfactor = h.interpolate_derivative(means[e], proc.d_void);
        if dfactor == 0.0 {
            continue;
        }
        match mode {
            GradientMode::Reduced => {
                if layer >= stage {
                    continue;
                }
            }
            GradientMode::Exact => {
                if layer > stage {
                    dfactor *= proc.ersatz_inactive;
                }
            }
        }
        let area = model.element_area(e);
        let me = fem::element_mass(area);
        let ke = fem::element_stiffness(fem::element_points(model, e)).expect("mesh validated at assembly");
        // derivative of the element residual with respect to its bulk-property factor
        let mut w = 0.0;
        for j in 1..=proc.n_obj {
            let l = gather(&adjoint.lambda[j - 1], tri);
            let t = gather(history.at(j), tri);
            let tp = gather(history.at(j - 1), tri);
            let dt = [t[0] - tp[0], t[1] - tp[1], t[2] - tp[2]];
            let mdt = apply(&me, &dt);
            let kt = apply(&ke, &t);
            w += dot3(&l, &[0, 1, 2].map(|a| rho_c / proc.dt_cool * mdt[a] + mat.k * kt[a]));
        }
        if let Some(mu) = &adjoint.heating {
            let m = gather(mu, tri);
            let t0 = gather(&history.t_heat_end, tri);
            let rise = t0.map(|v| v - proc.t_amb);
            let mr = apply(&me, &rise);
            let kt = apply(&ke, &t0);
            w += dot3(&m, &[0, 1, 2].map(|a| rho_c / proc.t_h * mr[a] + mat.k * kt[a]));
            if layer == stage {
                // heat source term enters the residual with a minus sign
                w -= (m[0] + m[1] + m[2]) * proc.q * area / 3.0;
            }
        }
        let share = w * dfactor / 3.0;
        for &n in tri {
            out[n] += share;
        }
    }
}

pub fn assemble_sensitivity(
    model: &BuildModel,
    field: &LevelSetField,
    mat: &MaterialProps,
    proc: &ProcessParams,
    histories: &[StageHistory],
    adjoints: &[StageAdjoint],
    mode: GradientMode,
) -> SensitivityField {
    let means = field.element_means(model);
    let mut values = vec![0.0; model.node_count()];
    for (history, adjoint) in histories.iter().zip(adjoints) {
        debug_assert_eq!(history.stage, adjoint.stage);
        accumulate_stage(model, &means, mat, proc, history, adjoint, mode, &mut values);
    }
    zero_part_nodes(model, &mut values);
    SensitivityField { values }
}

fn zero_part_nodes(model: &BuildModel, values: &mut [f64]) {
    for (v, part) in values.iter_mut().zip(model.part_node_flags()) {
        if part {
            *v = 0.0;
        }
    }
}

/// Objective and, on request, its sensitivity for one design.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub objective: ObjectiveValue,
    pub sensitivity: Option<SensitivityField>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvalOptions {
    pub solver: SolverKind,
    pub mode: GradientMode,
}

/// Forward and adjoint sweeps per stage with one set of factorizations, stages in parallel.
/// Only the `n_obj` cooling steps the objective needs are computed.
pub fn evaluate(
    model: &BuildModel,
    field: &LevelSetField,
    mat: &MaterialProps,
    proc: &ProcessParams,
    opts: &EvalOptions,
    with_gradient: bool,
) -> Result<Evaluation, AdjointError> {
    let means = field.element_means(model);
    let stages: Vec<usize> = (1..=model.layer_count()).collect();
    let results: Vec<(f64, Option<Vec<f64>>)> = stages
        .par_iter()
        .map(|&stage| {
            let ops = StageOperators::new(model, field, mat, proc, stage, opts.solver)
                .map_err(|source| AdjointError::Stage { stage, source })?;
            let history =
                ops.simulate(proc, proc.n_obj).map_err(|source| AdjointError::Stage { stage, source })?;
            let qualifying = model.part_nodes_in_layer(stage);
            let value = stage_objective(&history, &qualifying, proc);
            if !value.is_finite() {
                return Err(AdjointError::NonFinite(stage));
            }
            if !with_gradient || qualifying.is_empty() {
                return Ok((value, None));
            }
            let adjoint = adjoint_sweep(&ops, &history, &qualifying, proc, opts.mode)?;
            let mut grad = vec![0.0; model.node_count()];
            accumulate_stage(model, &means, mat, proc, &history, &adjoint, opts.mode, &mut grad);
            Ok((value, Some(grad)))
        })
        .collect::<Result<_, _>>()?;
    let per_stage: Vec<f64> = results.iter().map(|r| r.0).collect();
    let objective = ObjectiveValue { total: per_stage.iter().sum(), per_stage };
    let sensitivity = with_gradient.then(|| {
        let mut values = vec![0.0; model.node_count()];
        // ordered reduction keeps the sum independent of scheduling
        for grad in results.iter().filter_map(|r| r.1.as_ref()) {
            values.iter_mut().zip(grad).for_each(|(v, g)| *v += g);
        }
        zero_part_nodes(model, &mut values);
        SensitivityField { values }
    });
    Ok(Evaluation { objective, sensitivity })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PartGeometry;

    #[test]
    fn single_node_objective() {
        let model = BuildModel::build_mesh(1.0, 0.5, 1, 1, 0.5)
            .unwrap()
            .with_part_mask(vec![true, false])
            .unwrap();
        // part element [0, 1, 3]: nodes 0 and 1 sit on the plate, node 3 qualifies
        let mut t = vec![20.0; 4];
        t[3] = 30.0;
        let hist = StageHistory { stage: 1, t_heat_end: t.clone(), t_cool: vec![t; 3] };
        let proc = ProcessParams { t_c: 3.0, ..ProcessParams::default() };
        let f = objective(&[hist.clone()], &model, &proc).unwrap();
        assert_eq!(f.total, 300.0);
        assert_eq!(f.per_stage, vec![300.0]);
        let short = StageHistory { t_cool: vec![hist.t_heat_end.clone(); 2], ..hist };
        assert!(matches!(objective(&[short], &model, &proc), Err(AdjointError::ShortHistory { .. })));
    }

    #[test]
    fn ambient_history_gives_zero_adjoint() {
        let model = BuildModel::build_mesh(2.0, 1.0, 4, 2, 0.5)
            .unwrap()
            .apply_part_mask(&PartGeometry::overhang_beam(0.0, 1.0, 1.0, 0.5, 0.5, 1.0))
            .unwrap();
        let field = LevelSetField::initial(&model, 0.0);
        let proc = ProcessParams::default();
        let hist = StageHistory { stage: 2, t_heat_end: vec![20.0; 15], t_cool: vec![vec![20.0; 15]; 10] };
        let adj = solve_adjoint_stage(
            &model,
            &field,
            &MaterialProps::default(),
            &proc,
            &hist,
            GradientMode::Exact,
            SolverKind::Cholesky,
        )
        .unwrap();
        assert!(adj.lambda.iter().flatten().all(|v| *v == 0.0));
        assert_eq!(objective(&[hist], &model, &proc).unwrap().total, 0.0);
    }

    #[test]
    fn no_part_gives_zero_sensitivity() {
        let model = BuildModel::build_mesh(2.0, 1.0, 4, 2, 0.5).unwrap();
        let field = LevelSetField::initial(&model, 0.0);
        let ev = evaluate(
            &model,
            &field,
            &MaterialProps::default(),
            &ProcessParams::default(),
            &EvalOptions::default(),
            true,
        )
        .unwrap();
        assert_eq!(ev.objective.total, 0.0);
        assert!(ev.sensitivity.unwrap().values.iter().all(|v| *v == 0.0));
    }
}
