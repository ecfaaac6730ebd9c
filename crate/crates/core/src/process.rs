//! Layer-by-layer build simulation: each stage activates layers `1..=i`, flash-heats layer `i`
//! from ambient in a single implicit step, then cools it in fixed steps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fem::{self, CsrMatrix, DirichletSystem, ElementCoeffs, FemError, SolverKind};
use crate::geometry::BuildModel;
use crate::levelset::LevelSetField;
use crate::materials::{MaterialProps, ProcessParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProcessError {
    #[error("stage {stage}: {source}")]
    Stage { stage: usize, source: FemError },
}

/// Temperatures of one stage: end of heating and every retained cooling step.
#[derive(Debug, Clone, PartialEq)]
pub struct StageHistory {
    pub stage: usize,
    pub t_heat_end: Vec<f64>,
    /// `t_cool[j - 1]` is the field after cooling step `j`.
    pub t_cool: Vec<Vec<f64>>,
}

impl StageHistory {
    /// Field at cooling step `j`, with `j = 0` the end of heating.
    pub fn at(&self, j: usize) -> &[f64] {
        if j == 0 {
            &self.t_heat_end
        } else {
            &self.t_cool[j - 1]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub solver: SolverKind,
    /// Cooling steps to compute; `None` runs the full `t_c / dt_cool`.
    pub cooling_steps: Option<usize>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { solver: SolverKind::default(), cooling_steps: None }
    }
}

/// Matrices and prepared solvers of one stage. Coefficients are frozen within a stage, so the
/// cooling system serves every cooling step and the adjoint sweep.
pub struct StageOperators {
    pub stage: usize,
    pub coeffs: ElementCoeffs,
    pub c: CsrMatrix,
    pub k: CsrMatrix,
    pub q: Vec<f64>,
    pub heat: DirichletSystem,
    pub cool: DirichletSystem,
}

impl StageOperators {
    pub fn new(
        model: &BuildModel,
        field: &LevelSetField,
        mat: &MaterialProps,
        proc: &ProcessParams,
        stage: usize,
        solver: SolverKind,
    ) -> Result<Self, FemError> {
        let coeffs = fem::element_coeffs(model, field, stage, mat, proc)?;
        let c = fem::assemble_c(&coeffs, model);
        let k = fem::assemble_k(&coeffs, model)?;
        let q = fem::assemble_q(model, field, stage, proc)?;
        let fixed = model.plate_flags();
        let heat = DirichletSystem::new(fem::step_matrix(&c, &k, proc.t_h), &fixed, solver)?;
        let cool = DirichletSystem::new(fem::step_matrix(&c, &k, proc.dt_cool), &fixed, solver)?;
        Ok(Self { stage, coeffs, c, k, q, heat, cool })
    }

    pub fn simulate(&self, proc: &ProcessParams, cooling_steps: usize) -> Result<StageHistory, FemError> {
        let n = self.c.n();
        let ambient = vec![proc.t_amb; n];
        let rhs = fem::step_rhs(&self.c, &ambient, Some(&self.q), proc.t_h);
        let t_heat_end = self.heat.solve(&rhs, proc.t_amb)?;
        let mut t_cool: Vec<Vec<f64>> = Vec::with_capacity(cooling_steps);
        for _ in 0..cooling_steps {
            let prev = t_cool.last().unwrap_or(&t_heat_end);
            let rhs = fem::step_rhs(&self.c, prev, None, proc.dt_cool);
            t_cool.push(self.cool.solve(&rhs, proc.t_amb)?);
        }
        Ok(StageHistory { stage: self.stage, t_heat_end, t_cool })
    }
}

pub fn run_stage(
    model: &BuildModel,
    field: &LevelSetField,
    mat: &MaterialProps,
    proc: &ProcessParams,
    stage: usize,
) -> Result<StageHistory, ProcessError> {
    run_stage_with(model, field, mat, proc, stage, &SimOptions::default())
}

pub fn run_stage_with(
    model: &BuildModel,
    field: &LevelSetField,
    mat: &MaterialProps,
    proc: &ProcessParams,
    stage: usize,
    opts: &SimOptions,
) -> Result<StageHistory, ProcessError> {
    let wrap = |source| ProcessError::Stage { stage, source };
    let ops = StageOperators::new(model, field, mat, proc, stage, opts.solver).map_err(wrap)?;
    ops.simulate(proc, opts.cooling_steps.unwrap_or_else(|| proc.n_cool())).map_err(wrap)
}

/// Runs `stages` in parallel and returns histories in the order given.
pub fn run_stages(
    model: &BuildModel,
    field: &LevelSetField,
    mat: &MaterialProps,
    proc: &ProcessParams,
    stages: &[usize],
    opts: &SimOptions,
) -> Result<Vec<StageHistory>, ProcessError> {
    stages.par_iter().map(|&i| run_stage_with(model, field, mat, proc, i, opts)).collect()
}

/// Every stage `1..=m`. Stages restart from ambient, so they are independent.
pub fn run_build(
    model: &BuildModel,
    field: &LevelSetField,
    mat: &MaterialProps,
    proc: &ProcessParams,
) -> Result<Vec<StageHistory>, ProcessError> {
    run_build_with(model, field, mat, proc, &SimOptions::default())
}

pub fn run_build_with(
    model: &BuildModel,
    field: &LevelSetField,
    mat: &MaterialProps,
    proc: &ProcessParams,
    opts: &SimOptions,
) -> Result<Vec<StageHistory>, ProcessError> {
    let stages: Vec<usize> = (1..=model.layer_count()).collect();
    run_stages(model, field, mat, proc, &stages, opts)
}

/// Layer a node is attributed to in composite fields: the layer whose top face or interior holds
/// it; plate nodes go to layer 1.
pub fn node_layers(model: &BuildModel) -> Vec<usize> {
    let rows = model.rows_per_layer();
    let per_row = model.nx() + 1;
    (0..model.node_count()).map(|n| (n / per_row).div_ceil(rows).max(1)).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompositeMode {
    /// Each node takes the value from the stage of its own layer.
    #[default]
    Snapshot,
    /// Sum over stages of each stage's field restricted to its layer (closed), so nodes on
    /// layer interfaces collect two contributions.
    Sum,
}

/// Composite field at cooling step `j`: every layer at its own cooling moment.
pub fn layerwise_cooldown_field(
    histories: &[StageHistory],
    model: &BuildModel,
    j: usize,
    mode: CompositeMode,
) -> Result<Vec<f64>, String> {
    if j == 0 {
        return Err("cooling step must be at least 1".into());
    }
    let mut by_stage: Vec<Option<&StageHistory>> = vec![None; model.layer_count() + 1];
    for h in histories {
        if j > h.t_cool.len() {
            return Err(format!("stage {} has only {} cooling steps, asked for {j}", h.stage, h.t_cool.len()));
        }
        by_stage[h.stage] = Some(h);
    }
    let get = |i: usize| by_stage.get(i).copied().flatten().ok_or_else(|| format!("missing stage {i}"));
    match mode {
        CompositeMode::Snapshot => node_layers(model)
            .iter()
            .enumerate()
            .map(|(n, &layer)| Ok(get(layer)?.at(j)[n]))
            .collect(),
        CompositeMode::Sum => {
            let mut out = vec![0.0; model.node_count()];
            let rows = model.rows_per_layer();
            let per_row = model.nx() + 1;
            for (n, v) in out.iter_mut().enumerate() {
                let r = n / per_row;
                let mut layers = vec![r.div_ceil(rows).max(1)];
                // nodes on an interior layer boundary belong to the layer above as well
                if r % rows == 0 && r > 0 && r / rows < model.layer_count() {
                    layers.push(r / rows + 1);
                }
                for layer in layers {
                    *v += get(layer)?.at(j)[n];
                }
            }
            Ok(out)
        }
    }
}
