//! Outer optimization loop, volume-constrained update direction and the pillar baseline.

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adjoint::{self, AdjointError, EvalOptions, GradientMode, SensitivityField};
use crate::fem::SolverKind;
use crate::geometry::BuildModel;
use crate::levelset::{self, Heaviside, LevelSetError, LevelSetField, LevelSetUpdater, UpdateParams};
use crate::materials::{MaterialProps, ProcessParams};

/// Volume fraction slack accepted at convergence.
pub const FEASIBILITY_SLACK: f64 = 0.005;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizeError {
    #[error("invalid optimization config: {0}")]
    Config(String),
    #[error("iteration {iter}: {source}")]
    Analysis { iter: usize, source: AdjointError },
    #[error("iteration {iter}: level-set update failed: {source}")]
    Update { iter: usize, source: LevelSetError },
    #[error("iteration {iter}: non-finite objective")]
    NonFinite { iter: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LagrangeParams {
    pub initial: f64,
    /// Penalty weight in the multiplier update `Λ ← max(0, Λ + ρ (v - v_max))`.
    pub penalty: f64,
    /// Weight of the current violation added on top of `Λ` in the direction. It damps the
    /// oscillation a bare multiplier update produces; zero disables it.
    pub proportional: f64,
}

impl Default for LagrangeParams {
    fn default() -> Self {
        Self { initial: 3.5, penalty: 0.4, proportional: 40.0 }
    }
}

/// Step acceptance. While the design is feasible, a step that raises `F` by more than
/// `tolerance` (relative) is retried with half the fictitious time step, at most `max_halvings`
/// times. The last trial is taken regardless.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepControl {
    pub max_halvings: usize,
    pub tolerance: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self { max_halvings: 3, tolerance: 1e-3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizationConfig {
    pub v_max_fraction: f64,
    pub max_iters: usize,
    pub conv_tol: f64,
    pub conv_window: usize,
    pub update: UpdateParams,
    pub lagrange: LagrangeParams,
    pub step: StepControl,
    /// Level-set value on designable nodes at iteration 1.
    pub initial_phi: f64,
    pub gradient: GradientMode,
    pub solver: SolverKind,
}

impl Default for OptimizationConfig {
    fn default() -> Self {
        Self {
            v_max_fraction: 0.21,
            max_iters: 300,
            conv_tol: 1e-4,
            conv_window: 5,
            update: UpdateParams::default(),
            lagrange: LagrangeParams::default(),
            step: StepControl::default(),
            initial_phi: -0.5,
            gradient: GradientMode::Exact,
            solver: SolverKind::Cholesky,
        }
    }
}

impl OptimizationConfig {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        let bad = |msg: String| Err(OptimizeError::Config(msg));
        if !(self.v_max_fraction > 0.0 && self.v_max_fraction < 1.0) {
            return bad(format!("v_max_fraction must lie in (0, 1), got {}", self.v_max_fraction));
        }
        if self.conv_window == 0 {
            return bad("conv_window must be at least 1".into());
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1".into());
        }
        if !(self.conv_tol > 0.0) {
            return bad(format!("conv_tol must be positive, got {}", self.conv_tol));
        }
        let l = &self.lagrange;
        if !(l.penalty > 0.0) || !(l.initial >= 0.0) || !(l.proportional >= 0.0) {
            return bad("lagrange.penalty must be positive, initial and proportional non-negative".into());
        }
        if !(self.step.tolerance >= 0.0) || self.step.max_halvings > 20 {
            return bad("step.tolerance must be non-negative and step.max_halvings at most 20".into());
        }
        if !(-1.0..=1.0).contains(&self.initial_phi) {
            return bad(format!("initial_phi must lie in [-1, 1], got {}", self.initial_phi));
        }
        self.update.validate().map_err(|e| OptimizeError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: f64,
    pub volume_fraction: f64,
    pub multiplier: f64,
    /// Halvings of the fictitious time step taken to reach this design.
    pub halvings: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub field: LevelSetField,
    pub records: Vec<IterationRecord>,
    pub converged: bool,
}

/// Smoothed volume derivative: each non-part element adds `A_e (1-d) H′(φ̄_e) / 3` to its nodes.
pub fn volume_gradient(field: &LevelSetField, model: &BuildModel, proc: &ProcessParams) -> Vec<f64> {
    let h = Heaviside::new_unchecked(proc.w_heaviside);
    let means = field.element_means(model);
    let mut g = vec![0.0; model.node_count()];
    for (e, tri) in model.elements().iter().enumerate() {
        if model.is_part(e) {
            continue;
        }
        let share = model.element_area(e) * h.interpolate_derivative(means[e], proc.d_void) / 3.0;
        for &n in tri {
            g[n] += share;
        }
    }
    for (v, part) in g.iter_mut().zip(model.part_node_flags()) {
        if part {
            *v = 0.0;
        }
    }
    g
}

/// Augmented-Lagrangian descent direction. Returns the direction and the updated multiplier.
///
/// The direction is `∇F / F + max(0, Λ' + κ (v - v_max)) ∇v`, scaled to unit maximum, where `Λ'`
/// is the updated multiplier and `κ` the proportional weight. Dividing by `F` makes `Λ` the price
/// of volume in relative objective, which drifts far less over a run than either gradient's
/// own scale.
pub fn constrained_direction(
    sens: &SensitivityField,
    field: &LevelSetField,
    model: &BuildModel,
    proc: &ProcessParams,
    config: &OptimizationConfig,
    multiplier: f64,
    objective: f64,
) -> (Vec<f64>, f64) {
    let fraction = levelset::volume(field, model).fraction;
    let next = (multiplier + config.lagrange.penalty * (fraction - config.v_max_fraction)).max(0.0);
    let weight = (next + config.lagrange.proportional * (fraction - config.v_max_fraction)).max(0.0);
    let designable: f64 =
        (0..model.element_count()).filter(|&e| !model.is_part(e)).map(|e| model.element_area(e)).sum();
    let g = volume_gradient(field, model, proc);
    let scale = if objective > 0.0 { objective } else { 1.0 };
    let raw: Vec<f64> = sens.values.iter().zip(&g).map(|(a, b)| a / scale + weight * b / designable).collect();
    let direction = levelset::normalize_max(&raw);
    (direction, next)
}

fn change_ratio(prev: f64, cur: f64) -> f64 {
    if prev == 0.0 {
        if cur == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        ((cur - prev) / prev).abs()
    }
}

pub fn run_optimization(
    model: &BuildModel,
    mat: &MaterialProps,
    proc: &ProcessParams,
    config: &OptimizationConfig,
) -> Result<OptimizationResult, OptimizeError> {
    run_optimization_with(model, mat, proc, config, |_, _, _| {})
}

/// Runs the loop, calling `observer` with every record, its design and its sensitivity.
pub fn run_optimization_with<F>(
    model: &BuildModel,
    mat: &MaterialProps,
    proc: &ProcessParams,
    config: &OptimizationConfig,
    mut observer: F,
) -> Result<OptimizationResult, OptimizeError>
where
    F: FnMut(&IterationRecord, &LevelSetField, Option<&SensitivityField>),
{
    config.validate()?;
    if !model.has_part() {
        return Err(OptimizeError::Config("part mask is empty".into()));
    }
    let opts = EvalOptions { solver: config.solver, mode: config.gradient };
    let mut field = LevelSetField::initial(model, config.initial_phi);
    let part_nodes = model.part_node_flags();
    let designable = part_nodes.iter().any(|p| !p);
    if !designable {
        let ev = adjoint::evaluate(model, &field, mat, proc, &opts, false)
            .map_err(|source| OptimizeError::Analysis { iter: 1, source })?;
        let record = IterationRecord {
            iter: 1,
            objective: ev.objective.total,
            volume_fraction: levelset::volume(&field, model).fraction,
            multiplier: config.lagrange.initial,
            halvings: 0,
            converged: true,
        };
        observer(&record, &field, None);
        return Ok(OptimizationResult { field, records: vec![record], converged: true });
    }
    // one updater per step length, built on first use
    let mut updaters: Vec<LevelSetUpdater> = Vec::new();
    let mut multiplier = config.lagrange.initial;
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut quiet = 0usize;
    let mut halvings = 0usize;
    let evaluate = |field: &LevelSetField, iter: usize| {
        let ev = adjoint::evaluate(model, field, mat, proc, &opts, true)
            .map_err(|source| OptimizeError::Analysis { iter, source })?;
        if ev.objective.total.is_finite() {
            Ok(ev)
        } else {
            Err(OptimizeError::NonFinite { iter })
        }
    };
    let mut ev = evaluate(&field, 1)?;
    for iter in 1..=config.max_iters {
        let objective = ev.objective.total;
        let fraction = levelset::volume(&field, model).fraction;
        if let Some(prev) = records.last() {
            if change_ratio(prev.objective, objective) < config.conv_tol {
                quiet += 1;
            } else {
                quiet = 0;
            }
        }
        let converged = quiet >= config.conv_window && fraction <= config.v_max_fraction + FEASIBILITY_SLACK;
        let record = IterationRecord { iter, objective, volume_fraction: fraction, multiplier, halvings, converged };
        info!("iter {iter:4}  F = {objective:.6e}  vol = {fraction:.4}  mult = {multiplier:.4}");
        observer(&record, &field, ev.sensitivity.as_ref());
        records.push(record);
        if converged || iter == config.max_iters {
            if !converged {
                warn!("no convergence within {} iterations", config.max_iters);
            }
            return Ok(OptimizationResult { field, records, converged });
        }
        let sens = ev.sensitivity.as_ref().expect("gradient requested");
        let (direction, next) = constrained_direction(sens, &field, model, proc, config, multiplier, objective);
        multiplier = next;
        let feasible = fraction <= config.v_max_fraction;
        for h in 0..=config.step.max_halvings {
            if updaters.len() <= h {
                let params = UpdateParams { ds: config.update.ds / f64::from(1u32 << h), ..config.update };
                let u = LevelSetUpdater::new(model, params, config.solver)
                    .map_err(|source| OptimizeError::Update { iter, source })?;
                updaters.push(u);
            }
            let trial = updaters[h].step(&field, &direction, model).map_err(|source| OptimizeError::Update { iter, source })?;
            let trial_ev = evaluate(&trial, iter + 1)?;
            let rise = trial_ev.objective.total > objective * (1.0 + config.step.tolerance);
            if !feasible || !rise || h == config.step.max_halvings {
                field = trial;
                ev = trial_ev;
                halvings = h;
                break;
            }
            info!("iter {iter:4}  F would rise to {:.6e}; halving the step", trial_ev.objective.total);
        }
    }
    unreachable!("the loop returns at max_iters")
}

/// Pillar layout of the conventional support structure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PillarLayout {
    pub spacing: f64,
    pub width: f64,
}

impl Default for PillarLayout {
    fn default() -> Self {
        Self { spacing: 2.0, width: 0.5 }
    }
}

#[derive(Debug, Clone)]
pub struct PillarBaseline {
    pub field: LevelSetField,
    pub pillars: usize,
    /// Element columns actually used after snapping to the mesh.
    pub spacing_columns: usize,
    pub width_columns: usize,
    pub warnings: Vec<String>,
}

/// Vertical pillars under every downward-facing part surface, reaching down to the plate or the
/// part below. Pillars sit at the left end of each overhang run and every `spacing` after it.
pub fn pillar_baseline(model: &BuildModel, spacing: f64, width: f64) -> Result<PillarBaseline, OptimizeError> {
    if !(width > 0.0 && spacing > width) {
        return Err(OptimizeError::Config(format!("pillars need spacing > width > 0, got {spacing} and {width}")));
    }
    let dx = model.dx();
    let mut warnings = Vec::new();
    let snap = |len: f64, what: &str, warnings: &mut Vec<String>| {
        let cols = (len / dx).round().max(1.0) as usize;
        if ((cols as f64) * dx - len).abs() > 1e-9 * len.max(1.0) {
            let msg = format!("pillar {what} {len} mm snapped to {cols} element columns ({} mm)", cols as f64 * dx);
            warn!("{msg}");
            warnings.push(msg);
        }
        cols
    };
    let wc = snap(width, "width", &mut warnings);
    let sc = snap(spacing, "spacing", &mut warnings).max(wc + 1);
    let nx = model.nx();
    let overhang = model.overhang_cells();
    let mut filled = vec![false; nx * model.ny()];
    let mut pillars = 0;
    // runs of horizontally adjacent overhang cells in the same row
    let mut k = 0;
    while k < overhang.len() {
        let (start, row) = overhang[k];
        let mut end = start;
        while k + 1 < overhang.len() && overhang[k + 1] == (end + 1, row) {
            k += 1;
            end += 1;
        }
        k += 1;
        let run = end - start + 1;
        for p in 0..=(run / sc) {
            let c0 = (start + p * sc).min((end + 1).saturating_sub(wc)).max(start);
            let mut placed = false;
            for c in c0..(c0 + wc).min(end + 1) {
                let mut j = row;
                while j > 0 && !model.cell_is_part(c, j - 1) {
                    j -= 1;
                    if !filled[j * nx + c] {
                        filled[j * nx + c] = true;
                        placed = true;
                    }
                }
            }
            if placed {
                pillars += 1;
            }
        }
    }
    let mut phi = vec![-1.0; model.node_count()];
    for j in 0..model.ny() {
        for i in 0..nx {
            if filled[j * nx + i] {
                for &n in model.elements()[model.element_at(i, j, 0)].iter().chain(&model.elements()[model.element_at(i, j, 1)]) {
                    phi[n] = 1.0;
                }
            }
        }
    }
    let mut field = LevelSetField { phi };
    field.enforce(model);
    Ok(PillarBaseline { field, pillars, spacing_columns: sc, width_columns: wc, warnings })
}

/// Pillar layout whose volume fraction is closest to `target`, preferring `preferred` when it is
/// already within `tolerance`.
pub fn matched_pillar_baseline(
    model: &BuildModel,
    preferred: PillarLayout,
    target: f64,
    tolerance: f64,
) -> Result<(PillarBaseline, PillarLayout, f64), OptimizeError> {
    let base = pillar_baseline(model, preferred.spacing, preferred.width)?;
    let v = levelset::volume(&base.field, model).fraction;
    if (v - target).abs() <= tolerance {
        return Ok((base, preferred, v));
    }
    let dx = model.dx();
    let mut best: Option<(PillarBaseline, PillarLayout, f64)> = None;
    for wc in 1..=8usize {
        for sc in (wc + 1)..=(model.nx().max(wc + 2)) {
            let layout = PillarLayout { spacing: sc as f64 * dx, width: wc as f64 * dx };
            let candidate = pillar_baseline(model, layout.spacing, layout.width)?;
            let cv = levelset::volume(&candidate.field, model).fraction;
            let better = best.as_ref().is_none_or(|b| (cv - target).abs() < (b.2 - target).abs() - 1e-12);
            if better {
                best = Some((candidate, layout, cv));
            }
        }
    }
    let mut best = best.expect("at least one layout evaluated");
    if (best.2 - target).abs() > tolerance {
        let msg = format!(
            "no pillar layout within {tolerance} of volume fraction {target:.4}; closest is {:.4}",
            best.2
        );
        warn!("{msg}");
        best.0.warnings.push(msg);
    }
    Ok(best)
}
