//! Run orchestration for the three modes and everything they write to disk.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;

use crate::adjoint::{self, EvalOptions, SensitivityField};
use crate::config::RunConfig;
use crate::geometry::BuildModel;
use crate::levelset::{self, LevelSetField};
use crate::optimizer::{self, IterationRecord, OptimizationResult, PillarLayout};
use crate::process::{self, SimOptions, StageHistory};
use crate::vtk::VtkWriter;
use crate::Error;

/// Nodes of the laser irradiation domain of `layer`: built material (part or support) in that
/// layer, powder excluded.
pub fn laser_domain_nodes(model: &BuildModel, field: &LevelSetField, layer: usize) -> Vec<usize> {
    let chi = field.element_chi(model);
    let mut flags = vec![false; model.node_count()];
    for (e, tri) in model.elements().iter().enumerate() {
        if model.layer_of_element(e) == layer && (model.is_part(e) || chi[e] == 1) {
            for &n in tri {
                flags[n] = true;
            }
        }
    }
    flags.iter().enumerate().filter(|(_, f)| **f).map(|(n, _)| n).collect()
}

/// `max - min` of `t` over `nodes`; zero for an empty set.
pub fn spread(t: &[f64], nodes: &[usize]) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    let (lo, hi) = nodes.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &n| (lo.min(t[n]), hi.max(t[n])));
    hi - lo
}

/// Largest laser-layer temperature difference at cooling step `j` over the given stages.
pub fn max_laser_spread(model: &BuildModel, field: &LevelSetField, histories: &[StageHistory], j: usize) -> f64 {
    histories
        .iter()
        .map(|h| spread(h.at(j), &laser_domain_nodes(model, field, h.stage)))
        .fold(0.0, f64::max)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io(format!("{}: {e}", path.display()))
}

fn prepare_dir(config: &RunConfig) -> Result<PathBuf, Error> {
    let dir = config.output.directory.clone();
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let path = dir.join("effective_config.toml");
    fs::write(&path, config.to_toml()).map_err(io_err(&path))?;
    Ok(dir)
}

fn design_writer<'a>(model: &'a BuildModel, field: &LevelSetField, title: &str) -> VtkWriter<'a> {
    let chi: Vec<f64> = field.element_chi(model).into_iter().map(f64::from).collect();
    VtkWriter::new(model, title).point_scalars("phi", &field.phi).cell_scalars("chi", &chi).with_mesh_tags()
}

fn write_vtk(writer: VtkWriter<'_>, path: &Path) -> Result<(), Error> {
    writer.write(path).map_err(io_err(path))
}

#[derive(Debug, Clone)]
pub struct SimulationOutcome {
    pub histories: Vec<StageHistory>,
    pub composite: Vec<f64>,
    pub objective: f64,
    pub files: Vec<PathBuf>,
}

/// Forward build of `field` (part alone when `None`), with VTK series, composite field and the
/// per-layer temperature spread table.
pub fn simulate(config: &RunConfig, field: Option<&LevelSetField>) -> Result<SimulationOutcome, Error> {
    let model = config.build_model()?;
    let dir = prepare_dir(config)?;
    let field = field.cloned().unwrap_or_else(|| LevelSetField::initial(&model, -1.0));
    let opts = SimOptions { solver: config.optimization.solver, cooling_steps: None };
    let histories = process::run_build_with(&model, &field, &config.materials, &config.process, &opts)?;
    let objective = adjoint::objective(&histories, &model, &config.process)?.total;
    let mut files = Vec::new();
    let every = config.output.vtk_every;
    let m = model.layer_count();
    for h in &histories {
        if !(h.stage == m || (every > 0 && h.stage % every == 0)) {
            continue;
        }
        for j in 0..=h.t_cool.len() {
            let path = dir.join(format!("stage{:02}_step{:02}.vtk", h.stage, j));
            let title = format!("stage {} cooling step {j}", h.stage);
            write_vtk(design_writer(&model, &field, &title).point_scalars("T", h.at(j)), &path)?;
            files.push(path);
        }
    }
    let j = config.output.composite_step;
    let composite = process::layerwise_cooldown_field(&histories, &model, j, config.output.composite_mode)
        .map_err(|e| Error::Io(format!("composite field: {e}")))?;
    let path = dir.join(format!("composite_step{j:02}.vtk"));
    write_vtk(design_writer(&model, &field, "layerwise composite").point_scalars("T", &composite), &path)?;
    files.push(path);

    let path = dir.join("layer_spread.csv");
    let mut out = String::from("layer,part_nodes,spread\n");
    for layer in 1..=m {
        let nodes = model.part_nodes_in_layer(layer);
        out.push_str(&format!("{layer},{},{:e}\n", nodes.len(), spread(&composite, &nodes)));
    }
    fs::write(&path, out).map_err(io_err(&path))?;
    files.push(path);

    if config.output.dump_matrices {
        let ops = process::StageOperators::new(
            &model,
            &field,
            &config.materials,
            &config.process,
            m,
            config.optimization.solver,
        )
        .map_err(|source| process::ProcessError::Stage { stage: m, source })?;
        for (name, mat) in [("C", &ops.c), ("K", &ops.k)] {
            let path = dir.join(format!("stage{m:02}_{name}.txt"));
            fs::write(&path, mat.to_coordinate_text()).map_err(io_err(&path))?;
            files.push(path);
        }
    }
    info!("simulated {m} stages, F = {objective:.6e}");
    Ok(SimulationOutcome { histories, composite, objective, files })
}

/// Optimization with CSV log and design snapshots.
pub fn optimize(config: &RunConfig) -> Result<OptimizationResult, Error> {
    let model = config.build_model()?;
    let dir = prepare_dir(config)?;
    let log_path = dir.join("convergence.csv");
    let mut log = BufWriter::new(File::create(&log_path).map_err(io_err(&log_path))?);
    writeln!(log, "iter,F,volume_fraction,multiplier,step_halvings").map_err(io_err(&log_path))?;
    let every = config.output.vtk_every;
    let mut io_failure: Option<Error> = None;
    let observer = |rec: &IterationRecord, field: &LevelSetField, sens: Option<&SensitivityField>| {
        if io_failure.is_some() {
            return;
        }
        let mut step = || -> Result<(), Error> {
            writeln!(log, "{},{:e},{:e},{:e},{}", rec.iter, rec.objective, rec.volume_fraction, rec.multiplier, rec.halvings)
                .and_then(|_| log.flush())
                .map_err(io_err(&log_path))?;
            if every > 0 && (rec.iter == 1 || rec.iter % every == 0) {
                let path = dir.join(format!("design_iter{:04}.vtk", rec.iter));
                let mut w = design_writer(&model, field, &format!("design at iteration {}", rec.iter));
                if let (true, Some(s)) = (config.output.dump_sensitivity, sens) {
                    w = w.point_scalars("dFdPhi", &s.values);
                }
                write_vtk(w, &path)?;
            }
            Ok(())
        };
        if let Err(e) = step() {
            io_failure = Some(e);
        }
    };
    let result = optimizer::run_optimization_with(
        &model,
        &config.materials,
        &config.process,
        &config.optimization,
        observer,
    )?;
    if let Some(e) = io_failure {
        return Err(e);
    }
    let path = dir.join("design_final.vtk");
    write_vtk(design_writer(&model, &result.field, "final design"), &path)?;
    let last = result.records.last().expect("at least one iteration");
    info!(
        "optimization {} after {} iterations: F = {:.6e}, volume fraction = {:.4}",
        if result.converged { "converged" } else { "stopped" },
        last.iter,
        last.objective,
        last.volume_fraction
    );
    Ok(result)
}

/// Objective and laser-layer spread of one design.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignScore {
    pub objective: f64,
    pub volume_fraction: f64,
    pub max_laser_spread: f64,
}

pub fn score_design(config: &RunConfig, model: &BuildModel, field: &LevelSetField) -> Result<DesignScore, Error> {
    let opts = EvalOptions { solver: config.optimization.solver, mode: config.optimization.gradient };
    let objective = adjoint::evaluate(model, field, &config.materials, &config.process, &opts, false)?.objective.total;
    let j = config.output.composite_step;
    let sim = SimOptions { solver: config.optimization.solver, cooling_steps: Some(j) };
    let stages = model.overhang_layers();
    let histories = process::run_stages(model, field, &config.materials, &config.process, &stages, &sim)?;
    Ok(DesignScore {
        objective,
        volume_fraction: levelset::volume(field, model).fraction,
        max_laser_spread: max_laser_spread(model, field, &histories, j),
    })
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub optimized: DesignScore,
    pub baseline: DesignScore,
    pub layout: PillarLayout,
    pub pillars: usize,
    pub result: OptimizationResult,
    pub baseline_field: LevelSetField,
    pub report: String,
}

/// Optimizes, builds the pillar baseline at matched volume and scores both designs.
pub fn compare(config: &RunConfig) -> Result<Comparison, Error> {
    let result = optimize(config)?;
    compare_with(config, result)
}

/// Comparison against an already optimized design.
pub fn compare_with(config: &RunConfig, result: OptimizationResult) -> Result<Comparison, Error> {
    let model = config.build_model()?;
    let dir = prepare_dir(config)?;
    let optimized = score_design(config, &model, &result.field)?;
    let (base, layout, _) = optimizer::matched_pillar_baseline(
        &model,
        config.baseline.layout(),
        optimized.volume_fraction,
        config.baseline.volume_tolerance,
    )?;
    let baseline = score_design(config, &model, &base.field)?;
    let path = dir.join("baseline.vtk");
    write_vtk(design_writer(&model, &base.field, "pillar baseline"), &path)?;

    let j = config.output.composite_step;
    let mut report = String::new();
    report.push_str("design comparison\n");
    report.push_str(&format!(
        "overhang stages: {:?}\ncooling step for spreads: {j}\n\n",
        model.overhang_layers()
    ));
    report.push_str(&format!("{:<12}{:>16}{:>16}{:>20}\n", "design", "F", "volume", "max laser spread"));
    for (name, s) in [("optimized", &optimized), ("pillars", &baseline)] {
        report.push_str(&format!(
            "{:<12}{:>16.6e}{:>16.4}{:>20.4}\n",
            name, s.objective, s.volume_fraction, s.max_laser_spread
        ));
    }
    report.push_str(&format!(
        "\npillar layout: {} pillars, spacing {} mm, width {} mm\n",
        base.pillars, layout.spacing, layout.width
    ));
    for w in &base.warnings {
        report.push_str(&format!("warning: {w}\n"));
    }
    report.push_str(&format!(
        "optimization: {} after {} iterations\n",
        if result.converged { "converged" } else { "not converged" },
        result.records.len()
    ));
    report.push_str(&format!(
        "objective ratio optimized / pillars: {:.4}\n",
        optimized.objective / baseline.objective
    ));
    let path = dir.join("report.txt");
    fs::write(&path, &report).map_err(io_err(&path))?;
    Ok(Comparison {
        optimized,
        baseline,
        layout,
        pillars: base.pillars,
        result,
        baseline_field: base.field,
        report,
    })
}
