use supportopt::adjoint::{evaluate, EvalOptions, GradientMode};
use supportopt::geometry::{BuildModel, PartGeometry};
use supportopt::levelset::LevelSetField;
use supportopt::materials::{MaterialProps, ProcessParams};

fn toy() -> (BuildModel, LevelSetField) {
    let model = BuildModel::build_mesh(4.0, 3.0, 8, 12, 0.5)
        .unwrap()
        .apply_part_mask(&PartGeometry::overhang_beam(0.5, 1.0, 3.0, 2.0, 0.5, 2.0))
        .unwrap();
    let phi = model
        .nodes()
        .iter()
        .map(|p| 0.6 * (1.3 * p[0] + 0.7).sin() * (0.9 * p[1] + 0.2).cos())
        .collect();
    let mut field = LevelSetField { phi };
    field.enforce(&model);
    (model, field)
}

fn objective(model: &BuildModel, field: &LevelSetField) -> f64 {
    evaluate(model, field, &MaterialProps::default(), &ProcessParams::default(), &EvalOptions::default(), false)
        .unwrap()
        .objective
        .total
}

fn fd_errors(mode: GradientMode) -> Vec<(usize, f64, f64)> {
    let (model, field) = toy();
    let opts = EvalOptions { mode, ..EvalOptions::default() };
    let ev = evaluate(&model, &field, &MaterialProps::default(), &ProcessParams::default(), &opts, true).unwrap();
    let grad = ev.sensitivity.unwrap().values;
    let part = model.part_node_flags();
    let h = 1e-4;
    (0..model.node_count())
        .filter(|&n| !part[n] && grad[n] != 0.0)
        .step_by(3)
        .take(24)
        .map(|n| {
            let mut plus = field.clone();
            plus.phi[n] += h;
            let mut minus = field.clone();
            minus.phi[n] -= h;
            let fd = (objective(&model, &plus) - objective(&model, &minus)) / (2.0 * h);
            (n, grad[n], fd)
        })
        .collect()
}

#[test]
fn exact_gradient_matches_central_differences() {
    let rows = fd_errors(GradientMode::Exact);
    assert!(rows.len() >= 20);
    for (n, adj, fd) in rows {
        let rel = (adj - fd).abs() / fd.abs().max(1e-12);
        println!("node {n:3}  adjoint {adj:+.6e}  fd {fd:+.6e}  rel {rel:.2e}");
        assert!(rel <= 1e-3, "node {n}: adjoint {adj} vs fd {fd}");
    }
}

#[test]
fn reduced_gradient_mismatch_report() {
    for (n, adj, fd) in fd_errors(GradientMode::Reduced) {
        println!("node {n:3}  reduced {adj:+.6e}  fd {fd:+.6e}  sign ok {}", adj.signum() == fd.signum());
    }
}
