//! Level-set design representation, smoothed material interpolation and the
//! reaction-diffusion update.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fem::{self, DirichletSystem, FemError, SolverKind};
use crate::geometry::BuildModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LevelSetError {
    #[error("heaviside width must be positive, got {0}")]
    InvalidWidth(f64),
    #[error("invalid update parameter {field}: {value}")]
    InvalidParam { field: &'static str, value: f64 },
    #[error("field has {got} values for {expected} nodes")]
    Length { got: usize, expected: usize },
    #[error("update system: {0}")]
    Solver(#[from] FemError),
}

/// Quintic smoothed Heaviside with transition half-width `w`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Heaviside {
    w: f64,
}

impl Heaviside {
    pub fn new(w: f64) -> Result<Self, LevelSetError> {
        if w > 0.0 && w.is_finite() {
            Ok(Self { w })
        } else {
            Err(LevelSetError::InvalidWidth(w))
        }
    }

    /// Caller guarantees `w > 0` (validated process parameters).
    pub(crate) fn new_unchecked(w: f64) -> Self {
        debug_assert!(w > 0.0);
        Self { w }
    }

    pub fn width(&self) -> f64 {
        self.w
    }

    pub fn value(&self, phi: f64) -> f64 {
        if phi > self.w {
            1.0
        } else if phi < -self.w {
            0.0
        } else {
            let x = phi / self.w;
            let x2 = x * x;
            0.5 + x * (15.0 / 16.0 - x2 * (5.0 / 8.0 - 3.0 / 16.0 * x2))
        }
    }

    /// `dH/dφ = 15/(16w) (1 - x²)²` inside the band, zero outside.
    pub fn derivative(&self, phi: f64) -> f64 {
        if phi.abs() > self.w {
            0.0
        } else {
            let x = phi / self.w;
            let s = 1.0 - x * x;
            15.0 / 16.0 * s * s / self.w
        }
    }

    /// Material factor `(1-d) H(φ) + d`.
    pub fn interpolate(&self, phi: f64, d: f64) -> f64 {
        (1.0 - d) * self.value(phi) + d
    }

    pub fn interpolate_derivative(&self, phi: f64, d: f64) -> f64 {
        (1.0 - d) * self.derivative(phi)
    }
}

pub fn heaviside(phi: f64, w: f64) -> Result<f64, LevelSetError> {
    Ok(Heaviside::new(w)?.value(phi))
}

/// Extended property `{(1-d) H(φ; w) + d} bulk`; used for both density and conductivity.
pub fn extended_property(phi: f64, w: f64, d: f64, bulk: f64) -> Result<f64, LevelSetError> {
    Ok(Heaviside::new(w)?.interpolate(phi, d) * bulk)
}

pub fn extended_density(phi: f64, w: f64, d: f64, rho: f64) -> Result<f64, LevelSetError> {
    extended_property(phi, w, d, rho)
}

pub fn extended_conductivity(phi: f64, w: f64, d: f64, k: f64) -> Result<f64, LevelSetError> {
    extended_property(phi, w, d, k)
}

/// Sharp material indicator: 1 for `φ >= 0`.
pub fn characteristic(phi: f64) -> u8 {
    u8::from(phi >= 0.0)
}

/// Nodal level-set values over the whole chamber.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetField {
    pub phi: Vec<f64>,
}

impl LevelSetField {
    /// `value` on designable nodes and +1 on nodes touching the part.
    pub fn initial(model: &BuildModel, value: f64) -> Self {
        let mut field = Self { phi: vec![value.clamp(-1.0, 1.0); model.node_count()] };
        field.enforce(model);
        field
    }

    pub fn from_values(model: &BuildModel, phi: Vec<f64>) -> Result<Self, LevelSetError> {
        if phi.len() != model.node_count() {
            return Err(LevelSetError::Length { got: phi.len(), expected: model.node_count() });
        }
        Ok(Self { phi })
    }

    /// Clamps to `[-1, 1]` and pins part nodes at +1.
    pub fn enforce(&mut self, model: &BuildModel) {
        for v in &mut self.phi {
            *v = v.clamp(-1.0, 1.0);
        }
        for (e, tri) in model.elements().iter().enumerate() {
            if model.is_part(e) {
                for &n in tri {
                    self.phi[n] = 1.0;
                }
            }
        }
    }

    pub fn element_means(&self, model: &BuildModel) -> Vec<f64> {
        model.elements().iter().map(|tri| tri.iter().map(|&n| self.phi[n]).sum::<f64>() / 3.0).collect()
    }

    /// Sharp indicator per element from the nodal mean.
    pub fn element_chi(&self, model: &BuildModel) -> Vec<u8> {
        self.element_means(model).into_iter().map(characteristic).collect()
    }
}

/// Material area in the designable region and its share of that region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Volume {
    pub area: f64,
    pub fraction: f64,
}

pub fn volume(field: &LevelSetField, model: &BuildModel) -> Volume {
    let means = field.element_means(model);
    let mut area = 0.0;
    let mut total = 0.0;
    for (e, &mean) in means.iter().enumerate() {
        if model.is_part(e) {
            continue;
        }
        let a = model.element_area(e);
        total += a;
        area += a * f64::from(characteristic(mean));
    }
    let fraction = if total > 0.0 { area / total } else { 0.0 };
    Volume { area, fraction }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpdateParams {
    /// Regularization strength, in squared model length units.
    pub tau: f64,
    /// Step coefficient.
    pub d_coef: f64,
    /// Fictitious time step.
    pub ds: f64,
}

impl Default for UpdateParams {
    fn default() -> Self {
        Self { tau: 1e-4, d_coef: 0.8, ds: 0.1 }
    }
}

impl UpdateParams {
    pub fn validate(&self) -> Result<(), LevelSetError> {
        for (field, value) in [("tau", self.tau), ("d_coef", self.d_coef), ("ds", self.ds)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(LevelSetError::InvalidParam { field, value });
            }
        }
        Ok(())
    }
}

/// Factored reaction-diffusion update `(M/Δs + Y) Φ⁺ = M (Φ/Δs + D F′)` for a fixed mesh.
///
/// `Y = D τ ∫ ∇Nᵀ∇N` in model units (mm), so `τ` carries mm².
/// Zero-flux conditions hold on the whole chamber boundary.
pub struct LevelSetUpdater {
    params: UpdateParams,
    mass: fem::CsrMatrix,
    system: DirichletSystem,
}

impl LevelSetUpdater {
    pub fn new(model: &BuildModel, params: UpdateParams, solver: SolverKind) -> Result<Self, LevelSetError> {
        params.validate()?;
        let ones = vec![1.0; model.element_count()];
        let mass = fem::assemble_mass(model, &ones);
        let diffusion = params.d_coef * params.tau;
        let lap = fem::assemble_stiffness(model, &vec![diffusion; model.element_count()])?;
        let a = mass.linear_combination(1.0 / params.ds, &lap, 1.0);
        let system =
            DirichletSystem::new(a, &vec![false; model.node_count()], solver).map_err(FemError::from)?;
        Ok(Self { params, mass, system })
    }

    pub fn params(&self) -> &UpdateParams {
        &self.params
    }

    /// Advances `field` along `-direction` (so `F′ = -direction`), then clamps and pins the part.
    pub fn step(
        &self,
        field: &LevelSetField,
        direction: &[f64],
        model: &BuildModel,
    ) -> Result<LevelSetField, LevelSetError> {
        if direction.len() != field.phi.len() {
            return Err(LevelSetError::Length { got: direction.len(), expected: field.phi.len() });
        }
        let p = &self.params;
        let source: Vec<f64> =
            field.phi.iter().zip(direction).map(|(phi, g)| phi / p.ds - p.d_coef * g).collect();
        let rhs = self.mass.mul_vec(&source);
        let phi = self.system.solve_homogeneous(&rhs).map_err(FemError::from)?;
        let mut next = LevelSetField { phi };
        next.enforce(model);
        Ok(next)
    }
}

/// Scales `values` by their largest magnitude; all-zero input stays zero.
pub fn normalize_max(values: &[f64]) -> Vec<f64> {
    let max = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if max > 1e-300 {
        values.iter().map(|v| v / max).collect()
    } else {
        vec![0.0; values.len()]
    }
}

/// One update driven by a raw sensitivity, normalized by its largest magnitude.
pub fn update(
    field: &LevelSetField,
    sens: &[f64],
    params: UpdateParams,
    model: &BuildModel,
) -> Result<LevelSetField, LevelSetError> {
    let updater = LevelSetUpdater::new(model, params, SolverKind::Cholesky)?;
    updater.step(field, &normalize_max(sens), model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{PartGeometry, Rect};
    use proptest::prelude::*;

    #[test]
    fn heaviside_values() {
        assert_eq!(heaviside(0.0, 0.9).unwrap(), 0.5);
        assert_eq!(heaviside(0.9, 0.9).unwrap(), 1.0);
        assert_eq!(heaviside(-0.9, 0.9).unwrap(), 0.0);
        assert_eq!(heaviside(0.45, 0.9).unwrap(), 0.896484375);
        assert!(heaviside(0.1, 0.0).is_err());
        assert!(heaviside(0.1, -1.0).is_err());
    }

    #[test]
    fn heaviside_flat_at_band_edges() {
        let h = Heaviside::new(0.9).unwrap();
        for edge in [0.9f64, -0.9] {
            let x = edge - edge.signum() * 1e-6;
            let fd = (h.value(x + 1e-9) - h.value(x - 1e-9)) / 2e-9;
            assert!(fd.abs() < 1e-6, "slope {fd} near {edge}");
            assert!(h.derivative(x) < 1e-9);
        }
        // analytic derivative against central differences inside the band
        for i in -8..=8 {
            let x = i as f64 * 0.1;
            let fd = (h.value(x + 1e-6) - h.value(x - 1e-6)) / 2e-6;
            assert!((fd - h.derivative(x)).abs() < 1e-7);
        }
    }

    #[test]
    fn extended_property_values() {
        let rho = 2.67e-6;
        assert_eq!(extended_density(1.0, 0.9, 1e-3, rho).unwrap(), rho);
        assert!((extended_density(-1.0, 0.9, 1e-3, rho).unwrap() - 1e-3 * rho).abs() < 1e-24);
        assert!((extended_conductivity(0.0, 0.9, 1e-3, 1.0).unwrap() - 0.5 * (1.0 + 1e-3)).abs() < 1e-15);
    }

    #[test]
    fn characteristic_values() {
        assert_eq!(characteristic(0.0), 1);
        assert_eq!(characteristic(-0.3), 0);
        assert_eq!(characteristic(1.0), 1);
    }

    proptest! {
        #[test]
        fn heaviside_monotone_bounded(a in -2.0f64..2.0, b in -2.0f64..2.0, w in 0.05f64..1.0) {
            let h = Heaviside::new(w).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(h.value(lo) <= h.value(hi) + 1e-15);
            prop_assert!((0.0..=1.0).contains(&h.value(a)));
        }

        #[test]
        fn extended_bounds(phi in -1.0f64..1.0, d in 1e-6f64..0.5) {
            let v = extended_property(phi, 0.9, d, 3.0).unwrap();
            prop_assert!(v >= d * 3.0 - 1e-15 && v <= 3.0 + 1e-15);
        }

        #[test]
        fn sharp_and_smooth_agree(phi in -1.0f64..1.0) {
            prop_assume!(phi.abs() > 1e-12);
            let h = Heaviside::new(0.9).unwrap();
            prop_assert_eq!(characteristic(phi) == 1, h.value(phi) > 0.5);
        }
    }

    fn small_model() -> BuildModel {
        BuildModel::build_mesh(2.0, 2.0, 4, 4, 0.5)
            .unwrap()
            .apply_part_mask(&PartGeometry::OverhangBeam {
                column: Rect::new(0.0, 1.5, 1.0, 0.5),
                arm: Rect::new(1.0, 1.5, 1.0, 0.5),
            })
            .unwrap()
    }

    #[test]
    fn volume_fractions() {
        let model = small_model();
        assert_eq!(volume(&LevelSetField::initial(&model, 1.0), &model).fraction, 1.0);
        // triangles touching the part keep a positive nodal mean
        let empty = volume(&LevelSetField::initial(&model, -1.0), &model).fraction;
        assert!(empty > 0.0 && empty < 0.25);
        let bare = BuildModel::build_mesh(2.0, 2.0, 4, 4, 0.5).unwrap();
        assert_eq!(volume(&LevelSetField::initial(&bare, -1.0), &bare).fraction, 0.0);
    }

    #[test]
    fn volume_half() {
        // bottom two of four rows full, everything above void; part empty
        let model = BuildModel::build_mesh(2.0, 2.0, 4, 4, 0.5).unwrap();
        let phi = model.nodes().iter().map(|p| if p[1] <= 1.0 { 1.0 } else { -1.0 }).collect();
        let field = LevelSetField::from_values(&model, phi).unwrap();
        // the row straddling y = 1 has means 1/3 and -1/3: one triangle each way
        let v = volume(&field, &model);
        let expected = (2.0 + 0.5) / 4.0;
        assert!((v.fraction - expected).abs() < 1e-12, "{}", v.fraction);
    }

    #[test]
    fn update_keeps_uniform_field() {
        let model = small_model();
        let updater = LevelSetUpdater::new(&model, UpdateParams::default(), SolverKind::Cholesky).unwrap();
        for value in [-1.0, -0.3, 0.5, 1.0] {
            let mut field = LevelSetField { phi: vec![value; model.node_count()] };
            field.enforce(&model);
            let uniform = LevelSetField { phi: vec![value; model.node_count()] };
            let next = updater.step(&uniform, &vec![0.0; model.node_count()], &model).unwrap();
            for (a, b) in next.phi.iter().zip(&field.phi) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn negative_sensitivity_grows_material() {
        let model = BuildModel::build_mesh(1.0, 1.0, 2, 2, 0.5).unwrap();
        let field = LevelSetField::initial(&model, -0.5);
        let next = update(&field, &vec![-1.0; model.node_count()], UpdateParams::default(), &model).unwrap();
        let mean = |f: &LevelSetField| f.phi.iter().sum::<f64>() / f.phi.len() as f64;
        assert!(mean(&next) > mean(&field));
        assert!(next.phi.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn update_preserves_part_and_range() {
        let model = small_model();
        let field = LevelSetField::initial(&model, 0.2);
        let sens: Vec<f64> = (0..model.node_count()).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let next = update(&field, &sens, UpdateParams { tau: 1e-4, d_coef: 5.0, ds: 1.0 }, &model).unwrap();
        let part = model.part_node_flags();
        for (n, v) in next.phi.iter().enumerate() {
            assert!(v.abs() <= 1.0);
            if part[n] {
                assert_eq!(*v, 1.0);
            }
        }
    }

    #[test]
    fn invalid_update_params() {
        let p = UpdateParams { tau: 0.0, ..UpdateParams::default() };
        assert!(matches!(p.validate(), Err(LevelSetError::InvalidParam { field: "tau", .. })));
    }
}
