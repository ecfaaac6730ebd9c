//! Build chamber, structured triangle mesh, layer partition and part tags.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const DIM_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("part outside chamber: {0}")]
    PartOutsideChamber(String),
    #[error("stage {stage} out of range 1..={layers}")]
    StageOutOfRange { stage: usize, layers: usize },
    #[error("raster mask: {0}")]
    Raster(String),
}

/// Axis-aligned rectangle in chamber coordinates (mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub width: f64,
    pub height: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, width: f64, height: f64) -> Self {
        Self { x0, y0, width, height }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x0 + self.width && y >= self.y0 && y <= self.y0 + self.height
    }

    fn fits(&self, width: f64, height: f64) -> bool {
        self.width > 0.0
            && self.height > 0.0
            && self.x0 >= -DIM_TOL
            && self.y0 >= -DIM_TOL
            && self.x0 + self.width <= width + DIM_TOL
            && self.y0 + self.height <= height + DIM_TOL
    }
}

/// Occupancy grid read from a plain-text mask file. Row 0 is the top of the chamber.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterMask {
    pub rows: usize,
    pub cols: usize,
    pub cell_size: f64,
    pub cells: Vec<bool>,
}

impl RasterMask {
    pub fn empty(rows: usize, cols: usize, cell_size: f64) -> Self {
        Self { rows, cols, cell_size, cells: vec![false; rows * cols] }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.cells[row * self.cols + col] = value;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Parses `rows cols cell_size_mm` followed by `rows` lines of space separated 0/1.
    pub fn parse(text: &str) -> Result<Self, GeometryError> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| GeometryError::Raster("empty mask file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(GeometryError::Raster(format!("header must be `rows cols cell_size`, got `{header}`")));
        }
        let bad = |what: &str| GeometryError::Raster(format!("invalid {what} in header `{header}`"));
        let rows: usize = fields[0].parse().map_err(|_| bad("rows"))?;
        let cols: usize = fields[1].parse().map_err(|_| bad("cols"))?;
        let cell_size: f64 = fields[2].parse().map_err(|_| bad("cell size"))?;
        if rows == 0 || cols == 0 || !(cell_size > 0.0) {
            return Err(GeometryError::Raster("rows, cols and cell size must be positive".into()));
        }
        let mut cells = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let line = lines
                .next()
                .ok_or_else(|| GeometryError::Raster(format!("expected {rows} rows, found {r}")))?;
            let before = cells.len();
            for tok in line.split_whitespace() {
                match tok {
                    "0" => cells.push(false),
                    "1" => cells.push(true),
                    other => {
                        return Err(GeometryError::Raster(format!("row {r}: unexpected token `{other}`")));
                    }
                }
            }
            if cells.len() - before != cols {
                return Err(GeometryError::Raster(format!(
                    "row {r}: expected {cols} values, found {}",
                    cells.len() - before
                )));
            }
        }
        if lines.next().is_some() {
            return Err(GeometryError::Raster(format!("more than {rows} rows")));
        }
        Ok(Self { rows, cols, cell_size, cells })
    }

    pub fn read(path: &Path) -> Result<Self, GeometryError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GeometryError::Raster(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

impl fmt::Display for RasterMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} {} {}", self.rows, self.cols, self.cell_size)?;
        for r in 0..self.rows {
            let row: Vec<&str> = (0..self.cols).map(|c| if self.get(r, c) { "1" } else { "0" }).collect();
            writeln!(f, "{}", row.join(" "))?;
        }
        Ok(())
    }
}

/// Non-design part geometry placed in the chamber.
#[derive(Debug, Clone, PartialEq)]
pub enum PartGeometry {
    /// Vertical column standing on the plate with a horizontal arm cantilevered off its right side.
    OverhangBeam {
        column: Rect,
        arm: Rect,
    },
    /// Bridge-like half beam: two legs on the plate carrying a top flange, plus a diagonal brace
    /// from the left leg foot to the flange.
    MbbLike {
        legs: [Rect; 2],
        flange: Rect,
        brace_width: f64,
    },
    Raster(RasterMask),
}

impl PartGeometry {
    /// Overhang beam: column `[x0, x0+column_width] x [0, height]`, arm spanning from the column's
    /// right face for `arm_length` at heights `[arm_y0, arm_y0+arm_thickness]`.
    pub fn overhang_beam(
        column_x0: f64,
        column_width: f64,
        height: f64,
        arm_y0: f64,
        arm_thickness: f64,
        arm_length: f64,
    ) -> Self {
        PartGeometry::OverhangBeam {
            column: Rect::new(column_x0, 0.0, column_width, height),
            arm: Rect::new(column_x0 + column_width, arm_y0, arm_length, arm_thickness),
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            PartGeometry::OverhangBeam { column, arm } => column.contains(x, y) || arm.contains(x, y),
            PartGeometry::MbbLike { legs, flange, brace_width } => {
                if legs.iter().any(|l| l.contains(x, y)) || flange.contains(x, y) {
                    return true;
                }
                // brace centreline from the inner foot of the left leg to the flange underside
                let (ax, ay) = (legs[0].x0 + legs[0].width, 0.0);
                let (bx, by) = (flange.x0 + 0.5 * flange.width, flange.y0);
                let (dx, dy) = (bx - ax, by - ay);
                let len2 = dx * dx + dy * dy;
                if len2 == 0.0 {
                    return false;
                }
                let t = ((x - ax) * dx + (y - ay) * dy) / len2;
                if !(0.0..=1.0).contains(&t) {
                    return false;
                }
                let (px, py) = (ax + t * dx, ay + t * dy);
                ((x - px).powi(2) + (y - py).powi(2)).sqrt() <= 0.5 * brace_width
            }
            PartGeometry::Raster(mask) => {
                let col = (x / mask.cell_size).floor();
                let row_from_bottom = (y / mask.cell_size).floor();
                if col < 0.0 || row_from_bottom < 0.0 {
                    return false;
                }
                let (col, rfb) = (col as usize, row_from_bottom as usize);
                if col >= mask.cols || rfb >= mask.rows {
                    return false;
                }
                mask.get(mask.rows - 1 - rfb, col)
            }
        }
    }

    fn check_bounds(&self, model: &BuildModel) -> Result<(), GeometryError> {
        let (w, h) = (model.chamber_width, model.chamber_height);
        let outside = |what: &str, r: &Rect| {
            if r.fits(w, h) {
                Ok(())
            } else {
                Err(GeometryError::PartOutsideChamber(format!("{what} {r:?} not inside {w} x {h}")))
            }
        };
        match self {
            PartGeometry::OverhangBeam { column, arm } => {
                outside("column", column)?;
                outside("arm", arm)
            }
            PartGeometry::MbbLike { legs, flange, brace_width } => {
                outside("left leg", &legs[0])?;
                outside("right leg", &legs[1])?;
                outside("flange", flange)?;
                if !(*brace_width > 0.0) {
                    return Err(GeometryError::DimensionMismatch("brace width must be positive".into()));
                }
                Ok(())
            }
            PartGeometry::Raster(mask) => {
                let mw = mask.cols as f64 * mask.cell_size;
                let mh = mask.rows as f64 * mask.cell_size;
                if mw > w * (1.0 + DIM_TOL) || mh > h * (1.0 + DIM_TOL) {
                    return Err(GeometryError::PartOutsideChamber(format!(
                        "raster extent {mw} x {mh} exceeds chamber {w} x {h}"
                    )));
                }
                if (mh - h).abs() > DIM_TOL * h {
                    return Err(GeometryError::Raster(format!(
                        "raster height {mh} must equal chamber height {h} (row 0 is the chamber top)"
                    )));
                }
                for (cell, len) in [(model.dx(), "x"), (model.dy(), "y")] {
                    let ratio = mask.cell_size / cell;
                    if ratio < 1.0 - DIM_TOL || (ratio - ratio.round()).abs() > 1e-6 {
                        return Err(GeometryError::DimensionMismatch(format!(
                            "raster cell {} is not a multiple of the mesh spacing {cell} in {len}",
                            mask.cell_size
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}

/// Fixed design domain: structured mesh of linear triangles with layer and part tags.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildModel {
    chamber_width: f64,
    chamber_height: f64,
    nx: usize,
    ny: usize,
    layer_thickness: f64,
    layer_count: usize,
    nodes: Vec<[f64; 2]>,
    elements: Vec<[usize; 3]>,
    layer_of_element: Vec<usize>,
    part_mask: Vec<bool>,
    plate_nodes: Vec<usize>,
}

impl BuildModel {
    /// Structured grid of `nx` x `ny` cells, each split into two counter-clockwise right triangles.
    pub fn build_mesh(
        chamber_width: f64,
        chamber_height: f64,
        nx: usize,
        ny: usize,
        layer_thickness: f64,
    ) -> Result<Self, GeometryError> {
        if !(chamber_width > 0.0 && chamber_height > 0.0 && layer_thickness > 0.0) {
            return Err(GeometryError::DimensionMismatch(
                "chamber dimensions and layer thickness must be positive".into(),
            ));
        }
        if nx == 0 || ny == 0 {
            return Err(GeometryError::DimensionMismatch("nx and ny must be at least 1".into()));
        }
        let layers = chamber_height / layer_thickness;
        let layer_count = layers.round() as usize;
        if layer_count == 0 || (layers - layer_count as f64).abs() > 1e-9 * layers.max(1.0) {
            return Err(GeometryError::DimensionMismatch(format!(
                "chamber height {chamber_height} is not a multiple of layer thickness {layer_thickness}"
            )));
        }
        if ny % layer_count != 0 {
            return Err(GeometryError::DimensionMismatch(format!(
                "{ny} element rows do not align with {layer_count} layers"
            )));
        }
        let rows_per_layer = ny / layer_count;
        let dx = chamber_width / nx as f64;
        let dy = chamber_height / ny as f64;

        let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                nodes.push([i as f64 * dx, j as f64 * dy]);
            }
        }
        let mut elements = Vec::with_capacity(2 * nx * ny);
        let mut layer_of_element = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            let layer = j / rows_per_layer + 1;
            for i in 0..nx {
                let n00 = j * (nx + 1) + i;
                let n10 = n00 + 1;
                let n01 = n00 + nx + 1;
                let n11 = n01 + 1;
                elements.push([n00, n10, n11]);
                elements.push([n00, n11, n01]);
                layer_of_element.push(layer);
                layer_of_element.push(layer);
            }
        }
        let plate_nodes = (0..=nx).collect();
        Ok(Self {
            chamber_width,
            chamber_height,
            nx,
            ny,
            layer_thickness,
            layer_count,
            nodes,
            part_mask: vec![false; elements.len()],
            elements,
            layer_of_element,
            plate_nodes,
        })
    }

    /// Tags elements whose centroid lies inside `part`.
    pub fn apply_part_mask(mut self, part: &PartGeometry) -> Result<Self, GeometryError> {
        part.check_bounds(&self)?;
        let mask: Vec<bool> = (0..self.elements.len())
            .map(|e| {
                let [x, y] = self.centroid(e);
                part.contains(x, y)
            })
            .collect();
        self.part_mask = mask;
        Ok(self)
    }

    pub fn with_part_mask(mut self, mask: Vec<bool>) -> Result<Self, GeometryError> {
        if mask.len() != self.elements.len() {
            return Err(GeometryError::DimensionMismatch(format!(
                "part mask has {} entries for {} elements",
                mask.len(),
                self.elements.len()
            )));
        }
        self.part_mask = mask;
        Ok(self)
    }

    /// Elements of layers `1..=stage`.
    pub fn active_elements(&self, stage: usize) -> Result<Vec<usize>, GeometryError> {
        self.check_stage(stage)?;
        Ok((0..self.elements.len()).filter(|&e| self.layer_of_element[e] <= stage).collect())
    }

    pub fn check_stage(&self, stage: usize) -> Result<(), GeometryError> {
        if stage == 0 || stage > self.layer_count {
            return Err(GeometryError::StageOutOfRange { stage, layers: self.layer_count });
        }
        Ok(())
    }

    pub fn chamber_width(&self) -> f64 {
        self.chamber_width
    }

    pub fn chamber_height(&self) -> f64 {
        self.chamber_height
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn dx(&self) -> f64 {
        self.chamber_width / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        self.chamber_height / self.ny as f64
    }

    pub fn layer_thickness(&self) -> f64 {
        self.layer_thickness
    }

    pub fn layer_count(&self) -> usize {
        self.layer_count
    }

    pub fn rows_per_layer(&self) -> usize {
        self.ny / self.layer_count
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn elements(&self) -> &[[usize; 3]] {
        &self.elements
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    pub fn layer_of_element(&self, e: usize) -> usize {
        self.layer_of_element[e]
    }

    pub fn layers(&self) -> &[usize] {
        &self.layer_of_element
    }

    pub fn is_part(&self, e: usize) -> bool {
        self.part_mask[e]
    }

    pub fn part_mask(&self) -> &[bool] {
        &self.part_mask
    }

    pub fn plate_nodes(&self) -> &[usize] {
        &self.plate_nodes
    }

    /// Node flags for the fixed-temperature build plate.
    pub fn plate_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.nodes.len()];
        for &n in &self.plate_nodes {
            flags[n] = true;
        }
        flags
    }

    pub fn centroid(&self, e: usize) -> [f64; 2] {
        let [a, b, c] = self.elements[e];
        let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        [(pa[0] + pb[0] + pc[0]) / 3.0, (pa[1] + pb[1] + pc[1]) / 3.0]
    }

    /// Signed area; positive for counter-clockwise ordering.
    pub fn element_area(&self, e: usize) -> f64 {
        let [a, b, c] = self.elements[e];
        let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        0.5 * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]))
    }

    /// Nodes touching at least one part element.
    pub fn part_node_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.nodes.len()];
        for (e, tri) in self.elements.iter().enumerate() {
            if self.part_mask[e] {
                for &n in tri {
                    flags[n] = true;
                }
            }
        }
        flags
    }

    /// Nodes touching a part element of layer `layer`.
    pub fn part_nodes_in_layer(&self, layer: usize) -> Vec<usize> {
        let mut flags = vec![false; self.nodes.len()];
        for (e, tri) in self.elements.iter().enumerate() {
            if self.part_mask[e] && self.layer_of_element[e] == layer {
                for &n in tri {
                    flags[n] = true;
                }
            }
        }
        flags.iter().enumerate().filter_map(|(n, &f)| f.then_some(n)).collect()
    }

    pub fn has_part(&self) -> bool {
        self.part_mask.iter().any(|&p| p)
    }

    /// Area of the chamber outside the part.
    pub fn design_area(&self) -> f64 {
        (0..self.elements.len()).filter(|&e| !self.part_mask[e]).map(|e| self.element_area(e)).sum()
    }

    /// Element index for cell column `i`, row `j` and half `k` (0 lower-right, 1 upper-left).
    pub fn element_at(&self, i: usize, j: usize, k: usize) -> usize {
        2 * (j * self.nx + i) + k
    }

    /// A cell counts as part when either of its triangles does.
    pub fn cell_is_part(&self, i: usize, j: usize) -> bool {
        self.part_mask[self.element_at(i, j, 0)] || self.part_mask[self.element_at(i, j, 1)]
    }

    /// Part cells with a non-part cell directly below (downward-facing part surfaces).
    pub fn overhang_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for j in 1..self.ny {
            for i in 0..self.nx {
                if self.cell_is_part(i, j) && !self.cell_is_part(i, j - 1) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Per cell: part cell with at least one non-part cell somewhere below it in its column.
    pub fn unsupported_cells(&self) -> Vec<bool> {
        let mut out = vec![false; self.nx * self.ny];
        for i in 0..self.nx {
            let mut gap_below = false;
            for j in 0..self.ny {
                if self.cell_is_part(i, j) {
                    out[j * self.nx + i] = gap_below;
                } else {
                    gap_below = true;
                }
            }
        }
        out
    }

    /// Layers holding unsupported part cells, ascending.
    pub fn overhang_layers(&self) -> Vec<usize> {
        let unsupported = self.unsupported_cells();
        let rows = self.rows_per_layer();
        let mut layers: Vec<usize> = (0..self.ny)
            .filter(|&j| (0..self.nx).any(|i| unsupported[j * self.nx + i]))
            .map(|j| j / rows + 1)
            .collect();
        layers.dedup();
        layers
    }

    /// Non-part elements lying below an overhang cell in the same column, down to the next part
    /// cell or the plate.
    pub fn shadow_elements(&self) -> Vec<bool> {
        let mut out = vec![false; self.elements.len()];
        for (i, j) in self.overhang_cells() {
            let mut jj = j;
            while jj > 0 && !self.cell_is_part(i, jj - 1) {
                jj -= 1;
                out[self.element_at(i, jj, 0)] = true;
                out[self.element_at(i, jj, 1)] = true;
            }
        }
        out
    }
}
