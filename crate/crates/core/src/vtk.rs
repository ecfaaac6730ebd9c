//! Legacy ASCII VTK 2.0 unstructured-grid output.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use crate::geometry::BuildModel;

/// Triangle cell type in the legacy format.
const VTK_TRIANGLE: u8 = 5;

/// One mesh with any number of named point and cell scalars.
pub struct VtkWriter<'a> {
    model: &'a BuildModel,
    title: String,
    point_data: Vec<(String, Vec<f64>)>,
    cell_data: Vec<(String, Vec<f64>)>,
}

impl<'a> VtkWriter<'a> {
    pub fn new(model: &'a BuildModel, title: &str) -> Self {
        // the title line must be a single line of at most 256 characters
        let title: String = title.lines().next().unwrap_or("").chars().take(255).collect();
        Self { model, title, point_data: Vec::new(), cell_data: Vec::new() }
    }

    pub fn point_scalars(mut self, name: &str, values: &[f64]) -> Self {
        assert_eq!(values.len(), self.model.node_count(), "point data `{name}` has wrong length");
        self.point_data.push((name.to_string(), values.to_vec()));
        self
    }

    pub fn cell_scalars(mut self, name: &str, values: &[f64]) -> Self {
        assert_eq!(values.len(), self.model.element_count(), "cell data `{name}` has wrong length");
        self.cell_data.push((name.to_string(), values.to_vec()));
        self
    }

    /// Adds the cell fields every output carries: layer index and part flag.
    pub fn with_mesh_tags(self) -> Self {
        let layer: Vec<f64> = self.model.layers().iter().map(|&l| l as f64).collect();
        let part: Vec<f64> = self.model.part_mask().iter().map(|&p| f64::from(u8::from(p))).collect();
        self.cell_scalars("layer", &layer).cell_scalars("part", &part)
    }

    pub fn render(&self) -> String {
        let m = self.model;
        let mut s = String::new();
        let _ = writeln!(s, "# vtk DataFile Version 2.0\n{}\nASCII\nDATASET UNSTRUCTURED_GRID", self.title);
        let _ = writeln!(s, "POINTS {} double", m.node_count());
        for p in m.nodes() {
            let _ = writeln!(s, "{} {} 0", p[0], p[1]);
        }
        let ne = m.element_count();
        let _ = writeln!(s, "CELLS {ne} {}", 4 * ne);
        for t in m.elements() {
            let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
        }
        let _ = writeln!(s, "CELL_TYPES {ne}");
        for _ in 0..ne {
            let _ = writeln!(s, "{VTK_TRIANGLE}");
        }
        write_block(&mut s, "CELL_DATA", ne, &self.cell_data);
        write_block(&mut s, "POINT_DATA", m.node_count(), &self.point_data);
        s
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, self.render())
    }
}

fn write_block(s: &mut String, header: &str, n: usize, fields: &[(String, Vec<f64>)]) {
    if fields.is_empty() {
        return;
    }
    let _ = writeln!(s, "{header} {n}");
    for (name, values) in fields {
        let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
        for v in values {
            let _ = writeln!(s, "{v:e}");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_counts() {
        let model = BuildModel::build_mesh(2.0, 1.0, 2, 2, 0.5).unwrap();
        let t: Vec<f64> = (0..model.node_count()).map(|n| n as f64).collect();
        let text = VtkWriter::new(&model, "test\nsecond line").point_scalars("T", &t).with_mesh_tags().render();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# vtk DataFile Version 2.0");
        assert_eq!(lines[1], "test");
        assert!(text.contains("POINTS 9 double"));
        assert!(text.contains("CELLS 8 32"));
        assert!(text.contains("CELL_DATA 8\nSCALARS layer double 1"));
        assert!(text.contains("POINT_DATA 9\nSCALARS T double 1\nLOOKUP_TABLE default\n0e0\n1e0"));
        assert_eq!(lines.iter().filter(|l| **l == "5").count(), 8);
    }

    #[test]
    #[should_panic(expected = "wrong length")]
    fn length_checked() {
        let model = BuildModel::build_mesh(1.0, 1.0, 1, 2, 0.5).unwrap();
        let _ = VtkWriter::new(&model, "x").point_scalars("T", &[0.0]);
    }
}
