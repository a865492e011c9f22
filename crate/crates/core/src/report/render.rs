use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pathfeat::GradientMap;
use crate::treelab::{TreeModel, TreeNode};

fn node_label(n: &TreeNode) -> String {
    let head = match &n.split {
        Some(s) => format!("{} <= {:.6}", s.feature, s.threshold),
        None => "leaf".to_string(),
    };
    format!(
        "{head} | samples {} | value [{}, {}] | gini {:.4} | class {}",
        n.sample_count,
        n.class_histogram[0],
        n.class_histogram[1],
        n.impurity,
        n.majority_class()
    )
}

/// Indented text diagram; the first child of each split is the `<=` branch.
pub fn render_tree_text(model: &TreeModel) -> String {
    fn walk(model: &TreeModel, id: usize, prefix: &str, branch: &str, out: &mut String) {
        let n = &model.nodes[id];
        let _ = writeln!(out, "{prefix}{branch}[{id}] {}", node_label(n));
        if let (Some(l), Some(r)) = (n.left, n.right) {
            let child_prefix = match branch {
                "" => String::new(),
                "|-- " => format!("{prefix}|   "),
                _ => format!("{prefix}    "),
            };
            walk(model, l, &child_prefix, "|-- ", out);
            walk(model, r, &child_prefix, "`-- ", out);
        }
    }
    let mut out = String::new();
    walk(model, 0, "", "", &mut out);
    out
}

/// Graphviz description of the tree.
pub fn render_tree_dot(model: &TreeModel) -> String {
    let mut s = String::from("digraph tree {\n  node [shape=box, fontname=\"Helvetica\"];\n");
    for n in &model.nodes {
        let mut label = match &n.split {
            Some(sp) => format!("{} <= {:.6}\\n", sp.feature.replace('"', "\\\""), sp.threshold),
            None => String::new(),
        };
        let _ = write!(
            label,
            "samples = {}\\nvalue = [{}, {}]\\ngini = {:.4}\\nclass = {}",
            n.sample_count,
            n.class_histogram[0],
            n.class_histogram[1],
            n.impurity,
            n.majority_class()
        );
        let _ = writeln!(s, "  n{} [label=\"{label}\"];", n.id);
    }
    for n in &model.nodes {
        if let (Some(l), Some(r)) = (n.left, n.right) {
            let _ = writeln!(s, "  n{} -> n{l} [label=\"true\"];", n.id);
            let _ = writeln!(s, "  n{} -> n{r} [label=\"false\"];", n.id);
        }
    }
    s.push_str("}\n");
    s
}

/// Text diagram and graph description of a fitted tree.
pub fn render_tree(model: &TreeModel) -> (String, String) {
    (render_tree_text(model), render_tree_dot(model))
}

/// Class-averaged gradient energy on a common grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub node_label: String,
    pub class_label: u8,
    pub width: usize,
    pub height: usize,
    pub map_count: usize,
    /// Row-major, sums to 1.
    pub values: Vec<f64>,
}

/// Bilinear resampling of an energy map (pixel centres aligned), renormalized.
pub fn resample_energy(map: &GradientMap, width: usize, height: usize) -> Vec<f64> {
    if (map.width, map.height) == (width, height) {
        return map.energy.clone();
    }
    let sx = map.width as f64 / width as f64;
    let sy = map.height as f64 / height as f64;
    let at = |x: isize, y: isize| {
        let x = x.clamp(0, map.width as isize - 1) as usize;
        let y = y.clamp(0, map.height as isize - 1) as usize;
        map.energy[y * map.width + x]
    };
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        let fy = (y as f64 + 0.5) * sy - 0.5;
        let (y0, ty) = (fy.floor(), fy - fy.floor());
        for x in 0..width {
            let fx = (x as f64 + 0.5) * sx - 0.5;
            let (x0, tx) = (fx.floor(), fx - fx.floor());
            let (x0, y0) = (x0 as isize, y0 as isize);
            let top = at(x0, y0) * (1.0 - tx) + at(x0 + 1, y0) * tx;
            let bottom = at(x0, y0 + 1) * (1.0 - tx) + at(x0 + 1, y0 + 1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    let total: f64 = out.iter().sum();
    if total > 0.0 {
        out.iter_mut().for_each(|v| *v /= total);
    } else {
        let u = 1.0 / out.len() as f64;
        out.iter_mut().for_each(|v| *v = u);
    }
    out
}

/// Mean of the maps after resampling each to `grid`.
pub fn average_gradient_surface(maps: &[GradientMap], class_label: u8, grid: (usize, usize)) -> Result<Surface> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Data(format!("no gradient maps for class {class_label}")))?;
    if let Some(other) = maps.iter().find(|m| m.node_label != first.node_label) {
        return Err(Error::Data(format!(
            "mixed node labels `{}` and `{}`",
            first.node_label, other.node_label
        )));
    }
    let (w, h) = grid;
    if w == 0 || h == 0 {
        return Err(Error::Parameter("surface grid must be non-empty".into()));
    }
    let mut values = vec![0.0; w * h];
    for m in maps {
        for (acc, v) in values.iter_mut().zip(resample_energy(m, w, h)) {
            *acc += v;
        }
    }
    let n = maps.len() as f64;
    values.iter_mut().for_each(|v| *v /= n);
    Ok(Surface {
        node_label: first.node_label.clone(),
        class_label,
        width: w,
        height: h,
        map_count: maps.len(),
        values,
    })
}

impl Surface {
    /// One CSV line per grid row.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in self.values.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }

    /// Heatmap with values scaled by `vmax` (shared across classes for comparison).
    pub fn save_heatmap(&self, path: &Path, vmax: f64) -> Result<()> {
        let mut img = image::RgbImage::new(self.width as u32, self.height as u32);
        for (i, p) in img.pixels_mut().enumerate() {
            let t = if vmax > 0.0 {
                (self.values[i] / vmax).clamp(0.0, 1.0)
            } else {
                0.0
            };
            *p = image::Rgb(colormap(t));
        }
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Dark blue through green to yellow.
fn colormap(t: f64) -> [u8; 3] {
    const STOPS: [(f64, [f64; 3]); 4] = [
        (0.0, [68.0, 1.0, 84.0]),
        (0.33, [49.0, 104.0, 142.0]),
        (0.66, [53.0, 183.0, 121.0]),
        (1.0, [253.0, 231.0, 37.0]),
    ];
    let k = STOPS.iter().position(|(s, _)| t <= *s).unwrap_or(3).max(1);
    let (s0, c0) = STOPS[k - 1];
    let (s1, c1) = STOPS[k];
    let f = ((t - s0) / (s1 - s0)).clamp(0.0, 1.0);
    let mix = |i: usize| (c0[i] + (c1[i] - c0[i]) * f).round() as u8;
    [mix(0), mix(1), mix(2)]
}
