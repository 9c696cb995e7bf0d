//! Loss and error surfaces on the plane through three adapted parameter sets.
//!
//! With `u = w1 - w0` and `v` the part of `w2 - w0` orthogonal to `u`, a
//! point `(x, y)` of the plane is `w0 + x·û + y·v̂`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapt::{average_parameters, bundle_from_embeddings, classify_embeddings, tta_loss};
use crate::autodiff::Tensor;
use crate::data::ImageBatch;
use crate::error::{Result, WattError};
use crate::io::{atomic_write, atomic_write_json};
use crate::model::{ClipModel, ParameterSet};
use crate::ops::argmax_rows;

const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct LandscapePlane {
    /// The anchor; also fixes parameter names and shapes.
    w0: ParameterSet,
    w0_flat: Vec<f64>,
    u_hat: Vec<f64>,
    v_hat: Vec<f64>,
    /// Coordinates of `w1` and `w2` in the `(û, v̂)` frame.
    pub w1_coords: (f64, f64),
    pub w2_coords: (f64, f64),
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Orthonormal frame of the plane through `w0`, `w1`, `w2`.
pub fn build_plane(w0: &ParameterSet, w1: &ParameterSet, w2: &ParameterSet) -> Result<LandscapePlane> {
    w0.check_congruent(w1)?;
    w0.check_congruent(w2)?;
    let f0 = w0.flatten();
    let u = sub(&w1.flatten(), &f0);
    let d2 = sub(&w2.flatten(), &f0);
    let uu = dot(&u, &u);
    let nu = uu.sqrt();
    if nu < DEGENERATE_NORM {
        return Err(WattError::Degenerate(format!(
            "‖w1 - w0‖ = {nu:e} is below {DEGENERATE_NORM:e}"
        )));
    }
    let c = dot(&d2, &u) / uu;
    let v: Vec<f64> = d2.iter().zip(&u).map(|(d, ui)| d - c * ui).collect();
    let nv = dot(&v, &v).sqrt();
    if nv < DEGENERATE_NORM {
        return Err(WattError::Degenerate(format!(
            "w2 is collinear with w0 and w1 (orthogonal residual {nv:e})"
        )));
    }
    let u_hat: Vec<f64> = u.iter().map(|x| x / nu).collect();
    let v_hat: Vec<f64> = v.iter().map(|x| x / nv).collect();
    let w2_coords = (dot(&d2, &u_hat), dot(&d2, &v_hat));
    Ok(LandscapePlane {
        w0: w0.clone(),
        w0_flat: f0,
        u_hat,
        v_hat,
        w1_coords: (nu, 0.0),
        w2_coords,
    })
}

impl LandscapePlane {
    pub fn u_hat(&self) -> &[f64] {
        &self.u_hat
    }

    pub fn v_hat(&self) -> &[f64] {
        &self.v_hat
    }

    /// `w0 + x·û + y·v̂`; a zero offset leaves the anchor coordinate untouched.
    pub fn point(&self, x: f64, y: f64) -> Result<ParameterSet> {
        let flat: Vec<f64> = self
            .w0_flat
            .iter()
            .zip(self.u_hat.iter().zip(&self.v_hat))
            .map(|(&w, (&u, &v))| {
                let off = x * u + y * v;
                if off == 0.0 {
                    w
                } else {
                    w + off
                }
            })
            .collect();
        self.w0.with_flat(&flat)
    }

    /// Coordinates of `w` projected onto the plane.
    pub fn coords(&self, w: &ParameterSet) -> Result<(f64, f64)> {
        self.w0.check_congruent(w)?;
        let d = sub(&w.flatten(), &self.w0_flat);
        Ok((dot(&d, &self.u_hat), dot(&d, &self.v_hat)))
    }

    /// Centroid of the three generating points.
    pub fn centroid(&self) -> (f64, f64) {
        (
            (self.w1_coords.0 + self.w2_coords.0) / 3.0,
            (self.w1_coords.1 + self.w2_coords.1) / 3.0,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    /// Points per axis before the marked coordinates are merged in.
    pub resolution: usize,
    /// Extra room around the triangle's bounding box, as a fraction of its extent.
    pub margin: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            resolution: 41,
            margin: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub x: f64,
    pub y: f64,
    pub loss: f64,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkedPoint {
    pub name: String,
    pub x: f64,
    pub y: f64,
    pub loss: f64,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeGrid {
    pub spec: GridSpec,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Row-major over `ys`, then `xs`.
    pub cells: Vec<GridCell>,
    /// `w0`, `w1`, `w2` and `mean`, all of which are also grid cells.
    pub marked: Vec<MarkedPoint>,
}

impl LandscapeGrid {
    pub fn cell(&self, x: f64, y: f64) -> Option<&GridCell> {
        self.cells.iter().find(|c| c.x == x && c.y == y)
    }
}

/// Transductive loss (pseudo-labels from the evaluated model itself) and
/// error rate of `model` on a labeled batch, against `class_emb`.
pub fn loss_and_error(
    model: &ClipModel,
    images: &ImageBatch,
    labels: &[usize],
    class_emb: &Tensor,
) -> Result<(f64, f64)> {
    if labels.len() != images.len() {
        return Err(WattError::invalid("one label per image is required"));
    }
    let zv = model.encode_image(images)?;
    let bundle = bundle_from_embeddings(&zv, class_emb, model.tau())?;
    let pred = argmax_rows(&classify_embeddings(&zv, class_emb, model.tau())?)?;
    let wrong = pred.iter().zip(labels).filter(|(p, l)| p != l).count();
    Ok((tta_loss(&bundle), wrong as f64 / labels.len() as f64))
}

fn axis(lo: f64, hi: f64, n: usize, marks: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = if n < 2 {
        vec![lo]
    } else {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    };
    v.extend_from_slice(marks);
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Evaluates the model with its visual LN parameters replaced by every grid
/// point. The axes are uniform over the margin-padded bounding box of the
/// triangle, with the coordinates of the three vertices and their centroid
/// merged in so those points are exact grid cells.
pub fn evaluate_grid(
    plane: &LandscapePlane,
    spec: &GridSpec,
    model: &ClipModel,
    images: &ImageBatch,
    labels: &[usize],
    class_emb: &Tensor,
) -> Result<LandscapeGrid> {
    if spec.resolution == 0 || spec.margin.is_nan() || spec.margin < 0.0 {
        return Err(WattError::invalid("grid needs resolution >= 1 and margin >= 0"));
    }
    let (x1, y1) = plane.w1_coords;
    let (x2, y2) = plane.w2_coords;
    let (cx, cy) = plane.centroid();
    let (xmin, xmax) = (0f64.min(x1).min(x2), 0f64.max(x1).max(x2));
    let (ymin, ymax) = (0f64.min(y1).min(y2), 0f64.max(y1).max(y2));
    let (dx, dy) = ((xmax - xmin) * spec.margin, (ymax - ymin) * spec.margin);
    let xs = axis(xmin - dx, xmax + dx, spec.resolution, &[0.0, x1, x2, cx]);
    let ys = axis(ymin - dy, ymax + dy, spec.resolution, &[0.0, y1, y2, cy]);
    let points: Vec<(f64, f64)> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();
    let cells = points
        .par_iter()
        .map(|&(x, y)| {
            let m = model.with_parameters(&plane.point(x, y)?)?;
            let (loss, error) = loss_and_error(&m, images, labels, class_emb)?;
            Ok(GridCell { x, y, loss, error })
        })
        .collect::<Result<Vec<_>>>()?;
    let grid_at = |name: &str, x: f64, y: f64| -> MarkedPoint {
        let c = cells
            .iter()
            .find(|c| c.x == x && c.y == y)
            .expect("marked coordinates are on the grid");
        MarkedPoint {
            name: name.into(),
            x,
            y,
            loss: c.loss,
            error: c.error,
        }
    };
    let marked = vec![
        grid_at("w0", 0.0, 0.0),
        grid_at("w1", x1, y1),
        grid_at("w2", x2, y2),
        grid_at("mean", cx, cy),
    ];
    Ok(LandscapeGrid {
        spec: spec.clone(),
        xs,
        ys,
        cells,
        marked,
    })
}

#[derive(Serialize)]
struct Sidecar<'a> {
    library_version: &'a str,
    spec: &'a GridSpec,
    w1_coords: (f64, f64),
    w2_coords: (f64, f64),
    /// Projection of the actual parameter average, next to the centroid.
    mean_coords: (f64, f64),
    mean_projection: (f64, f64),
    marked: &'a [MarkedPoint],
    config: &'a serde_json::Value,
}

/// Writes `x,y,loss,error` rows and a JSON sidecar with the marked points.
pub fn write_landscape(
    grid: &LandscapeGrid,
    plane: &LandscapePlane,
    mean: &ParameterSet,
    csv_path: &Path,
    json_path: &Path,
    config: &serde_json::Value,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = crate::eval::csv_err;
    w.write_record(["x", "y", "loss", "error"]).map_err(err)?;
    for c in &grid.cells {
        w.write_record([
            c.x.to_string(),
            c.y.to_string(),
            c.loss.to_string(),
            c.error.to_string(),
        ])
        .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| WattError::invalid(e.to_string()))?;
    atomic_write(csv_path, &bytes)?;
    atomic_write_json(
        json_path,
        &Sidecar {
            library_version: crate::VERSION,
            spec: &grid.spec,
            w1_coords: plane.w1_coords,
            w2_coords: plane.w2_coords,
            mean_coords: plane.centroid(),
            mean_projection: plane.coords(mean)?,
            marked: &grid.marked,
            config,
        },
    )
}

/// The mean of the three generating parameter sets.
pub fn plane_mean(w0: &ParameterSet, w1: &ParameterSet, w2: &ParameterSet) -> Result<ParameterSet> {
    average_parameters(&[w0.clone(), w1.clone(), w2.clone()])
}
