//! Filter inspection: nearest tokens per filter and centered partial
//! dependence of the class probabilities on each pooled filter response.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Class;
use crate::error::{Error, Result};
use crate::features::{offset_slot, slot_offset, TokenCube, TIME_STEPS};
use crate::model::ConvLstmModel;

pub const DEFAULT_GRID_POINTS: usize = 41;
pub const DEFAULT_TOP_TOKENS: usize = 3;

/// Ranked tokens for one filter, most similar first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterSimilarity {
    pub filter: usize,
    pub tokens: Vec<(String, f64)>,
}

fn check_vocabulary(model: &ConvLstmModel, tokens: &[String]) -> Result<()> {
    if tokens.len() != model.embeddings.value.nrows() {
        return Err(Error::Dimension(format!(
            "{} tokens for {} embedding rows",
            tokens.len(),
            model.embeddings.value.nrows()
        )));
    }
    Ok(())
}

/// The `m` tokens whose embeddings have the largest cosine with filter `k`.
/// Ties are broken by token.
pub fn nearest_tokens(model: &ConvLstmModel, tokens: &[String], k: usize, m: usize) -> Result<Vec<(String, f64)>> {
    check_vocabulary(model, tokens)?;
    if k >= model.n_filters() {
        return Err(Error::Validation(format!(
            "filter {k} out of range for {} filters",
            model.n_filters()
        )));
    }
    let scores = model.embeddings.value.dot(&model.filters.value.row(k));
    let mut ranked: Vec<(&str, f64)> = tokens.iter().map(String::as_str).zip(scores.iter().copied()).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(ranked
        .into_iter()
        .take(m)
        .map(|(t, c)| (t.to_string(), c.clamp(-1.0, 1.0)))
        .collect())
}

pub fn similarity_tables(model: &ConvLstmModel, tokens: &[String], m: usize) -> Result<Vec<FilterSimilarity>> {
    (0..model.n_filters())
        .map(|k| {
            Ok(FilterSimilarity {
                filter: k,
                tokens: nearest_tokens(model, tokens, k, m)?,
            })
        })
        .collect()
}

/// `points` evenly spaced values from -1 to 1 inclusive.
pub fn pdp_grid(points: usize) -> Result<Vec<f64>> {
    if points < 2 {
        return Err(Error::Config(format!("PDP grid needs at least 2 points, got {points}")));
    }
    let step = 2.0 / (points - 1) as f64;
    Ok((0..points)
        .map(|i| if i + 1 == points { 1.0 } else { -1.0 + i as f64 * step })
        .collect())
}

/// Centered partial dependence of one class probability on one pooled
/// feature, averaged over `samples` proceedings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdpCurve {
    /// Time offset of the slot, -5 (oldest) to -1 (most recent).
    pub t: i32,
    pub filter: usize,
    pub class: Class,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub samples: usize,
}

impl PdpCurve {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Class probabilities with feature `(slot, k)` replaced by `values` for
/// every sample.
pub fn predict_with_override(
    model: &ConvLstmModel,
    steps: &[Array2<f64>],
    slot: usize,
    k: usize,
    values: &[f64],
) -> Result<Array2<f64>> {
    check_feature(model, steps, slot, k)?;
    if values.len() != steps[slot].nrows() {
        return Err(Error::Dimension(format!(
            "{} override values for {} samples",
            values.len(),
            steps[slot].nrows()
        )));
    }
    let mut steps = steps.to_vec();
    for (x, v) in steps[slot].column_mut(k).iter_mut().zip(values) {
        *x = *v;
    }
    model.head(&steps)
}

fn check_feature(model: &ConvLstmModel, steps: &[Array2<f64>], slot: usize, k: usize) -> Result<()> {
    if slot >= TIME_STEPS || k >= model.n_filters() {
        return Err(Error::Validation(format!(
            "feature (slot {slot}, filter {k}) out of range for {TIME_STEPS} slots and {} filters",
            model.n_filters()
        )));
    }
    if steps.len() != TIME_STEPS || steps[0].nrows() == 0 {
        return Err(Error::Validation("PDP needs at least one pooled sample".into()));
    }
    Ok(())
}

/// Curves for all three classes of feature `(slot, k)`, from pooled steps.
pub fn pdp_feature(
    model: &ConvLstmModel,
    steps: &[Array2<f64>],
    slot: usize,
    k: usize,
    grid: &[f64],
) -> Result<[PdpCurve; 3]> {
    check_feature(model, steps, slot, k)?;
    if grid.is_empty() {
        return Err(Error::Config("PDP grid is empty".into()));
    }
    let m = steps[0].nrows();
    // probs[g] is the m x 3 probability matrix with the feature set to grid[g].
    let probs: Vec<Array2<f64>> = grid
        .iter()
        .map(|&z| predict_with_override(model, steps, slot, k, &vec![z; m]))
        .collect::<Result<_>>()?;
    let g = grid.len() as f64;
    Ok(std::array::from_fn(|j| {
        let mut values = vec![0.0; grid.len()];
        for i in 0..m {
            let centre = probs.iter().map(|p| p[[i, j]]).sum::<f64>() / g;
            for (v, p) in values.iter_mut().zip(&probs) {
                *v += p[[i, j]] - centre;
            }
        }
        values.iter_mut().for_each(|v| *v /= m as f64);
        PdpCurve {
            t: slot_offset(slot),
            filter: k,
            class: Class::from_index(j),
            grid: grid.to_vec(),
            values,
            samples: m,
        }
    }))
}

/// Centered partial dependence of `class` on the pooled response of filter
/// `k` at time offset `t` over the given proceedings.
pub fn pdp(
    model: &ConvLstmModel,
    cubes: &[TokenCube],
    t: i32,
    k: usize,
    class: Class,
    grid: &[f64],
) -> Result<PdpCurve> {
    let slot = offset_slot(t).ok_or_else(|| Error::Validation(format!("time offset {t} outside -5..=-1")))?;
    let refs: Vec<&TokenCube> = cubes.iter().collect();
    let pooled = model.pool(&refs)?;
    let [a, b, c] = pdp_feature(model, &pooled.steps, slot, k, grid)?;
    Ok([a, b, c].into_iter().nth(class.index()).expect("three classes"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdpReport {
    pub similarity: Vec<FilterSimilarity>,
    /// Ordered by slot, filter and class.
    pub curves: Vec<PdpCurve>,
}

/// Similarity tables and every (slot, filter, class) curve.
pub fn pdp_report(
    model: &ConvLstmModel,
    tokens: &[String],
    cubes: &[TokenCube],
    grid: &[f64],
    top: usize,
) -> Result<PdpReport> {
    let similarity = similarity_tables(model, tokens, top)?;
    let refs: Vec<&TokenCube> = cubes.iter().collect();
    let pooled = model.pool(&refs)?;
    let features: Vec<(usize, usize)> = (0..TIME_STEPS)
        .flat_map(|t| (0..model.n_filters()).map(move |k| (t, k)))
        .collect();
    let curves: Vec<[PdpCurve; 3]> = features
        .par_iter()
        .map(|&(t, k)| pdp_feature(model, &pooled.steps, t, k, grid))
        .collect::<Result<_>>()?;
    Ok(PdpReport {
        similarity,
        curves: curves.into_iter().flatten().collect(),
    })
}

const CLASS_COLOURS: [&str; 3] = ["#1b9e77", "#d95f02", "#7570b3"];

impl PdpReport {
    pub fn similarity_csv(&self) -> String {
        let mut out = String::from("filter,rank,token,cosine\n");
        for table in &self.similarity {
            for (rank, (token, cos)) in table.tokens.iter().enumerate() {
                let _ = writeln!(out, "{},{},{},{}", table.filter, rank + 1, token, cos);
            }
        }
        out
    }

    pub fn pdp_csv(&self) -> String {
        let mut out = String::from("t,k,class,z,value\n");
        for c in &self.curves {
            for (z, v) in c.grid.iter().zip(&c.values) {
                let _ = writeln!(out, "{},{},{},{},{}", c.t, c.filter, c.class.label(), z, v);
            }
        }
        out
    }

    /// Line chart of the three class curves of one feature.
    pub fn svg(&self, t: i32, k: usize) -> Option<String> {
        let curves: Vec<&PdpCurve> = self.curves.iter().filter(|c| c.t == t && c.filter == k).collect();
        if curves.is_empty() {
            return None;
        }
        let (w, h, left, right, top, bottom) = (480.0, 320.0, 60.0, 110.0, 30.0, 40.0);
        let (pw, ph) = (w - left - right, h - top - bottom);
        let mut lo = curves
            .iter()
            .flat_map(|c| c.values.iter().copied())
            .fold(f64::INFINITY, f64::min);
        let mut hi = curves
            .iter()
            .flat_map(|c| c.values.iter().copied())
            .fold(f64::NEG_INFINITY, f64::max);
        if hi - lo < 1e-9 {
            lo -= 0.01;
            hi += 0.01;
        }
        let x = |z: f64| left + (z + 1.0) / 2.0 * pw;
        let y = |v: f64| top + (hi - v) / (hi - lo) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="18" text-anchor="middle" font-size="13">t = {t}, filter {k}</text>"#,
            left + pw / 2.0
        );
        let _ = writeln!(
            s,
            r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for z in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{z}</text>"#,
                x(z),
                top + ph + 15.0
            );
        }
        for v in [lo, (lo + hi) / 2.0, hi] {
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.3}</text>"#,
                left - 5.0,
                y(v) + 4.0
            );
        }
        if lo < 0.0 && hi > 0.0 {
            let _ = writeln!(
                s,
                r##"<line x1="{left}" y1="{0:.2}" x2="{1}" y2="{0:.2}" stroke="#999" stroke-dasharray="4 3"/>"##,
                y(0.0),
                left + pw
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">pooled response z</text>"#,
            left + pw / 2.0,
            h - 5.0
        );
        for (i, c) in curves.iter().enumerate() {
            let colour = CLASS_COLOURS[c.class.index()];
            let points: Vec<String> = c
                .grid
                .iter()
                .zip(&c.values)
                .map(|(z, v)| format!("{:.2},{:.2}", x(*z), y(*v)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#,
                points.join(" ")
            );
            let ly = top + 15.0 + 18.0 * i as f64;
            let lx = left + pw + 10.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/>"#,
                lx + 20.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}">class {}</text>"#,
                lx + 25.0,
                ly + 4.0,
                c.class.label()
            );
        }
        s.push_str("</svg>\n");
        Some(s)
    }

    /// Writes `similarity_tables.csv`, `pdp.csv` and one `pdp_<t>_<k>.svg`
    /// per feature into `dir`, returning the file names written.
    pub fn write(&self, dir: &Path) -> Result<Vec<String>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("create {}", dir.display()), e))?;
        let mut files = vec![
            ("similarity_tables.csv".to_string(), self.similarity_csv()),
            ("pdp.csv".to_string(), self.pdp_csv()),
        ];
        let mut features: Vec<(i32, usize)> = self.curves.iter().map(|c| (c.t, c.filter)).collect();
        features.dedup();
        for (t, k) in features {
            if let Some(svg) = self.svg(t, k) {
                files.push((format!("pdp_{t}_{k}.svg"), svg));
            }
        }
        for (name, body) in &files {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(format!("write {}", path.display()), e))?;
        }
        Ok(files.into_iter().map(|(n, _)| n).collect())
    }
}

/// How many of the given runs place each token among some filter's top
/// tokens. Sorted by count, then token.
pub fn token_recurrence(runs: &[Vec<FilterSimilarity>]) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for run in runs {
        let mut seen: Vec<&str> = run
            .iter()
            .flat_map(|f| f.tokens.iter().map(|(t, _)| t.as_str()))
            .collect();
        seen.sort_unstable();
        seen.dedup();
        for t in seen {
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut out: Vec<(String, usize)> = counts.into_iter().map(|(t, c)| (t.to_string(), c)).collect();
    out.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}
