//! Principal-component projection of flows and plot output (CSV, SVG).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{Block, FlowKey};
use crate::flow::Flow;
use crate::geometry::{centered, dot, norm};

/// Above this dimension the covariance is never formed; an iterative
/// subspace solver works on the data matrix instead.
pub const DENSE_LIMIT: usize = 512;
pub const ITERATIVE_TOL: f64 = 1e-10;
const MAX_ITERATIONS: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProjectError {
    #[error("need at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("cannot take {k} components in dimension {d}")]
    BadComponents { k: usize, d: usize },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("iterative solver did not converge in {0} iterations")]
    NoConvergence(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    /// Dense eigendecomposition up to [`DENSE_LIMIT`], iterative above.
    Auto,
    Dense,
    Iterative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// k loadings of length d, unit norm, descending variance.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub total_variance: f64,
    pub solver: Solver,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn project_point(&self, p: &[f64]) -> Vec<f64> {
        let c: Vec<f64> = p.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        self.components.iter().map(|w| dot(w, &c)).collect()
    }

    pub fn project(&self, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, ProjectError> {
        points
            .iter()
            .map(|p| {
                if p.len() != self.dim() {
                    return Err(ProjectError::DimensionMismatch(self.dim(), p.len()));
                }
                Ok(self.project_point(p))
            })
            .collect()
    }

    pub fn reconstruct(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (w, z) in self.components.iter().zip(coords) {
            for (o, x) in out.iter_mut().zip(w) {
                *o += z * x;
            }
        }
        out
    }
}

/// Flip `v` so its largest-magnitude coordinate is positive (ties: lowest index).
pub fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn centered_rows(points: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>), ProjectError> {
    if points.len() < 2 {
        return Err(ProjectError::TooFewPoints(points.len()));
    }
    let d = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != d) {
        return Err(ProjectError::DimensionMismatch(d, p.len()));
    }
    let n = points.len() as f64;
    let mut mean = vec![0.0; d];
    for p in points {
        for (m, x) in mean.iter_mut().zip(p) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let rows = points
        .iter()
        .map(|p| p.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    Ok((mean, rows))
}

/// Fits k principal components to the pooled points.
pub fn pca_fit(points: &[Vec<f64>], k: usize, solver: Solver, seed: u64) -> Result<PcaModel, ProjectError> {
    let (mean, rows) = centered_rows(points)?;
    let d = mean.len();
    if k == 0 || k > d {
        return Err(ProjectError::BadComponents { k, d });
    }
    let denom = (rows.len() - 1) as f64;
    let total_variance = rows.iter().map(|r| dot(r, r)).sum::<f64>() / denom;
    let dense = match solver {
        Solver::Auto => d <= DENSE_LIMIT,
        Solver::Dense => true,
        Solver::Iterative => false,
    };
    let (mut components, explained_variance) = if dense {
        dense_eigen(&rows, k, denom)
    } else {
        subspace_eigen(&rows, k, denom, seed)?
    };
    components.iter_mut().for_each(|c| fix_sign(c));
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
        total_variance,
        solver,
    })
}

fn dense_eigen(rows: &[Vec<f64>], k: usize, denom: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let d = rows[0].len();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for r in rows {
        for i in 0..d {
            if r[i] == 0.0 {
                continue;
            }
            for j in i..d {
                cov[(i, j)] += r[i] * r[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let comps = order[..k]
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();
    let vals = order[..k].iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    (comps, vals)
}

fn cov_apply(rows: &[Vec<f64>], v: &[f64], denom: f64) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for r in rows {
        let s = dot(r, v);
        for (o, x) in out.iter_mut().zip(r) {
            *o += s * x;
        }
    }
    out.iter_mut().for_each(|o| *o /= denom);
    out
}

fn orthonormalize(basis: &mut [Vec<f64>]) {
    for i in 0..basis.len() {
        for j in 0..i {
            let (done, rest) = basis.split_at_mut(i);
            let proj = dot(&rest[0], &done[j]);
            for (x, y) in rest[0].iter_mut().zip(&done[j]) {
                *x -= proj * y;
            }
        }
        let n = norm(&basis[i]);
        if n > 0.0 {
            basis[i].iter_mut().for_each(|x| *x /= n);
        }
    }
}

/// Seeded subspace iteration with Rayleigh–Ritz, applying the covariance
/// through the data rows so the d × d matrix is never built.
fn subspace_eigen(rows: &[Vec<f64>], k: usize, denom: f64, seed: u64) -> Result<(Vec<Vec<f64>>, Vec<f64>), ProjectError> {
    let d = rows[0].len();
    let p = (k + 4).min(d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<Vec<f64>> = (0..p)
        .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    orthonormalize(&mut q);

    for _ in 0..MAX_ITERATIONS {
        let mut z: Vec<Vec<f64>> = q.iter().map(|v| cov_apply(rows, v, denom)).collect();
        orthonormalize(&mut z);
        let cz: Vec<Vec<f64>> = z.iter().map(|v| cov_apply(rows, v, denom)).collect();
        let small = DMatrix::from_fn(p, p, |i, j| 0.5 * (dot(&z[i], &cz[j]) + dot(&z[j], &cz[i])));
        let eig = SymmetricEigen::new(small);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

        let rotate = |vs: &[Vec<f64>], col: usize| -> Vec<f64> {
            let mut out = vec![0.0; d];
            for (m, v) in vs.iter().enumerate() {
                let c = eig.eigenvectors[(m, col)];
                for (o, x) in out.iter_mut().zip(v) {
                    *o += c * x;
                }
            }
            out
        };
        let ritz: Vec<Vec<f64>> = order.iter().map(|&c| rotate(&z, c)).collect();
        let ritz_c: Vec<Vec<f64>> = order.iter().map(|&c| rotate(&cz, c)).collect();
        let values: Vec<f64> = order.iter().map(|&c| eig.eigenvalues[c]).collect();
        let scale = values[0].abs().max(f64::MIN_POSITIVE);
        let converged = (0..k).all(|i| {
            let resid: f64 = ritz_c[i]
                .iter()
                .zip(&ritz[i])
                .map(|(cv, v)| (cv - values[i] * v).powi(2))
                .sum::<f64>()
                .sqrt();
            resid <= ITERATIVE_TOL * scale
        });
        q = ritz;
        if converged {
            q.truncate(k);
            return Ok((q, values[..k].iter().map(|v| v.max(0.0)).collect()));
        }
    }
    Err(ProjectError::NoConvergence(MAX_ITERATIONS))
}

/// How flows are prepared before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectOptions {
    pub k: usize,
    /// Subtract each flow's own mean first (display only).
    pub center_per_flow: bool,
    pub solver: Solver,
    pub seed: u64,
}

impl Default for ProjectOptions {
    fn default() -> Self {
        ProjectOptions {
            k: 2,
            center_per_flow: false,
            solver: Solver::Auto,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub model: PcaModel,
    /// Flows in block order with their k-dimensional coordinates.
    pub flows: Vec<(FlowKey, Vec<Vec<f64>>)>,
}

pub fn project_flows(flows: &[Flow], opts: &ProjectOptions) -> Result<Projection, ProjectError> {
    let mut sorted: Vec<&Flow> = flows.iter().collect();
    sorted.sort_by_key(|f| FlowKey::of(f));
    let prepared: Vec<Vec<Vec<f64>>> = sorted
        .iter()
        .map(|f| if opts.center_per_flow { centered(&f.points) } else { f.points.clone() })
        .collect();
    let pooled: Vec<Vec<f64>> = prepared.iter().flatten().cloned().collect();
    let model = pca_fit(&pooled, opts.k, opts.solver, opts.seed)?;
    let flows = sorted
        .iter()
        .zip(&prepared)
        .map(|(f, pts)| Ok((FlowKey::of(f), model.project(pts)?)))
        .collect::<Result<_, ProjectError>>()?;
    Ok(Projection { model, flows })
}

impl Projection {
    /// Columns `flow_id, t, coord_1..coord_k, logic_id, topic, language`; t is 1-based.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["flow_id".to_string(), "t".to_string()];
        header.extend((1..=self.model.k()).map(|i| format!("coord_{i}")));
        header.extend(["logic_id", "topic", "language"].map(String::from));
        w.write_record(&header).expect("in-memory csv");
        for (key, coords) in &self.flows {
            for (t, c) in coords.iter().enumerate() {
                let mut row = vec![key.id(), (t + 1).to_string()];
                row.extend(c.iter().map(|x| x.to_string()));
                row.extend([key.logic_id.clone(), key.topic.clone(), key.language.clone()]);
                w.write_record(&row).expect("in-memory csv");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
    }

    /// Polylines in the first two coordinates, coloured by logic.
    pub fn to_svg(&self) -> String {
        let (width, height, pad) = (640.0, 480.0, 40.0);
        let pts: Vec<(f64, f64)> = self
            .flows
            .iter()
            .flat_map(|(_, c)| c.iter().map(|p| (p[0], p.get(1).copied().unwrap_or(0.0))))
            .collect();
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for &(x, y) in &pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        let sx = (width - 2.0 * pad) / (x1 - x0).max(1e-12);
        let sy = (height - 2.0 * pad) / (y1 - y0).max(1e-12);
        let map = |x: f64, y: f64| (pad + (x - x0) * sx, height - pad - (y - y0) * sy);

        let logics: BTreeMap<&str, usize> = {
            let mut m = BTreeMap::new();
            for (k, _) in &self.flows {
                let n = m.len();
                m.entry(k.logic_id.as_str()).or_insert(n);
            }
            m
        };
        let mut svg = svg_open(width, height);
        for (key, coords) in &self.flows {
            let colour = PALETTE[logics[key.logic_id.as_str()] % PALETTE.len()];
            let path: Vec<String> = coords
                .iter()
                .map(|p| {
                    let (x, y) = map(p[0], p.get(1).copied().unwrap_or(0.0));
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"><title>{}</title></polyline>"#,
                path.join(" "),
                escape(&key.id())
            );
        }
        for (i, (logic, idx)) in logics.iter().enumerate() {
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" font-size="12" fill="{}">{}</text>"#,
                pad,
                16.0 + 14.0 * i as f64,
                PALETTE[idx % PALETTE.len()],
                escape(logic)
            );
        }
        svg.push_str("</svg>\n");
        svg
    }

    pub fn write(&self, csv_path: &Path, svg_path: Option<&Path>) -> std::io::Result<()> {
        write_creating(csv_path, &self.to_csv())?;
        if let Some(p) = svg_path {
            write_creating(p, &self.to_svg())?;
        }
        Ok(())
    }
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

fn svg_open(width: f64, height: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn write_creating(path: &Path, contents: &str) -> std::io::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, contents)
}

/// Diverging colour for a value in [−1, 1]; skipped cells are grey.
fn cell_colour(v: Option<f64>) -> String {
    let Some(v) = v else { return "#bdbdbd".into() };
    let v = v.clamp(-1.0, 1.0);
    let (r, g, b) = if v >= 0.0 {
        (255.0, 255.0 * (1.0 - v), 255.0 * (1.0 - v))
    } else {
        (255.0 * (1.0 + v), 255.0 * (1.0 + v), 255.0)
    };
    format!("#{:02x}{:02x}{:02x}", r.round() as u8, g.round() as u8, b.round() as u8)
}

/// Heatmap of a similarity matrix with lines between logic blocks.
pub fn heatmap_svg(ids: &[String], values: &[Vec<Option<f64>>], blocks: &[Block]) -> String {
    let n = ids.len();
    let cell = (480.0 / n.max(1) as f64).clamp(4.0, 24.0);
    let side = cell * n as f64;
    let mut svg = svg_open(side, side);
    for (i, row) in values.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let title = match v {
                Some(x) => format!("{} × {}: {x:.4}", ids[i], ids[j]),
                None => format!("{} × {}: skipped", ids[i], ids[j]),
            };
            let _ = writeln!(
                svg,
                r#"<rect x="{:.2}" y="{:.2}" width="{cell:.2}" height="{cell:.2}" fill="{}"><title>{}</title></rect>"#,
                j as f64 * cell,
                i as f64 * cell,
                cell_colour(*v),
                escape(&title)
            );
        }
    }
    for b in blocks.iter().skip(1) {
        let at = b.start as f64 * cell;
        let _ = writeln!(
            svg,
            r#"<line x1="{at:.2}" y1="0" x2="{at:.2}" y2="{side:.2}" stroke="black" stroke-width="1"/>"#
        );
        let _ = writeln!(
            svg,
            r#"<line x1="0" y1="{at:.2}" x2="{side:.2}" y2="{at:.2}" stroke="black" stroke-width="1"/>"#
        );
    }
    svg.push_str("</svg>\n");
    svg
}
