//! Linear probes: ridge least squares with intercept, R² in-sample, over token
//! embeddings or captured activations.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rayon::prelude::*;
use thiserror::Error;

use crate::codec::TokenCodec;
use crate::datagen::Trajectory;
use crate::model::{forward_with_trace, HeadKind, Input, ModelConfig, ModelError, Site, Weights};
use crate::numerics::{Scalar, Tensor};
use crate::rng::{stream, Stream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbeError {
    #[error("{rows} samples cannot fit {cols} features plus an intercept")]
    InsufficientSamples { rows: usize, cols: usize },
    #[error("target has zero variance; R² is undefined")]
    ZeroVariance,
    #[error("design matrix is singular")]
    Singular,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("trajectory lacks metadata for target {0}")]
    MissingMetadata(String),
    #[error("position {index} out of range for trajectory of {len}")]
    PositionOutOfRange { index: usize, len: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeOptions {
    /// Ridge strength relative to the mean diagonal of the (centered) Gram matrix.
    pub lambda: f64,
    pub intercept: bool,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            lambda: 1e-6,
            intercept: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeFit {
    pub direction: Vec<f64>,
    pub intercept: f64,
    pub r2: f64,
}

/// A design matrix factored once and reused for many targets.
pub struct ProbeDesign {
    /// Row-major `rows × cols`, centered when fitting an intercept.
    x: Vec<f64>,
    rows: usize,
    cols: usize,
    means: Vec<f64>,
    intercept: bool,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl ProbeDesign {
    pub fn new(mut x: Vec<f64>, rows: usize, cols: usize, opts: ProbeOptions) -> Result<Self, ProbeError> {
        if x.len() != rows * cols {
            return Err(ProbeError::LengthMismatch(x.len(), rows * cols));
        }
        if rows < cols + 1 {
            return Err(ProbeError::InsufficientSamples { rows, cols });
        }
        let mut means = vec![0.0; cols];
        if opts.intercept {
            for row in x.chunks(cols) {
                for (m, v) in means.iter_mut().zip(row) {
                    *m += v;
                }
            }
            means.iter_mut().for_each(|m| *m /= rows as f64);
            for row in x.chunks_mut(cols) {
                for (v, m) in row.iter_mut().zip(&means) {
                    *v -= m;
                }
            }
        }
        let mut gram = vec![0.0; cols * cols];
        // SAFETY: xᵀ is a cols×rows view of the rows×cols buffer; gram is cols×cols.
        unsafe {
            f64::gemm(
                cols,
                rows,
                cols,
                1.0,
                x.as_ptr(),
                1,
                cols as isize,
                x.as_ptr(),
                cols as isize,
                1,
                0.0,
                gram.as_mut_ptr(),
                cols as isize,
                1,
            );
        }
        let scale = (0..cols).map(|i| gram[i * cols + i]).sum::<f64>() / cols as f64;
        let ridge = opts.lambda * if scale > 0.0 { scale } else { 1.0 };
        for i in 0..cols {
            gram[i * cols + i] += ridge;
        }
        let chol = DMatrix::from_row_slice(cols, cols, &gram)
            .cholesky()
            .ok_or(ProbeError::Singular)?;
        Ok(ProbeDesign {
            x,
            rows,
            cols,
            means,
            intercept: opts.intercept,
            chol,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn fit(&self, y: &[f64]) -> Result<ProbeFit, ProbeError> {
        if y.len() != self.rows {
            return Err(ProbeError::LengthMismatch(y.len(), self.rows));
        }
        let y_mean = y.iter().sum::<f64>() / y.len() as f64;
        let ss_tot: f64 = y.iter().map(|v| (v - y_mean) * (v - y_mean)).sum();
        if ss_tot <= 1e-24 * self.rows as f64 * y_mean.abs().max(1.0).powi(2) {
            return Err(ProbeError::ZeroVariance);
        }
        let shift = if self.intercept { y_mean } else { 0.0 };
        let mut xty = vec![0.0; self.cols];
        for (row, &yv) in self.x.chunks(self.cols).zip(y) {
            let r = yv - shift;
            for (acc, &v) in xty.iter_mut().zip(row) {
                *acc += v * r;
            }
        }
        let t = self.chol.solve(&DVector::from_vec(xty));
        let direction: Vec<f64> = t.iter().copied().collect();
        let mut ss_res = 0.0;
        for (row, &yv) in self.x.chunks(self.cols).zip(y) {
            let pred = shift + row.iter().zip(&direction).map(|(a, b)| a * b).sum::<f64>();
            ss_res += (yv - pred) * (yv - pred);
        }
        let intercept = shift - self.means.iter().zip(&direction).map(|(m, d)| m * d).sum::<f64>();
        Ok(ProbeFit {
            direction,
            intercept,
            r2: 1.0 - ss_res / ss_tot,
        })
    }
}

/// Ridge least squares of `y` on the `rows × cols` matrix `x`.
pub fn fit_linear_probe(
    x: &[f64],
    rows: usize,
    cols: usize,
    y: &[f64],
    opts: ProbeOptions,
) -> Result<ProbeFit, ProbeError> {
    ProbeDesign::new(x.to_vec(), rows, cols, opts)?.fit(y)
}

/// R² of regressing each token's bin center on its embedding row.
pub fn probe_spatial_map<T: Scalar>(table: &Tensor<T>, codec: &TokenCodec, opts: ProbeOptions) -> Result<f64, ProbeError> {
    let (v, n) = (table.rows(), table.cols());
    if v != codec.vocab() {
        return Err(ProbeError::LengthMismatch(v, codec.vocab()));
    }
    let x: Vec<f64> = table.data().iter().map(|t| t.to_f64().unwrap()).collect();
    fit_linear_probe(&x, v, n, &codec.centers(), opts).map(|f| f.r2)
}

/// Spatial-map R² for every axis of a classification model.
pub fn spatial_map_r2<T: Scalar>(
    config: &ModelConfig,
    weights: &Weights<T>,
    opts: ProbeOptions,
) -> Result<Vec<f64>, ProbeError> {
    let codec = config
        .codec()
        .ok_or_else(|| ProbeError::MissingMetadata("spatial map needs a classification model".into()))?;
    (0..config.input_dim)
        .map(|axis| probe_spatial_map(weights.get(&format!("wte.{axis}"))?, &codec, opts))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Newtonian,
    Keplerian,
}

/// Every probe target: the position itself, local force quantities, and
/// per-orbit geometric constants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    X,
    Y,
    Force,
    ForceX,
    ForceY,
    NormalX,
    NormalY,
    R,
    R2,
    InvR,
    InvR2,
    InvR3,
    A,
    B,
    C,
    E,
    MeanRadius,
    InvA,
    InvA2,
    InvB,
    InvB2,
    LrlX,
    LrlY,
    LrlMag,
}

impl Target {
    pub const NEWTONIAN: [Target; 12] = [
        Target::Force,
        Target::ForceX,
        Target::ForceY,
        Target::NormalX,
        Target::NormalY,
        Target::X,
        Target::Y,
        Target::R,
        Target::R2,
        Target::InvR,
        Target::InvR2,
        Target::InvR3,
    ];

    pub const KEPLERIAN: [Target; 12] = [
        Target::A,
        Target::B,
        Target::C,
        Target::E,
        Target::MeanRadius,
        Target::InvA,
        Target::InvA2,
        Target::InvB,
        Target::InvB2,
        Target::LrlX,
        Target::LrlY,
        Target::LrlMag,
    ];

    /// Components averaged into the Newtonian score.
    pub const NEWTON_SCORE: [Target; 3] = [Target::Force, Target::ForceX, Target::ForceY];
    /// Components averaged into the Keplerian score.
    pub const KEPLER_SCORE: [Target; 4] = [Target::A, Target::B, Target::LrlX, Target::LrlY];

    pub fn all() -> Vec<Target> {
        Target::NEWTONIAN.iter().chain(&Target::KEPLERIAN).copied().collect()
    }

    pub fn family(self) -> Family {
        if Target::KEPLERIAN.contains(&self) {
            Family::Keplerian
        } else {
            Family::Newtonian
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Target::X => "x",
            Target::Y => "y",
            Target::Force => "F",
            Target::ForceX => "F_x",
            Target::ForceY => "F_y",
            Target::NormalX => "n_x",
            Target::NormalY => "n_y",
            Target::R => "r",
            Target::R2 => "r2",
            Target::InvR => "inv_r",
            Target::InvR2 => "inv_r2",
            Target::InvR3 => "inv_r3",
            Target::A => "a",
            Target::B => "b",
            Target::C => "c",
            Target::E => "e",
            Target::MeanRadius => "r_mean",
            Target::InvA => "inv_a",
            Target::InvA2 => "inv_a2",
            Target::InvB => "inv_b",
            Target::InvB2 => "inv_b2",
            Target::LrlX => "A_x",
            Target::LrlY => "A_y",
            Target::LrlMag => "A_mag",
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Target {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Target::all()
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown probe target '{s}'"))
    }
}

/// Target groups selectable from the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetSet {
    Spatial,
    Newton,
    Kepler,
    All,
}

impl TargetSet {
    pub fn targets(self) -> Vec<Target> {
        match self {
            TargetSet::Spatial => vec![Target::X, Target::Y],
            TargetSet::Newton => Target::NEWTONIAN.to_vec(),
            TargetSet::Kepler => Target::KEPLERIAN.to_vec(),
            TargetSet::All => Target::all(),
        }
    }
}

impl FromStr for TargetSet {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "spatial" => Ok(TargetSet::Spatial),
            "newton" => Ok(TargetSet::Newton),
            "kepler" => Ok(TargetSet::Kepler),
            "all" => Ok(TargetSet::All),
            other => Err(format!("unknown target set '{other}'")),
        }
    }
}

/// Target values at position `index`. Keplerian targets are the orbit's
/// constants. 1-D trajectories only carry `x`.
pub fn compute_probe_targets(traj: &Trajectory, index: usize) -> Result<Vec<(Target, f64)>, ProbeError> {
    if index >= traj.len() {
        return Err(ProbeError::PositionOutOfRange {
            index,
            len: traj.len(),
        });
    }
    let p = traj.position(index);
    if traj.dim == 1 {
        return Ok(vec![(Target::X, p[0])]);
    }
    let k = traj
        .targets
        .as_ref()
        .ok_or_else(|| ProbeError::MissingMetadata("Kepler targets".into()))?;
    let s = k
        .steps
        .get(index)
        .ok_or_else(|| ProbeError::MissingMetadata(format!("step {index}")))?;
    Ok(vec![
        (Target::Force, s.force_mag),
        (Target::ForceX, s.force_x),
        (Target::ForceY, s.force_y),
        (Target::NormalX, s.n_x),
        (Target::NormalY, s.n_y),
        (Target::X, p[0]),
        (Target::Y, p[1]),
        (Target::R, s.r),
        (Target::R2, s.r2),
        (Target::InvR, s.inv_r),
        (Target::InvR2, s.inv_r2),
        (Target::InvR3, s.inv_r3),
        (Target::A, k.a),
        (Target::B, k.b),
        (Target::C, k.c),
        (Target::E, k.e),
        (Target::MeanRadius, k.mean_radius),
        (Target::InvA, k.inv_a),
        (Target::InvA2, k.inv_a2),
        (Target::InvB, k.inv_b),
        (Target::InvB2, k.inv_b2),
        (Target::LrlX, k.lrl_x),
        (Target::LrlY, k.lrl_y),
        (Target::LrlMag, k.lrl_mag),
    ])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepOptions {
    pub probe: ProbeOptions,
    /// Cap on probe samples (windows) per fit.
    pub max_rows: usize,
    /// Window length; `None` uses the model's context length. Windows never
    /// exceed `len - 1` states, the longest input seen in training.
    pub window: Option<usize>,
    pub seed: u64,
    /// Windows per traced forward pass.
    pub batch: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            probe: ProbeOptions::default(),
            max_rows: 20_000,
            window: None,
            seed: 0,
            batch: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeEntry {
    pub target: Target,
    pub site: Site,
    pub fit: ProbeFit,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProbeReport {
    pub entries: Vec<ProbeEntry>,
    pub samples: usize,
    /// Targets that could not be fit, with the reason.
    pub skipped: Vec<(Target, String)>,
}

impl ProbeReport {
    /// Site with the highest R² for `target`.
    pub fn best(&self, target: Target) -> Option<(Site, f64)> {
        self.entries
            .iter()
            .filter(|e| e.target == target)
            .map(|e| (e.site, e.fit.r2))
            .fold(None, |acc: Option<(Site, f64)>, (s, r)| match acc {
                Some((_, br)) if br >= r => acc,
                _ => Some((s, r)),
            })
    }

    pub fn best_all(&self) -> BTreeMap<Target, (Site, f64)> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            if !out.contains_key(&e.target) {
                if let Some(b) = self.best(e.target) {
                    out.insert(e.target, b);
                }
            }
        }
        out
    }

    fn mean_best(&self, targets: &[Target]) -> Option<f64> {
        let v: Option<Vec<f64>> = targets.iter().map(|&t| self.best(t).map(|b| b.1)).collect();
        v.map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Mean best R² over F, F_x, F_y.
    pub fn newtonian_score(&self) -> Option<f64> {
        self.mean_best(&Target::NEWTON_SCORE)
    }

    /// Mean best R² over a, b, A_x, A_y.
    pub fn keplerian_score(&self) -> Option<f64> {
        self.mean_best(&Target::KEPLER_SCORE)
    }

    /// Columns `target,site,layer,r2`; per-target best rows follow with a
    /// `best_` prefix on the target name.
    pub fn write_csv(&self, path: &Path) -> Result<(), ProbeError> {
        let io = |e: csv::Error| ProbeError::Io(e.to_string());
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(["target", "site", "layer", "r2"]).map_err(io)?;
        let layer = |s: &Site| s.layer.map(|l| l.to_string()).unwrap_or_default();
        for e in &self.entries {
            w.write_record([e.target.name().to_string(), e.site.to_string(), layer(&e.site), e.fit.r2.to_string()])
                .map_err(io)?;
        }
        for (t, (s, r2)) in self.best_all() {
            w.write_record([format!("best_{}", t.name()), s.to_string(), layer(&s), r2.to_string()])
                .map_err(io)?;
        }
        w.flush().map_err(|e| ProbeError::Io(e.to_string()))
    }
}

/// Activations at the last position of sliding windows, one matrix per site.
pub struct ProbeSamples {
    pub sites: Vec<(Site, Vec<f64>, usize)>,
    /// `(trajectory index, absolute position)` of each row.
    pub anchors: Vec<(usize, usize)>,
}

/// Runs the model over windows of the probe trajectories and keeps the
/// activation at each window's last position.
pub fn collect_samples(
    config: &ModelConfig,
    weights: &Weights<f32>,
    trajectories: &[Trajectory],
    opts: &SweepOptions,
) -> Result<ProbeSamples, ProbeError> {
    let dim = config.input_dim;
    let mut windows = Vec::new();
    for (ti, t) in trajectories.iter().enumerate() {
        if t.dim != dim {
            return Err(ProbeError::LengthMismatch(t.dim, dim));
        }
        let w = opts
            .window
            .unwrap_or(config.context_len)
            .min(config.context_len)
            .min(t.len().saturating_sub(1))
            .max(1);
        for s in 0..=(t.len() - w) {
            windows.push((ti, s, w));
        }
    }
    if windows.len() > opts.max_rows {
        let mut rng = stream(opts.seed, Stream::ProbeSubsample);
        let mut keep = sample(&mut rng, windows.len(), opts.max_rows).into_vec();
        keep.sort_unstable();
        windows = keep.into_iter().map(|i| windows[i]).collect();
    }
    let codec = config.codec();
    let mut per_site: Vec<(Site, Vec<f64>, usize)> = Vec::new();
    let mut anchors = Vec::with_capacity(windows.len());

    // Windows of one length share a forward pass.
    let mut by_len: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for &(ti, s, w) in &windows {
        by_len.entry(w).or_default().push((ti, s));
    }
    for (w, group) in by_len {
        for chunk in group.chunks(opts.batch.max(1)) {
            let b = chunk.len();
            let trace = match config.head {
                HeadKind::Regression => {
                    let mut x = Vec::with_capacity(b * w * dim);
                    for &(ti, s) in chunk {
                        x.extend(trajectories[ti].positions[s * dim..(s + w) * dim].iter().map(|&v| v as f32));
                    }
                    forward_with_trace(config, weights, Input::States(&x), b, w)?.1
                }
                HeadKind::Classification { .. } => {
                    let codec = codec.as_ref().expect("classification codec");
                    let mut x = Vec::with_capacity(b * w * dim);
                    for &(ti, s) in chunk {
                        for &v in &trajectories[ti].positions[s * dim..(s + w) * dim] {
                            x.push(codec.encode(v).map_err(|e| ProbeError::Model(ModelError::InputShape(e.to_string())))?);
                        }
                    }
                    forward_with_trace(config, weights, Input::Tokens(&x), b, w)?.1
                }
            };
            if per_site.is_empty() {
                per_site = trace.sites.iter().map(|(s, t)| (*s, Vec::new(), t.cols())).collect();
            }
            for (site, data, _) in per_site.iter_mut() {
                for bi in 0..b {
                    let row = trace.row(site, bi, w - 1).expect("traced site");
                    data.extend(row.iter().map(|&v| v as f64));
                }
            }
            anchors.extend(chunk.iter().map(|&(ti, s)| (ti, s + w - 1)));
        }
    }
    Ok(ProbeSamples {
        sites: per_site,
        anchors,
    })
}

/// Fits every target at every traced site.
pub fn probe_sweep(
    config: &ModelConfig,
    weights: &Weights<f32>,
    trajectories: &[Trajectory],
    targets: &[Target],
    opts: &SweepOptions,
) -> Result<ProbeReport, ProbeError> {
    let samples = collect_samples(config, weights, trajectories, opts)?;
    let rows = samples.anchors.len();

    let mut target_values: Vec<(Target, Vec<f64>)> = targets.iter().map(|&t| (t, Vec::with_capacity(rows))).collect();
    for &(ti, pos) in &samples.anchors {
        let vals = compute_probe_targets(&trajectories[ti], pos)?;
        for (t, col) in target_values.iter_mut() {
            let v = vals
                .iter()
                .find(|(vt, _)| vt == t)
                .ok_or_else(|| ProbeError::MissingMetadata(t.name().into()))?;
            col.push(v.1);
        }
    }

    let fits: Vec<Result<Vec<(Target, Site, Result<ProbeFit, ProbeError>)>, ProbeError>> = samples
        .sites
        .into_par_iter()
        .map(|(site, data, cols)| {
            let design = ProbeDesign::new(data, rows, cols, opts.probe)?;
            Ok(target_values
                .iter()
                .map(|(t, y)| (*t, site, design.fit(y)))
                .collect())
        })
        .collect();

    let mut report = ProbeReport {
        samples: rows,
        ..Default::default()
    };
    for site_fits in fits {
        for (target, site, fit) in site_fits? {
            match fit {
                Ok(fit) => report.entries.push(ProbeEntry { target, site, fit }),
                Err(e @ ProbeError::ZeroVariance) => {
                    if !report.skipped.iter().any(|(t, _)| *t == target) {
                        report.skipped.push((target, e.to_string()));
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn exact_linear_target() {
        let mut rng = stream(1, Stream::Eval);
        let (rows, cols) = (200, 5);
        let x: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x
            .chunks(cols)
            .map(|r| 0.5 + r.iter().enumerate().map(|(i, v)| (i as f64 - 2.0) * v).sum::<f64>())
            .collect();
        let fit = fit_linear_probe(&x, rows, cols, &y, ProbeOptions { lambda: 0.0, intercept: true }).unwrap();
        assert!((fit.r2 - 1.0).abs() < 1e-10);
        assert!((fit.intercept - 0.5).abs() < 1e-9);
        assert!((fit.direction[4] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn duplicated_columns_are_well_defined() {
        let mut rng = stream(2, Stream::Eval);
        let rows = 100;
        let base: Vec<f64> = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = base.iter().flat_map(|&v| [v, v]).collect();
        let y: Vec<f64> = base.iter().map(|v| 3.0 * v).collect();
        let fit = fit_linear_probe(&x, rows, 2, &y, ProbeOptions::default()).unwrap();
        assert!(fit.r2 > 0.999999);
        assert!((fit.direction[0] - fit.direction[1]).abs() < 1e-6);
    }

    #[test]
    fn error_conditions() {
        let x = vec![1.0, 2.0, 3.0];
        assert_eq!(
            fit_linear_probe(&x, 3, 1, &[2.0, 2.0, 2.0], ProbeOptions::default()),
            Err(ProbeError::ZeroVariance)
        );
        assert_eq!(
            fit_linear_probe(&x, 1, 3, &[1.0], ProbeOptions::default()),
            Err(ProbeError::InsufficientSamples { rows: 1, cols: 3 })
        );
    }

    #[test]
    fn noise_baseline_matches_p_over_n() {
        let mut rng = stream(3, Stream::Eval);
        let (rows, cols) = (10_000, 32);
        let x: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = (0..rows).map(|_| rng.sample(StandardNormal)).collect();
        let r2 = fit_linear_probe(&x, rows, cols, &y, ProbeOptions::default()).unwrap().r2;
        assert!(r2 < 0.02 && r2 > 0.0, "{r2}");
    }

    #[test]
    fn planted_spatial_map() {
        let codec = TokenCodec::new(1.0, 200).unwrap();
        let mut rng = stream(4, Stream::Eval);
        let u: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let data: Vec<f64> = codec
            .centers()
            .iter()
            .flat_map(|&c| u.iter().map(|&ui| c * ui + 1e-6 * rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>())
            .collect();
        let table = Tensor::new(vec![200, 16], data).unwrap();
        assert!(probe_spatial_map(&table, &codec, ProbeOptions::default()).unwrap() > 0.999999);
    }

    #[test]
    fn target_catalogue_is_complete_and_named_once() {
        let all = Target::all();
        assert_eq!(all.len(), 24);
        let mut names: Vec<&str> = all.iter().map(|t| t.name()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 24);
        for t in all {
            assert_eq!(t.name().parse::<Target>().unwrap(), t);
        }
    }

    #[test]
    fn report_best_and_scores() {
        let site = |l| Site::block(l, crate::model::SiteKind::MlpHidden);
        let fit = |r2| ProbeFit {
            direction: vec![],
            intercept: 0.0,
            r2,
        };
        let mut rep = ProbeReport::default();
        for (t, l, r) in [(Target::Force, 0, 0.5), (Target::Force, 1, 0.9), (Target::ForceX, 0, 0.7), (Target::ForceY, 1, 0.8)] {
            rep.entries.push(ProbeEntry {
                target: t,
                site: site(l),
                fit: fit(r),
            });
        }
        assert_eq!(rep.best(Target::Force), Some((site(1), 0.9)));
        assert!((rep.newtonian_score().unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(rep.keplerian_score(), None);
    }
}
