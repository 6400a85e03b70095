//! Synthetic covariates, coefficient images and the simulation study loop.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::eval_spline_basis;
use crate::error::{Result, SoirError};
use crate::estimators::{fit_method, EstimatorSettings, SplinesConfig};
use crate::image::{
    demean_images, image_correlation, relative_estimation_error, relative_prediction_error,
    FitResult, Image2D, MethodId, RegressionDataset,
};
use crate::kernels::{rank_one_eigenimages, EigenimageOptions};
use crate::measures::{m_projection_wavelets, measure_fit, MeasureContext, MeasureReport};
use crate::rng::{derive_seed, stream};

/// Intercept of the simulated responses.
pub const INTERCEPT: f64 = -1.0;
/// Version of the study CSV/JSON layout.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoefImageKind {
    Bumpy,
    Pca,
    Smooth,
    Sparse,
}

impl CoefImageKind {
    pub const ALL: [CoefImageKind; 4] = [Self::Bumpy, Self::Pca, Self::Smooth, Self::Sparse];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Bumpy => "bumpy",
            Self::Pca => "pca",
            Self::Smooth => "smooth",
            Self::Sparse => "sparse",
        }
    }
}

impl fmt::Display for CoefImageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CoefImageKind {
    type Err = SoirError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| SoirError::Parse(format!("unknown coefficient image '{s}'")))
    }
}

/// Shape constants of the coefficient images. Positions and widths are
/// fractions of the image side, so the images look alike on any grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefImageParams {
    pub bumpy_centers: Vec<(f64, f64)>,
    pub bumpy_heights: Vec<f64>,
    pub bumpy_bandwidth: f64,
    pub smooth_centers: Vec<(f64, f64)>,
    pub smooth_weights: Vec<f64>,
    pub smooth_sd: f64,
    pub sparse_centers: Vec<(f64, f64)>,
    pub sparse_heights: Vec<f64>,
    pub sparse_radius: f64,
    pub pca_coefficients: Vec<f64>,
    /// Eigenimages extracted before taking the leading ones; matches the
    /// largest PCR2D grid value so both use the same decomposition.
    pub pca_extracted: usize,
    pub eigen: EigenimageOptions,
}

impl Default for CoefImageParams {
    fn default() -> Self {
        Self {
            bumpy_centers: vec![
                (0.2, 0.25),
                (0.7, 0.2),
                (0.45, 0.5),
                (0.2, 0.75),
                (0.75, 0.7),
            ],
            bumpy_heights: vec![1.0, -0.8, 1.2, -1.0, 0.9],
            bumpy_bandwidth: 2.0 / 64.0,
            smooth_centers: vec![(0.3, 0.3), (0.7, 0.45), (0.4, 0.75)],
            smooth_weights: vec![0.4, 0.35, 0.25],
            smooth_sd: 10.0 / 64.0,
            sparse_centers: vec![(0.3, 0.35), (0.65, 0.7)],
            sparse_heights: vec![1.0, 1.0],
            sparse_radius: 4.0 / 64.0,
            pca_coefficients: (1..=5)
                .map(|k| (-1f64).powi(k) * (-(k as f64) / 5.0).exp())
                .collect(),
            pca_extracted: 25,
            eigen: EigenimageOptions::default(),
        }
    }
}

/// Standard deviation scale for the covariate field, as a fraction of the side.
pub const COVARIATE_LENGTH_SCALE: f64 = 0.15;
/// Range the raw covariate fields are mapped to before demeaning.
pub const COVARIATE_RANGE: (f64, f64) = (-1.0, 1.24);

fn centre(i: usize, n: usize) -> f64 {
    (i as f64 + 0.5) / n as f64
}

fn kernel_sqrt(n: usize) -> DMatrix<f64> {
    let k = DMatrix::from_fn(n, n, |i, j| {
        let d = centre(i, n) - centre(j, n);
        (-0.5 * (d / COVARIATE_LENGTH_SCALE).powi(2)).exp()
    });
    let eig = SymmetricEigen::new(k);
    let mut u = eig.eigenvectors;
    for (j, &v) in eig.eigenvalues.iter().enumerate() {
        u.column_mut(j).scale_mut(v.max(0.0).sqrt());
    }
    u
}

/// `n` demeaned Gaussian random field images with a squared-exponential
/// kernel, affinely mapped to the covariate range before demeaning.
pub fn gen_covariates(n: usize, nx: usize, ny: usize, seed: u64) -> Result<Vec<Image2D>> {
    if n < 2 || nx == 0 || ny == 0 {
        return Err(SoirError::InvalidInput(
            "need at least two images on a non-empty grid".into(),
        ));
    }
    let (ax, ay) = (kernel_sqrt(nx), kernel_sqrt(ny));
    let mut rng = stream(seed, 0);
    let mut fields: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let g = DMatrix::from_fn(ny, nx, |_, _| rng.sample::<f64, _>(StandardNormal));
            let z = &ay * g * ax.transpose();
            (0..nx * ny).map(|p| z[(p / nx, p % nx)]).collect()
        })
        .collect();
    let (lo, hi) = fields
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let scale = (COVARIATE_RANGE.1 - COVARIATE_RANGE.0) / (hi - lo);
    for f in &mut fields {
        for v in f.iter_mut() {
            *v = COVARIATE_RANGE.0 + (*v - lo) * scale;
        }
    }
    for p in 0..nx * ny {
        let mean = fields.iter().map(|f| f[p]).sum::<f64>() / n as f64;
        for f in &mut fields {
            f[p] -= mean;
        }
    }
    fields
        .into_iter()
        .map(|f| Image2D::new(nx, ny, f))
        .collect()
}

fn covariate_matrix(covariates: &[Image2D]) -> Result<DMatrix<f64>> {
    let first = covariates
        .first()
        .ok_or_else(|| SoirError::InvalidInput("no covariate images".into()))?;
    if covariates.iter().any(|c| !c.same_shape(first)) {
        return Err(SoirError::DimensionMismatch(
            "covariate images differ in size".into(),
        ));
    }
    Ok(DMatrix::from_fn(covariates.len(), first.len(), |i, j| {
        covariates[i].values()[j]
    }))
}

/// Leading eigenimages used to build the pca truth.
pub fn pca_generators(covariates: &[Image2D], params: &CoefImageParams) -> Result<Vec<Image2D>> {
    let x = covariate_matrix(covariates)?;
    let (nx, ny) = (covariates[0].nx(), covariates[0].ny());
    let k = params.pca_coefficients.len();
    let extracted = params
        .pca_extracted
        .max(k)
        .min(covariates.len())
        .min(nx)
        .min(ny);
    let eig = rank_one_eigenimages(&x, nx, ny, extracted, &params.eigen)?;
    if eig.len() < k {
        return Err(SoirError::Degenerate(format!(
            "only {} eigenimages available",
            eig.len()
        )));
    }
    Ok(eig.components.into_iter().take(k).collect())
}

fn random_centres(rng: &mut impl Rng, count: usize, margin: f64) -> Vec<(f64, f64)> {
    (0..count)
        .map(|_| {
            (
                rng.random_range(margin..1.0 - margin),
                rng.random_range(margin..1.0 - margin),
            )
        })
        .collect()
}

/// One of the four simulation truths. With `randomized`, feature centres
/// are redrawn from `seed`; the pca image has no features to move.
pub fn gen_coef_image(
    kind: CoefImageKind,
    nx: usize,
    ny: usize,
    covariates: Option<&[Image2D]>,
    params: &CoefImageParams,
    seed: u64,
    randomized: bool,
) -> Result<Image2D> {
    let mut rng = stream(seed, 1);
    let place = |rng: &mut crate::rng::SoirRng, fixed: &[(f64, f64)], margin: f64| {
        if randomized {
            random_centres(rng, fixed.len(), margin)
        } else {
            fixed.to_vec()
        }
    };
    match kind {
        CoefImageKind::Bumpy => {
            let c = place(
                &mut rng,
                &params.bumpy_centers,
                3.0 * params.bumpy_bandwidth,
            );
            let h = params.bumpy_bandwidth;
            Image2D::from_fn(nx, ny, |x, y| {
                let (tx, ty) = (centre(x, nx), centre(y, ny));
                c.iter()
                    .zip(&params.bumpy_heights)
                    .map(|(&(cx, cy), a)| {
                        a * (-((tx - cx).powi(2) + (ty - cy).powi(2)) / (2.0 * h * h)).exp()
                    })
                    .sum()
            })
        }
        CoefImageKind::Smooth => {
            let c = place(&mut rng, &params.smooth_centers, 1.5 * params.smooth_sd);
            let s2 = params.smooth_sd.powi(2);
            // densities in pixel units, so the height shrinks as the grid grows
            let norm = 1.0 / (2.0 * std::f64::consts::PI * s2 * (nx * ny) as f64);
            Image2D::from_fn(nx, ny, |x, y| {
                let (tx, ty) = (centre(x, nx), centre(y, ny));
                c.iter()
                    .zip(&params.smooth_weights)
                    .map(|(&(cx, cy), w)| {
                        w * norm * (-((tx - cx).powi(2) + (ty - cy).powi(2)) / (2.0 * s2)).exp()
                    })
                    .sum()
            })
        }
        CoefImageKind::Sparse => {
            let c = place(&mut rng, &params.sparse_centers, 1.5 * params.sparse_radius);
            let r = params.sparse_radius;
            Image2D::from_fn(nx, ny, |x, y| {
                let (tx, ty) = (centre(x, nx), centre(y, ny));
                c.iter()
                    .zip(&params.sparse_heights)
                    .map(|(&(cx, cy), a)| {
                        let d2 = ((tx - cx).powi(2) + (ty - cy).powi(2)) / (r * r);
                        if d2 < 1.0 {
                            a * (1.0 - d2).powi(2)
                        } else {
                            0.0
                        }
                    })
                    .sum()
            })
        }
        CoefImageKind::Pca => {
            let covs = covariates.ok_or_else(|| {
                SoirError::InvalidInput("the pca image needs covariate images".into())
            })?;
            if covs[0].nx() != nx || covs[0].ny() != ny {
                return Err(SoirError::DimensionMismatch(
                    "covariates do not match the grid".into(),
                ));
            }
            let gens = pca_generators(covs, params)?;
            let mut v = vec![0.0; nx * ny];
            for (g, b) in gens.iter().zip(&params.pca_coefficients) {
                for (o, e) in v.iter_mut().zip(g.values()) {
                    *o += b * e;
                }
            }
            Image2D::new(nx, ny, v)
        }
    }
}

fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// `y = −1 + ⟨x_i, β⟩ + ε` with `sd(ε) = sd̂(signal)/snr`. Returns `y` and
/// the noise standard deviation used.
pub fn simulate_response(
    covariates: &[Image2D],
    beta: &Image2D,
    snr: f64,
    seed: u64,
) -> Result<(Vec<f64>, f64)> {
    if !(snr > 0.0) {
        return Err(SoirError::InvalidInput("SNR must be positive".into()));
    }
    if covariates.len() < 2 {
        return Err(SoirError::InvalidInput("need at least two images".into()));
    }
    if covariates.iter().any(|c| !c.same_shape(beta)) {
        return Err(SoirError::DimensionMismatch(
            "β and covariates differ in size".into(),
        ));
    }
    let signal: Vec<f64> = covariates
        .iter()
        .map(|c| {
            c.values()
                .iter()
                .zip(beta.values())
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect();
    let sd = sample_sd(&signal);
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(SoirError::Degenerate(
            "the signal has no variance across images".into(),
        ));
    }
    let sigma = sd / snr;
    let mut rng = stream(seed, 2);
    let y = signal
        .iter()
        .map(|s| INTERCEPT + s + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok((y, sigma))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimScenario {
    pub n: usize,
    pub snr: f64,
    pub kind: CoefImageKind,
    pub side: usize,
    pub replications: usize,
    pub master_seed: u64,
    pub randomized_locations: bool,
    pub params: CoefImageParams,
}

impl SimScenario {
    /// 64×64, N = 250, SNR 4, 100 replications.
    pub fn paper(kind: CoefImageKind) -> Self {
        Self {
            n: 250,
            snr: 4.0,
            kind,
            side: 64,
            replications: 100,
            master_seed: 1,
            randomized_locations: false,
            params: CoefImageParams::default(),
        }
    }

    /// 32×32, N = 100, SNR 4, 10 replications.
    pub fn desk(kind: CoefImageKind) -> Self {
        Self {
            n: 100,
            side: 32,
            replications: 10,
            ..Self::paper(kind)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.snr > 0.0) {
            return Err(SoirError::InvalidInput("SNR must be positive".into()));
        }
        if self.side < 8 || !self.side.is_power_of_two() {
            return Err(SoirError::InvalidInput(format!(
                "side {} is not a power of two ≥ 8",
                self.side
            )));
        }
        if self.n < 10 {
            return Err(SoirError::InvalidInput("need at least 10 images".into()));
        }
        Ok(())
    }
}

/// One long-format result value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub replication: usize,
    /// A method name, or `truth` for the generating image.
    pub method: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub replication: usize,
    pub method: MethodId,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeRecord {
    pub replication: usize,
    pub method: MethodId,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyResults {
    pub scenario: SimScenario,
    pub methods: Vec<MethodId>,
    pub rows: Vec<StudyRow>,
    pub failures: Vec<FailureRecord>,
    /// Wall-clock times; kept out of the CSV so it stays reproducible.
    pub runtimes: Vec<RuntimeRecord>,
    /// Generating image of the first replication.
    pub truth: Option<Image2D>,
    /// Pixelwise median of each method's estimates.
    pub median_estimates: Vec<(MethodId, Image2D)>,
}

pub const TRUTH: &str = "truth";

fn push(rows: &mut Vec<StudyRow>, rep: usize, method: &str, metric: &str, value: f64) {
    rows.push(StudyRow {
        replication: rep,
        method: method.into(),
        metric: metric.into(),
        value,
    });
}

fn push_measures(rows: &mut Vec<StudyRow>, rep: usize, method: &str, m: &MeasureReport) {
    let fields = [
        ("smoothness_image", m.smoothness_image),
        ("smoothness_coeff", m.smoothness_coeff),
        ("sparsity_image", m.sparsity_image),
        ("sparsity_wavelet", m.sparsity_wavelet),
        ("selection", m.selection),
        ("prior", m.prior),
    ];
    for (name, v) in fields {
        if let Some(v) = v {
            push(rows, rep, method, name, v);
        }
    }
    for (b, v) in &m.projection {
        push(rows, rep, method, &format!("projection_{b}"), *v);
    }
}

/// Spline penalty of a method's own basis, for the coefficient smoothness.
pub fn spline_penalty_for(
    method: MethodId,
    settings: &EstimatorSettings,
    nx: usize,
    ny: usize,
) -> Option<DMatrix<f64>> {
    let cfg: &SplinesConfig = match method {
        MethodId::Splines => &settings.splines,
        MethodId::Fpcr => &settings.fpcr.spline,
        _ => return None,
    };
    eval_spline_basis(nx, ny, cfg.kx, cfg.ky, cfg.penalty_order)
        .ok()
        .map(|b| b.penalty)
}

/// Bases the truths are projected onto besides the wavelets: the Splines
/// basis and the generating eigenimages.
pub fn truth_bases(
    covariates: &[Image2D],
    settings: &EstimatorSettings,
    params: &CoefImageParams,
) -> Vec<(String, DMatrix<f64>)> {
    let (nx, ny) = (covariates[0].nx(), covariates[0].ny());
    let mut out = Vec::new();
    let s = &settings.splines;
    if let Ok(b) = eval_spline_basis(nx, ny, s.kx, s.ky, s.penalty_order) {
        out.push(("splines".to_string(), b.basis));
    }
    if let Ok(g) = pca_generators(covariates, params) {
        let m = DMatrix::from_fn(nx * ny, g.len(), |i, j| g[j].values()[i]);
        out.push(("pcs".to_string(), m));
    }
    out
}

struct Replication {
    rows: Vec<StudyRow>,
    failures: Vec<FailureRecord>,
    runtimes: Vec<RuntimeRecord>,
    truth: Image2D,
    estimates: Vec<Option<Image2D>>,
}

fn run_replication(
    rep: usize,
    scenario: &SimScenario,
    methods: &[MethodId],
    settings: &EstimatorSettings,
    covariates: &[Image2D],
    fixed_truth: &Image2D,
    bases: &[(String, DMatrix<f64>)],
) -> Result<Replication> {
    let side = scenario.side;
    let rep_seed = derive_seed(scenario.master_seed, 100 + rep as u64);
    let truth = if scenario.randomized_locations {
        gen_coef_image(
            scenario.kind,
            side,
            side,
            Some(covariates),
            &scenario.params,
            derive_seed(rep_seed, 1),
            true,
        )?
    } else {
        fixed_truth.clone()
    };
    let (y, sigma) = simulate_response(covariates, &truth, scenario.snr, derive_seed(rep_seed, 2))?;
    let data = demean_images(RegressionDataset::from_images(&y, covariates, None)?)?;
    let settings = settings.seeded(derive_seed(rep_seed, 3));
    let mut rows = Vec::new();
    push(&mut rows, rep, TRUTH, "sigma_eps", sigma);
    let truth_fit = FitResult::new(MethodId::Splines, vec![INTERCEPT], truth.clone());
    let mut truth_measures = measure_fit(
        &truth_fit,
        &MeasureContext {
            bases,
            spline_penalty: None,
        },
    );
    truth_measures.selection = None;
    if let Ok(v) = m_projection_wavelets(&truth) {
        truth_measures.projection.insert("wavelets".into(), v);
    }
    push_measures(&mut rows, rep, TRUTH, &truth_measures);

    let mut failures = Vec::new();
    let mut runtimes = Vec::new();
    let mut estimates = Vec::new();
    for &method in methods {
        let start = Instant::now();
        let outcome = fit_method(method, &data, &settings);
        runtimes.push(RuntimeRecord {
            replication: rep,
            method,
            seconds: start.elapsed().as_secs_f64(),
        });
        let fit = match outcome {
            Ok((fit, _)) => fit,
            Err(e) => {
                failures.push(FailureRecord {
                    replication: rep,
                    method,
                    message: e.to_string(),
                });
                estimates.push(None);
                continue;
            }
        };
        let name = method.as_str();
        if let Ok(e) = relative_estimation_error(&truth, &fit.beta_hat) {
            push(&mut rows, rep, name, "est_error", e);
        }
        let pred = fit.predict(data.w(), data.x());
        if let Ok(e) = relative_prediction_error(&y, &pred) {
            push(&mut rows, rep, name, "pred_error", e);
        }
        let penalty = spline_penalty_for(method, &settings, side, side);
        let m = measure_fit(
            &fit,
            &MeasureContext {
                bases: &[],
                spline_penalty: penalty.as_ref(),
            },
        );
        push_measures(&mut rows, rep, name, &m);
        for (k, v) in &fit.hyperparameters {
            push(&mut rows, rep, name, &format!("hyper_{k}"), *v);
        }
        estimates.push(Some(fit.beta_hat));
    }

    let mut labelled: Vec<(&str, &Image2D)> = vec![(TRUTH, &truth)];
    for (m, e) in methods.iter().zip(&estimates) {
        if let Some(e) = e {
            labelled.push((m.as_str(), e));
        }
    }
    for (i, (a, ia)) in labelled.iter().enumerate() {
        for (b, ib) in labelled.iter().skip(i + 1) {
            if let Ok(r) = image_correlation(ia, ib) {
                push(&mut rows, rep, a, &format!("cor_{b}"), r);
                push(&mut rows, rep, b, &format!("cor_{a}"), r);
            }
        }
    }
    Ok(Replication {
        rows,
        failures,
        runtimes,
        truth,
        estimates,
    })
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Runs every replication of `scenario` for each method. Covariates are
/// drawn once; each replication draws fresh noise (and, in randomized
/// mode, fresh feature locations). Fit failures are recorded, not raised.
pub fn run_study(
    scenario: &SimScenario,
    methods: &[MethodId],
    settings: &EstimatorSettings,
) -> Result<StudyResults> {
    scenario.validate()?;
    let side = scenario.side;
    let mut results = StudyResults {
        scenario: scenario.clone(),
        methods: methods.to_vec(),
        rows: Vec::new(),
        failures: Vec::new(),
        runtimes: Vec::new(),
        truth: None,
        median_estimates: Vec::new(),
    };
    if methods.is_empty() || scenario.replications == 0 {
        return Ok(results);
    }
    let covariates = gen_covariates(scenario.n, side, side, derive_seed(scenario.master_seed, 1))?;
    let fixed_truth = gen_coef_image(
        scenario.kind,
        side,
        side,
        Some(&covariates),
        &scenario.params,
        derive_seed(scenario.master_seed, 2),
        false,
    )?;
    let bases = truth_bases(&covariates, settings, &scenario.params);
    let reps: Vec<Replication> = (0..scenario.replications)
        .into_par_iter()
        .map(|r| {
            run_replication(
                r,
                scenario,
                methods,
                settings,
                &covariates,
                &fixed_truth,
                &bases,
            )
        })
        .collect::<Result<_>>()?;
    results.truth = reps.first().map(|r| r.truth.clone());
    for (mi, &m) in methods.iter().enumerate() {
        let fits: Vec<&Image2D> = reps
            .iter()
            .filter_map(|r| r.estimates[mi].as_ref())
            .collect();
        if fits.is_empty() {
            continue;
        }
        let med = (0..side * side)
            .map(|p| median(&mut fits.iter().map(|f| f.values()[p]).collect::<Vec<_>>()))
            .collect();
        results
            .median_estimates
            .push((m, Image2D::new(side, side, med)?));
    }
    for r in reps {
        results.rows.extend(r.rows);
        results.failures.extend(r.failures);
        results.runtimes.extend(r.runtimes);
    }
    Ok(results)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub method: String,
    pub metric: String,
    pub count: usize,
    pub median: f64,
    /// Sample standard deviation; NaN for a single value.
    pub sd: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudySummary {
    pub schema_version: u32,
    pub scenario: SimScenario,
    pub methods: Vec<MethodId>,
    pub metrics: Vec<MetricSummary>,
    /// Labels of the median correlation matrix, truth first.
    pub correlation_labels: Vec<String>,
    pub median_correlation: Vec<Vec<Option<f64>>>,
    pub failures: Vec<FailureRecord>,
    pub median_runtime_seconds: BTreeMap<MethodId, f64>,
}

impl StudyResults {
    /// Values of one `(method, metric)` pair in replication order.
    pub fn values(&self, method: &str, metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.method == method && r.metric == metric)
            .map(|r| r.value)
            .collect()
    }

    pub fn median_of(&self, method: &str, metric: &str) -> Option<f64> {
        let mut v = self.values(method, metric);
        (!v.is_empty()).then(|| median(&mut v))
    }

    pub fn summary(&self) -> StudySummary {
        let mut keys: Vec<(String, String)> = Vec::new();
        for r in &self.rows {
            let k = (r.method.clone(), r.metric.clone());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        let metrics = keys
            .into_iter()
            .map(|(method, metric)| {
                let mut v = self.values(&method, &metric);
                let n = v.len();
                let sd = if n > 1 { sample_sd(&v) } else { f64::NAN };
                MetricSummary {
                    median: median(&mut v),
                    count: n,
                    sd,
                    method,
                    metric,
                }
            })
            .collect();
        let labels: Vec<String> = std::iter::once(TRUTH.to_string())
            .chain(self.methods.iter().map(|m| m.as_str().to_string()))
            .collect();
        let median_correlation = labels
            .iter()
            .map(|a| {
                labels
                    .iter()
                    .map(|b| {
                        if a == b {
                            Some(1.0)
                        } else {
                            self.median_of(a, &format!("cor_{b}"))
                        }
                    })
                    .collect()
            })
            .collect();
        let mut median_runtime_seconds = BTreeMap::new();
        for &m in &self.methods {
            let mut t: Vec<f64> = self
                .runtimes
                .iter()
                .filter(|r| r.method == m)
                .map(|r| r.seconds)
                .collect();
            if !t.is_empty() {
                median_runtime_seconds.insert(m, median(&mut t));
            }
        }
        StudySummary {
            schema_version: SCHEMA_VERSION,
            scenario: self.scenario.clone(),
            methods: self.methods.clone(),
            metrics,
            correlation_labels: labels,
            median_correlation,
            failures: self.failures.clone(),
            median_runtime_seconds,
        }
    }

    /// Long-format CSV: `replication,method,metric,value`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| SoirError::Io(e.into());
        w.write_record(["replication", "method", "metric", "value"])
            .map_err(io)?;
        for r in &self.rows {
            w.write_record([
                r.replication.to_string(),
                r.method.clone(),
                r.metric.clone(),
                format!("{}", r.value),
            ])
            .map_err(io)?;
        }
        Ok(w.flush()?)
    }
}
