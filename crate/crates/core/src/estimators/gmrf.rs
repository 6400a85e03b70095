use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::image_from;
use crate::error::{Result, SoirError};
use crate::image::{FitResult, MethodId, NeighborhoodMatrix, PriorSummary, RegressionDataset};
use crate::rng::{self, SoirRng};

/// Inverse-gamma `(shape, scale)` pair.
pub type InvGamma = (f64, f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmrfConfig {
    pub prior_eps: InvGamma,
    pub prior_beta: InvGamma,
    pub iterations: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
    /// Hold `(σ²_ε, σ²_β)` fixed instead of sampling them.
    pub fixed_variances: Option<(f64, f64)>,
}

impl GmrfConfig {
    /// Weakly informative `IG(1, 1)` priors.
    pub fn gmrf() -> Self {
        Self {
            prior_eps: (1.0, 1.0),
            prior_beta: (1.0, 1.0),
            iterations: 5000,
            burnin: 500,
            thin: 20,
            seed: 0,
            fixed_variances: None,
        }
    }

    /// Highly informative `IG(10, 1e-3)` priors.
    pub fn gmrf2() -> Self {
        Self {
            prior_eps: (10.0, 1e-3),
            prior_beta: (10.0, 1e-3),
            ..Self::gmrf()
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_schedule(self.iterations, self.burnin, self.thin)?;
        for (a, b) in [self.prior_eps, self.prior_beta] {
            if !(a > 0.0 && b > 0.0) {
                return Err(SoirError::InvalidInput(
                    "inverse-gamma parameters must be positive".into(),
                ));
            }
        }
        if let Some((e, b)) = self.fixed_variances {
            if !(e > 0.0 && b > 0.0) {
                return Err(SoirError::InvalidInput(
                    "fixed variances must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

pub(crate) fn validate_schedule(iterations: usize, burnin: usize, thin: usize) -> Result<()> {
    if iterations <= burnin {
        return Err(SoirError::InvalidInput(
            "iterations must exceed burn-in".into(),
        ));
    }
    if thin == 0 {
        return Err(SoirError::InvalidInput(
            "thinning interval must be at least 1".into(),
        ));
    }
    if (iterations - burnin) / thin == 0 {
        return Err(SoirError::InvalidInput("schedule saves no draws".into()));
    }
    Ok(())
}

/// Whether sweep `t` (0-based) is saved.
pub(crate) fn is_saved(t: usize, burnin: usize, thin: usize) -> bool {
    t >= burnin && (t - burnin + 1) % thin == 0
}

/// Saved draws of a Gibbs run, one row per saved sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McmcChain {
    pub n_pixels: usize,
    pub p: usize,
    pub saved_steps: usize,
    /// `saved_steps × L`, row-major.
    pub beta: Vec<f64>,
    /// `saved_steps × p`, row-major.
    pub alpha: Vec<f64>,
    pub sigma2_eps: Vec<f64>,
    pub sigma2_beta: Vec<f64>,
    /// `saved_steps × L` inclusion indicators (SparseGMRF only).
    pub gamma: Option<Vec<u8>>,
}

impl McmcChain {
    pub(crate) fn new(n_pixels: usize, p: usize, capacity: usize, sparse: bool) -> Self {
        Self {
            n_pixels,
            p,
            saved_steps: 0,
            beta: Vec::with_capacity(capacity * n_pixels),
            alpha: Vec::with_capacity(capacity * p),
            sigma2_eps: Vec::with_capacity(capacity),
            sigma2_beta: Vec::with_capacity(capacity),
            gamma: sparse.then(|| Vec::with_capacity(capacity * n_pixels)),
        }
    }

    pub fn beta_draw(&self, s: usize) -> &[f64] {
        &self.beta[s * self.n_pixels..(s + 1) * self.n_pixels]
    }

    pub fn alpha_draw(&self, s: usize) -> &[f64] {
        &self.alpha[s * self.p..(s + 1) * self.p]
    }

    /// Draws of pixel `l` across saved steps.
    pub fn beta_trace(&self, l: usize) -> Vec<f64> {
        (0..self.saved_steps)
            .map(|s| self.beta[s * self.n_pixels + l])
            .collect()
    }

    pub fn alpha_trace(&self, j: usize) -> Vec<f64> {
        (0..self.saved_steps)
            .map(|s| self.alpha[s * self.p + j])
            .collect()
    }

    fn column_means(values: &[f64], width: usize, rows: usize) -> Vec<f64> {
        let mut m = vec![0.0; width];
        for r in 0..rows {
            for (acc, v) in m.iter_mut().zip(&values[r * width..(r + 1) * width]) {
                *acc += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= rows.max(1) as f64);
        m
    }

    pub fn beta_mean(&self) -> Vec<f64> {
        Self::column_means(&self.beta, self.n_pixels, self.saved_steps)
    }

    pub fn alpha_mean(&self) -> Vec<f64> {
        Self::column_means(&self.alpha, self.p, self.saved_steps)
    }

    pub fn beta_median(&self) -> Vec<f64> {
        (0..self.n_pixels)
            .map(|l| median(self.beta_trace(l)))
            .collect()
    }

    pub fn alpha_median(&self) -> Vec<f64> {
        (0..self.p).map(|j| median(self.alpha_trace(j))).collect()
    }

    /// Posterior inclusion probabilities.
    pub fn gamma_mean(&self) -> Option<Vec<f64>> {
        let g = self.gamma.as_ref()?;
        let as_f: Vec<f64> = g.iter().map(|&v| v as f64).collect();
        Some(Self::column_means(&as_f, self.n_pixels, self.saved_steps))
    }

    pub(crate) fn push(
        &mut self,
        beta: &[f64],
        alpha: &[f64],
        s2e: f64,
        s2b: f64,
        gamma: Option<&[bool]>,
    ) {
        self.beta.extend_from_slice(beta);
        self.alpha.extend_from_slice(alpha);
        self.sigma2_eps.push(s2e);
        self.sigma2_beta.push(s2b);
        if let (Some(store), Some(g)) = (self.gamma.as_mut(), gamma) {
            store.extend(g.iter().map(|&b| b as u8));
        }
        self.saved_steps += 1;
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Draw from `IG(shape, scale)`, kept strictly positive.
pub(crate) fn draw_inv_gamma(rng: &mut SoirRng, shape: f64, scale: f64) -> f64 {
    let g = Gamma::new(shape, 1.0 / scale).expect("positive inverse-gamma parameters");
    (1.0 / g.sample(rng)).max(f64::MIN_POSITIVE)
}

pub(crate) fn normal(rng: &mut SoirRng) -> f64 {
    StandardNormal.sample(rng)
}

/// State shared by the GMRF and SparseGMRF samplers: coefficients plus the
/// running residual `r = y − Wα − Xβ`.
pub(crate) struct GibbsState<'a> {
    pub x: &'a DMatrix<f64>,
    pub w: &'a DMatrix<f64>,
    pub y: &'a DVector<f64>,
    pub col_sq: Vec<f64>,
    wtw_chol: Cholesky<f64, Dyn>,
    pub beta: Vec<f64>,
    pub alpha: DVector<f64>,
    /// `Xβ`.
    pub xb: DVector<f64>,
    pub resid: DVector<f64>,
}

impl<'a> GibbsState<'a> {
    pub fn new(data: &'a RegressionDataset, beta: Vec<f64>) -> Result<Self> {
        let x = data.x();
        let w = data.w();
        let wtw_chol = Cholesky::new(w.tr_mul(w))
            .ok_or_else(|| SoirError::RankDeficient("W'W is singular".into()))?;
        let col_sq = x.column_iter().map(|c| c.norm_squared()).collect();
        let xb = x * DVector::from_column_slice(&beta);
        let alpha = wtw_chol.solve(&w.tr_mul(&(data.y() - &xb)));
        let resid = data.y() - &xb - w * &alpha;
        Ok(Self {
            x,
            w,
            y: data.y(),
            col_sq,
            wtw_chol,
            beta,
            alpha,
            xb,
            resid,
        })
    }

    /// `α | · ~ N((W'W)⁻¹W'(y − Xβ), σ²_ε(W'W)⁻¹)`.
    pub fn update_alpha(&mut self, rng: &mut SoirRng, sigma2_eps: f64) {
        let target = self.y - &self.xb;
        let mean = self.wtw_chol.solve(&self.w.tr_mul(&target));
        let z = DVector::from_fn(mean.len(), |_, _| normal(rng));
        let lt = self.wtw_chol.l().transpose();
        let noise = lt.solve_upper_triangular(&z).expect("triangular factor") * sigma2_eps.sqrt();
        self.alpha = mean + noise;
        self.resid = target - self.w * &self.alpha;
    }

    pub fn rss(&self) -> f64 {
        self.resid.norm_squared()
    }

    /// `x_l'(r + x_l β_l)`, the partial-residual inner product of pixel `l`.
    pub fn partial(&self, l: usize) -> f64 {
        self.x.column(l).dot(&self.resid) + self.col_sq[l] * self.beta[l]
    }

    pub fn set_beta(&mut self, l: usize, value: f64) {
        let delta = value - self.beta[l];
        if delta != 0.0 {
            let col = self.x.column(l);
            self.resid.axpy(-delta, &col, 1.0);
            self.xb.axpy(delta, &col, 1.0);
            self.beta[l] = value;
        }
    }
}

pub(crate) fn neighbor_mean(nb: &NeighborhoodMatrix, beta: &[f64], l: usize) -> f64 {
    let js = nb.neighbors(l);
    js.iter().map(|&j| beta[j]).sum::<f64>() / js.len() as f64
}

/// Prior mode `b/(a+1)` of an inverse-gamma distribution.
pub(crate) fn ig_mode((a, b): InvGamma) -> f64 {
    b / (a + 1.0)
}

pub(crate) fn require_grid(data: &RegressionDataset) -> Result<NeighborhoodMatrix> {
    if data.n_pixels() < 2 {
        return Err(SoirError::InvalidInput(
            "GMRF priors need at least two pixels".into(),
        ));
    }
    NeighborhoodMatrix::grid(data.nx(), data.ny())
}

/// Single-site Gibbs sampler for the intrinsic GMRF model.
pub fn gibbs_gmrf(
    data: &RegressionDataset,
    cfg: &GmrfConfig,
    method: MethodId,
) -> Result<(FitResult, McmcChain)> {
    let start = Instant::now();
    data.require_demeaned()?;
    cfg.validate()?;
    let nb = require_grid(data)?;
    let l = data.n_pixels();
    let n = data.n() as f64;
    let rank_p = (l - 1) as f64;
    let mut rng = rng::stream(cfg.seed, 0x6d7f);
    let (mut s2e, mut s2b) = cfg
        .fixed_variances
        .unwrap_or((ig_mode(cfg.prior_eps), ig_mode(cfg.prior_beta)));
    let init_sd = s2b.sqrt();
    let beta0: Vec<f64> = (0..l).map(|_| init_sd * normal(&mut rng)).collect();
    let mut st = GibbsState::new(data, beta0)?;
    let mut order: Vec<usize> = (0..l).collect();
    let capacity = (cfg.iterations - cfg.burnin) / cfg.thin;
    let mut chain = McmcChain::new(l, data.p(), capacity, false);
    let mut last_fc = cfg.prior_beta;
    for t in 0..cfg.iterations {
        st.update_alpha(&mut rng, s2e);
        let fc_eps = (cfg.prior_eps.0 + n / 2.0, cfg.prior_eps.1 + st.rss() / 2.0);
        let fc_beta = (
            cfg.prior_beta.0 + rank_p / 2.0,
            cfg.prior_beta.1 + nb.quad_form(&st.beta).max(0.0) / 2.0,
        );
        if cfg.fixed_variances.is_none() {
            s2e = draw_inv_gamma(&mut rng, fc_eps.0, fc_eps.1);
            s2b = draw_inv_gamma(&mut rng, fc_beta.0, fc_beta.1);
        }
        order.shuffle(&mut rng);
        for &px in &order {
            let d = nb.degree(px) as f64;
            let prec = st.col_sq[px] / s2e + d / s2b;
            let mean = (st.partial(px) / s2e + d / s2b * neighbor_mean(&nb, &st.beta, px)) / prec;
            let draw = mean + normal(&mut rng) / prec.sqrt();
            st.set_beta(px, draw);
        }
        if is_saved(t, cfg.burnin, cfg.thin) {
            chain.push(&st.beta, st.alpha.as_slice(), s2e, s2b, None);
            last_fc = (
                cfg.prior_beta.0 + rank_p / 2.0,
                cfg.prior_beta.1 + nb.quad_form(&st.beta).max(0.0) / 2.0,
            );
        }
    }
    let mut fit = FitResult::new(
        method,
        chain.alpha_mean(),
        image_from(data, chain.beta_mean())?,
    );
    fit.internal_coefficients = fit.beta_hat.values().to_vec();
    fit.residual_variance = chain.sigma2_eps.iter().sum::<f64>() / chain.saved_steps as f64;
    fit.hyperparameters.insert(
        "sigma2_beta".into(),
        chain.sigma2_beta.iter().sum::<f64>() / chain.saved_steps as f64,
    );
    fit.metadata
        .insert("saved_steps".into(), chain.saved_steps as f64);
    fit.prior = Some(PriorSummary::InverseGamma {
        prior: cfg.prior_beta,
        full_conditional: last_fc,
    });
    fit.runtime_seconds = start.elapsed().as_secs_f64();
    Ok((fit, chain))
}

/// Batch-means Monte-Carlo standard error of the mean of `v`.
pub fn mc_standard_error(v: &[f64]) -> f64 {
    let n = v.len();
    let b = ((n as f64).sqrt() as usize).max(1);
    let batches = n / b;
    if batches < 2 {
        return f64::NAN;
    }
    let means: Vec<f64> = (0..batches)
        .map(|k| v[k * b..(k + 1) * b].iter().sum::<f64>() / b as f64)
        .collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}
