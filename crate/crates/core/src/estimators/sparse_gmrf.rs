use std::time::Instant;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cv::{all_folds, mse, pick_best, response_scale, CvConfig};
use super::gmrf::{is_saved, normal, require_grid, validate_schedule, GibbsState, McmcChain};
use super::image_from;
use crate::error::{Result, SoirError};
use crate::image::{FitResult, MethodId, NeighborhoodMatrix, PriorSummary, RegressionDataset};
use crate::rng;

/// One hyperparameter setting `(a, b, σ²_ε, σ²_β)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparseSetting {
    pub a: f64,
    pub b: f64,
    pub sigma2_eps: f64,
    pub sigma2_beta: f64,
}

/// How the discrete hyperparameter prior is counted for the prior measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridCount {
    /// Every `(a, b, σ²_ε, σ²_β)` combination.
    AllCombinations,
    /// Only the `σ²_β` candidates.
    SigmaBetaOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseGmrfConfig {
    pub ising_a_grid: Vec<f64>,
    pub ising_b_grid: Vec<f64>,
    pub sigma_eps_grid: Vec<f64>,
    pub sigma_beta_grid: Vec<f64>,
    pub cv_iterations: usize,
    pub cv_burnin: usize,
    pub cv: CvConfig,
    pub final_iterations: usize,
    pub final_burnin: usize,
    pub final_thin: usize,
    pub seed: u64,
    pub grid_count: GridCount,
    /// Skip cross-validation and run the final chain at this setting.
    pub forced: Option<SparseSetting>,
}

impl Default for SparseGmrfConfig {
    fn default() -> Self {
        Self {
            ising_a_grid: vec![-4.0, -2.0, -0.5],
            ising_b_grid: vec![0.1, 0.5, 1.5],
            sigma_eps_grid: vec![1e-5, 1e-3, 1e-1],
            sigma_beta_grid: vec![1e-5, 1e-3, 1e-1],
            cv_iterations: 250,
            cv_burnin: 100,
            cv: CvConfig::default(),
            final_iterations: 5000,
            final_burnin: 500,
            final_thin: 20,
            seed: 0,
            grid_count: GridCount::AllCombinations,
            forced: None,
        }
    }
}

impl SparseGmrfConfig {
    /// Settings in preference order: `a`, then `b`, `σ²_ε`, `σ²_β`.
    pub fn settings(&self) -> Vec<SparseSetting> {
        let mut out = Vec::new();
        for &a in &self.ising_a_grid {
            for &b in &self.ising_b_grid {
                for &sigma2_eps in &self.sigma_eps_grid {
                    for &sigma2_beta in &self.sigma_beta_grid {
                        out.push(SparseSetting {
                            a,
                            b,
                            sigma2_eps,
                            sigma2_beta,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        validate_schedule(self.cv_iterations, self.cv_burnin, 1)?;
        validate_schedule(self.final_iterations, self.final_burnin, self.final_thin)?;
        let sigmas = self.sigma_eps_grid.iter().chain(&self.sigma_beta_grid);
        if sigmas.clone().any(|&s| !(s > 0.0)) {
            return Err(SoirError::InvalidInput(
                "variance grids must be positive".into(),
            ));
        }
        if self.forced.is_none() && self.settings().is_empty() {
            return Err(SoirError::InvalidInput("empty hyperparameter grid".into()));
        }
        Ok(())
    }
}

/// Log odds of `γ_l = 1` against `γ_l = 0` given everything else, with
/// `β_l` integrated out, and the Gaussian `(mean, precision)` of `β_l` when
/// included. `partial` is `x_l'(y − Wα − X_{−l}β_{−l})`.
pub fn inclusion_log_odds(
    setting: &SparseSetting,
    col_sq: f64,
    partial: f64,
    selected_neighbors: usize,
    unselected_neighbors: usize,
    selected_sum: f64,
) -> (f64, f64, f64) {
    let (mu0, tau2) = if selected_neighbors > 0 {
        let k = selected_neighbors as f64;
        (selected_sum / k, setting.sigma2_beta / k)
    } else {
        (0.0, setting.sigma2_beta)
    };
    let prec = col_sq / setting.sigma2_eps + 1.0 / tau2;
    let mean = (partial / setting.sigma2_eps + mu0 / tau2) / prec;
    let log_bf = -0.5 * (tau2 * prec).ln() + 0.5 * (mean * mean * prec - mu0 * mu0 / tau2);
    let prior = setting.a + setting.b * (selected_neighbors as f64 - unselected_neighbors as f64);
    (prior + log_bf, mean, prec)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Spike-and-slab Gibbs chain with fixed variances.
pub fn sparse_gmrf_chain(
    data: &RegressionDataset,
    nb: &NeighborhoodMatrix,
    setting: &SparseSetting,
    iterations: usize,
    burnin: usize,
    thin: usize,
    seed: u64,
) -> Result<McmcChain> {
    validate_schedule(iterations, burnin, thin)?;
    let l = data.n_pixels();
    let mut rng = rng::stream(seed, 0x5a17);
    let sd_b = setting.sigma2_beta.sqrt();
    let mut gamma: Vec<bool> = (0..l).map(|_| rng.random_bool(0.5)).collect();
    let beta0: Vec<f64> = gamma
        .iter()
        .map(|&g| if g { sd_b * normal(&mut rng) } else { 0.0 })
        .collect();
    let mut st = GibbsState::new(data, beta0)?;
    let mut order: Vec<usize> = (0..l).collect();
    let mut chain = McmcChain::new(l, data.p(), (iterations - burnin) / thin, true);
    for t in 0..iterations {
        st.update_alpha(&mut rng, setting.sigma2_eps);
        order.shuffle(&mut rng);
        for &px in &order {
            let (mut n1, mut n0, mut sum) = (0, 0, 0.0);
            for &j in nb.neighbors(px) {
                if gamma[j] {
                    n1 += 1;
                    sum += st.beta[j];
                } else {
                    n0 += 1;
                }
            }
            let (log_odds, mean, prec) =
                inclusion_log_odds(setting, st.col_sq[px], st.partial(px), n1, n0, sum);
            let on = rng.random::<f64>() < sigmoid(log_odds);
            gamma[px] = on;
            let value = if on {
                mean + normal(&mut rng) / prec.sqrt()
            } else {
                0.0
            };
            st.set_beta(px, value);
        }
        if is_saved(t, burnin, thin) {
            chain.push(
                &st.beta,
                st.alpha.as_slice(),
                setting.sigma2_eps,
                setting.sigma2_beta,
                Some(&gamma),
            );
        }
    }
    Ok(chain)
}

/// SparseGMRF: hyperparameters by cross-validation with short chains, then
/// one long chain at the selected setting.
pub fn gibbs_sparse_gmrf(
    data: &RegressionDataset,
    cfg: &SparseGmrfConfig,
) -> Result<(FitResult, McmcChain)> {
    let start = Instant::now();
    data.require_demeaned()?;
    cfg.validate()?;
    let nb = require_grid(data)?;
    let settings = cfg.settings();
    let mut cv_chains = 0usize;
    let mut cv_loss = f64::NAN;
    let chosen = match cfg.forced {
        Some(s) => s,
        None => {
            let folds = all_folds(data, &cfg.cv)?;
            let mut losses = vec![0.0; settings.len()];
            for (si, s) in settings.iter().enumerate() {
                for (fi, f) in folds.iter().enumerate() {
                    let seed = rng::derive_seed(cfg.seed, (si * folds.len() + fi) as u64 + 1);
                    cv_chains += 1;
                    let chain = sparse_gmrf_chain(
                        &f.train,
                        &nb,
                        s,
                        cfg.cv_iterations,
                        cfg.cv_burnin,
                        1,
                        seed,
                    )?;
                    let a = DVector::from_vec(chain.alpha_mean());
                    let b = DVector::from_vec(chain.beta_mean());
                    let pred = &f.test_w * a + &f.test_x * b;
                    losses[si] += mse(&f.test_y, &pred) / folds.len() as f64;
                }
            }
            let best = pick_best(&losses, response_scale(data.y()))
                .ok_or_else(|| SoirError::Degenerate("every SparseGMRF setting diverged".into()))?;
            cv_loss = losses[best];
            settings[best]
        }
    };
    let chain = sparse_gmrf_chain(
        data,
        &nb,
        &chosen,
        cfg.final_iterations,
        cfg.final_burnin,
        cfg.final_thin,
        rng::derive_seed(cfg.seed, 0),
    )?;
    let mut fit = FitResult::new(
        MethodId::SparseGmrf,
        chain.alpha_mean(),
        image_from(data, chain.beta_mean())?,
    );
    let gbar = chain.gamma_mean().expect("sparse chain stores γ");
    if chain
        .gamma
        .as_ref()
        .is_some_and(|g| g.iter().all(|&v| v == 0))
    {
        fit.warnings
            .push("Ising field collapsed to all zeros".into());
    }
    fit.internal_coefficients = gbar.clone();
    fit.selection = Some(gbar);
    fit.residual_variance = chosen.sigma2_eps;
    fit.hyperparameters.insert("a".into(), chosen.a);
    fit.hyperparameters.insert("b".into(), chosen.b);
    fit.hyperparameters
        .insert("sigma2_eps".into(), chosen.sigma2_eps);
    fit.hyperparameters
        .insert("sigma2_beta".into(), chosen.sigma2_beta);
    fit.metadata.insert("cv_chains".into(), cv_chains as f64);
    fit.metadata.insert("cv_loss".into(), cv_loss);
    fit.metadata
        .insert("saved_steps".into(), chain.saved_steps as f64);
    let candidates = match cfg.grid_count {
        GridCount::AllCombinations => settings.len(),
        GridCount::SigmaBetaOnly => cfg.sigma_beta_grid.len(),
    };
    fit.prior = Some(PriorSummary::DiscreteGrid { candidates });
    fit.runtime_seconds = start.elapsed().as_secs_f64();
    Ok((fit, chain))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::gmrf::mc_standard_error;
    use crate::estimators::gmrf::tests::{exact_posterior, random_data};

    fn short(cfg: SparseGmrfConfig) -> SparseGmrfConfig {
        SparseGmrfConfig {
            cv_iterations: 20,
            cv_burnin: 10,
            final_iterations: 60,
            final_burnin: 20,
            final_thin: 2,
            ..cfg
        }
    }

    #[test]
    fn strongly_negative_field_excludes_everything() {
        let data = random_data(11, 20, 4, 0.1);
        let forced = SparseSetting {
            a: -50.0,
            b: 0.5,
            sigma2_eps: 1e-1,
            sigma2_beta: 1e-3,
        };
        let (fit, chain) = gibbs_sparse_gmrf(
            &data,
            &short(SparseGmrfConfig {
                forced: Some(forced),
                ..Default::default()
            }),
        )
        .unwrap();
        assert!(chain.gamma.as_ref().unwrap().iter().all(|&g| g == 0));
        assert!(fit.beta_hat.values().iter().all(|&v| v == 0.0));
        assert!(fit.warnings.iter().any(|w| w.contains("collapsed")));
    }

    #[test]
    fn always_included_field_is_the_gmrf_posterior() {
        let data = random_data(12, 50, 4, 0.3);
        let s = SparseSetting {
            a: 50.0,
            b: 0.0,
            sigma2_eps: 0.05,
            sigma2_beta: 0.2,
        };
        let nb = NeighborhoodMatrix::grid(4, 4).unwrap();
        let chain = sparse_gmrf_chain(&data, &nb, &s, 40_200, 200, 4, 3).unwrap();
        assert!(chain.gamma.as_ref().unwrap().iter().all(|&g| g == 1));
        let (mean, _) = exact_posterior(&data, s.sigma2_eps, s.sigma2_beta);
        for l in 0..16 {
            let tr = chain.beta_trace(l);
            let m = tr.iter().sum::<f64>() / tr.len() as f64;
            assert!(
                (m - mean[l]).abs() < 3.0 * mc_standard_error(&tr),
                "pixel {l}"
            );
        }
    }

    #[test]
    fn inclusion_odds_match_quadrature() {
        // 1×2 grid with b = 0: the γ_l update depends on the ratio of the
        // integrated likelihood to the excluded likelihood only.
        let s = SparseSetting {
            a: -0.7,
            b: 0.0,
            sigma2_eps: 0.3,
            sigma2_beta: 0.8,
        };
        for &(col_sq, partial, n1, sum) in &[
            (2.0, 1.1, 0usize, 0.0),
            (3.5, -0.4, 1, 0.6),
            (0.0, 0.0, 1, -1.0),
        ] {
            let (lo, mean, prec) = inclusion_log_odds(&s, col_sq, partial, n1, 1 - n1, sum);
            let (mu0, tau2) = if n1 > 0 {
                (sum, s.sigma2_beta)
            } else {
                (0.0, s.sigma2_beta)
            };
            // ∫ N(β; μ0, τ²) exp(−(s β² − 2cβ)/(2σ²)) dβ by the trapezoid rule
            let f = |b: f64| {
                (-(b - mu0).powi(2) / (2.0 * tau2)).exp()
                    / (2.0 * std::f64::consts::PI * tau2).sqrt()
                    * (-(col_sq * b * b - 2.0 * partial * b) / (2.0 * s.sigma2_eps)).exp()
            };
            let (lo_b, hi_b, m) = (-20.0, 20.0, 200_000);
            let h = (hi_b - lo_b) / m as f64;
            let integral: f64 = (0..=m)
                .map(|i| {
                    let w = if i == 0 || i == m { 0.5 } else { 1.0 };
                    w * f(lo_b + i as f64 * h)
                })
                .sum::<f64>()
                * h;
            assert!((lo - (s.a + integral.ln())).abs() < 1e-8);
            // posterior of β_l under inclusion: mean and precision by moments
            let m1: f64 = (0..=m)
                .map(|i| {
                    let b = lo_b + i as f64 * h;
                    b * f(b)
                })
                .sum::<f64>()
                * h
                / integral;
            let m2: f64 = (0..=m)
                .map(|i| {
                    let b = lo_b + i as f64 * h;
                    b * b * f(b)
                })
                .sum::<f64>()
                * h
                / integral;
            assert!((m1 - mean).abs() < 1e-7);
            assert!(((m2 - m1 * m1) - 1.0 / prec).abs() < 1e-7);
        }
    }

    #[test]
    fn cv_runs_one_chain_per_setting_and_fold() {
        let data = random_data(13, 25, 4, 0.2);
        let cfg = short(SparseGmrfConfig::default());
        let (fit, chain) = gibbs_sparse_gmrf(&data, &cfg).unwrap();
        assert_eq!(fit.metadata["cv_chains"], 405.0);
        assert_eq!(chain.saved_steps, 20);
        assert!(matches!(
            fit.prior,
            Some(PriorSummary::DiscreteGrid { candidates: 81 })
        ));
        let (again, _) = gibbs_sparse_gmrf(&data, &cfg).unwrap();
        assert_eq!(fit.hyperparameters, again.hyperparameters);
        assert_eq!(fit.beta_hat.values(), again.beta_hat.values());
    }
}
