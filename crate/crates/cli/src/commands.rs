use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;
use soir::estimators::{fit_method, spline_basis_matrix};
use soir::image::{demean_images, Image2D, MethodId};
use soir::io::{load_dataset, load_image, save_chain, save_image_csv, Container};
use soir::kernels::{rank_one_eigenimages, EigenimageOptions};
use soir::measures::{
    m_projection, m_projection_wavelets, m_smoothness_image, m_sparsity, measure_fit,
    MeasureContext, MeasureReport,
};
use soir::rng::derive_seed;
use soir::sim::{run_study, spline_penalty_for, StudyRow, TRUTH};
use soir::uncertainty::{band_for, flag_significant};

use crate::config::RunConfig;
use crate::heatmap;
use crate::CliError;

fn require_file(p: &Option<PathBuf>, key: &str) -> Result<PathBuf, CliError> {
    let p = p
        .clone()
        .ok_or_else(|| CliError::Config(format!("'{key}' is required")))?;
    if !p.is_file() {
        return Err(CliError::Input(format!(
            "{key}: no such file {}",
            p.display()
        )));
    }
    Ok(p)
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Runtime(e.to_string()))?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, CliError> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

fn stem(m: MethodId) -> String {
    m.as_str().to_ascii_lowercase()
}

#[derive(Serialize)]
struct Failure {
    method: MethodId,
    stage: &'static str,
    message: String,
}

/// Fits every configured method to a dataset and writes, per method, the
/// fit (JSON), its measures (CSV) and its band (container holding `β̂`,
/// lower, upper and the significance mask).
pub fn cmd_fit(cfg: &RunConfig) -> Result<(), CliError> {
    let images = require_file(&cfg.fit.images, "fit.images")?;
    let response = require_file(&cfg.fit.response, "fit.response")?;
    if cfg.methods.is_empty() {
        return Err(CliError::Config("no methods selected".into()));
    }
    let data = load_dataset(&images, &response).map_err(|e| CliError::Input(e.to_string()))?;
    let data = demean_images(data).map_err(|e| CliError::Input(e.to_string()))?;
    prepare_out(&cfg.out)?;
    let settings = cfg.estimators.seeded(cfg.seed);
    let mut failures = Vec::new();
    let mut fitted = 0;
    for (i, &method) in cfg.methods.iter().enumerate() {
        let (fit, chain) = match fit_method(method, &data, &settings) {
            Ok(f) => f,
            Err(e) => {
                eprintln!("{method}: fit failed: {e}");
                failures.push(Failure {
                    method,
                    stage: "fit",
                    message: e.to_string(),
                });
                continue;
            }
        };
        fitted += 1;
        let name = stem(method);
        write_json(&fit, &cfg.out.join(format!("{name}.fit.json")))?;
        let penalty = spline_penalty_for(method, &settings, data.nx(), data.ny());
        let report = measure_fit(
            &fit,
            &MeasureContext {
                bases: &[],
                spline_penalty: penalty.as_ref(),
            },
        );
        let mut w = csv_writer(&cfg.out.join(format!("{name}.measures.csv")))?;
        w.write_record(MeasureReport::csv_header(&[]))
            .map_err(csv_err)?;
        w.write_record(report.csv_record(&[])).map_err(csv_err)?;
        w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
        let band_seed = derive_seed(cfg.seed, 1000 + i as u64);
        match band_for(
            &data,
            &fit,
            chain.as_ref(),
            &settings,
            cfg.fit.bootstrap_resamples,
            band_seed,
            cfg.fit.level,
        ) {
            Ok(band) => {
                let mask = flag_significant(&band);
                let c = Container::from_images(&[
                    fit.beta_hat.clone(),
                    band.lower.clone(),
                    band.upper.clone(),
                    mask.clone(),
                ])
                .map_err(|e| CliError::Runtime(e.to_string()))?;
                c.save(&cfg.out.join(format!("{name}.band.soir")))
                    .map_err(|e| CliError::Runtime(e.to_string()))?;
                if cfg.fit.mask_csv {
                    save_image_csv(&mask, &cfg.out.join(format!("{name}.mask.csv")))
                        .map_err(|e| CliError::Runtime(e.to_string()))?;
                }
            }
            Err(e) => {
                eprintln!("{method}: band failed: {e}");
                failures.push(Failure {
                    method,
                    stage: "band",
                    message: e.to_string(),
                });
            }
        }
        if let (true, Some(chain)) = (cfg.fit.save_chains, chain.as_ref()) {
            save_chain(
                chain,
                data.nx(),
                data.ny(),
                &cfg.out.join(format!("{name}.trace_beta.soir")),
                &cfg.out.join(format!("{name}.trace_scalars.soir")),
            )
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        }
    }
    if !failures.is_empty() {
        write_json(&failures, &cfg.out.join("failures.json"))?;
    }
    if fitted == 0 {
        return Err(CliError::AllFailed(format!(
            "all {} methods failed",
            cfg.methods.len()
        )));
    }
    Ok(())
}

/// Runs the study for each configured coefficient image.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.simulate.kinds.is_empty() {
        return Err(CliError::Config("no coefficient images selected".into()));
    }
    for &kind in &cfg.simulate.kinds {
        cfg.scenario(kind)
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    prepare_out(&cfg.out)?;
    let heat_dir = cfg.out.join("heatmaps");
    if cfg.simulate.heatmaps {
        prepare_out(&heat_dir)?;
    }
    for &kind in &cfg.simulate.kinds {
        let results = run_study(&cfg.scenario(kind), &cfg.methods, &cfg.estimators)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let csv_path = cfg.out.join(format!("study_{kind}.csv"));
        results
            .write_csv(create(&csv_path)?)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        write_json(
            &results.summary(),
            &cfg.out.join(format!("summary_{kind}.json")),
        )?;
        for f in &results.failures {
            eprintln!(
                "{kind}: replication {} {}: {}",
                f.replication, f.method, f.message
            );
        }
        let side = cfg.simulate.side;
        let nan = || Image2D::new(side, side, vec![f64::NAN; side * side]).expect("valid grid");
        let mut records = vec![results.truth.clone().unwrap_or_else(nan)];
        for &m in &cfg.methods {
            let est = results
                .median_estimates
                .iter()
                .find(|(k, _)| *k == m)
                .map(|(_, i)| i.clone());
            records.push(est.unwrap_or_else(nan));
        }
        Container::from_images(&records)
            .and_then(|c| c.save(&cfg.out.join(format!("estimates_{kind}.soir"))))
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        if cfg.simulate.heatmaps {
            if let Some(t) = &results.truth {
                heatmap::save(t, &cfg.out.join(format!("truth_{kind}.png")))?;
            }
            for (m, img) in cfg.methods.iter().zip(&records[1..]) {
                heatmap::save(img, &heat_dir.join(format!("{kind}_{}.png", stem(*m))))?;
            }
        }
        eprintln!("{kind}: wrote {}", csv_path.display());
    }
    Ok(())
}

fn pcs_basis(path: &Path, count: usize, nx: usize, ny: usize) -> Result<DMatrix<f64>, CliError> {
    let c = Container::load(path).map_err(|e| CliError::Input(e.to_string()))?;
    if (c.nx, c.ny) != (nx, ny) {
        return Err(CliError::Input(
            "covariates do not match the image grid".into(),
        ));
    }
    let n = c.records.len();
    let mut x = DMatrix::from_fn(n, nx * ny, |i, j| c.records[i][j]);
    for mut col in x.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    let k = count.min(n).min(nx).min(ny);
    let eig = rank_one_eigenimages(&x, nx, ny, k, &EigenimageOptions::default())
        .map_err(|e| CliError::Input(e.to_string()))?;
    Ok(eig.basis_matrix())
}

/// Measures of a standalone image: one smoothness and one sparsity row,
/// then one projection row per requested basis.
pub fn cmd_measure(cfg: &RunConfig) -> Result<(), CliError> {
    let path = require_file(&cfg.measure.image, "measure.image")?;
    for b in &cfg.measure.bases {
        if !["splines", "wavelets", "pcs"].contains(&b.as_str()) {
            return Err(CliError::Config(format!("unknown basis '{b}'")));
        }
    }
    let covariates = if cfg.measure.bases.iter().any(|b| b == "pcs") {
        Some(require_file(&cfg.measure.covariates, "measure.covariates")?)
    } else {
        None
    };
    let img = load_image(&path).map_err(|e| CliError::Input(e.to_string()))?;
    let mut rows: Vec<(String, String, Option<f64>)> = vec![
        (
            "smoothness".into(),
            String::new(),
            m_smoothness_image(&img).ok(),
        ),
        (
            "sparsity".into(),
            String::new(),
            m_sparsity(img.values()).ok(),
        ),
    ];
    for b in &cfg.measure.bases {
        let v = match b.as_str() {
            "splines" => {
                let basis = spline_basis_matrix(img.nx(), img.ny(), &cfg.estimators.splines)
                    .map_err(|e| CliError::Input(e.to_string()))?;
                m_projection(&img, &basis).ok()
            }
            "wavelets" => {
                if !img.is_square_power_of_two() {
                    return Err(CliError::Input(
                        "wavelet basis needs a square power-of-two image".into(),
                    ));
                }
                m_projection_wavelets(&img).ok()
            }
            _ => {
                let p = covariates.as_ref().expect("checked above");
                m_projection(&img, &pcs_basis(p, cfg.measure.pcs, img.nx(), img.ny())?).ok()
            }
        };
        rows.push(("projection".into(), b.clone(), v));
    }
    prepare_out(&cfg.out)?;
    let mut w = csv_writer(&cfg.out.join("measures.csv"))?;
    w.write_record(["measure", "basis", "value"])
        .map_err(csv_err)?;
    for (m, b, v) in rows {
        w.write_record([m, b, v.map(|x| format!("{x}")).unwrap_or_default()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))
}

fn read_study(path: &Path) -> Result<Vec<StudyRow>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Input(e.to_string()))?;
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Input(e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["replication", "method", "metric", "value"] {
        return Err(CliError::Input(format!(
            "{} is not a study table",
            path.display()
        )));
    }
    rdr.records()
        .enumerate()
        .map(|(i, r)| {
            let r = r.map_err(|e| CliError::Input(e.to_string()))?;
            let bad = || CliError::Input(format!("{}: malformed row {}", path.display(), i + 2));
            Ok(StudyRow {
                replication: r[0].parse().map_err(|_| bad())?,
                method: r[1].to_string(),
                metric: r[2].to_string(),
                value: r[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

fn median_sd(mut v: Vec<f64>) -> (f64, f64) {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let med = if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    };
    let mean = v.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        f64::NAN
    };
    (med, sd)
}

/// Aggregates a study table into medians per method and metric, plus a
/// Markdown table of the error medians.
pub fn cmd_report(cfg: &RunConfig) -> Result<(), CliError> {
    let input = require_file(&cfg.report.input, "report.input")?;
    let rows = read_study(&input)?;
    let mut groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.method, r.metric))
            .or_default()
            .push(r.value);
    }
    prepare_out(&cfg.out)?;
    let mut w = csv_writer(&cfg.out.join("report.csv"))?;
    w.write_record(["method", "metric", "count", "median", "sd"])
        .map_err(csv_err)?;
    let mut errors: BTreeMap<String, [Option<f64>; 2]> = BTreeMap::new();
    for ((method, metric), v) in &groups {
        let (med, sd) = median_sd(v.clone());
        w.write_record([
            method.clone(),
            metric.clone(),
            v.len().to_string(),
            format!("{med}"),
            format!("{sd}"),
        ])
        .map_err(csv_err)?;
        let slot = match metric.as_str() {
            "est_error" => 0,
            "pred_error" => 1,
            _ => continue,
        };
        errors.entry(method.clone()).or_default()[slot] = Some(med);
    }
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut md = create(&cfg.out.join("report.md"))?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    let mut text = String::from(
        "| method | median estimation error | median prediction error |\n|---|---|---|\n",
    );
    for (m, [e, p]) in errors.iter().filter(|(m, _)| m.as_str() != TRUTH) {
        text.push_str(&format!("| {m} | {} | {} |\n", fmt(*e), fmt(*p)));
    }
    md.write_all(text.as_bytes())
        .and_then(|_| md.flush())
        .map_err(|e| CliError::Runtime(e.to_string()))
}
