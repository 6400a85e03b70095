//! Run configuration: profile defaults overlaid with a config file and
//! command-line flags.
//!
//! A config file is either JSON or flat `key = value` lines with dotted
//! keys (`estimators.splines.kx = 12`). Values are read as JSON where
//! possible; bare words are strings and comma-separated words are lists.
//! Keys that do not exist in the defaults are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use soir::estimators::{EstimatorSettings, Profile};
use soir::image::MethodId;
use soir::sim::{CoefImageKind, CoefImageParams, SimScenario};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    /// Image container with one record per observation.
    pub images: Option<PathBuf>,
    /// Response table with a `y` column and optional scalar covariates.
    pub response: Option<PathBuf>,
    pub level: f64,
    pub bootstrap_resamples: usize,
    /// Also write the significance mask as a 0/1 CSV.
    pub mask_csv: bool,
    /// Write MCMC traces of the Bayesian fits.
    pub save_chains: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub kinds: Vec<CoefImageKind>,
    pub n: usize,
    pub snr: f64,
    pub side: usize,
    pub replications: usize,
    pub randomized_locations: bool,
    pub params: CoefImageParams,
    pub heatmaps: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSection {
    pub image: Option<PathBuf>,
    /// Any of `splines`, `wavelets`, `pcs`.
    pub bases: Vec<String>,
    /// Image container the `pcs` basis is computed from.
    pub covariates: Option<PathBuf>,
    pub pcs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    /// Long-format study CSV written by `simulate`.
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub profile: Profile,
    pub methods: Vec<MethodId>,
    pub fit: FitSection,
    pub simulate: SimulateSection,
    pub measure: MeasureSection,
    pub report: ReportSection,
    pub estimators: EstimatorSettings,
}

impl RunConfig {
    pub fn defaults(profile: Profile) -> Self {
        let scenario = match profile {
            Profile::Paper => SimScenario::paper(CoefImageKind::Pca),
            Profile::Desk => SimScenario::desk(CoefImageKind::Pca),
        };
        Self {
            seed: 1,
            out: PathBuf::from("soir-out"),
            profile,
            methods: MethodId::ALL.to_vec(),
            fit: FitSection {
                images: None,
                response: None,
                level: soir::uncertainty::DEFAULT_LEVEL,
                bootstrap_resamples: soir::uncertainty::DEFAULT_RESAMPLES,
                mask_csv: false,
                save_chains: false,
            },
            simulate: SimulateSection {
                kinds: CoefImageKind::ALL.to_vec(),
                n: scenario.n,
                snr: scenario.snr,
                side: scenario.side,
                replications: scenario.replications,
                randomized_locations: false,
                params: CoefImageParams::default(),
                heatmaps: true,
            },
            measure: MeasureSection {
                image: None,
                bases: vec!["splines".into(), "wavelets".into()],
                covariates: None,
                pcs: 5,
            },
            report: ReportSection { input: None },
            estimators: EstimatorSettings::for_profile(profile),
        }
    }

    pub fn scenario(&self, kind: CoefImageKind) -> SimScenario {
        SimScenario {
            n: self.simulate.n,
            snr: self.simulate.snr,
            kind,
            side: self.simulate.side,
            replications: self.simulate.replications,
            master_seed: self.seed,
            randomized_locations: self.simulate.randomized_locations,
            params: self.simulate.params.clone(),
        }
    }
}

/// Flags that override the config file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub profile: Option<Profile>,
}

fn parse_scalar(raw: &str) -> Value {
    let raw = raw.trim();
    if let Ok(v) = serde_json::from_str::<Value>(raw) {
        return v;
    }
    if raw.contains(',') {
        return Value::Array(raw.split(',').map(|p| parse_scalar(p)).collect());
    }
    Value::String(raw.to_string())
}

fn insert_dotted(
    root: &mut Map<String, Value>,
    key: &str,
    value: Value,
    line: usize,
) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').map(str::trim).collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!(
            "line {line}: malformed key '{key}'"
        )));
    }
    let mut node = root;
    for p in &parts[..parts.len() - 1] {
        let entry = node
            .entry(p.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
        node = entry
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("line {line}: '{key}' nests under a value")))?;
    }
    if node
        .insert(parts[parts.len() - 1].to_string(), value)
        .is_some()
    {
        return Err(CliError::Config(format!(
            "line {line}: duplicate key '{key}'"
        )));
    }
    Ok(())
}

/// Parses a config file body into a JSON object.
pub fn parse_config_text(text: &str) -> Result<Value, CliError> {
    if text.trim_start().starts_with('{') {
        let v: Value = serde_json::from_str(text)
            .map_err(|e| CliError::Config(format!("invalid JSON: {e}")))?;
        return Ok(v);
    }
    let mut root = Map::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected 'key = value'", i + 1)))?;
        insert_dotted(&mut root, k.trim(), parse_scalar(v), i + 1)?;
    }
    Ok(Value::Object(root))
}

/// Overlays `over` onto `base`, rejecting keys `base` does not have.
/// Absent optional values (`null` in `base`) accept anything; a single
/// value given for a list becomes a one-element list.
pub fn merge(base: &mut Value, over: &Value, path: &str) -> Result<(), CliError> {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let here = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                let slot = b
                    .get_mut(k)
                    .ok_or_else(|| CliError::Config(format!("unknown key '{here}'")))?;
                merge(slot, v, &here)?;
            }
            Ok(())
        }
        (b @ Value::Array(_), o) if !o.is_array() && !o.is_null() => {
            *b = Value::Array(vec![o.clone()]);
            Ok(())
        }
        (b, o) => {
            *b = o.clone();
            Ok(())
        }
    }
}

/// Profile defaults, then the config file, then the flags.
pub fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let user = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                CliError::Config(format!("cannot read config {}: {e}", p.display()))
            })?;
            parse_config_text(&text)?
        }
        None => Value::Object(Map::new()),
    };
    if !user.is_object() {
        return Err(CliError::Config("config must be an object".into()));
    }
    let profile = match (overrides.profile, user.get("profile")) {
        (Some(p), _) => p,
        (None, Some(Value::String(s))) => s
            .parse()
            .map_err(|e: soir::SoirError| CliError::Config(e.to_string()))?,
        (None, Some(other)) => return Err(CliError::Config(format!("invalid profile {other}"))),
        (None, None) => Profile::Desk,
    };
    let mut base = serde_json::to_value(RunConfig::defaults(profile)).expect("defaults serialize");
    merge(&mut base, &user, "")?;
    let mut cfg: RunConfig = serde_json::from_value(base)
        .map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
    cfg.profile = profile;
    if let Some(s) = overrides.seed {
        cfg.seed = s;
    }
    if let Some(o) = &overrides.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_keys_nest_and_parse() {
        let v = parse_config_text("# comment\nseed = 7\nmethods = splines, wnet\nestimators.splines.kx = 10\nout = results\n")
            .unwrap();
        assert_eq!(v["seed"], 7);
        assert_eq!(v["methods"], serde_json::json!(["splines", "wnet"]));
        assert_eq!(v["estimators"]["splines"]["kx"], 10);
        assert_eq!(v["out"], "results");
        assert!(parse_config_text("seed 7").is_err());
        assert!(parse_config_text("a = 1\na = 2").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        std::fs::write(&p, "estimators.splines.kz = 3\n").unwrap();
        let err = load_config(Some(&p), &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("estimators.splines.kz"));
        std::fs::write(
            &p,
            "{\"seed\": 3, \"methods\": [\"PCR2D\"], \"simulate\": {\"n\": 40}}",
        )
        .unwrap();
        let cfg = load_config(
            Some(&p),
            &Overrides {
                seed: Some(9),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.methods, vec![MethodId::Pcr2d]);
        assert_eq!(cfg.simulate.n, 40);
    }

    #[test]
    fn profile_selects_defaults() {
        let paper = load_config(
            None,
            &Overrides {
                profile: Some(Profile::Paper),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(paper.simulate.side, 64);
        assert_eq!(paper.simulate.replications, 100);
        let desk = load_config(None, &Overrides::default()).unwrap();
        assert_eq!(desk.simulate.side, 32);
        assert_eq!(desk.estimators, EstimatorSettings::desk());
    }
}
