//! JSON run configuration.

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;
use serde_json::{Map, Value};

use spectral_flow::flowcore::Method;
use spectral_flow::normfun::FamilySpec;

#[derive(Debug, Clone, PartialEq)]
pub enum Generator {
    RandomPath { dim: usize, degree: usize },
    CrossingPath { crossings: Vec<(f64, i32)> },
    CircleDirac { n: usize, window: (f64, f64) },
    ThetaModel { n: usize, window: (f64, f64) },
    MatrixPolynomial { real: Vec<Vec<Vec<f64>>>, imag: Option<Vec<Vec<Vec<f64>>>>, interval: (f64, f64) },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub generator: Generator,
    pub seed: u64,
    pub conjugate_seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(tag = "density", rename_all = "snake_case", deny_unknown_fields)]
pub enum PsiSpec {
    Cauchy,
    Power { q: f64 },
    Gaussian { s: f64 },
    /// `χ'` of the configured normalizing function.
    ChiPrime,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub integral: f64,
    pub corollary: f64,
    pub crossing_initial_samples: usize,
    pub crossing_max_evaluations: usize,
    pub winding_delta: Option<f64>,
    pub winding_initial_points: Option<usize>,
    pub winding_max_points: Option<usize>,
    pub winding_target_residual: Option<f64>,
    pub winding_max_residual: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            integral: 1e-8,
            corollary: 1e-8,
            crossing_initial_samples: 64,
            crossing_max_evaluations: 100_000,
            winding_delta: None,
            winding_initial_points: None,
            winding_max_points: None,
            winding_target_residual: None,
            winding_max_residual: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: String,
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    scenario: Value,
    methods: Vec<MethodName>,
    #[serde(default)]
    chi: Option<FamilySpec>,
    #[serde(default)]
    psi: Option<PsiSpec>,
    #[serde(default)]
    tolerances: Tolerances,
    #[serde(default)]
    sweep: Option<SweepSpec>,
    #[serde(default)]
    plot_samples: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum MethodName {
    Crossings,
    Winding,
    Integral,
    Corollary,
}

impl From<MethodName> for Method {
    fn from(m: MethodName) -> Self {
        match m {
            MethodName::Crossings => Method::Crossings,
            MethodName::Winding => Method::Winding,
            MethodName::Integral => Method::Integral,
            MethodName::Corollary => Method::Corollary,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: ScenarioSpec,
    pub methods: Vec<Method>,
    pub chi: Option<FamilySpec>,
    pub psi: PsiSpec,
    pub tolerances: Tolerances,
    pub sweep: Option<SweepSpec>,
    pub plot_samples: usize,
    /// The document this was parsed from, kept for sweeps.
    pub source: Value,
}

pub const DEFAULT_PLOT_SAMPLES: usize = 201;

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).context("config is not valid JSON")?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let raw: RawConfig = serde_json::from_value(value.clone()).map_err(|e| anyhow!("config: {e}"))?;
        let scenario = parse_scenario(&raw.scenario)?;
        if raw.methods.is_empty() {
            bail!("config.methods: at least one method is required");
        }
        let mut methods: Vec<Method> = Vec::new();
        for m in raw.methods {
            let m = Method::from(m);
            if methods.contains(&m) {
                bail!("config.methods: {} listed twice", m.name());
            }
            methods.push(m);
        }
        let needs_chi = methods.iter().any(|m| matches!(m, Method::Integral | Method::Winding));
        if needs_chi && raw.chi.is_none() {
            bail!("config.chi: required when the integral or winding method is selected");
        }
        if let Some(chi) = &raw.chi {
            chi.build().map_err(|e| anyhow!("config.chi: {e}"))?;
        }
        let psi = raw.psi.unwrap_or(PsiSpec::Cauchy);
        if psi == PsiSpec::ChiPrime && raw.chi.is_none() {
            bail!("config.psi: chi_prime needs config.chi");
        }
        if let Some(sweep) = &raw.sweep {
            if sweep.values.is_empty() {
                bail!("config.sweep.values: the sweep list is empty");
            }
        }
        let plot_samples = raw.plot_samples.unwrap_or(DEFAULT_PLOT_SAMPLES);
        if plot_samples < 2 {
            bail!("config.plot_samples: need at least 2 samples");
        }
        Ok(Self {
            scenario,
            methods,
            chi: raw.chi,
            psi,
            tolerances: raw.tolerances,
            sweep: raw.sweep,
            plot_samples,
            source: value,
        })
    }

    /// Replaces the scenario seed in both the parsed and the source form.
    pub fn override_seed(&mut self, seed: u64) {
        self.scenario.seed = seed;
        if let Some(obj) = self.source.get_mut("scenario").and_then(Value::as_object_mut) {
            obj.insert("seed".into(), Value::from(seed));
        }
    }

    /// This configuration with one swept parameter replaced.
    pub fn with_parameter(&self, parameter: &str, value: &Value) -> Result<Self> {
        let mut doc = self.source.clone();
        doc.as_object_mut().expect("config is an object").remove("sweep");
        let root = doc.as_object_mut().unwrap();
        match parameter {
            "chi" | "psi" => {
                root.insert(parameter.into(), value.clone());
            }
            "quad_points" => {
                let tol = root
                    .entry("tolerances")
                    .or_insert_with(|| Value::Object(Map::new()))
                    .as_object_mut()
                    .ok_or_else(|| anyhow!("config.tolerances: expected an object"))?;
                tol.insert("winding_initial_points".into(), value.clone());
                tol.insert("winding_max_points".into(), value.clone());
            }
            p if TOLERANCE_KEYS.contains(&p) => {
                root.entry("tolerances")
                    .or_insert_with(|| Value::Object(Map::new()))
                    .as_object_mut()
                    .ok_or_else(|| anyhow!("config.tolerances: expected an object"))?
                    .insert(p.into(), value.clone());
            }
            p => {
                let scenario = root
                    .get_mut("scenario")
                    .and_then(Value::as_object_mut)
                    .ok_or_else(|| anyhow!("config.scenario: expected an object"))?;
                let generator = scenario.get("generator").and_then(Value::as_str).unwrap_or_default();
                if !allowed_keys(generator).contains(&p) || p == "generator" {
                    bail!("config.sweep.parameter: `{p}` is not a parameter of the {generator} generator");
                }
                scenario.insert(p.into(), value.clone());
            }
        }
        Self::from_value(doc)
    }
}

const TOLERANCE_KEYS: [&str; 9] = [
    "integral",
    "corollary",
    "crossing_initial_samples",
    "crossing_max_evaluations",
    "winding_delta",
    "winding_initial_points",
    "winding_max_points",
    "winding_target_residual",
    "winding_max_residual",
];

fn allowed_keys(generator: &str) -> &'static [&'static str] {
    match generator {
        "random_path" => &["generator", "seed", "conjugate_seed", "dim", "degree"],
        "crossing_path" => &["generator", "seed", "conjugate_seed", "crossings"],
        "circle_dirac" | "theta_model" => &["generator", "seed", "conjugate_seed", "n", "window"],
        "matrix_polynomial" => &["generator", "seed", "conjugate_seed", "coefficients", "imag", "interval"],
        _ => &[],
    }
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| anyhow!("config.scenario.{key}: missing"))
}

fn typed<T: for<'de> Deserialize<'de>>(obj: &Map<String, Value>, key: &str) -> Result<T> {
    serde_json::from_value(field(obj, key)?.clone()).map_err(|e| anyhow!("config.scenario.{key}: {e}"))
}

fn typed_or<T: for<'de> Deserialize<'de>>(obj: &Map<String, Value>, key: &str, default: T) -> Result<T> {
    if obj.contains_key(key) {
        typed(obj, key)
    } else {
        Ok(default)
    }
}

fn parse_scenario(value: &Value) -> Result<ScenarioSpec> {
    let obj = value
        .as_object()
        .ok_or_else(|| anyhow!("config.scenario: expected an object"))?;
    let name: String = typed(obj, "generator")?;
    let allowed = allowed_keys(&name);
    if allowed.is_empty() {
        bail!(
            "config.scenario.generator: unknown generator `{name}` (expected random_path, crossing_path, \
             circle_dirac, theta_model or matrix_polynomial)"
        );
    }
    if let Some(extra) = obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        bail!("config.scenario.{extra}: not a parameter of the {name} generator");
    }
    let seed = typed_or(obj, "seed", 0_u64)?;
    let conjugate_seed = typed_or(obj, "conjugate_seed", None::<u64>)?;
    let generator = match name.as_str() {
        "random_path" => {
            let dim: usize = typed(obj, "dim")?;
            let degree: usize = typed(obj, "degree")?;
            if dim == 0 {
                bail!("config.scenario.dim: must be positive");
            }
            if degree == 0 {
                bail!("config.scenario.degree: must be positive");
            }
            Generator::RandomPath { dim, degree }
        }
        "crossing_path" => Generator::CrossingPath {
            crossings: typed(obj, "crossings")?,
        },
        "circle_dirac" => Generator::CircleDirac {
            n: typed(obj, "n")?,
            window: typed_or(obj, "window", (0.5, 1.5))?,
        },
        "theta_model" => Generator::ThetaModel {
            n: typed(obj, "n")?,
            window: typed_or(obj, "window", (0.1, 0.9))?,
        },
        "matrix_polynomial" => Generator::MatrixPolynomial {
            real: typed(obj, "coefficients")?,
            imag: typed_or(obj, "imag", None)?,
            interval: typed_or(obj, "interval", (0.0, 1.0))?,
        },
        _ => unreachable!(),
    };
    Ok(ScenarioSpec {
        generator,
        seed,
        conjugate_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn base() -> Value {
        json!({
            "scenario": {"generator": "crossing_path", "crossings": [[0.25, 1]]},
            "methods": ["crossings", "integral"],
            "chi": {"family": "chi_p", "p": 2}
        })
    }

    #[test]
    fn parses_minimal() {
        let c = RunConfig::from_value(base()).unwrap();
        assert_eq!(c.methods, vec![Method::Crossings, Method::Integral]);
        assert_eq!(c.psi, PsiSpec::Cauchy);
        assert_eq!(c.tolerances, Tolerances::default());
        assert_eq!(
            c.scenario.generator,
            Generator::CrossingPath {
                crossings: vec![(0.25, 1)]
            }
        );
    }

    #[test]
    fn missing_chi_names_field() {
        let mut v = base();
        v.as_object_mut().unwrap().remove("chi");
        let err = RunConfig::from_value(v).unwrap_err().to_string();
        assert!(err.contains("config.chi"), "{err}");
    }

    #[test]
    fn unknown_fields_are_named() {
        let mut v = base();
        v["scenario"]["n"] = json!(4);
        let err = RunConfig::from_value(v).unwrap_err().to_string();
        assert!(err.contains("config.scenario.n"), "{err}");

        let mut v = base();
        v["tolerances"] = json!({"integrl": 1e-6});
        let err = RunConfig::from_value(v).unwrap_err().to_string();
        assert!(err.contains("integrl"), "{err}");
    }

    #[test]
    fn empty_methods_and_sweep_rejected() {
        let mut v = base();
        v["methods"] = json!([]);
        assert!(RunConfig::from_value(v).is_err());
        let mut v = base();
        v["sweep"] = json!({"parameter": "chi", "values": []});
        let err = RunConfig::from_value(v).unwrap_err().to_string();
        assert!(err.contains("config.sweep.values"), "{err}");
    }

    #[test]
    fn sweep_substitution() {
        let v = json!({
            "scenario": {"generator": "circle_dirac", "n": 8},
            "methods": ["corollary"],
            "sweep": {"parameter": "n", "values": [8, 16]}
        });
        let c = RunConfig::from_value(v).unwrap();
        let c16 = c.with_parameter("n", &json!(16)).unwrap();
        assert_eq!(
            c16.scenario.generator,
            Generator::CircleDirac {
                n: 16,
                window: (0.5, 1.5)
            }
        );
        assert!(c16.sweep.is_none());
        assert!(c.with_parameter("dim", &json!(3)).is_err());
        let q = c.with_parameter("quad_points", &json!(128)).unwrap();
        assert_eq!(q.tolerances.winding_max_points, Some(128));
    }

    #[test]
    fn seed_override() {
        let v = json!({
            "scenario": {"generator": "random_path", "dim": 3, "degree": 2, "seed": 1},
            "methods": ["crossings"]
        });
        let mut c = RunConfig::from_value(v).unwrap();
        c.override_seed(99);
        assert_eq!(c.scenario.seed, 99);
        assert_eq!(c.source["scenario"]["seed"], json!(99));
    }
}
