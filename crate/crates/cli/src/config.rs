//! Run configuration: TOML schema, overrides, validation and hashing.
//!
//! Every section and key is optional; missing values take the defaults below.
//! Unknown keys are errors. Validation reports every violation with its
//! dotted field path.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use snls_core::norms::{admissible_pair, AdmissiblePair};
use snls_core::{GridSpec, PotentialSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSection {
    pub dim: usize,
    pub n: usize,
    pub half_length: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            dim: 1,
            n: 1024,
            half_length: 64.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PotentialSection {
    pub amplitude: f64,
    pub width: f64,
    pub center: [f64; 3],
}

impl Default for PotentialSection {
    fn default() -> Self {
        Self {
            amplitude: 1.0,
            width: 1.0,
            center: [0.0; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicsSection {
    pub epsilon: f64,
    /// Defaults to the mass-critical `1 + 4/d`.
    pub power: Option<f64>,
    pub nonlinearity: bool,
    pub damping_factor: f64,
    pub potential: PotentialSection,
}

impl Default for PhysicsSection {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            power: None,
            nonlinearity: true,
            damping_factor: snls_core::propagators::DEFAULT_DAMPING_FACTOR,
            potential: PotentialSection::default(),
        }
    }
}

/// Initial datum `amplitude * exp(-a |x|^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatumSection {
    pub amplitude: f64,
    pub a: f64,
}

impl Default for DatumSection {
    fn default() -> Self {
        Self { amplitude: 1.0, a: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    Stratonovich,
    Ito,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NumericsSection {
    pub dt: f64,
    pub horizon: f64,
    pub snapshots: usize,
    pub substeps: usize,
    pub scheme: SchemeKind,
    pub ito_stability: f64,
}

impl Default for NumericsSection {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            horizon: 1.0,
            snapshots: 10,
            substeps: 1024,
            scheme: SchemeKind::Stratonovich,
            ito_stability: snls_core::propagators::DEFAULT_ITO_STABILITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StochasticSection {
    pub master_seed: u64,
    pub n_paths: usize,
    pub workers: usize,
}

impl Default for StochasticSection {
    fn default() -> Self {
        Self {
            master_seed: 0,
            n_paths: 16,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExponentsSection {
    /// Defaults to 6 (d=1), 4 (d=2), 3 (d=3).
    pub alpha: Option<f64>,
    pub delta: f64,
    pub x_weight: f64,
    pub z_weight: f64,
    pub w_weight: f64,
    pub e_m: f64,
    pub partition_cap: usize,
}

impl Default for ExponentsSection {
    fn default() -> Self {
        Self {
            alpha: None,
            delta: 0.1,
            x_weight: snls_core::norms::X_WEIGHT,
            z_weight: snls_core::norms::Z_WEIGHT,
            w_weight: snls_core::norms::W_WEIGHT,
            e_m: snls_core::functionals::DEFAULT_E_M,
            partition_cap: snls_core::functionals::DEFAULT_PARTITION_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowKind {
    Free,
    Damped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmoothingKind {
    Global,
    Pointwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoothingSection {
    pub mode: SmoothingKind,
    pub flow: FlowKind,
    pub family_size: usize,
    pub family_seed: u64,
    pub time_step: f64,
    /// Ball radius for the pointwise mode; defaults to 4 potential widths.
    pub radius: Option<f64>,
}

impl Default for SmoothingSection {
    fn default() -> Self {
        Self {
            mode: SmoothingKind::Global,
            flow: FlowKind::Free,
            family_size: 100,
            family_seed: 0,
            time_step: 0.05,
            radius: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DispersiveSection {
    pub flow: FlowKind,
    pub t_min: f64,
    /// Defaults to the wrap time of the datum.
    pub t_max: Option<f64>,
    pub time_step: f64,
}

impl Default for DispersiveSection {
    fn default() -> Self {
        Self {
            flow: FlowKind::Free,
            t_min: 1.0,
            t_max: None,
            time_step: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrichartzKind {
    Linear,
    Nonlinear,
    Strichartz,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrichartzSection {
    pub kind: StrichartzKind,
    pub base_horizon: f64,
    pub sample_step: f64,
    pub homogeneity: bool,
}

impl Default for StrichartzSection {
    fn default() -> Self {
        Self {
            kind: StrichartzKind::Linear,
            base_horizon: 1.0,
            sample_step: 0.05,
            homogeneity: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhiKind {
    Zero,
    Deterministic,
    Adapted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BurkholderSection {
    pub phi: PhiKind,
    pub omega: f64,
    pub rho: f64,
    pub p: f64,
}

impl Default for BurkholderSection {
    fn default() -> Self {
        Self {
            phi: PhiKind::Deterministic,
            omega: 0.0,
            rho: 2.0,
            p: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairKind {
    StrangSelf,
    ItoVsStratonovich,
    Identical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleSection {
    /// Evolution time of the dense-matrix and closed-form checks.
    pub time: f64,
    pub pair: PairKind,
    pub levels: usize,
    pub dt_coarse: f64,
    pub seeds: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            time: 0.25,
            pair: PairKind::StrangSelf,
            levels: 4,
            dt_coarse: 0.04,
            seeds: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub grid: GridSection,
    pub physics: PhysicsSection,
    pub datum: DatumSection,
    pub numerics: NumericsSection,
    pub stochastic: StochasticSection,
    pub exponents: ExponentsSection,
    pub smoothing: SmoothingSection,
    pub dispersive: DispersiveSection,
    pub strichartz: StrichartzSection,
    pub burkholder: BurkholderSection,
    pub oracle: OracleSection,
    pub output: OutputSection,
}

/// Largest number of grid points accepted (`N^d`).
pub const MAX_GRID_POINTS: usize = 1 << 24;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub violations: Vec<String>,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "invalid configuration:")?;
        for v in &self.violations {
            writeln!(f, "  {v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

fn single(msg: String) -> ConfigError {
    ConfigError { violations: vec![msg] }
}

/// Parses `value` as a TOML scalar or array; bare words become strings.
fn parse_override_value(value: &str) -> toml::Value {
    match format!("v = {value}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or(toml::Value::String(value.into())),
        Err(_) => toml::Value::String(value.into()),
    }
}

/// Applies `key.path=value` to the document tree.
pub fn apply_override(tree: &mut toml::Table, assignment: &str) -> Result<(), String> {
    let (path, value) = assignment
        .split_once('=')
        .ok_or_else(|| format!("override `{assignment}` is not of the form key.path=value"))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(format!("override `{assignment}` has an empty key"));
    }
    let mut table = tree;
    for k in &keys[..keys.len() - 1] {
        let entry = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| format!("override `{assignment}`: `{k}` is not a section"))?;
    }
    table.insert(keys[keys.len() - 1].to_string(), parse_override_value(value.trim()));
    Ok(())
}

/// Parses, applies overrides and validates; returns all violations at once.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let mut tree: toml::Table = text.parse().map_err(|e: toml::de::Error| single(format!("syntax: {e}")))?;
    let mut violations = Vec::new();
    for o in overrides {
        if let Err(e) = apply_override(&mut tree, o) {
            violations.push(e);
        }
    }
    let mut unknown = Vec::new();
    let parsed: Result<RunConfig, _> =
        serde_ignored::deserialize(toml::Value::Table(tree), |path| unknown.push(path.to_string()));
    violations.extend(unknown.into_iter().map(|p| format!("{p}: unknown key")));
    let cfg = match parsed {
        Ok(cfg) => cfg,
        Err(e) => {
            violations.push(format!("type: {e}"));
            return Err(ConfigError { violations });
        }
    };
    violations.extend(cfg.violations());
    if violations.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError { violations })
    }
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

fn nonnegative(v: f64) -> bool {
    v.is_finite() && v >= 0.0
}

fn whole_multiple(total: f64, step: f64) -> bool {
    let k = (total / step).round();
    k >= 1.0 && (k * step - total).abs() <= 1e-9 * total
}

impl RunConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut need = |ok: bool, path: &str, msg: &str| {
            if !ok {
                v.push(format!("{path}: {msg}"));
            }
        };
        let g = &self.grid;
        need((1..=3).contains(&g.dim), "grid.dim", "must be 1, 2 or 3");
        need(g.n.is_power_of_two() && g.n >= 8, "grid.n", "must be a power of two >= 8");
        need(positive(g.half_length), "grid.half_length", "must be > 0");
        let points = (1..=3).contains(&g.dim) && g.n.checked_pow(g.dim as u32).is_some_and(|p| p <= MAX_GRID_POINTS);
        need(points, "grid.n", "grid has more than 2^24 points");

        let p = &self.physics;
        need(nonnegative(p.epsilon), "physics.epsilon", "must be >= 0");
        need(p.power.is_none_or(|x| x.is_finite() && x >= 1.0), "physics.power", "must be >= 1");
        need(nonnegative(p.damping_factor), "physics.damping_factor", "must be >= 0");
        need(p.potential.amplitude.is_finite(), "physics.potential.amplitude", "must be finite");
        need(positive(p.potential.width), "physics.potential.width", "must be > 0");
        need(
            p.potential.center.iter().all(|c| c.is_finite()),
            "physics.potential.center",
            "must be finite",
        );

        need(self.datum.amplitude.is_finite(), "datum.amplitude", "must be finite");
        need(positive(self.datum.a), "datum.a", "must be > 0");

        let n = &self.numerics;
        need(positive(n.dt), "numerics.dt", "must be > 0");
        need(positive(n.horizon), "numerics.horizon", "must be > 0");
        need(n.snapshots >= 1, "numerics.snapshots", "must be >= 1");
        if positive(n.dt) && positive(n.horizon) && n.snapshots >= 1 {
            need(
                whole_multiple(n.horizon / n.snapshots as f64, n.dt),
                "numerics.horizon",
                "horizon / snapshots must be a whole number of steps dt",
            );
        }
        need(n.substeps >= 1, "numerics.substeps", "must be >= 1");
        need(positive(n.ito_stability), "numerics.ito_stability", "must be > 0");

        let s = &self.stochastic;
        need(s.n_paths >= 1, "stochastic.n_paths", "must be >= 1");
        need(s.workers >= 1, "stochastic.workers", "must be >= 1");

        let e = &self.exponents;
        if let Some(a) = e.alpha {
            if (1..=3).contains(&g.dim) {
                if let Err(err) = admissible_pair(a, g.dim) {
                    need(false, "exponents.alpha", &err.to_string());
                }
            }
        }
        need(positive(e.delta), "exponents.delta", "must be > 0");
        need(nonnegative(e.x_weight), "exponents.x_weight", "must be >= 0");
        need(nonnegative(e.z_weight), "exponents.z_weight", "must be >= 0");
        need(nonnegative(e.w_weight), "exponents.w_weight", "must be >= 0");
        need(positive(e.e_m), "exponents.e_m", "must be > 0");
        need(e.partition_cap >= 1, "exponents.partition_cap", "must be >= 1");

        let sm = &self.smoothing;
        need(positive(sm.time_step), "smoothing.time_step", "must be > 0");
        if sm.flow == FlowKind::Damped && positive(sm.time_step) && positive(n.dt) {
            need(whole_multiple(sm.time_step, n.dt), "smoothing.time_step", "damped flow needs a whole number of steps dt");
        }
        need(sm.family_size >= 1, "smoothing.family_size", "must be >= 1");
        need(
            sm.radius.is_none_or(|r| positive(r) && r <= g.half_length),
            "smoothing.radius",
            "must be in (0, grid.half_length]",
        );

        let d = &self.dispersive;
        need(positive(d.t_min), "dispersive.t_min", "must be > 0");
        need(positive(d.time_step), "dispersive.time_step", "must be > 0");
        if d.flow == FlowKind::Damped && positive(d.t_min) && positive(d.time_step) && positive(n.dt) {
            need(whole_multiple(d.t_min, n.dt), "dispersive.t_min", "damped flow needs a whole number of steps dt");
            need(whole_multiple(d.time_step, n.dt), "dispersive.time_step", "damped flow needs a whole number of steps dt");
        }
        need(
            d.t_max.is_none_or(|t| t.is_finite() && t >= d.t_min),
            "dispersive.t_max",
            "must be >= dispersive.t_min",
        );

        let st = &self.strichartz;
        need(positive(st.base_horizon), "strichartz.base_horizon", "must be > 0");
        need(positive(st.sample_step), "strichartz.sample_step", "must be > 0");
        if positive(st.base_horizon) && positive(st.sample_step) && positive(n.dt) {
            need(
                whole_multiple(st.base_horizon, st.sample_step) && whole_multiple(st.sample_step, n.dt),
                "strichartz.sample_step",
                "must divide base_horizon and be a whole number of steps dt",
            );
        }

        let b = &self.burkholder;
        need(b.omega.is_finite(), "burkholder.omega", "must be finite");
        need(b.rho.is_finite() && b.rho > 1.0, "burkholder.rho", "must be in (1, inf)");
        need(b.p.is_finite() && b.p >= 2.0, "burkholder.p", "must be in [2, inf)");

        let o = &self.oracle;
        need(positive(o.time), "oracle.time", "must be > 0");
        need(o.levels >= 4, "oracle.levels", "must be >= 4");
        need(positive(o.dt_coarse), "oracle.dt_coarse", "must be > 0");
        need(o.seeds >= 1, "oracle.seeds", "must be >= 1");

        need(!self.output.dir.trim().is_empty(), "output.dir", "must not be empty");
        v
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec::new(self.grid.dim, self.grid.n, self.grid.half_length).expect("validated grid")
    }

    pub fn potential(&self) -> PotentialSpec {
        let p = &self.physics.potential;
        PotentialSpec {
            amplitude: p.amplitude,
            width: p.width,
            center: p.center,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.exponents.alpha.unwrap_or(match self.grid.dim {
            1 => 6.0,
            2 => 4.0,
            _ => 3.0,
        })
    }

    pub fn pair(&self) -> snls_core::Result<AdmissiblePair> {
        admissible_pair(self.alpha(), self.grid.dim)
    }

    /// Config with the fields that must not affect results (worker count,
    /// output location) neutralized.
    pub fn canonical(&self) -> RunConfig {
        let mut c = self.clone();
        c.stochastic.workers = 0;
        c.output.dir = String::new();
        c
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.canonical()).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = parse_config("", &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.alpha(), 6.0);
    }

    #[test]
    fn hash_ignores_key_order_and_workers() {
        let a = parse_config("[grid]\nn = 256\nhalf_length = 16.0\n[physics]\nepsilon = 0.2\n", &[]).unwrap();
        let b = parse_config("[physics]\nepsilon = 0.2\n[grid]\nhalf_length = 16.0\nn = 256\n", &[]).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = parse_config("", &["grid.n=256".into(), "grid.half_length=16.0".into(), "physics.epsilon=0.2".into(), "stochastic.workers=4".into()]).unwrap();
        assert_eq!(a.hash(), c.hash());
        let d = parse_config("[physics]\nepsilon = 0.3\n", &[]).unwrap();
        assert_ne!(a.hash(), d.hash());
    }

    #[test]
    fn all_violations_reported() {
        let err = parse_config("[grid]\nn = 100\nbogus = 1\n[physics]\nepsilon = -1.0\n[extra]\nx = 2\n", &[]).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("physics.epsilon"), "{text}");
        assert!(text.contains("grid.n: must be a power of two"), "{text}");
        assert!(text.contains("grid.bogus: unknown key"), "{text}");
        assert!(text.contains("extra"), "{text}");
        assert!(err.violations.len() >= 4);
    }

    #[test]
    fn overrides_parse_values() {
        let cfg = parse_config("", &["numerics.scheme=ito".into(), "physics.potential.center=[1.0, 0.0, 0.0]".into()]).unwrap();
        assert_eq!(cfg.numerics.scheme, SchemeKind::Ito);
        assert_eq!(cfg.physics.potential.center, [1.0, 0.0, 0.0]);
        assert!(parse_config("", &["nonsense".into()]).is_err());
        assert!(parse_config("", &["grid.n.x=3".into()]).is_err());
    }

    #[test]
    fn inadmissible_alpha_rejected() {
        let err = parse_config("[exponents]\nalpha = 3.0\n", &[]).unwrap_err();
        assert!(err.to_string().contains("exponents.alpha"));
    }
}
