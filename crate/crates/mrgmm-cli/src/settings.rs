//! Run configuration: command-line flags mirroring the run fields, an
//! optional flat key-value config file, and the merge rule (flags win).
//!
//! The config file holds `key = value` lines with `#` comments; keys are the
//! long flag names without the dashes. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::PathBuf;

use mrgmm::experiments::{Example1Spec, Example2Spec, StudyModel, ZShape};
use mrgmm::inference::CiKind;
use serde::Serialize;

/// What the process should do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Estimate,
    Ci,
    Coverage,
    Power,
    Selftest,
}

/// Which moment model/DGP to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelId {
    /// Combining-data model (two-step pipeline). DGP fields: n, rho, sigma,
    /// delta. `sigma = 0` selects the plain bivariate-normal Z.
    Example1,
    /// Linear IV model (one-step 2SLS pipeline). DGP fields: n, delta,
    /// gamma1, gamma2.
    Example2,
    /// Just-identified per-column mean model (data files only).
    Mean,
}

/// Power-grid request `lo:hi:count`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl GridSpec {
    pub fn points(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.lo];
        }
        (0..self.count)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / (self.count - 1) as f64)
            .collect()
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: CommandKind,
    pub model: ModelId,
    pub data: Option<PathBuf>,
    pub n: usize,
    pub rho: f64,
    /// Example-1 lognormal shape; 0 selects the plain normal Z.
    pub sigma: f64,
    /// Misspecification degrees; more than one makes a sweep.
    pub deltas: Vec<f64>,
    pub gamma1: f64,
    pub gamma2: Option<f64>,
    /// Monte Carlo replications (r).
    pub replications: usize,
    /// Bootstrap draws (B).
    pub bootstrap_draws: usize,
    /// Nominal CI levels.
    pub levels: Vec<f64>,
    /// Test level for power studies.
    pub alpha: f64,
    pub seed: u64,
    /// 0 = all available cores.
    pub threads: usize,
    pub out: PathBuf,
    pub ci_kinds: Vec<String>,
    pub theta_grid: Option<GridSpec>,
    /// Also run the HH bootstrap J test in coverage studies.
    pub j_bootstrap: bool,
}

impl RunConfig {
    pub fn kinds(&self) -> Result<Vec<CiKind>, String> {
        let mut kinds = Vec::new();
        for label in &self.ci_kinds {
            let kind = CiKind::parse(label).ok_or_else(|| {
                format!("unknown CI kind '{label}' (expected C, MR, HH*, BN*, MR*)")
            })?;
            if !kinds.contains(&kind) {
                kinds.push(kind);
            }
        }
        if kinds.is_empty() {
            return Err("ci_kinds must name at least one kind".into());
        }
        Ok(kinds)
    }

    /// The study design at one delta (coverage/power commands).
    pub fn study_at(&self, delta: f64) -> Result<StudyModel, String> {
        match self.model {
            ModelId::Example1 => {
                let shape = if self.sigma == 0.0 {
                    ZShape::Normal
                } else if self.sigma > 0.0 {
                    ZShape::Lognormal { sigma: self.sigma }
                } else {
                    return Err("sigma must be >= 0 (0 selects the normal-Z design)".into());
                };
                Ok(StudyModel::Example1(Example1Spec {
                    n: self.n,
                    rho: self.rho,
                    shape,
                    delta,
                }))
            }
            ModelId::Example2 => Ok(StudyModel::Example2(Example2Spec {
                n: self.n,
                delta,
                gamma1: self.gamma1,
                gamma2: self.gamma2,
            })),
            ModelId::Mean => Err("the mean model has no DGP; it is for data files".into()),
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "command",
    "model",
    "data",
    "n",
    "rho",
    "sigma",
    "delta",
    "gamma1",
    "gamma2",
    "r",
    "B",
    "levels",
    "alpha",
    "seed",
    "threads",
    "out",
    "ci-kinds",
    "theta-grid",
    "j-bootstrap",
];

/// Raw string settings from the config file and the command line, merged
/// with command-line values winning.
#[derive(Debug, Default, Clone)]
pub struct RawSettings {
    map: BTreeMap<String, String>,
}

impl RawSettings {
    pub fn from_config_file(text: &str) -> Result<RawSettings, String> {
        let mut map = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("config line {}: expected 'key = value'", lineno + 1))?;
            let key = key.trim();
            let value = value.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(format!("config line {}: unknown key '{key}'", lineno + 1));
            }
            map.insert(key.to_string(), value.to_string());
        }
        Ok(RawSettings { map })
    }

    pub fn set(&mut self, key: &str, value: Option<String>) {
        if let Some(v) = value {
            self.map.insert(key.to_string(), v);
        }
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, String> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| format!("invalid value '{raw}' for --{key}")),
        }
    }

    fn parse_list(&self, key: &str) -> Result<Option<Vec<f64>>, String> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => {
                let mut out = Vec::new();
                for piece in raw.split(',') {
                    let piece = piece.trim();
                    if piece.is_empty() {
                        continue;
                    }
                    out.push(
                        piece
                            .parse::<f64>()
                            .map_err(|_| format!("invalid number '{piece}' in --{key}"))?,
                    );
                }
                if out.is_empty() {
                    return Err(format!("--{key} needs at least one value"));
                }
                Ok(Some(out))
            }
        }
    }

    /// Validates and resolves everything into a [`RunConfig`].
    pub fn resolve(&self) -> Result<RunConfig, String> {
        let command = match self.get("command") {
            None => return Err("missing --command (estimate|ci|coverage|power|selftest)".into()),
            Some("estimate") => CommandKind::Estimate,
            Some("ci") => CommandKind::Ci,
            Some("coverage") => CommandKind::Coverage,
            Some("power") => CommandKind::Power,
            Some("selftest") => CommandKind::Selftest,
            Some(other) => return Err(format!("unknown command '{other}'")),
        };
        let model = match self.get("model").unwrap_or("example1") {
            "example1" => ModelId::Example1,
            "example2" => ModelId::Example2,
            "mean" => ModelId::Mean,
            other => return Err(format!("unknown model '{other}' (example1|example2|mean)")),
        };
        let data = self.get("data").map(PathBuf::from);
        let n: usize = self.parse("n")?.unwrap_or(200);
        if n == 0 {
            return Err("--n must be at least 1".into());
        }
        let rho: f64 = self.parse("rho")?.unwrap_or(0.5);
        if rho.abs() >= 1.0 {
            return Err("--rho must satisfy |rho| < 1".into());
        }
        let sigma: f64 = self.parse("sigma")?.unwrap_or(1.5);
        if sigma < 0.0 || !sigma.is_finite() {
            return Err("--sigma must be >= 0 and finite".into());
        }
        let deltas = self.parse_list("delta")?.unwrap_or_else(|| vec![0.0]);
        if deltas.iter().any(|d| !d.is_finite()) {
            return Err("--delta values must be finite".into());
        }
        let gamma1: f64 = self.parse("gamma1")?.unwrap_or(0.25);
        if gamma1 == 0.0 || !gamma1.is_finite() {
            return Err("--gamma1 must be nonzero and finite".into());
        }
        let gamma2: Option<f64> = self.parse("gamma2")?;
        let replications: usize = self.parse("r")?.unwrap_or(1000);
        if replications == 0 {
            return Err("--r must be at least 1".into());
        }
        let bootstrap_draws: usize = self.parse("B")?.unwrap_or(999);
        let levels = self.parse_list("levels")?.unwrap_or_else(|| vec![0.90, 0.95]);
        if levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
            return Err("--levels must lie strictly inside (0,1)".into());
        }
        let alpha: f64 = self.parse("alpha")?.unwrap_or(0.10);
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err("--alpha must lie strictly inside (0,1)".into());
        }
        let seed: u64 = self.parse("seed")?.unwrap_or(1);
        let threads: usize = self.parse("threads")?.unwrap_or(0);
        let out = PathBuf::from(self.get("out").unwrap_or("out"));
        let ci_kinds: Vec<String> = match self.get("ci-kinds") {
            None => vec!["C", "MR", "HH*", "BN*", "MR*"]
                .into_iter()
                .map(String::from)
                .collect(),
            Some(raw) => raw.split(',').map(|s| s.trim().to_string()).collect(),
        };
        let theta_grid = match self.get("theta-grid") {
            None => None,
            Some(raw) => {
                let parts: Vec<&str> = raw.split(':').collect();
                if parts.len() != 3 {
                    return Err("--theta-grid expects lo:hi:count".into());
                }
                let lo: f64 = parts[0]
                    .parse()
                    .map_err(|_| "invalid lo in --theta-grid".to_string())?;
                let hi: f64 = parts[1]
                    .parse()
                    .map_err(|_| "invalid hi in --theta-grid".to_string())?;
                let count: usize = parts[2]
                    .parse()
                    .map_err(|_| "invalid count in --theta-grid".to_string())?;
                if !(lo < hi) || count < 2 {
                    return Err("--theta-grid needs lo < hi and count >= 2".into());
                }
                Some(GridSpec { lo, hi, count })
            }
        };
        let j_bootstrap: bool = self.parse("j-bootstrap")?.unwrap_or(true);

        let config = RunConfig {
            command,
            model,
            data,
            n,
            rho,
            sigma,
            deltas,
            gamma1,
            gamma2,
            replications,
            bootstrap_draws,
            levels,
            alpha,
            seed,
            threads,
            out,
            ci_kinds,
            theta_grid,
            j_bootstrap,
        };
        config.kinds()?;

        // command-specific requirements
        match config.command {
            CommandKind::Estimate | CommandKind::Ci => {
                if config.data.is_none() {
                    return Err("--data is required for estimate/ci".into());
                }
            }
            CommandKind::Coverage | CommandKind::Power => {
                if config.model == ModelId::Mean {
                    return Err("coverage/power need a DGP model (example1|example2)".into());
                }
                if config.bootstrap_draws == 0 {
                    return Err("--B must be at least 1 for coverage/power".into());
                }
            }
            CommandKind::Selftest => {}
        }
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(pairs: &[(&str, &str)]) -> RawSettings {
        let mut s = RawSettings::default();
        for (k, v) in pairs {
            s.set(k, Some(v.to_string()));
        }
        s
    }

    #[test]
    fn defaults_resolve() {
        let cfg = raw(&[("command", "coverage")]).resolve().unwrap();
        assert_eq!(cfg.command, CommandKind::Coverage);
        assert_eq!(cfg.model, ModelId::Example1);
        assert_eq!(cfg.n, 200);
        assert_eq!(cfg.levels, vec![0.90, 0.95]);
        assert_eq!(cfg.kinds().unwrap().len(), 5);
    }

    #[test]
    fn config_file_rejects_unknown_keys() {
        let err = RawSettings::from_config_file("command = coverage\nbogus = 1\n").unwrap_err();
        assert!(err.contains("unknown key"), "{err}");
    }

    #[test]
    fn config_file_parses_and_cli_overrides() {
        let mut s = RawSettings::from_config_file(
            "# sweep base\ncommand = coverage\nmodel = example1\nn = 100\ndelta = 0,-0.3\n",
        )
        .unwrap();
        s.set("n", Some("250".to_string()));
        let cfg = s.resolve().unwrap();
        assert_eq!(cfg.n, 250);
        assert_eq!(cfg.deltas, vec![0.0, -0.3]);
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        assert!(raw(&[("command", "coverage"), ("rho", "1.5")]).resolve().is_err());
        assert!(raw(&[("command", "coverage"), ("n", "zero")]).resolve().is_err());
        assert!(raw(&[("command", "nonsense")]).resolve().is_err());
        assert!(raw(&[("command", "estimate")]).resolve().is_err()); // missing data
        assert!(raw(&[("command", "coverage"), ("ci-kinds", "C,XX")])
            .resolve()
            .is_err());
    }

    #[test]
    fn sigma_zero_selects_normal_design() {
        let cfg = raw(&[("command", "coverage"), ("sigma", "0")]).resolve().unwrap();
        match cfg.study_at(0.3).unwrap() {
            StudyModel::Example1(spec) => assert_eq!(spec.shape, ZShape::Normal),
            _ => panic!("wrong study"),
        }
    }

    #[test]
    fn grid_spec_points() {
        let g = GridSpec { lo: -1.0, hi: 1.0, count: 5 };
        let pts = g.points();
        assert_eq!(pts.len(), 5);
        assert_eq!(pts[0], -1.0);
        assert_eq!(pts[4], 1.0);
        assert!((pts[2]).abs() < 1e-15);
    }
}
