use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bounds::BoundConstants;
use crate::datagen::DesignDist;
use crate::error::{Error, Result};
use crate::spectra::Family;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Example1,
    Example2,
    NtkExample,
    CustomLinear,
    CustomNtk,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Example1 => "example1",
            Scenario::Example2 => "example2",
            Scenario::NtkExample => "ntk_example",
            Scenario::CustomLinear => "custom_linear",
            Scenario::CustomNtk => "custom_ntk",
        }
    }

    pub fn is_ntk(self) -> bool {
        matches!(self, Scenario::NtkExample | Scenario::CustomNtk)
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "example1" => Ok(Scenario::Example1),
            "example2" => Ok(Scenario::Example2),
            "ntk_example" | "ntk" | "example3" => Ok(Scenario::NtkExample),
            "custom_linear" => Ok(Scenario::CustomLinear),
            "custom_ntk" => Ok(Scenario::CustomNtk),
            other => Err(Error::config(
                "scenario",
                format!("unknown scenario `{other}`"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NtkSettings {
    /// Network width m.
    pub width: usize,
    /// Neighborhood radius R; the target sits at distance R from w₀.
    pub radius: f64,
    /// Rows of the held-out sample spanning the target direction.
    pub holdout: usize,
    /// Also run the projected-gradient-ascent attack.
    pub pga: bool,
}

impl Default for NtkSettings {
    fn default() -> Self {
        NtkSettings {
            width: 4096,
            radius: 1.0,
            holdout: 32,
            pga: false,
        }
    }
}

fn default_budget() -> f64 {
    1.0
}

fn default_trials() -> usize {
    200
}

fn default_replicates() -> usize {
    1
}

fn default_two() -> f64 {
    2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    /// Spectrum family; required for the custom scenarios.
    #[serde(default)]
    pub family: Option<Family>,
    pub n_grid: Vec<usize>,
    /// Explicit λ values; when absent each n gets 25 geometric points from
    /// λ_{k*+1}r_{k*}/(10n) to 10λ₁.
    #[serde(default)]
    pub lambda_grid: Option<Vec<f64>>,
    /// Prepend λ = 0 to the default grid.
    #[serde(default)]
    pub include_zero: bool,
    /// Adversarial budget α.
    #[serde(default = "default_budget")]
    pub budget: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Independent designs per n.
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_two")]
    pub b: f64,
    /// Linear truncation p = ⌈p_factor·n⌉ (capped by finite families).
    #[serde(default = "default_two")]
    pub p_factor: f64,
    #[serde(default)]
    pub design: DesignDist,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Fail on the first numerical error instead of recording error rows.
    #[serde(default)]
    pub strict: bool,
    /// Monte Carlo evaluation of the Gaussian-design adversarial risk.
    #[serde(default)]
    pub exact_adversarial: bool,
    /// Full Monte Carlo cross-check of every closed-form risk.
    #[serde(default)]
    pub mc_check: bool,
    #[serde(default)]
    pub constants: BoundConstants,
    #[serde(default)]
    pub ntk: NtkSettings,
}

/// Dotted key path of the entry on the line holding byte `pos`.
fn key_at(src: &str, pos: usize) -> String {
    let mut table = String::new();
    let mut offset = 0;
    for line in src.lines() {
        let t = line.trim();
        if t.starts_with('[') && t.ends_with(']') && offset <= pos {
            table = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
        }
        if pos < offset + line.len() + 1 {
            let key = t.split('=').next().unwrap_or("").trim();
            return match (table.is_empty(), key.is_empty() || t.starts_with('[')) {
                (_, true) if table.is_empty() => "<root>".into(),
                (_, true) => table,
                (true, false) => key.to_string(),
                (false, false) => format!("{table}.{key}"),
            };
        }
        offset += line.len() + 1;
    }
    "<root>".into()
}

impl ExperimentConfig {
    /// A minimal config for `scenario`, every other field at its default.
    pub fn new(scenario: Scenario, n_grid: Vec<usize>) -> Self {
        ExperimentConfig {
            scenario,
            family: None,
            n_grid,
            lambda_grid: None,
            include_zero: false,
            budget: default_budget(),
            trials: default_trials(),
            replicates: default_replicates(),
            master_seed: 0,
            b: default_two(),
            p_factor: default_two(),
            design: DesignDist::Gaussian,
            output: None,
            strict: false,
            exact_adversarial: false,
            mc_check: false,
            constants: BoundConstants::default(),
            ntk: NtkSettings::default(),
        }
    }

    /// The configuration behind `repro <scenario>`.
    pub fn builtin(scenario: Scenario) -> Result<Self> {
        let mut c = match scenario {
            Scenario::Example1 => {
                let mut c = ExperimentConfig::new(scenario, vec![256, 1024, 4096]);
                c.include_zero = true;
                c.replicates = 5;
                c
            }
            Scenario::Example2 => {
                let mut c = ExperimentConfig::new(scenario, vec![128, 256, 512, 1024]);
                c.include_zero = true;
                c.replicates = 5;
                c
            }
            Scenario::NtkExample => {
                let mut c = ExperimentConfig::new(scenario, vec![8, 16, 32]);
                // Replicate spread dominates the Monte Carlo error here.
                c.trials = 500;
                c.replicates = 40;
                c
            }
            Scenario::CustomLinear | Scenario::CustomNtk => {
                return Err(Error::config(
                    "scenario",
                    format!("`{scenario}` has no builtin configuration; use a config file"),
                ))
            }
        };
        c.master_seed = 20_240_601;
        c.output = Some(PathBuf::from(format!("{scenario}.csv")));
        Ok(c)
    }

    pub fn from_toml_str(src: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(src).map_err(|e| {
            let path = e
                .span()
                .map(|s| key_at(src, s.start))
                .unwrap_or_else(|| "<root>".into());
            Error::config(path, e.message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&src)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The spectrum family the scenario runs on.
    pub fn resolved_family(&self) -> Result<Family> {
        match (self.scenario, &self.family) {
            (Scenario::Example1, None) => Ok(Family::Example1),
            (Scenario::Example2, None) => Ok(Family::Example2),
            (Scenario::NtkExample, None) => Ok(Family::NtkExample { s: 0.5, noise: 1.0 }),
            (Scenario::Example1, Some(f @ Family::Example1))
            | (Scenario::Example2, Some(f @ Family::Example2))
            | (Scenario::NtkExample, Some(f @ Family::NtkExample { .. })) => Ok(f.clone()),
            (Scenario::CustomLinear | Scenario::CustomNtk, Some(f)) => Ok(f.clone()),
            (Scenario::CustomLinear | Scenario::CustomNtk, None) => Err(Error::config(
                "family",
                format!("scenario `{}` needs a family", self.scenario),
            )),
            (s, Some(f)) => Err(Error::config(
                "family",
                format!("family `{f}` does not match scenario `{s}`"),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() {
            return Err(Error::config("n_grid", "must be non-empty"));
        }
        for (i, &n) in self.n_grid.iter().enumerate() {
            if n < 2 {
                return Err(Error::config(
                    format!("n_grid[{i}]"),
                    format!("must be at least 2, got {n}"),
                ));
            }
        }
        if self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("n_grid", "must be strictly increasing"));
        }
        if let Some(g) = &self.lambda_grid {
            if g.is_empty() {
                return Err(Error::config("lambda_grid", "must be non-empty"));
            }
            for (i, &l) in g.iter().enumerate() {
                if !(l >= 0.0 && l.is_finite()) {
                    return Err(Error::config(
                        format!("lambda_grid[{i}]"),
                        format!("must be non-negative and finite, got {l}"),
                    ));
                }
            }
            if g.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::config("lambda_grid", "must be sorted increasingly"));
            }
        }
        if !(self.budget >= 0.0 && self.budget.is_finite()) {
            return Err(Error::config(
                "budget",
                format!("must be non-negative, got {}", self.budget),
            ));
        }
        if self.trials < 2 {
            return Err(Error::config(
                "trials",
                format!("must be at least 2, got {}", self.trials),
            ));
        }
        if self.replicates < 1 {
            return Err(Error::config("replicates", "must be at least 1"));
        }
        if !(self.b > 0.0 && self.b.is_finite()) {
            return Err(Error::config(
                "b",
                format!("must be positive, got {}", self.b),
            ));
        }
        if !(self.p_factor >= 1.0 && self.p_factor.is_finite()) {
            return Err(Error::config(
                "p_factor",
                format!("must be at least 1, got {}", self.p_factor),
            ));
        }
        self.constants.validate()?;
        if self.exact_adversarial && self.design != DesignDist::Gaussian {
            return Err(Error::config(
                "exact_adversarial",
                format!("needs design = \"gaussian\", got \"{}\"", self.design),
            ));
        }
        if self.ntk.width == 0 {
            return Err(Error::config("ntk.width", "must be at least 1"));
        }
        if !(self.ntk.radius > 0.0 && self.ntk.radius.is_finite()) {
            return Err(Error::config(
                "ntk.radius",
                format!("must be positive, got {}", self.ntk.radius),
            ));
        }
        if self.ntk.holdout == 0 {
            return Err(Error::config("ntk.holdout", "must be at least 1"));
        }
        if self.scenario.is_ntk() && self.design != DesignDist::Gaussian {
            return Err(Error::config("design", "NTK scenarios use Gaussian inputs"));
        }
        let fam = self.resolved_family()?;
        fam.validate()
            .map_err(|e| Error::config("family", e.to_string()))?;
        Ok(())
    }

    /// Bound constants with the critical-index constant taken from `b`.
    pub fn bound_constants(&self) -> BoundConstants {
        BoundConstants {
            b: self.b,
            ..self.constants
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_full_config() {
        let src = r#"
scenario = "custom_linear"
family = "poly(decay=1.5, weight_decay=2, noise=0.5)"
n_grid = [64, 128, 256]
lambda_grid = [0.0, 0.01, 0.1]
budget = 0.5
trials = 50
replicates = 3
master_seed = 9
output = "out.csv"

[constants]
c1 = 2.0

[ntk]
width = 512
"#;
        let c = ExperimentConfig::from_toml_str(src).unwrap();
        assert_eq!(c.scenario, Scenario::CustomLinear);
        assert_eq!(c.constants.c1, 2.0);
        assert_eq!(c.constants.c2, 1.0);
        assert_eq!(c.ntk.width, 512);
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    fn path_of(src: &str) -> String {
        match ExperimentConfig::from_toml_str(src) {
            Err(Error::Config { path, .. }) => path,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn errors_name_the_field() {
        assert_eq!(
            path_of("scenario = \"example1\"\nn_grid = [10, 5, 20]\n"),
            "n_grid"
        );
        assert_eq!(
            path_of("scenario = \"example1\"\nn_grid = [10]\ntrials = 1\n"),
            "trials"
        );
        assert_eq!(
            path_of("scenario = \"example1\"\nn_grid = [10]\nlambda_grid = [0.1, -1]\n"),
            "lambda_grid[1]"
        );
        assert_eq!(
            path_of("scenario = \"example1\"\nn_grid = [10]\nbudget = \"x\"\n"),
            "budget"
        );
        assert_eq!(
            path_of("scenario = \"example1\"\nn_grid = [10]\n[ntk]\nwidth = -3\n"),
            "ntk.width"
        );
        assert_eq!(
            path_of("scenario = \"example1\"\nn_grid = [10]\n[ntk]\nwdth = 3\n"),
            "ntk.wdth"
        );
        assert_eq!(
            path_of("scenario = \"custom_ntk\"\nn_grid = [10]\n"),
            "family"
        );
        assert_eq!(
            path_of("scenario = \"example1\"\nn_grid = [10]\n[constants]\nc3 = 0\n"),
            "constants.c3"
        );
    }

    #[test]
    fn scenario_names() {
        for s in [
            "example1",
            "example2",
            "ntk_example",
            "custom_linear",
            "custom_ntk",
        ] {
            assert_eq!(s.parse::<Scenario>().unwrap().as_str(), s);
        }
        assert!("example9".parse::<Scenario>().is_err());
        assert!(ExperimentConfig::builtin(Scenario::CustomNtk).is_err());
        ExperimentConfig::builtin(Scenario::Example1)
            .unwrap()
            .validate()
            .unwrap();
        ExperimentConfig::builtin(Scenario::NtkExample)
            .unwrap()
            .validate()
            .unwrap();
    }
}
