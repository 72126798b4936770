//! Experiment configuration (TOML) and its static validation.

use std::fmt;
use std::path::PathBuf;

use moire_radiance::cumulant::CUMULANT_SITE_LIMIT;
use moire_radiance::exact::EXACT_SITE_LIMIT;
use moire_radiance::lattice::{build_triangular, doped_configuration, ordered_filling, random_filling};
use moire_radiance::{Doping, Error as CoreError, LatticeConfiguration, ModelParameters, Pattern};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub lattice: LatticeSection,
    #[serde(default)]
    pub model: ModelSection,
    pub initial: InitialSection,
    #[serde(default)]
    pub doping: DopingSection,
    pub solver: SolverSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub seeds: SeedSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    pub n_rows: usize,
    pub n_cols: usize,
    pub a_over_lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default)]
    pub eps_dd: f64,
    #[serde(default)]
    pub tunneling_t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialKind {
    Ordered,
    Random,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub kind: InitialKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<Pattern>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_x: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DopingSection {
    #[serde(default)]
    pub f_e: f64,
    /// Compare every point against its maximally doped twin (`f_e = 1 - f_x`).
    #[serde(default)]
    pub complementary: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverChoice {
    Exact,
    Cumulant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub kind: SolverChoice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<u8>,
    pub t_max: f64,
    pub dt_out: f64,
    pub rtol: f64,
    /// Defaults to `rtol / 100`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atol: Option<f64>,
}

impl SolverSection {
    pub fn atol(&self) -> f64 {
        self.atol.unwrap_or(self.rtol * 1e-2)
    }
}

/// Parameter grids; an empty grid falls back to the single base value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eps_dd: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub f_x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub patterns: Vec<Pattern>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub f_e: Vec<f64>,
    /// Lattice sizes `[n_rows, n_cols]`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sizes: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSection {
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "one")]
    pub n_realizations: usize,
}

fn one() -> usize {
    1
}

impl Default for SeedSection {
    fn default() -> Self {
        Self {
            base_seed: 0,
            n_realizations: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    /// Traces and spectra.
    Csv,
    /// Summary.
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directory: Option<PathBuf>,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
    /// Write the collective decay spectrum with time-integrated populations
    /// (exact solver only).
    #[serde(default)]
    pub spectra: bool,
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: None,
            formats: default_formats(),
            spectra: false,
        }
    }
}

/// One validation finding, tied to a dotted config path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl Diagnostic {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration:\n{}", .0.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Diagnostic>),
}

/// Initial exciton arrangement of one sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Initial {
    Ordered { pattern: Pattern },
    Random { f_x: f64 },
}

impl Initial {
    pub fn label(&self) -> String {
        match self {
            Initial::Ordered { pattern } => pattern.name().to_string(),
            Initial::Random { f_x } => format!("random{f_x:.4}"),
        }
    }

    pub fn nominal_f_x(&self) -> f64 {
        match self {
            Initial::Ordered { pattern } => pattern.fraction(),
            Initial::Random { f_x } => *f_x,
        }
    }
}

/// Electron doping of one sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DopingLevel {
    Fraction { f_e: f64 },
    Complementary,
}

impl DopingLevel {
    pub fn is_undoped(&self) -> bool {
        matches!(self, DopingLevel::Fraction { f_e } if *f_e == 0.0)
    }

    pub fn label(&self) -> String {
        match self {
            DopingLevel::Fraction { f_e } if *f_e == 0.0 => "undoped".into(),
            DopingLevel::Fraction { f_e } => format!("fe{f_e:.4}"),
            DopingLevel::Complementary => "fe_compl".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text)?;
        let diagnostics = config.validate();
        if diagnostics.is_empty() {
            Ok(config)
        } else {
            Err(ConfigError::Invalid(diagnostics))
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn sizes(&self) -> Vec<(usize, usize)> {
        if self.sweep.sizes.is_empty() {
            vec![(self.lattice.n_rows, self.lattice.n_cols)]
        } else {
            self.sweep.sizes.iter().map(|s| (s[0], s[1])).collect()
        }
    }

    pub fn eps_values(&self) -> Vec<f64> {
        if self.sweep.eps_dd.is_empty() {
            vec![self.model.eps_dd]
        } else {
            self.sweep.eps_dd.clone()
        }
    }

    /// Initial arrangements; empty when the section is incomplete.
    pub fn initials(&self) -> Vec<Initial> {
        match self.initial.kind {
            InitialKind::Full => vec![Initial::Ordered { pattern: Pattern::Full }],
            InitialKind::Ordered if !self.sweep.patterns.is_empty() => self
                .sweep
                .patterns
                .iter()
                .map(|&pattern| Initial::Ordered { pattern })
                .collect(),
            InitialKind::Ordered => self.initial.pattern.map(|pattern| Initial::Ordered { pattern }).into_iter().collect(),
            InitialKind::Random if !self.sweep.f_x.is_empty() => {
                self.sweep.f_x.iter().map(|&f_x| Initial::Random { f_x }).collect()
            }
            InitialKind::Random => self.initial.f_x.map(|f_x| Initial::Random { f_x }).into_iter().collect(),
        }
    }

    pub fn dopings(&self) -> Vec<DopingLevel> {
        if self.doping.complementary {
            return vec![DopingLevel::Fraction { f_e: 0.0 }, DopingLevel::Complementary];
        }
        if self.sweep.f_e.is_empty() {
            vec![DopingLevel::Fraction { f_e: self.doping.f_e }]
        } else {
            self.sweep.f_e.iter().map(|&f_e| DopingLevel::Fraction { f_e }).collect()
        }
    }

    pub fn n_realizations(&self, initial: &Initial) -> usize {
        match initial {
            Initial::Random { .. } => self.seeds.n_realizations,
            Initial::Ordered { .. } => 1,
        }
    }

    pub fn solver_order(&self) -> u8 {
        self.solver.order.unwrap_or(3)
    }

    pub fn model_params(&self, eps_dd: f64) -> ModelParameters {
        ModelParameters {
            eps_dd,
            tunneling_t: self.model.tunneling_t,
            ..Default::default()
        }
    }

    /// Full static validation; an empty list means the experiment can run.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let mut push = |field: &str, message: String| out.push(Diagnostic::new(field, message));

        if self.name.trim().is_empty() {
            push("name", "must not be empty".into());
        } else if !self.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            push("name", "use only ASCII letters, digits, '-', '_' and '.'".into());
        }

        let size_field = if self.sweep.sizes.is_empty() { "lattice" } else { "sweep.sizes" };
        let sizes = self.sizes();
        for (k, &(r, c)) in sizes.iter().enumerate() {
            if sizes[..k].contains(&(r, c)) {
                push(size_field, format!("size {r}x{c} listed twice"));
            }
        }
        for &(r, c) in &sizes {
            if let Err(e) = build_triangular(r, c, self.lattice.a_over_lambda) {
                push(size_field, format!("{r}x{c}: {e}"));
            }
        }

        let eps_field = if self.sweep.eps_dd.is_empty() { "model.eps_dd" } else { "sweep.eps_dd" };
        for &eps in &self.eps_values() {
            if let Err(e) = self.model_params(eps).validate() {
                push(eps_field, e.to_string());
            }
        }

        match self.initial.kind {
            InitialKind::Full => {
                if self.initial.pattern.is_some() || self.initial.f_x.is_some() {
                    push("initial", "kind = \"full\" takes neither pattern nor f_x".into());
                }
                if !self.sweep.patterns.is_empty() || !self.sweep.f_x.is_empty() {
                    push("sweep", "kind = \"full\" cannot sweep patterns or f_x".into());
                }
            }
            InitialKind::Ordered => {
                if self.initial.pattern.is_none() && self.sweep.patterns.is_empty() {
                    push("initial.pattern", "ordered initial state needs a pattern (or sweep.patterns)".into());
                }
                if self.initial.f_x.is_some() || !self.sweep.f_x.is_empty() {
                    push("initial.f_x", "ordered initial states take their filling from the pattern".into());
                }
            }
            InitialKind::Random => {
                if self.initial.f_x.is_none() && self.sweep.f_x.is_empty() {
                    push("initial.f_x", "random initial state needs f_x (or sweep.f_x)".into());
                }
                if self.initial.pattern.is_some() || !self.sweep.patterns.is_empty() {
                    push("initial.pattern", "random initial states take no pattern".into());
                }
                for &f in self.sweep.f_x.iter().chain(&self.initial.f_x) {
                    if !(0.0..=1.0).contains(&f) {
                        push("initial.f_x", format!("{f} outside [0, 1]"));
                    }
                }
            }
        }

        let doped = self.doping.complementary || self.doping.f_e != 0.0 || self.sweep.f_e.iter().any(|&f| f != 0.0);
        if doped && self.initial.kind == InitialKind::Random {
            push("doping", "doping needs an ordered exciton pattern".into());
        }
        if self.doping.complementary && (self.doping.f_e != 0.0 || !self.sweep.f_e.is_empty()) {
            push("doping.complementary", "set either complementary or f_e values, not both".into());
        }
        let fe_field = if self.sweep.f_e.is_empty() { "doping.f_e" } else { "sweep.f_e" };
        for &f_e in self.sweep.f_e.iter().chain(std::iter::once(&self.doping.f_e)) {
            if !(0.0..=1.0).contains(&f_e) {
                push(fe_field, format!("{f_e} outside [0, 1]"));
                continue;
            }
            for init in self.initials() {
                let f_x = init.nominal_f_x();
                if f_x + f_e > 1.0 + 1e-9 {
                    push(
                        &format!("initial.f_x + {fe_field}"),
                        format!("f_x = {f_x:.4} plus f_e = {f_e:.4} exceeds one particle per site"),
                    );
                }
            }
        }

        let s = &self.solver;
        if !(s.t_max > 0.0 && s.t_max.is_finite()) {
            push("solver.t_max", "must be positive".into());
        }
        if !(s.dt_out > 0.0 && s.dt_out <= s.t_max) {
            push("solver.dt_out", "must be positive and at most t_max".into());
        }
        if !(s.rtol > 0.0 && s.rtol < 1.0) {
            push("solver.rtol", "must lie in (0, 1)".into());
        }
        if s.atol.is_some_and(|a| a.is_nan() || a <= 0.0) {
            push("solver.atol", "must be positive".into());
        }
        match s.kind {
            SolverChoice::Exact if s.order.is_some() => {
                push("solver.order", "only the cumulant solver takes an order".into());
            }
            SolverChoice::Cumulant if !matches!(self.solver_order(), 2 | 3) => {
                push("solver.order", format!("{} is not a supported closure order (2 or 3)", self.solver_order()));
            }
            SolverChoice::Cumulant if self.output.spectra => {
                push("output.spectra", "decay spectra need the exact solver".into());
            }
            _ => {}
        }

        if self.seeds.n_realizations == 0 {
            push("seeds.n_realizations", "must be at least 1".into());
        } else if self.seeds.n_realizations > 1 && self.initial.kind != InitialKind::Random {
            push("seeds.n_realizations", "only random initial states have realisations".into());
        }
        if self.output.formats.is_empty() {
            push("output.formats", "no output format selected".into());
        }

        // configuration-level checks: commensurability, overfilling, solver guards
        if out.is_empty() {
            for &(r, c) in &sizes {
                for init in self.initials() {
                    for doping in self.dopings() {
                        match self.configuration(r, c, &init, &doping, self.seeds.base_seed) {
                            Ok(lat) => {
                                if let Err(e) = self.size_guard(&lat) {
                                    out.push(Diagnostic::new("solver.kind", format!("{r}x{c}: {e}")));
                                }
                            }
                            Err(e) => out.push(Diagnostic::new(
                                "initial",
                                format!("{r}x{c} {} {}: {e}", init.label(), doping.label()),
                            )),
                        }
                    }
                }
            }
            out.dedup();
        }
        out
    }

    fn size_guard(&self, lat: &LatticeConfiguration) -> Result<(), CoreError> {
        let active = lat.n_active();
        match self.solver.kind {
            SolverChoice::Exact if active > EXACT_SITE_LIMIT => Err(CoreError::ExactSizeGuard {
                active,
                limit: EXACT_SITE_LIMIT,
            }),
            SolverChoice::Cumulant if active > CUMULANT_SITE_LIMIT => Err(CoreError::CumulantSizeGuard {
                active,
                limit: CUMULANT_SITE_LIMIT,
            }),
            _ => Ok(()),
        }
    }

    /// The lattice configuration of one run.
    pub fn configuration(
        &self,
        n_rows: usize,
        n_cols: usize,
        initial: &Initial,
        doping: &DopingLevel,
        seed: u64,
    ) -> Result<LatticeConfiguration, CoreError> {
        let base = build_triangular(n_rows, n_cols, self.lattice.a_over_lambda)?;
        match (initial, doping) {
            (Initial::Random { f_x }, _) => random_filling(&base, *f_x, seed),
            (Initial::Ordered { pattern }, d) if d.is_undoped() => ordered_filling(&base, *pattern),
            (Initial::Ordered { pattern }, d) => {
                // same commensurability rule as the undoped twin
                ordered_filling(&base, *pattern)?;
                let doping = match d {
                    DopingLevel::Complementary => Doping::Complementary,
                    DopingLevel::Fraction { f_e } => Doping::Fraction(*f_e),
                };
                doped_configuration(&base, *pattern, doping)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "t"
[lattice]
n_rows = 2
n_cols = 3
a_over_lambda = 0.05
[initial]
kind = "full"
[solver]
kind = "exact"
t_max = 1.0
dt_out = 0.01
rtol = 1e-8
"#;

    #[test]
    fn minimal_config_parses_and_round_trips() {
        let c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let again = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn unknown_key_is_rejected_with_location() {
        let text = MINIMAL.replace("rtol = 1e-8", "rtol = 1e-8\nrtoll = 1");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("rtoll"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn overfilled_doping_names_both_fields() {
        let text = MINIMAL.replace("kind = \"full\"", "kind = \"ordered\"\npattern = \"half\"")
            .replace("[solver]", "[doping]\nf_e = 0.75\n[solver]")
            .replace("n_rows = 2", "n_rows = 4");
        let c: ExperimentConfig = toml::from_str(&text).unwrap();
        let d = c.validate();
        assert!(d.iter().any(|d| d.field.contains("f_x") && d.field.contains("f_e")), "{d:?}");
    }

    #[test]
    fn exact_on_six_by_six_suggests_cumulant() {
        let text = MINIMAL.replace("n_rows = 2", "n_rows = 6").replace("n_cols = 3", "n_cols = 6");
        let c: ExperimentConfig = toml::from_str(&text).unwrap();
        let d = c.validate();
        assert_eq!(d.len(), 1, "{d:?}");
        assert!(d[0].message.contains("cumulant"), "{}", d[0]);
    }
}
