//! Experiment configuration.
//!
//! Values are layered: preset defaults for the chosen experiment, then a TOML
//! key-value file, then `--set key=value` overrides, then dedicated flags.
//! The merged table is deserialized strictly, so unknown keys are errors.

use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use mirror_mcmc::adaptation::TuneSettings;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{ExperimentError, Result};
use crate::variant::{parse_variants, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    PjumpAnalytic,
    OnedSweep,
    CSweep,
    GaussianGrid,
    CorrGaussian,
    Logistic,
    Glmm,
    TrajectoryDemo,
    BurninStudy,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::PjumpAnalytic => "pjump-analytic",
            Self::OnedSweep => "oned-sweep",
            Self::CSweep => "c-sweep",
            Self::GaussianGrid => "gaussian-grid",
            Self::CorrGaussian => "corr-gaussian",
            Self::Logistic => "logistic",
            Self::Glmm => "glmm",
            Self::TrajectoryDemo => "trajectory-demo",
            Self::BurninStudy => "burnin-study",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Shortened runs that finish in minutes on a laptop.
    #[default]
    Desk,
    /// Run lengths and replicate counts of the original studies.
    Paper,
    /// Desk lengths with the exact target moments in place of burn-in estimates.
    OracleMoments,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GlmmModel {
    /// Poisson random-intercept model for seizure counts.
    Epilepsy,
    /// Logistic random-intercept model for drug-use indicators.
    Polypharmacy,
    /// Simulated Poisson model with known parameters.
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub preset: Preset,
    pub seed: u64,
    pub replicates: usize,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
    pub out: PathBuf,
    /// Record wall-clock seconds. Disable for byte-identical reruns.
    pub timing: bool,
    /// Main-chain length (sweeps for block samplers).
    pub iterations: usize,
    pub burnin: usize,
    /// Burn-in segment length for adaptive moment estimation; 0 means one segment.
    pub burnin_segment: usize,
    /// Burn-in random-walk scale; absent means the experiment's default.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burnin_epsilon: Option<f64>,
    /// Use the exact target moments instead of burn-in estimates.
    pub oracle_moments: bool,
    /// Kernel variants, see [`Variant`].
    pub kernels: Vec<String>,
    /// Kernel kinds swept over a scale or reflection grid.
    pub kinds: Vec<String>,
    pub epsilons: Vec<f64>,
    /// Scales at which analytic acceptance rates are checked by simulation.
    pub check_epsilons: Vec<f64>,
    pub cs: Vec<f64>,
    pub dims: Vec<usize>,
    pub targets: Vec<u32>,
    pub tune_adapt: usize,
    pub tune_check: usize,
    pub tune_tolerance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    pub response: String,
    pub observations: usize,
    pub predictors: usize,
    /// Z-score non-binary predictor columns.
    pub standardize: bool,
    pub prior_sd: f64,
    pub model: GlmmModel,
    /// Subjects and observations per subject of a simulated GLMM; 0 picks the model's default shape.
    pub subjects: usize,
    pub per_subject: usize,
    /// Update the shared GLMM block one coordinate at a time.
    pub shared_componentwise: bool,
    pub marginal_bins: usize,
    pub burnin_lengths: Vec<usize>,
    /// Chain length for acceptance-rate checks.
    pub pjump_iterations: usize,
}

/// `n` points `start, start + step, …`, rounded to kill representation noise.
pub fn grid(start: f64, step: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| ((start + step * k as f64) * 1e10).round() / 1e10).collect()
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

impl ExperimentConfig {
    /// Preset defaults for one experiment.
    pub fn defaults(experiment: Experiment, preset: Preset) -> Self {
        let paper = preset == Preset::Paper;
        let pick = |desk: usize, full: usize| if paper { full } else { desk };
        let mut c = Self {
            experiment,
            preset,
            seed: 1,
            replicates: pick(2, 5),
            threads: 0,
            out: PathBuf::from("results").join(experiment.name()),
            timing: true,
            iterations: pick(100_000, 1_000_000),
            burnin: 500,
            burnin_segment: 0,
            burnin_epsilon: None,
            oracle_moments: preset == Preset::OracleMoments,
            kernels: Vec::new(),
            kinds: strings(&["rw", "mirror", "mala", "mirror-mala"]),
            epsilons: Vec::new(),
            check_epsilons: Vec::new(),
            cs: vec![1.0],
            dims: Vec::new(),
            targets: vec![1],
            tune_adapt: 15_000,
            tune_check: 5_000,
            tune_tolerance: 0.02,
            data: None,
            response: "y".into(),
            observations: 1000,
            predictors: 24,
            standardize: true,
            prior_sd: 10.0,
            model: GlmmModel::Epilepsy,
            subjects: 0,
            per_subject: 0,
            shared_componentwise: false,
            marginal_bins: 50,
            burnin_lengths: Vec::new(),
            pjump_iterations: 100_000,
        };
        let grid_kernels = strings(&[
            "RW=rw@tuned",
            "Mirror1/2=mirror@0.5",
            "Mirror1=mirror@1",
            "MALA=mala@tuned",
            "MirrorMALA1/2=mirror-mala@0.5",
            "MirrorMALA1=mirror-mala@1",
        ]);
        match experiment {
            Experiment::PjumpAnalytic => {
                c.epsilons = grid(0.05, 0.05, 100);
                c.check_epsilons = vec![0.4, 0.5, 1.4, 2.1];
                c.iterations = pick(100_000, 10_000_000);
                c.burnin = 10_000;
                c.replicates = pick(1, 3);
                c.oracle_moments = true;
            }
            Experiment::OnedSweep => {
                c.targets = vec![1, 2, 3, 4, 5];
                c.epsilons = if paper { grid(0.05, 0.05, 100) } else { grid(0.1, 0.1, 50) };
            }
            Experiment::CSweep => {
                c.targets = if paper { vec![1, 2, 3, 4, 5] } else { vec![1] };
                c.kinds = strings(&["mirror", "mirror-mala"]);
                c.cs = grid(0.02, 0.02, 100);
                c.epsilons = if paper { vec![0.25, 0.5, 0.75, 1.0, 2.0] } else { vec![0.5] };
            }
            Experiment::GaussianGrid => {
                c.dims = (2..=10).collect();
                c.kernels = grid_kernels;
                c.burnin = 10_000;
            }
            Experiment::CorrGaussian => {
                c.dims = vec![pick(30, 100)];
                c.kernels = grid_kernels;
                c.iterations = pick(100_000, 10_000_000);
                c.burnin = 300_000;
                c.burnin_segment = 50_000;
                c.replicates = pick(1, 5);
            }
            Experiment::Logistic => {
                c.kernels = strings(&[
                    "RW=rw@tuned",
                    "RW (plain)=rw@tuned;plain",
                    "MALA=mala@tuned",
                    "MALA (plain)=mala@tuned;plain",
                    "Mirror1/2=mirror@0.5",
                    "Mirror1=mirror@1",
                    "MirrorMALA1/2=mirror-mala@0.5",
                    "MirrorMALA1=mirror-mala@1",
                ]);
                c.iterations = pick(100_000, 10_000_000);
                c.burnin = 30_000;
                c.burnin_segment = 10_000;
                c.replicates = pick(1, 5);
            }
            Experiment::Glmm => {
                c.kernels = strings(&[
                    "RW=rw@tuned",
                    "MALA=mala@tuned",
                    "Mirror (dense)=mirror@0.5;blocks=dense",
                    "Mirror (sparse)=mirror@0.5;blocks=sparse",
                    "MirrorMALA (dense)=mirror-mala@0.5;blocks=dense",
                    "MirrorMALA (sparse)=mirror-mala@0.5;blocks=sparse",
                ]);
                c.iterations = pick(20_000, 10_000_000);
                c.burnin = pick(100_000, 300_000);
                c.burnin_segment = pick(25_000, 50_000);
                c.replicates = pick(1, 5);
            }
            Experiment::TrajectoryDemo => {
                c.iterations = 100;
                c.burnin = 10_000;
                c.replicates = 1;
            }
            Experiment::BurninStudy => {
                c.dims = vec![2, 10];
                c.kernels = strings(&[
                    "RW=rw@tuned",
                    "Mirror=mirror@0.5",
                    "MALA=mala@tuned",
                    "MirrorMALA=mirror-mala@0.5",
                ]);
                c.burnin_lengths = vec![100, 500, 1_000, 10_000, 100_000];
                c.replicates = pick(1, 5);
            }
        }
        c
    }

    pub fn tune_settings(&self) -> TuneSettings {
        TuneSettings {
            adapt_iterations: self.tune_adapt,
            check_iterations: self.tune_check,
            tolerance: self.tune_tolerance,
        }
    }

    pub fn variants(&self) -> Result<Vec<Variant>> {
        parse_variants(&self.kernels)
    }

    pub fn burnin_segment_len(&self) -> usize {
        if self.burnin_segment == 0 {
            self.burnin
        } else {
            self.burnin_segment.min(self.burnin)
        }
    }

    /// Checks ranges and the fields the chosen experiment relies on.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if self
            .epsilons
            .iter()
            .chain(&self.cs)
            .chain(&self.check_epsilons)
            .any(|v| !(*v > 0.0 && v.is_finite()))
        {
            return bad("epsilons and cs must be positive".into());
        }
        if let Some(e) = self.burnin_epsilon {
            if !(e > 0.0 && e.is_finite()) {
                return bad("burnin-epsilon must be positive".into());
            }
        }
        if !(self.prior_sd > 0.0) {
            return bad("prior-sd must be positive".into());
        }
        if !(self.tune_tolerance > 0.0) || self.tune_check == 0 {
            return bad("tune-check must be positive and tune-tolerance above 0".into());
        }
        if self.marginal_bins < 10 {
            return bad("marginal-bins must be at least 10".into());
        }
        if let Some(t) = self.targets.iter().find(|t| !(1..=5).contains(*t)) {
            return bad(format!("unknown one-dimensional target {t} (expected 1..=5)"));
        }
        let needs_burnin = !self.oracle_moments
            && !matches!(self.experiment, Experiment::PjumpAnalytic | Experiment::BurninStudy);
        if needs_burnin && self.burnin < 100 {
            return bad("burnin must be at least 100".into());
        }
        let empty =
            |name: &str, empty: bool| if empty { bad(format!("{name} must not be empty")) } else { Ok(()) };
        match self.experiment {
            Experiment::PjumpAnalytic => {
                empty("epsilons", self.epsilons.is_empty())?;
                empty("kinds", self.kinds.is_empty())?;
            }
            Experiment::OnedSweep => {
                empty("targets", self.targets.is_empty())?;
                empty("kinds", self.kinds.is_empty())?;
                empty("epsilons", self.epsilons.is_empty())?;
            }
            Experiment::CSweep => {
                empty("targets", self.targets.is_empty())?;
                empty("kinds", self.kinds.is_empty())?;
                empty("epsilons", self.epsilons.is_empty())?;
                empty("cs", self.cs.is_empty())?;
            }
            Experiment::GaussianGrid | Experiment::CorrGaussian => {
                empty("dims", self.dims.is_empty())?;
                if self.dims.contains(&0) {
                    return bad("dims must be positive".into());
                }
                self.variants()?;
            }
            Experiment::BurninStudy => {
                empty("dims", self.dims.is_empty())?;
                empty("burnin-lengths", self.burnin_lengths.is_empty())?;
                if self.burnin_lengths.iter().any(|&b| b < 100) {
                    return bad("burnin-lengths must be at least 100".into());
                }
                self.variants()?;
            }
            Experiment::Logistic | Experiment::Glmm => {
                self.variants()?;
            }
            Experiment::TrajectoryDemo => {}
        }
        if self.experiment == Experiment::Logistic
            && self.data.is_none()
            && (self.observations < 2 || self.predictors == 0)
        {
            return bad("synthetic logistic data needs observations ≥ 2 and predictors ≥ 1".into());
        }
        if self.experiment == Experiment::TrajectoryDemo && self.pjump_iterations < 100 {
            return bad("pjump-iterations must be at least 100".into());
        }
        for k in &self.kinds {
            k.parse::<mirror_mcmc::kernels::KernelKind>()
                .map_err(|_| ExperimentError::Config(format!("unknown kernel kind '{k}'")))?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

/// Command-line level overrides.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub experiment: Option<Experiment>,
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub replicates: Option<usize>,
    pub threads: Option<usize>,
    /// `key=value` pairs; values are TOML literals, bare words become strings.
    pub set: Vec<String>,
}

fn parse_assignment(raw: &str) -> Result<Table> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| ExperimentError::Config(format!("--set expects key=value, got '{raw}'")))?;
    let key = key.trim();
    let value = value.trim();
    let literal = format!("{key} = {value}");
    if let Ok(t) = literal.parse::<Table>() {
        return Ok(t);
    }
    let quoted = format!("{key} = {}", Value::String(value.to_string()));
    quoted.parse::<Table>().map_err(|e| ExperimentError::Config(format!("--set '{raw}': {e}")))
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn read_file(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path)
        .map_err(|e| ExperimentError::Config(format!("cannot read config {}: {e}", path.display())))?;
    text.parse::<Table>().map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))
}

fn take_enum<T: for<'de> Deserialize<'de>>(table: &Table, key: &str) -> Result<Option<T>> {
    table
        .get(key)
        .map(|v| v.clone().try_into::<T>().map_err(|e| ExperimentError::Config(format!("{key}: {e}"))))
        .transpose()
}

/// Resolves the final configuration from all layers and validates it.
pub fn resolve(o: &Overrides) -> Result<ExperimentConfig> {
    let mut user = match &o.config {
        Some(p) => read_file(p)?,
        None => Table::new(),
    };
    for s in &o.set {
        merge(&mut user, parse_assignment(s)?);
    }
    let experiment = match o.experiment {
        Some(e) => e,
        None => take_enum(&user, "experiment")?.ok_or_else(|| {
            ExperimentError::Config("no experiment given (use --experiment or the config file)".into())
        })?,
    };
    let preset = match o.preset {
        Some(p) => p,
        None => take_enum(&user, "preset")?.unwrap_or_default(),
    };
    let defaults = ExperimentConfig::defaults(experiment, preset);
    let mut table = Value::try_from(&defaults)
        .ok()
        .and_then(|v| v.as_table().cloned())
        .expect("defaults serialize to a table");
    merge(&mut table, user);
    table.insert("experiment".into(), Value::String(experiment.name().into()));
    let mut cfg: ExperimentConfig =
        Value::Table(table).try_into().map_err(|e| ExperimentError::Config(e.to_string()))?;
    cfg.preset = preset;
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(p) = &o.out {
        cfg.out = p.clone();
    }
    if let Some(r) = o.replicates {
        cfg.replicates = r;
    }
    if let Some(t) = o.threads {
        cfg.threads = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn over(exp: Experiment, set: &[&str]) -> Overrides {
        Overrides {
            experiment: Some(exp),
            set: set.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }

    #[test]
    fn every_preset_validates() {
        for e in Experiment::value_variants() {
            for p in Preset::value_variants() {
                let cfg = ExperimentConfig::defaults(*e, *p);
                cfg.validate().unwrap_or_else(|err| panic!("{e:?}/{p:?}: {err}"));
            }
        }
    }

    #[test]
    fn layers_apply_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "experiment = \"c-sweep\"\nseed = 5\niterations = 2000\n").unwrap();
        let o = Overrides {
            config: Some(path),
            seed: Some(9),
            set: vec!["iterations=3000".into(), "kinds=[\"mirror\"]".into()],
            ..Default::default()
        };
        let cfg = resolve(&o).unwrap();
        assert_eq!(cfg.experiment, Experiment::CSweep);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.iterations, 3000);
        assert_eq!(cfg.kinds, vec!["mirror".to_string()]);
        assert_eq!(cfg.cs.len(), 100);
    }

    #[test]
    fn bare_words_become_strings() {
        let cfg = resolve(&over(Experiment::Glmm, &["model=polypharmacy"])).unwrap();
        assert_eq!(cfg.model, GlmmModel::Polypharmacy);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(
            resolve(&over(Experiment::Logistic, &["bogus=1"])),
            Err(ExperimentError::Config(_))
        ));
        assert!(matches!(
            resolve(&over(Experiment::Logistic, &["iterations=0"])),
            Err(ExperimentError::Config(_))
        ));
        assert!(matches!(
            resolve(&over(Experiment::OnedSweep, &["targets=[7]"])),
            Err(ExperimentError::Config(_))
        ));
        assert!(matches!(resolve(&Overrides::default()), Err(ExperimentError::Config(_))));
        assert!(matches!(
            resolve(&over(Experiment::Logistic, &["kernels=[\"rw@x\"]"])),
            Err(ExperimentError::Config(_))
        ));
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ExperimentConfig::defaults(Experiment::Glmm, Preset::Paper);
        let back: ExperimentConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn grids_hit_round_values() {
        let g = grid(0.1, 0.1, 50);
        assert!(g.contains(&0.4) && g.contains(&0.5) && g.contains(&2.1));
        assert_eq!(*g.last().unwrap(), 5.0);
        let c = grid(0.02, 0.02, 100);
        assert_eq!(c[49], 1.0);
        assert_eq!(c[99], 2.0);
    }
}
