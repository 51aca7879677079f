//! Experiment configuration: a nested TOML file describing one run.
//!
//! `validate` collects diagnostics (unknown keys, constraint violations)
//! instead of failing fast, and echoes the fully resolved config with all
//! defaults materialized.

use rdsmc::baselines::AnnealConfig;
use rdsmc::diffusion::{ScheduleKind, VeProfile};
use rdsmc::inner::InnerConfig;
use rdsmc::sampler::{OuterConfig, ResampleScheme, Variant};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub n_particles: usize,
    #[serde(default)]
    pub metrics: Vec<MetricKind>,
    #[serde(default)]
    pub dump_samples: bool,
    #[serde(default)]
    pub emit_ess_trace: bool,
    /// Size of the analytic reference sample used by TVD/KSD metrics.
    #[serde(default = "default_reference_samples")]
    pub reference_samples: usize,
    /// Seed of the shared reference sample and metric projections.
    #[serde(default = "default_reference_seed")]
    pub reference_seed: u64,
    pub target: TargetSpec,
    #[serde(default)]
    pub schedule: Option<ScheduleSpec>,
    pub sampler: SamplerSpec,
}

fn default_reference_samples() -> usize {
    16_384
}

fn default_reference_seed() -> u64 {
    190_607
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    LogZ,
    LogzBias,
    ZBias,
    GmmWeightBias,
    RadiusTvd,
    AngleTvd,
    SlicedKsd,
    TestLl,
}

impl MetricKind {
    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::LogZ => "log_z",
            MetricKind::LogzBias => "logz_bias",
            MetricKind::ZBias => "z_bias",
            MetricKind::GmmWeightBias => "gmm_weight_bias",
            MetricKind::RadiusTvd => "radius_tvd",
            MetricKind::AngleTvd => "angle_tvd",
            MetricKind::SlicedKsd => "sliced_ksd",
            MetricKind::TestLl => "test_ll",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    Gaussian {
        mean: Vec<f64>,
        #[serde(default = "one")]
        variance: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    Gmm {
        dim: usize,
        #[serde(default = "default_box_width")]
        box_width: f64,
        gen_seed: u64,
    },
    Rings {},
    Funnel {
        #[serde(default = "default_funnel_dim")]
        dim: usize,
    },
    Logreg {
        dataset: PathBuf,
        #[serde(default)]
        split_seed: u64,
    },
}

fn one() -> f64 {
    1.0
}

fn default_box_width() -> f64 {
    80.0
}

fn default_funnel_dim() -> usize {
    10
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    Vp {
        t_steps: usize,
        #[serde(default = "default_b_min")]
        b_min: f64,
        #[serde(default = "default_b_max")]
        b_max: f64,
    },
    Ve {
        t_steps: usize,
        profile: VeProfile,
        sigma_max: f64,
        #[serde(default = "default_sigma_min")]
        sigma_min: f64,
    },
}

fn default_b_min() -> f64 {
    rdsmc::diffusion::DEFAULT_B_MIN
}

fn default_b_max() -> f64 {
    rdsmc::diffusion::DEFAULT_B_MAX
}

fn default_sigma_min() -> f64 {
    0.01
}

impl ScheduleSpec {
    pub fn t_steps(&self) -> usize {
        match self {
            ScheduleSpec::Vp { t_steps, .. } | ScheduleSpec::Ve { t_steps, .. } => *t_steps,
        }
    }

    pub fn kind(&self) -> ScheduleKind {
        match *self {
            ScheduleSpec::Vp { b_min, b_max, .. } => ScheduleKind::Vp { b_min, b_max },
            ScheduleSpec::Ve {
                profile,
                sigma_max,
                sigma_min,
                ..
            } => ScheduleKind::Ve {
                profile,
                sigma_max,
                sigma_min,
            },
        }
    }
}

/// Outer SMC knobs as they appear in the config; the variant comes from
/// the sampler kind and `t_start_resampling` defaults to T.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OuterSpec {
    pub resample_scheme: Option<ResampleScheme>,
    pub kappa_ess: Option<f64>,
    pub t_start_resampling: Option<usize>,
}

impl OuterSpec {
    pub fn resolve(&self, variant: Variant, n_particles: usize, t_steps: usize) -> OuterConfig {
        OuterConfig {
            n_particles,
            resample_scheme: self.resample_scheme.unwrap_or(ResampleScheme::Systematic),
            kappa_ess: self.kappa_ess.unwrap_or(0.3),
            t_start_resampling: self.t_start_resampling.unwrap_or(t_steps),
            variant,
            record_trace: false,
        }
    }
}

/// Annealing knobs; (r, tau) fall back to the target's scale pair.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnealSpec {
    pub t_anneal: Option<usize>,
    pub n_chains: Option<usize>,
    pub mcmc_steps: Option<usize>,
    pub delta_init: Option<f64>,
    pub target_accept: Option<f64>,
    pub kappa_ess: Option<f64>,
    pub r: Option<f64>,
    pub tau: Option<f64>,
}

impl AnnealSpec {
    pub fn resolve(&self, scale: Option<(f64, f64)>, smc: bool) -> AnnealConfig {
        let base = AnnealConfig::default();
        let (r_default, tau_default) = scale.unwrap_or((base.r, base.tau));
        AnnealConfig {
            t_anneal: self.t_anneal.unwrap_or(base.t_anneal),
            n_chains: self.n_chains.unwrap_or(base.n_chains),
            mcmc_steps: self.mcmc_steps.unwrap_or(base.mcmc_steps),
            delta_init: self.delta_init.unwrap_or(0.01),
            target_accept: self.target_accept.unwrap_or(base.target_accept),
            kappa_ess: self.kappa_ess.unwrap_or(if smc { 0.3 } else { 0.0 }),
            r: self.r.unwrap_or(r_default),
            tau: self.tau.unwrap_or(tau_default),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplerSpec {
    Rdsmc {
        #[serde(default)]
        outer: OuterSpec,
        #[serde(default)]
        inner: InnerConfig,
    },
    RdsmcIs {
        #[serde(default)]
        outer: OuterSpec,
        #[serde(default)]
        inner: InnerConfig,
    },
    RdsmcProposal {
        #[serde(default)]
        outer: OuterSpec,
        #[serde(default)]
        inner: InnerConfig,
    },
    AisBaseline {
        #[serde(default)]
        anneal: AnnealSpec,
    },
    SmcBaseline {
        #[serde(default)]
        anneal: AnnealSpec,
    },
}

impl SamplerSpec {
    pub fn is_diffusion_family(&self) -> bool {
        matches!(
            self,
            SamplerSpec::Rdsmc { .. } | SamplerSpec::RdsmcIs { .. } | SamplerSpec::RdsmcProposal { .. }
        )
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            SamplerSpec::Rdsmc { .. } => "rdsmc",
            SamplerSpec::RdsmcIs { .. } => "rdsmc_is",
            SamplerSpec::RdsmcProposal { .. } => "rdsmc_proposal",
            SamplerSpec::AisBaseline { .. } => "ais_baseline",
            SamplerSpec::SmcBaseline { .. } => "smc_baseline",
        }
    }

    pub fn variant(&self) -> Option<Variant> {
        match self {
            SamplerSpec::Rdsmc { .. } => Some(Variant::Full),
            SamplerSpec::RdsmcIs { .. } => Some(Variant::IsOnly),
            SamplerSpec::RdsmcProposal { .. } => Some(Variant::ProposalOnly),
            _ => None,
        }
    }
}

/// Outcome of `validate`: diagnostics plus (when parseable) the resolved
/// effective config.
#[derive(Debug, Default)]
pub struct ValidationReport {
    pub unknown_keys: Vec<String>,
    pub violations: Vec<String>,
    pub resolved: Option<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.unknown_keys.is_empty() && self.violations.is_empty()
    }
}

fn known_keys(path: &str) -> Option<&'static [&'static str]> {
    match path {
        "" => Some(&[
            "name",
            "output_dir",
            "seeds",
            "n_particles",
            "metrics",
            "dump_samples",
            "emit_ess_trace",
            "reference_samples",
            "reference_seed",
            "target",
            "schedule",
            "sampler",
        ]),
        "target" => Some(&[
            "kind", "mean", "variance", "scale", "dim", "box_width", "gen_seed", "dataset",
            "split_seed",
        ]),
        "schedule" => Some(&["kind", "t_steps", "b_min", "b_max", "profile", "sigma_max", "sigma_min"]),
        "sampler" => Some(&["kind", "outer", "inner", "anneal"]),
        "sampler.outer" => Some(&["resample_scheme", "kappa_ess", "t_start_resampling"]),
        "sampler.inner" => Some(&[
            "estimator",
            "identity",
            "n_is",
            "n_steps",
            "m_steps",
            "kernel",
            "delta_mcmc",
            "hmc_leapfrog",
            "proposal",
            "score_clip",
            "marginal_clamp",
        ]),
        "sampler.anneal" => Some(&[
            "t_anneal",
            "n_chains",
            "mcmc_steps",
            "delta_init",
            "target_accept",
            "kappa_ess",
            "r",
            "tau",
        ]),
        _ => None,
    }
}

fn walk_unknown_keys(prefix: &str, table: &toml::value::Table, out: &mut Vec<String>) {
    if let Some(known) = known_keys(prefix) {
        for (key, value) in table {
            let path = if prefix.is_empty() {
                key.clone()
            } else {
                format!("{prefix}.{key}")
            };
            if !known.contains(&key.as_str()) {
                out.push(path);
            } else if let toml::Value::Table(inner) = value {
                walk_unknown_keys(&path, inner, out);
            }
        }
    }
}

pub fn load_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let config: ExperimentConfig = toml::from_str(&text)?;
    Ok(config)
}

/// Parse and check a config file, returning diagnostics rather than
/// failing on the first problem.
pub fn validate_config(path: &Path) -> anyhow::Result<ValidationReport> {
    let text = std::fs::read_to_string(path)?;
    let mut report = ValidationReport::default();

    let value: toml::Value = match text.parse() {
        Ok(v) => v,
        Err(e) => {
            report.violations.push(format!("TOML syntax error: {e}"));
            return Ok(report);
        }
    };
    if let toml::Value::Table(table) = &value {
        walk_unknown_keys("", table, &mut report.unknown_keys);
    }

    let config: ExperimentConfig = match toml::from_str(&text) {
        Ok(c) => c,
        Err(e) => {
            report.violations.push(format!("config does not parse: {e}"));
            return Ok(report);
        }
    };
    check_constraints(&config, &mut report);

    match crate::runner::resolve(&config) {
        Ok(resolved) => match toml::to_string_pretty(&resolved.effective) {
            Ok(s) => report.resolved = Some(s),
            Err(e) => report.violations.push(format!("cannot render resolved config: {e}")),
        },
        Err(e) => report.violations.push(e.to_string()),
    }
    Ok(report)
}

fn check_constraints(config: &ExperimentConfig, report: &mut ValidationReport) {
    if config.seeds.is_empty() {
        report.violations.push("seeds must be nonempty".into());
    }
    if config.n_particles == 0 {
        report.violations.push("n_particles must be at least 1".into());
    }
    if config.sampler.is_diffusion_family() {
        let Some(schedule) = &config.schedule else {
            report
                .violations
                .push("diffusion samplers require a [schedule] block".into());
            return;
        };
        if let Err(e) = rdsmc::diffusion::build_schedule(schedule.kind(), schedule.t_steps()) {
            report.violations.push(format!("schedule: {e}"));
        }
        let (outer, inner) = match &config.sampler {
            SamplerSpec::Rdsmc { outer, inner }
            | SamplerSpec::RdsmcIs { outer, inner }
            | SamplerSpec::RdsmcProposal { outer, inner } => (outer, inner),
            _ => unreachable!(),
        };
        if let Err(e) = inner.validate() {
            report.violations.push(format!("inner: {e}"));
        }
        let resolved = outer.resolve(
            config.sampler.variant().unwrap(),
            config.n_particles,
            schedule.t_steps(),
        );
        if let Err(e) = resolved.validate(schedule.t_steps()) {
            report.violations.push(format!("outer: {e}"));
        }
    } else {
        let anneal = match &config.sampler {
            SamplerSpec::AisBaseline { anneal } | SamplerSpec::SmcBaseline { anneal } => anneal,
            _ => unreachable!(),
        };
        let resolved = anneal.resolve(Some((1.0, 1.0)), true);
        if let Err(e) = resolved.validate() {
            report.violations.push(format!("anneal: {e}"));
        }
    }

    if let TargetSpec::Logreg { dataset, .. } = &config.target {
        if !dataset.exists() {
            report
                .violations
                .push(format!("dataset file not found: {}", dataset.display()));
        }
    }

    for metric in &config.metrics {
        let ok = match metric {
            MetricKind::GmmWeightBias => matches!(config.target, TargetSpec::Gmm { .. }),
            MetricKind::RadiusTvd | MetricKind::AngleTvd => {
                matches!(config.target, TargetSpec::Rings { .. })
            }
            MetricKind::SlicedKsd => matches!(
                config.target,
                TargetSpec::Funnel { .. } | TargetSpec::Gmm { .. } | TargetSpec::Rings { .. }
                    | TargetSpec::Gaussian { .. }
            ),
            MetricKind::TestLl => matches!(config.target, TargetSpec::Logreg { .. }),
            MetricKind::LogzBias | MetricKind::ZBias => !matches!(config.target, TargetSpec::Logreg { .. }),
            MetricKind::LogZ => true,
        };
        if !ok {
            report.violations.push(format!(
                "metric {} is not defined for the {} target",
                metric.name(),
                target_kind_name(&config.target)
            ));
        }
    }
}

pub fn target_kind_name(spec: &TargetSpec) -> &'static str {
    match spec {
        TargetSpec::Gaussian { .. } => "gaussian",
        TargetSpec::Gmm { .. } => "gmm",
        TargetSpec::Rings {} => "rings",
        TargetSpec::Funnel { .. } => "funnel",
        TargetSpec::Logreg { .. } => "logreg",
    }
}
