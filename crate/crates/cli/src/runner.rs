//! Replicate orchestration and result persistence.

use crate::config::{
    target_kind_name, ExperimentConfig, MetricKind, SamplerSpec, TargetSpec,
};
use anyhow::{bail, Context};
use rdsmc::baselines::{run_ais_baseline, run_smc_baseline, AnnealConfig};
use rdsmc::core::{stream_label, RngStream};
use rdsmc::diffusion::{build_schedule, DiffusionSchedule};
use rdsmc::inner::InnerConfig;
use rdsmc::metrics;
use rdsmc::sampler::{run_rdsmc, OuterConfig, RunResult};
use rdsmc::targets::{
    gmm_generate, load_dataset, DataSplits, FunnelTarget, GaussianTarget, GmmTarget, LogRegTarget,
    RingsTarget, TargetDensity,
};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub enum BuiltTarget {
    Gaussian(GaussianTarget),
    Gmm(GmmTarget),
    Rings(RingsTarget),
    Funnel(FunnelTarget),
    Logreg {
        target: LogRegTarget,
        splits: Box<DataSplits>,
    },
}

impl BuiltTarget {
    pub fn density(&self) -> &dyn TargetDensity {
        match self {
            BuiltTarget::Gaussian(t) => t,
            BuiltTarget::Gmm(t) => t,
            BuiltTarget::Rings(t) => t,
            BuiltTarget::Funnel(t) => t,
            BuiltTarget::Logreg { target, .. } => target,
        }
    }
}

pub fn build_target(spec: &TargetSpec) -> anyhow::Result<(BuiltTarget, Vec<String>)> {
    let mut warnings = Vec::new();
    let built = match spec {
        TargetSpec::Gaussian { mean, variance, scale } => BuiltTarget::Gaussian(
            GaussianTarget::new(mean.clone(), *variance, scale.ln())
                .context("gaussian target")?,
        ),
        TargetSpec::Gmm { dim, box_width, gen_seed } => {
            BuiltTarget::Gmm(gmm_generate(*dim, *box_width, *gen_seed).context("gmm target")?)
        }
        TargetSpec::Rings {} => BuiltTarget::Rings(RingsTarget::default()),
        TargetSpec::Funnel { dim } => {
            BuiltTarget::Funnel(FunnelTarget::new(*dim, 9.0).context("funnel target")?)
        }
        TargetSpec::Logreg { dataset, split_seed } => {
            let splits = load_dataset(dataset, *split_seed)
                .with_context(|| format!("loading dataset {}", dataset.display()))?;
            warnings.extend(splits.warnings.iter().cloned());
            let target = LogRegTarget::from_dataset(&splits.train).context("logreg target")?;
            BuiltTarget::Logreg {
                target,
                splits: Box::new(splits),
            }
        }
    };
    Ok((built, warnings))
}

pub enum SamplerPlan {
    Diffusion {
        outer: OuterConfig,
        inner: InnerConfig,
    },
    Anneal {
        config: AnnealConfig,
        smc: bool,
    },
}

/// Everything derivable from the config before any sampling happens.
pub struct Resolved {
    pub target: BuiltTarget,
    pub schedule: Option<DiffusionSchedule>,
    pub plan: SamplerPlan,
    pub warnings: Vec<String>,
    pub effective: EffectiveConfig,
}

/// The config with every default materialized; echoed by `validate` and
/// written next to the results table.
#[derive(Debug, Clone, Serialize)]
pub struct EffectiveConfig {
    pub name: String,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub n_particles: usize,
    pub metrics: Vec<String>,
    pub dump_samples: bool,
    pub emit_ess_trace: bool,
    pub reference_samples: usize,
    pub reference_seed: u64,
    pub target_kind: String,
    pub sampler_kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<crate::config::ScheduleSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outer: Option<OuterConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inner: Option<InnerConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anneal: Option<AnnealConfig>,
}

pub fn resolve(config: &ExperimentConfig) -> anyhow::Result<Resolved> {
    let (target, warnings) = build_target(&config.target)?;
    let mut schedule = None;
    let plan = match &config.sampler {
        SamplerSpec::Rdsmc { outer, inner }
        | SamplerSpec::RdsmcIs { outer, inner }
        | SamplerSpec::RdsmcProposal { outer, inner } => {
            let spec = config
                .schedule
                .as_ref()
                .ok_or_else(|| anyhow::anyhow!("diffusion samplers require a [schedule] block"))?;
            let sched = build_schedule(spec.kind(), spec.t_steps())?;
            let variant = config.sampler.variant().unwrap();
            let outer = outer.resolve(variant, config.n_particles, spec.t_steps());
            outer.validate(spec.t_steps())?;
            inner.validate()?;
            if !target.density().has_gradient()
                && (inner.identity != rdsmc::inner::ScoreIdentity::Dsi || inner.n_steps > 1)
            {
                bail!("the selected inner estimator needs a gradient-capable target");
            }
            schedule = Some(sched);
            SamplerPlan::Diffusion {
                outer,
                inner: *inner,
            }
        }
        SamplerSpec::AisBaseline { anneal } => {
            let resolved = anneal.resolve(target.density().anneal_init_scale(), false);
            resolved.validate()?;
            SamplerPlan::Anneal {
                config: resolved,
                smc: false,
            }
        }
        SamplerSpec::SmcBaseline { anneal } => {
            let resolved = anneal.resolve(target.density().anneal_init_scale(), true);
            resolved.validate()?;
            SamplerPlan::Anneal {
                config: resolved,
                smc: true,
            }
        }
    };

    let effective = EffectiveConfig {
        name: config.name.clone(),
        output_dir: config.output_dir.clone(),
        seeds: config.seeds.clone(),
        n_particles: config.n_particles,
        metrics: config.metrics.iter().map(|m| m.name().to_string()).collect(),
        dump_samples: config.dump_samples,
        emit_ess_trace: config.emit_ess_trace,
        reference_samples: config.reference_samples,
        reference_seed: config.reference_seed,
        target_kind: target_kind_name(&config.target).to_string(),
        sampler_kind: config.sampler.kind_name().to_string(),
        schedule: config.schedule,
        outer: match &plan {
            SamplerPlan::Diffusion { outer, .. } => Some(*outer),
            _ => None,
        },
        inner: match &plan {
            SamplerPlan::Diffusion { inner, .. } => Some(*inner),
            _ => None,
        },
        anneal: match &plan {
            SamplerPlan::Anneal { config, .. } => Some(*config),
            _ => None,
        },
    };

    Ok(Resolved {
        target,
        schedule,
        plan,
        warnings,
        effective,
    })
}

/// Analytic reference draws shared by every replicate of one experiment.
struct ReferenceData {
    samples: Option<Vec<Vec<f64>>>,
}

fn build_reference(config: &ExperimentConfig, target: &BuiltTarget) -> ReferenceData {
    let needs = config.metrics.iter().any(|m| {
        matches!(
            m,
            MetricKind::RadiusTvd | MetricKind::AngleTvd | MetricKind::SlicedKsd
        )
    });
    if !needs {
        return ReferenceData { samples: None };
    }
    let mut rng = RngStream::new(config.reference_seed)
        .child(stream_label::METRICS)
        .child(0)
        .rng();
    let samples = (0..config.reference_samples)
        .filter_map(|_| target.density().sample_exact(&mut rng))
        .collect::<Vec<_>>();
    ReferenceData {
        samples: (!samples.is_empty()).then_some(samples),
    }
}

fn radius(x: &[f64]) -> f64 {
    (x[0] * x[0] + x[1] * x[1]).sqrt()
}

fn angle(x: &[f64]) -> f64 {
    x[1].atan2(x[0])
}

fn compute_metric(
    metric: MetricKind,
    config: &ExperimentConfig,
    target: &BuiltTarget,
    result: &RunResult,
    reference: &ReferenceData,
) -> anyhow::Result<f64> {
    let true_log_z = target.density().log_z();
    let value = match metric {
        MetricKind::LogZ => result.log_z,
        MetricKind::LogzBias => metrics::logz_bias(
            result.log_z,
            true_log_z.ok_or_else(|| anyhow::anyhow!("target has no exact log Z"))?,
        ),
        MetricKind::ZBias => metrics::z_bias(
            result.log_z,
            true_log_z.ok_or_else(|| anyhow::anyhow!("target has no exact log Z"))?,
        ),
        MetricKind::GmmWeightBias => {
            let BuiltTarget::Gmm(gmm) = target else {
                bail!("gmm_weight_bias needs a gmm target");
            };
            metrics::gmm_weight_ratio_bias(&result.positions, &result.weights, gmm)?
        }
        MetricKind::RadiusTvd | MetricKind::AngleTvd => {
            let refs = reference
                .samples
                .as_ref()
                .ok_or_else(|| anyhow::anyhow!("no reference samples for TVD"))?;
            let ref_w = vec![1.0; refs.len()];
            let (proj, range): (fn(&[f64]) -> f64, (f64, f64)) = match metric {
                MetricKind::RadiusTvd => (radius, (0.0, 8.0)),
                _ => (angle, (-std::f64::consts::PI, std::f64::consts::PI)),
            };
            let sample_vals: Vec<f64> = result.positions.iter().map(|x| proj(x)).collect();
            let ref_vals: Vec<f64> = refs.iter().map(|x| proj(x)).collect();
            metrics::histogram_tvd(&sample_vals, &result.weights, &ref_vals, &ref_w, 256, range)?
        }
        MetricKind::SlicedKsd => {
            let refs = reference
                .samples
                .as_ref()
                .ok_or_else(|| anyhow::anyhow!("no reference samples for sliced KSD"))?;
            let stream = RngStream::new(config.reference_seed)
                .child(stream_label::METRICS)
                .child(1);
            metrics::sliced_ksd(&result.positions, &result.weights, refs, 128, &stream)?
        }
        MetricKind::TestLl => {
            let BuiltTarget::Logreg { splits, .. } = target else {
                bail!("test_ll needs a logreg target");
            };
            metrics::predictive_log_likelihood(
                &result.positions,
                &result.weights,
                &splits.test.features,
                &splits.test.labels,
            )?
        }
    };
    Ok(value)
}

pub struct ReplicateOutcome {
    pub seed: u64,
    pub wall_time_s: f64,
    pub resample_events: usize,
    pub mean_inner_ess: f64,
    pub degenerate: bool,
    pub metric_values: Vec<(MetricKind, f64)>,
}

pub struct ExperimentOutcome {
    pub replicates: Vec<ReplicateOutcome>,
    pub results_path: PathBuf,
}

impl ExperimentOutcome {
    pub fn all_succeeded(&self) -> bool {
        self.replicates.iter().all(|r| !r.degenerate)
    }
}

fn run_one(
    resolved: &Resolved,
    config: &ExperimentConfig,
    seed: u64,
) -> anyhow::Result<RunResult> {
    match &resolved.plan {
        SamplerPlan::Diffusion { outer, inner } => Ok(run_rdsmc(
            resolved.target.density(),
            resolved.schedule.as_ref().expect("schedule resolved"),
            outer,
            inner,
            seed,
        )?),
        SamplerPlan::Anneal { config: anneal, smc } => {
            let density = resolved.target.density();
            let result = if *smc {
                run_smc_baseline(density, anneal, config.n_particles, seed)?
            } else {
                run_ais_baseline(density, anneal, config.n_particles, seed)?
            };
            Ok(result)
        }
    }
}

fn format_value(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.12e}")
    }
}

/// Run every replicate, write the results table, sample dumps, and ESS
/// traces; returns the per-replicate outcomes.
pub fn run_experiment(
    config: &ExperimentConfig,
    output_override: Option<&Path>,
) -> anyhow::Result<ExperimentOutcome> {
    let resolved = resolve(config)?;
    for w in &resolved.warnings {
        eprintln!("warning: {w}");
    }
    let out_dir = output_override.unwrap_or(&config.output_dir).to_path_buf();
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;

    std::fs::write(
        out_dir.join("config_resolved.toml"),
        toml::to_string_pretty(&resolved.effective)?,
    )?;

    let reference = build_reference(config, &resolved.target);
    let mut replicates = Vec::with_capacity(config.seeds.len());

    for &seed in &config.seeds {
        let start = Instant::now();
        let result = run_one(&resolved, config, seed)?;
        let wall = start.elapsed().as_secs_f64();
        let degenerate = result.degenerate_at.is_some();

        let mut metric_values = Vec::with_capacity(config.metrics.len());
        for &metric in &config.metrics {
            let value = if degenerate {
                f64::NAN
            } else {
                compute_metric(metric, config, &resolved.target, &result, &reference)?
            };
            metric_values.push((metric, value));
        }

        if config.dump_samples && !degenerate {
            let mut text = String::new();
            for (x, w) in result.positions.iter().zip(&result.weights) {
                let row: Vec<String> = x.iter().map(|v| format_value(*v)).collect();
                text.push_str(&row.join(","));
                text.push(',');
                text.push_str(&format_value(*w));
                text.push('\n');
            }
            std::fs::write(out_dir.join(format!("samples_seed{seed}.csv")), text)?;
        }
        if config.emit_ess_trace {
            let mut text =
                String::from("step,ess,resampled,mean_acceptance,mean_inner_ess,degenerate_estimates\n");
            for d in &result.diagnostics {
                text.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    d.step,
                    format_value(d.ess),
                    d.resampled as u8,
                    format_value(d.mean_acceptance),
                    format_value(d.mean_inner_ess),
                    d.degenerate_estimates
                ));
            }
            std::fs::write(out_dir.join(format!("ess_trace_seed{seed}.csv")), text)?;
        }

        replicates.push(ReplicateOutcome {
            seed,
            wall_time_s: wall,
            resample_events: result.resample_events,
            mean_inner_ess: result.mean_inner_ess,
            degenerate,
            metric_values,
        });
    }

    let results_path = out_dir.join("results.csv");
    let mut table = String::from(
        "replicate,seed,metric,value,wall_time_s,resample_events,mean_inner_ess\n",
    );
    for (i, rep) in replicates.iter().enumerate() {
        for (metric, value) in &rep.metric_values {
            table.push_str(&format!(
                "{},{},{},{},{:.3},{},{}\n",
                i,
                rep.seed,
                metric.name(),
                format_value(*value),
                rep.wall_time_s,
                rep.resample_events,
                format_value(rep.mean_inner_ess),
            ));
        }
    }
    // one summary row per metric: value holds mean±stderr over seeds
    for &metric in &config.metrics {
        let finite: Vec<f64> = replicates
            .iter()
            .flat_map(|r| {
                r.metric_values
                    .iter()
                    .filter(|(m, _)| *m == metric)
                    .map(|(_, v)| *v)
            })
            .filter(|v| v.is_finite())
            .collect();
        let (mean, stderr) = if finite.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let mean = finite.iter().sum::<f64>() / finite.len() as f64;
            let var = finite.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / (finite.len() as f64 - 1.0).max(1.0);
            (mean, (var / finite.len() as f64).sqrt())
        };
        let mean_wall =
            replicates.iter().map(|r| r.wall_time_s).sum::<f64>() / replicates.len().max(1) as f64;
        table.push_str(&format!(
            "summary,{},{},{:.6e}±{:.6e},{:.3},,\n",
            config.seeds.len(),
            metric.name(),
            mean,
            stderr,
            mean_wall,
        ));
    }
    std::fs::write(&results_path, table)?;

    Ok(ExperimentOutcome {
        replicates,
        results_path,
    })
}
