use std::path::{Path, PathBuf};

use ranld_core::attacks::attack;
use ranld_core::io::write_atomic;
use ranld_core::numerics::Rng;
use ranld_core::qnet::QNetwork;
use ranld_core::ranld::{
    analyze, collect_states, AnalysisConfig, AnalysisReport, Perturbation, StateSet,
};
use ranld_core::training::train;
use ranld_core::transforms::{calibrate, median, perceptual_similarity};
use ranld_core::Obs;

use crate::config::{hash_hex, RunConfig};
use crate::render::{render_to, RenderKind};
use crate::CliError;

pub fn model_path(out: &Path) -> PathBuf {
    out.join("model.bin")
}

pub fn archive_path(out: &Path, tag: &str, seed: u64) -> PathBuf {
    out.join(format!("states-{tag}-{seed}.bin"))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_atomic(path, bytes)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn load_model(path: &Path) -> Result<QNetwork, CliError> {
    QNetwork::load(path)
        .map_err(|e| CliError::Runtime(format!("cannot load model {}: {e}", path.display())))
}

#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub model: PathBuf,
    pub csv: PathBuf,
    pub net: QNetwork,
}

/// Trains per `cfg.train` and writes `model.bin` and `train.csv` to `out`.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<TrainOutputs, CliError> {
    let hash = cfg.hash();
    let (mut net, log) = train(&cfg.env, &cfg.train).map_err(CliError::runtime)?;
    net.set_config_hash(hash);
    let model = model_path(out);
    write(&model, &net.to_bytes())?;
    let csv = out.join("train.csv");
    write(
        &csv,
        log.to_csv(Some(&format!("config_hash={}", hash_hex(hash))))
            .as_bytes(),
    )?;
    Ok(TrainOutputs { model, csv, net })
}

/// Clean calibration states and the median perceptual similarity between
/// them and their attacked versions, pooled over every configured attack.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub states: Vec<Obs>,
    pub target: f64,
}

pub fn calibration(cfg: &RunConfig, net: &QNetwork) -> Result<Calibration, CliError> {
    let a = &cfg.analysis;
    let clean = collect_states(
        net,
        &cfg.env,
        &Perturbation::None,
        a.episodes,
        a.probe_seed,
        cfg.hash(),
    )
    .map_err(CliError::runtime)?;
    let states: Vec<Obs> = clean
        .observations()
        .iter()
        .take(a.calibration_states.max(1))
        .cloned()
        .collect();
    let mut dists = Vec::new();
    let mut rng = Rng::new(a.probe_seed).substream("calibration");
    for named in &cfg.attacks {
        for s in &states {
            let out = attack(net, s, &named.config, &mut rng).map_err(CliError::runtime)?;
            dists.push(perceptual_similarity(net, s, &out.s_adv).map_err(CliError::runtime)?);
        }
    }
    let target = if dists.is_empty() {
        0.0
    } else {
        median(&dists)
    };
    Ok(Calibration { states, target })
}

/// Resolves a perturbation tag. The calibration is computed on first use by a
/// transform (when enabled) and cached in `cache`.
pub fn resolve_perturbation(
    cfg: &RunConfig,
    net: &QNetwork,
    tag: &str,
    cache: &mut Option<Calibration>,
) -> Result<Perturbation, CliError> {
    if tag == "none" {
        return Ok(Perturbation::None);
    }
    if let Some(a) = cfg.attacks.iter().find(|a| a.tag == tag) {
        return Ok(Perturbation::Attack {
            tag: a.tag.clone(),
            config: a.config.clone(),
        });
    }
    if let Some(t) = cfg.transforms.iter().find(|t| t.tag() == tag) {
        if !cfg.analysis.calibrate_transforms {
            return Ok(Perturbation::Transform {
                config: t.clone(),
                scale: 1.0,
            });
        }
        if cache.is_none() {
            *cache = Some(calibration(cfg, net)?);
        }
        let c = cache.as_ref().expect("calibration cached above");
        let (config, scale) = calibrate(net, t, &c.states, c.target).map_err(CliError::runtime)?;
        return Ok(Perturbation::Transform { config, scale });
    }
    Err(CliError::Config(format!(
        "unknown perturbation tag '{tag}'; valid tags: {}",
        cfg.tags().join(", ")
    )))
}

/// Collects a state set under `tag` and writes `states-<tag>-<seed>.bin`.
pub fn cmd_collect(
    cfg: &RunConfig,
    net: &QNetwork,
    tag: &str,
    episodes: usize,
    seed: u64,
    out: &Path,
) -> Result<PathBuf, CliError> {
    if episodes == 0 {
        return Err(CliError::Config("episodes must be at least 1".into()));
    }
    let perturbation = resolve_perturbation(cfg, net, tag, &mut None)?;
    collect_with(cfg, net, &perturbation, episodes, seed, out)
}

fn collect_with(
    cfg: &RunConfig,
    net: &QNetwork,
    perturbation: &Perturbation,
    episodes: usize,
    seed: u64,
    out: &Path,
) -> Result<PathBuf, CliError> {
    let set = collect_states(net, &cfg.env, perturbation, episodes, seed, cfg.hash())
        .map_err(CliError::runtime)?;
    let path = archive_path(out, &perturbation.tag(), seed);
    write(&path, &set.to_bytes())?;
    Ok(path)
}

fn load_set(path: &Path) -> Result<StateSet, CliError> {
    StateSet::load(path)
        .map_err(|e| CliError::Runtime(format!("cannot load state set {}: {e}", path.display())))
}

#[derive(Debug, Clone)]
pub struct AnalysisOutputs {
    pub report_path: PathBuf,
    pub renders: Vec<PathBuf>,
    pub report: AnalysisReport,
}

/// Runs the analysis of `base` against `hat` and `probes` and writes
/// `report.json` plus the three renderings.
pub fn cmd_analyze(
    cfg: &RunConfig,
    net: &QNetwork,
    base: &Path,
    hat: &Path,
    probes: &[PathBuf],
    out: &Path,
) -> Result<AnalysisOutputs, CliError> {
    let base = load_set(base)?;
    let hat = load_set(hat)?;
    let probes = probes
        .iter()
        .map(|p| load_set(p))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&StateSet> = probes.iter().collect();
    let acfg = AnalysisConfig {
        temperature: cfg.analysis.temperature,
        gradient_mode: cfg.analysis.gradient_mode,
    };
    let echo = serde_json::to_value(cfg).map_err(CliError::runtime)?;
    let report =
        analyze(net, &base, &hat, &refs, acfg, echo, cfg.hash()).map_err(CliError::runtime)?;
    let report_path = out.join("report.json");
    let mut text = serde_json::to_vec_pretty(&report).map_err(CliError::runtime)?;
    text.push(b'\n');
    write(&report_path, &text)?;
    let renders = RenderKind::ALL
        .iter()
        .map(|k| render_to(&report, *k, out))
        .collect::<Result<_, _>>()?;
    Ok(AnalysisOutputs {
        report_path,
        renders,
        report,
    })
}

pub fn cmd_render(report_path: &Path, which: RenderKind, out: &Path) -> Result<PathBuf, CliError> {
    let text = std::fs::read(report_path).map_err(|e| {
        CliError::Runtime(format!("cannot read report {}: {e}", report_path.display()))
    })?;
    let report: AnalysisReport = serde_json::from_slice(&text)
        .map_err(|e| CliError::Runtime(format!("report does not parse: {e}")))?;
    render_to(&report, which, out)
}

#[derive(Debug, Clone)]
pub struct PipelineOutputs {
    pub model: PathBuf,
    pub train_csv: PathBuf,
    pub archives: Vec<PathBuf>,
    pub analysis: AnalysisOutputs,
}

/// train → collect S, Ŝ and every S^Ψ → analyze → render.
pub fn run_pipeline(cfg: &RunConfig, out: &Path) -> Result<PipelineOutputs, CliError> {
    let trained = cmd_train(cfg, out)?;
    let net = &trained.net;
    let a = &cfg.analysis;
    let base = collect_with(cfg, net, &Perturbation::None, a.episodes, a.base_seed, out)?;
    let hat = collect_with(cfg, net, &Perturbation::None, a.episodes, a.hat_seed, out)?;
    let mut cache = None;
    let mut probes = Vec::new();
    for tag in cfg.tags().into_iter().skip(1) {
        let p = resolve_perturbation(cfg, net, &tag, &mut cache)?;
        probes.push(collect_with(cfg, net, &p, a.episodes, a.probe_seed, out)?);
    }
    let analysis = cmd_analyze(cfg, net, &base, &hat, &probes, out)?;
    let mut archives = vec![base, hat];
    archives.extend(probes);
    Ok(PipelineOutputs {
        model: trained.model,
        train_csv: trained.csv,
        archives,
        analysis,
    })
}
