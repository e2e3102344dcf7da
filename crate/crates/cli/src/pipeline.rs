//! Runs an experiment configuration and writes its artifacts.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Serialize;
use uep_core::autoencoder::SavedModel;
use uep_core::baselines::{sample_random_codes, CodeFamily, EvalSpec, Normalization};
use uep_core::channel::derive_seed_u64;
use uep_core::codebook::ENERGY_TOL;
use uep_core::montecarlo::{sweep, SweepSpec};
use uep_core::{Codebook, Error};

use crate::config::{BaselineFamily, EvalPartition, ExperimentConfig, Mode};
use crate::output::{emit_csv, ResultRow};

/// Loss values of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTrace {
    pub grid_index: usize,
    pub lambda: f64,
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedRecord {
    pub master: u64,
    pub train: Option<u64>,
    pub eval: Vec<u64>,
    /// Master seed of each baseline sample (one per mu for superposition).
    pub baseline: Vec<u64>,
}

/// Everything a run produces, before it is written to disk.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub num_classes: usize,
    pub traces: Vec<LossTrace>,
    pub codebooks: Vec<(String, Codebook)>,
    pub models: Vec<(String, SavedModel)>,
    pub seeds: SeedRecord,
}

fn core_err(e: Error) -> anyhow::Error {
    match e {
        Error::Diverged { iteration, loss } => {
            anyhow::anyhow!("training diverged at iteration {iteration} (loss {loss})")
        }
        other => anyhow::Error::new(other),
    }
}

/// Fails unless every row of `cb` has energy `n` within [`ENERGY_TOL`].
fn check_energy(name: &str, cb: &Codebook) -> anyhow::Result<()> {
    cb.check_energy(ENERGY_TOL)
        .with_context(|| format!("codebook {name} violates the energy constraint"))
}

pub fn execute(config: &ExperimentConfig) -> anyhow::Result<RunOutput> {
    let partition = config.experiment_partition()?;
    let stop = config.stopping_rule();
    let mut out = RunOutput {
        rows: Vec::new(),
        num_classes: partition.num_classes(),
        traces: Vec::new(),
        codebooks: Vec::new(),
        models: Vec::new(),
        seeds: SeedRecord {
            master: config.seed,
            train: None,
            eval: Vec::new(),
            baseline: Vec::new(),
        },
    };
    if config.mode.is_ae() {
        let train = config.train.as_ref().context("missing [train] table")?;
        let base = config.train_config(train, config.sweep.lambda_grid[0])?;
        let spec = SweepSpec {
            lambdas: config.sweep.lambda_grid.clone(),
            snrs_db: config.sweep.snr_grid_db.clone(),
            stop,
            decoder: config.sweep.decoder,
        };
        let points = sweep(&base, &spec, config.seed).map_err(core_err)?;
        for p in points {
            out.seeds.train = Some(p.train_seed);
            out.seeds.eval.clone_from(&p.eval_seeds);
            let name = format!("ae_{:02}", p.grid_index);
            check_energy(&name, &p.codebook)?;
            for (profile, &seed) in p.profiles.iter().zip(&p.eval_seeds) {
                out.rows.push(ResultRow::from_profile(
                    config.mode.name(),
                    p.grid_index,
                    None,
                    Some(p.lambda),
                    seed,
                    &p.model.digest,
                    profile,
                ));
            }
            out.traces.push(LossTrace {
                grid_index: p.grid_index,
                lambda: p.lambda,
                losses: p.model.loss_trace.clone(),
            });
            out.models.push((
                name.clone(),
                SavedModel {
                    digest: p.model.digest.clone(),
                    partition: p.codebook.partition.clone(),
                    params: p.model.params,
                },
            ));
            out.codebooks.push((name, p.codebook));
        }
    }
    if config.baseline.is_some() {
        run_baseline(config, &mut out)?;
    }
    Ok(out)
}

fn run_baseline(config: &ExperimentConfig, out: &mut RunOutput) -> anyhow::Result<()> {
    let b = config.baseline.as_ref().context("missing [baseline] table")?;
    let family = config.baseline_family();
    let override_partition = match b.eval_partition {
        EvalPartition::Native => None,
        EvalPartition::Experiment => Some(config.experiment_partition()?),
    };
    let mode = match family {
        BaselineFamily::Coset => Mode::BaselineCoset,
        BaselineFamily::Superposition => Mode::BaselineSuperposition,
    };
    let groups: Vec<(Option<f64>, CodeFamily)> = match family {
        BaselineFamily::Coset => vec![(None, CodeFamily::Coset(config.coset_spec()?))],
        BaselineFamily::Superposition => b
            .mu_grid
            .iter()
            .map(|&mu| Ok((Some(mu), CodeFamily::Superposition(config.superposition_spec(mu)?))))
            .collect::<anyhow::Result<_>>()?,
    };
    let exact_energy = !(family == BaselineFamily::Superposition && b.normalization == Normalization::CodebookAverage);
    for (g, (mu, code_family)) in groups.into_iter().enumerate() {
        let master = derive_seed_u64(config.seed, "baseline", &[g as u64]);
        out.seeds.baseline.push(master);
        for &snr in &config.sweep.snr_grid_db {
            let eval = EvalSpec {
                snr_db: snr,
                stop: config.stopping_rule(),
                partition: override_partition.clone(),
            };
            let sampled = sample_random_codes(&code_family, b.count, &eval, master).map_err(core_err)?;
            let first_snr = snr == config.sweep.snr_grid_db[0];
            for s in sampled {
                if s.profile.classes.len() != out.num_classes {
                    bail!(
                        "baseline codes have {} classes, experiment {}; set eval_partition = \"experiment\"",
                        s.profile.classes.len(),
                        out.num_classes
                    );
                }
                let digest = s.codebook.content_digest();
                out.rows.push(ResultRow::from_profile(
                    mode.name(),
                    g,
                    Some(s.index),
                    mu,
                    s.eval_seed,
                    &digest,
                    &s.profile,
                ));
                if first_snr {
                    let name = match mu {
                        Some(_) => format!("superposition_{g:02}_{:03}", s.index),
                        None => format!("coset_{:03}", s.index),
                    };
                    if exact_energy {
                        check_energy(&name, &s.codebook)?;
                    }
                    out.codebooks.push((name, s.codebook));
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    mode: &'static str,
    config_text: &'a str,
    config: &'a ExperimentConfig,
    seeds: &'a SeedRecord,
    superposition_normalization: Option<&'static str>,
    threads: usize,
    rows: usize,
    unix_time: u64,
}

#[derive(Debug, Clone, Serialize)]
struct ResultsJson<'a> {
    mode: &'static str,
    num_classes: usize,
    rows: &'a [ResultRow],
}

fn create(path: &Path) -> anyhow::Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(
        fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

/// Writes `results.csv`, `results.json`, `loss_trace.csv`, `manifest.json`,
/// `codebooks/*.txt` and `models/*.bin` under `dir`.
pub fn write_artifacts(
    dir: &Path,
    config: &ExperimentConfig,
    config_text: &str,
    out: &RunOutput,
) -> anyhow::Result<()> {
    fs::create_dir_all(dir.join("codebooks"))
        .with_context(|| format!("cannot create {}", dir.display()))?;
    emit_csv(&out.rows, out.num_classes, create(&dir.join("results.csv"))?)?;
    let mut json = create(&dir.join("results.json"))?;
    serde_json::to_writer_pretty(
        &mut json,
        &ResultsJson {
            mode: config.mode.name(),
            num_classes: out.num_classes,
            rows: &out.rows,
        },
    )?;
    json.flush()?;

    let mut trace = create(&dir.join("loss_trace.csv"))?;
    writeln!(trace, "grid_index,lambda,iteration,loss")?;
    for t in &out.traces {
        for (it, loss) in t.losses.iter().enumerate() {
            writeln!(trace, "{},{:.9e},{},{:.9e}", t.grid_index, t.lambda, it, loss)?;
        }
    }
    trace.flush()?;

    for (name, cb) in &out.codebooks {
        let mut w = create(&dir.join("codebooks").join(format!("{name}.txt")))?;
        cb.write_to(&mut w)?;
        w.flush()?;
    }
    if !out.models.is_empty() {
        fs::create_dir_all(dir.join("models"))?;
        for (name, model) in &out.models {
            let mut w = create(&dir.join("models").join(format!("{name}.bin")))?;
            model.write_to(&mut w)?;
            w.flush()?;
        }
    }

    let normalization = (config.baseline_family() == BaselineFamily::Superposition && config.baseline.is_some())
        .then(|| config.baseline.as_ref().map(|b| b.normalization.name()))
        .flatten();
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        mode: config.mode.name(),
        config_text,
        config,
        seeds: &out.seeds,
        superposition_normalization: normalization,
        threads: rayon::current_num_threads(),
        rows: out.rows.len(),
        unix_time: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let mut m = create(&dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut m, &manifest)?;
    m.flush()?;
    Ok(())
}

/// Options that override the configuration file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

/// Loads, executes and writes one configuration. Returns the output
/// directory.
pub fn run(config_path: &Path, opts: &RunOptions) -> anyhow::Result<(PathBuf, RunOutput)> {
    let text = fs::read_to_string(config_path)
        .with_context(|| format!("cannot read {}", config_path.display()))?;
    let mut config = crate::config::parse_config(&text)
        .map_err(|e| anyhow::anyhow!("{}: {e}", config_path.display()))?;
    if let Some(seed) = opts.seed {
        config.seed = seed;
    }
    let dir = opts
        .out_dir
        .clone()
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| {
            let stem = config_path.file_stem().map(|s| s.to_string_lossy().into_owned());
            PathBuf::from("out").join(stem.unwrap_or_else(|| "run".into()))
        });
    let out = execute(&config)?;
    write_artifacts(&dir, &config, &text, &out)?;
    Ok((dir, out))
}
