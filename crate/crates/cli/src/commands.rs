use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context as _, Result};
use restart_core::experiments::{
    build_synthetic_dataset, decompose_errors, pareto_frontier, run_sweep, FrontierRecord, SweepGrid, SweepOptions,
    SweepRecord,
};
use restart_core::io;
use restart_core::rng::{self, Stage};
use restart_core::samplers::run_batch;
use restart_core::score::{
    train_mlp_score, EmpiricalDataset, GaussianMixture, MlpScoreNet, PerturbationSpec, PerturbedScore,
};
use restart_core::{Execution, Points, ScoreField};
use serde::Serialize;

use crate::config::{absolute, CommandName, RunConfig, ScoreSection, ScoreSource, SweepPreset};
use crate::plot::{frontier_svg, Series};

pub struct Context {
    pub out: PathBuf,
    pub exec: Execution,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, contents: &str) -> Result<()> {
        let path = self.path(name);
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
    }

    /// Resolved-config sidecar plus JSON metadata holding the same config and
    /// the command's summary.
    fn finish<T: Serialize>(&self, cfg: &RunConfig, summary: T) -> Result<()> {
        #[derive(Serialize)]
        struct Metadata<'a, T> {
            command: CommandName,
            seed: u64,
            version: &'static str,
            config: &'a RunConfig,
            result: T,
        }
        let command = cfg.command.expect("resolved configs name their command");
        self.write(&format!("{command}.config.toml"), &toml::to_string(cfg)?)?;
        let meta = Metadata {
            command,
            seed: cfg.seed,
            version: env!("CARGO_PKG_VERSION"),
            config: cfg,
            result: summary,
        };
        self.write(&format!("{command}.json"), &(serde_json::to_string_pretty(&meta)? + "\n"))
    }
}

/// The config echoed for `command`: its own section only.
fn resolved(cfg: &RunConfig, command: CommandName) -> RunConfig {
    let mut out = RunConfig {
        command: Some(command),
        seed: cfg.seed,
        unsafe_override: cfg.unsafe_override.clone(),
        ..RunConfig::default()
    };
    match command {
        CommandName::Dataset => out.dataset = Some(cfg.dataset.clone().unwrap_or_default()),
        CommandName::Train => out.train = Some(cfg.train.clone().unwrap_or_default()),
        CommandName::Sample => out.sample = Some(cfg.sample.clone().unwrap_or_default()),
        CommandName::Decompose => out.decompose = Some(cfg.decompose.clone().unwrap_or_default()),
        CommandName::Sweep => out.sweep = Some(cfg.sweep.clone().unwrap_or_default()),
        CommandName::Pareto => out.pareto = Some(cfg.pareto.clone().unwrap_or_default()),
    }
    out
}

pub fn run(cfg: &RunConfig, command: CommandName, ctx: &Context) -> Result<()> {
    ensure!(
        ctx.out.is_dir(),
        "output directory {} does not exist",
        ctx.out.display()
    );
    if cfg.unsafe_override.rho.is_some() && command != CommandName::Sample {
        bail!("the rho override only applies to `sample`");
    }
    let mut cfg = resolved(cfg, command);
    match command {
        CommandName::Dataset => dataset(&mut cfg, ctx),
        CommandName::Train => train(&mut cfg, ctx),
        CommandName::Sample => sample(&mut cfg, ctx),
        CommandName::Decompose => decompose(&mut cfg, ctx),
        CommandName::Sweep => sweep(&mut cfg, ctx),
        CommandName::Pareto => pareto(&mut cfg, ctx),
    }
}

fn load_dataset(path: &Path) -> Result<EmpiricalDataset> {
    let points = io::read_points(path)?;
    EmpiricalDataset::new(points).with_context(|| format!("dataset {}", path.display()))
}

/// Build the score named by `sec`; `ds` backs the empirical sources.
fn load_score(sec: &ScoreSection, ds: Option<&EmpiricalDataset>) -> Result<Box<dyn ScoreField>> {
    let source = sec.source.expect("score source resolved");
    let need_ds = || ds.cloned().context("this score source needs a dataset");
    let score: Box<dyn ScoreField> = match source {
        ScoreSource::Gaussian => Box::new(GaussianMixture::single(vec![0.0; sec.dim], sec.std)?),
        ScoreSource::Empirical => Box::new(need_ds()?),
        ScoreSource::Perturbed => Box::new(PerturbedScore::new(
            need_ds()?,
            PerturbationSpec {
                epsilon: sec.epsilon,
                mode: sec.mode,
                seed: sec.perturbation_seed,
            },
        )?),
        ScoreSource::Mlp => {
            let path = sec.net.as_ref().context("score source `mlp` needs `net`")?;
            Box::new(MlpScoreNet::load(path)?)
        }
    };
    if let Some(ds) = ds {
        ensure!(
            score.dim() == ds.points().dim(),
            "score dimension {} does not match dataset dimension {}",
            score.dim(),
            ds.points().dim()
        );
    }
    Ok(score)
}

fn resolve_score(sec: &mut ScoreSection, default: ScoreSource) -> Result<()> {
    let source = *sec.source.get_or_insert(default);
    if let Some(net) = sec.net.as_mut() {
        absolute(net)?;
    }
    if source == ScoreSource::Mlp && sec.net.is_none() {
        bail!("score source `mlp` needs `net`");
    }
    Ok(())
}

fn dataset(cfg: &mut RunConfig, ctx: &Context) -> Result<()> {
    #[derive(Serialize)]
    struct Summary {
        count: usize,
        dim: usize,
        file: &'static str,
    }
    let spec = cfg.dataset.as_ref().expect("section resolved");
    let ds = build_synthetic_dataset(spec, cfg.seed)?;
    io::write_points(&ctx.path("dataset.csv"), ds.points())?;
    ctx.finish(
        cfg,
        Summary {
            count: ds.len(),
            dim: ds.points().dim(),
            file: "dataset.csv",
        },
    )
}

fn train(cfg: &mut RunConfig, ctx: &Context) -> Result<()> {
    #[derive(Serialize)]
    struct LossRow {
        iteration: usize,
        loss: f64,
    }
    #[derive(Serialize)]
    struct Summary {
        n_params: usize,
        final_loss: Option<f64>,
        net: &'static str,
        loss_log: &'static str,
    }
    let sec = cfg.train.as_mut().expect("section resolved");
    absolute(&mut sec.dataset)?;
    let ds = load_dataset(&sec.dataset)?;
    let outcome = train_mlp_score(&ds, &sec.training(), cfg.seed)?;
    outcome.net.save(&ctx.path("score_net.bin"))?;
    let rows: Vec<LossRow> = outcome
        .loss_log
        .iter()
        .map(|&(iteration, loss)| LossRow { iteration, loss })
        .collect();
    io::write_records(&ctx.path("train_loss.csv"), &rows)?;
    ctx.finish(
        cfg,
        Summary {
            n_params: outcome.net.n_params(),
            final_loss: outcome.loss_log.last().map(|l| l.1),
            net: "score_net.bin",
            loss_log: "train_loss.csv",
        },
    )
}

fn sample(cfg: &mut RunConfig, ctx: &Context) -> Result<()> {
    #[derive(Serialize)]
    struct Summary {
        sampler: &'static str,
        nfe: usize,
        n: usize,
        dim: usize,
        t_start: f64,
        file: &'static str,
    }
    let rho = cfg.unsafe_override.rho();
    if cfg.unsafe_override.rho.is_some() {
        eprintln!("warning: EDM exponent overridden to rho = {rho}");
    }
    let sec = cfg.sample.as_mut().expect("section resolved");
    resolve_score(&mut sec.score, ScoreSource::Gaussian)?;
    if let Some(path) = sec.dataset.as_mut() {
        absolute(path)?;
    }
    let ds = sec.dataset.as_deref().map(load_dataset).transpose()?;
    let score = load_score(&sec.score, ds.as_ref())?;
    let spec = sec.sampler.to_spec(rho)?;
    let (n, dim, t_start) = (sec.n, score.dim(), spec.t_start()?);
    ensure!(n > 0, "sample.n must be positive");

    let mut prior = vec![0.0; n * dim];
    rng::fill_normal(&mut rng::stream(cfg.seed, Stage::Prior, 0), &mut prior);
    prior.iter_mut().for_each(|v| *v *= t_start);
    let x0 = Points::from_vec(prior, dim)?;
    let batch = run_batch(&*score, &x0, &spec, cfg.seed, ctx.exec)?;
    io::write_points(&ctx.path("samples.csv"), &batch.points)?;
    ctx.finish(
        cfg,
        Summary {
            sampler: spec.name(),
            nfe: batch.nfe,
            n,
            dim,
            t_start,
            file: "samples.csv",
        },
    )
}

#[derive(Serialize)]
struct DecompositionRow {
    sampler: &'static str,
    nfe: usize,
    n_samples: usize,
    total_w1: f64,
    contracted_w1: f64,
    additional_w1: f64,
}

fn decompose(cfg: &mut RunConfig, ctx: &Context) -> Result<()> {
    let sec = cfg.decompose.as_mut().expect("section resolved");
    absolute(&mut sec.dataset)?;
    resolve_score(&mut sec.score, ScoreSource::Empirical)?;
    let ds = load_dataset(&sec.dataset)?;
    let score = load_score(&sec.score, Some(&ds))?;
    let window = sec.window.sampler();
    let spec = window.to_spec(sec.setup.window_t_min, sec.setup.window_t_max)?;
    let result = decompose_errors(&ds, &*score, &spec, &sec.setup, cfg.seed, ctx.exec)?;
    io::write_records(
        &ctx.path("decompose.csv"),
        &[DecompositionRow {
            sampler: window.name(),
            nfe: result.nfe,
            n_samples: result.n_samples,
            total_w1: result.total_w1,
            contracted_w1: result.contracted_w1,
            additional_w1: result.additional_w1,
        }],
    )?;
    ctx.finish(cfg, result)
}

fn sweep(cfg: &mut RunConfig, ctx: &Context) -> Result<()> {
    #[derive(Serialize)]
    struct Summary {
        cells: usize,
        failed_cells: usize,
        failed_repetitions: usize,
        file: &'static str,
        failures: &'static str,
    }
    let sec = cfg.sweep.as_mut().expect("section resolved");
    absolute(&mut sec.dataset)?;
    resolve_score(&mut sec.score, ScoreSource::Empirical)?;
    let grid = match sec.preset {
        SweepPreset::Full => SweepGrid::full(),
        SweepPreset::Smoke => SweepGrid::smoke(),
        SweepPreset::Custom => {
            ensure!(
                sec.sde_steps.is_empty() || !sec.noise_mults.is_empty(),
                "sde_steps given without noise_mults"
            );
            ensure!(
                sec.restart_n.is_empty() == sec.restart_k.is_empty(),
                "restart_n and restart_k must be given together"
            );
            SweepGrid::ode(&sec.ode_steps)
                .extend(SweepGrid::sde(&sec.sde_steps, &sec.noise_mults))
                .extend(SweepGrid::restart(&sec.restart_n, &sec.restart_k))
                .extend(SweepGrid::improved_sde(sec.churn.iter().copied()))
        }
    };
    ensure!(!grid.is_empty(), "the sweep grid is empty");
    let ds = load_dataset(&sec.dataset)?;
    let score = load_score(&sec.score, Some(&ds))?;
    let options = SweepOptions {
        repetitions: sec.repetitions,
        timing: sec.timing,
    };
    let outcome = run_sweep(&ds, &*score, &grid, &sec.setup, &options, cfg.seed, ctx.exec)?;
    io::write_records(&ctx.path("sweep.csv"), &outcome.records)?;
    if outcome.failures.is_empty() {
        ctx.write("sweep_failures.csv", "cell,sampler,repetition,message\n")?;
    } else {
        io::write_records(&ctx.path("sweep_failures.csv"), &outcome.failures)?;
    }
    let failed_cells = outcome.records.iter().filter(|r| !r.is_valid()).count();
    for f in &outcome.failures {
        eprintln!("cell {} ({}) repetition {}: {}", f.cell, f.sampler, f.repetition, f.message);
    }
    ctx.finish(
        cfg,
        Summary {
            cells: outcome.records.len(),
            failed_cells,
            failed_repetitions: outcome.failures.len(),
            file: "sweep.csv",
            failures: "sweep_failures.csv",
        },
    )?;
    ensure!(failed_cells < outcome.records.len(), "all {failed_cells} sweep cells failed");
    Ok(())
}

fn pareto(cfg: &mut RunConfig, ctx: &Context) -> Result<()> {
    #[derive(Serialize)]
    struct Summary {
        records: usize,
        frontier: usize,
        file: &'static str,
        plot: &'static str,
    }
    let sec = cfg.pareto.as_mut().expect("section resolved");
    absolute(&mut sec.input)?;
    let records: Vec<SweepRecord> = io::read_records(&sec.input)?;
    let mut groups: Vec<(String, Vec<SweepRecord>)> = Vec::new();
    for r in &records {
        let label = if sec.per_sampler { r.sampler.clone() } else { "all".to_string() };
        match groups.iter_mut().find(|g| g.0 == label) {
            Some(g) => g.1.push(r.clone()),
            None => groups.push((label, vec![r.clone()])),
        }
    }
    let (x, y) = (sec.x, sec.y);
    let mut frontier: Vec<FrontierRecord> = Vec::new();
    let mut series = Vec::new();
    for (label, members) in &groups {
        let front = pareto_frontier(members, x, y);
        series.push(Series {
            label: label.clone(),
            points: front.iter().map(|f| (x.get(&f.record), y.get(&f.record))).collect(),
        });
        frontier.extend(front);
    }
    io::write_frontier(&ctx.path("pareto.csv"), &frontier)?;
    let background: Vec<(f64, f64)> = records.iter().map(|r| (x.get(r), y.get(r))).collect();
    ctx.write("pareto.svg", &frontier_svg(x.as_str(), y.as_str(), &background, &series))?;
    ctx.finish(
        cfg,
        Summary {
            records: records.len(),
            frontier: frontier.len(),
            file: "pareto.csv",
            plot: "pareto.svg",
        },
    )
}
