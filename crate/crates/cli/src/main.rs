use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use seanav_core::features::ExtractorKind;
use seanav_core::harness::{
    build_samples, fit_stats, gen_dataset, hover_series, load_dataset, metrics_table, plan_terrain,
    save_dataset, sweep_traces, train_on_samples, HarnessError, ReportRow, RunConfig, Split,
};
use seanav_core::imaging::{degrade, NoiseField};
use seanav_core::policy::{load_checkpoint, save_checkpoint, Policy, PolicyParams};
use seanav_core::runtime::{
    evaluate_hover, evaluate_navigation, goal_sweep, mix_seed, parse_jsonl, two_path_scene,
    MetricsReport, SweepTrajectory,
};
use seanav_core::world::{generate_scenario, ClearImage, ScenarioKind};

#[derive(Parser)]
#[command(
    name = "seanav",
    version,
    about = "Underwater visual navigation: data, training and evaluation"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults to the desk profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// none, IC, 3C or 7C.
    #[arg(long, global = true)]
    water: Option<String>,
    /// oracle or degraded.
    #[arg(long, global = true)]
    extractor: Option<ExtractorKind>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one scenario and its expert plan.
    GenWorld {
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Generate a single scene of this kind instead of a dataset terrain.
        #[arg(long)]
        kind: Option<String>,
    },
    /// Generate a dataset directory.
    GenData,
    /// Fit reference normalization statistics on a dataset.
    FitStats {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train a policy and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Supervise heave with the unrefined expert commands.
        #[arg(long)]
        no_refine: bool,
    },
    /// Seeded navigation trials.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Station keeping under vertical impulses.
    Hover {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Goal-direction sweep on the symmetric two-path scene.
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Degrade stored clear frames and write them as PNG.
    Render {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 8)]
        limit: usize,
    },
    /// Collect evaluation outputs under a directory into CSV tables.
    Report {
        #[arg(long)]
        inputs: PathBuf,
    },
}

type Failure = Box<dyn std::error::Error>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_config(c: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::desk(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
        cfg.train.seed = s;
    }
    if let Some(w) = &c.water {
        cfg.water = w.clone();
    }
    if let Some(x) = c.extractor {
        cfg.extractor = x;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_path(c: &Common, default: &str) -> PathBuf {
    c.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn out_dir(c: &Common, default: &str) -> Result<PathBuf, Failure> {
    let dir = out_path(c, default);
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn policy_from(path: &Path) -> Result<Policy, Failure> {
    let ck = load_checkpoint(path)?;
    Ok(Policy::new(ck.params, ck.stats))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let c = &cli.common;
    let cfg = load_config(c)?;
    let water = cfg.water_type()?;
    match cli.command {
        Command::GenWorld { index, kind } => {
            let dir = out_dir(c, "world")?;
            if let Some(kind) = kind {
                let kind = match kind.to_ascii_lowercase().as_str() {
                    "pillars" => ScenarioKind::Pillars,
                    "hills" => ScenarioKind::Hills,
                    other => return Err(format!("unknown scenario kind '{other}'").into()),
                };
                let sc = generate_scenario(kind, cfg.seed, &cfg.world)?;
                sc.save(&dir.join("scenario.json"))?;
            } else {
                let tp = plan_terrain(&cfg, index)?;
                tp.scenario.save(&dir.join("scenario.json"))?;
                write_json(&dir.join("waypoints.json"), &tp.path)?;
                write_json(&dir.join("plan.json"), &tp.plan)?;
                println!(
                    "terrain {index}: {} waypoints, {} plan steps",
                    tp.path.len(),
                    tp.plan_len
                );
            }
        }
        Command::GenData => {
            let dir = out_path(c, "data");
            let ds = gen_dataset(&cfg)?;
            save_dataset(&ds, &dir)?;
            println!(
                "{} episodes ({} skipped): {} train / {} val observations",
                ds.episodes.len(),
                ds.manifest.skipped.len(),
                ds.manifest.train_observations,
                ds.manifest.val_observations
            );
        }
        Command::FitStats { data } => {
            let ds = load_dataset(&data)?;
            let params = PolicyParams::init(cfg.policy.clone(), cfg.train.seed)?;
            let stats = fit_stats(&ds, &params)?;
            write_json(&out_path(c, "stats.json"), &stats)?;
            println!("mu {:.6} sigma {:.6}", stats.mu, stats.sigma);
        }
        Command::Train { data, no_refine } => {
            let ds = load_dataset(&data)?;
            let params = PolicyParams::init(cfg.policy.clone(), cfg.train.seed)?;
            let stats = fit_stats(&ds, &params)?;
            let train = build_samples(&ds, Split::Train, !no_refine, cfg.policy.p)?;
            let val = build_samples(&ds, Split::Val, !no_refine, cfg.policy.p)?;
            let (policy, history) =
                train_on_samples(params, stats, &train, &val, &cfg.train, &mut |e, l| {
                    println!("epoch {e:>4} loss {l:.5}")
                })?;
            if let Some(v) = history.val_loss.last() {
                println!("validation loss {v:.5}");
            }
            save_checkpoint(
                &policy.params,
                &policy.stats,
                &cfg.train,
                &out_path(c, "policy.ckpt"),
            )?;
        }
        Command::Eval { checkpoint, trials } => {
            let policy = policy_from(&checkpoint)?;
            let mut nav = cfg.navigation_config();
            if let Some(t) = trials {
                nav.trials = t;
            }
            let (m, summaries) = evaluate_navigation(&policy, &nav, water, cfg.extractor)?;
            let dir = out_dir(c, "eval")?;
            let label = format!("{}/{}", extractor_name(cfg.extractor), cfg.water);
            write_json(
                &dir.join("metrics.json"),
                &ReportRow {
                    label,
                    metrics: m.clone(),
                },
            )?;
            write_json(&dir.join("episodes.json"), &summaries)?;
            print_metrics(&m);
        }
        Command::Hover { checkpoint } => {
            let policy = policy_from(&checkpoint)?;
            let hc = cfg.hover_config();
            let (log, summary) = evaluate_hover(&policy, &hc, water, cfg.extractor, cfg.seed)?;
            let dir = out_dir(c, "hover")?;
            fs::write(dir.join("hover.jsonl"), log.to_jsonl())?;
            write_json(&dir.join("hover_summary.json"), &summary)?;
            for r in &summary.recoveries {
                println!(
                    "t={:.1} peak {:.3} m recovery {} residual {:.3} m",
                    r.t_disturbance,
                    r.peak_deviation,
                    r.recovery_time
                        .map_or("none".into(), |t| format!("{t:.1} s")),
                    r.residual
                );
            }
        }
        Command::Sweep { checkpoint } => {
            let policy = policy_from(&checkpoint)?;
            let scene = two_path_scene();
            let d: Vec<f64> = cfg.sweep.d_degrees.iter().map(|v| v.to_radians()).collect();
            let mut all = Vec::new();
            for &seed in &cfg.sweep.noise_seeds {
                all.extend(goal_sweep(
                    &policy,
                    &scene,
                    &d,
                    &cfg.sweep.s_values,
                    seed,
                    &cfg.camera,
                    cfg.extractor,
                    cfg.mpc1.dt,
                )?);
            }
            let dir = out_dir(c, "sweep")?;
            write_json(&dir.join("sweep.json"), &all)?;
            for t in &all {
                println!(
                    "d {:+5.1} s {:.2} seed {} lateral {:+.3}",
                    t.d.to_degrees(),
                    t.s,
                    t.seed,
                    t.mean_lateral
                );
            }
        }
        Command::Render { data, limit } => {
            let water = water.ok_or("render needs --water IC, 3C or 7C")?;
            let ds = load_dataset(&data)?;
            let dir = out_dir(c, "render")?;
            let mut written = 0;
            'outer: for ep in &ds.episodes {
                for (i, (clear, depth)) in ep.clear.iter().zip(&ep.depth).enumerate() {
                    if written == limit {
                        break 'outer;
                    }
                    let field =
                        NoiseField::new(mix_seed(mix_seed(cfg.seed, ep.terrain as u64), i as u64));
                    let img = degrade(clear, depth, &water, &field);
                    let name = format!("terrain{:04}_frame{i:05}_{}.png", ep.terrain, water.name);
                    save_png(&img, &dir.join(name))?;
                    written += 1;
                }
            }
            if written == 0 {
                return Err(
                    "dataset holds no stored frames (generate with data.store_frames = true)"
                        .into(),
                );
            }
            println!("wrote {written} images to {}", dir.display());
        }
        Command::Report { inputs } => {
            let dir = out_dir(c, "report")?;
            report(&inputs, &dir, &cfg)?;
        }
    }
    Ok(())
}

fn extractor_name(e: ExtractorKind) -> &'static str {
    match e {
        ExtractorKind::Oracle => "oracle",
        ExtractorKind::Degraded => "degraded",
    }
}

fn print_metrics(m: &MetricsReport) {
    let avg = m.avg_collisions.map_or("-".into(), |a| format!("{a:.2}"));
    println!(
        "trials {} Succ% {:.1} CF% {:.1} A.C. {avg}",
        m.trials, m.succ_pct, m.cf_pct
    );
}

fn save_png(img: &ClearImage, path: &Path) -> Result<(), Failure> {
    let bytes: Vec<u8> = img
        .data
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, bytes)
        .ok_or("image size mismatch")?;
    buf.save(path)?;
    Ok(())
}

fn files_named(root: &Path, name: &str, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in fs::read_dir(root)? {
        let p = entry?.path();
        if p.is_dir() {
            files_named(&p, name, out)?;
        } else if p.file_name().is_some_and(|n| n == name) {
            out.push(p);
        }
    }
    Ok(())
}

fn report(inputs: &Path, dir: &Path, cfg: &RunConfig) -> Result<(), Failure> {
    let mut found = Vec::new();
    files_named(inputs, "metrics.json", &mut found)?;
    found.sort();
    let rows = found
        .iter()
        .map(|p| Ok(serde_json::from_str::<ReportRow>(&fs::read_to_string(p)?)?))
        .collect::<Result<Vec<_>, Failure>>()?;
    fs::write(dir.join("metrics.csv"), metrics_table(&rows))?;

    let mut hovers = Vec::new();
    files_named(inputs, "hover.jsonl", &mut hovers)?;
    hovers.sort();
    for (i, p) in hovers.iter().enumerate() {
        let records = parse_jsonl(&fs::read_to_string(p)?)
            .map_err(|(line, e)| HarnessError::Format(format!("{}:{line}: {e}", p.display())))?;
        fs::write(
            dir.join(format!("hover_series_{i}.csv")),
            hover_series(&records, cfg.hover.altitude),
        )?;
    }

    let mut sweeps = Vec::new();
    files_named(inputs, "sweep.json", &mut sweeps)?;
    sweeps.sort();
    let mut traces: Vec<SweepTrajectory> = Vec::new();
    for p in &sweeps {
        traces.extend(serde_json::from_str::<Vec<SweepTrajectory>>(
            &fs::read_to_string(p)?,
        )?);
    }
    if !traces.is_empty() {
        fs::write(dir.join("sweep_traces.csv"), sweep_traces(&traces))?;
    }
    println!(
        "{} metric rows, {} hover series, {} sweep traces",
        rows.len(),
        hovers.len(),
        traces.len()
    );
    Ok(())
}
