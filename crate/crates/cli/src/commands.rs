use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dmpvae::cvae::{load, save, train};
use dmpvae::dataset::{
    augment, digit_templates, export_csv, ingest_csv, read_trajectories_csv, sidecar_path, BundleMetadata,
    Source,
};
use dmpvae::dmp::Trajectory;
use dmpvae::generator::{export_result, finetune, generate, GenerationRecord, TaskSpec};
use dmpvae::handwriting::{evaluate_handwriting, HandwritingConfig, HandwritingReport};
use dmpvae::sim2d::{pre_push_point, run_trial, write_trace_csv, EpisodeSummary, SimReport, SimTask};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{resolve, RunConfig};
use crate::plot::{Plot, Series};
use crate::{Cli, CliError, Command, GenerateArgs};

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(dmpvae::Error::Io {
        context: path.display().to_string(),
        source: e,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// JSON with the provenance fields first.
fn write_stamped_json(path: &Path, cfg: &RunConfig, body: &impl Serialize) -> Result<()> {
    let doc = json!({ "seed": cfg.seed, "config_hash": cfg.hash(), "data": body });
    write(path, &(serde_json::to_string_pretty(&doc).expect("json") + "\n"))
}

fn parse_vec(what: &str, s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| CliError::Usage(format!("--{what} {s:?}: {e}")))
}

fn overrides(cli: &Cli) -> Result<Value> {
    let mut o = json!({});
    if let Some(seed) = cli.common.seed {
        o["seed"] = json!(seed);
    }
    if let Some(out) = &cli.common.out {
        o["out"] = json!(out);
    }
    match &cli.command {
        Command::Augment { copies, k } => {
            if let Some(c) = copies {
                o["augment"]["copies_per_demo"] = json!(c);
            }
            if let Some(k) = k {
                o["augment"]["k"] = json!(k);
            }
        }
        Command::Train { dataset, epochs } => {
            if let Some(d) = dataset {
                o["dataset"] = json!(d);
            }
            if let Some(e) = epochs {
                o["train"]["epochs"] = json!(e);
            }
        }
        Command::Generate(a) | Command::Finetune(a) => {
            if let Some(c) = &a.checkpoint {
                o["checkpoint"] = json!(c);
            }
            if let Some(w) = &a.weights {
                let w = parse_vec("weights", w)?;
                if w.len() != 3 {
                    return Err(CliError::Usage(format!("--weights needs three values, got {}", w.len())));
                }
                o["finetune"]["weights"] = json!(w);
            }
        }
        Command::EvalHandwriting { checkpoint, endpoints } => {
            if let Some(c) = checkpoint {
                o["checkpoint"] = json!(c);
            }
            if let Some(n) = endpoints {
                o["handwriting"]["endpoints"] = json!(n);
            }
        }
        Command::EvalSim { checkpoint, episodes, .. } => {
            if let Some(c) = checkpoint {
                o["checkpoint"] = json!(c);
            }
            if let Some(n) = episodes {
                o["sim"]["episodes"] = json!(n);
            }
        }
        Command::Plot { .. } => {}
    }
    Ok(o)
}

pub fn run(cli: Cli) -> Result<()> {
    if cli.common.single_thread {
        // A second call in the same process keeps the existing pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
    let cfg = resolve(cli.common.config.as_deref(), overrides(&cli)?)?;
    fs::create_dir_all(&cfg.out).map_err(|e| io_err(&cfg.out, e))?;
    match &cli.command {
        Command::Augment { .. } => cmd_augment(&cfg),
        Command::Train { .. } => cmd_train(&cfg),
        Command::Generate(a) => cmd_generate(&cfg, a, false),
        Command::Finetune(a) => cmd_generate(&cfg, a, true),
        Command::EvalHandwriting { .. } => cmd_eval_handwriting(&cfg),
        Command::EvalSim { task, .. } => cmd_eval_sim(&cfg, task),
        Command::Plot { inputs, output } => cmd_plot(&cfg, inputs, output.as_deref()),
    }
}

fn cmd_augment(cfg: &RunConfig) -> Result<()> {
    let base = digit_templates(&cfg.tasks, &cfg.dmp)?;
    let bundle = augment(&base, &cfg.augment)?;
    let path = cfg.dataset_path();
    export_csv(&bundle, &path, Some(&cfg.stamp()))?;
    for id in bundle.task_ids() {
        println!("task {id}: {} trajectories", bundle.count(id));
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let bundle = ingest_csv(&cfg.dataset_path())?;
    let t = Instant::now();
    let mut model = train(&bundle, &cfg.train)?;
    let secs = t.elapsed().as_secs_f64();
    model.meta.config_hash = Some(cfg.hash());
    let ckpt = cfg.checkpoint_path();
    save(&model, &ckpt)?;

    let stamp = cfg.stamp();
    let mut curve = format!("# seed={} config_hash={}\nepoch,total,recon,kl\n", stamp.seed, stamp.config_hash);
    for e in &model.meta.loss_curve {
        curve.push_str(&format!("{},{:?},{:?},{:?}\n", e.epoch, e.total, e.recon, e.kl));
    }
    write(&cfg.out.join("loss.csv"), &curve)?;
    let (first, last) = (model.meta.loss_curve.first(), model.meta.loss_curve.last());
    if let (Some(f), Some(l)) = (first, last) {
        println!("loss {:.5} -> {:.5} over {} epochs", f.total, l.total, model.meta.epochs);
    }
    println!("trained on {} samples in {secs:.1}s; wrote {}", model.meta.samples, ckpt.display());
    Ok(())
}

fn points(t: &Trajectory) -> Vec<[f64; 2]> {
    t.points().map(|p| [p[0], p[1]]).collect()
}

fn cmd_generate(cfg: &RunConfig, args: &GenerateArgs, require_via: bool) -> Result<()> {
    if require_via && args.via.is_empty() {
        return Err(CliError::Usage("finetune needs at least one --via point".into()));
    }
    let model = load(&cfg.checkpoint_path())?;
    let d = model.dmp.dims;
    let start = parse_vec("start", &args.start)?;
    let goal = parse_vec("goal", &args.goal)?;
    let via = args.via.iter().map(|v| parse_vec("via", v)).collect::<Result<Vec<_>>>()?;
    for (what, v) in [("start", &start), ("goal", &goal)].into_iter().chain(via.iter().map(|v| ("via", v))) {
        if v.len() != d {
            return Err(CliError::Usage(format!("--{what} needs {d} values, got {}", v.len())));
        }
    }
    let mut spec = TaskSpec::new(args.task, start, goal).with_via_points(via);
    if let Some(z) = &args.z {
        spec = spec.with_latent(parse_vec("z", z)?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let initial = generate(&model, &spec, &mut rng)?;
    let result = if spec.via_points.is_empty() {
        initial.clone()
    } else {
        finetune(&model, &initial, &cfg.finetune)?
    };

    let stamp = cfg.stamp();
    let csv = cfg.out.join(format!("{}.csv", args.name));
    let record: GenerationRecord = export_result(&result, &csv, Some(&stamp))?;
    let mut plot = Plot::default();
    if !spec.via_points.is_empty() {
        plot.series.push(Series {
            points: points(&initial.trajectory),
            faint: true,
        });
    }
    plot.line(points(&result.trajectory));
    plot.goals.push([spec.goal[0], spec.goal[1]]);
    plot.vias.extend(spec.via_points.iter().map(|v| [v[0], v[1]]));
    let svg = cfg.out.join(format!("{}.svg", args.name));
    write(&svg, &plot.to_svg(Some(&stamp)))?;

    let dg = &record.diagnostics;
    println!("end error {:.5}", dg.end_error);
    for (i, v) in dg.via_errors.iter().enumerate() {
        println!("via {i} distance {v:.5}");
    }
    if !spec.via_points.is_empty() {
        println!("shape error {:.5} after {} iterations", dg.shape_error, dg.iterations);
    }
    if let Some(w) = &dg.warning {
        eprintln!("warning: {w}");
    }
    println!("wrote {}, {} and {}", csv.display(), sidecar_path(&csv).display(), svg.display());
    Ok(())
}

fn cmd_eval_handwriting(cfg: &RunConfig) -> Result<()> {
    let model = load(&cfg.checkpoint_path())?;
    let hw = &cfg.handwriting;
    // Each task draws from its own stream, so tasks can run in parallel.
    let parts = hw
        .tasks
        .par_iter()
        .map(|&t| {
            let one = HandwritingConfig {
                tasks: vec![t],
                ..hw.clone()
            };
            evaluate_handwriting(&model, &one, cfg.seed)
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let report = HandwritingReport {
        seed: cfg.seed,
        config: hw.clone(),
        rows: parts.iter().flat_map(|p| p.rows.clone()).collect(),
        timings: parts.iter().flat_map(|p| p.timings.clone()).collect(),
    };
    let stamp = cfg.stamp();
    let csv = format!("# seed={} config_hash={}\n{}", stamp.seed, stamp.config_hash, report.to_csv());
    write(&cfg.out.join("handwriting.csv"), &csv)?;
    write_stamped_json(&cfg.out.join("handwriting.json"), cfg, &report)?;
    print!("{}", report.to_table());
    Ok(())
}

fn episode_plot(e: &EpisodeSummary) -> Plot {
    let mut plot = Plot::default();
    let ws = &e.workspace;
    plot.boxes.push(([ws.cube.center[0], ws.cube.center[1]], ws.cube.half_extent));
    if let Some(r) = &e.result {
        plot.line(r.effector_trace.iter().map(|p| [p[0], p[1]]).collect());
        plot.boxes.push(([r.final_cube[0], r.final_cube[1]], ws.cube.half_extent));
    }
    plot.goals.push([ws.goal_marker[0], ws.goal_marker[1]]);
    if ws.task == SimTask::Push {
        let v = pre_push_point(ws);
        plot.vias.push([v[0], v[1]]);
    }
    // Frame the whole workspace.
    plot.series.push(Series {
        points: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.0, 0.0]],
        faint: true,
    });
    plot
}

fn cmd_eval_sim(cfg: &RunConfig, task: &str) -> Result<()> {
    let tasks = match task {
        "both" => vec![SimTask::Reach, SimTask::Push],
        t => vec![t.parse::<SimTask>().map_err(|e| CliError::Usage(e.to_string()))?],
    };
    let model = load(&cfg.checkpoint_path())?;
    let stamp = cfg.stamp();
    let traces = cfg.out.join("traces");
    fs::create_dir_all(&traces).map_err(|e| io_err(&traces, e))?;
    for task in tasks {
        let name = match task {
            SimTask::Reach => "reach",
            SimTask::Push => "push",
        };
        let t = Instant::now();
        let episodes: Vec<EpisodeSummary> = (0..cfg.sim.episodes as u64)
            .into_par_iter()
            .map(|i| run_trial(&model, task, cfg.seed + i, &cfg.finetune))
            .collect();
        let secs = t.elapsed().as_secs_f64();
        for e in &episodes {
            let stem = traces.join(format!("{name}_{}", e.seed));
            if let Some(r) = &e.result {
                write_trace_csv(r, &stem.with_extension("csv"), Some(&stamp))?;
            }
            write(&stem.with_extension("svg"), &episode_plot(e).to_svg(Some(&stamp)))?;
        }
        let report = SimReport::from_episodes(task, episodes);
        write_stamped_json(&cfg.out.join(format!("sim_{name}.json")), cfg, &report)?;
        let rate = report
            .success_rate
            .map_or("undefined (no episodes)".to_string(), |r| format!("{r:.2}"));
        println!("{name}: success rate {rate} over {} episodes ({secs:.1}s)", report.episodes.len());
        if let Some(err) = report.mean_goal_error.filter(|_| task == SimTask::Push) {
            println!("{name}: mean cube-goal distance {err:.4}");
        }
        for e in report.episodes.iter().filter(|e| !e.success()) {
            let why = e.error.clone().unwrap_or_else(|| "missed".into());
            println!("  seed {} failed: {why}", e.seed);
        }
    }
    Ok(())
}

fn cmd_plot(cfg: &RunConfig, inputs: &[PathBuf], output: Option<&Path>) -> Result<()> {
    if inputs.is_empty() {
        return Err(CliError::Usage("plot needs at least one trajectory CSV".into()));
    }
    let mut plot = Plot::default();
    for path in inputs {
        let trajs = read_trajectories_csv(path, cfg.dmp.dt)?;
        let side = sidecar_path(path);
        let sidecar = fs::read_to_string(&side).ok();
        let sources = sidecar
            .as_deref()
            .and_then(|s| serde_json::from_str::<BundleMetadata>(s).ok())
            .map(|m| m.sources);
        if let Some(rec) = sidecar.as_deref().and_then(|s| serde_json::from_str::<GenerationRecord>(s).ok()) {
            plot.goals.push([rec.spec.goal[0], rec.spec.goal[1]]);
            plot.vias.extend(rec.spec.via_points.iter().map(|v| [v[0], v[1]]));
        }
        for (i, (_, t)) in trajs.iter().enumerate() {
            if t.dims() < 2 {
                return Err(CliError::Usage(format!("{}: plotting needs two dimensions", path.display())));
            }
            let faint = sources.as_ref().is_some_and(|s| s.get(i) == Some(&Source::Augmented));
            plot.series.push(Series { points: points(t), faint });
        }
    }
    // Sources on top of their copies.
    plot.series.sort_by_key(|s| !s.faint);
    let out = output.map_or_else(|| cfg.out.join("plot.svg"), Path::to_path_buf);
    write(&out, &plot.to_svg(Some(&cfg.stamp())))?;
    println!("wrote {}", out.display());
    Ok(())
}
