mod report;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde_json::json;

use sphmask::ablation::{ablation_run, component_variants, grid_precision_sweep, Scene};
use sphmask::fitter::{fit_scene, FitConfig, Lambdas};
use sphmask::gradcheck::run_suite;
use sphmask::io::{from_json_str, read_scene, to_json_string, write_scene, PredictionsFile};
use sphmask::radial::tightness_report;
use sphmask::{evaluate, generate_scene, SceneSpec, SectorGrid};

use report::{RunReport, Settings};

#[derive(Parser, Debug)]
#[command(name = "sphmask", version, about = "Spherical-mask instance segmentation on synthetic point clouds")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Sector grid as THETA,PHI bins [default: 5,5]
    #[arg(long, global = true, value_parser = parse_grid)]
    grid: Option<SectorGrid>,
    /// Minimum confidence kept by NMS [default: 0.2]
    #[arg(long, global = true)]
    conf_threshold: Option<f64>,
    /// IoU at which NMS suppresses a mask [default: 0.5]
    #[arg(long, global = true)]
    nms_iou: Option<f64>,
    /// Loss weights cls,conf,coarse,fine [default: 0.5,0.5,1,1]
    #[arg(long, global = true, value_parser = parse_lambdas)]
    lambda: Option<Lambdas>,
    /// Seed overriding the one in the spec or config file
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for internal parallelism
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write the run report here instead of stdout
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    /// Include wall-clock timings in the report (makes it non-reproducible)
    #[arg(long, global = true)]
    timings: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a labeled synthetic scene
    Synth {
        /// Scene spec JSON; defaults are used for missing fields
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit proposals to a labeled scene and write predictions
    Fit {
        #[arg(long)]
        scene: PathBuf,
        /// Fit config JSON
        #[arg(long)]
        config: Option<PathBuf>,
        /// Class ids to score over [default: classes present in the scene]
        #[arg(long, value_delimiter = ',')]
        classes: Option<Vec<i32>>,
        /// Predictions file (RLE masks)
        #[arg(long)]
        out: PathBuf,
        /// Also write the surviving proposals (center, rays, deltas)
        #[arg(long)]
        proposals: Option<PathBuf>,
    },
    /// Score a predictions file against a scene's labels
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        /// Write the evaluation JSON here
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write a per-class CSV table here
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Compare radial polygons with bounding boxes over a grid sweep
    BenchTightness {
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Number of scenes; scene i uses seed + i
        #[arg(long, default_value_t = 10)]
        scenes: usize,
        /// Grids separated by ';' [default: 1,1;2,2;...;8,8]
        #[arg(long, value_parser = parse_grid_list)]
        grids: Option<GridList>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check analytic gradients against central differences
    Gradcheck {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a scene set with each loss component switched on or off
    Ablate {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        scenes: usize,
        /// Grids separated by ';' [default: the config grid]
        #[arg(long, value_parser = parse_grid_list)]
        grids: Option<GridList>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Debug, Clone)]
struct GridList(Vec<SectorGrid>);

fn parse_grid(s: &str) -> std::result::Result<SectorGrid, String> {
    let (t, p) = s.split_once(',').ok_or_else(|| format!("expected THETA,PHI, got {s:?}"))?;
    let bins = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("bad bin count {v:?}: {e}"));
    SectorGrid::new(bins(t)?, bins(p)?).map_err(|e| e.to_string())
}

fn parse_grid_list(s: &str) -> std::result::Result<GridList, String> {
    s.split(';').filter(|g| !g.trim().is_empty()).map(parse_grid).collect::<std::result::Result<_, _>>().map(GridList)
}

fn parse_lambdas(s: &str) -> std::result::Result<Lambdas, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("bad weight {x:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    let a: [f64; 4] = v.try_into().map_err(|v: Vec<f64>| format!("expected 4 weights, got {}", v.len()))?;
    Ok(Lambdas::from_array(a))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    from_json_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_spec(path: Option<&Path>, seed: Option<u64>) -> Result<SceneSpec> {
    let mut spec: SceneSpec = path.map(read_json).transpose()?.unwrap_or_default();
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    Ok(spec)
}

/// Config file, then explicit flags on top.
fn load_config(path: Option<&Path>, common: &Common) -> Result<FitConfig> {
    let mut cfg: FitConfig = path.map(read_json).transpose()?.unwrap_or_default();
    if let Some(g) = common.grid {
        cfg.grid = g;
    }
    if let Some(l) = common.lambda {
        cfg.lambdas = l;
    }
    if let Some(t) = common.conf_threshold {
        cfg.nms.conf_threshold = t;
    }
    if let Some(t) = common.nms_iou {
        cfg.nms.iou_threshold = t;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn scene_set(spec: &SceneSpec, count: usize) -> Result<Vec<Scene>> {
    (0..count as u64)
        .map(|i| {
            let s = SceneSpec { seed: spec.seed.wrapping_add(i), ..spec.clone() };
            let (cloud, gts) = generate_scene(&s)?;
            Ok(Scene { cloud, gts, classes: s.classes() })
        })
        .collect()
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

struct Timer {
    enabled: bool,
    start: Instant,
    marks: BTreeMap<String, f64>,
}

impl Timer {
    fn new(enabled: bool) -> Self {
        Self { enabled, start: Instant::now(), marks: BTreeMap::new() }
    }

    fn mark(&mut self, name: &str) {
        let ms = self.start.elapsed().as_secs_f64() * 1e3;
        self.marks.insert(name.to_string(), ms);
        self.start = Instant::now();
    }

    fn finish(self) -> Option<BTreeMap<String, f64>> {
        self.enabled.then_some(self.marks)
    }
}

fn run(cli: Cli) -> Result<bool> {
    let common = cli.common;
    if let Some(n) = common.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the worker pool")?;
    }
    let mut timer = Timer::new(common.timings);
    let mut pass = true;

    let report = match &cli.command {
        Command::Synth { spec, out } => {
            let spec = load_spec(spec.as_deref(), common.seed)?;
            let (cloud, gts) = generate_scene(&spec)?;
            write_scene(out, &cloud).with_context(|| format!("writing {}", out.display()))?;
            timer.mark("synth");
            RunReport::new(
                "synth",
                Settings::from_common(&common, None),
                json!({ "spec": spec }),
                vec![display(out)],
                json!({ "points": cloud.len(), "instances": gts.len() }),
            )
        }
        Command::Fit { scene, config, classes, out, proposals } => {
            let cfg = load_config(config.as_deref(), &common)?;
            let cloud = read_scene(scene).with_context(|| format!("reading {}", scene.display()))?;
            let gts = cloud.instances()?;
            let classes = match classes {
                Some(c) => c.clone(),
                None => {
                    let mut c: Vec<i32> = gts.iter().map(|g| g.class_id).collect();
                    c.sort_unstable();
                    c.dedup();
                    c
                }
            };
            if classes.is_empty() {
                bail!("scene has no labeled instances; pass --classes to fit anyway");
            }
            let outcome = fit_scene(&cloud, &gts, &classes, &cfg)?;
            timer.mark("fit");
            let file = PredictionsFile::new(cloud.len(), classes.clone(), outcome.masks.clone());
            write_text(out, &to_json_string(&file)?)?;
            let mut outputs = vec![display(out)];
            if let Some(p) = proposals {
                write_text(p, &to_json_string(&outcome.proposals)?)?;
                outputs.push(display(p));
            }
            RunReport::new(
                "fit",
                Settings::from_config(&cfg, &common),
                json!({ "fit": cfg, "classes": classes, "scene": display(scene) }),
                outputs,
                json!({
                    "predictions": outcome.masks.len(),
                    "mean_iou": outcome.mean_iou,
                    "instance_iou": outcome.instance_iou,
                    "final_loss": outcome.history.last(),
                    "loss_history": outcome.history,
                    "eval": outcome.eval,
                }),
            )
        }
        Command::Eval { predictions, scene, out, csv } => {
            let text = fs::read_to_string(predictions).with_context(|| format!("reading {}", predictions.display()))?;
            let preds = PredictionsFile::from_json(&text).with_context(|| format!("parsing {}", predictions.display()))?;
            let cloud = read_scene(scene).with_context(|| format!("reading {}", scene.display()))?;
            if preds.point_count != cloud.len() {
                bail!("predictions cover {} points but the scene has {}", preds.point_count, cloud.len());
            }
            let gts = cloud.instances()?;
            let result = evaluate(&preds.predictions, &gts, cloud.len(), &preds.classes)?;
            timer.mark("eval");
            let mut outputs = Vec::new();
            if let Some(o) = out {
                write_text(o, &to_json_string(&result)?)?;
                outputs.push(display(o));
            }
            if let Some(c) = csv {
                write_text(c, &result.to_csv())?;
                outputs.push(display(c));
            }
            RunReport::new(
                "eval",
                Settings::from_common(&common, None),
                json!({ "predictions": display(predictions), "scene": display(scene), "classes": preds.classes }),
                outputs,
                serde_json::to_value(&result)?,
            )
        }
        Command::BenchTightness { spec, scenes, grids, out } => {
            let spec = load_spec(spec.as_deref(), common.seed)?;
            let grids = grids.clone().map(|g| g.0).unwrap_or_else(|| (1..=8).map(|n| SectorGrid::new(n, n).expect("n >= 1")).collect());
            let set = scene_set(&spec, *scenes)?;
            let precision = grid_precision_sweep(&set, &grids)?;
            let mut rows = Vec::new();
            for (grid, prec) in grids.iter().zip(&precision) {
                let mut records = Vec::new();
                for s in &set {
                    records.extend(tightness_report(&s.cloud, &s.gts, *grid)?);
                }
                let n = records.len().max(1) as f64;
                let tighter = records.iter().filter(|r| r.radial_enclosed_background < r.aabb_enclosed_background).count();
                rows.push(json!({
                    "grid": grid,
                    "instances": records.len(),
                    "radial_tighter_fraction": tighter as f64 / n,
                    "mean_radial_background": records.iter().map(|r| r.radial_enclosed_background as f64).sum::<f64>() / n,
                    "mean_aabb_background": records.iter().map(|r| r.aabb_enclosed_background as f64).sum::<f64>() / n,
                    "mean_radial_recall": records.iter().map(|r| r.radial_recall).sum::<f64>() / n,
                    "mean_precision": prec.mean_precision,
                    "mean_recall": prec.mean_recall,
                }));
            }
            timer.mark("bench");
            let table = json!({ "rows": rows });
            let mut outputs = Vec::new();
            if let Some(o) = out {
                write_text(o, &to_json_string(&table)?)?;
                outputs.push(display(o));
            }
            RunReport::new(
                "bench-tightness",
                Settings::from_common(&common, None),
                json!({ "spec": spec, "scenes": scenes, "grids": grids }),
                outputs,
                table,
            )
        }
        Command::Gradcheck { trials, out } => {
            let seed = common.seed.unwrap_or(1);
            let result = run_suite(seed, *trials)?;
            timer.mark("gradcheck");
            pass = result.pass;
            let mut outputs = Vec::new();
            if let Some(o) = out {
                write_text(o, &to_json_string(&result)?)?;
                outputs.push(display(o));
            }
            let worst = result.entries.iter().map(|e| e.max_relative_error).fold(0.0, f64::max);
            let mut settings = Settings::from_common(&common, None);
            settings.seed = Some(seed);
            RunReport::new(
                "gradcheck",
                settings,
                json!({ "trials": trials }),
                outputs,
                json!({ "result": if result.pass { "pass" } else { "fail" }, "max_relative_error": worst, "entries": result.entries }),
            )
        }
        Command::Ablate { spec, config, scenes, grids, out, csv } => {
            let spec = load_spec(spec.as_deref(), common.seed)?;
            let cfg = load_config(config.as_deref(), &common)?;
            let set = scene_set(&spec, *scenes)?;
            let grids = grids.clone().map(|g| g.0).unwrap_or_default();
            let rows = ablation_run(&set, &cfg, &component_variants(), &grids)?;
            timer.mark("ablate");
            let mut outputs = Vec::new();
            if let Some(o) = out {
                write_text(o, &to_json_string(&rows)?)?;
                outputs.push(display(o));
            }
            if let Some(c) = csv {
                let mut table = String::from("variant,grid,mean_iou,mean_ap,mean_ap50\n");
                for r in &rows {
                    table.push_str(&format!("{},{},{:.4},{:.4},{:.4}\n", r.variant, r.grid, r.mean_iou, r.mean_ap, r.mean_ap50));
                }
                write_text(c, &table)?;
                outputs.push(display(c));
            }
            let summary: Vec<_> = rows
                .iter()
                .map(|r| json!({ "variant": r.variant, "grid": r.grid, "mean_iou": r.mean_iou, "mean_ap": r.mean_ap, "mean_ap50": r.mean_ap50 }))
                .collect();
            RunReport::new(
                "ablate",
                Settings::from_config(&cfg, &common),
                json!({ "spec": spec, "fit": cfg, "scenes": scenes }),
                outputs,
                json!({ "rows": summary }),
            )
        }
    };

    let report = report.with_timings(timer.finish());
    let text = to_json_string(&report)?;
    match &common.report {
        Some(path) => write_text(path, &text)?,
        None => print!("{text}"),
    }
    Ok(pass)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("sphmask: check failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("sphmask: error: {e:#}");
            ExitCode::from(2)
        }
    }
}
