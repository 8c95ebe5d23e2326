//! `rrisloc`: batch driver for the bound computations and Monte Carlo sweeps.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for runtime failures.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use rrisloc_core::config::RunConfig;
use rrisloc_core::crlb;
use rrisloc_core::experiments::{self, Manifest, RmseRecord, SweepVariable};
use rrisloc_core::geometry::{self, PartitionPattern, Vec3};
use rrisloc_core::measurement::{self, CombinerKind};
use rrisloc_core::{Error, Result};

#[derive(Parser)]
#[command(name = "rrisloc", version, about = "Single-anchor 3D localization with a partitioned receiving RIS")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// LoS angle bounds versus NLoS angle offset, plus the position error bound.
    Crlb(Common),
    /// Monte Carlo RMSE sweep with bound companions.
    Simulate(Common),
    /// GDoP and position error bound of partition patterns.
    Gdop(Common),
    /// Position error bound (and optionally RMSE) over a plane of positions.
    Heatmap(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration: nlos-bound, overhead, heatmap, spacing or partitions.
    #[arg(long)]
    preset: Option<String>,
    /// Base seed for every random draw.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Monte Carlo trials per sweep point.
    #[arg(long, value_name = "N")]
    trials: Option<usize>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
}

fn load(opts: &Common) -> Result<RunConfig> {
    let mut cfg = match (&opts.config, &opts.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            RunConfig::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => RunConfig::default(),
    };
    if let Some(seed) = opts.seed {
        if let Some(sw) = cfg.sweep.as_mut() {
            sw.base_seed = seed;
        }
        cfg.heatmap.base_seed = seed;
        cfg.nlos_curve.combiner_seed = seed;
    }
    if let Some(trials) = opts.trials {
        if let Some(sw) = cfg.sweep.as_mut() {
            sw.trials = trials;
        }
        cfg.heatmap.trials = trials;
    }
    if let Some(out) = &opts.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn finish(cfg: &RunConfig, mut manifest: Manifest<&RunConfig>, outputs: &[&str]) -> Result<()> {
    manifest.outputs = outputs.iter().map(|s| s.to_string()).collect();
    manifest.write(&cfg.output_dir.join("manifest.json"))?;
    for o in outputs {
        println!("wrote {}", cfg.output_dir.join(o).display());
    }
    Ok(())
}

fn cmd_crlb(cfg: &RunConfig) -> Result<()> {
    let setup = cfg.trial_setup()?;
    let nc = &cfg.nlos_curve;
    let sub = setup
        .scene
        .subarrays
        .get(nc.subarray)
        .ok_or_else(|| Error::Config(format!("nlos_curve.subarray {} out of range", nc.subarray)))?;
    let (m, k) = (sub.num_elements(), setup.training.k);
    let w = match setup.training.combiner {
        CombinerKind::Dft => measurement::dft_combiner(m, k),
        CombinerKind::RandomPhase => measurement::random_phase_combiner_seeded(m, k, nc.combiner_seed),
    };
    let deltas = cfg.nlos_deltas();
    let curves = nc
        .spreads_rad
        .iter()
        .map(|&spread| {
            crlb::nlos_effect_curve(
                &setup.scene,
                nc.subarray,
                &deltas,
                spread,
                &setup.scenario,
                &w,
                setup.training.tx_power_dbm,
                setup.training.noise_var_dbm,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    crlb::write_curves_csv(&curves, create(&cfg.output_dir.join("nlos_curves.csv"))?)?;
    let peb = experiments::setup_peb(&setup, nc.combiner_seed)?;
    for c in &curves {
        let (t0, p0) = c.single_path;
        let worst = c
            .points
            .iter()
            .map(|p| (p.theta_var / t0).max(p.phi_var / p0))
            .fold(0.0, f64::max);
        println!(
            "spread {:.3} rad: single-path sd ({:.3e}, {:.3e}) rad, worst two-path/single-path variance ratio {:.2}",
            c.spread,
            t0.sqrt(),
            p0.sqrt(),
            worst
        );
    }
    println!("position error bound: {peb:.6} m");
    let mut manifest = Manifest::new("crlb", nc.combiner_seed, 0, cfg);
    manifest.extra = Some(json!({ "peb_m": peb }));
    finish(cfg, manifest, &["nlos_curves.csv"])
}

fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let spec = cfg.sweep_spec()?;
    let mut records: Vec<RmseRecord> = Vec::new();
    let mut gaps = serde_json::Map::new();
    for (label, setup, plan) in cfg.series_setups()? {
        let recs = experiments::run_sweep(&spec, &setup, plan.as_ref(), &label, false)?;
        for r in &recs {
            println!(
                "{:<28} {}={:<8} rmse {:.5} m  bound {:.5} m  fail {:.3}",
                r.series,
                r.variable.label(),
                r.value.to_string(),
                r.rmse_m,
                r.crlb_m,
                r.fail_rate
            );
        }
        if spec.variable == SweepVariable::TxPower && spec.estimator != experiments::EstimatorKind::CrlbOnly {
            let pts = |f: fn(&RmseRecord) -> f64| -> Vec<(f64, f64)> {
                recs.iter().filter_map(|r| Some((r.value.as_number()?, f(r)))).collect()
            };
            if let Some(gap) = experiments::power_gap_db(&pts(|r| r.rmse_m), &pts(|r| r.crlb_m)) {
                println!("{label}: power gap to the bound at matched error {gap:.2} dB");
                gaps.insert(label.clone(), json!(gap));
            }
        }
        records.extend(recs);
    }
    experiments::write_records_csv(&records, create(&cfg.output_dir.join("rmse.csv"))?)?;
    let mut manifest = Manifest::new("simulate", spec.base_seed, spec.trials, cfg);
    manifest.extra = Some(json!({ "power_gap_db": gaps }));
    finish(cfg, manifest, &["rmse.csv"])
}

fn cmd_gdop(cfg: &RunConfig) -> Result<()> {
    let base = cfg.trial_setup()?;
    let plan = cfg
        .scene_plan()?
        .ok_or_else(|| Error::Config("gdop needs the partition keys, not scene.file".into()))?;
    let mut w = csv::Writer::from_writer(create(&cfg.output_dir.join("gdop.csv"))?);
    let csv_err = |e: csv::Error| Error::Io(e.into());
    w.write_record(["pattern", "centroid_x_m", "centroid_y_m", "centroid_z_m", "gdop", "used_pseudo_inverse", "peb_m"])
        .map_err(csv_err)?;
    let mut details = Vec::new();
    println!("{:<8} {:<16} {:>10} {:>10}", "pattern", "centroid", "gdop", "peb_m");
    for case in &cfg.gdop.cases {
        let mut p = plan.clone();
        p.pattern = PartitionPattern::from_label(&case.pattern, p.pattern.v_spacing, p.pattern.h_spacing, Vec3::from(case.centroid_m))?;
        let scene = p.build()?;
        let report = geometry::gdop(&scene);
        let mut setup = base.clone();
        setup.scene = scene;
        let peb = experiments::setup_peb(&setup, 0)?;
        let c = case.centroid_m;
        println!("{:<8} {:<16} {:>10.4} {:>10.4}", case.pattern, format!("[{},{},{}]", c[0], c[1], c[2]), report.value, peb);
        w.write_record([
            case.pattern.clone(),
            c[0].to_string(),
            c[1].to_string(),
            c[2].to_string(),
            report.value.to_string(),
            report.used_pseudo_inverse.to_string(),
            peb.to_string(),
        ])
        .map_err(csv_err)?;
        let rows: Vec<Vec<f64>> = report.h.row_iter().map(|r| r.iter().copied().collect()).collect();
        details.push(json!({ "pattern": case.pattern, "centroid_m": c, "gdop": report.value, "h": rows }));
    }
    w.flush()?;
    let mut manifest = Manifest::new("gdop", 0, 0, cfg);
    manifest.extra = Some(json!({ "cases": details }));
    finish(cfg, manifest, &["gdop.csv"])
}

fn cmd_heatmap(cfg: &RunConfig) -> Result<()> {
    let setup = cfg.trial_setup()?;
    let h = &cfg.heatmap;
    let ys = experiments::grid_axis(h.y_min_m, h.y_max_m, h.step_m)?;
    let zs = experiments::grid_axis(h.z_min_m, h.z_max_m, h.step_m)?;
    let cells = experiments::heatmap(&setup, h.x_m, &ys, &zs, h.trials, h.base_seed)?;
    experiments::write_heatmap_csv(&cells, create(&cfg.output_dir.join("heatmap.csv"))?)?;
    let finite = cells.iter().filter(|c| c.peb_m.is_finite()).count();
    println!("{} cells, {} with a finite bound", cells.len(), finite);
    finish(cfg, Manifest::new("heatmap", h.base_seed, h.trials, cfg), &["heatmap.csv"])
}

fn run(cli: Cli) -> Result<()> {
    let (opts, cmd): (&Common, fn(&RunConfig) -> Result<()>) = match &cli.command {
        Command::Crlb(o) => (o, cmd_crlb),
        Command::Simulate(o) => (o, cmd_simulate),
        Command::Gdop(o) => (o, cmd_gdop),
        Command::Heatmap(o) => (o, cmd_heatmap),
    };
    let cfg = load(opts)?;
    if let Some(n) = opts.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Domain(format!("thread pool: {e}")))?;
    }
    std::fs::create_dir_all(&cfg.output_dir)?;
    cmd(&cfg)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::UnsupportedSpacing { .. } => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
