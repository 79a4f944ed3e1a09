mod meta;
mod svg;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use stealth_reach::bound::{ReachBound, Target};
use stealth_reach::geom::{geometric_bounds, total_state_bound_geom};
use stealth_reach::lmi::{lmi_bounds, total_state_bound_lmi};
use stealth_reach::montecarlo::{containment_report, empirical_cloud, volume_heatmap, CloudSource};
use stealth_reach::scenario::{Format, MethodChoice, Resolved, Scenario};
use stealth_reach::verify::{run_all, Scale};
use stealth_reach::Error;

use meta::{exit_code, sha256_hex, Metadata};

/// Reachable-set bounds for control loops under stealthy sensor attacks.
#[derive(Debug, Parser)]
#[command(name = "stealth-reach", version)]
struct Cli {
    /// Scenario JSON; the built-in reference loop when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    scenario: Option<PathBuf>,
    /// Output directory (overrides the scenario's `output.dir`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed (overrides `sim.master_seed`).
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Detector threshold and noise truncation level.
    Tune,
    /// Reachable-set bounds for every target, plus the total-state bound.
    Bound {
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
    },
    /// Monte-Carlo cloud scored against the bounds.
    Montecarlo {
        #[arg(long, value_enum, default_value = "attack")]
        cloud: CloudArg,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        /// Trials (overrides `sim.trials`).
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Attack-state cloud volume over the zero-alarm (c1, w1) triangle.
    Heatmap {
        /// Grid levels per axis (overrides `heatmap.resolution`).
        #[arg(long)]
        res: Option<usize>,
        /// Trials per cell (overrides `heatmap.trials`).
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Runs the acceptance checks against the scenario's model.
    Verify {
        /// Reduced sample sizes.
        #[arg(long)]
        quick: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Lmi,
    Geom,
    Both,
}

impl From<MethodArg> for MethodChoice {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Lmi => MethodChoice::Lmi,
            MethodArg::Geom => MethodChoice::Geometric,
            MethodArg::Both => MethodChoice::Both,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CloudArg {
    Noise,
    Attack,
    Total,
}

impl CloudArg {
    fn source(self) -> CloudSource {
        match self {
            CloudArg::Noise => CloudSource::NoiseOnly,
            CloudArg::Attack => CloudSource::AttackOnly,
            CloudArg::Total => CloudSource::Total,
        }
    }

    fn target(self) -> Target {
        match self {
            CloudArg::Noise => Target::NoiseError,
            CloudArg::Attack => Target::AttackState,
            CloudArg::Total => Target::TotalState,
        }
    }

    fn name(self) -> &'static str {
        match self {
            CloudArg::Noise => "noise",
            CloudArg::Attack => "attack",
            CloudArg::Total => "total",
        }
    }
}

struct Run {
    scenario: Scenario,
    meta: Metadata,
    out: PathBuf,
}

impl Run {
    fn load(cli: &Cli, command: &'static str) -> Result<Run> {
        let (label, bytes) = match &cli.scenario {
            Some(path) => {
                let bytes = fs::read(path).map_err(|e| Error::Schema {
                    path: path.display().to_string(),
                    message: format!("cannot read scenario: {e}"),
                })?;
                (path.display().to_string(), bytes)
            }
            None => ("<built-in reference>".to_string(), serde_json::to_vec_pretty(&Scenario::reference())?),
        };
        let text = String::from_utf8(bytes.clone()).map_err(|e| Error::Schema {
            path: label.clone(),
            message: format!("scenario is not UTF-8: {e}"),
        })?;
        let mut scenario = Scenario::from_json_str(&text)?;
        if let Some(seed) = cli.seed {
            scenario.sim.master_seed = seed;
        }
        let out = cli.out.clone().unwrap_or_else(|| scenario.output.dir.clone());
        let meta = Metadata {
            scenario_sha256: sha256_hex(&bytes),
            scenario: label,
            seed: scenario.sim.master_seed,
            command,
        };
        Ok(Run { scenario, meta, out })
    }

    fn wants(&self, f: Format) -> bool {
        self.scenario.output.wants(f)
    }

    fn write(&self, name: &str, contents: &str) -> Result<()> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        let path = self.out.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        eprintln!("wrote {}", path.display());
        Ok(())
    }

    fn write_json(&self, name: &str, payload: Value) -> Result<()> {
        if self.wants(Format::Json) {
            self.write(name, &(serde_json::to_string_pretty(&self.meta.wrap(payload))? + "\n"))?;
        }
        Ok(())
    }
}

fn compute_bounds(r: &Resolved) -> Result<Vec<ReachBound>> {
    let mut all = Vec::new();
    if r.method.lmi() {
        let b = lmi_bounds(&r.model, r.detector.alpha, r.vbar, &r.lmi)?;
        let total = total_state_bound_lmi(&b.noise, &b.attack_state)?;
        all.extend([b.noise, b.attack_error, b.attack_state, total]);
    }
    if r.method.geometric() {
        let b = geometric_bounds(&r.model, r.detector.alpha, r.vbar, &r.geom)?;
        let total = total_state_bound_geom(&b.noise, &b.attack_state)?;
        all.extend([b.noise, b.attack_error, b.attack_state, total]);
    }
    Ok(all)
}

fn cmd_tune(run: &Run) -> Result<()> {
    let r = run.scenario.resolve()?;
    let payload = json!({
        "alpha": r.detector.alpha,
        "vbar": r.vbar,
        "p": r.model.output_dim(),
        "n": r.model.state_dim(),
        "A": r.detector.target_rate,
    });
    println!("{}", serde_json::to_string_pretty(&payload)?);
    run.write_json("tune.json", payload)
}

fn cmd_bound(run: &Run) -> Result<()> {
    let r = run.scenario.resolve()?;
    let bounds = compute_bounds(&r)?;
    println!("{:<10} {:<13} {:>12} {:>8} {:>6}", "method", "target", "volume", "a*", "terms");
    for b in &bounds {
        println!(
            "{:<10} {:<13} {:>12.6} {:>8} {:>6}",
            b.method.name(),
            b.target.name(),
            b.volume,
            b.a_star.map_or("-".into(), |a| format!("{a:.4}")),
            b.diagnostics.terms_used.map_or("-".into(), |n| n.to_string())
        );
        run.write_json(&format!("bound_{}_{}.json", b.method.name(), b.target.name()), b.to_json())?;
    }
    if run.wants(Format::Svg) {
        if r.model.state_dim() != 2 {
            eprintln!("notice: SVG skipped, plots need a two-dimensional state (n = {})", r.model.state_dim());
        } else {
            let state: Vec<&ReachBound> = bounds
                .iter()
                .filter(|b| matches!(b.target, Target::AttackState | Target::TotalState))
                .collect();
            if let Some(s) = svg::bounds_plot(&run.meta, "attack-state and total-state bounds", &state, &[]) {
                run.write("bounds.svg", &s)?;
            }
        }
    }
    Ok(())
}

fn cmd_montecarlo(run: &Run, cloud_arg: CloudArg) -> Result<()> {
    let r = run.scenario.resolve()?;
    let spec = r.spec.as_ref().ok_or_else(|| Error::Schema {
        path: "attack".into(),
        message: "montecarlo needs an attack block".into(),
    })?;
    let cloud = empirical_cloud(&r.model, &r.detector, &r.cloud, Some(spec), cloud_arg.source())?;
    let bounds: Vec<ReachBound> = compute_bounds(&r)?
        .into_iter()
        .filter(|b| b.target == cloud_arg.target())
        .collect();
    let refs: Vec<&ReachBound> = bounds.iter().collect();
    let report = containment_report(&cloud, &refs)?;
    for e in &report.entries {
        println!(
            "{:<10} {:<12} contained {:.6} (slack 1e-6), escapes {}, max xᵀPx {:.4}, volume ratio {}",
            e.method.name(),
            e.target.name(),
            e.fractions[1].1,
            e.escapes,
            e.max_membership,
            e.volume_ratio.map_or("-".into(), |v| format!("{v:.3}"))
        );
    }
    let name = cloud_arg.name();
    if run.wants(Format::Csv) {
        let mut buf = run.meta.csv_header().into_bytes();
        cloud.write_csv(&mut buf)?;
        run.write(&format!("cloud_{name}.csv"), &String::from_utf8(buf)?)?;
    }
    run.write_json(
        &format!("containment_{name}.json"),
        json!({
            "attack": spec,
            "trials": cloud.trials,
            "horizon": cloud.horizon,
            "burn_in": r.cloud.burn_in,
            "stride": r.cloud.stride,
            "truncate_noise": r.cloud.sim.truncate_noise,
            "report": report,
        }),
    )?;
    if run.wants(Format::Svg) {
        let pts: Vec<[f64; 2]> = (0..cloud.len())
            .filter(|_| cloud.dim == 2)
            .map(|i| [cloud.point(i)[0], cloud.point(i)[1]])
            .collect();
        match svg::bounds_plot(&run.meta, &format!("{name} cloud and bounds"), &refs, &pts) {
            Some(s) if cloud.dim == 2 => run.write(&format!("cloud_{name}.svg"), &s)?,
            _ => eprintln!("notice: SVG skipped, plots need a two-dimensional state (n = {})", cloud.dim),
        }
    }
    Ok(())
}

fn cmd_heatmap(run: &Run) -> Result<()> {
    let r = run.scenario.resolve()?;
    let map = volume_heatmap(&r.model, &r.detector, r.resolution, &r.heatmap)?;
    if let Some(best) = map.argmax() {
        println!(
            "{} cells; largest volume {:.6} at c1 = {:.6}, w1 = {:.6} (alpha = {:.6})",
            map.cells.len(),
            best.volume,
            best.c1,
            best.w1,
            map.alpha
        );
    }
    if run.wants(Format::Csv) {
        let mut buf = run.meta.csv_header().into_bytes();
        map.write_csv(&mut buf)?;
        run.write("heatmap.csv", &String::from_utf8(buf)?)?;
    }
    if run.wants(Format::Svg) {
        run.write("heatmap.svg", &svg::heatmap_plot(&run.meta, &map))?;
    }
    Ok(())
}

/// Returns whether every check passed.
fn cmd_verify(run: &Run, quick: bool) -> Result<bool> {
    let r = run.scenario.resolve()?;
    let scale = if quick { Scale::quick() } else { Scale::full() };
    let results = run_all(&r, &scale);
    for c in &results {
        println!("{}", c.line());
    }
    let passed = results.iter().filter(|c| c.passed).count();
    println!("{passed}/{} checks passed", results.len());
    run.write_json("verify.json", json!({"scale": scale, "checks": results}))?;
    Ok(passed == results.len())
}

fn run(cli: &Cli) -> Result<bool> {
    let name = match &cli.command {
        Command::Tune => "tune",
        Command::Bound { .. } => "bound",
        Command::Montecarlo { .. } => "montecarlo",
        Command::Heatmap { .. } => "heatmap",
        Command::Verify { .. } => "verify",
    };
    let mut run = Run::load(cli, name)?;
    match &cli.command {
        Command::Tune => cmd_tune(&run)?,
        Command::Bound { method } => {
            if let Some(m) = method {
                run.scenario.bounds.method = (*m).into();
            }
            cmd_bound(&run)?
        }
        Command::Montecarlo { cloud, method, trials } => {
            if let Some(m) = method {
                run.scenario.bounds.method = (*m).into();
            }
            if let Some(t) = trials {
                run.scenario.sim.trials = *t;
            }
            cmd_montecarlo(&run, *cloud)?
        }
        Command::Heatmap { res, trials } => {
            if let Some(res) = res {
                run.scenario.heatmap.resolution = *res;
            }
            if let Some(t) = trials {
                run.scenario.heatmap.trials = *t;
            }
            cmd_heatmap(&run)?
        }
        Command::Verify { quick } => return cmd_verify(&run, *quick),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(meta::EXIT_FAILED_CHECKS),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
