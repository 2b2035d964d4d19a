use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use ldp_online::config::load_config;
use ldp_online::privacy::budget_bound;
use ldp_online::report::{table_csv, write_atomic, write_json, write_run};
use ldp_online::simulator::Experiment;
use ldp_online::Error;

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(name = "ldp-online", version, about = "Decentralized online learning with locally private messages")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Config file (TOML).
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Output directory; defaults to `output.dir` or `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra `dotted.key=value` settings applied on top of the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn overrides(&self, extra: &[String]) -> Vec<String> {
        let mut o = self.set.clone();
        o.extend(extra.iter().cloned());
        if let Some(s) = self.seed {
            o.push(format!("seed={s}"));
        }
        if let Some(h) = self.horizon {
            o.push(format!("horizon={h}"));
        }
        if let Some(r) = self.replicates {
            o.push(format!("replicates={r}"));
        }
        o
    }

    fn experiment(&self, extra: &[String]) -> Result<Experiment, Error> {
        Experiment::build(load_config(&self.config, &self.overrides(extra))?)
    }

    fn out_dir(&self, e: &Experiment) -> PathBuf {
        self.out.clone().or_else(|| e.config.output.dir.clone()).unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Resolve a config and check its stepsizes against the selected regime.
    ValidateConfig {
        #[command(flatten)]
        common: Common,
        /// `dotted.key=value` overrides.
        overrides: Vec<String>,
    },
    /// Simulate every replicate and write the trace as CSV and JSON.
    Run {
        #[command(flatten)]
        common: Common,
        /// Validate and execute 10 rounds of one replicate without writing output.
        #[arg(long)]
        dry_run: bool,
        overrides: Vec<String>,
    },
    /// Run the Cartesian product of parameter lists.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `dotted.key=v1,v2,...`; repeat for more axes.
        #[arg(long = "param", required = true)]
        params: Vec<String>,
    },
    /// Redraw one sample and compare the coupled trajectories with the analytic bound.
    Sensitivity {
        #[command(flatten)]
        common: Common,
        /// Round whose sample differs.
        round: usize,
        #[arg(long, default_value_t = 0)]
        learner: usize,
    },
    /// Accumulated privacy budget of every learner at the given horizons.
    Budget {
        #[command(flatten)]
        common: Common,
        #[arg(required = true)]
        horizons: Vec<usize>,
    },
}

fn fail(e: &Error) -> u8 {
    eprintln!("error: {e}");
    if let Error::Validation(v) = e {
        for s in v {
            eprintln!("  - {s}");
        }
    }
    if e.is_validation() {
        EXIT_VALIDATION
    } else {
        EXIT_RUNTIME
    }
}

fn report_check(e: &Experiment) -> bool {
    let c = &e.check;
    println!("regime: {:?}", c.regime);
    println!("gamma0 = {}, lambda0 = {}", e.schedules.gamma0, e.schedules.lambda0);
    println!("delta_2 = {}, delta_N = {}", e.w.delta2(), e.w.delta_n());
    for w in &c.warnings {
        println!("warning: {w}");
    }
    for v in &c.violations {
        println!("violation: {v}");
    }
    println!("certificate: {}", serde_json::to_string_pretty(&c.certificate).expect("serializable"));
    c.ok
}

fn validate(common: &Common, overrides: &[String]) -> Result<u8, Error> {
    let e = common.experiment(overrides)?;
    Ok(if report_check(&e) { 0 } else { EXIT_VALIDATION })
}

fn run(common: &Common, dry_run: bool, overrides: &[String]) -> Result<u8, Error> {
    let mut extra = overrides.to_vec();
    if dry_run {
        extra.extend(["horizon=10".to_string(), "replicates=1".to_string()]);
    }
    let e = common.experiment(&extra)?;
    if !report_check(&e) {
        return Ok(EXIT_VALIDATION);
    }
    let trace = e.run()?;
    let last = trace.last();
    println!("t = {}: tracking error {:.6e}, regret {:.6e}", last.t, last.tracking_error, last.regret);
    if dry_run {
        println!("dry run finished; nothing written");
        return Ok(0);
    }
    if let Some(f) = &trace.fits.tracking_error {
        println!("tracking error slope {:.4} +/- {:.4}", f.slope, f.half_width);
    }
    if let Some(f) = &trace.fits.regret {
        println!("regret slope {:.4} +/- {:.4}", f.slope, f.half_width);
    }
    let (csv, json) = write_run(&trace, &common.out_dir(&e), "trace")?;
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(0)
}

fn grid(params: &[String]) -> Result<(Vec<String>, Vec<Vec<String>>), Error> {
    let mut keys = Vec::new();
    let mut points: Vec<Vec<String>> = vec![vec![]];
    for p in params {
        let (k, vs) = p
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("sweep parameter `{p}` is not key=v1,v2,...")))?;
        let values: Vec<&str> = vs.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        if values.is_empty() {
            return Err(Error::Config(format!("sweep parameter `{k}` has no values")));
        }
        keys.push(k.trim().to_string());
        points = points
            .into_iter()
            .flat_map(|pt| values.iter().map(move |v| [pt.clone(), vec![v.to_string()]].concat()))
            .collect();
    }
    Ok((keys, points))
}

fn sweep(common: &Common, params: &[String]) -> Result<u8, Error> {
    let (keys, points) = grid(params)?;
    let experiments = points
        .iter()
        .map(|pt| {
            let o: Vec<String> = keys.iter().zip(pt).map(|(k, v)| format!("{k}={v}")).collect();
            common.experiment(&o)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut bad = false;
    for (pt, e) in points.iter().zip(&experiments) {
        if !e.check.ok {
            bad = true;
            println!("point {pt:?}:");
            for v in &e.check.violations {
                println!("  violation: {v}");
            }
        }
    }
    if bad {
        return Ok(EXIT_VALIDATION);
    }
    let traces = experiments.par_iter().map(|e| e.run()).collect::<Result<Vec<_>, _>>()?;
    let dir = common.out_dir(&experiments[0]);
    let mut header = vec!["point".to_string()];
    header.extend(keys.iter().cloned());
    header.extend(
        ["tracking_slope", "tracking_half_width", "regret_slope", "regret_half_width", "final_tracking_error", "final_regret"]
            .map(String::from),
    );
    let mut rows = Vec::new();
    for (k, (pt, tr)) in points.iter().zip(&traces).enumerate() {
        write_run(tr, &dir, &format!("point_{k}"))?;
        let fit = |f: &Option<ldp_online::metrics::RateFit>| -> [String; 2] {
            f.map_or([String::new(), String::new()], |f| [f.slope.to_string(), f.half_width.to_string()])
        };
        let mut row = vec![k.to_string()];
        row.extend(pt.iter().cloned());
        row.extend(fit(&tr.fits.tracking_error));
        row.extend(fit(&tr.fits.regret));
        row.push(tr.last().tracking_error.to_string());
        row.push(tr.last().regret.to_string());
        rows.push(row);
    }
    let summary = dir.join("summary.csv");
    write_atomic(&summary, &table_csv(&header, &rows)?)?;
    println!("wrote {} grid points and {}", points.len(), summary.display());
    Ok(0)
}

fn sensitivity(common: &Common, round: usize, learner: usize) -> Result<u8, Error> {
    let e = common.experiment(&[])?;
    let tr = e.sensitivity(round, learner)?;
    let worst = tr
        .divergence
        .iter()
        .zip(&tr.bound)
        .filter(|(_, b)| **b > 0.0)
        .map(|(d, b)| d / b)
        .fold(0.0, f64::max);
    println!("largest divergence / bound ratio: {worst:.6}");
    match tr.first_violation(1e-12) {
        Some(t) => println!("bound exceeded at round {t}"),
        None => println!("bound holds at every round"),
    }
    let path = common.out_dir(&e).join("sensitivity.json");
    write_json(&path, &tr)?;
    println!("wrote {}", path.display());
    Ok(0)
}

fn budget(common: &Common, horizons: &[usize]) -> Result<u8, Error> {
    let e = common.experiment(&[])?;
    let reports = e
        .noise
        .iter()
        .map(|n| budget_bound(&e.problem, e.w.wbar(), &e.schedules, n, horizons))
        .collect::<Result<Vec<_>, _>>()?;
    for (i, r) in reports.iter().enumerate() {
        let pts: Vec<String> = r.checkpoints.iter().map(|p| format!("eps({}) = {:.6}", p.t, p.eps)).collect();
        println!("learner {i}: {}; tail {:.6} (exponent {:.3})", pts.join(", "), r.tail_estimate, r.tail_exponent);
        for w in &r.warnings {
            println!("  warning: {w}");
        }
    }
    if let Some(dir) = &common.out {
        let path = Path::new(dir).join("budget.json");
        write_json(&path, &reports)?;
        println!("wrote {}", path.display());
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::ValidateConfig { common, overrides } => validate(common, overrides),
        Command::Run { common, dry_run, overrides } => run(common, *dry_run, overrides),
        Command::Sweep { common, params } => sweep(common, params),
        Command::Sensitivity { common, round, learner } => sensitivity(common, *round, *learner),
        Command::Budget { common, horizons } => budget(common, horizons),
    };
    ExitCode::from(result.unwrap_or_else(|e| fail(&e)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_the_cartesian_product() {
        let (keys, pts) = grid(&["a=1,2".into(), "b.c=x, y ,z".into()]).unwrap();
        assert_eq!(keys, vec!["a", "b.c"]);
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[0], vec!["1", "x"]);
        assert_eq!(pts[5], vec!["2", "z"]);
    }

    #[test]
    fn malformed_sweep_parameters_are_rejected() {
        assert!(grid(&["novalues".into()]).is_err());
        assert!(grid(&["a=".into()]).is_err());
    }

    #[test]
    fn flags_become_overrides() {
        let cli = Cli::try_parse_from(["ldp-online", "run", "c.toml", "--seed", "4", "--set", "noise.sigma=2", "horizon=9"]).unwrap();
        let Command::Run { common, overrides, dry_run } = cli.command else { panic!("parsed as another command") };
        assert!(!dry_run);
        assert_eq!(common.overrides(&overrides), vec!["noise.sigma=2", "horizon=9", "seed=4"]);
    }
}
