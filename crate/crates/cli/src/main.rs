use std::collections::hash_map::RandomState;
use std::hash::BuildHasher;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use irdof::channel::{read_channel, sample_channel, write_channel, AntennaConfig, User};
use irdof::converse::delta_bound_check;
use irdof::dofregion::{
    allocate_antennas, dof_lin, format_rational, ic_dof_region, outer_bounds, rat, sum_dof_lin,
    theorem1_region,
};
use irdof::exec::{map_indices, Execution};
use irdof::numerics::TolerancePolicy;
use irdof::scheme::{build_plan, read_plan, verify_plan, write_plan, PlanOptions};
use irdof::seeding::derive_seed;
use irdof::simulate::{slope_estimate, SlopeOptions, SnrSweep};
use irdof::Error;

#[derive(Parser)]
#[command(
    name = "irdof",
    version,
    about = "Degrees of freedom of the MIMO interference channel with an instantaneous relay"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Linear DoF region, outer bounds and tightness
    Region {
        #[command(flatten)]
        dims: Dims,
        #[command(flatten)]
        common: Common,
    },
    /// Build and verify a neutralization plan on a sampled channel
    Scheme {
        #[command(flatten)]
        dims: Dims,
        #[command(flatten)]
        plan: PlanArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Verify a stored plan against a stored channel
    Verify {
        #[arg(long)]
        channel: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Sample relay maps and check the rank-sum lower bound
    Converse {
        #[command(flatten)]
        dims: Dims,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Monte-Carlo DoF estimate from the sum-rate slope
    Slope {
        #[command(flatten)]
        dims: Dims,
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 40.0)]
        snr_start_db: f64,
        #[arg(long, default_value_t = 80.0)]
        snr_stop_db: f64,
        #[arg(long, default_value_t = 5)]
        snr_points: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Rank-based DoF region of the direct links of a stored channel
    IcRegion {
        #[arg(long)]
        channel: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Best receive/transmit split of a half-duplex relay antenna budget
    Allocate {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        relay: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Grid comparison of the DoF formula, outer bounds and built plans
    Sweep {
        #[arg(long, value_parser = parse_range)]
        m: (usize, usize),
        #[arg(long, value_parser = parse_range)]
        n: (usize, usize),
        #[arg(long, value_parser = parse_range)]
        l: (usize, usize),
        #[command(flatten)]
        plan: PlanArgs,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Serialize)]
struct Dims {
    #[arg(long)]
    m: usize,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    l: usize,
}

#[derive(Args, Serialize)]
struct PlanArgs {
    /// User sending M streams
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    corner: u8,
    /// Run over two channel uses even when stream counts are integral
    #[arg(long)]
    extend: bool,
}

#[derive(Args)]
struct Common {
    /// Base seed; generated and recorded when absent
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tol_rank: Option<f64>,
    #[arg(long)]
    tol_res: Option<f64>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Output file (directory for `scheme`); stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
}

/// `a..b` (inclusive) or a single value.
fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}"));
    let (lo, hi) = match s.split_once("..") {
        Some((a, b)) => (num(a)?, num(b.strip_prefix('=').unwrap_or(b))?),
        None => {
            let v = num(s)?;
            (v, v)
        }
    };
    if lo > hi {
        return Err(format!("empty range {s}"));
    }
    Ok((lo, hi))
}

enum Failure {
    /// Exit 2.
    Usage(String),
    /// Exit 1.
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidInput(_)
            | Error::Parse { .. }
            | Error::DimensionMismatch { .. }
            | Error::UnsupportedFactor(_)
            | Error::Io(_) => Failure::Usage(e.to_string()),
            _ => Failure::Check(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

#[derive(Serialize)]
struct Manifest {
    command: &'static str,
    version: &'static str,
    seed: u64,
    tolerances: TolerancePolicy,
    format: Format,
    out: Option<String>,
    args: Value,
}

struct Context {
    manifest: Manifest,
    tol: TolerancePolicy,
    format: Format,
    out: Option<PathBuf>,
}

impl Context {
    fn new(command: &'static str, common: &Common, args: Value) -> Result<Self, Failure> {
        let defaults = TolerancePolicy::default();
        let tol = TolerancePolicy::new(
            common.tol_rank.unwrap_or(defaults.rank_rel_tol),
            common.tol_res.unwrap_or(defaults.residual_rel_tol),
        )?;
        let seed = common
            .seed
            .unwrap_or_else(|| RandomState::new().hash_one(std::process::id()));
        Ok(Self {
            manifest: Manifest {
                command,
                version: env!("CARGO_PKG_VERSION"),
                seed,
                tolerances: tol,
                format: common.format,
                out: common.out.as_ref().map(|p| p.display().to_string()),
                args,
            },
            tol,
            format: common.format,
            out: common.out.clone(),
        })
    }

    fn seed(&self) -> u64 {
        self.manifest.seed
    }

    fn manifest_value(&self) -> Value {
        serde_json::to_value(&self.manifest).expect("manifest serializes")
    }

    fn json_body(&self, mut body: Value) -> Vec<u8> {
        if let Value::Object(map) = &mut body {
            map.insert("manifest".into(), self.manifest_value());
        }
        let mut bytes = serde_json::to_vec_pretty(&body).expect("output serializes");
        bytes.push(b'\n');
        bytes
    }

    fn csv_body(&self, extra_headers: &[(&str, Value)], table: &str) -> Vec<u8> {
        let mut out = format!("# manifest: {}\n", self.manifest_value());
        for (name, v) in extra_headers {
            out.push_str(&format!("# {name}: {v}\n"));
        }
        out.push_str(table);
        out.into_bytes()
    }

    /// JSON or CSV per `--format`; CSV only where a table exists.
    fn emit(
        &self,
        json_body: Value,
        csv: Option<(Vec<(&str, Value)>, String)>,
    ) -> Result<(), Failure> {
        let bytes = match (self.format, csv) {
            (Format::Json, _) => self.json_body(json_body),
            (Format::Csv, Some((headers, table))) => self.csv_body(&headers, &table),
            (Format::Csv, None) => {
                return Err(Failure::Usage(format!(
                    "`{}` has no CSV output",
                    self.manifest.command
                )))
            }
        };
        match &self.out {
            Some(path) => write_atomic(path, &bytes),
            None => {
                std::io::stdout().write_all(&bytes)?;
                Ok(())
            }
        }
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn config(d: &Dims) -> Result<AntennaConfig, Failure> {
    Ok(AntennaConfig::new(d.m, d.n, d.l)?)
}

fn corner(p: &PlanArgs) -> User {
    User::from_number(p.corner).expect("clap restricts corner to 1 or 2")
}

fn plan_options(ctx: &Context, p: &PlanArgs) -> PlanOptions {
    PlanOptions {
        tol: ctx.tol,
        force_extension: p.extend,
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("output serializes")
}

/// `Ok(true)` on success, `Ok(false)` when a checked property failed.
fn run(cli: Cli) -> Result<bool, Failure> {
    match cli.command {
        Command::Region { dims, common } => {
            let ctx = Context::new("region", &common, to_value(&dims))?;
            let c = config(&dims)?;
            let region = theorem1_region(&c);
            let bounds = outer_bounds(&c);
            let body = json!({
                "config": c,
                "region": region,
                "sum_dof": format_rational(&dof_lin(&c)),
                "outer_bounds": bounds,
                "tight": bounds.tight,
            });
            ctx.emit(body, Some((vec![], region.to_csv())))?;
            Ok(true)
        }

        Command::Scheme { dims, plan, common } => {
            let args = json!({ "dims": dims, "plan": plan });
            let ctx = Context::new("scheme", &common, args)?;
            if ctx.format == Format::Csv {
                return Err(Failure::Usage("`scheme` has no CSV output".into()));
            }
            let ch = sample_channel(config(&dims)?, ctx.seed())?;
            let (report, files) = match build_plan(&ch, corner(&plan), &plan_options(&ctx, &plan)) {
                Ok(run) => {
                    let report = json!({
                        "config": ch.config,
                        "extended": run.extended(),
                        "allocation": run.plan.allocation,
                        "report": run.report,
                        "passed": run.report.passed(),
                    });
                    let files = Some((write_channel(&run.channel)?, write_plan(&run.plan)?));
                    (report, files)
                }
                Err(e @ (Error::DegenerateChannel(_) | Error::NeedsExtension { .. })) => (
                    json!({ "config": ch.config, "passed": false, "error": e.to_string() }),
                    None,
                ),
                Err(e) => return Err(e.into()),
            };
            let passed = report["passed"] == Value::Bool(true);
            match &ctx.out {
                Some(dir) => {
                    std::fs::create_dir_all(dir)?;
                    if let Some((channel, plan)) = files {
                        write_atomic(&dir.join("channel.json"), &channel)?;
                        write_atomic(&dir.join("plan.json"), &plan)?;
                    }
                    write_atomic(&dir.join("report.json"), &ctx.json_body(report))?;
                }
                None => std::io::stdout().write_all(&ctx.json_body(report))?,
            }
            Ok(passed)
        }

        Command::Verify {
            channel,
            plan,
            common,
        } => {
            let args = json!({
                "channel": channel.display().to_string(),
                "plan": plan.display().to_string(),
            });
            let ctx = Context::new("verify", &common, args)?;
            let ch = read_channel(&read_file(&channel)?)?;
            let p = read_plan(&read_file(&plan)?, &ch.config, &ctx.tol)?;
            let report = verify_plan(&ch, &p, &ctx.tol)?;
            let passed = report.passed();
            ctx.emit(
                json!({ "config": ch.config, "report": report, "passed": passed }),
                None,
            )?;
            Ok(passed)
        }

        Command::Converse {
            dims,
            samples,
            common,
        } => {
            let args = json!({ "dims": dims, "samples": samples });
            let ctx = Context::new("converse", &common, args)?;
            let ch = sample_channel(config(&dims)?, ctx.seed())?;
            let opts = PlanOptions {
                tol: ctx.tol,
                force_extension: false,
            };
            let report = delta_bound_check(&ch, samples, ctx.seed(), &opts, Execution::default())?;
            let passed = report.passed();
            let mut body = to_value(&report);
            body["passed"] = Value::Bool(passed);
            ctx.emit(body, None)?;
            Ok(passed)
        }

        Command::Slope {
            dims,
            plan,
            trials,
            snr_start_db,
            snr_stop_db,
            snr_points,
            common,
        } => {
            let args = json!({
                "dims": dims,
                "plan": plan,
                "trials": trials,
                "snr_start_db": snr_start_db,
                "snr_stop_db": snr_stop_db,
                "snr_points": snr_points,
            });
            let ctx = Context::new("slope", &common, args)?;
            let c = config(&dims)?;
            let sweep =
                SnrSweep::linear(snr_start_db, snr_stop_db, snr_points, trials, ctx.seed())?;
            let opts = SlopeOptions {
                plan: plan_options(&ctx, &plan),
                corner: corner(&plan),
                ..Default::default()
            };
            let summary = slope_estimate(&c, &sweep, &opts)?;
            let mut body = to_value(&summary);
            body["expected"] = Value::String(format_rational(&dof_lin(&c)));
            let csv = summary.to_csv();
            ctx.emit(body.clone(), Some((vec![("summary", body)], csv)))?;
            Ok(true)
        }

        Command::IcRegion { channel, common } => {
            let args = json!({ "channel": channel.display().to_string() });
            let ctx = Context::new("ic-region", &common, args)?;
            let ch = read_channel(&read_file(&channel)?)?;
            let region = ic_dof_region(&ch.h11, &ch.h12, &ch.h21, &ch.h22, &ctx.tol)?;
            let body = json!({
                "region": region,
                "sum_bound": format_rational(&region.max_sum()),
            });
            ctx.emit(body, Some((vec![], region.to_csv())))?;
            Ok(true)
        }

        Command::Allocate { m, relay, common } => {
            let ctx = Context::new("allocate", &common, json!({ "m": m, "relay": relay }))?;
            if m == 0 {
                return Err(Failure::Usage("m must be at least 1".into()));
            }
            let split = allocate_antennas(m, relay);
            let table: Vec<(usize, usize, String, bool)> = (0..=relay)
                .map(|n| {
                    let l = relay - n;
                    let v = sum_dof_lin(rat(m as i64), rat(n as i64), rat(l as i64));
                    (n, l, format_rational(&v), v == split.value)
                })
                .collect();
            let mut csv = String::from("n,l,value,optimal\n");
            for (n, l, v, opt) in &table {
                csv.push_str(&format!("{n},{l},{v},{opt}\n"));
            }
            let body = json!({
                "m": m,
                "relay_total": relay,
                "value": format_rational(&split.value),
                "splits": split.splits,
                "table": table
                    .iter()
                    .map(|(n, l, v, o)| json!({ "n": n, "l": l, "value": v, "optimal": o }))
                    .collect::<Vec<_>>(),
            });
            ctx.emit(body, Some((vec![], csv)))?;
            Ok(true)
        }

        Command::Sweep {
            m,
            n,
            l,
            plan,
            common,
        } => {
            let args = json!({ "m": m, "n": n, "l": l, "plan": plan });
            let ctx = Context::new("sweep", &common, args)?;
            if m.0 == 0 {
                return Err(Failure::Usage("m must be at least 1".into()));
            }
            let mut grid = Vec::new();
            for mi in m.0..=m.1 {
                for ni in n.0..=n.1 {
                    for li in l.0..=l.1 {
                        grid.push(AntennaConfig::new(mi, ni, li)?);
                    }
                }
            }
            let opts = plan_options(&ctx, &plan);
            let who = corner(&plan);
            let seed = ctx.seed();
            let rows = map_indices(Execution::default(), grid.len(), |i| {
                sweep_row(&grid[i], seed, who, &opts)
            });
            let passed = rows.iter().all(|r| r.verified && r.scheme_sum == r.dof_lin);
            let mut csv = String::from(
                "m,n,l,dof_lin,cognitive,genie,tight,scheme_sum,extended,verified,max_residual\n",
            );
            for r in &rows {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},{:e}\n",
                    r.m,
                    r.n,
                    r.l,
                    r.dof_lin,
                    r.cognitive,
                    r.genie,
                    r.tight,
                    r.scheme_sum,
                    r.extended,
                    r.verified,
                    r.max_residual
                ));
            }
            ctx.emit(
                json!({ "rows": rows, "passed": passed }),
                Some((vec![], csv)),
            )?;
            Ok(passed)
        }
    }
}

#[derive(Serialize)]
struct SweepRow {
    m: usize,
    n: usize,
    l: usize,
    dof_lin: String,
    cognitive: String,
    genie: String,
    tight: bool,
    scheme_sum: String,
    extended: bool,
    verified: bool,
    max_residual: f64,
}

fn sweep_row(c: &AntennaConfig, seed: u64, who: User, opts: &PlanOptions) -> SweepRow {
    let bounds = outer_bounds(c);
    let point_seed = derive_seed(seed, "sweep", &[c.m as u64, c.n as u64, c.l as u64]);
    let built = sample_channel(*c, point_seed).and_then(|ch| build_plan(&ch, who, opts));
    let (scheme_sum, extended, verified, max_residual) = match built {
        Ok(run) => (
            format_rational(&run.report.achieved_sum()),
            run.extended(),
            run.report.passed(),
            run.report.max_neutralization_residual,
        ),
        Err(_) => ("none".into(), false, false, f64::NAN),
    };
    SweepRow {
        m: c.m,
        n: c.n,
        l: c.l,
        dof_lin: format_rational(&dof_lin(c)),
        cognitive: format_rational(&bounds.cognitive),
        genie: format_rational(&bounds.genie),
        tight: bounds.tight,
        scheme_sum,
        extended,
        verified,
        max_residual,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Check(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
