use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use ffeq::expcli::{
    parse_ladder, parse_quad, run_crossratio, run_mertens, run_normform, run_quadratic, run_treeperp, selftest, Report,
    TreePair,
};
use ffeq::gf::{parse_field_spec, Field};
use ffeq::modgroup::SubgroupSpec;
use ffeq::poly::parse_poly;
use ffeq::Error;

#[derive(Parser, Debug)]
#[command(name = "ffeq", version, about = "Equidistribution experiments over F_q(Y)")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Pairs (x, y) in the orbit of (1, 0), counted by deg y.
    Mertens {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "full")]
        group: String,
    },
    /// Orbit of a quadratic irrational, counted by h.
    Quadratic {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "full")]
        group: String,
        /// A;B;C;D for (A + B sqrt(D))/C
        #[arg(long)]
        alpha0: String,
    },
    /// Orbit of a quadratic irrational, counted by the cross-ratio complexity h_beta.
    Crossratio {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "full")]
        group: String,
        #[arg(long)]
        alpha0: String,
        #[arg(long)]
        beta: String,
        #[arg(long, default_value_t = 2)]
        avoid_depth: i64,
    },
    /// Coprime pairs (x, y) with y in an ideal, counted by the relative norm of x - y beta.
    Normform {
        #[command(flatten)]
        common: Common,
        /// Generator of the ideal.
        #[arg(long, default_value = "1")]
        ideal: String,
        #[arg(long)]
        beta: String,
        #[arg(long, default_value_t = 2)]
        avoid_depth: i64,
    },
    /// Common perpendiculars between orbits of subtrees of the Bruhat-Tits tree.
    Treeperp {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = PairKind::HoroHoro)]
        pair: PairKind,
        #[arg(long)]
        alpha0: Option<String>,
        #[arg(long)]
        beta: Option<String>,
        #[arg(long, default_value_t = 2)]
        avoid_depth: i64,
        #[arg(long, default_value_t = 2)]
        cyl_depth: i64,
    },
    /// Small-scale oracle equivalences and the zeta gate.
    Selftest {
        #[arg(long, default_value = "3")]
        q: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
        #[arg(long)]
        threads: Option<usize>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Field: q, p^k, optionally with /c0,...,ck for the modulus.
    #[arg(long, default_value = "3")]
    q: String,
    /// a:b, a:b:step or a comma list of exponents.
    #[arg(long)]
    ladder: Option<String>,
    #[arg(long, default_value_t = 2)]
    depth: i64,
    #[arg(long, default_value_t = 0)]
    window: i64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[arg(long)]
    threads: Option<usize>,
    /// Laurent digits kept when embedding orbit points.
    #[arg(long)]
    precision: Option<usize>,
    /// Record wall-clock time in JSON reports.
    #[arg(long)]
    timing: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum PairKind {
    HoroHoro,
    HoroGeo,
    GeoGeo,
}

/// Errors the user can fix by changing the command line.
fn is_config_error(e: &Error) -> bool {
    !matches!(
        e,
        Error::Precision(_)
            | Error::OutsideWindow
            | Error::CoincidentPoints
            | Error::ValuationOfZero
            | Error::SingularBall
            | Error::DegenerateLadder(_)
    )
}

fn format_for(format: Option<Format>, out: &Option<PathBuf>) -> Format {
    format.unwrap_or(match out {
        Some(p) if p.extension().is_some_and(|e| e == "json") => Format::Json,
        _ => Format::Csv,
    })
}

fn write_out(out: &Option<PathBuf>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn init_threads(threads: Option<usize>) -> anyhow::Result<()> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}

fn default_ladder(cmd: &Cmd, f: &Field) -> &'static str {
    match cmd {
        Cmd::Mertens { .. } if f.q() == 2 => "2:10",
        Cmd::Mertens { .. } => "2:8",
        Cmd::Quadratic { .. } | Cmd::Normform { .. } => "2:7",
        Cmd::Crossratio { .. } => "2:6",
        Cmd::Treeperp { pair: PairKind::HoroHoro, .. } => "2:12:2",
        Cmd::Treeperp { pair: PairKind::HoroGeo, .. } => "1:7",
        Cmd::Treeperp { .. } => "1:5",
        Cmd::Selftest { .. } => "",
    }
}

fn required<'a>(v: &'a Option<String>, flag: &str) -> Result<&'a str, Error> {
    v.as_deref().ok_or_else(|| Error::Config(format!("--{flag} is required for this pair")))
}

fn run_experiment(cmd: &Cmd, c: &Common) -> Result<Report, Error> {
    let f = parse_field_spec(&c.q)?;
    let ladder = parse_ladder(c.ladder.as_deref().unwrap_or(default_ladder(cmd, &f)))?;
    let mut report = match cmd {
        Cmd::Mertens { group, .. } => run_mertens(&f, &SubgroupSpec::parse(group, &f)?, &ladder, c.depth, c.window)?,
        Cmd::Quadratic { group, alpha0, .. } => {
            let spec = SubgroupSpec::parse(group, &f)?;
            run_quadratic(&f, &spec, &parse_quad(alpha0, &f)?, &ladder, c.depth, c.window, c.precision)?
        }
        Cmd::Crossratio { group, alpha0, beta, avoid_depth, .. } => {
            let spec = SubgroupSpec::parse(group, &f)?;
            let (a, b) = (parse_quad(alpha0, &f)?, parse_quad(beta, &f)?);
            run_crossratio(&f, &spec, &a, &b, *avoid_depth, &ladder, c.depth, c.window, c.precision)?
        }
        Cmd::Normform { ideal, beta, avoid_depth, .. } => {
            let m = parse_poly(ideal, &f)?;
            run_normform(&f, &m, &parse_quad(beta, &f)?, *avoid_depth, &ladder, c.depth, c.window, c.precision)?
        }
        Cmd::Treeperp { pair, alpha0, beta, avoid_depth, cyl_depth, .. } => {
            let pair = match pair {
                PairKind::HoroHoro => TreePair::HoroHoro,
                PairKind::HoroGeo => TreePair::HoroGeo { alpha0: parse_quad(required(alpha0, "alpha0")?, &f)? },
                PairKind::GeoGeo => TreePair::GeoGeo {
                    beta: parse_quad(required(beta, "beta")?, &f)?,
                    alpha0: parse_quad(required(alpha0, "alpha0")?, &f)?,
                    avoid_depth: *avoid_depth,
                },
            };
            run_treeperp(&f, &pair, &ladder, *cyl_depth, c.window, c.precision)?
        }
        Cmd::Selftest { .. } => unreachable!("selftest has its own path"),
    };
    if let Some(p) = c.precision {
        report.config.insert("precision".into(), p.to_string());
    }
    Ok(report)
}

fn cmd_selftest(q: &str, out: &Option<PathBuf>, format: Option<Format>, threads: Option<usize>) -> anyhow::Result<ExitCode> {
    init_threads(threads)?;
    let f = match parse_field_spec(q) {
        Ok(f) => f,
        Err(e) => return Ok(config_failure(e)),
    };
    let st = selftest(&f);
    for c in &st.checks {
        eprintln!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let text = match format_for(format, out) {
        Format::Json => serde_json::to_string_pretty(&st)? + "\n",
        Format::Csv => {
            let mut s = String::from("check,passed\n");
            for c in &st.checks {
                s += &format!("\"{}\",{}\n", c.name.replace('"', "'"), c.passed);
            }
            s
        }
    };
    write_out(out, &text)?;
    Ok(if st.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_experiment(cmd: &Cmd, c: &Common) -> anyhow::Result<ExitCode> {
    init_threads(c.threads)?;
    let start = Instant::now();
    let mut report = match run_experiment(cmd, c) {
        Ok(r) => r,
        Err(e) if is_config_error(&e) => return Ok(config_failure(e)),
        Err(e) => return Err(e.into()),
    };
    if c.timing {
        report.wall_clock_seconds = Some(start.elapsed().as_secs_f64());
    }
    let text = match format_for(c.format, &c.out) {
        Format::Csv => report.to_csv(),
        Format::Json => report.to_json(),
    };
    write_out(&c.out, &text)?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Selftest { q, out, format, threads } => cmd_selftest(q, out, *format, *threads),
        cmd @ (Cmd::Mertens { common, .. }
        | Cmd::Quadratic { common, .. }
        | Cmd::Crossratio { common, .. }
        | Cmd::Normform { common, .. }
        | Cmd::Treeperp { common, .. }) => cmd_experiment(cmd, common),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn config_failure(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(2)
}
