//! Argument parsing and the subcommands.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use maccoop_core::analysis::{
    approx_ratio, classify_externalities, snr_boundary, verify_superadditivity, ReceiverKind, SweepSpec,
};
use maccoop_core::cores::{
    check_core_with, coalition_demands_with, core_from_demands, least_core_from_demands, region_from_demands,
    ExpectationModel,
};
use maccoop_core::equilibrium::{utility_table_with, NeOptions};
use maccoop_core::model::enumerate_partitions;
use maccoop_core::Scenario;

use crate::output::{round12, CertificateEntry, CertificateSummary, Header, Report, Summary, Table, Timings, Units};
use crate::scenario_file;
use crate::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "maccoop",
    version,
    about = "Coalition stability on multiple access channels",
    long_about = None
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Tolerance of the core feasibility decision.
    #[arg(long, global = true, default_value_t = 1e-9)]
    pub tol_lp: f64,
    /// Stationarity tolerance of the per-antenna covariance solver.
    #[arg(long, global = true, default_value_t = 1e-8)]
    pub tol_solver: f64,
    /// Write tables and summary.json into this directory instead of stdout.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Report utilities in bits rather than nats.
    #[arg(long, global = true)]
    pub bits: bool,
    /// Record wall-clock time in the summary.
    #[arg(long, global = true)]
    pub timings: bool,
}

#[derive(Debug, Args)]
pub struct ScenarioArg {
    /// Scenario file (TOML).
    #[arg(long, value_name = "FILE")]
    pub scenario: PathBuf,
}

#[derive(Debug, Args)]
pub struct ModelArg {
    /// Expectation model: rational, merging, cautious or singleton.
    #[arg(long, default_value = "rational", value_parser = parse_model)]
    pub model: ExpectationModel,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List the partitions of K users.
    Partitions {
        #[arg(long)]
        k: usize,
        /// Print only the number of partitions.
        #[arg(long)]
        count_only: bool,
    },
    /// Equilibrium utility of every coalition in every partition.
    Utilities {
        #[command(flatten)]
        scenario: ScenarioArg,
    },
    /// Decide whether the core is empty.
    Core {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[command(flatten)]
        model: ModelArg,
    },
    /// Least-core relaxation and an allocation attaining it.
    LeastCore {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[command(flatten)]
        model: ModelArg,
    },
    /// Vertices of the three-user core polygon.
    Region {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[command(flatten)]
        model: ModelArg,
    },
    /// Core verdicts of symmetric games over an SNR grid.
    Sweep {
        /// User counts, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        k: Vec<usize>,
        #[arg(long, allow_hyphen_values = true)]
        snr_from: f64,
        #[arg(long, allow_hyphen_values = true)]
        snr_to: f64,
        #[arg(long, default_value_t = 1.0)]
        snr_step: f64,
        /// Receiver: sud, sic_fixed or sic_timeshare.
        #[arg(long, default_value = "sic_fixed", value_parser = parse_receiver)]
        receiver: ReceiverKind,
        #[command(flatten)]
        model: ModelArg,
    },
    /// Sample merges and classify how outside coalitions are affected.
    Externalities {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long, default_value_t = 200)]
        trials: usize,
    },
    /// Check super-additivity and cohesion of the grand coalition.
    Properties {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long, default_value_t = 200)]
        trials: usize,
    },
    /// High-SNR approximation ratio of time-shared utilities.
    Ratio {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// SNRs in dB, comma separated.
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        snr_db: Vec<f64>,
    },
}

fn parse_model(s: &str) -> Result<ExpectationModel, String> {
    s.parse()
        .map_err(|_| format!("expected one of rational, merging, cautious, singleton; found {s:?}"))
}

fn parse_receiver(s: &str) -> Result<ReceiverKind, String> {
    match s {
        "sud" => Ok(ReceiverKind::Sud),
        "sic_fixed" => Ok(ReceiverKind::SicFixed),
        "sic_timeshare" => Ok(ReceiverKind::SicTimeShare),
        _ => Err(format!("expected one of sud, sic_fixed, sic_timeshare; found {s:?}")),
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Partitions { .. } => "partitions",
            Command::Utilities { .. } => "utilities",
            Command::Core { .. } => "core",
            Command::LeastCore { .. } => "least-core",
            Command::Region { .. } => "region",
            Command::Sweep { .. } => "sweep",
            Command::Externalities { .. } => "externalities",
            Command::Properties { .. } => "properties",
            Command::Ratio { .. } => "ratio",
        }
    }
}

struct Ctx<'a> {
    global: &'a GlobalOpts,
    units: Units,
    ne: NeOptions,
}

impl Ctx<'_> {
    fn report(&self, command: &str, fingerprint: Option<String>) -> Report {
        Report {
            header: Header {
                command: command.into(),
                fingerprint: fingerprint.clone(),
                seed: self.global.seed,
                tol_lp: self.global.tol_lp,
                tol_solver: self.global.tol_solver,
                units: self.units,
            },
            tables: Vec::new(),
            summary: Summary::new(command, fingerprint),
        }
    }

    fn u(&self, x: f64) -> f64 {
        self.units.scale(x)
    }

    fn allocation(&self, x: &[f64]) -> Vec<Option<f64>> {
        x.iter().map(|&v| round12(self.u(v))).collect()
    }

    fn allocation_table(&self, x: &[f64]) -> Table {
        let mut t = Table::new("allocation", &["user", "share"]);
        for (i, &v) in x.iter().enumerate() {
            t.push(vec![(i + 1).into(), self.u(v).into()]);
        }
        t
    }
}

fn load(arg: &ScenarioArg) -> Result<(Scenario, String), CliError> {
    let sc = scenario_file::load(&arg.scenario)?;
    let fp = maccoop_core::equilibrium::scenario_fingerprint(&sc);
    Ok((sc, fp))
}

fn check_tolerance(name: &str, x: f64) -> Result<(), CliError> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(CliError::User(format!("--{name} must be positive, found {x}")))
    }
}

/// Runs a parsed command. Returns what goes to stdout.
pub fn execute(cli: &Cli) -> Result<String, CliError> {
    let g = &cli.global;
    check_tolerance("tol-lp", g.tol_lp)?;
    check_tolerance("tol-solver", g.tol_solver)?;
    let mut ne = NeOptions::default();
    ne.solver.tol = g.tol_solver;
    ne.solver.accept_tol = ne.solver.accept_tol.max(g.tol_solver);
    let ctx = Ctx {
        global: g,
        units: if g.bits { Units::Bits } else { Units::Nats },
        ne,
    };
    let start = Instant::now();
    let name = cli.command.name();

    let mut report = match &cli.command {
        Command::Partitions { k, count_only } => {
            let parts = enumerate_partitions(*k)?;
            if *count_only {
                return Ok(format!("{}\n", parts.len()));
            }
            let mut r = ctx.report(name, None);
            let mut t = Table::new("partitions", &["index", "blocks", "partition"]);
            for (i, p) in parts.iter().enumerate() {
                t.push(vec![i.into(), p.len().into(), p.to_string().into()]);
            }
            r.tables.push(t);
            r
        }
        Command::Utilities { scenario } => {
            let (sc, fp) = load(scenario)?;
            let table = utility_table_with(&sc, &ctx.ne)?;
            let mut r = ctx.report(name, Some(fp));
            let mut t = Table::new("utilities", &["partition", "coalition", "utility"]);
            for (p, s, v) in table.entries() {
                t.push(vec![p.to_string().into(), s.to_string().into(), ctx.u(v).into()]);
            }
            r.tables.push(t);
            r
        }
        Command::Core { scenario, model } => {
            let (sc, fp) = load(scenario)?;
            let res = check_core_with(&sc, model.model, g.tol_lp, &ctx.ne)?;
            let mut r = ctx.report(name, Some(fp));
            r.tables.push(demand_table(&ctx, &res.demands));
            r.summary.verdict = Some(res.verdict.to_string());
            r.summary.epsilon_star = round12(ctx.u(res.epsilon_star));
            if let Some(x) = &res.allocation {
                r.tables.push(ctx.allocation_table(x));
                r.summary.allocation = Some(ctx.allocation(x));
            }
            if let Some(c) = &res.certificate {
                let mut t = Table::new("certificate", &["coalition", "weight", "demand"]);
                let mut weights = Vec::new();
                for &(s, w) in &c.weights {
                    let demand = res.demands.get(s).unwrap_or(f64::NAN);
                    t.push(vec![s.to_string().into(), w.into(), ctx.u(demand).into()]);
                    weights.push(CertificateEntry {
                        coalition: s.to_string(),
                        weight: round12(w).unwrap_or(0.0),
                    });
                }
                r.tables.push(t);
                r.summary.certificate = Some(CertificateSummary {
                    margin: round12(ctx.u(c.margin)),
                    weights,
                });
            }
            r
        }
        Command::LeastCore { scenario, model } => {
            let (sc, fp) = load(scenario)?;
            let d = coalition_demands_with(&sc, model.model, &ctx.ne)?;
            let lc = least_core_from_demands(&d)?;
            let mut r = ctx.report(name, Some(fp));
            r.tables.push(demand_table(&ctx, &d));
            r.tables.push(ctx.allocation_table(&lc.allocation));
            r.summary.epsilon_star = round12(ctx.u(lc.epsilon_star));
            r.summary.allocation = Some(ctx.allocation(&lc.allocation));
            r
        }
        Command::Region { scenario, model } => {
            let (sc, fp) = load(scenario)?;
            if sc.num_users() != 3 {
                return Err(CliError::User(format!(
                    "region needs exactly 3 users, the scenario has {}",
                    sc.num_users()
                )));
            }
            let d = coalition_demands_with(&sc, model.model, &ctx.ne)?;
            let poly = region_from_demands(&d)?;
            let res = core_from_demands(&d, g.tol_lp)?;
            let mut r = ctx.report(name, Some(fp));
            let mut t = Table::new("region", &["vertex", "x1", "x2", "x3"]);
            for (i, v) in poly.iter().enumerate() {
                t.push(vec![
                    (i + 1).into(),
                    ctx.u(v[0]).into(),
                    ctx.u(v[1]).into(),
                    ctx.u(v[2]).into(),
                ]);
            }
            r.tables.push(demand_table(&ctx, &d));
            r.tables.push(t);
            r.summary.verdict = Some(res.verdict.to_string());
            r.summary.epsilon_star = round12(ctx.u(res.epsilon_star));
            r.summary.allocation = res.allocation.as_deref().map(|x| ctx.allocation(x));
            r
        }
        Command::Sweep {
            k,
            snr_from,
            snr_to,
            snr_step,
            receiver,
            model,
        } => {
            let spec = SweepSpec {
                k_values: k.clone(),
                snr_db: snr_grid(*snr_from, *snr_to, *snr_step)?,
                receiver: *receiver,
                seed: g.seed,
            };
            let reports = snr_boundary(&spec, model.model)?;
            let mut r = ctx.report(name, None);
            let mut grid = Table::new("sweep", &["k", "snr_db", "noise_n0", "verdict"]);
            let mut tr = Table::new(
                "transitions",
                &["k", "lower_db", "upper_db", "threshold_db", "below", "above"],
            );
            for b in &reports {
                for &(snr, v) in &b.grid {
                    grid.push(vec![
                        b.k.into(),
                        snr.into(),
                        maccoop_core::analysis::snr_db_to_noise(snr).into(),
                        v.to_string().into(),
                    ]);
                }
                for t in &b.transitions {
                    tr.push(vec![
                        b.k.into(),
                        t.lower_db.into(),
                        t.upper_db.into(),
                        t.threshold_db().into(),
                        t.below.to_string().into(),
                        t.above.to_string().into(),
                    ]);
                }
            }
            r.tables.push(grid);
            r.tables.push(tr);
            let all_monotone = reports.iter().all(|b| b.monotone);
            r.summary.verdict = Some(if all_monotone { "monotone" } else { "non_monotone" }.into());
            r
        }
        Command::Externalities { scenario, trials } => {
            let (sc, fp) = load(scenario)?;
            let v = classify_externalities(&sc, *trials, g.seed)?;
            let mut r = ctx.report(name, Some(fp));
            let mut t = Table::new(
                "externalities",
                &["before", "after", "coalition", "value_before", "value_after", "change"],
            );
            for w in &v.witnesses {
                t.push(vec![
                    w.before.to_string().into(),
                    w.after.to_string().into(),
                    w.coalition.to_string().into(),
                    ctx.u(w.value_before).into(),
                    ctx.u(w.value_after).into(),
                    ctx.u(w.change()).into(),
                ]);
            }
            r.tables.push(t);
            let mut counts = Table::new("externality_counts", &["comparisons", "witnesses", "skipped"]);
            counts.push(vec![v.comparisons.into(), v.witnesses.len().into(), v.skipped.into()]);
            r.tables.push(counts);
            r.summary.verdict = Some(v.classification.to_string());
            r
        }
        Command::Properties { scenario, trials } => {
            let (sc, fp) = load(scenario)?;
            let rep = verify_superadditivity(&sc, *trials, g.seed)?;
            let mut r = ctx.report(name, Some(fp));
            let mut s = Table::new(
                "superadditivity",
                &[
                    "trials",
                    "skipped",
                    "worst_gap",
                    "violations",
                    "cohesion_checked",
                    "cohesion_violations",
                ],
            );
            s.push(vec![
                rep.trials.into(),
                rep.skipped.into(),
                ctx.u(rep.worst_gap).into(),
                rep.violations.len().into(),
                rep.cohesion_checked.into(),
                rep.cohesion_violations.len().into(),
            ]);
            let mut m = Table::new(
                "merge_violations",
                &["before", "after", "merged", "parts_sum", "merged_value"],
            );
            for w in &rep.violations {
                m.push(vec![
                    w.before.to_string().into(),
                    w.after.to_string().into(),
                    w.merged.to_string().into(),
                    ctx.u(w.parts_sum).into(),
                    ctx.u(w.merged_value).into(),
                ]);
            }
            let mut c = Table::new("cohesion_violations", &["partition", "total", "grand_value"]);
            for w in &rep.cohesion_violations {
                c.push(vec![
                    w.partition.to_string().into(),
                    ctx.u(w.total).into(),
                    ctx.u(w.grand_value).into(),
                ]);
            }
            r.tables.extend([s, m, c]);
            r.summary.verdict = Some(if rep.passed() { "pass" } else { "fail" }.into());
            r
        }
        Command::Ratio { scenario, snr_db } => {
            let (sc, fp) = load(scenario)?;
            let points = approx_ratio(&sc, snr_db)?;
            let mut r = ctx.report(name, Some(fp));
            let mut t = Table::new("ratio", &["snr_db", "size", "approx", "exact", "ratio"]);
            for p in &points {
                t.push(vec![
                    p.snr_db.into(),
                    p.size.into(),
                    ctx.u(p.approx).into(),
                    ctx.u(p.exact).into(),
                    p.ratio.into(),
                ]);
            }
            r.tables.push(t);
            r
        }
    };

    if g.timings {
        report.summary.timings = Some(Timings {
            total_seconds: start.elapsed().as_secs_f64(),
        });
    }
    match &g.out {
        Some(dir) => {
            report.write_to(dir)?;
            Ok(report.summary.render())
        }
        None => report.render_stdout(),
    }
}

fn demand_table(ctx: &Ctx, d: &maccoop_core::cores::CoalitionDemands) -> Table {
    let mut entries = d.entries.clone();
    entries.sort_by_key(|(s, _)| (s.len(), s.mask()));
    let mut t = Table::new("demands", &["coalition", "size", "demand"]);
    for (s, v) in entries {
        t.push(vec![s.to_string().into(), s.len().into(), ctx.u(v).into()]);
    }
    let grand = maccoop_core::Coalition::grand(d.num_users);
    t.push(vec![
        grand.to_string().into(),
        d.num_users.into(),
        ctx.u(d.grand_value).into(),
    ]);
    t
}

/// `from, from + step, ...` up to `to`, with the endpoint snapped when within rounding.
fn snr_grid(from: f64, to: f64, step: f64) -> Result<Vec<f64>, CliError> {
    if !(from.is_finite() && to.is_finite() && step.is_finite()) || step <= 0.0 || to < from {
        return Err(CliError::User(format!(
            "SNR grid needs finite --snr-from <= --snr-to and a positive --snr-step (got {from}, {to}, {step})"
        )));
    }
    let n = ((to - from) / step + 1e-9).floor() as usize;
    if n > 100_000 {
        return Err(CliError::User(format!("SNR grid of {} points is too large", n + 1)));
    }
    Ok((0..=n).map(|i| from + i as f64 * step).collect())
}
