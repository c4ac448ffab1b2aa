//! `stripwalk` command line tool.

mod commands;
mod error;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{value_parser, Arg, ArgMatches};
use stripwalk::config::RunConfig;
use stripwalk::environment::LayerRange;

use crate::commands::{CommandRegistry, Options, RunContext};
use crate::error::CliError;
use crate::report::{emit, OutputFormat};

fn global_args() -> Vec<Arg> {
    vec![
        Arg::new("config")
            .long("config")
            .value_name("PATH")
            .required(true)
            .value_parser(value_parser!(PathBuf))
            .help("Run configuration (JSON)"),
        Arg::new("seed")
            .long("seed")
            .value_name("U64")
            .value_parser(value_parser!(u64))
            .help("Override seeds.walk"),
        Arg::new("env-seed")
            .long("env-seed")
            .value_name("U64")
            .value_parser(value_parser!(u64))
            .help("Override seeds.environment"),
        Arg::new("out")
            .long("out")
            .value_name("DIR")
            .value_parser(value_parser!(PathBuf))
            .help("Write <command>.json and CSV files here instead of stdout"),
        Arg::new("format")
            .long("format")
            .value_parser(value_parser!(OutputFormat))
            .default_value("json"),
        Arg::new("trials")
            .long("trials")
            .value_parser(value_parser!(u64))
            .help("Override budgets.trials"),
        Arg::new("horizon")
            .long("horizon")
            .value_parser(value_parser!(u64))
            .help("Override budgets.horizon"),
        Arg::new("samples")
            .long("samples")
            .value_parser(value_parser!(u64))
            .help("Override budgets.samples"),
        Arg::new("window")
            .long("window")
            .value_name("LO,HI")
            .allow_hyphen_values(true)
            .help("Layer window for exit tables; walk window for simulate"),
        Arg::new("layer")
            .long("layer")
            .value_parser(value_parser!(i64))
            .allow_hyphen_values(true)
            .default_value("0")
            .help("Parent layer for pmf"),
        Arg::new("max-count")
            .long("max-count")
            .value_parser(value_parser!(usize))
            .default_value("20")
            .help("Largest offspring count tabulated by pmf"),
    ]
}

fn cli(registry: &CommandRegistry) -> clap::Command {
    let mut app = clap::Command::new("stripwalk")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Random walks on a strip in a random environment: exact quantities and Monte Carlo checks")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for c in registry.iter() {
        let sub = clap::Command::new(c.name())
            .about(c.about())
            .after_help(format!("CSV output:\n  {}", c.csv_help().replace('\n', "\n  ")))
            .args(global_args());
        app = app.subcommand(sub);
    }
    app
}

fn parse_window(text: &str) -> Result<LayerRange, CliError> {
    let bad = || CliError::Config(format!("--window expects LO,HI, got '{text}'"));
    let (lo, hi) = text.split_once(',').ok_or_else(bad)?;
    let lo = lo.trim().parse().map_err(|_| bad())?;
    let hi = hi.trim().parse().map_err(|_| bad())?;
    LayerRange::new(lo, hi).map_err(|e| CliError::Config(e.to_string()))
}

fn resolve(m: &ArgMatches) -> Result<(RunConfig, Options), CliError> {
    let path = m.get_one::<PathBuf>("config").expect("required");
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut cfg = RunConfig::from_json(&text)?;
    if let Some(&s) = m.get_one::<u64>("seed") {
        cfg.seeds.walk = s;
    }
    if let Some(&s) = m.get_one::<u64>("env-seed") {
        cfg.seeds.environment = s;
    }
    if let Some(&t) = m.get_one::<u64>("trials") {
        cfg.budgets.trials = t;
    }
    if let Some(&h) = m.get_one::<u64>("horizon") {
        cfg.budgets.horizon = h;
    }
    if let Some(&s) = m.get_one::<u64>("samples") {
        cfg.budgets.samples = s;
    }
    let walk_window = m.get_one::<String>("window").map(|w| parse_window(w)).transpose()?;
    if let Some(w) = walk_window {
        cfg.window = w;
    }
    cfg.check()?;
    let opts = Options {
        format: *m.get_one("format").expect("defaulted"),
        out: m.get_one::<PathBuf>("out").cloned(),
        layer: *m.get_one("layer").expect("defaulted"),
        max_count: *m.get_one("max-count").expect("defaulted"),
        walk_window,
    };
    Ok((cfg, opts))
}

fn run(registry: &CommandRegistry, name: &str, m: &ArgMatches) -> Result<(), CliError> {
    let command = registry.get(name).expect("subcommand is registered");
    let (cfg, opts) = resolve(m)?;
    let ctx = RunContext::new(command.name(), cfg, opts)?;
    let output = command.run(&ctx)?;
    emit(
        command.name(),
        &output.json,
        &output.tables,
        ctx.opts.format,
        ctx.opts.out.as_deref(),
    )?;
    match output.verify {
        Some((failed, total)) if failed > 0 => Err(CliError::Verify { failed, total }),
        _ => Ok(()),
    }
}

fn main() -> ExitCode {
    let registry = CommandRegistry::builtin();
    let matches = cli(&registry).get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    match run(&registry, name, sub) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
