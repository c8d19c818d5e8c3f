//! `emv`: simulate markets, train EMV learners, backtest allocation rules,
//! verify the analytic solutions and compare backtest reports.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};

use crate::config::RunConfig;
use crate::error::CliError;

fn common_args() -> Vec<Arg> {
    vec![
        Arg::new("config")
            .long("config")
            .value_name("PATH")
            .value_parser(value_parser!(PathBuf))
            .help("flat key = value config file; flags override its entries")
            .global(true),
        Arg::new("out")
            .long("out")
            .value_name("DIR")
            .value_parser(value_parser!(PathBuf))
            .help("output directory [default: emv_out]")
            .global(true),
        Arg::new("threads")
            .long("threads")
            .value_name("N")
            .value_parser(value_parser!(usize))
            .help("worker threads; 1 gives the serial path")
            .global(true),
    ]
}

fn cli() -> Command {
    Command::new("emv")
        .about("Exploratory mean-variance portfolio selection")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .args(common_args())
        .subcommand(
            Command::new("simulate")
                .about("Simulate GBM prices and optimal exploratory wealth paths")
                .args(config::schema_args(&commands::simulate::schema())),
        )
        .subcommand(
            Command::new("train")
                .about("Train an EMV learner on simulated or historical episodes")
                .args(config::schema_args(&commands::train::schema())),
        )
        .subcommand(
            Command::new("backtest")
                .about("Backtest EMV, plug-in Markowitz or the zero policy on a price table")
                .args(config::schema_args(&commands::backtest::schema())),
        )
        .subcommand(
            Command::new("verify")
                .about("Check the analytic solutions, gradients and Monte-Carlo identities")
                .args(config::schema_args(&commands::verify::schema()))
                .args(commands::verify::CHECKS.iter().map(|(name, help)| {
                    Arg::new(*name)
                        .long(config::flag_name(name))
                        .action(ArgAction::SetTrue)
                        .help(format!("run the {help} check (all checks when none is selected)"))
                })),
        )
        .subcommand(
            Command::new("report")
                .about("Compare the metrics of one or more backtest output directories")
                .arg(
                    Arg::new("input")
                        .long("input")
                        .value_name("DIR")
                        .value_parser(value_parser!(PathBuf))
                        .action(ArgAction::Append)
                        .required(true)
                        .help("backtest output directory (repeatable)"),
                ),
        )
}

pub struct Context {
    pub out: PathBuf,
}

fn run(matches: &ArgMatches) -> Result<(), CliError> {
    if let Some(&n) = matches.get_one::<usize>("threads") {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.into()))?;
    }
    let (name, sub) = matches.subcommand().expect("a subcommand is required");
    let file = sub.get_one::<PathBuf>("config").map(PathBuf::as_path);
    let ctx = Context {
        out: sub
            .get_one::<PathBuf>("out")
            .cloned()
            .unwrap_or_else(|| PathBuf::from("emv_out")),
    };
    match name {
        "simulate" => {
            let cfg = RunConfig::resolve(&commands::simulate::schema(), file, sub)?;
            commands::simulate::run(&cfg, &ctx)
        }
        "train" => {
            let cfg = RunConfig::resolve(&commands::train::schema(), file, sub)?;
            commands::train::run(&cfg, &ctx)
        }
        "backtest" => {
            let cfg = RunConfig::resolve(&commands::backtest::schema(), file, sub)?;
            commands::backtest::run(&cfg, &ctx)
        }
        "verify" => {
            let cfg = RunConfig::resolve(&commands::verify::schema(), file, sub)?;
            let selected: Vec<&str> = commands::verify::CHECKS
                .iter()
                .map(|(n, _)| *n)
                .filter(|n| sub.get_flag(n))
                .collect();
            commands::verify::run(&cfg, &ctx, &selected)
        }
        "report" => {
            if file.is_some() {
                return Err(CliError::Config("report takes no config file".into()));
            }
            let inputs: Vec<PathBuf> = sub.get_many::<PathBuf>("input").unwrap().cloned().collect();
            let explicit_out = sub.get_one::<PathBuf>("out").is_some();
            commands::report::run(&inputs, explicit_out.then_some(&ctx))
        }
        _ => unreachable!("clap rejects unknown subcommands"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_definition_is_consistent() {
        cli().debug_assert();
    }
}
