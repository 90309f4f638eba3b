//! `qontot`: generate synthetic data, train circuit models and baselines,
//! evaluate them and predict transport plans.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 simulator
//! capacity exceeded, 4 numeric failure.

use std::process::ExitCode;

use clap::Parser;

mod args;
mod commands;
mod output;

use args::{Cli, Command};

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<qontot::Error>() {
            return match e {
                qontot::Error::Capacity { .. } => 3,
                qontot::Error::NonFinite { .. } | qontot::Error::Numeric(_) | qontot::Error::NotConverged { .. } => 4,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
