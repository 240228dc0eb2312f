//! Command-line entry points and the annotation HTTP service.

use std::ffi::OsString;
use std::fs;

use anyhow::Context;
use castid::clustering::ClusterSet;
use clap::Parser;

pub mod args;
pub mod commands;
pub mod server;

use args::{Cli, Command, ServeArgs};
use commands::ThresholdMissed;

pub const EXIT_DATA: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_THRESHOLD: i32 = 3;

/// Parses `argv`, runs the command and returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) if e.is::<ThresholdMissed>() => {
            eprintln!("threshold missed: {e}");
            EXIT_THRESHOLD
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_DATA
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let seed = cli.seed;
    match &cli.command {
        Command::Tracks(a) => commands::tracks(a),
        Command::Cluster(a) => commands::cluster(a),
        Command::Split(a) => commands::split(a, seed),
        Command::Train(a) => commands::train(a, seed),
        Command::Evaluate(a) => commands::evaluate(a, seed),
        Command::Replace(a) => commands::replace(a, seed),
        Command::Stats(a) => commands::stats(a, seed),
        Command::Synth(a) => commands::synth(a, seed),
        Command::Serve(a) => serve(a),
    }
}

fn serve(args: &ServeArgs) -> anyhow::Result<()> {
    let store = commands::load_store(&args.data)?;
    let text = fs::read_to_string(&args.clusters).with_context(|| format!("reading {}", args.clusters.display()))?;
    let set = ClusterSet::from_json(&text).with_context(|| format!("parsing {}", args.clusters.display()))?;
    let clusters = commands::clusters_by_movie(&store, set)?;
    let state = server::open_state(store, clusters, args.audit.as_deref())?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(args.addr)
            .await
            .with_context(|| format!("binding {}", args.addr))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, server::router(state)).await?;
        Ok(())
    })
}
