//! `gl2d`: finite element toolkit for the 2D Ginzburg-Landau energy on the
//! unit square. Five commands: `minimize` (compute and store a discrete
//! minimizer), `eigs` (certify local uniqueness up to phase via the smallest
//! Hessian eigenvalues), `converge` (mesh refinement study), `bestapprox`
//! (coarse projections of a reference minimizer), `lod` (multiscale-space
//! study). Configuration comes from an optional key=value file plus `--key
//! value` flag overrides; results land in the output directory as field
//! files, CSVs, and a key=value summary.

mod commands;
mod config;
mod emit;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use config::{CommandKind, RunConfig};

fn build_cli() -> clap::Command {
    let mut root = clap::Command::new("gl2d")
        .about("Finite element minimization and analysis of the 2D Ginzburg-Landau energy")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for kind in [
        CommandKind::Minimize,
        CommandKind::Eigs,
        CommandKind::Converge,
        CommandKind::Bestapprox,
        CommandKind::Lod,
    ] {
        let mut sub = clap::Command::new(kind.name()).about(config::command_about(kind)).arg(
            clap::Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("key=value config file; flags override its entries"),
        );
        for key in config::keys_for(kind) {
            let mut arg = clap::Arg::new(key.name)
                .long(key.name)
                .value_name("VALUE")
                // Let values like -1 through so config validation can name
                // the key in its error instead of clap rejecting the flag.
                .allow_negative_numbers(true)
                .help(key.help);
            for &alias in key.aliases {
                arg = arg.alias(alias);
            }
            sub = sub.arg(arg);
        }
        root = root.subcommand(sub);
    }
    root
}

fn config_entries(cfg: &RunConfig) -> Vec<(String, String)> {
    let mut e: Vec<(String, String)> = Vec::new();
    let mut push = |k: &str, v: String| e.push((k.to_string(), v));
    push("command", cfg.command.name().to_string());
    push("kappa", format!("{}", cfg.kappa));
    if let Some(n) = cfg.n {
        push("n", format!("{n}"));
    }
    if !cfg.levels.is_empty() {
        let levels: Vec<String> = cfg.levels.iter().map(|l| l.to_string()).collect();
        push("levels", levels.join(","));
    }
    if let Some(n_ref) = cfg.n_ref {
        push("n_ref", format!("{n_ref}"));
    }
    if let Some(n_fine) = cfg.n_fine {
        push("n_fine", format!("{n_fine}"));
    }
    push("potential", cfg.potential_token().to_string());
    if matches!(cfg.command, CommandKind::Minimize | CommandKind::Eigs) {
        push("initial", format!("{}", cfg.initial));
    }
    push("tau", cfg.tau_token());
    push("tau_resolved", format!("{}", cfg.tau.resolve(cfg.kappa)));
    push("delta_gf", format!("{}", cfg.delta_gf));
    push("delta_newton", format!("{}", cfg.delta_newton));
    push("quad_degree", format!("{}", cfg.quad_degree));
    push("max_gf_iters", format!("{}", cfg.max_gf_iters));
    push("max_newton_iters", format!("{}", cfg.max_newton_iters));
    push("output_dir", cfg.output_dir.display().to_string());
    e
}

fn real_main() -> i32 {
    // Exit code 2 is reserved for runs that hit an iteration cap; usage
    // errors must exit 1, so clap's default exit behavior cannot be used.
    let matches = match build_cli().try_get_matches() {
        Ok(m) => m,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let _ = e.print();
            return 1;
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let kind = match name {
        "minimize" => CommandKind::Minimize,
        "eigs" => CommandKind::Eigs,
        "converge" => CommandKind::Converge,
        "bestapprox" => CommandKind::Bestapprox,
        "lod" => CommandKind::Lod,
        other => unreachable!("clap rejects unknown subcommand {other}"),
    };

    let file_map = match sub.get_one::<String>("config") {
        Some(path) => match config::parse_config_file(Path::new(path)) {
            Ok(m) => m,
            Err(e) => {
                eprintln!("error: {e}");
                return 1;
            }
        },
        None => BTreeMap::new(),
    };
    let mut overrides: BTreeMap<&'static str, String> = BTreeMap::new();
    for key in config::keys_for(kind) {
        if let Some(v) = sub.get_one::<String>(key.name) {
            overrides.insert(key.name, v.clone());
        }
    }

    let mut cfg = match config::resolve(kind, file_map, overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };

    let started = Instant::now();
    let output = match commands::run(&mut cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };

    let mut entries = config_entries(&cfg);
    entries.extend(output.summary);
    entries
        .push(("wall_time_seconds".into(), format!("{:.3}", started.elapsed().as_secs_f64())));
    let mut text = String::new();
    for (k, v) in &entries {
        text.push_str(k);
        text.push('=');
        text.push_str(v);
        text.push('\n');
    }
    let summary_path = cfg.output_dir.join("summary.txt");
    if let Err(e) = emit::atomic_write(&summary_path, &text) {
        eprintln!("error: writing {}: {e}", summary_path.display());
        return 1;
    }
    print!("{text}");
    output.exit_code
}

fn main() {
    std::process::exit(real_main());
}
