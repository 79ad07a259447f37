//! Command implementations. Each runner writes its artifacts into the output
//! directory and returns summary entries plus the process exit code: 0 for a
//! converged run, 2 when an iteration cap was hit, errors become 1 in main.

use std::fmt;
use std::sync::Arc;

use gl2d::assembly::{self, Problem};
use gl2d::field::{self, ComplexField};
use gl2d::mesh::{quadrature, Mesh2D};
use gl2d::minimize::{minimize, MinimizeReport, SolverConfig};
use gl2d::study::{self, ConvergenceRecord, ReferenceSolution};
use gl2d::{build_lod_basis, lod_ritz_project, minimize_lod, verify_local_uniqueness};
use gl2d::{Error as LibError, Verdict};

use crate::config::{CommandKind, ConfigError, Initial, RunConfig};
use crate::emit;

pub enum CliError {
    Config(ConfigError),
    Lib(LibError),
    Io(std::io::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<LibError> for CliError {
    fn from(e: LibError) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

pub struct CommandOutput {
    /// Ordered key-value result entries for the summary document.
    pub summary: Vec<(String, String)>,
    pub exit_code: i32,
}

fn kv(entries: &mut Vec<(String, String)>, key: &str, value: impl fmt::Display) {
    entries.push((key.to_string(), format!("{value}")));
}

fn solver_config(cfg: &RunConfig) -> SolverConfig {
    SolverConfig {
        tau: cfg.tau,
        delta_gf: cfg.delta_gf,
        delta_newton: cfg.delta_newton,
        max_gf_iters: cfg.max_gf_iters,
        max_newton_iters: cfg.max_newton_iters,
        ..SolverConfig::default()
    }
}

fn build_problem(cfg: &RunConfig) -> Result<Problem, CliError> {
    Ok(Problem::with_quadrature(cfg.kappa, cfg.potential, quadrature(cfg.quad_degree)?)?)
}

fn minimizer_entries(
    entries: &mut Vec<(String, String)>,
    report: &MinimizeReport,
    problem: &Problem,
    prefix: &str,
) {
    let kappa = problem.kappa();
    let e0 = report.energy_history.first().copied().unwrap_or(f64::NAN);
    // The history tracks the flow phase; the field also carries the Newton
    // corrections, so its energy is the authoritative final value.
    let e = assembly::energy(&report.field, problem);
    kv(entries, &format!("{prefix}energy_initial"), e0);
    kv(entries, &format!("{prefix}energy"), e);
    if kappa > 0.0 {
        kv(entries, &format!("{prefix}energy_scaled"), e / (kappa * kappa));
    }
    let nr = field::norms(&report.field, kappa);
    kv(entries, &format!("{prefix}norm_l2"), nr.l2);
    kv(entries, &format!("{prefix}norm_h1_semi"), nr.h1_semi);
    kv(entries, &format!("{prefix}norm_hk1"), nr.hk1);
    if kappa > 0.0 {
        kv(entries, &format!("{prefix}norm_hk1_over_kappa"), nr.hk1 / kappa);
    }
    kv(entries, &format!("{prefix}max_abs"), report.field.max_abs());
    kv(entries, &format!("{prefix}gf_iters"), report.gf_iters);
    kv(entries, &format!("{prefix}newton_iters"), report.newton_iters);
    kv(entries, &format!("{prefix}final_residual_norm"), report.final_residual_norm);
    kv(entries, &format!("{prefix}converged"), report.converged);
}

fn initial_field(cfg: &RunConfig, mesh: &Arc<Mesh2D>) -> Result<ComplexField, CliError> {
    match &cfg.initial {
        Initial::Constant(z) => Ok(ComplexField::constant(mesh, *z)),
        Initial::File(path) => {
            let (f, _kappa_of_file) = field::read_field(path)?;
            if f.mesh().n() != mesh.n() {
                return Err(ConfigError(format!(
                    "key 'initial': field file is on n = {} but the run uses n = {}",
                    f.mesh().n(),
                    mesh.n()
                ))
                .into());
            }
            Ok(f)
        }
    }
}

pub fn run(cfg: &mut RunConfig) -> Result<CommandOutput, CliError> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    match cfg.command {
        CommandKind::Minimize => run_minimize(cfg),
        CommandKind::Eigs => run_eigs(cfg),
        CommandKind::Converge => run_converge(cfg),
        CommandKind::Bestapprox => run_bestapprox(cfg),
        CommandKind::Lod => run_lod(cfg),
    }
}

fn run_minimize(cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    let n = cfg.n.expect("config validation requires n");
    let problem = build_problem(cfg)?;
    let mesh = Arc::new(Mesh2D::build_uniform(n)?);
    let start = initial_field(cfg, &mesh)?;
    eprintln!("minimize: kappa = {}, n = {n}", cfg.kappa);
    let report = minimize(&start, &problem, &solver_config(cfg))?;
    let field_path = cfg.output_dir.join("minimizer.field");
    field::write_field(&field_path, &report.field, cfg.kappa)?;

    let mut entries = Vec::new();
    minimizer_entries(&mut entries, &report, &problem, "");
    kv(&mut entries, "field_file", field_path.display());
    let exit_code = if report.converged { 0 } else { 2 };
    Ok(CommandOutput { summary: entries, exit_code })
}

fn run_eigs(cfg: &mut RunConfig) -> Result<CommandOutput, CliError> {
    let mut entries = Vec::new();
    let mut exit_code = 0;

    let u = match cfg.initial.clone() {
        Initial::File(path) => {
            let (f, kappa_of_file) = field::read_field(&path)?;
            if cfg.kappa.is_nan() {
                cfg.kappa = kappa_of_file;
            } else if cfg.kappa != kappa_of_file {
                return Err(ConfigError(format!(
                    "key 'kappa': config says {} but field file {} was written at kappa = {}",
                    cfg.kappa,
                    path.display(),
                    kappa_of_file
                ))
                .into());
            }
            match cfg.n {
                None => cfg.n = Some(f.mesh().n()),
                Some(n) if n != f.mesh().n() => {
                    return Err(ConfigError(format!(
                        "key 'n': config says {n} but field file {} is on n = {}",
                        path.display(),
                        f.mesh().n()
                    ))
                    .into());
                }
                Some(_) => {}
            }
            f
        }
        Initial::Constant(z) => {
            if cfg.kappa.is_nan() || cfg.n.is_none() {
                return Err(ConfigError(
                    "command 'eigs' needs keys 'kappa' and 'n' unless initial is file:<path>"
                        .into(),
                )
                .into());
            }
            let n = cfg.n.unwrap();
            let problem = build_problem(cfg)?;
            let mesh = Arc::new(Mesh2D::build_uniform(n)?);
            eprintln!("eigs: minimizing first (kappa = {}, n = {n})", cfg.kappa);
            let report = minimize(&ComplexField::constant(&mesh, z), &problem, &solver_config(cfg))?;
            let field_path = cfg.output_dir.join("minimizer.field");
            field::write_field(&field_path, &report.field, cfg.kappa)?;
            minimizer_entries(&mut entries, &report, &problem, "");
            kv(&mut entries, "field_file", field_path.display());
            if !report.converged {
                exit_code = 2;
            }
            report.field
        }
    };

    let problem = build_problem(cfg)?;
    eprintln!("eigs: computing the smallest 5 Hessian eigenvalues");
    let report = verify_local_uniqueness(&u, &problem, 5)?;
    let lambdas: Vec<f64> = report.eigen.pairs.iter().map(|(l, _)| *l).collect();
    for (i, l) in lambdas.iter().enumerate() {
        kv(&mut entries, &format!("lambda_{}", i + 1), l);
    }
    for (i, r) in report.eigen.residual_norms.iter().enumerate() {
        kv(&mut entries, &format!("eig_residual_{}", i + 1), r);
    }
    if let Some(angle) = report.eigen.gauge_angle {
        kv(&mut entries, "gauge_angle_rad", angle);
    }
    match &report.verdict {
        Verdict::LocallyUnique => kv(&mut entries, "verdict", "locally_unique"),
        Verdict::NotCertified(why) => {
            kv(&mut entries, "verdict", "not_certified");
            kv(&mut entries, "verdict_reason", why);
        }
    }

    let row = format!(
        "{},{},{},{},{},{}",
        cfg.kappa, lambdas[0], lambdas[1], lambdas[2], lambdas[3], lambdas[4]
    );
    let csv_path = cfg.output_dir.join("eigs.csv");
    emit::write_csv(&csv_path, emit::EIGS_HEADER, &[row])?;
    kv(&mut entries, "csv_file", csv_path.display());

    Ok(CommandOutput { summary: entries, exit_code })
}

fn reference_entries(
    entries: &mut Vec<(String, String)>,
    reference: &ReferenceSolution,
    problem: &Problem,
) {
    minimizer_entries(entries, &reference.minimize, problem, "reference_");
    let eig = &reference.uniqueness.eigen;
    if let Some((l1, _)) = eig.pairs.first() {
        kv(entries, "reference_lambda_1", l1);
    }
    if let Some((l2, _)) = eig.pairs.get(1) {
        kv(entries, "reference_lambda_2", l2);
    }
    if let Some(angle) = eig.gauge_angle {
        kv(entries, "reference_gauge_angle_rad", angle);
    }
    match &reference.uniqueness.verdict {
        Verdict::LocallyUnique => kv(entries, "reference_verdict", "locally_unique"),
        Verdict::NotCertified(why) => {
            kv(entries, "reference_verdict", "not_certified");
            kv(entries, "reference_verdict_reason", why);
        }
    }
}

fn load_reference(
    cfg: &RunConfig,
    n_ref: usize,
    entries: &mut Vec<(String, String)>,
) -> Result<ReferenceSolution, CliError> {
    let problem = build_problem(cfg)?;
    eprintln!("reference: minimizing and certifying on n = {n_ref} (kappa = {})", cfg.kappa);
    let reference = study::reference_solution(&problem, n_ref, &solver_config(cfg))?;
    if let Some(w) = &reference.warning {
        eprintln!("warning: {w}");
    }
    let path = cfg.output_dir.join("reference.field");
    field::write_field(&path, reference.field(), cfg.kappa)?;
    reference_entries(entries, &reference, &problem);
    kv(entries, "reference_field_file", path.display());
    Ok(reference)
}

fn order_entries(entries: &mut Vec<(String, String)>, records: &[ConvergenceRecord]) {
    let orders = study::median_asymptotic_orders(records);
    kv(entries, "median_order_l2", emit::opt(orders.l2));
    kv(entries, "median_order_hk1", emit::opt(orders.hk1));
    kv(entries, "median_order_energy", emit::opt(orders.energy));
    let flags: Vec<String> = records.iter().map(|r| r.converged.to_string()).collect();
    kv(entries, "levels_converged", flags.join(","));
}

fn run_converge(cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    let n_ref = cfg.n_ref.expect("config validation requires n_ref");
    let problem = build_problem(cfg)?;
    let mut entries = Vec::new();
    let reference = load_reference(cfg, n_ref, &mut entries)?;
    eprintln!("study: {} levels against the reference", cfg.levels.len());
    let records = study::convergence_study_with_reference(
        &problem,
        &cfg.levels,
        &reference,
        &solver_config(cfg),
    )?;

    let rows: Vec<String> = records.iter().map(emit::record_row).collect();
    let csv_path = cfg.output_dir.join("converge.csv");
    emit::write_csv(&csv_path, emit::CONVERGE_HEADER, &rows)?;
    kv(&mut entries, "csv_file", csv_path.display());
    order_entries(&mut entries, &records);

    let exit_code = if records.iter().all(|r| r.converged) { 0 } else { 2 };
    Ok(CommandOutput { summary: entries, exit_code })
}

fn run_bestapprox(cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    let n_ref = cfg.n_ref.expect("config validation requires n_ref");
    let problem = build_problem(cfg)?;
    let kappa = cfg.kappa;
    let mut entries = Vec::new();
    let reference = load_reference(cfg, n_ref, &mut entries)?;
    let u_ref = reference.field();

    let mut rows = Vec::new();
    let mut errs: Vec<(f64, f64)> = Vec::new();
    for &n in &cfg.levels {
        eprintln!("bestapprox: projecting onto n = {n}");
        let coarse = Arc::new(Mesh2D::build_uniform(n)?);
        let best = study::best_approx(u_ref, &coarse, &problem)?;
        let best_fine = field::prolong(&best, u_ref.mesh())?;
        let nr = field::norms(&u_ref.sub(&best_fine)?, kappa);
        errs.push((nr.hk1, nr.l2));
    }
    for (i, (&n, &(hk1, l2))) in cfg.levels.iter().zip(&errs).enumerate() {
        let h = 1.0 / n as f64;
        let (mut order_hk1, mut order_l2) = (None, None);
        if i > 0 {
            let denom = (n as f64 / cfg.levels[i - 1] as f64).log2();
            let (ph, pl) = errs[i - 1];
            order_hk1 = (ph > 0.0 && hk1 > 0.0).then(|| (ph / hk1).log2() / denom);
            order_l2 = (pl > 0.0 && l2 > 0.0).then(|| (pl / l2).log2() / denom);
        }
        rows.push(format!(
            "{},{},{},{},{},{},{},{}",
            kappa,
            n,
            h,
            hk1,
            l2,
            emit::opt(order_hk1),
            emit::opt(order_l2),
            kappa * h >= 1.0
        ));
    }
    let csv_path = cfg.output_dir.join("bestapprox.csv");
    emit::write_csv(&csv_path, emit::BESTAPPROX_HEADER, &rows)?;
    kv(&mut entries, "csv_file", csv_path.display());

    Ok(CommandOutput { summary: entries, exit_code: 0 })
}

fn run_lod(cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    let n_fine = cfg.n_fine.expect("config validation requires n_fine");
    let problem = build_problem(cfg)?;
    let kappa = cfg.kappa;
    let k2 = kappa * kappa;
    let solver = solver_config(cfg);
    let mut entries = Vec::new();
    let reference = load_reference(cfg, n_fine, &mut entries)?;
    let u_ref = reference.field();
    let e_ref = assembly::energy(u_ref, &problem);

    let mut records: Vec<ConvergenceRecord> = Vec::new();
    for &n in &cfg.levels {
        eprintln!("lod: coarse level n = {n} against fine n = {n_fine}");
        let basis = build_lod_basis(n, n_fine, &problem)?;
        let projection = lod_ritz_project(u_ref, &basis)?;
        let bn = field::norms(&u_ref.sub(&projection.field)?, kappa);

        let report = minimize_lod(&problem, &basis, &solver)?;
        let aligned = match field::align_phase(&report.field, u_ref) {
            Ok((_, a)) => a,
            Err(LibError::AlignmentUndefined) => report.field.clone(),
            Err(e) => return Err(e.into()),
        };
        let nr = field::norms(&u_ref.sub(&aligned)?, kappa);
        let e_lod = assembly::energy(&report.field, &problem);
        let err_energy = e_lod - e_ref;
        let own = field::norms(&report.field, kappa);

        let field_path = cfg.output_dir.join(format!("lod_n{n}.field"));
        field::write_field(&field_path, &report.field, kappa)?;

        let h = 1.0 / n as f64;
        records.push(ConvergenceRecord {
            kappa,
            n,
            h,
            err_l2: nr.l2,
            err_hk1: nr.hk1,
            err_energy,
            scaled_l2: nr.l2 / k2,
            scaled_hk1: nr.hk1 / k2,
            scaled_energy: err_energy / (k2 * k2),
            order_l2: None,
            order_hk1: None,
            order_energy: None,
            bestapprox_hk1: bn.hk1,
            bestapprox_l2: bn.l2,
            preasymptotic: kappa * h >= 1.0,
            converged: report.converged,
            minimizer_energy: e_lod,
            minimizer_l2: own.l2,
            minimizer_hk1: own.hk1,
        });
    }
    for i in 1..records.len() {
        let denom = (records[i].n as f64 / records[i - 1].n as f64).log2();
        let order = |coarser: f64, finer: f64| {
            (coarser > 0.0 && finer > 0.0).then(|| (coarser / finer).log2() / denom)
        };
        records[i].order_l2 = order(records[i - 1].err_l2, records[i].err_l2);
        records[i].order_hk1 = order(records[i - 1].err_hk1, records[i].err_hk1);
        records[i].order_energy = order(records[i - 1].err_energy, records[i].err_energy);
    }

    let rows: Vec<String> =
        records.iter().map(|r| format!("{},lod", emit::record_row(r))).collect();
    let csv_path = cfg.output_dir.join("lod.csv");
    emit::write_csv(&csv_path, &format!("{},method", emit::CONVERGE_HEADER), &rows)?;
    kv(&mut entries, "csv_file", csv_path.display());
    order_entries(&mut entries, &records);

    // Orders of the projection (superapproximation) errors, same windows.
    let mut proj_orders = Vec::new();
    for w in records.windows(2) {
        if w[0].bestapprox_hk1 > 0.0 && w[1].bestapprox_hk1 > 0.0 {
            let denom = (w[1].n as f64 / w[0].n as f64).log2();
            proj_orders.push((w[0].bestapprox_hk1 / w[1].bestapprox_hk1).log2() / denom);
        }
    }
    let po: Vec<String> = proj_orders.iter().map(|x| format!("{x}")).collect();
    kv(&mut entries, "projection_orders_hk1", po.join(","));

    let exit_code = if records.iter().all(|r| r.converged) { 0 } else { 2 };
    Ok(CommandOutput { summary: entries, exit_code })
}
