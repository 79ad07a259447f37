//! Run configuration: one table of keys feeds both the config-file parser and
//! the flag overrides, so every key spells and validates identically in both.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use gl2d::assembly::Potential;
use gl2d::minimize::Tau;
use num_complex::Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Minimize,
    Eigs,
    Converge,
    Bestapprox,
    Lod,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Minimize => "minimize",
            CommandKind::Eigs => "eigs",
            CommandKind::Converge => "converge",
            CommandKind::Bestapprox => "bestapprox",
            CommandKind::Lod => "lod",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Initial {
    Constant(Complex64),
    File(PathBuf),
}

impl fmt::Display for Initial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Initial::Constant(z) => {
                write!(f, "constant:{}{}{}i", z.re, if z.im < 0.0 { "" } else { "+" }, z.im)
            }
            Initial::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

/// One settable key: canonical name, accepted aliases, and help text.
pub struct KeySpec {
    pub name: &'static str,
    pub aliases: &'static [&'static str],
    pub help: &'static str,
}

pub const KEYS: &[KeySpec] = &[
    KeySpec { name: "kappa", aliases: &[], help: "Ginzburg-Landau parameter, finite and >= 0" },
    KeySpec { name: "n", aliases: &[], help: "mesh subdivisions per side (minimize, eigs)" },
    KeySpec {
        name: "levels",
        aliases: &[],
        help: "comma-separated mesh sizes, strictly increasing (converge, bestapprox, lod)",
    },
    KeySpec { name: "n_ref", aliases: &[], help: "reference mesh size (converge, bestapprox)" },
    KeySpec {
        name: "n_coarse",
        aliases: &["n_H"],
        help: "single coarse level for lod; alternative to levels",
    },
    KeySpec { name: "n_fine", aliases: &["n_h"], help: "fine mesh size for lod" },
    KeySpec { name: "potential", aliases: &[], help: "vector potential: sinusoidal or zero" },
    KeySpec {
        name: "initial",
        aliases: &[],
        help: "starting field: constant:<re>(+|-)<im>i or file:<path> (minimize, eigs)",
    },
    KeySpec { name: "tau", aliases: &[], help: "flow step: auto (= 1/kappa^2) or a number > 0" },
    KeySpec { name: "delta_gf", aliases: &[], help: "scaled energy tolerance ending the flow" },
    KeySpec {
        name: "delta_newton",
        aliases: &[],
        help: "scaled energy tolerance ending the Newton phase",
    },
    KeySpec { name: "quad_degree", aliases: &[], help: "quadrature exactness degree (1, 2, or 5)" },
    KeySpec { name: "max_gf_iters", aliases: &[], help: "flow iteration cap" },
    KeySpec { name: "max_newton_iters", aliases: &[], help: "Newton iteration cap" },
    KeySpec { name: "output_dir", aliases: &[], help: "directory for result files (default .)" },
];

struct CommandTable {
    kind: CommandKind,
    required: &'static [&'static str],
    allowed: &'static [&'static str],
    about: &'static str,
}

const COMMON: [&str; 8] = [
    "potential",
    "tau",
    "delta_gf",
    "delta_newton",
    "quad_degree",
    "max_gf_iters",
    "max_newton_iters",
    "output_dir",
];

const COMMANDS: &[CommandTable] = &[
    CommandTable {
        kind: CommandKind::Minimize,
        required: &["kappa", "n"],
        allowed: &["kappa", "n", "initial"],
        about: "compute a discrete energy minimizer and write the field",
    },
    CommandTable {
        kind: CommandKind::Eigs,
        // kappa and n may instead come from a field file given as initial.
        required: &[],
        allowed: &["kappa", "n", "initial"],
        about: "certify a minimizer: smallest five Hessian eigenvalues and gauge test",
    },
    CommandTable {
        kind: CommandKind::Converge,
        required: &["kappa", "levels", "n_ref"],
        allowed: &["kappa", "levels", "n_ref"],
        about: "mesh refinement study against a reference minimizer (CSV)",
    },
    CommandTable {
        kind: CommandKind::Bestapprox,
        required: &["kappa", "levels", "n_ref"],
        allowed: &["kappa", "levels", "n_ref"],
        about: "coarse-space projections of a reference minimizer (CSV)",
    },
    CommandTable {
        kind: CommandKind::Lod,
        required: &["kappa", "n_fine"],
        allowed: &["kappa", "levels", "n_coarse", "n_fine"],
        about: "multiscale-space study: projection and minimization per coarse level (CSV)",
    },
];

fn command_table(kind: CommandKind) -> &'static CommandTable {
    COMMANDS.iter().find(|c| c.kind == kind).expect("every command is listed")
}

pub fn command_about(kind: CommandKind) -> &'static str {
    command_table(kind).about
}

/// Keys a command accepts, in table order: its own plus the common set.
pub fn keys_for(kind: CommandKind) -> Vec<&'static KeySpec> {
    let table = command_table(kind);
    KEYS.iter()
        .filter(|k| table.allowed.contains(&k.name) || COMMON.contains(&k.name))
        .collect()
}

/// Fully resolved configuration, every default applied.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: CommandKind,
    pub kappa: f64,
    pub n: Option<usize>,
    pub levels: Vec<usize>,
    pub n_ref: Option<usize>,
    pub n_fine: Option<usize>,
    pub potential: Potential,
    pub initial: Initial,
    pub tau: Tau,
    pub delta_gf: f64,
    pub delta_newton: f64,
    pub quad_degree: u32,
    pub max_gf_iters: usize,
    pub max_newton_iters: usize,
    pub output_dir: PathBuf,
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: String) -> Result<T, ConfigError> {
    Err(ConfigError(msg))
}

fn canonical_key(raw: &str) -> Option<&'static str> {
    KEYS.iter()
        .find(|k| k.name == raw || k.aliases.contains(&raw))
        .map(|k| k.name)
}

/// Raw key-value pairs from a config file, canonicalized, duplicates rejected.
pub fn parse_config_file(path: &Path) -> Result<BTreeMap<&'static str, String>, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("config file {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return err(format!(
                "config file {}, line {}: expected key=value, got '{line}'",
                path.display(),
                lineno + 1
            ));
        };
        let (key, value) = (key.trim(), value.trim());
        let Some(canon) = canonical_key(key) else {
            return err(format!(
                "config file {}, line {}: unknown key '{key}'",
                path.display(),
                lineno + 1
            ));
        };
        if map.insert(canon, value.to_string()).is_some() {
            return err(format!(
                "config file {}, line {}: key '{key}' given twice",
                path.display(),
                lineno + 1
            ));
        }
    }
    Ok(map)
}

fn parse_f64(key: &str, v: &str) -> Result<f64, ConfigError> {
    v.parse::<f64>().map_err(|_| ConfigError(format!("key '{key}': '{v}' is not a number")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize, ConfigError> {
    v.parse::<usize>()
        .map_err(|_| ConfigError(format!("key '{key}': '{v}' is not a non-negative integer")))
}

/// Complex literal: `<re>`, `<im>i`, or `<re>(+|-)<im>i`, each part a float.
fn parse_complex(key: &str, v: &str) -> Result<Complex64, ConfigError> {
    let bad = || ConfigError(format!("key '{key}': '{v}' is not a complex literal like 0.8+0.6i"));
    let s = v.trim();
    if s.is_empty() {
        return Err(bad());
    }
    if let Some(rest) = s.strip_suffix(['i', 'I']) {
        // Split at the sign that separates real and imaginary parts: the last
        // '+'/'-' not at the start and not part of an exponent.
        let bytes = rest.as_bytes();
        let mut split = None;
        for (idx, &b) in bytes.iter().enumerate().skip(1).rev() {
            if (b == b'+' || b == b'-') && !matches!(bytes[idx - 1], b'e' | b'E') {
                split = Some(idx);
                break;
            }
        }
        match split {
            Some(idx) => {
                let re: f64 = rest[..idx].parse().map_err(|_| bad())?;
                let im_str = &rest[idx..];
                let im: f64 = if im_str == "+" || im_str == "-" {
                    format!("{im_str}1").parse().unwrap()
                } else {
                    im_str.parse().map_err(|_| bad())?
                };
                Ok(Complex64::new(re, im))
            }
            None => {
                let im: f64 = rest.parse().map_err(|_| bad())?;
                Ok(Complex64::new(0.0, im))
            }
        }
    } else {
        let re: f64 = s.parse().map_err(|_| bad())?;
        Ok(Complex64::new(re, 0.0))
    }
}

fn parse_initial(v: &str) -> Result<Initial, ConfigError> {
    if let Some(rest) = v.strip_prefix("constant:") {
        return Ok(Initial::Constant(parse_complex("initial", rest)?));
    }
    if let Some(rest) = v.strip_prefix("file:") {
        if rest.is_empty() {
            return err("key 'initial': empty file path".into());
        }
        return Ok(Initial::File(PathBuf::from(rest)));
    }
    err(format!(
        "key 'initial': '{v}' must be constant:<re>(+|-)<im>i or file:<path>"
    ))
}

fn parse_levels(v: &str) -> Result<Vec<usize>, ConfigError> {
    let levels: Vec<usize> = v
        .split(',')
        .map(|t| parse_usize("levels", t.trim()))
        .collect::<Result<_, _>>()?;
    if levels.is_empty() {
        return err("key 'levels': at least one level is required".into());
    }
    for w in levels.windows(2) {
        if w[1] <= w[0] {
            return err(format!(
                "key 'levels': must be strictly increasing, got {} then {}",
                w[0], w[1]
            ));
        }
    }
    if levels[0] == 0 {
        return err("key 'levels': levels must be positive".into());
    }
    Ok(levels)
}

fn pow2_nested(coarse: usize, fine: usize) -> bool {
    coarse > 0 && fine % coarse == 0 && (fine / coarse).is_power_of_two()
}

/// Merges file values and flag overrides (flags win), applies defaults, and
/// checks every cross-key invariant. `overrides` holds canonical keys.
pub fn resolve(
    command: CommandKind,
    file: BTreeMap<&'static str, String>,
    overrides: BTreeMap<&'static str, String>,
) -> Result<RunConfig, ConfigError> {
    let table = command_table(command);
    let applicable = |k: &str| table.allowed.contains(&k) || COMMON.contains(&k);
    let mut merged = file;
    for (k, v) in overrides {
        merged.insert(k, v);
    }
    for key in merged.keys() {
        if !applicable(key) {
            return err(format!(
                "key '{key}' does not apply to command '{}'",
                command.name()
            ));
        }
    }
    for &req in table.required {
        if !merged.contains_key(req) {
            return err(format!("command '{}' needs key '{req}'", command.name()));
        }
    }

    let get = |k: &str| merged.get(k).map(String::as_str);

    let kappa = match get("kappa") {
        Some(v) => {
            let k = parse_f64("kappa", v)?;
            if !k.is_finite() || k < 0.0 {
                return err(format!("key 'kappa': must be finite and >= 0, got {v}"));
            }
            k
        }
        None => f64::NAN, // eigs with a field file fills it in later
    };
    if matches!(command, CommandKind::Converge | CommandKind::Bestapprox | CommandKind::Lod)
        && kappa <= 0.0
    {
        return err(format!("key 'kappa': command '{}' needs kappa > 0", command.name()));
    }

    let n = get("n").map(|v| parse_usize("n", v)).transpose()?;
    if let Some(n) = n {
        if n == 0 {
            return err("key 'n': mesh size must be positive".into());
        }
    }
    let n_ref = get("n_ref").map(|v| parse_usize("n_ref", v)).transpose()?;
    let n_fine = get("n_fine").map(|v| parse_usize("n_fine", v)).transpose()?;

    let mut levels = get("levels").map(parse_levels).transpose()?.unwrap_or_default();
    if let Some(v) = get("n_coarse") {
        if !levels.is_empty() {
            return err("keys 'levels' and 'n_coarse' are alternatives; give one".into());
        }
        levels = vec![parse_usize("n_coarse", v)?];
        if levels[0] == 0 {
            return err("key 'n_coarse': mesh size must be positive".into());
        }
    }
    if command == CommandKind::Lod && levels.is_empty() {
        return err("command 'lod' needs key 'levels' or 'n_coarse'".into());
    }

    if let Some(n_ref) = n_ref {
        for &l in &levels {
            if !pow2_nested(l, n_ref) {
                return err(format!(
                    "key 'levels': level {l} is not a power-of-two divisor step below n_ref = {n_ref}"
                ));
            }
        }
    }
    if let Some(n_fine) = n_fine {
        for &l in &levels {
            if !pow2_nested(l, n_fine) {
                return err(format!(
                    "key 'levels': level {l} is not a power-of-two divisor step below n_fine = {n_fine}"
                ));
            }
        }
    }

    let potential = match get("potential").unwrap_or("sinusoidal") {
        "sinusoidal" => Potential::Sinusoidal,
        "zero" => Potential::Zero,
        other => {
            return err(format!(
                "key 'potential': '{other}' is not one of sinusoidal, zero"
            ))
        }
    };

    let initial = match get("initial") {
        Some(v) => parse_initial(v)?,
        None => Initial::Constant(Complex64::new(0.8, 0.6)),
    };
    if let Initial::File(p) = &initial {
        if !p.is_file() {
            return err(format!("key 'initial': file {} does not exist", p.display()));
        }
    }

    let tau = match get("tau").unwrap_or("auto") {
        "auto" => Tau::Auto,
        v => {
            let t = parse_f64("tau", v)?;
            if !(t > 0.0) || !t.is_finite() {
                return err(format!("key 'tau': must be auto or a positive number, got {v}"));
            }
            Tau::Fixed(t)
        }
    };

    let positive = |key: &str, default: f64| -> Result<f64, ConfigError> {
        match get(key) {
            None => Ok(default),
            Some(v) => {
                let x = parse_f64(key, v)?;
                if !(x > 0.0) || !x.is_finite() {
                    return err(format!("key '{key}': must be a positive number, got {v}"));
                }
                Ok(x)
            }
        }
    };
    let delta_gf = positive("delta_gf", 1e-9)?;
    let delta_newton = positive("delta_newton", 1e-12)?;

    let quad_degree = match get("quad_degree") {
        None => 5,
        Some(v) => {
            let d = parse_usize("quad_degree", v)?;
            u32::try_from(d)
                .map_err(|_| ConfigError(format!("key 'quad_degree': {v} is out of range")))?
        }
    };
    let max_gf_iters = match get("max_gf_iters") {
        None => 50_000,
        Some(v) => parse_usize("max_gf_iters", v)?,
    };
    let max_newton_iters = match get("max_newton_iters") {
        None => 50,
        Some(v) => parse_usize("max_newton_iters", v)?,
    };
    if max_gf_iters == 0 || max_newton_iters == 0 {
        return err("keys 'max_gf_iters' and 'max_newton_iters' must be positive".into());
    }

    let output_dir = PathBuf::from(get("output_dir").unwrap_or("."));

    Ok(RunConfig {
        command,
        kappa,
        n,
        levels,
        n_ref,
        n_fine,
        potential,
        initial,
        tau,
        delta_gf,
        delta_newton,
        quad_degree,
        max_gf_iters,
        max_newton_iters,
        output_dir,
    })
}

impl RunConfig {
    pub fn potential_token(&self) -> &'static str {
        match self.potential {
            Potential::Sinusoidal => "sinusoidal",
            Potential::Zero => "zero",
        }
    }

    pub fn tau_token(&self) -> String {
        match self.tau {
            Tau::Auto => "auto".into(),
            Tau::Fixed(t) => format!("{t}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn over(pairs: &[(&'static str, &str)]) -> BTreeMap<&'static str, String> {
        pairs.iter().map(|&(k, v)| (k, v.to_string())).collect()
    }

    #[test]
    fn defaults_resolve_for_a_minimal_minimize_config() {
        let cfg = resolve(
            CommandKind::Minimize,
            BTreeMap::new(),
            over(&[("kappa", "8"), ("n", "64")]),
        )
        .unwrap();
        assert_eq!(cfg.kappa, 8.0);
        assert_eq!(cfg.n, Some(64));
        assert_eq!(cfg.potential, Potential::Sinusoidal);
        assert_eq!(cfg.initial, Initial::Constant(Complex64::new(0.8, 0.6)));
        assert!(matches!(cfg.tau, Tau::Auto));
        assert_eq!(cfg.tau.resolve(8.0), 1.0 / 64.0);
        assert_eq!(cfg.delta_gf, 1e-9);
        assert_eq!(cfg.delta_newton, 1e-12);
        assert_eq!(cfg.quad_degree, 5);
    }

    #[test]
    fn level_chains_must_be_power_of_two_nested() {
        let ok = resolve(
            CommandKind::Converge,
            BTreeMap::new(),
            over(&[("kappa", "2"), ("levels", "16,32,64"), ("n_ref", "128")]),
        );
        assert!(ok.is_ok());
        let bad = resolve(
            CommandKind::Converge,
            BTreeMap::new(),
            over(&[("kappa", "2"), ("levels", "16,48"), ("n_ref", "128")]),
        );
        let msg = bad.unwrap_err().0;
        assert!(msg.contains("levels") && msg.contains("48"), "{msg}");
    }

    #[test]
    fn unknown_and_inapplicable_keys_name_the_key() {
        let msg = resolve(
            CommandKind::Converge,
            BTreeMap::new(),
            over(&[("kappa", "2"), ("levels", "4"), ("n_ref", "8"), ("n", "4")]),
        )
        .unwrap_err()
        .0;
        assert!(msg.contains("'n'") && msg.contains("converge"), "{msg}");
    }

    #[test]
    fn complex_literals_parse_in_all_shapes() {
        assert_eq!(parse_complex("initial", "0.8+0.6i").unwrap(), Complex64::new(0.8, 0.6));
        assert_eq!(parse_complex("initial", "-1.5e-3-2e-4i").unwrap(), Complex64::new(-1.5e-3, -2e-4));
        assert_eq!(parse_complex("initial", "0.7").unwrap(), Complex64::new(0.7, 0.0));
        assert_eq!(parse_complex("initial", "-0.3i").unwrap(), Complex64::new(0.0, -0.3));
        assert_eq!(parse_complex("initial", "1+i").unwrap(), Complex64::new(1.0, 1.0));
        assert!(parse_complex("initial", "nope").is_err());
        assert!(parse_complex("initial", "").is_err());
    }

    #[test]
    fn duplicate_file_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "kappa=2\nkappa=3\n").unwrap();
        let msg = parse_config_file(&path).unwrap_err().0;
        assert!(msg.contains("kappa") && msg.contains("twice"), "{msg}");
    }

    #[test]
    fn file_aliases_map_to_canonical_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "# comment\nn_H = 4\nn_h=32\n").unwrap();
        let map = parse_config_file(&path).unwrap();
        assert_eq!(map.get("n_coarse").map(String::as_str), Some("4"));
        assert_eq!(map.get("n_fine").map(String::as_str), Some("32"));
    }

    #[test]
    fn lod_accepts_either_levels_or_n_coarse_but_not_both() {
        let base = [("kappa", "4"), ("n_fine", "64")];
        let mut with_levels = over(&base);
        with_levels.insert("levels", "4,8".into());
        assert!(resolve(CommandKind::Lod, BTreeMap::new(), with_levels).is_ok());

        let mut with_single = over(&base);
        with_single.insert("n_coarse", "8".into());
        let cfg = resolve(CommandKind::Lod, BTreeMap::new(), with_single).unwrap();
        assert_eq!(cfg.levels, vec![8]);

        let mut both = over(&base);
        both.insert("levels", "4,8".into());
        both.insert("n_coarse", "8".into());
        assert!(resolve(CommandKind::Lod, BTreeMap::new(), both).is_err());

        assert!(resolve(CommandKind::Lod, BTreeMap::new(), over(&base)).is_err());
    }
}
