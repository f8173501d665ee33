//! Experiment configs: a line-oriented `key = value` text format with one
//! section per command, command-line overrides, per-command schemas and a
//! content hash of the resolved form.
//!
//! ```text
//! # comments run to the end of the line
//! command = count
//! seed = 7
//! output = runs/count
//!
//! [count]
//! r_max = 10000
//! delta_grid = 8
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use kplab_core::probe::{CaseName, Family, ProbeCase};
use kplab_core::solver::Scheme;
use sha2::{Digest, Sha256};

/// A malformed config or flag. Always names the offending key or line.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> UsageError {
    UsageError(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Command {
    Count,
    Resonance,
    Norms,
    Probe,
    Sweep,
    Solve,
    Picard,
    Validate,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Count,
        Command::Resonance,
        Command::Norms,
        Command::Probe,
        Command::Sweep,
        Command::Solve,
        Command::Picard,
        Command::Validate,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Command::Count => "count",
            Command::Resonance => "resonance",
            Command::Norms => "norms",
            Command::Probe => "probe",
            Command::Sweep => "sweep",
            Command::Solve => "solve",
            Command::Picard => "picard",
            Command::Validate => "validate",
        }
    }
}

impl FromStr for Command {
    type Err = UsageError;
    fn from_str(s: &str) -> Result<Self, UsageError> {
        Command::ALL
            .iter()
            .find(|c| c.as_str() == s)
            .copied()
            .ok_or_else(|| usage(format!("unknown command '{s}'")))
    }
}

// ---------------------------------------------------------------------------
// Schemas

#[derive(Clone, Copy, Debug)]
enum Kind {
    Int,
    Float,
    Bool,
    Choice(&'static [&'static str]),
    IntList,
    FloatList,
    ChoiceList(&'static [&'static str]),
    /// Free text (file paths); empty means unset.
    Text,
}

/// `None` defaults are filled in by [`resolve`] (probe parameters come from
/// the case preset).
type Spec = (&'static str, Kind, Option<&'static str>);

const CASES: &[&str] = &[
    "bil",
    "bil_dual",
    "lin_l4",
    "meps",
    "meps_dual",
    "central",
    "kernel_sum",
    "dx_half_meps",
    "mixed",
    "mixed_endpoint",
    "time_loc",
    "est0",
    "nonlin1",
    "nonlin2",
];
const FAMILIES: &[&str] = &["random_gaussian", "single_pair", "wave_packet", "shell_concentrated"];
const SCHEMES: &[&str] = &["integrating_factor_rk4", "etdrk4"];
const MODES: &[&str] = &["verify", "falsify"];
const K_WEIGHTS: &[&str] = &["homogeneous", "bracket"];
const DATA: &[&str] = &["two_cosines", "single_cosine", "random"];

const PROBE_PARAMS: &[Spec] = &[
    ("alpha", Kind::Float, None),
    ("s", Kind::Float, None),
    ("s1", Kind::Float, None),
    ("s2", Kind::Float, None),
    ("eps", Kind::Float, None),
    ("eps0", Kind::Float, None),
    ("eps1", Kind::Float, None),
    ("eps2", Kind::Float, None),
    ("b", Kind::Float, None),
    ("b_tilde", Kind::Float, None),
    ("b_prime", Kind::Float, None),
    ("beta", Kind::Float, None),
    ("p_tau", Kind::Float, None),
    ("t_cut", Kind::Float, None),
    ("radius", Kind::Float, None),
];

const SEARCH: &[Spec] = &[
    ("case", Kind::Choice(CASES), Some("bil")),
    ("families", Kind::ChoiceList(FAMILIES), Some("single_pair,random_gaussian")),
    ("budget", Kind::Int, Some("16")),
    ("ascent_steps", Kind::Int, Some("2")),
    ("prune", Kind::Bool, Some("true")),
    ("mode", Kind::Choice(MODES), Some("verify")),
];

const TIME_LOC: &[Spec] = &[("widths", Kind::FloatList, Some("0.5,0.25,0.125")), ("time_samples", Kind::Int, Some("256"))];

fn schema(cmd: Command) -> Vec<Spec> {
    let mut v: Vec<Spec> = match cmd {
        Command::Count => vec![
            ("r_max", Kind::Int, Some("10000")),
            ("delta_grid", Kind::Int, Some("8")),
            ("max_exponent", Kind::Float, Some("0.3")),
        ],
        Command::Resonance => vec![
            ("alpha", Kind::Float, Some("2")),
            ("kmax", Kind::Int, Some("50")),
            ("m", Kind::Int, Some("4")),
            ("taus", Kind::Int, Some("10")),
            ("tau_scale", Kind::Float, Some("10000")),
            ("max_deviation", Kind::Float, Some("1e-10")),
        ],
        Command::Norms => vec![
            ("alpha", Kind::Float, Some("2")),
            ("s", Kind::Float, Some("0.5")),
            ("eps", Kind::Float, Some("0")),
            ("b", Kind::Float, Some("0.55")),
            ("beta", Kind::Float, Some("0")),
            ("k_weight", Kind::Choice(K_WEIGHTS), Some("homogeneous")),
            ("K", Kind::Int, Some("4")),
            ("M", Kind::Int, Some("4")),
            ("J", Kind::Int, Some("4")),
            ("t_window", Kind::Float, Some("6.283185307179586")),
            ("input", Kind::Text, Some("")),
        ],
        Command::Probe | Command::Validate => {
            let mut v = SEARCH.to_vec();
            v.extend([
                ("K", Kind::Int, Some("4")),
                ("M", Kind::Int, Some("4")),
                ("J", Kind::Int, Some("4")),
                ("t_window", Kind::Float, Some("6.283185307179586")),
            ]);
            v.extend_from_slice(TIME_LOC);
            v
        }
        Command::Sweep => {
            let mut v = SEARCH.to_vec();
            v.extend([
                ("sizes", Kind::IntList, Some("4,8,16")),
                ("max_slope", Kind::Float, Some("0.15")),
                ("k_max", Kind::Int, Some("20")),
                ("radii", Kind::FloatList, Some("4,16,32,64")),
            ]);
            v
        }
        Command::Solve => vec![
            ("alpha", Kind::Float, Some("2")),
            ("K", Kind::Int, Some("16")),
            ("M", Kind::Int, Some("16")),
            ("dt", Kind::Float, Some("0.001")),
            ("t_end", Kind::Float, Some("1")),
            ("scheme", Kind::Choice(SCHEMES), Some("integrating_factor_rk4")),
            ("dealias", Kind::Float, Some("0.6666666666666666")),
            ("data", Kind::Choice(DATA), Some("two_cosines")),
            ("amplitude", Kind::Float, Some("0.1")),
            ("input", Kind::Text, Some("")),
            ("nonlinear", Kind::Bool, Some("true")),
            ("save_every", Kind::Int, Some("0")),
            ("max_drift", Kind::Float, Some("1e-6")),
        ],
        Command::Picard => vec![
            ("alpha", Kind::Float, Some("2")),
            ("K", Kind::Int, Some("16")),
            ("M", Kind::Int, Some("16")),
            ("norm", Kind::Float, Some("0.05")),
            ("t_final", Kind::Float, Some("0.05")),
            ("depth", Kind::Int, Some("6")),
            ("nodes", Kind::Int, Some("64")),
            ("proxy_s", Kind::Float, Some("0")),
            ("proxy_eps", Kind::Float, Some("0")),
            ("proxy_b", Kind::Float, Some("0.55")),
            ("dt", Kind::Float, Some("0.001")),
            ("max_mismatch", Kind::Float, Some("1e-5")),
        ],
    };
    if matches!(cmd, Command::Probe | Command::Sweep | Command::Validate) {
        v.extend_from_slice(PROBE_PARAMS);
    }
    v
}

fn normalize(key: &str, kind: Kind, raw: &str) -> Result<String, UsageError> {
    let bad = |what: &str| usage(format!("key '{key}': expected {what}, got '{raw}'"));
    let raw = raw.trim();
    let float = |s: &str| -> Result<String, UsageError> {
        let x: f64 = s.trim().parse().map_err(|_| bad("a number"))?;
        if !x.is_finite() {
            return Err(bad("a finite number"));
        }
        Ok(format!("{x:?}"))
    };
    let int = |s: &str| -> Result<String, UsageError> {
        let x: u64 = s.trim().parse().map_err(|_| bad("a nonnegative integer"))?;
        Ok(x.to_string())
    };
    let choice = |s: &str, opts: &[&str]| -> Result<String, UsageError> {
        let s = s.trim();
        if opts.contains(&s) {
            Ok(s.to_string())
        } else {
            Err(bad(&format!("one of {}", opts.join("|"))))
        }
    };
    let list = |f: &dyn Fn(&str) -> Result<String, UsageError>| -> Result<String, UsageError> {
        let parts: Vec<String> = raw.split(',').filter(|s| !s.trim().is_empty()).map(f).collect::<Result<_, _>>()?;
        if parts.is_empty() {
            return Err(bad("a nonempty comma-separated list"));
        }
        Ok(parts.join(","))
    };
    match kind {
        Kind::Int => int(raw),
        Kind::Float => float(raw),
        Kind::Bool => match raw {
            "true" | "1" | "yes" => Ok("true".into()),
            "false" | "0" | "no" => Ok("false".into()),
            _ => Err(bad("true|false")),
        },
        Kind::Choice(opts) => choice(raw, opts),
        Kind::IntList => list(&int),
        Kind::FloatList => list(&float),
        Kind::ChoiceList(opts) => list(&|s| choice(s, opts)),
        Kind::Text => Ok(raw.to_string()),
    }
}

// ---------------------------------------------------------------------------
// Configs

/// A fully resolved experiment: every schema key has a normalized value.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub command: Command,
    pub seed: u64,
    /// Output directory; results go to stdout when absent.
    pub output: Option<PathBuf>,
    pub params: BTreeMap<String, String>,
}

/// Raw contents of a config file before resolution.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigText {
    pub command: Option<Command>,
    pub seed: Option<String>,
    pub output: Option<String>,
    /// Section name to key-value pairs.
    pub sections: BTreeMap<String, Vec<(String, String)>>,
}

pub fn parse_text(text: &str) -> Result<ConfigText, UsageError> {
    let mut out = ConfigText::default();
    let mut section: Option<String> = None;
    for (no, line) in text.lines().enumerate() {
        let no = no + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| usage(format!("line {no}: unterminated section header")))?
                .trim();
            let cmd: Command = name.parse().map_err(|_| usage(format!("line {no}: unknown section '[{name}]'")))?;
            section = Some(cmd.as_str().to_string());
            out.sections.entry(name.to_string()).or_default();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("line {no}: expected 'key = value', got '{line}'")))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(usage(format!("line {no}: empty key")));
        }
        match &section {
            Some(s) => out.sections.get_mut(s).unwrap().push((k.to_string(), v.to_string())),
            None => match k {
                "command" => out.command = Some(v.parse()?),
                "seed" => out.seed = Some(v.to_string()),
                "output" => out.output = Some(v.to_string()),
                _ => return Err(usage(format!("line {no}: unknown top-level key '{k}'"))),
            },
        }
    }
    Ok(out)
}

/// `--r-max` and `--r_max` both name `r_max`.
pub fn flag_key(flag: &str) -> String {
    flag.trim_start_matches('-').replace('-', "_")
}

/// Merges file contents and flag overrides into a resolved config for `cmd`.
/// Flags win over the file; unknown keys and sections for other commands are
/// rejected.
pub fn resolve(cmd: Command, file: &ConfigText, overrides: &[(String, String)]) -> Result<ExperimentConfig, UsageError> {
    let spec = schema(cmd);
    let mut seed = file.seed.clone();
    let mut output = file.output.clone();
    let mut given: BTreeMap<String, String> = BTreeMap::new();
    for (name, pairs) in &file.sections {
        if name != cmd.as_str() {
            return Err(usage(format!("section '[{name}]' does not belong to command '{}'", cmd.as_str())));
        }
        for (k, v) in pairs {
            given.insert(k.clone(), v.clone());
        }
    }
    for (k, v) in overrides {
        match k.as_str() {
            "seed" => seed = Some(v.clone()),
            "output" => output = Some(v.clone()),
            _ => {
                given.insert(k.clone(), v.clone());
            }
        }
    }
    let mut params = BTreeMap::new();
    for (k, v) in &given {
        let (_, kind, _) = spec
            .iter()
            .find(|(name, _, _)| name == k)
            .ok_or_else(|| usage(format!("unknown key '{k}' for command '{}'", cmd.as_str())))?;
        params.insert(k.clone(), normalize(k, *kind, v)?);
    }
    for (k, kind, default) in &spec {
        if params.contains_key(*k) {
            continue;
        }
        if let Some(d) = default {
            params.insert(k.to_string(), normalize(k, *kind, d)?);
        }
    }
    if matches!(cmd, Command::Probe | Command::Sweep | Command::Validate) {
        let case: CaseName = params["case"].parse().map_err(|e| usage(format!("key 'case': {e}")))?;
        let p = ProbeCase::preset(case).params;
        let preset = [
            ("alpha", p.alpha),
            ("s", p.s),
            ("s1", p.s1),
            ("s2", p.s2),
            ("eps", p.eps),
            ("eps0", p.eps0),
            ("eps1", p.eps1),
            ("eps2", p.eps2),
            ("b", p.b),
            ("b_tilde", p.b_tilde),
            ("b_prime", p.b_prime),
            ("beta", p.beta),
            ("p_tau", p.p_tau),
            ("t_cut", p.t_cut),
            ("radius", p.radius),
        ];
        for (k, x) in preset {
            params.entry(k.to_string()).or_insert_with(|| format!("{x:?}"));
        }
    }
    let seed = match seed {
        Some(s) => s.trim().parse().map_err(|_| usage(format!("key 'seed': expected an integer, got '{s}'")))?,
        None => 0,
    };
    let output = output.filter(|s| !s.is_empty()).map(PathBuf::from);
    Ok(ExperimentConfig { command: cmd, seed, output, params })
}

impl ExperimentConfig {
    /// Canonical text: the hashed form, also written next to the outputs so a
    /// run can be repeated with `--config`. The output path is not part of it.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        writeln!(s, "command = {}", self.command.as_str()).unwrap();
        writeln!(s, "seed = {}", self.seed).unwrap();
        writeln!(s, "\n[{}]", self.command.as_str()).unwrap();
        for (k, v) in &self.params {
            writeln!(s, "{k} = {v}").unwrap();
        }
        s
    }

    /// Hex SHA-256 of [`canonical`](Self::canonical).
    pub fn hash(&self) -> String {
        let d = Sha256::digest(self.canonical().as_bytes());
        d.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn raw(&self, key: &str) -> Result<&str, UsageError> {
        self.params
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| usage(format!("missing key '{key}'")))
    }

    pub fn f64(&self, key: &str) -> Result<f64, UsageError> {
        self.raw(key)?.parse().map_err(|_| usage(format!("key '{key}': not a number")))
    }

    pub fn usize(&self, key: &str) -> Result<usize, UsageError> {
        self.raw(key)?.parse().map_err(|_| usage(format!("key '{key}': not an integer")))
    }

    pub fn u64(&self, key: &str) -> Result<u64, UsageError> {
        self.raw(key)?.parse().map_err(|_| usage(format!("key '{key}': not an integer")))
    }

    pub fn bool(&self, key: &str) -> Result<bool, UsageError> {
        Ok(self.raw(key)? == "true")
    }

    pub fn str(&self, key: &str) -> Result<&str, UsageError> {
        self.raw(key)
    }

    pub fn usize_list(&self, key: &str) -> Result<Vec<usize>, UsageError> {
        self.raw(key)?
            .split(',')
            .map(|s| s.parse().map_err(|_| usage(format!("key '{key}': not an integer list"))))
            .collect()
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>, UsageError> {
        self.raw(key)?
            .split(',')
            .map(|s| s.parse().map_err(|_| usage(format!("key '{key}': not a number list"))))
            .collect()
    }

    pub fn families(&self) -> Result<Vec<Family>, UsageError> {
        self.raw("families")?
            .split(',')
            .map(|s| s.parse().map_err(|e| usage(format!("key 'families': {e}"))))
            .collect()
    }

    pub fn scheme(&self) -> Result<Scheme, UsageError> {
        self.raw("scheme")?.parse().map_err(|e| usage(format!("key 'scheme': {e}")))
    }

    /// The probe case with every parameter read from the config.
    pub fn probe_case(&self) -> Result<ProbeCase, UsageError> {
        let name: CaseName = self.raw("case")?.parse().map_err(|e| usage(format!("key 'case': {e}")))?;
        let mut c = ProbeCase::preset(name);
        let p = &mut c.params;
        p.alpha = self.f64("alpha")?;
        p.s = self.f64("s")?;
        p.s1 = self.f64("s1")?;
        p.s2 = self.f64("s2")?;
        p.eps = self.f64("eps")?;
        p.eps0 = self.f64("eps0")?;
        p.eps1 = self.f64("eps1")?;
        p.eps2 = self.f64("eps2")?;
        p.b = self.f64("b")?;
        p.b_tilde = self.f64("b_tilde")?;
        p.b_prime = self.f64("b_prime")?;
        p.beta = self.f64("beta")?;
        p.p_tau = self.f64("p_tau")?;
        p.t_cut = self.f64("t_cut")?;
        p.radius = self.f64("radius")?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_and_flags_merge() {
        let t = parse_text("command = count # trailing\nseed = 3\n\n[count]\nr_max = 1000\n").unwrap();
        assert_eq!(t.command, Some(Command::Count));
        let c = resolve(Command::Count, &t, &[("delta_grid".into(), "4".into())]).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.params["r_max"], "1000");
        assert_eq!(c.params["delta_grid"], "4");
        assert_eq!(c.params["max_exponent"], "0.3");
    }

    #[test]
    fn unknown_keys_are_named() {
        let t = parse_text("[count]\nradius = 3\n").unwrap();
        let e = resolve(Command::Count, &t, &[]).unwrap_err();
        assert!(e.0.contains("'radius'"), "{e}");
        let e = resolve(Command::Count, &ConfigText::default(), &[("r_max".into(), "x".into())]).unwrap_err();
        assert!(e.0.contains("'r_max'"), "{e}");
        assert!(parse_text("[bogus]\n").unwrap_err().0.contains("bogus"));
        assert!(parse_text("color = red\n").unwrap_err().0.contains("color"));
        let t = parse_text("[solve]\ndt = 1\n").unwrap();
        assert!(resolve(Command::Count, &t, &[]).unwrap_err().0.contains("[solve]"));
    }

    #[test]
    fn hash_depends_on_values_not_spelling() {
        let a = resolve(Command::Solve, &ConfigText::default(), &[("dt".into(), "1e-3".into())]).unwrap();
        let b = resolve(Command::Solve, &ConfigText::default(), &[("dt".into(), "0.001".into())]).unwrap();
        let c = resolve(Command::Solve, &ConfigText::default(), &[("dt".into(), "0.002".into())]).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn canonical_text_round_trips() {
        let a = resolve(Command::Sweep, &ConfigText::default(), &[("case".into(), "meps".into())]).unwrap();
        let t = parse_text(&a.canonical()).unwrap();
        let b = resolve(t.command.unwrap(), &t, &[]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn probe_parameters_follow_the_preset() {
        let c = resolve(Command::Probe, &ConfigText::default(), &[("case".into(), "nonlin2".into())]).unwrap();
        assert_eq!(c.params["alpha"], "3.5");
        let c = resolve(Command::Probe, &ConfigText::default(), &[("b".into(), "0.4".into())]).unwrap();
        assert_eq!(c.probe_case().unwrap().params.b, 0.4);
    }

    #[test]
    fn flag_spelling() {
        assert_eq!(flag_key("--r-max"), "r_max");
        assert_eq!(flag_key("--K"), "K");
    }
}
