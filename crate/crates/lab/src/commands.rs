//! One function per command. Each returns an [`Outcome`]: a CSV table, a JSON
//! summary, optional field checkpoints and the list of acceptance violations.

use std::f64::consts::PI;

use kplab_core::counting::{count_annulus, delta_grid, fit_exponent, Annulus};
use kplab_core::field::{project_mean_zero, FrequencyField};
use kplab_core::norms::{mode_weights, xsb_norm, y_norm, z_norm};
use kplab_core::phase::{identity_sweep, resonance_decomposition};
use kplab_core::probe::{
    extremizer_search, kernel_sum_sweep, probe_time_localization, restart_rng, scaling_sweep, CaseName, KernelSweepRow,
    Mode, ProbeReport, SearchOptions,
};
use kplab_core::solver::{duhamel_picard, l2_drift, preflight, solve_cauchy, ProxyNorm, SolverConfig};
use kplab_core::{
    Complex64, DispersionParams, FreqPoint, GridSpec, KWeight, NormParams, SpaceTimeSpectrum, SpatialGrid, SpatialSpectrum,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::{Command, ExperimentConfig, UsageError};
use crate::format::{self, Field, FormatError};
use crate::par::par_map;

/// Why a run could not produce results.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Usage(#[from] UsageError),
    #[error(transparent)]
    Core(#[from] kplab_core::Error),
    #[error(transparent)]
    Format(#[from] FormatError),
}

impl RunError {
    /// 1 for bad input, 2 for runs that fail numerically (blow-up, divergence).
    pub fn exit_code(&self) -> i32 {
        use kplab_core::Error as E;
        match self {
            RunError::Core(E::NonFinite { .. } | E::Divergence { .. }) => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub table: Table,
    pub summary: Value,
    /// Named checkpoints, written as `<command>_<name>.bin`.
    pub fields: Vec<(String, Field)>,
    pub violations: Vec<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.violations.is_empty() {
            0
        } else {
            2
        }
    }
}

/// Shortest round-trip text of a float.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn disp(alpha: f64) -> Result<DispersionParams, RunError> {
    Ok(DispersionParams::new(alpha)?)
}

pub fn run(cfg: &ExperimentConfig, threads: usize) -> Result<Outcome, RunError> {
    match cfg.command {
        Command::Count => count(cfg, threads),
        Command::Resonance => resonance(cfg, threads),
        Command::Norms => norms(cfg),
        Command::Probe => probe(cfg),
        Command::Sweep => sweep(cfg, threads),
        Command::Solve => solve(cfg),
        Command::Picard => picard(cfg),
        Command::Validate => validate(cfg),
    }
}

// ---------------------------------------------------------------------------

fn count(cfg: &ExperimentConfig, threads: usize) -> Result<Outcome, RunError> {
    let r_max = cfg.u64("r_max")?;
    let steps = cfg.usize("delta_grid")?;
    if r_max < 100 {
        return Err(UsageError("key 'r_max': must be at least 100".into()).into());
    }
    if steps == 0 || steps > 1024 {
        return Err(UsageError("key 'delta_grid': must be in 1..=1024".into()).into());
    }
    let deltas = delta_grid(steps as u32);
    let radii: Vec<u64> = std::iter::successors(Some(1u64), |r| Some(r * 2)).take_while(|r| *r <= r_max).collect();
    let counts = par_map(&radii, threads, |&r| {
        deltas.iter().map(|d| count_annulus(&Annulus::new(r, *d))).collect::<Vec<u64>>()
    });
    let mut t = Table::new(&["r", "delta_x", "delta_y", "count"]);
    let mut maxima = Vec::new();
    for (r, cs) in radii.iter().zip(&counts) {
        for (d, c) in deltas.iter().zip(cs) {
            t.rows.push(vec![r.to_string(), num(d[0]), num(d[1]), c.to_string()]);
        }
        maxima.push(cs.iter().copied().max().unwrap_or(0));
    }
    let x: Vec<f64> = radii.iter().map(|&r| r as f64).collect();
    let y: Vec<f64> = maxima.iter().map(|&c| c as f64).collect();
    let exponent = fit_exponent(&x, &y)?;
    let limit = cfg.f64("max_exponent")?;
    let mut violations = Vec::new();
    if exponent >= limit {
        violations.push(format!("growth exponent {exponent} >= {limit}"));
    }
    let summary = json!({
        "fit": { "radii": radii, "max_counts": maxima, "exponent": exponent },
        "centers": deltas.len(),
    });
    Ok(Outcome { table: t, summary, fields: Vec::new(), violations })
}

fn eta_text(e: [i64; 2]) -> String {
    format!("{};{}", e[0], e[1])
}

fn resonance(cfg: &ExperimentConfig, threads: usize) -> Result<Outcome, RunError> {
    let d = disp(cfg.f64("alpha")?)?;
    let kmax = cfg.u64("kmax")? as i64;
    let m = cfg.u64("m")? as i64;
    let n_tau = cfg.usize("taus")?.max(1);
    let scale = cfg.f64("tau_scale")?;
    if kmax < 1 {
        return Err(UsageError("key 'kmax': must be at least 1".into()).into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let taus: Vec<(f64, f64)> =
        (0..n_tau).map(|_| (rng.random_range(-scale..=scale), rng.random_range(-scale..=scale))).collect();
    let sweep = identity_sweep(kmax, m, &d, &taus);

    // One sampled (η₁, η₂) per (k₁, k₂), drawn from a stream owned by k₁.
    let k1s: Vec<i64> = (-kmax..=kmax).filter(|k| *k != 0).collect();
    let seed = cfg.seed;
    let blocks = par_map(&k1s, threads, |&k1| -> Result<Vec<Vec<String>>, kplab_core::Error> {
        let mut rng = restart_rng(seed, (k1 + kmax) as u64);
        let mut rows = Vec::new();
        for k2 in -kmax..=kmax {
            if k2 == 0 || k1 + k2 == 0 {
                continue;
            }
            let mut eta = || [rng.random_range(-m..=m), rng.random_range(-m..=m)];
            let (e1, e2) = (eta(), eta());
            let s = resonance_decomposition(FreqPoint::new(k1, e1), FreqPoint::new(k2, e2), &d)?;
            rows.push(vec![
                k1.to_string(),
                k2.to_string(),
                eta_text(e1),
                eta_text(e2),
                num(d.alpha),
                num(s.r_term),
                num(s.mixed_term),
            ]);
        }
        Ok(rows)
    });
    let mut t = Table::new(&["k1", "k2", "eta1", "eta2", "alpha", "r_term", "mixed_term"]);
    for b in blocks {
        t.rows.extend(b?);
    }
    let tol = cfg.f64("max_deviation")?;
    let mut violations = Vec::new();
    if !(sweep.max_relative_deviation < tol) {
        violations.push(format!("identity deviation {} >= {tol}", sweep.max_relative_deviation));
    }
    if sweep.cubic_violations > 0 {
        violations.push(format!("{} pairs with r != 3 k k1 k2", sweep.cubic_violations));
    }
    if sweep.sign_violations > 0 {
        violations.push(format!("{} pairs with r and the mixed term of opposite sign", sweep.sign_violations));
    }
    let summary = json!({ "identity": sweep, "tau_pairs": taus.len() });
    Ok(Outcome { table: t, summary, fields: Vec::new(), violations })
}

fn input_field(cfg: &ExperimentConfig) -> Result<Option<Field>, RunError> {
    let path = cfg.str("input")?;
    if path.is_empty() {
        return Ok(None);
    }
    Ok(Some(format::read_path(std::path::Path::new(path))?))
}

fn norms(cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    let d = disp(cfg.f64("alpha")?)?;
    let kw = match cfg.str("k_weight")? {
        "bracket" => KWeight::Bracket,
        _ => KWeight::Homogeneous,
    };
    let p = NormParams::new(cfg.f64("s")?, cfg.f64("eps")?, cfg.f64("b")?, cfg.f64("beta")?, d)?.with_k_weight(kw);
    let u = match input_field(cfg)? {
        Some(f) => f.into_space_time()?,
        None => {
            let g = GridSpec::new(cfg.usize("K")?, cfg.usize("M")?, cfg.usize("J")?, cfg.f64("t_window")?)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            SpaceTimeSpectrum::random_gaussian(g, &mut rng)
        }
    };
    let u = project_mean_zero(&u);
    let weights = mode_weights(&u, &p);
    let mut t = Table::new(&["k", "eta1", "eta2", "j", "tau", "sigma", "weight", "abs_coeff"]);
    for ((xi, j, c), w) in u.modes().zip(&weights) {
        if xi.k == 0 {
            continue;
        }
        let tau = u.grid.tau(j);
        t.rows.push(vec![
            xi.k.to_string(),
            xi.eta[0].to_string(),
            xi.eta[1].to_string(),
            j.to_string(),
            num(tau),
            num(tau - d.phi_unchecked(xi)),
            num(*w),
            num(c.norm()),
        ]);
    }
    let summary = json!({
        "grid": u.grid,
        "l2": u.l2_norm(),
        "x": xsb_norm(&u, &p)?,
        "y": y_norm(&u, &p)?,
        "z": z_norm(&u, &p)?,
    });
    Ok(Outcome { table: t, summary, fields: Vec::new(), violations: Vec::new() })
}

// ---------------------------------------------------------------------------
// Probes

const PROBE_HEADER: [&str; 10] = ["case", "N", "K", "M", "J", "lhs", "rhs", "ratio", "seed", "family"];
const KERNEL_HEADER: [&str; 5] = ["radius", "max_ratio", "max_omega_deviation", "evaluations", "argmax"];

fn probe_row(n: usize, r: &ProbeReport) -> Vec<String> {
    vec![
        r.case.to_string(),
        n.to_string(),
        r.grid.k_max.to_string(),
        r.grid.m_max.to_string(),
        r.grid.j_max.to_string(),
        num(r.lhs),
        num(r.rhs),
        opt(r.ratio),
        r.seed.to_string(),
        r.family.clone(),
    ]
}

fn mode(cfg: &ExperimentConfig) -> Result<Mode, RunError> {
    Ok(if cfg.str("mode")? == "falsify" { Mode::Falsify } else { Mode::Verify })
}

fn search_options(cfg: &ExperimentConfig) -> Result<SearchOptions, RunError> {
    Ok(SearchOptions {
        budget: cfg.usize("budget")?,
        seed: cfg.seed,
        ascent_steps: cfg.usize("ascent_steps")?,
        prune: cfg.bool("prune")?,
    })
}

fn kernel_rows(rows: &[KernelSweepRow]) -> Table {
    let mut t = Table::new(&KERNEL_HEADER);
    for r in rows {
        t.rows.push(vec![
            num(r.radius),
            num(r.max_ratio),
            num(r.max_omega_deviation),
            r.evaluations.to_string(),
            r.argmax.clone(),
        ]);
    }
    t
}

fn kernel_violations(rows: &[KernelSweepRow], stable: bool) -> Vec<String> {
    let mut v = Vec::new();
    for r in rows {
        if !(r.max_omega_deviation < 1e-10) {
            v.push(format!("radius {}: substitution deviation {}", r.radius, r.max_omega_deviation));
        }
        if !r.max_ratio.is_finite() {
            v.push(format!("radius {}: non-finite ratio", r.radius));
        }
    }
    if stable {
        if let [.., a, b] = rows {
            let change = (b.max_ratio - a.max_ratio).abs() / a.max_ratio;
            if !(change < 0.1) {
                v.push(format!("ratio changed by {change} from radius {} to {}", a.radius, b.radius));
            }
        }
    }
    v
}

fn probe(cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    let case = cfg.probe_case()?;
    let m = mode(cfg)?;
    case.check(m)?;
    let d = case.disp()?;
    let grid = GridSpec::new(cfg.usize("K")?, cfg.usize("M")?, cfg.usize("J")?, cfg.f64("t_window")?)?;
    let n = grid.k_max.max(grid.m_max).max(grid.j_max);
    let base = json!({ "case": case, "hypotheses": case.hypotheses() });
    match case.name {
        CaseName::KernelSum => {
            let rows = kernel_sum_sweep(grid.k_max as i64, &[case.params.radius], case.params.b, case.params.eps, &d)?;
            let violations = kernel_violations(&rows, false);
            let summary = json!({ "preset": base, "rows": rows });
            Ok(Outcome { table: kernel_rows(&rows), summary, fields: Vec::new(), violations })
        }
        CaseName::TimeLoc => {
            let g = GridSpec::new(1, 1, cfg.usize("time_samples")?, 2.0 * PI)?;
            let u0 = SpatialSpectrum::from_fn(g.spatial(), |xi| {
                if xi == FreqPoint::new(1, [0, 0]) {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            });
            let widths = cfg.f64_list("widths")?;
            let r = probe_time_localization(&u0, &widths, case.params.b, case.params.b_tilde, g, &d, m)?;
            let mut t = Table::new(&["t", "norm_b", "norm_b_tilde", "ratio"]);
            for row in &r.rows {
                t.rows.push(vec![num(row.t), num(row.norm_b), num(row.norm_b_tilde), num(row.ratio)]);
            }
            let summary = json!({ "preset": base, "slope": r.slope, "flag": r.flag });
            Ok(Outcome { table: t, summary, fields: Vec::new(), violations: Vec::new() })
        }
        _ => {
            let opts = search_options(cfg)?;
            let mut t = Table::new(&PROBE_HEADER);
            let mut per_family = Vec::new();
            let mut best: Option<ProbeReport> = None;
            for fam in cfg.families()? {
                let r = extremizer_search(&case, fam, grid, &opts, m)?;
                t.rows.push(probe_row(n, &r.best));
                per_family.push(json!({
                    "family": fam.as_str(),
                    "ratio": r.best.ratio,
                    "descriptor": r.descriptor,
                    "evaluated": r.evaluated,
                    "pruned": r.pruned,
                    "flag": r.best.flag,
                }));
                if best.as_ref().is_none_or(|b| r.best.ratio_or_zero() > b.ratio_or_zero()) {
                    best = Some(r.best);
                }
            }
            let summary = json!({ "preset": base, "grid": grid, "families": per_family, "best": best });
            Ok(Outcome { table: t, summary, fields: Vec::new(), violations: Vec::new() })
        }
    }
}

fn sweep(cfg: &ExperimentConfig, threads: usize) -> Result<Outcome, RunError> {
    let case = cfg.probe_case()?;
    let m = mode(cfg)?;
    case.check(m)?;
    let d = case.disp()?;
    let base = json!({ "case": case, "hypotheses": case.hypotheses(), "mode": cfg.str("mode")? });
    match case.name {
        CaseName::KernelSum => {
            let k_max = cfg.u64("k_max")? as i64;
            let radii = cfg.f64_list("radii")?;
            let (b, eps) = (case.params.b, case.params.eps);
            let parts = par_map(&radii, threads, |&r| kernel_sum_sweep(k_max, &[r], b, eps, &d));
            let mut rows = Vec::new();
            for p in parts {
                rows.extend(p?);
            }
            let violations = if m == Mode::Verify { kernel_violations(&rows, true) } else { Vec::new() };
            let summary = json!({ "preset": base, "k_max": k_max, "rows": rows });
            Ok(Outcome { table: kernel_rows(&rows), summary, fields: Vec::new(), violations })
        }
        CaseName::TimeLoc => Err(UsageError("case 'time_loc' runs under 'probe' (its sweep is over widths)".into()).into()),
        _ => {
            let opts = search_options(cfg)?;
            let sizes = cfg.usize_list("sizes")?;
            let rep = scaling_sweep(&case, &cfg.families()?, &sizes, &opts, m)?;
            let mut t = Table::new(&PROBE_HEADER);
            for row in &rep.rows {
                t.rows.push(probe_row(row.n, &row.result.best));
            }
            let limit = cfg.f64("max_slope")?;
            let mut violations = Vec::new();
            // Falsification runs are report-only.
            if m == Mode::Verify {
                match rep.slope {
                    Some(s) if s < limit => {}
                    Some(s) => violations.push(format!("fit slope {s} >= {limit}")),
                    None => violations.push("fit slope undefined".into()),
                }
            }
            let rows: Vec<Value> = rep
                .rows
                .iter()
                .map(|r| json!({ "N": r.n, "ratio": r.result.best.ratio, "family": r.result.best.family, "descriptor": r.result.descriptor, "evaluated": r.result.evaluated, "pruned": r.result.pruned }))
                .collect();
            let summary = json!({ "preset": base, "families": rep.families, "slope": rep.slope, "rows": rows });
            Ok(Outcome { table: t, summary, fields: Vec::new(), violations })
        }
    }
}

// ---------------------------------------------------------------------------
// Solver

/// `Σ a (e^{iξ·x} + e^{-iξ·x})/2` over the given modes.
pub fn cosines(grid: SpatialGrid, modes: &[(FreqPoint, f64)]) -> Result<SpatialSpectrum, RunError> {
    let mut u = SpatialSpectrum::zeros(grid);
    for (xi, a) in modes {
        u.set(*xi, u.get(*xi) + Complex64::new(a / 2.0, 0.0))?;
        u.set(-*xi, u.get(-*xi) + Complex64::new(a / 2.0, 0.0))?;
    }
    Ok(u)
}

fn solver_config(cfg: &ExperimentConfig) -> Result<SolverConfig, RunError> {
    let g = SpatialGrid::new(cfg.usize("K")?, cfg.usize("M")?)?;
    let mut c = SolverConfig::new(disp(cfg.f64("alpha")?)?, g, cfg.f64("dt")?, cfg.f64("t_end")?)?;
    c.scheme = cfg.scheme()?;
    c.dealias = cfg.f64("dealias")?;
    c.nonlinear = cfg.bool("nonlinear")?;
    c.save_every = cfg.usize("save_every")?;
    c.validate()?;
    Ok(c)
}

fn initial_data(cfg: &ExperimentConfig, g: SpatialGrid) -> Result<SpatialSpectrum, RunError> {
    if let Some(f) = input_field(cfg)? {
        let u = f.into_spatial()?;
        if u.grid != g {
            return Err(UsageError(format!(
                "key 'input': field grid ({}, {}) differs from (K, M) = ({}, {})",
                u.grid.k_max, u.grid.m_max, g.k_max, g.m_max
            ))
            .into());
        }
        return Ok(u);
    }
    let a = cfg.f64("amplitude")?;
    match cfg.str("data")? {
        "single_cosine" => cosines(g, &[(FreqPoint::new(1, [0, 0]), a)]),
        "random" => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let u = project_mean_zero(&SpatialSpectrum::random_gaussian(g, &mut rng, true));
            let n = u.l2_norm();
            Ok(u.scale(Complex64::new(a / n, 0.0)))
        }
        _ => cosines(g, &[(FreqPoint::new(1, [0, 0]), a), (FreqPoint::new(1, [1, 0]), a)]),
    }
}

fn solve(cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    let c = solver_config(cfg)?;
    let u0 = initial_data(cfg, c.grid)?;
    let bound = preflight(&u0, &c)?;
    let tr = solve_cauchy(&u0, &c)?;
    let mut t = Table::new(&["t", "l2", "drift", "max_mode"]);
    for d in &tr.diagnostics {
        t.rows.push(vec![num(d.t), num(d.l2), num(d.drift), num(d.max_mode)]);
    }
    let drift = l2_drift(&tr);
    let limit = cfg.f64("max_drift")?;
    let mut violations = Vec::new();
    if !(drift < limit) {
        violations.push(format!("relative L2 drift {drift} >= {limit}"));
    }
    let fields = tr
        .times
        .iter()
        .zip(&tr.states)
        .enumerate()
        .map(|(i, (_, s))| (format!("state_{i:05}"), Field::Spatial(s.clone())))
        .collect();
    let last = tr.diagnostics.last();
    let summary = json!({
        "stability_bound": bound,
        "steps": tr.diagnostics.len(),
        "max_drift": drift,
        "max_conj_error": tr.diagnostics.iter().map(|d| d.conj_error).fold(0.0, f64::max),
        "energy": [tr.diagnostics.first().map(|d| d.energy), last.map(|d| d.energy)],
        "saved_times": tr.times,
    });
    Ok(Outcome { table: t, summary, fields, violations })
}

fn picard(cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    let g = SpatialGrid::new(cfg.usize("K")?, cfg.usize("M")?)?;
    let t_final = cfg.f64("t_final")?;
    let mut c = SolverConfig::new(disp(cfg.f64("alpha")?)?, g, cfg.f64("dt")?, t_final)?;
    c.picard_depth = cfg.usize("depth")?;
    c.picard_nodes = cfg.usize("nodes")?;
    c.proxy = ProxyNorm { s: cfg.f64("proxy_s")?, eps: cfg.f64("proxy_eps")?, b: cfg.f64("proxy_b")? };
    c.validate()?;
    // A single cosine has ‖u₀‖ = a/√2.
    let u0 = cosines(g, &[(FreqPoint::new(1, [1, 0]), cfg.f64("norm")? * 2f64.sqrt())])?;
    let rep = duhamel_picard(&u0, &c, c.picard_depth, t_final)?;
    let stepped = solve_cauchy(&u0, &c)?;
    let last = rep.finals.last().expect("depth >= 1");
    let mismatch = last.sub(stepped.final_state())?.l2_norm();
    let mut t = Table::new(&["n", "diff_c0l2", "diff_x", "ratio_c0l2", "ratio_x"]);
    for (n, (a, b)) in rep.diffs_c0l2.iter().zip(&rep.diffs_x).enumerate() {
        let (ra, rb) = if n == 0 { (None, None) } else { (rep.ratios_c0l2[n - 1], rep.ratios_x[n - 1]) };
        t.rows.push(vec![n.to_string(), num(*a), num(*b), opt(ra), opt(rb)]);
    }
    let mut violations = Vec::new();
    if !rep.contracting() {
        violations.push("ratios are not strictly decreasing below 1".into());
    }
    let tol = cfg.f64("max_mismatch")?;
    if !(mismatch < tol) {
        violations.push(format!("final iterate differs from the time stepper by {mismatch} >= {tol}"));
    }
    let summary = json!({
        "t_final": rep.t_final,
        "iterates": rep.finals.len(),
        "ratios_c0l2": rep.ratios_c0l2,
        "ratios_x": rep.ratios_x,
        "contracting": rep.contracting(),
        "stepper_mismatch": mismatch,
    });
    Ok(Outcome { table: t, summary, fields: vec![("final".into(), Field::Spatial(last.clone()))], violations })
}

// ---------------------------------------------------------------------------

/// Hypothesis diagnostics for a probe-style config; empty when all hold.
pub fn diagnostics(cfg: &ExperimentConfig) -> Result<Vec<String>, RunError> {
    Ok(cfg.probe_case()?.hypotheses())
}

fn validate(cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    let diags = diagnostics(cfg)?;
    let mut t = Table::new(&["case", "diagnostic"]);
    for d in &diags {
        t.rows.push(vec![cfg.str("case")?.to_string(), d.clone()]);
    }
    let summary = json!({ "case": cfg.str("case")?, "diagnostics": diags });
    Ok(Outcome { table: t, summary, fields: Vec::new(), violations: diags })
}
