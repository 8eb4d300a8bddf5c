//! Declarative scenario configs (TOML) and the pipeline runner behind the
//! command-line front end.

use crate::bubbles;
use crate::constants;
use crate::error::{Error, Result};
use crate::fields::{self, ExponentField, FieldSpec, HypothesisConfig};
use crate::grid::{GridFunction, GridSpec};
use crate::solver::{self, ProblemData, SobolevEstimates};
use crate::spaces;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridConfig {
    pub dim: usize,
    pub half_width: f64,
    pub points_per_axis: usize,
    #[serde(default)]
    pub center: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldsConfig {
    pub p: FieldSpec,
    pub q: FieldSpec,
    #[serde(default)]
    pub k: Option<FieldSpec>,
    #[serde(default)]
    pub big_k: Option<FieldSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Stage {
    /// K(N, r)^{-1} by radial quadrature on the extremal bubble.
    KConstant { n: usize, r: f64 },
    /// Radial-quadrature value vs an independent Rayleigh minimization.
    KConstantCrosscheck {
        n: usize,
        r: f64,
        points_per_axis: usize,
        half_width: f64,
        iters: usize,
    },
    /// H1-H7 numeric surrogates for the configured fields.
    Hypotheses {},
    /// Localized best constant over shrinking balls at x0.
    LocalizedConstant {
        x0: Vec<f64>,
        eps_schedule: Vec<f64>,
        points_per_axis: usize,
        iters: usize,
    },
    /// Best constant at infinity over growing exterior annuli.
    ExteriorConstant {
        r_schedule: Vec<f64>,
        outer_factor: f64,
        points_per_axis: usize,
        iters: usize,
    },
    /// Appendix-style expansion of int f |u_eps|^{q(x)}.
    ExpansionQ {
        p_inf: f64,
        nu: Vec<f64>,
        eps_exponents: Vec<f64>,
        eta_margin: f64,
    },
    /// Expansion of int |grad u_eps|^{p(x)}.
    ExpansionGrad {
        p_inf: f64,
        nu: Vec<f64>,
        eps_exponents: Vec<f64>,
        eta_margin: f64,
    },
    /// Decay rate of int k |u_eps|^{p(x)}.
    ExpansionP {
        p_inf: f64,
        nu: Vec<f64>,
        eps_exponents: Vec<f64>,
        eta_margin: f64,
    },
    /// Fiber map J_eps(t) = F(t C u_eps) with its closed-form algebra.
    FiberMap {
        eps_exponent: f64,
        nu: Vec<f64>,
        eta_margin: f64,
        t_min: f64,
        t_max: f64,
        t_count: usize,
    },
    /// Numerical mountain pass on the configured box.
    MountainPass {
        m_path: usize,
        iters: usize,
        tol_res: f64,
    },
    /// Random Luxemburg norm-vs-modular sweep.
    NormSuite { count: usize },
    /// Concentration masses along a shrinking-bubble iterate family.
    Concentration {
        bubble_eps: Vec<f64>,
        delta_schedule: Vec<f64>,
        r_schedule: Vec<f64>,
    },
}

impl Stage {
    pub fn op_name(&self) -> &'static str {
        match self {
            Stage::KConstant { .. } => "k_constant",
            Stage::KConstantCrosscheck { .. } => "k_constant_crosscheck",
            Stage::Hypotheses {} => "hypotheses",
            Stage::LocalizedConstant { .. } => "localized_constant",
            Stage::ExteriorConstant { .. } => "exterior_constant",
            Stage::ExpansionQ { .. } => "expansion_q",
            Stage::ExpansionGrad { .. } => "expansion_grad",
            Stage::ExpansionP { .. } => "expansion_p",
            Stage::FiberMap { .. } => "fiber_map",
            Stage::MountainPass { .. } => "mountain_pass",
            Stage::NormSuite { .. } => "norm_suite",
            Stage::Concentration { .. } => "concentration",
        }
    }

    pub fn all_ops() -> &'static [&'static str] {
        &[
            "k_constant",
            "k_constant_crosscheck",
            "hypotheses",
            "localized_constant",
            "exterior_constant",
            "expansion_q",
            "expansion_grad",
            "expansion_p",
            "fiber_map",
            "mountain_pass",
            "norm_suite",
            "concentration",
        ]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub grid: GridConfig,
    pub fields: FieldsConfig,
    pub pipeline: Vec<Stage>,
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    /// Collect every semantic violation with a path into the document.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.name.is_empty() {
            errs.push("name: must be nonempty".into());
        }
        if !(1..=3).contains(&self.grid.dim) {
            errs.push(format!("grid.dim: must be 1, 2 or 3, got {}", self.grid.dim));
        }
        if self.grid.points_per_axis < 3 || self.grid.points_per_axis % 2 == 0 {
            errs.push(format!(
                "grid.points_per_axis: must be odd and >= 3, got {}",
                self.grid.points_per_axis
            ));
        }
        if !(self.grid.half_width > 0.0) {
            errs.push("grid.half_width: must be positive".into());
        }
        if let Some(c) = &self.grid.center {
            if c.len() != self.grid.dim {
                errs.push(format!(
                    "grid.center: expected {} coordinates, got {}",
                    self.grid.dim,
                    c.len()
                ));
            }
        }
        for (label, spec) in [
            ("fields.p", Some(&self.fields.p)),
            ("fields.q", Some(&self.fields.q)),
            ("fields.k", self.fields.k.as_ref()),
            ("fields.big_k", self.fields.big_k.as_ref()),
        ] {
            if let Some(spec) = spec {
                if let Err(e) = spec.build(self.grid.dim, self.grid.half_width) {
                    errs.push(format!("{label}: {e}"));
                }
            }
        }
        if self.pipeline.is_empty() {
            errs.push("pipeline: must contain at least one stage".into());
        }
        for (i, stage) in self.pipeline.iter().enumerate() {
            let at = |field: &str, msg: String| format!("pipeline[{i}].{field}: {msg}");
            match stage {
                Stage::KConstant { n, r } | Stage::KConstantCrosscheck { n, r, .. } => {
                    if !(1.0 < *r && *r < *n as f64) {
                        errs.push(at("r", format!("need 1 < r < n, got r = {r}, n = {n}")));
                    }
                }
                Stage::LocalizedConstant {
                    x0, eps_schedule, ..
                } => {
                    if x0.len() != self.grid.dim {
                        errs.push(at("x0", format!("expected {} coordinates", self.grid.dim)));
                    }
                    if eps_schedule.is_empty() {
                        errs.push(at("eps_schedule", "must be nonempty".into()));
                    }
                }
                Stage::ExteriorConstant {
                    r_schedule,
                    outer_factor,
                    ..
                } => {
                    if r_schedule.is_empty() {
                        errs.push(at("r_schedule", "must be nonempty".into()));
                    }
                    if !(*outer_factor > 1.0) {
                        errs.push(at("outer_factor", "must exceed 1".into()));
                    }
                }
                Stage::ExpansionQ {
                    eps_exponents, nu, ..
                }
                | Stage::ExpansionGrad {
                    eps_exponents, nu, ..
                }
                | Stage::ExpansionP {
                    eps_exponents, nu, ..
                } => {
                    if eps_exponents.is_empty() {
                        errs.push(at("eps_exponents", "must be nonempty".into()));
                    }
                    if nu.len() != self.grid.dim {
                        errs.push(at("nu", format!("expected {} coordinates", self.grid.dim)));
                    }
                }
                Stage::FiberMap {
                    t_min,
                    t_max,
                    t_count,
                    ..
                } => {
                    if !(*t_min > 0.0 && t_max > t_min) || *t_count < 3 {
                        errs.push(at("t_min", "need 0 < t_min < t_max, t_count >= 3".into()));
                    }
                }
                Stage::MountainPass { tol_res, .. } => {
                    if !(*tol_res > 0.0) {
                        errs.push(at("tol_res", "must be positive".into()));
                    }
                }
                Stage::NormSuite { count } => {
                    if *count == 0 {
                        errs.push(at("count", "must be positive".into()));
                    }
                }
                Stage::Concentration {
                    bubble_eps,
                    delta_schedule,
                    r_schedule,
                } => {
                    if bubble_eps.is_empty() {
                        errs.push(at("bubble_eps", "must be nonempty".into()));
                    }
                    if delta_schedule.is_empty() {
                        errs.push(at("delta_schedule", "must be nonempty".into()));
                    }
                    if r_schedule.is_empty() {
                        errs.push(at("r_schedule", "must be nonempty".into()));
                    }
                }
                Stage::Hypotheses {} => {}
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigValidation(errs))
        }
    }

    fn grid_spec(&self) -> Result<GridSpec> {
        let center = self
            .grid
            .center
            .clone()
            .unwrap_or_else(|| vec![0.0; self.grid.dim]);
        GridSpec::new_box(
            self.grid.dim,
            &center,
            self.grid.half_width,
            self.grid.points_per_axis,
        )
    }

    fn build_fields(&self) -> Result<(ExponentField, ExponentField, ExponentField, ExponentField)> {
        let hw = self.grid.half_width;
        let p = self.fields.p.build(self.grid.dim, hw)?;
        let q = self.fields.q.build(self.grid.dim, hw)?;
        let k = match &self.fields.k {
            Some(s) => s.build(self.grid.dim, hw)?,
            None => ExponentField::constant(self.grid.dim, 0.0),
        };
        let big_k = match &self.fields.big_k {
            Some(s) => s.build(self.grid.dim, hw)?,
            None => ExponentField::constant(self.grid.dim, 1.0),
        };
        Ok((p, q, k, big_k))
    }
}

pub const BUNDLED_SCENARIOS: &[(&str, &str)] = &[
    (
        "constant-exponent-sanity",
        include_str!("../scenarios/constant_exponent_sanity.toml"),
    ),
    (
        "radial-bump-hypotheses",
        include_str!("../scenarios/radial_bump_hypotheses.toml"),
    ),
    (
        "escaping-bubble-expansion",
        include_str!("../scenarios/escaping_bubble_expansion.toml"),
    ),
];

pub fn bundled_scenario(name: &str) -> Option<&'static str> {
    BUNDLED_SCENARIOS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub seed: u64,
    pub stages: Vec<String>,
    pub artifacts: Vec<PathBuf>,
}

fn write_json<T: Serialize>(dir: &Path, file: &str, value: &T) -> Result<PathBuf> {
    let path = dir.join(file);
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::ConfigParse(format!("serialization failed: {e}")))?;
    text.push('\n');
    fs::write(&path, text)?;
    Ok(path)
}

/// Execute a parsed scenario, writing JSON/CSV artifacts and a summary into
/// `out_dir`; deterministic given the seed.
pub fn run_scenario(config: &ScenarioConfig, out_dir: &Path, seed: u64) -> Result<RunSummary> {
    config.validate()?;
    fs::create_dir_all(out_dir)?;
    let (p, q, k, big_k) = config.build_fields()?;
    let grid = config.grid_spec()?;
    let dim = config.grid.dim;
    let mut summary = String::new();
    writeln!(summary, "scenario: {}", config.name).ok();
    writeln!(summary, "seed: {seed}").ok();
    let mut artifacts = Vec::new();
    let mut stage_lines = Vec::new();

    for (i, stage) in config.pipeline.iter().enumerate() {
        let tag = format!("{:02}_{}", i, stage.op_name());
        let line: String = match stage {
            Stage::KConstant { n, r } => {
                let kc = constants::k_constant(*n, *r)?;
                artifacts.push(write_json(out_dir, &format!("{tag}.json"), &kc)?);
                format!("K({n},{r})^-1 = {:.12e}", kc.inv_value)
            }
            Stage::KConstantCrosscheck {
                n,
                r,
                points_per_axis,
                half_width,
                iters,
            } => {
                let kc = constants::k_constant(*n, *r)?;
                let pf = ExponentField::constant(*n, *r);
                let qf = ExponentField::constant(*n, crate::fields::critical_exponent(
                    &pf,
                    &vec![0.0; *n],
                )?);
                let g = GridSpec::new_box(*n, &vec![0.0; *n], *half_width, *points_per_axis)?;
                let outcome = constants::rayleigh_best(&pf, &qf, &g, *iters, seed)?;
                #[derive(Serialize)]
                struct CrossCheck {
                    radial_inv_value: f64,
                    rayleigh_estimate: f64,
                    relative_gap: f64,
                }
                let rep = CrossCheck {
                    radial_inv_value: kc.inv_value,
                    rayleigh_estimate: outcome.constant_estimate,
                    relative_gap: (outcome.constant_estimate - kc.inv_value).abs() / kc.inv_value,
                };
                let gap = rep.relative_gap;
                artifacts.push(write_json(out_dir, &format!("{tag}.json"), &rep)?);
                let mut csv = String::new();
                writeln!(csv, "radial,rayleigh,relative_gap").ok();
                writeln!(
                    csv,
                    "{:.17e},{:.17e},{:.17e}",
                    kc.inv_value, outcome.constant_estimate, gap
                )
                .ok();
                let path = out_dir.join(format!("{tag}.csv"));
                fs::write(&path, csv)?;
                artifacts.push(path);
                format!("cross-check gap = {gap:.3e}")
            }
            Stage::Hypotheses {} => {
                let cfg = HypothesisConfig {
                    box_half_width: config.grid.half_width,
                    seed,
                    ..HypothesisConfig::default()
                };
                let rep = fields::validate_hypotheses(&p, &q, &k, &big_k, &cfg);
                artifacts.push(write_json(out_dir, &format!("{tag}.json"), &rep)?);
                format!(
                    "h1 {} h2 {}/{} h4 {}",
                    rep.h1.holds, rep.h2_p.holds, rep.h2_q.holds, rep.h4
                )
            }
            Stage::LocalizedConstant {
                x0,
                eps_schedule,
                points_per_axis,
                iters,
            } => {
                let seq =
                    constants::localized_constant(&p, &q, x0, eps_schedule, *points_per_axis, *iters)?;
                artifacts.push(write_json(out_dir, &format!("{tag}.json"), &seq)?);
                let path = out_dir.join(format!("{tag}.csv"));
                let mut f = fs::File::create(&path)?;
                seq.write_csv(&mut f)?;
                artifacts.push(path);
                format!("S_x0 ~ {:.6e}", seq.extrapolated)
            }
            Stage::ExteriorConstant {
                r_schedule,
                outer_factor,
                points_per_axis,
                iters,
            } => {
                let seq = constants::exterior_constant(
                    &p,
                    &q,
                    r_schedule,
                    *outer_factor,
                    *points_per_axis,
                    *iters,
                )?;
                artifacts.push(write_json(out_dir, &format!("{tag}.json"), &seq)?);
                let path = out_dir.join(format!("{tag}.csv"));
                let mut f = fs::File::create(&path)?;
                seq.write_csv(&mut f)?;
                artifacts.push(path);
                format!("S_inf ~ {:.6e}", seq.extrapolated)
            }
            Stage::ExpansionQ {
                p_inf,
                nu,
                eps_exponents,
                eta_margin,
            } => {
                let schedule = bubbles::default_schedule(eps_exponents, *p_inf, dim, *eta_margin)?;
                let one = ExponentField::constant(dim, 1.0);
                let rep = bubbles::expansion_q(&one, &q, *p_inf, nu, &schedule)?;
                artifacts.push(write_json(out_dir, &format!("{tag}.json"), &rep)?);
                let path = out_dir.join(format!("{tag}.csv"));
                let mut f = fs::File::create(&path)?;
                rep.write_csv(&mut f)?;
                artifacts.push(path);
                format!(
                    "A0 fit {:.6e} closed {:.6e}",
                    rep.fitted[0], rep.closed_form[0]
                )
            }
            Stage::ExpansionGrad {
                p_inf,
                nu,
                eps_exponents,
                eta_margin,
            } => {
                let schedule = bubbles::default_schedule(eps_exponents, *p_inf, dim, *eta_margin)?;
                let one = ExponentField::constant(dim, 1.0);
                let rep = bubbles::expansion_grad(&one, &p, *p_inf, nu, &schedule)?;
                artifacts.push(write_json(out_dir, &format!("{tag}.json"), &rep)?);
                let path = out_dir.join(format!("{tag}.csv"));
                let mut f = fs::File::create(&path)?;
                rep.write_csv(&mut f)?;
                artifacts.push(path);
                format!(
                    "B0 fit {:.6e} closed {:.6e}",
                    rep.fitted[0], rep.closed_form[0]
                )
            }
            Stage::ExpansionP {
                p_inf,
                nu,
                eps_exponents,
                eta_margin,
            } => {
                let schedule = bubbles::default_schedule(eps_exponents, *p_inf, dim, *eta_margin)?;
                let rep = bubbles::expansion_p(&k, &p, *p_inf, nu, &schedule)?;
                artifacts.push(write_json(out_dir, &format!("{tag}.json"), &rep)?);
                format!("decay exponent {:.4}", rep.fitted_exponent)
            }
            Stage::FiberMap {
                eps_exponent,
                nu,
                eta_margin,
                t_min,
                t_max,
                t_count,
            } => {
                let p_inf = p
                    .limit_at_infinity
                    .ok_or_else(|| Error::MissingEstimate("p(infinity)".into()))?;
                let eps = (-eps_exponent).exp();
                let (lo, hi) = bubbles::hyp_r_window(eps, p_inf, dim, *eta_margin)?;
                let params = bubbles::BubbleParams::new(eps, nu, (lo * hi).sqrt(), p_inf, *eta_margin)?;
                let k_inf = big_k.limit_at_infinity.unwrap_or(1.0);
                let t_grid: Vec<f64> = (0..*t_count)
                    .map(|j| t_min + (t_max - t_min) * j as f64 / (*t_count - 1) as f64)
                    .collect();
                let rep = bubbles::fiber_map(&params, &p, &q, &k, &big_k, k_inf, nu, &t_grid)?;
                artifacts.push(write_json(out_dir, &format!("{tag}.json"), &rep)?);
                let path = out_dir.join(format!("{tag}.csv"));
                let mut csv = String::new();
                writeln!(csv, "t,j_eps").ok();
                for (t, j) in rep.t_samples.iter().zip(&rep.j_samples) {
                    writeln!(csv, "{t:.17e},{j:.17e}").ok();
                }
                fs::write(&path, csv)?;
                artifacts.push(path);
                format!("t_eps {:.6e} vs t0 {:.6e}", rep.t_eps, rep.t0)
            }
            Stage::MountainPass {
                m_path,
                iters,
                tol_res,
            } => {
                let nf = dim as f64;
                let p_inf = p.limit_at_infinity.unwrap_or(p.eval(&vec![0.0; dim]));
                let q_inf = q.limit_at_infinity.unwrap_or(q.eval(&vec![0.0; dim]));
                let data = ProblemData::new(
                    p.clone(),
                    q.clone(),
                    k.clone(),
                    big_k.clone(),
                    grid.clone(),
                    vec![],
                    p_inf,
                    q_inf,
                    big_k.limit_at_infinity.unwrap_or(0.0),
                )?;
                let bump = GridFunction::from_fn(grid.clone(), |x| {
                    let r2: f64 = x.iter().map(|v| v * v).sum();
                    (1.0 - r2 / (config.grid.half_width * config.grid.half_width))
                        .max(0.0)
                        .powi(2)
                });
                let mut endpoint = bump;
                let mut t = 2.0;
                loop {
                    let mut cand = endpoint.clone();
                    cand.scale(t);
                    if solver::energy(&cand, &data).total < 0.0 {
                        endpoint = cand;
                        break;
                    }
                    t *= 2.0;
                    if t > 1e12 {
                        return Err(Error::Divergence(
                            "could not find a negative-energy endpoint".into(),
                        ));
                    }
                }
                let trace = solver::mountain_pass_solve(&data, &endpoint, *m_path, *iters, *tol_res)?;
                artifacts.push(write_json(out_dir, &format!("{tag}.json"), &trace)?);
                let bin = out_dir.join(format!("{tag}_candidate.bin"));
                let mut f = fs::File::create(&bin)?;
                trace.final_function.write_binary(&mut f)?;
                artifacts.push(bin);
                let path = out_dir.join(format!("{tag}.csv"));
                let mut csv = String::new();
                writeln!(csv, "iter,pass_value,residual_norm").ok();
                for (j, (e, r)) in trace
                    .energy_history
                    .iter()
                    .zip(&trace.residual_history)
                    .enumerate()
                {
                    writeln!(csv, "{j},{e:.17e},{r:.17e}").ok();
                }
                fs::write(&path, csv)?;
                artifacts.push(path);
                let _ = nf;
                format!(
                    "residual {:.3e} energy {:.6e} converged {}",
                    trace.final_residual_norm, trace.final_energy, trace.converged
                )
            }
            Stage::NormSuite { count } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut csv = String::new();
                writeln!(csv, "sample,norm,modular,relations_ok").ok();
                let mut violations = 0usize;
                for s in 0..*count {
                    let lo = 1.1 + rng.gen_range(0.0..0.8);
                    let span = rng.gen_range(0.1..1.5);
                    let pf = {
                        let (a, b) = (lo, span);
                        ExponentField::from_fn(dim, config.grid.half_width, move |x| {
                            let r2: f64 = x.iter().map(|v| v * v).sum();
                            a + b / (1.0 + r2)
                        })?
                    };
                    let u = GridFunction::from_values(
                        grid.clone(),
                        (0..grid.node_count())
                            .map(|_| rng.gen_range(-2.0..2.0))
                            .collect(),
                    )?;
                    let norm = spaces::luxemburg_norm(&u, &pf)?;
                    let rho = spaces::modular(&u, &pf);
                    let ok = spaces::norm_modular_relations_hold(
                        norm.value,
                        rho.value,
                        pf.lower_bound,
                        pf.upper_bound,
                        1e-9,
                    );
                    if !ok {
                        violations += 1;
                    }
                    writeln!(csv, "{s},{:.17e},{:.17e},{ok}", norm.value, rho.value).ok();
                }
                let path = out_dir.join(format!("{tag}.csv"));
                fs::write(&path, csv)?;
                artifacts.push(path);
                if violations > 0 {
                    return Err(Error::Divergence(format!(
                        "norm suite found {violations} norm-modular violations"
                    )));
                }
                format!("{count} samples, 0 violations")
            }
            Stage::Concentration {
                bubble_eps,
                delta_schedule,
                r_schedule,
            } => {
                let p_inf = p.limit_at_infinity.unwrap_or(p.eval(&vec![0.0; dim]));
                let q_inf = q.limit_at_infinity.unwrap_or(q.eval(&vec![0.0; dim]));
                let center = grid.center.clone();
                let data = ProblemData::new(
                    p.clone(),
                    q.clone(),
                    k.clone(),
                    big_k.clone(),
                    grid.clone(),
                    vec![center[..dim].to_vec()],
                    p_inf,
                    q_inf,
                    big_k.limit_at_infinity.unwrap_or(0.0),
                )?;
                let bubble = constants::TalentiBubble::new(dim, p_inf)?;
                let iterates: Vec<GridFunction> = bubble_eps
                    .iter()
                    .map(|&e| {
                        let c = center.clone();
                        GridFunction::from_fn(grid.clone(), |x| {
                            let mut d2 = 0.0;
                            for (xd, cd) in x.iter().zip(&c) {
                                d2 += (xd - cd) * (xd - cd);
                            }
                            e.powf(-(dim as f64 - p_inf) / p_inf) * bubble.eval(d2.sqrt() / e)
                        })
                    })
                    .collect();
                let diag = solver::concentration_diagnostics(
                    &iterates,
                    &data,
                    delta_schedule,
                    r_schedule,
                    &SobolevEstimates::default(),
                    0.05,
                )?;
                artifacts.push(write_json(out_dir, &format!("{tag}.json"), &diag)?);
                let path = out_dir.join(format!("{tag}.csv"));
                let mut f = fs::File::create(&path)?;
                diag.write_csv(&mut f)?;
                artifacts.push(path);
                format!(
                    "nu_0 = {:.6e}, nu_inf = {:.6e}",
                    diag.points[0].nu_limit, diag.infinity.nu_limit
                )
            }
        };
        writeln!(summary, "[{tag}] {line}").ok();
        stage_lines.push(format!("[{tag}] {line}"));
    }

    fs::write(out_dir.join("summary.txt"), &summary)?;
    Ok(RunSummary {
        name: config.name.clone(),
        seed,
        stages: stage_lines,
        artifacts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenarios_parse_and_validate() {
        for (name, text) in BUNDLED_SCENARIOS {
            let cfg = ScenarioConfig::parse(text)
                .unwrap_or_else(|e| panic!("scenario {name} failed to parse: {e}"));
            cfg.validate()
                .unwrap_or_else(|e| panic!("scenario {name} failed validation: {e}"));
            assert_eq!(&cfg.name, name);
        }
    }

    #[test]
    fn unknown_field_kind_is_named() {
        let text = r#"
name = "bad"
[grid]
dim = 2
half_width = 2.0
points_per_axis = 9
[fields]
p = { kind = "no_such_field" }
q = { kind = "constant", value = 4.0 }
[[pipeline]]
op = "k_constant"
n = 2
r = 1.3
"#;
        let err = ScenarioConfig::parse(text).unwrap_err();
        assert!(err.to_string().contains("no_such_field"), "{err}");
    }

    #[test]
    fn validation_lists_every_violation() {
        let text = r#"
name = ""
[grid]
dim = 5
half_width = -1.0
points_per_axis = 4
[fields]
p = { kind = "constant", value = 2.0 }
q = { kind = "constant", value = 4.0 }
[[pipeline]]
op = "k_constant"
n = 2
r = 9.0
"#;
        let cfg = ScenarioConfig::parse(text).unwrap();
        match cfg.validate() {
            Err(Error::ConfigValidation(errs)) => {
                assert!(errs.iter().any(|e| e.starts_with("name:")));
                assert!(errs.iter().any(|e| e.starts_with("grid.dim:")));
                assert!(errs.iter().any(|e| e.starts_with("grid.half_width:")));
                assert!(errs.iter().any(|e| e.starts_with("grid.points_per_axis:")));
                assert!(errs.iter().any(|e| e.starts_with("pipeline[0].r:")));
            }
            other => panic!("expected validation error list, got {other:?}"),
        }
    }

    #[test]
    fn sanity_scenario_runs_and_is_deterministic() {
        let text = bundled_scenario("constant-exponent-sanity").unwrap();
        let cfg = ScenarioConfig::parse(text).unwrap();
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let s1 = run_scenario(&cfg, dir1.path(), cfg.seed).unwrap();
        let s2 = run_scenario(&cfg, dir2.path(), cfg.seed).unwrap();
        assert!(!s1.artifacts.is_empty());
        // Byte-identical CSV artifacts on rerun with the same seed.
        for (a, b) in s1.artifacts.iter().zip(&s2.artifacts) {
            if a.extension().map(|e| e == "csv").unwrap_or(false) {
                assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap(), "{a:?}");
            }
        }
        assert!(dir1.path().join("summary.txt").exists());
    }
}
