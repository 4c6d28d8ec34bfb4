//! Experiment runner behind the `tspec` binary.
//!
//! Every command takes an [`ExperimentConfig`] and returns its full output as
//! a string plus an exit status, so callers (the binary, tests) can write it
//! wherever they like.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use tensor_spectra::smalldev::{extract_zeta, fit_exponent, geometric_grid, mc_small_ball};
use tensor_spectra::tensor::{
    classify_case, estimate_r, predict, tensor_counting, tensor_counting_multi, AsymptoticPrediction, ConvMode,
    PredictOptions,
};
use tensor_spectra::{
    CaseTag, EigenSource, MarginalSpectrum, PeriodRelation, PeriodicComponent, SmallDevModel, SpectrumSpec,
};

/// Exit status when `compare` misses its tolerance.
pub const EXIT_TOLERANCE: i32 = 1;
/// Exit status for invalid input or a numerical failure.
pub const EXIT_ERROR: i32 = 2;
/// Exit status when no supported theorem applies.
pub const EXIT_UNSUPPORTED: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: tensor_spectra::Error,
    },
    #[error("config parse error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn ctx<T>(r: tensor_spectra::Result<T>, context: impl FnOnce() -> String) -> Result<T, CliError> {
    r.map_err(|source| CliError::Core { context: context(), source })
}

/// Geometric grid from `start` down to `stop` with `points` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        if self.points == 0 {
            return Vec::new();
        }
        geometric_grid(self.start, self.stop, self.points)
    }

    fn validate(&self, name: &str) -> Result<(), CliError> {
        let ok = self.start > 0.0
            && self.stop > 0.0
            && self.start.is_finite()
            && (self.points <= 1 || self.stop < self.start);
        if !ok {
            return Err(CliError::Config(format!(
                "{name} must decrease toward 0 (start > stop > 0), got start = {}, stop = {}",
                self.start, self.stop
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Allowed |N_exact/N_pred − 1| over the final decade of `compare`.
    pub ratio: f64,
    /// Bound on the s* series tail error.
    pub series: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { ratio: 0.05, series: 1e-4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    pub conv: ConvMode,
    /// Grid size for the periodic factors.
    pub n_points: usize,
}

impl Default for PredictConfig {
    fn default() -> Self {
        let d = PredictOptions::default();
        PredictConfig { conv: d.conv, n_points: d.n_points }
    }
}

/// Which eigenvalues feed the small-deviation commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenInput {
    /// The listed spectra (their tensor product when there are several).
    #[default]
    Exact,
    /// The asymptotic counting model of the tensor product of the first two spectra.
    Predicted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmallDevConfig {
    pub source: EigenInput,
    pub n_cut: usize,
    /// Add Monte Carlo columns to `smalldev` output.
    pub with_mc: bool,
}

impl Default for SmallDevConfig {
    fn default() -> Self {
        SmallDevConfig { source: EigenInput::Exact, n_cut: tensor_spectra::smalldev::DEFAULT_N_CUT, with_mc: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub samples: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig { samples: 100_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Power of ln(1/ε) divided out before fitting.
    pub kappa: f64,
    /// Exponent p of the eigenvalue decay; defaults to the model's.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Period T of the marginal oscillation; enables the ζ report.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub spectra: Vec<SpectrumSpec>,
    /// T/T̃ for the first two spectra.
    #[serde(default = "incommensurable")]
    pub period_relation: PeriodRelation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_grid: Option<Grid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_grid: Option<Grid>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub predict: PredictConfig,
    #[serde(default)]
    pub smalldev: SmallDevConfig,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub seed: u64,
}

fn incommensurable() -> PeriodRelation {
    PeriodRelation::Incommensurable
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self, CliError> {
        let c: ExperimentConfig = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.spectra.is_empty() {
            return Err(CliError::Config("at least one spectrum is required".into()));
        }
        if let Some(g) = &self.t_grid {
            g.validate("t_grid")?;
        }
        if let Some(g) = &self.eps_grid {
            g.validate("eps_grid")?;
        }
        let t = &self.tolerances;
        if !(t.ratio > 0.0 && t.series > 0.0) {
            return Err(CliError::Config("tolerances must be positive".into()));
        }
        if let PeriodRelation::Common { m, n } = self.period_relation {
            if m == 0 || n == 0 {
                return Err(CliError::Config("period_relation needs m, n >= 1".into()));
            }
        }
        if self.predict.n_points < 8 || self.smalldev.n_cut == 0 {
            return Err(CliError::Config("predict.n_points must be >= 8 and smalldev.n_cut >= 1".into()));
        }
        self.build_spectra()?;
        Ok(())
    }

    pub fn build_spectra(&self) -> Result<Vec<MarginalSpectrum>, CliError> {
        self.spectra
            .iter()
            .enumerate()
            .map(|(i, s)| ctx(s.build(), || format!("spectra[{i}]")))
            .collect()
    }

    fn t_values(&self) -> Result<Vec<f64>, CliError> {
        Ok(self.t_grid.ok_or_else(|| CliError::Config("t_grid is required".into()))?.values())
    }

    fn eps_values(&self) -> Result<Vec<f64>, CliError> {
        Ok(self.eps_grid.ok_or_else(|| CliError::Config("eps_grid is required".into()))?.values())
    }

    fn predict_options(&self) -> PredictOptions {
        PredictOptions {
            conv: self.predict.conv,
            n_points: self.predict.n_points,
            series_tol: self.tolerances.series,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Count,
    Predict,
    Compare,
    Classify,
    Smalldev,
    Mc,
    Fit,
}

/// Command output and the process exit status it implies.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub text: String,
    pub status: i32,
}

impl Output {
    fn ok(text: String) -> Self {
        Output { text, status: 0 }
    }
}

pub fn run(cmd: Command, config: &ExperimentConfig) -> Result<Output, CliError> {
    config.validate()?;
    match cmd {
        Command::Count => cmd_count(config).map(Output::ok),
        Command::Predict => cmd_predict(config),
        Command::Compare => cmd_compare(config),
        Command::Classify => cmd_classify(config),
        Command::Smalldev => cmd_smalldev(config).map(Output::ok),
        Command::Mc => cmd_mc(config).map(Output::ok),
        Command::Fit => cmd_fit(config).map(Output::ok),
    }
}

/// Shortest round-trip form, switching to exponent notation for very large
/// or small magnitudes.
pub fn fmt_f(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn count_exact(specs: &[MarginalSpectrum], t: f64) -> tensor_spectra::Result<u64> {
    match specs {
        [a] => a.counting(t),
        [a, b] => tensor_counting(a, b, t),
        _ => tensor_counting_multi(specs, t),
    }
}

fn count_rows(specs: &[MarginalSpectrum], ts: &[f64]) -> Result<Vec<u64>, CliError> {
    ts.par_iter().map(|&t| ctx(count_exact(specs, t), || format!("row t = {}", fmt_f(t)))).collect()
}

pub fn cmd_count(config: &ExperimentConfig) -> Result<String, CliError> {
    let specs = config.build_spectra()?;
    let ts = config.t_values()?;
    let counts = count_rows(&specs, &ts)?;
    let mut out = String::from("t,N_exact\n");
    for (t, n) in ts.iter().zip(counts) {
        let _ = writeln!(out, "{},{n}", fmt_f(*t));
    }
    Ok(out)
}

fn first_two(config: &ExperimentConfig) -> Result<(MarginalSpectrum, MarginalSpectrum), CliError> {
    let specs = config.build_spectra()?;
    if specs.len() != 2 {
        return Err(CliError::Config(format!("this command needs exactly two spectra, got {}", specs.len())));
    }
    let mut it = specs.into_iter();
    Ok((it.next().unwrap(), it.next().unwrap()))
}

enum Resolved {
    Case(CaseTag),
    /// No theorem applies; carries the rendered explanation.
    Unsupported(String),
}

fn resolve(config: &ExperimentConfig) -> Result<Resolved, CliError> {
    let (a, b) = first_two(config)?;
    match classify_case(&a, &b, config.period_relation) {
        Ok(c) => Ok(Resolved::Case(c)),
        Err(tensor_spectra::Error::UnsupportedCase { hypothesis }) => Ok(Resolved::Unsupported(unsupported_report(
            config, &a, &b, &hypothesis,
        )?)),
        Err(e) => Err(CliError::Core { context: "classify".into(), source: e }),
    }
}

#[derive(Serialize)]
struct UnsupportedReport<'a> {
    unsupported: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    estimate_r: Option<tensor_spectra::tensor::RSamples>,
}

/// Explanation plus exploratory r(ln τ) samples when both marginals have a
/// counting form with the same p.
fn unsupported_report(
    config: &ExperimentConfig,
    a: &MarginalSpectrum,
    b: &MarginalSpectrum,
    hypothesis: &str,
) -> Result<String, CliError> {
    let same_p = matches!((a.p(), b.p()), (Some(x), Some(y)) if (x - y).abs() <= 1e-12 * x);
    let estimate = if same_p && a.counting_form().is_some() && b.counting_form().is_some() {
        let taus: Vec<f64> = match config.t_grid {
            Some(g) => g.values().into_iter().map(|t| 1.0 / t).filter(|&x| x > 1.0).collect(),
            None => geometric_grid(1e3, 1e12, 10),
        };
        Some(ctx(estimate_r(a, b, &taus), || "estimate_r".into())?)
    } else {
        None
    };
    let report = UnsupportedReport { unsupported: hypothesis, estimate_r: estimate };
    Ok(serde_json::to_string_pretty(&report)? + "\n")
}

fn prediction(config: &ExperimentConfig, case: &CaseTag) -> Result<AsymptoticPrediction, CliError> {
    ctx(predict(case, config.predict_options()), || format!("predict ({})", case.kind.theorem()))
}

pub fn cmd_predict(config: &ExperimentConfig) -> Result<Output, CliError> {
    let case = match resolve(config)? {
        Resolved::Case(c) => c,
        Resolved::Unsupported(text) => return Ok(Output { text, status: EXIT_UNSUPPORTED }),
    };
    let pred = prediction(config, &case)?;
    let ts = config.t_values()?;
    let rows: Vec<_> = ts
        .par_iter()
        .map(|&t| ctx(pred.eval_terms(t), || format!("row t = {}", fmt_f(t))))
        .collect::<Result<_, _>>()?;
    let tag = case.kind.theorem();
    let mut out = String::from("t,N_pred,first_term,second_term,case_tag\n");
    for (t, r) in ts.iter().zip(rows) {
        let _ = writeln!(out, "{},{},{},{},{tag}", fmt_f(*t), fmt_f(r.total), fmt_f(r.first), fmt_f(r.second));
    }
    Ok(Output::ok(out))
}

/// Rows with t within one decade of the smallest grid value.
fn final_decade(ts: &[f64]) -> impl Fn(f64) -> bool {
    let t_min = ts.iter().cloned().fold(f64::INFINITY, f64::min);
    move |t| t <= 10.0 * t_min
}

pub fn cmd_compare(config: &ExperimentConfig) -> Result<Output, CliError> {
    let case = match resolve(config)? {
        Resolved::Case(c) => c,
        Resolved::Unsupported(text) => return Ok(Output { text, status: EXIT_UNSUPPORTED }),
    };
    let pred = prediction(config, &case)?;
    let ts = config.t_values()?;
    let specs = [case.first.clone(), case.second.clone()];
    let rows: Vec<(u64, f64)> = ts
        .par_iter()
        .map(|&t| {
            let row = || format!("row t = {}", fmt_f(t));
            Ok((ctx(count_exact(&specs, t), row)?, ctx(pred.eval(t), row)?))
        })
        .collect::<Result<_, CliError>>()?;
    let tag = case.kind.theorem();
    let in_final = final_decade(&ts);
    let mut miss = false;
    let mut out = String::from("t,N_exact,N_pred,ratio,case_tag\n");
    for (&t, (n, np)) in ts.iter().zip(rows) {
        let ratio = n as f64 / np;
        // NaN ratios count as misses
        let within = (ratio - 1.0).abs() <= config.tolerances.ratio;
        if in_final(t) && !within {
            miss = true;
        }
        let _ = writeln!(out, "{},{n},{},{},{tag}", fmt_f(t), fmt_f(np), fmt_f(ratio));
    }
    Ok(Output { text: out, status: if miss { EXIT_TOLERANCE } else { 0 } })
}

const ECHO_POINTS: usize = 64;

#[derive(Serialize)]
struct ComponentEcho {
    role: &'static str,
    period: f64,
    /// s on a uniform grid of one period.
    s: Vec<f64>,
}

#[derive(Serialize)]
struct ClassifyReport {
    case: tensor_spectra::tensor::CaseSummary,
    components: Vec<ComponentEcho>,
}

fn echo(role: &'static str, c: &PeriodicComponent) -> ComponentEcho {
    ComponentEcho { role, period: c.period(), s: c.sample(ECHO_POINTS).values }
}

pub fn cmd_classify(config: &ExperimentConfig) -> Result<Output, CliError> {
    let case = match resolve(config)? {
        Resolved::Case(c) => c,
        Resolved::Unsupported(text) => return Ok(Output { text, status: EXIT_UNSUPPORTED }),
    };
    let mut components = Vec::new();
    for (role, m) in [("first", &case.first), ("second", &case.second)] {
        if let Some((_, s)) = m.counting_form() {
            components.push(echo(role, s));
        }
    }
    let report = ClassifyReport { case: case.summary(), components };
    Ok(Output::ok(serde_json::to_string_pretty(&report)? + "\n"))
}

/// The small-deviation model selected by `smalldev.source`.
pub fn smalldev_model(config: &ExperimentConfig) -> Result<SmallDevModel, CliError> {
    let n_cut = config.smalldev.n_cut;
    let source = match config.smalldev.source {
        EigenInput::Exact => {
            let mut specs = config.build_spectra()?;
            if specs.len() == 1 {
                EigenSource::Marginal(specs.pop().unwrap())
            } else {
                EigenSource::Tensor(specs)
            }
        }
        EigenInput::Predicted => {
            let case = match resolve(config)? {
                Resolved::Case(c) => c,
                Resolved::Unsupported(text) => return Err(CliError::Config(format!("no predictor applies: {text}"))),
            };
            let pred = prediction(config, &case)?;
            EigenSource::Marginal(ctx(pred.to_counting_model(), || "counting model of the prediction".into())?)
        }
    };
    ctx(SmallDevModel::new(source, n_cut), || "small-deviation model".into())
}

pub fn cmd_smalldev(config: &ExperimentConfig) -> Result<String, CliError> {
    let m = smalldev_model(config)?;
    let eps = config.eps_values()?;
    let sb: Vec<_> = eps
        .par_iter()
        .map(|&e| ctx(m.log_small_ball(e), || format!("row eps = {}", fmt_f(e))))
        .collect::<Result<_, _>>()?;
    let mc = if config.smalldev.with_mc {
        Some(ctx(mc_small_ball(&m, &eps, config.mc.samples, config.seed), || "monte carlo".into())?)
    } else {
        None
    };
    let mut out = String::from("eps,ln_p_asymptotic,regime_flag,mc_p_hat,mc_ci_lo,mc_ci_hi\n");
    for (i, (e, s)) in eps.iter().zip(&sb).enumerate() {
        let _ = write!(out, "{},{},{}", fmt_f(*e), fmt_f(s.ln_p), u8::from(s.in_regime));
        match &mc {
            Some(v) => {
                let _ = writeln!(out, ",{},{},{}", fmt_f(v[i].p_hat), fmt_f(v[i].ci_lo), fmt_f(v[i].ci_hi));
            }
            None => out.push_str(",,,\n"),
        }
    }
    Ok(out)
}

pub fn cmd_mc(config: &ExperimentConfig) -> Result<String, CliError> {
    if config.mc.samples == 0 {
        return Err(CliError::Config("mc.samples must be positive".into()));
    }
    let m = smalldev_model(config)?;
    let eps = config.eps_values()?;
    let est = ctx(mc_small_ball(&m, &eps, config.mc.samples, config.seed), || "monte carlo".into())?;
    let mut out = String::from("eps,successes,n_samples,p_hat,ci_lo,ci_hi,one_sided\n");
    for e in est {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            fmt_f(e.eps),
            e.successes,
            e.n_samples,
            fmt_f(e.p_hat),
            fmt_f(e.ci_lo),
            fmt_f(e.ci_hi),
            u8::from(e.one_sided)
        );
    }
    Ok(out)
}

#[derive(Serialize)]
struct FitReport {
    p: f64,
    kappa: f64,
    slope: f64,
    /// 2/(p−1).
    target: f64,
    relative_error: f64,
    intercept: f64,
    max_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    zeta: Option<tensor_spectra::smalldev::ZetaReport>,
}

pub fn cmd_fit(config: &ExperimentConfig) -> Result<String, CliError> {
    let m = smalldev_model(config)?;
    let eps = config.eps_values()?;
    let p = config.fit.p.unwrap_or(m.p());
    let kappa = config.fit.kappa;
    let lp: Vec<f64> = eps
        .par_iter()
        .map(|&e| ctx(m.log_small_ball(e), || format!("row eps = {}", fmt_f(e))).map(|s| s.ln_p))
        .collect::<Result<_, _>>()?;
    let fit = ctx(fit_exponent(&eps, &lp, kappa), || "exponent fit".into())?;
    let zeta = match config.fit.period {
        Some(t) => Some(ctx(extract_zeta(&m, p, t, kappa, &eps), || "zeta extraction".into())?),
        None => None,
    };
    let target = 2.0 / (p - 1.0);
    let report = FitReport {
        p,
        kappa,
        slope: fit.slope,
        target,
        relative_error: fit.slope / target - 1.0,
        intercept: fit.intercept,
        max_residual: fit.max_residual,
        zeta,
    };
    Ok(serde_json::to_string_pretty(&report)? + "\n")
}
