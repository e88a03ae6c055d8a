use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::json;

use blconst::certificate::{certify_localized, certify_partial, CertificateTrace};
use blconst::datum::{validate_datum, BlDatum, NumericPolicy};
use blconst::finiteness::{
    check_partial, search_critical_subspaces, PartialLocalization, SearchMode,
};
use blconst::frames::{estimate_c, estimate_c_partial, FrameClass};
use blconst::gauss::{compute_bl, GaussianInput, LocalizationMode, Status};
use blconst::kakeya::{self, KakeyaConfig};
use blconst::nonlinear::{self, NonlinearConfig};
use blconst::rng::{self, tags};
use blconst::stability::stability_sweep;
use blconst::Error;

use crate::render::{csv_rows, finite_or_tag, json, Outcome, Rendered};
use crate::{Cli, Command, LocalizationArgs, ModeArg};

pub fn run(cli: &Cli) -> Result<(Outcome, Rendered)> {
    let g = &cli.global;
    let policy = g.policy();
    policy.validate()?;
    match &cli.command {
        Command::Compute { datum, loc } => compute(&load_datum(datum)?, loc, &policy),
        Command::Finiteness { datum, loc, budget } => {
            finiteness(&load_datum(datum)?, loc, *budget, g.seed_or(0), &policy)
        }
        Command::Stability {
            datum,
            radius,
            samples,
        } => stability(
            &load_datum(datum)?,
            *radius,
            *samples,
            g.seed_or(0),
            &policy,
        ),
        Command::Certify {
            datum,
            samples,
            inputs,
            loc,
            alpha,
            deltahat,
        } => certify(
            &load_datum(datum)?,
            *samples,
            inputs,
            loc,
            *alpha,
            *deltahat,
            g.seed_or(0),
            &policy,
        ),
        Command::Kakeya { config } => kakeya_cmd(config, g.seed, &policy),
        Command::Nonlinear { config } => nonlinear_cmd(config, g.seed),
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_datum(path: &Path) -> Result<BlDatum> {
    BlDatum::from_json(&read(path)?).with_context(|| format!("parsing datum {}", path.display()))
}

fn localization(
    args: &LocalizationArgs,
    n: usize,
    policy: &NumericPolicy,
) -> Result<LocalizationMode> {
    Ok(match args.mode {
        ModeArg::Global => LocalizationMode::Global,
        ModeArg::UnitBall => LocalizationMode::UnitBall,
        ModeArg::Partial => LocalizationMode::Partial(partial(args, n, policy)?),
    })
}

fn partial(
    args: &LocalizationArgs,
    n: usize,
    policy: &NumericPolicy,
) -> Result<PartialLocalization> {
    let g = match (&args.g_diag, &args.g_file) {
        (Some(d), _) => DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(d)),
        (None, Some(path)) => {
            let rows: Vec<Vec<f64>> = serde_json::from_str(&read(path)?)
                .with_context(|| format!("parsing G from {}", path.display()))?;
            let c = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|r| r.len() != c) {
                bail!("G is ragged");
            }
            DMatrix::from_fn(rows.len(), c, |i, k| rows[i][k])
        }
        (None, None) => bail!("--mode partial needs --g-diag or --g"),
    };
    if g.nrows() != n {
        bail!(
            "G is {}x{} but the datum acts on R^{n}",
            g.nrows(),
            g.ncols()
        );
    }
    Ok(PartialLocalization::new(g, policy)?)
}

#[derive(Serialize)]
struct ComputeRow<'a> {
    status: &'a str,
    value: String,
    iterations: usize,
    grad_norm: f64,
    mode: &'a str,
}

fn undetermined(
    iterations: usize,
    reason: &str,
    trace: &[blconst::gauss::TraceEntry],
    mode: &str,
) -> Result<(Outcome, Rendered)> {
    let row = ComputeRow {
        status: "undetermined",
        value: "nan".into(),
        iterations,
        grad_norm: trace.last().map_or(f64::NAN, |t| t.grad_norm),
        mode,
    };
    Ok((
        Outcome::Undetermined,
        Rendered {
            json: json(&json!({
                "status": "undetermined",
                "iterations": iterations,
                "reason": reason,
                "mode": mode,
                "trace": trace,
            }))?,
            csv: csv_rows(&[row])?,
            summary: None,
        },
    ))
}

fn compute(
    datum: &BlDatum,
    args: &LocalizationArgs,
    policy: &NumericPolicy,
) -> Result<(Outcome, Rendered)> {
    let mode = localization(args, datum.n(), policy)?;
    let res = match compute_bl(datum, &mode, policy, None) {
        Ok(r) => r,
        Err(Error::Undetermined {
            iterations,
            reason,
            trace,
        }) => return undetermined(iterations, &reason, &trace, mode.name()),
        Err(e) => return Err(e.into()),
    };
    let status = match res.status {
        Status::Converged => "converged",
        Status::BoundaryPlateau => "boundary_plateau",
        Status::Diverging => "diverging",
    };
    let row = ComputeRow {
        status,
        value: if res.value.is_finite() {
            format!("{:.9}", res.value)
        } else {
            "+inf".into()
        },
        iterations: res.iterations,
        grad_norm: res.grad_norm,
        mode: res.mode,
    };
    let outcome = if res.status == Status::Diverging {
        Outcome::Diverging
    } else {
        Outcome::Ok
    };
    let mut body = res.to_json();
    body.push('\n');
    Ok((
        outcome,
        Rendered {
            json: body,
            csv: csv_rows(&[row])?,
            summary: None,
        },
    ))
}

#[derive(Serialize)]
struct FinitenessRow {
    verdict: String,
    min_slack: f64,
    scaling_slack: f64,
    method: String,
    witness: String,
}

fn finiteness(
    datum: &BlDatum,
    args: &LocalizationArgs,
    budget: usize,
    seed: u64,
    policy: &NumericPolicy,
) -> Result<(Outcome, Rendered)> {
    let validation = validate_datum(datum, policy);
    let report = match args.mode {
        ModeArg::Global => {
            search_critical_subspaces(datum, SearchMode::Global, budget, seed, policy)?
        }
        ModeArg::UnitBall => {
            search_critical_subspaces(datum, SearchMode::Localized, budget, seed, policy)?
        }
        ModeArg::Partial => check_partial(
            datum,
            &partial(args, datum.n(), policy)?,
            budget,
            seed,
            policy,
        )?,
    };
    let value = report.to_json_value();
    let text = |v: &serde_json::Value| v.as_str().map(str::to_owned).unwrap_or_default();
    let row = FinitenessRow {
        verdict: text(&serde_json::to_value(value.verdict)?),
        min_slack: value.min_slack,
        scaling_slack: value.scaling_slack,
        method: text(&serde_json::to_value(value.method)?),
        witness: value
            .witness
            .as_ref()
            .map(|w| {
                w.iter()
                    .map(|v| {
                        v.iter()
                            .map(|x| x.to_string())
                            .collect::<Vec<_>>()
                            .join(" ")
                    })
                    .collect::<Vec<_>>()
                    .join(";")
            })
            .unwrap_or_default(),
    };
    Ok((
        Outcome::Ok,
        Rendered {
            json: json(&json!({ "report": value, "validation": validation }))?,
            csv: csv_rows(&[row])?,
            summary: None,
        },
    ))
}

#[derive(Serialize)]
struct StabilityCsvRow {
    sample: usize,
    norm: f64,
    value: String,
    status: String,
}

fn stability(
    datum: &BlDatum,
    radius: f64,
    samples: usize,
    seed: u64,
    policy: &NumericPolicy,
) -> Result<(Outcome, Rendered)> {
    let base = match compute_bl(datum, &LocalizationMode::Global, policy, None) {
        Ok(r) => r,
        Err(Error::Undetermined {
            iterations,
            reason,
            trace,
        }) => return undetermined(iterations, &reason, &trace, "global"),
        Err(e) => return Err(e.into()),
    };
    if base.status == Status::Diverging {
        eprintln!("error: the base datum diverges; stability is undefined");
        let mut body = base.to_json();
        body.push('\n');
        return Ok((
            Outcome::Diverging,
            Rendered {
                json: body,
                csv: String::new(),
                summary: None,
            },
        ));
    }
    let rep = stability_sweep(datum, radius, samples, seed, policy)?;
    let rows: Vec<serde_json::Value> = rep
        .rows
        .iter()
        .map(|r| json!({ "sample": r.sample, "norm": r.norm, "value": finite_or_tag(r.value), "status": r.status }))
        .collect();
    let summary = json!({
        "radius": rep.radius,
        "samples": samples,
        "seed": seed,
        "base_value": rep.base_value,
        "min": finite_or_tag(rep.min),
        "median": finite_or_tag(rep.median),
        "max": finite_or_tag(rep.max),
        "sup": finite_or_tag(rep.sup),
        "non_finite": rep.non_finite,
    });
    let csv: Vec<StabilityCsvRow> = rep
        .rows
        .iter()
        .map(|r| StabilityCsvRow {
            sample: r.sample,
            norm: r.norm,
            value: finite_or_tag(r.value)
                .to_string()
                .trim_matches('"')
                .to_owned(),
            status: r.status.clone(),
        })
        .collect();
    Ok((
        Outcome::Ok,
        Rendered {
            json: json(&json!({ "summary": summary, "rows": rows }))?,
            csv: csv_rows(&csv)?,
            summary: Some(json(&summary)?),
        },
    ))
}

/// Inputs named on the command line.
fn inputs(spec: &str, datum: &BlDatum, seed: u64) -> Result<Vec<GaussianInput>> {
    if spec == "identity" {
        return Ok(vec![GaussianInput::identity(datum)]);
    }
    if let Some(count) = spec.strip_prefix("random:") {
        let count: usize = count.parse().context("random:<count> needs an integer")?;
        return Ok((0..count)
            .map(|i| {
                GaussianInput::random(datum, &mut rng::stream(seed, tags::SPD_INPUTS, i as u64))
            })
            .collect());
    }
    if let Some(list) = spec.strip_prefix("scalar:") {
        let values = list
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .context("scalar:<v1>,<v2>,... needs numbers")?;
        return Ok(vec![GaussianInput::scalar(datum, &values)?]);
    }
    bail!("unknown input specification {spec:?}; use identity, random:<count> or scalar:<values>")
}

#[derive(Serialize)]
struct CertifyRow {
    input: usize,
    overall_ok: bool,
    branch: String,
    constant_used: f64,
    failed_steps: String,
}

#[allow(clippy::too_many_arguments)]
fn certify(
    datum: &BlDatum,
    samples: usize,
    spec: &str,
    args: &LocalizationArgs,
    alpha: f64,
    deltahat: f64,
    seed: u64,
    policy: &NumericPolicy,
) -> Result<(Outcome, Rendered)> {
    let list = inputs(spec, datum, seed)?;
    let (estimate, traces): (_, Vec<CertificateTrace>) = match args.mode {
        ModeArg::Global | ModeArg::UnitBall => {
            let est = estimate_c(datum, FrameClass::Orthonormal, samples, seed)?;
            let traces = list
                .iter()
                .map(|a| certify_localized(datum, a, est.c_hat, policy))
                .collect::<blconst::Result<Vec<_>>>()?;
            (est, traces)
        }
        ModeArg::Partial => {
            let loc = partial(args, datum.n(), policy)?;
            let est = estimate_c_partial(datum, loc.h0_basis(), alpha, samples, seed)?;
            let traces = list
                .iter()
                .map(|a| certify_partial(datum, &loc, a, alpha, est.c_hat, deltahat))
                .collect::<blconst::Result<Vec<_>>>()?;
            (est, traces)
        }
    };
    let passed = traces.iter().filter(|t| t.overall_ok).count();
    let rows: Vec<CertifyRow> = traces
        .iter()
        .enumerate()
        .map(|(i, t)| CertifyRow {
            input: i,
            overall_ok: t.overall_ok,
            branch: t.branch.to_owned(),
            constant_used: t.constant_used,
            failed_steps: t
                .failures()
                .map(|s| s.label.clone())
                .collect::<Vec<_>>()
                .join(";"),
        })
        .collect();
    let summary = json!({
        "c_hat": estimate.c_hat,
        "frame_samples": samples,
        "seed": seed,
        "passed": passed,
        "total": traces.len(),
    });
    let outcome = if passed == traces.len() {
        Outcome::Ok
    } else {
        Outcome::CertificateFailed
    };
    Ok((
        outcome,
        Rendered {
            json: json(&json!({ "summary": summary, "traces": traces }))?,
            csv: csv_rows(&rows)?,
            summary: Some(json(&summary)?),
        },
    ))
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn kakeya_cmd(
    path: &Path,
    seed: Option<u64>,
    policy: &NumericPolicy,
) -> Result<(Outcome, Rendered)> {
    let mut cfg: KakeyaConfig = serde_json::from_str(&read(path)?)
        .with_context(|| format!("parsing config {}", path.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let datum = cfg.datum.load(Some(&config_dir(path)))?;
    let (rows, summary) = kakeya::run_experiment(&cfg, &datum, policy)?;
    Ok((
        Outcome::Ok,
        Rendered {
            json: json(&json!({ "summary": summary, "rows": rows }))?,
            csv: csv_rows(&rows)?,
            summary: Some(json(&summary)?),
        },
    ))
}

fn nonlinear_cmd(path: &Path, seed: Option<u64>) -> Result<(Outcome, Rendered)> {
    let mut cfg: NonlinearConfig = serde_json::from_str(&read(path)?)
        .with_context(|| format!("parsing config {}", path.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let datum = cfg.datum.load(Some(&config_dir(path)))?;
    let specs = cfg.submersions(&datum)?;
    let rep =
        nonlinear::nonlinear_ratio_sweep(&specs, &datum, &cfg.u, &cfg.deltas, &cfg.options())?;
    #[derive(Serialize)]
    struct Row {
        delta: f64,
        draw: usize,
        ratio: f64,
    }
    let rows: Vec<Row> = rep
        .rows
        .iter()
        .map(|r| Row {
            delta: r.delta,
            draw: r.draw,
            ratio: r.ratio,
        })
        .collect();
    let summary = json!({
        "deltas": cfg.deltas,
        "draws": cfg.draws,
        "seed": cfg.seed,
        "smoothing": cfg.smoothing,
        "max_ratios": rep.max_ratios,
        "slope": rep.slope,
        "class_failures": rep.rows.iter().filter(|r| !r.class_ok).count(),
    });
    Ok((
        Outcome::Ok,
        Rendered {
            json: json(&json!({ "summary": summary, "rows": rep.rows }))?,
            csv: csv_rows(&rows)?,
            summary: Some(json(&summary)?),
        },
    ))
}
