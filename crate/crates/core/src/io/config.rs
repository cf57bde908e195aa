//! Flat `key = value` configuration files. `#` starts a comment; keys not
//! present keep the value of the base config.

use std::path::Path;

use super::{parse_error, read_file, IoError, IoResult};
use crate::pipelines::FitConfig;

fn parse_num<T: std::str::FromStr>(value: &str, key: &str, line: usize) -> IoResult<T> {
    value
        .parse()
        .map_err(|_| parse_error(format!("line {line}"), format!("bad value {value:?} for {key}")))
}

fn parse_f64(value: &str, key: &str, line: usize) -> IoResult<f64> {
    let v: f64 = parse_num(value, key, line)?;
    if !v.is_finite() {
        return Err(parse_error(format!("line {line}"), format!("{key} must be finite")));
    }
    Ok(v)
}

fn parse_list<T: std::str::FromStr>(value: &str, key: &str, line: usize) -> IoResult<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(s, key, line))
        .collect()
}

fn parse_bool(value: &str, key: &str, line: usize) -> IoResult<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(parse_error(format!("line {line}"), format!("bad boolean {value:?} for {key}"))),
    }
}

/// Applies the assignments in `text` on top of `base`.
pub fn parse_config(text: &str, base: FitConfig) -> IoResult<FitConfig> {
    let mut c = base;
    for (no, raw) in text.lines().enumerate() {
        let line = no + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| parse_error(format!("line {line}"), format!("expected key=value, found {body:?}")))?;
        let (key, v) = (key.trim(), value.trim());
        let f = |v: &str| parse_f64(v, key, line);
        let u = |v: &str| parse_num::<usize>(v, key, line);
        match key {
            "steps" => c.steps = u(v)?,
            "sample_count" => c.sample_count = u(v)?,
            "n_points" => c.n_points = u(v)?,
            "lr" => c.lr = f(v)?,
            "seed" => c.seed = parse_num(v, key, line)?,
            "k" => c.k = u(v)?,
            "normalize" => c.normalize = parse_bool(v, key, line)?,
            "phases" => c.phases = parse_bool(v, key, line)?,
            "omega0" => c.omega0 = f(v)?,
            "hidden" => c.hidden = parse_list(v, key, line)?,
            "lambda_cd" => c.weights.lambda_cd = f(v)?,
            "lambda_n" => c.weights.lambda_n = f(v)?,
            "lambda_ni" => c.weights.lambda_ni = f(v)?,
            "lambda_s" => c.weights.lambda_s = f(v)?,
            "lambda_iso" => c.weights.lambda_iso = f(v)?,
            "lambda_v" => c.weights.lambda_v = f(v)?,
            "early_lambda_s" => c.early_weights.lambda_s = f(v)?,
            "early_lambda_v" => c.early_weights.lambda_v = f(v)?,
            "early_lambda_iso" => c.early_weights.lambda_iso = f(v)?,
            "phase1_fraction" => c.phase1_fraction = f(v)?,
            "ramp_fraction" => c.ramp_fraction = f(v)?,
            "iso_gammas" => {
                c.iso_gammas = parse_list(v, key, line)?;
                if c.iso_gammas.iter().any(|g: &f64| !g.is_finite()) {
                    return Err(parse_error(format!("line {line}"), "iso_gammas must be finite"));
                }
            }
            "resolution" => {
                let r = u(v)?;
                c.render.width = r;
                c.render.height = r;
            }
            "radius_px" => c.render.radius_px = f(v)?,
            "tau" => c.render.tau = f(v)?,
            "splat_k" => c.render.k = u(v)?,
            "patience" => c.patience = u(v)?,
            "plateau_factor" => c.plateau_factor = f(v)?,
            "min_lr" => c.min_lr = f(v)?,
            "eval_samples" => c.eval_samples = u(v)?,
            "acc_strict_abs" => c.accuracy.strict_abs = f(v)?,
            "acc_strict_rel" => c.accuracy.strict_rel = f(v)?,
            "acc_relaxed_abs" => c.accuracy.relaxed_abs = f(v)?,
            "acc_relaxed_rel" => c.accuracy.relaxed_rel = f(v)?,
            other => return Err(IoError::UnknownKey(other.to_string())),
        }
    }
    c.validate()
        .map_err(|e| parse_error("config", e.to_string()))?;
    Ok(c)
}

pub fn read_config(path: &Path, base: FitConfig) -> IoResult<FitConfig> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|e| parse_error(path.display().to_string(), e.to_string()))?;
    parse_config(&text, base)
}

/// Every key with its value, in a form [`parse_config`] reads back exactly.
pub fn format_config(c: &FitConfig) -> String {
    let list = |v: &[String]| v.join(",");
    let w = &c.weights;
    let e = &c.early_weights;
    let entries: Vec<(&str, String)> = vec![
        ("steps", c.steps.to_string()),
        ("sample_count", c.sample_count.to_string()),
        ("n_points", c.n_points.to_string()),
        ("lr", format!("{:?}", c.lr)),
        ("seed", c.seed.to_string()),
        ("k", c.k.to_string()),
        ("normalize", c.normalize.to_string()),
        ("phases", c.phases.to_string()),
        ("omega0", format!("{:?}", c.omega0)),
        ("hidden", list(&c.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>())),
        ("lambda_cd", format!("{:?}", w.lambda_cd)),
        ("lambda_n", format!("{:?}", w.lambda_n)),
        ("lambda_ni", format!("{:?}", w.lambda_ni)),
        ("lambda_s", format!("{:?}", w.lambda_s)),
        ("lambda_iso", format!("{:?}", w.lambda_iso)),
        ("lambda_v", format!("{:?}", w.lambda_v)),
        ("early_lambda_s", format!("{:?}", e.lambda_s)),
        ("early_lambda_v", format!("{:?}", e.lambda_v)),
        ("early_lambda_iso", format!("{:?}", e.lambda_iso)),
        ("phase1_fraction", format!("{:?}", c.phase1_fraction)),
        ("ramp_fraction", format!("{:?}", c.ramp_fraction)),
        ("iso_gammas", list(&c.iso_gammas.iter().map(|g| format!("{g:?}")).collect::<Vec<_>>())),
        ("resolution", c.render.width.to_string()),
        ("radius_px", format!("{:?}", c.render.radius_px)),
        ("tau", format!("{:?}", c.render.tau)),
        ("splat_k", c.render.k.to_string()),
        ("patience", c.patience.to_string()),
        ("plateau_factor", format!("{:?}", c.plateau_factor)),
        ("min_lr", format!("{:?}", c.min_lr)),
        ("eval_samples", c.eval_samples.to_string()),
        ("acc_strict_abs", format!("{:?}", c.accuracy.strict_abs)),
        ("acc_strict_rel", format!("{:?}", c.accuracy.strict_rel)),
        ("acc_relaxed_abs", format!("{:?}", c.accuracy.relaxed_abs)),
        ("acc_relaxed_rel", format!("{:?}", c.accuracy.relaxed_rel)),
    ];
    entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}
