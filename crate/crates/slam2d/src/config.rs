//! `key = value` configuration files.
//!
//! Keys are the field names of [`PipelineConfig`] and [`SimConfig`]; nested
//! registration and optimizer settings use a dotted prefix
//! (`gicp.k_neighbors`, `optimizer.max_iterations`). `#` starts a comment.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use slam2d_core::pipeline::PipelineConfig;
use slam2d_core::simulator::SimConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {msg}", path.display())]
    Invalid { path: PathBuf, line: usize, msg: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse_entries(text: &str) -> Result<Vec<Entry>, (usize, String)> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err((i + 1, format!("expected `key = value`, got {line:?}")));
        };
        let (key, value) = (k.trim(), v.trim());
        if key.is_empty() || value.is_empty() {
            return Err((i + 1, format!("expected `key = value`, got {line:?}")));
        }
        out.push(Entry { line: i + 1, key: key.to_string(), value: value.to_string() });
    }
    Ok(out)
}

fn parse<T: FromStr>(e: &Entry) -> Result<T, String> {
    e.value.parse().map_err(|_| format!("bad value {:?} for {}", e.value, e.key))
}

/// Applies one entry; `Ok(false)` when the key is not a pipeline key.
pub fn set_pipeline(cfg: &mut PipelineConfig, e: &Entry) -> Result<bool, String> {
    match e.key.as_str() {
        "window" => cfg.window = parse(e)?,
        "sigma_xy" => cfg.sigma_xy = parse(e)?,
        "sigma_theta" => cfg.sigma_theta = parse(e)?,
        "prior_sigma" => cfg.prior_sigma = parse(e)?,
        "keyframe_min_translation" => cfg.keyframe_min_translation = parse(e)?,
        "keyframe_min_rotation" => cfg.keyframe_min_rotation = parse(e)?,
        "min_valid_returns" => cfg.min_valid_returns = parse(e)?,
        "gicp.k_neighbors" => cfg.gicp.k_neighbors = parse(e)?,
        "gicp.epsilon" => cfg.gicp.epsilon = parse(e)?,
        "gicp.max_corr_dist" => cfg.gicp.max_corr_dist = parse(e)?,
        "gicp.max_iterations" => cfg.gicp.max_iterations = parse(e)?,
        "gicp.tol" => cfg.gicp.tol = parse(e)?,
        "optimizer.max_iterations" => cfg.optimizer.max_iterations = parse(e)?,
        "optimizer.tol" => cfg.optimizer.tol = parse(e)?,
        "optimizer.abs_tol" => cfg.optimizer.abs_tol = parse(e)?,
        "optimizer.lambda_init" => cfg.optimizer.lambda_init = parse(e)?,
        "optimizer.lambda_min" => cfg.optimizer.lambda_min = parse(e)?,
        "optimizer.lambda_max" => cfg.optimizer.lambda_max = parse(e)?,
        "optimizer.lambda_factor" => cfg.optimizer.lambda_factor = parse(e)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Applies one entry; `Ok(false)` when the key is not a simulator key.
pub fn set_sim(cfg: &mut SimConfig, e: &Entry) -> Result<bool, String> {
    match e.key.as_str() {
        "angle_min" => cfg.angle_min = parse(e)?,
        "angle_increment" => cfg.angle_increment = parse(e)?,
        "count" => cfg.count = parse(e)?,
        "range_min" => cfg.range_min = parse(e)?,
        "range_max" => cfg.range_max = parse(e)?,
        "range_noise_sigma" => cfg.range_noise_sigma = parse(e)?,
        "scan_hz" => cfg.scan_hz = parse(e)?,
        "seed" => cfg.seed = parse(e)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn load(path: &Path, mut apply: impl FnMut(&Entry) -> Result<bool, String>) -> Result<(), ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    let invalid = |line, msg| ConfigError::Invalid { path: path.to_path_buf(), line, msg };
    for e in parse_entries(&text).map_err(|(l, m)| invalid(l, m))? {
        if !apply(&e).map_err(|m| invalid(e.line, m))? {
            return Err(invalid(e.line, format!("unknown key {:?}", e.key)));
        }
    }
    Ok(())
}

/// Pipeline settings from `path`, starting from the defaults. Simulator keys
/// are accepted and ignored so one file can drive both commands.
pub fn load_pipeline(path: &Path) -> Result<PipelineConfig, ConfigError> {
    let mut cfg = PipelineConfig::default();
    let mut sim = SimConfig::default();
    load(path, |e| Ok(set_pipeline(&mut cfg, e)? || set_sim(&mut sim, e)?))?;
    Ok(cfg)
}

/// Simulator settings from `path`; pipeline keys are ignored.
pub fn load_sim(path: &Path) -> Result<SimConfig, ConfigError> {
    let mut cfg = SimConfig::default();
    let mut pipe = PipelineConfig::default();
    load(path, |e| Ok(set_sim(&mut cfg, e)? || set_pipeline(&mut pipe, e)?))?;
    Ok(cfg)
}

/// Every pipeline key with its value, in file syntax.
pub fn format_pipeline(cfg: &PipelineConfig) -> String {
    let g = &cfg.gicp;
    let o = &cfg.optimizer;
    format!(
        "window = {}\nsigma_xy = {}\nsigma_theta = {}\nprior_sigma = {}\n\
         keyframe_min_translation = {}\nkeyframe_min_rotation = {}\nmin_valid_returns = {}\n\
         gicp.k_neighbors = {}\ngicp.epsilon = {}\ngicp.max_corr_dist = {}\ngicp.max_iterations = {}\ngicp.tol = {}\n\
         optimizer.max_iterations = {}\noptimizer.tol = {}\noptimizer.abs_tol = {}\noptimizer.lambda_init = {}\n\
         optimizer.lambda_min = {}\noptimizer.lambda_max = {}\noptimizer.lambda_factor = {}\n",
        cfg.window,
        cfg.sigma_xy,
        cfg.sigma_theta,
        cfg.prior_sigma,
        cfg.keyframe_min_translation,
        cfg.keyframe_min_rotation,
        cfg.min_valid_returns,
        g.k_neighbors,
        g.epsilon,
        g.max_corr_dist,
        g.max_iterations,
        g.tol,
        o.max_iterations,
        o.tol,
        o.abs_tol,
        o.lambda_init,
        o.lambda_min,
        o.lambda_max,
        o.lambda_factor,
    )
}

pub fn format_sim(cfg: &SimConfig) -> String {
    format!(
        "angle_min = {}\nangle_increment = {}\ncount = {}\nrange_min = {}\nrange_max = {}\n\
         range_noise_sigma = {}\nscan_hz = {}\nseed = {}\n",
        cfg.angle_min,
        cfg.angle_increment,
        cfg.count,
        cfg.range_min,
        cfg.range_max,
        cfg.range_noise_sigma,
        cfg.scan_hz,
        cfg.seed,
    )
}
