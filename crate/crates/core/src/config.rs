//! Plain-text run configuration.
//!
//! ```text
//! # global keys
//! h = 1.0
//! r_u = 2.0
//! t_final = 1.0
//! backend = direct        # or grid
//!
//! [blob]
//! center_x = 1.0
//! center_y = 0.0
//! eps = 0.01
//! gamma = 1.0
//! particles = 2000
//! ```
//!
//! Global keys: `h`, `r_u`, `dt`, `t_final`, `backend`, `grid_n`, `delta`,
//! `eta0`, `cadence` (steps between records), `seed`, `jitter`. Each `[blob]`
//! section takes `center_x`, `center_y`, `eps`, `gamma` and optionally
//! `particles` (default 2000). `#` and `;` start comments.

use std::fmt::Write as _;

use thiserror::Error;

use crate::geometry::Vec2;
use crate::sim::{BackendChoice, BlobSpec, SimConfig, DEFAULT_PARTICLES};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {value:?}")]
    BadValue { line: usize, key: String, value: String },
    #[error("blob {index}: missing key `{key}`")]
    MissingKey { index: usize, key: &'static str },
}

const GLOBAL_KEYS: [&str; 11] = ["h", "r_u", "dt", "t_final", "backend", "grid_n", "delta", "eta0", "cadence", "seed", "jitter"];
const BLOB_KEYS: [&str; 5] = ["center_x", "center_y", "eps", "gamma", "particles"];

#[derive(Default)]
struct BlobDraft {
    center_x: Option<f64>,
    center_y: Option<f64>,
    eps: Option<f64>,
    gamma: Option<f64>,
    particles: Option<usize>,
    seen: Vec<String>,
}

fn num<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue { line, key: key.into(), value: value.into() })
}

pub fn parse_backend(s: &str) -> Option<BackendChoice> {
    match s.to_ascii_lowercase().as_str() {
        "direct" => Some(BackendChoice::Direct),
        "grid" => Some(BackendChoice::Grid),
        _ => None,
    }
}

pub fn backend_name(b: BackendChoice) -> &'static str {
    match b {
        BackendChoice::Direct => "direct",
        BackendChoice::Grid => "grid",
    }
}

/// Parse a configuration document. Semantic checks are left to
/// [`SimConfig::validate`].
pub fn parse(text: &str) -> Result<SimConfig, ConfigError> {
    let mut cfg = SimConfig::default();
    let mut seen_global: Vec<String> = Vec::new();
    let mut drafts: Vec<BlobDraft> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split(['#', ';']).next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if content.starts_with('[') {
            if !content.ends_with(']') {
                return Err(ConfigError::Syntax { line, msg: format!("unterminated section header `{content}`") });
            }
            let name = content[1..content.len() - 1].trim();
            if !name.eq_ignore_ascii_case("blob") {
                return Err(ConfigError::Syntax { line, msg: format!("unknown section `[{name}]`") });
            }
            drafts.push(BlobDraft::default());
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError::Syntax { line, msg: format!("expected `key = value`, got `{content}`") });
        };
        let key = key.trim().to_ascii_lowercase();
        let value = value.trim();
        match drafts.last_mut() {
            None => {
                if !GLOBAL_KEYS.contains(&key.as_str()) {
                    return Err(ConfigError::UnknownKey { line, key });
                }
                if seen_global.contains(&key) {
                    return Err(ConfigError::Duplicate { line, key });
                }
                seen_global.push(key.clone());
                match key.as_str() {
                    "h" => cfg.h = num(line, &key, value)?,
                    "r_u" => cfg.r_u = num(line, &key, value)?,
                    "dt" => cfg.dt = Some(num(line, &key, value)?),
                    "t_final" => cfg.t_final = num(line, &key, value)?,
                    "backend" => {
                        cfg.backend = parse_backend(value)
                            .ok_or_else(|| ConfigError::BadValue { line, key: key.clone(), value: value.into() })?
                    }
                    "grid_n" => cfg.grid_n = num(line, &key, value)?,
                    "delta" => cfg.delta = Some(num(line, &key, value)?),
                    "eta0" => cfg.eta0 = Some(num(line, &key, value)?),
                    "cadence" => cfg.cadence = Some(num(line, &key, value)?),
                    "seed" => cfg.seed = num(line, &key, value)?,
                    "jitter" => cfg.jitter = num(line, &key, value)?,
                    _ => unreachable!(),
                }
            }
            Some(d) => {
                if !BLOB_KEYS.contains(&key.as_str()) {
                    return Err(ConfigError::UnknownKey { line, key });
                }
                if d.seen.contains(&key) {
                    return Err(ConfigError::Duplicate { line, key });
                }
                d.seen.push(key.clone());
                match key.as_str() {
                    "center_x" => d.center_x = Some(num(line, &key, value)?),
                    "center_y" => d.center_y = Some(num(line, &key, value)?),
                    "eps" => d.eps = Some(num(line, &key, value)?),
                    "gamma" => d.gamma = Some(num(line, &key, value)?),
                    "particles" => d.particles = Some(num(line, &key, value)?),
                    _ => unreachable!(),
                }
            }
        }
    }
    for (index, d) in drafts.into_iter().enumerate() {
        let need = |v: Option<f64>, key: &'static str| v.ok_or(ConfigError::MissingKey { index, key });
        cfg.blobs.push(BlobSpec::new(
            Vec2::new(need(d.center_x, "center_x")?, need(d.center_y, "center_y")?),
            need(d.eps, "eps")?,
            need(d.gamma, "gamma")?,
            d.particles.unwrap_or(DEFAULT_PARTICLES),
        ));
    }
    Ok(cfg)
}

/// Serialise with every resolved value spelled out; `parse` reads it back
/// to an equal configuration.
pub fn to_ini(cfg: &SimConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "h = {:?}", cfg.h);
    let _ = writeln!(s, "r_u = {:?}", cfg.r_u);
    if let Some(dt) = cfg.dt {
        let _ = writeln!(s, "dt = {dt:?}");
    }
    let _ = writeln!(s, "t_final = {:?}", cfg.t_final);
    let _ = writeln!(s, "backend = {}", backend_name(cfg.backend));
    let _ = writeln!(s, "grid_n = {}", cfg.grid_n);
    if let Some(d) = cfg.delta {
        let _ = writeln!(s, "delta = {d:?}");
    }
    if let Some(e) = cfg.eta0 {
        let _ = writeln!(s, "eta0 = {e:?}");
    }
    if let Some(c) = cfg.cadence {
        let _ = writeln!(s, "cadence = {c}");
    }
    let _ = writeln!(s, "seed = {}", cfg.seed);
    let _ = writeln!(s, "jitter = {:?}", cfg.jitter);
    for b in &cfg.blobs {
        let _ = writeln!(s, "\n[blob]");
        let _ = writeln!(s, "center_x = {:?}", b.center.x);
        let _ = writeln!(s, "center_y = {:?}", b.center.y);
        let _ = writeln!(s, "eps = {:?}", b.eps);
        let _ = writeln!(s, "gamma = {:?}", b.circulation);
        let _ = writeln!(s, "particles = {}", b.particles);
    }
    s
}
