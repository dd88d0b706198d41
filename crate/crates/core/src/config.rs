//! The structured-text format shared by town, scenario, suite and config
//! files, plus the run-level configuration it feeds.
//!
//! A document is a sequence of blocks. A block starts with a non-indented
//! header line `kind [args...]`; indented lines below it are `key values...`
//! properties. `#` starts a full-line comment. All parse and validation
//! errors carry the 1-based source line.

use std::collections::BTreeMap;
use std::fmt;

use crate::control::ControllerConfig;
use crate::perception::PerceptionModel;
use crate::sim::{EpisodeParams, VehicleParams};

#[derive(Debug, Clone, thiserror::Error)]
#[error("line {line}: {msg}")]
pub struct ParseError {
    pub line: usize,
    pub msg: String,
}

impl ParseError {
    pub fn new(line: usize, msg: impl Into<String>) -> Self {
        ParseError {
            line,
            msg: msg.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Prop {
    pub key: String,
    pub values: Vec<String>,
    pub line: usize,
}

impl Prop {
    pub fn f64s(&self) -> Result<Vec<f64>, ParseError> {
        self.values
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| ParseError::new(self.line, format!("expected number, got `{v}`")))
            })
            .collect()
    }

    pub fn one_f64(&self) -> Result<f64, ParseError> {
        let vals = self.f64s()?;
        if vals.len() != 1 {
            return Err(ParseError::new(
                self.line,
                format!("`{}` expects exactly one number", self.key),
            ));
        }
        Ok(vals[0])
    }

    pub fn one_str(&self) -> Result<&str, ParseError> {
        if self.values.len() != 1 {
            return Err(ParseError::new(
                self.line,
                format!("`{}` expects exactly one value", self.key),
            ));
        }
        Ok(&self.values[0])
    }
}

#[derive(Debug, Clone)]
pub struct Block {
    pub kind: String,
    pub args: Vec<String>,
    pub line: usize,
    pub props: Vec<Prop>,
}

impl Block {
    pub fn id(&self) -> Result<&str, ParseError> {
        self.args.first().map(|s| s.as_str()).ok_or_else(|| {
            ParseError::new(self.line, format!("`{}` block needs a name", self.kind))
        })
    }

    pub fn prop(&self, key: &str) -> Option<&Prop> {
        self.props.iter().find(|p| p.key == key)
    }

    pub fn require(&self, key: &str) -> Result<&Prop, ParseError> {
        self.prop(key).ok_or_else(|| {
            ParseError::new(
                self.line,
                format!("`{}` block is missing `{key}`", self.kind),
            )
        })
    }

    pub fn props_named<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a Prop> {
        self.props.iter().filter(move |p| p.key == key)
    }
}

/// Parses a whole document into blocks. Indented lines before the first
/// block header are rejected.
pub fn parse_document(text: &str) -> Result<Vec<Block>, ParseError> {
    let mut blocks: Vec<Block> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = raw.trim_end();
        if trimmed.trim_start().is_empty() || trimmed.trim_start().starts_with('#') {
            continue;
        }
        let indented = trimmed.starts_with(' ') || trimmed.starts_with('\t');
        let mut tokens = trimmed.split_whitespace().map(str::to_owned);
        if indented {
            let key = tokens.next().expect("non-empty line");
            let prop = Prop {
                key,
                values: tokens.collect(),
                line: line_no,
            };
            match blocks.last_mut() {
                Some(b) => b.props.push(prop),
                None => {
                    return Err(ParseError::new(
                        line_no,
                        "property line before any block header",
                    ))
                }
            }
        } else {
            let kind = tokens.next().expect("non-empty line");
            blocks.push(Block {
                kind,
                args: tokens.collect(),
                line: line_no,
                props: Vec::new(),
            });
        }
    }
    Ok(blocks)
}

/// Everything a single run needs besides the town: controller, vehicle,
/// episode and perception settings. Defaults come from the type defaults;
/// a config file and `--set` style overrides are layered on top.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    pub controller: ControllerConfig,
    pub vehicle: VehicleParams,
    pub episode: EpisodeParams,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum ConfigError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {msg}")]
    BadValue { key: String, msg: String },
}

impl RunConfig {
    /// Applies one `section.field=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |key: &str, msg: &str| ConfigError::BadValue {
            key: key.to_owned(),
            msg: msg.to_owned(),
        };
        let f = || -> Result<f64, ConfigError> {
            value
                .parse::<f64>()
                .map_err(|_| bad(key, "expected a number"))
        };
        let u = || -> Result<usize, ConfigError> {
            value
                .parse::<usize>()
                .map_err(|_| bad(key, "expected an integer"))
        };
        match key {
            "controller.p_red_threshold" => self.controller.p_red_threshold = f()?,
            "controller.p_hazard_threshold" => self.controller.p_hazard_threshold = f()?,
            "controller.follow_trigger_m" => self.controller.follow_trigger_m = f()?,
            "controller.over_limit_margin_kmh" => self.controller.over_limit_margin_kmh = f()?,
            "controller.turn_speed_reduction_kmh" => {
                self.controller.turn_speed_reduction_kmh = f()?
            }
            "controller.cruise_cap_kmh" => {
                self.controller.cruise_cap_kmh = if value == "none" { None } else { Some(f()?) }
            }
            "controller.cruise_kp" => self.controller.cruise_gains.kp = f()?,
            "controller.cruise_ki" => self.controller.cruise_gains.ki = f()?,
            "controller.cruise_kd" => self.controller.cruise_gains.kd = f()?,
            "controller.follow_kp" => self.controller.follow_gains.kp = f()?,
            "controller.follow_ki" => self.controller.follow_gains.ki = f()?,
            "controller.follow_kd" => self.controller.follow_gains.kd = f()?,
            "controller.integral_limit" => self.controller.integral_limit = f()?,
            "controller.car_follow_c" => self.controller.car_follow_c = f()?,
            "controller.car_follow_d" => self.controller.car_follow_d = f()?,
            "controller.stanley_k" => self.controller.stanley_k = f()?,
            "controller.stanley_v_eps" => self.controller.stanley_v_eps = f()?,
            "controller.steer_damping" => self.controller.steer_damping = f()?,
            "controller.steer_limit" => self.controller.steer_limit = f()?,
            "vehicle.a_max" => self.vehicle.a_max = f()?,
            "vehicle.b_max" => self.vehicle.b_max = f()?,
            "vehicle.drag" => self.vehicle.drag = f()?,
            "vehicle.wheelbase" => self.vehicle.wheelbase = f()?,
            "vehicle.half_length" => self.vehicle.half_length = f()?,
            "vehicle.half_width" => self.vehicle.half_width = f()?,
            "episode.dt" => self.episode.dt = f()?,
            "episode.goal_radius" => self.episode.goal_radius = f()?,
            "episode.activation_distance" => self.episode.activation_distance = f()?,
            "episode.max_steps" => self.episode.max_steps = u()?,
            _ => return Err(ConfigError::UnknownKey(key.to_owned())),
        }
        Ok(())
    }

    /// Reads `key value` properties from `controller`/`vehicle`/`episode`
    /// blocks of a config document.
    pub fn apply_document(&mut self, text: &str) -> Result<(), ConfigError> {
        for block in parse_document(text)? {
            match block.kind.as_str() {
                "controller" | "vehicle" | "episode" => {
                    for prop in &block.props {
                        let key = format!("{}.{}", block.kind, prop.key);
                        let joined = prop.values.join(" ");
                        self.set(&key, &joined).map_err(|e| match e {
                            ConfigError::UnknownKey(k) => ConfigError::Parse(ParseError::new(
                                prop.line,
                                format!("unknown config key `{k}`"),
                            )),
                            other => other,
                        })?;
                    }
                }
                "perception" => { /* handled by the perception loader */ }
                other => {
                    return Err(ConfigError::Parse(ParseError::new(
                        block.line,
                        format!("unknown config block `{other}`"),
                    )))
                }
            }
        }
        Ok(())
    }

    /// Renders the effective configuration in the same format `apply_document`
    /// reads, so a dumped config can be fed back in.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let mut section = |name: &str, fields: &BTreeMap<&str, String>| {
            out.push_str(name);
            out.push('\n');
            for (k, v) in fields {
                out.push_str(&format!("  {k} {v}\n"));
            }
            out.push('\n');
        };
        let c = &self.controller;
        section(
            "controller",
            &BTreeMap::from([
                ("p_red_threshold", fmt_f(c.p_red_threshold)),
                ("p_hazard_threshold", fmt_f(c.p_hazard_threshold)),
                ("follow_trigger_m", fmt_f(c.follow_trigger_m)),
                ("over_limit_margin_kmh", fmt_f(c.over_limit_margin_kmh)),
                (
                    "turn_speed_reduction_kmh",
                    fmt_f(c.turn_speed_reduction_kmh),
                ),
                (
                    "cruise_cap_kmh",
                    c.cruise_cap_kmh
                        .map(fmt_f)
                        .unwrap_or_else(|| "none".into()),
                ),
                ("cruise_kp", fmt_f(c.cruise_gains.kp)),
                ("cruise_ki", fmt_f(c.cruise_gains.ki)),
                ("cruise_kd", fmt_f(c.cruise_gains.kd)),
                ("follow_kp", fmt_f(c.follow_gains.kp)),
                ("follow_ki", fmt_f(c.follow_gains.ki)),
                ("follow_kd", fmt_f(c.follow_gains.kd)),
                ("integral_limit", fmt_f(c.integral_limit)),
                ("car_follow_c", fmt_f(c.car_follow_c)),
                ("car_follow_d", fmt_f(c.car_follow_d)),
                ("stanley_k", fmt_f(c.stanley_k)),
                ("stanley_v_eps", fmt_f(c.stanley_v_eps)),
                ("steer_damping", fmt_f(c.steer_damping)),
                ("steer_limit", fmt_f(c.steer_limit)),
            ]),
        );
        let v = &self.vehicle;
        section(
            "vehicle",
            &BTreeMap::from([
                ("a_max", fmt_f(v.a_max)),
                ("b_max", fmt_f(v.b_max)),
                ("drag", fmt_f(v.drag)),
                ("wheelbase", fmt_f(v.wheelbase)),
                ("half_length", fmt_f(v.half_length)),
                ("half_width", fmt_f(v.half_width)),
            ]),
        );
        let e = &self.episode;
        section(
            "episode",
            &BTreeMap::from([
                ("dt", fmt_f(e.dt)),
                ("goal_radius", fmt_f(e.goal_radius)),
                ("activation_distance", fmt_f(e.activation_distance)),
                ("max_steps", e.max_steps.to_string()),
            ]),
        );
        out
    }
}

fn fmt_f(v: f64) -> String {
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

/// Loads a perception model override from a `perception` block if present.
pub fn perception_from_document(text: &str) -> Result<Option<PerceptionModel>, ParseError> {
    for block in parse_document(text)? {
        if block.kind == "perception" {
            return Ok(Some(PerceptionModel::from_block(&block)?));
        }
    }
    Ok(None)
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.dump())
    }
}
