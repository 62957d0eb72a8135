//! Scenario files: flat `section.key = value` lines.
//!
//! Values are numbers, `true`/`false`/`on`/`off`, bare words or quoted
//! strings, and bracketed lists (nested for matrices, row-major). A list may
//! continue over several lines until its brackets balance. `#` starts a
//! comment. Keys ending in `_deg` take degrees and are stored in radians.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::{self, Write as _};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::analysis::log_grid;
use crate::aw::CbfParams;
use crate::lqr::{design_servo, CareSolution, LqrWeights, ServoGains, SynthesisError};
use crate::lti::{check_augmentation_controllable, check_hurwitz, PlantModel, PositionLimits};
use crate::output::ColumnGroup;
use crate::sim::{ActuatorModel, SignalKind, SignalSpec, SimConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        Self {
            line: Some(line),
            message: message.into(),
        }
    }

    fn global(message: impl Into<String>) -> Self {
        Self {
            line: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(f64),
    Bool(bool),
    Word(String),
    List(Vec<Value>),
}

impl Value {
    fn describe(&self) -> &'static str {
        match self {
            Value::Num(_) => "a number",
            Value::Bool(_) => "a boolean",
            Value::Word(_) => "a word",
            Value::List(_) => "a list",
        }
    }
}

struct ValueParser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> ValueParser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn value(&mut self) -> Result<Value, String> {
        match self.peek() {
            None => Err("missing value".into()),
            Some(b'[') => {
                self.pos += 1;
                let mut items = Vec::new();
                if self.peek() == Some(b']') {
                    self.pos += 1;
                    return Ok(Value::List(items));
                }
                loop {
                    items.push(self.value()?);
                    match self.peek() {
                        Some(b',') => self.pos += 1,
                        Some(b']') => {
                            self.pos += 1;
                            return Ok(Value::List(items));
                        }
                        Some(c) => return Err(format!("expected ',' or ']', found '{}'", c as char)),
                        None => return Err("unterminated list".into()),
                    }
                }
            }
            Some(b']') | Some(b',') => Err(format!("unexpected '{}'", self.src[self.pos] as char)),
            Some(b'"') => {
                let start = self.pos + 1;
                let end = self.src[start..]
                    .iter()
                    .position(|&c| c == b'"')
                    .ok_or("unterminated string")?;
                self.pos = start + end + 1;
                Ok(Value::Word(String::from_utf8_lossy(&self.src[start..start + end]).into_owned()))
            }
            Some(_) => {
                let start = self.pos;
                while self.pos < self.src.len()
                    && !matches!(self.src[self.pos], b',' | b'[' | b']' | b'"')
                    && !self.src[self.pos].is_ascii_whitespace()
                {
                    self.pos += 1;
                }
                let tok = std::str::from_utf8(&self.src[start..self.pos]).map_err(|e| e.to_string())?;
                Ok(match tok {
                    "true" | "on" => Value::Bool(true),
                    "false" | "off" => Value::Bool(false),
                    _ => match tok.parse::<f64>() {
                        Ok(x) => Value::Num(x),
                        Err(_) if tok.starts_with(|c: char| c.is_ascii_digit() || c == '-' || c == '+' || c == '.') => {
                            return Err(format!("malformed number '{tok}'"))
                        }
                        Err(_) => Value::Word(tok.to_string()),
                    },
                })
            }
        }
    }
}

pub fn parse_value(text: &str) -> Result<Value, String> {
    let mut p = ValueParser {
        src: text.as_bytes(),
        pos: 0,
    };
    let v = p.value()?;
    if p.peek().is_some() {
        return Err(format!("trailing characters after value: '{}'", &text[p.pos..]));
    }
    Ok(v)
}

fn strip_comment(line: &str) -> &str {
    let mut in_str = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_str = !in_str,
            '#' if !in_str => return &line[..i],
            _ => {}
        }
    }
    line
}

fn bracket_depth(s: &str) -> i64 {
    let mut in_str = false;
    let mut d = 0;
    for c in s.chars() {
        match c {
            '"' => in_str = !in_str,
            '[' if !in_str => d += 1,
            ']' if !in_str => d -= 1,
            _ => {}
        }
    }
    d
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: Value,
    pub line: usize,
}

/// Splits the text into `key = value` entries with their starting lines.
pub fn parse_entries(text: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut entries = Vec::new();
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, strip_comment(l)));
    while let Some((line, raw)) = lines.next() {
        if raw.trim().is_empty() {
            continue;
        }
        let (key, rest) = raw
            .split_once('=')
            .ok_or_else(|| ConfigError::at(line, format!("expected 'key = value', found '{}'", raw.trim())))?;
        let key = key.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
            return Err(ConfigError::at(line, format!("invalid key '{key}'")));
        }
        let mut body = rest.to_string();
        while bracket_depth(&body) > 0 {
            match lines.next() {
                Some((_, more)) => {
                    body.push(' ');
                    body.push_str(more);
                }
                None => return Err(ConfigError::at(line, format!("unbalanced brackets in '{key}'"))),
            }
        }
        if bracket_depth(&body) < 0 {
            return Err(ConfigError::at(line, format!("unbalanced brackets in '{key}'")));
        }
        let value = parse_value(&body).map_err(|e| ConfigError::at(line, format!("{key}: {e}")))?;
        entries.push(Entry {
            key: key.to_string(),
            value,
            line,
        });
    }
    Ok(entries)
}

const KNOWN_KEYS: &[&str] = &[
    "scenario.name",
    "plant.A_p",
    "plant.B_p",
    "plant.C_p_reg",
    "plant.D_p_reg",
    "gains.K_I",
    "gains.K_P",
    "gains.Q_diag",
    "gains.R",
    "limits.enabled",
    "limits.u_min",
    "limits.u_min_deg",
    "limits.u_max",
    "limits.u_max_deg",
    "aw.enabled",
    "aw.alpha_cbf",
    "sim.dt",
    "sim.duration",
    "sim.initial_state",
    "sim.command.kind",
    "sim.command.amplitude",
    "sim.command.amplitude_deg",
    "sim.command.t_start",
    "sim.command.t_half",
    "sim.command.t_end",
    "sim.command.frequency",
    "sim.command.direction",
    "sim.disturbance.kind",
    "sim.disturbance.amplitude",
    "sim.disturbance.amplitude_deg",
    "sim.disturbance.t_start",
    "sim.disturbance.t_half",
    "sim.disturbance.t_end",
    "sim.disturbance.frequency",
    "sim.disturbance.column",
    "sim.actuator.enabled",
    "sim.actuator.natural_frequency",
    "sim.actuator.damping_ratio",
    "analysis.include_actuator",
    "analysis.grid_points",
    "analysis.omega_min",
    "analysis.omega_max",
    "output.directory",
    "output.columns",
];

const REQUIRED_BLOCKS: [&str; 5] = ["plant", "gains", "limits", "aw", "sim"];

/// How the servo gains are obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum GainSource {
    Explicit(ServoGains),
    Lqr { q_diag: Vec<f64>, r: DMatrix<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSettings {
    pub include_actuator: bool,
    pub grid_points: usize,
    pub omega_min: f64,
    pub omega_max: f64,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            include_actuator: false,
            grid_points: 400,
            omega_min: 1e-2,
            omega_max: 1e3,
        }
    }
}

impl AnalysisSettings {
    pub fn grid(&self) -> Vec<f64> {
        log_grid(self.grid_points, self.omega_min, self.omega_max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSettings {
    pub directory: Option<String>,
    pub columns: Vec<ColumnGroup>,
}

impl Default for OutputSettings {
    fn default() -> Self {
        Self {
            directory: None,
            columns: ColumnGroup::DEFAULT.to_vec(),
        }
    }
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub plant: PlantModel,
    pub gains: GainSource,
    pub limits: PositionLimits,
    pub params: CbfParams,
    pub sim: SimConfig,
    pub analysis: AnalysisSettings,
    pub output: OutputSettings,
}

impl Scenario {
    /// Explicit gains as given, or the LQR design (with its Riccati
    /// solution) for weight-based scenarios.
    pub fn design(&self) -> Result<(ServoGains, Option<CareSolution>), SynthesisError> {
        match &self.gains {
            GainSource::Explicit(g) => Ok((g.clone(), None)),
            GainSource::Lqr { q_diag, r } => {
                let q = DMatrix::from_diagonal(&DVector::from_column_slice(q_diag));
                let w = LqrWeights::new(q, r.clone())?;
                let (g, care) = design_servo(&self.plant, &w)?;
                Ok((g, Some(care)))
            }
        }
    }

    pub fn servo_gains(&self) -> Result<ServoGains, SynthesisError> {
        self.design().map(|(g, _)| g)
    }
}

struct Table {
    map: BTreeMap<String, (Value, usize)>,
}

impl Table {
    fn line(&self, key: &str) -> Option<usize> {
        self.map.get(key).map(|(_, l)| *l)
    }

    fn has(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    fn get(&self, key: &str) -> Option<(&Value, usize)> {
        self.map.get(key).map(|(v, l)| (v, *l))
    }

    fn num(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some((Value::Num(x), l)) => {
                if x.is_finite() {
                    Ok(Some(*x))
                } else {
                    Err(ConfigError::at(l, format!("{key} must be finite")))
                }
            }
            Some((v, l)) => Err(ConfigError::at(l, format!("{key} must be a number, found {}", v.describe()))),
        }
    }

    fn flag(&self, key: &str) -> Result<Option<bool>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some((Value::Bool(b), _)) => Ok(Some(*b)),
            Some((v, l)) => Err(ConfigError::at(l, format!("{key} must be true/false/on/off, found {}", v.describe()))),
        }
    }

    fn word(&self, key: &str) -> Result<Option<String>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some((Value::Word(w), _)) => Ok(Some(w.clone())),
            Some((Value::Num(x), _)) => Ok(Some(x.to_string())),
            Some((v, l)) => Err(ConfigError::at(l, format!("{key} must be a word, found {}", v.describe()))),
        }
    }

    fn vector(&self, key: &str) -> Result<Option<DVector<f64>>, ConfigError> {
        let Some((v, l)) = self.get(key) else {
            return Ok(None);
        };
        let items = match v {
            Value::Num(x) => vec![*x],
            Value::List(items) => items
                .iter()
                .map(|i| match i {
                    Value::Num(x) => Ok(*x),
                    other => Err(ConfigError::at(l, format!("{key}: expected numbers, found {}", other.describe()))),
                })
                .collect::<Result<_, _>>()?,
            other => return Err(ConfigError::at(l, format!("{key} must be a list of numbers, found {}", other.describe()))),
        };
        if items.iter().any(|x| !x.is_finite()) {
            return Err(ConfigError::at(l, format!("{key} entries must be finite")));
        }
        Ok(Some(DVector::from_vec(items)))
    }

    fn matrix(&self, key: &str) -> Result<Option<DMatrix<f64>>, ConfigError> {
        let Some((v, l)) = self.get(key) else {
            return Ok(None);
        };
        let Value::List(rows) = v else {
            return Err(ConfigError::at(l, format!("{key} must be a list of rows, found {}", v.describe())));
        };
        let mut data = Vec::new();
        let mut ncols = None;
        for (i, row) in rows.iter().enumerate() {
            let Value::List(cells) = row else {
                return Err(ConfigError::at(l, format!("{key}: row {i} is not a list")));
            };
            if *ncols.get_or_insert(cells.len()) != cells.len() {
                return Err(ConfigError::at(l, format!("{key}: ragged rows")));
            }
            for c in cells {
                match c {
                    Value::Num(x) if x.is_finite() => data.push(*x),
                    _ => return Err(ConfigError::at(l, format!("{key}: entries must be finite numbers"))),
                }
            }
        }
        Ok(Some(DMatrix::from_row_slice(rows.len(), ncols.unwrap_or(0), &data)))
    }

    /// Radian value from `key` or `key_deg`; both at once is an error.
    fn angle_vector(&self, key: &str) -> Result<Option<(DVector<f64>, usize)>, ConfigError> {
        let deg_key = format!("{key}_deg");
        match (self.has(key), self.has(&deg_key)) {
            (true, true) => Err(ConfigError::at(
                self.line(&deg_key).unwrap_or(0),
                format!("both {key} and {deg_key} given"),
            )),
            (true, false) => Ok(self.vector(key)?.map(|v| (v, self.line(key).unwrap_or(0)))),
            (false, true) => Ok(self
                .vector(&deg_key)?
                .map(|v| (v.map(|x| x * PI / 180.0), self.line(&deg_key).unwrap_or(0)))),
            (false, false) => Ok(None),
        }
    }

    fn angle(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        let deg_key = format!("{key}_deg");
        match (self.has(key), self.has(&deg_key)) {
            (true, true) => Err(ConfigError::at(
                self.line(&deg_key).unwrap_or(0),
                format!("both {key} and {deg_key} given"),
            )),
            (true, false) => self.num(key),
            (false, true) => Ok(self.num(&deg_key)?.map(|x| x * PI / 180.0)),
            (false, false) => Ok(None),
        }
    }

    fn required<T>(&self, key: &str, v: Option<T>) -> Result<T, ConfigError> {
        v.ok_or_else(|| ConfigError::global(format!("missing required key {key}")))
    }
}

fn signal(t: &Table, prefix: &str) -> Result<SignalSpec, ConfigError> {
    let kind_key = format!("{prefix}.kind");
    let kind = match t.word(&kind_key)? {
        None => SignalKind::Zero,
        Some(w) => SignalKind::parse(&w).ok_or_else(|| {
            ConfigError::at(
                t.line(&kind_key).unwrap_or(0),
                format!("{kind_key}: unknown signal '{w}' (zero, step, doublet, sinusoid)"),
            )
        })?,
    };
    let d = SignalSpec::zero();
    let s = SignalSpec {
        kind,
        amplitude: t.angle(&format!("{prefix}.amplitude"))?.unwrap_or(d.amplitude),
        t_start: t.num(&format!("{prefix}.t_start"))?.unwrap_or(d.t_start),
        t_half: t.num(&format!("{prefix}.t_half"))?.unwrap_or(d.t_half),
        t_end: t.num(&format!("{prefix}.t_end"))?.unwrap_or(d.t_end),
        frequency: t.num(&format!("{prefix}.frequency"))?.unwrap_or(d.frequency),
    };
    s.validate()
        .map_err(|e| ConfigError::at(t.line(&kind_key).unwrap_or(0), format!("{prefix}: {e}")))?;
    Ok(s)
}

/// Parses and validates scenario text.
pub fn parse_scenario(text: &str) -> Result<Scenario, ConfigError> {
    let mut map = BTreeMap::new();
    for e in parse_entries(text)? {
        if !KNOWN_KEYS.contains(&e.key.as_str()) {
            return Err(ConfigError::at(e.line, format!("unknown key '{}'", e.key)));
        }
        if let Some((_, first)) = map.get(&e.key) {
            return Err(ConfigError::at(
                e.line,
                format!("duplicate key '{}' (first set on line {first})", e.key),
            ));
        }
        map.insert(e.key, (e.value, e.line));
    }
    let t = Table { map };
    for block in REQUIRED_BLOCKS {
        let prefix = format!("{block}.");
        if !t.map.keys().any(|k| k.starts_with(&prefix)) {
            return Err(ConfigError::global(format!("missing required block '{block}'")));
        }
    }

    let name = t.word("scenario.name")?.unwrap_or_else(|| "unnamed".to_string());

    let a_p = t.required("plant.A_p", t.matrix("plant.A_p")?)?;
    let b_p = t.required("plant.B_p", t.matrix("plant.B_p")?)?;
    let c = t.required("plant.C_p_reg", t.matrix("plant.C_p_reg")?)?;
    let d = match t.matrix("plant.D_p_reg")? {
        Some(d) => d,
        None => DMatrix::zeros(c.nrows(), b_p.ncols()),
    };
    let plant_line = t.line("plant.A_p").unwrap_or(0);
    let plant = PlantModel::new(a_p, b_p, c, d).map_err(|e| ConfigError::at(plant_line, e.to_string()))?;
    match check_hurwitz(&plant.a_p) {
        Ok(true) => {}
        Ok(false) => return Err(ConfigError::at(plant_line, "plant.A_p is not Hurwitz")),
        Err(e) => return Err(ConfigError::at(plant_line, e.to_string())),
    }
    let (np, m) = (plant.n_p(), plant.m());

    let explicit = t.has("gains.K_I") || t.has("gains.K_P");
    let weights = t.has("gains.Q_diag") || t.has("gains.R");
    let gains = match (explicit, weights) {
        (true, true) => {
            let l = t.line("gains.Q_diag").or(t.line("gains.R")).unwrap_or(0);
            return Err(ConfigError::at(l, "give either explicit gains (K_I, K_P) or LQR weights (Q_diag, R), not both"));
        }
        (true, false) => {
            let k_i = t.required("gains.K_I", t.matrix("gains.K_I")?)?;
            let k_p = t.required("gains.K_P", t.matrix("gains.K_P")?)?;
            let l = t.line("gains.K_I").unwrap_or(0);
            if k_i.shape() != (m, m) || k_p.shape() != (m, np) {
                return Err(ConfigError::at(
                    l,
                    format!("gains must be K_I {m}x{m} and K_P {m}x{np}, got {:?} and {:?}", k_i.shape(), k_p.shape()),
                ));
            }
            GainSource::Explicit(ServoGains::new(k_i, k_p).map_err(|e| ConfigError::at(l, e.to_string()))?)
        }
        (false, true) => {
            let q = t.required("gains.Q_diag", t.vector("gains.Q_diag")?)?;
            let r = t.required("gains.R", t.matrix("gains.R")?)?;
            let l = t.line("gains.Q_diag").unwrap_or(0);
            if q.len() != np + m || r.shape() != (m, m) {
                return Err(ConfigError::at(
                    l,
                    format!("Q_diag needs {} entries and R must be {m}x{m}", np + m),
                ));
            }
            LqrWeights::new(DMatrix::from_diagonal(&q), r.clone()).map_err(|e| ConfigError::at(l, e.to_string()))?;
            if !check_augmentation_controllable(&plant) {
                return Err(ConfigError::at(
                    plant_line,
                    "integral augmentation is not controllable (plant has a transmission zero at the origin)",
                ));
            }
            GainSource::Lqr {
                q_diag: q.iter().copied().collect(),
                r,
            }
        }
        (false, false) => unreachable!("gains block presence checked above"),
    };

    let (u_min, l_min) = t.required("limits.u_min", t.angle_vector("limits.u_min")?)?;
    let (u_max, _) = t.required("limits.u_max", t.angle_vector("limits.u_max")?)?;
    if u_min.len() != m || u_max.len() != m {
        return Err(ConfigError::at(l_min, format!("limits need {m} entries")));
    }
    let limits = PositionLimits::new(u_min, u_max).map_err(|e| ConfigError::at(l_min, e.to_string()))?;

    let alpha = t.required("aw.alpha_cbf", t.num("aw.alpha_cbf")?)?;
    let params = CbfParams::new(alpha)
        .map_err(|e| ConfigError::at(t.line("aw.alpha_cbf").unwrap_or(0), e.to_string()))?;

    let mut sim = SimConfig::new(np, m);
    sim.aw_enabled = t.flag("aw.enabled")?.unwrap_or(false);
    sim.limits_enabled = t.flag("limits.enabled")?.unwrap_or(true);
    if let Some(dt) = t.num("sim.dt")? {
        sim.dt = dt;
    }
    if let Some(dur) = t.num("sim.duration")? {
        sim.duration = dur;
    }
    sim.command = signal(&t, "sim.command")?;
    sim.disturbance = signal(&t, "sim.disturbance")?;
    if let Some(dir) = t.vector("sim.command.direction")? {
        sim.command_direction = dir;
    }
    if let Some(col) = t.vector("sim.disturbance.column")? {
        sim.disturbance_column = col;
    }
    if let Some(x0) = t.vector("sim.initial_state")? {
        sim.initial_state = x0;
    }
    let act_default = ActuatorModel::elevator(false);
    sim.actuator = ActuatorModel {
        natural_frequency: t.num("sim.actuator.natural_frequency")?.unwrap_or(act_default.natural_frequency),
        damping_ratio: t.num("sim.actuator.damping_ratio")?.unwrap_or(act_default.damping_ratio),
        enabled: t.flag("sim.actuator.enabled")?.unwrap_or(false),
    };
    let sim_line = t
        .map
        .iter()
        .find(|(k, _)| k.starts_with("sim."))
        .map(|(_, (_, l))| *l)
        .unwrap_or(0);
    sim.validate(np, m).map_err(|e| ConfigError::at(sim_line, e.to_string()))?;

    let mut analysis = AnalysisSettings::default();
    if let Some(b) = t.flag("analysis.include_actuator")? {
        analysis.include_actuator = b;
    }
    if let Some(n) = t.num("analysis.grid_points")? {
        if n < 2.0 || n.fract() != 0.0 || n > 1e6 {
            return Err(ConfigError::at(
                t.line("analysis.grid_points").unwrap_or(0),
                "analysis.grid_points must be an integer in [2, 1e6]",
            ));
        }
        analysis.grid_points = n as usize;
    }
    if let Some(w) = t.num("analysis.omega_min")? {
        analysis.omega_min = w;
    }
    if let Some(w) = t.num("analysis.omega_max")? {
        analysis.omega_max = w;
    }
    if !(1e-3 <= analysis.omega_min && analysis.omega_min < analysis.omega_max && analysis.omega_max <= 1e4) {
        return Err(ConfigError::at(
            t.line("analysis.omega_min").or(t.line("analysis.omega_max")).unwrap_or(0),
            "analysis grid must satisfy 1e-3 <= omega_min < omega_max <= 1e4",
        ));
    }

    let mut output = OutputSettings {
        directory: t.word("output.directory")?,
        ..OutputSettings::default()
    };
    if let Some((v, l)) = t.get("output.columns") {
        let Value::List(items) = v else {
            return Err(ConfigError::at(l, "output.columns must be a list of column names"));
        };
        let mut cols = Vec::new();
        for item in items {
            let Value::Word(w) = item else {
                return Err(ConfigError::at(l, "output.columns must be a list of column names"));
            };
            let g = ColumnGroup::parse(w).ok_or_else(|| ConfigError::at(l, format!("unknown column '{w}'")))?;
            if cols.contains(&g) {
                return Err(ConfigError::at(l, format!("column '{w}' listed twice")));
            }
            cols.push(g);
        }
        if cols.is_empty() {
            return Err(ConfigError::at(l, "output.columns is empty"));
        }
        output.columns = cols;
    }

    Ok(Scenario {
        name,
        plant,
        gains,
        limits,
        params,
        sim,
        analysis,
        output,
    })
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::global(format!("cannot read {}: {e}", path.display())))?;
    parse_scenario(&text)
}

fn fmt_vec(v: impl IntoIterator<Item = f64>) -> String {
    let items: Vec<String> = v.into_iter().map(|x| format!("{x:?}")).collect();
    format!("[{}]", items.join(", "))
}

fn fmt_mat(m: &DMatrix<f64>) -> String {
    let rows: Vec<String> = (0..m.nrows()).map(|i| fmt_vec(m.row(i).iter().copied())).collect();
    format!("[{}]", rows.join(", "))
}

fn emit_signal(out: &mut String, prefix: &str, s: &SignalSpec) {
    let _ = writeln!(out, "{prefix}.kind = {}", s.kind.name());
    let _ = writeln!(out, "{prefix}.amplitude = {:?}", s.amplitude);
    let _ = writeln!(out, "{prefix}.t_start = {:?}", s.t_start);
    let _ = writeln!(out, "{prefix}.t_half = {:?}", s.t_half);
    let _ = writeln!(out, "{prefix}.t_end = {:?}", s.t_end);
    let _ = writeln!(out, "{prefix}.frequency = {:?}", s.frequency);
}

/// Canonical text for a scenario: every key explicit, radians only,
/// floats printed so that they parse back to the same bits.
pub fn emit_canonical(s: &Scenario) -> String {
    let mut o = String::new();
    let _ = writeln!(o, "scenario.name = \"{}\"", s.name);
    let _ = writeln!(o, "plant.A_p = {}", fmt_mat(&s.plant.a_p));
    let _ = writeln!(o, "plant.B_p = {}", fmt_mat(&s.plant.b_p));
    let _ = writeln!(o, "plant.C_p_reg = {}", fmt_mat(&s.plant.c_p_reg));
    let _ = writeln!(o, "plant.D_p_reg = {}", fmt_mat(&s.plant.d_p_reg));
    match &s.gains {
        GainSource::Explicit(g) => {
            let _ = writeln!(o, "gains.K_I = {}", fmt_mat(g.k_i()));
            let _ = writeln!(o, "gains.K_P = {}", fmt_mat(g.k_p()));
        }
        GainSource::Lqr { q_diag, r } => {
            let _ = writeln!(o, "gains.Q_diag = {}", fmt_vec(q_diag.iter().copied()));
            let _ = writeln!(o, "gains.R = {}", fmt_mat(r));
        }
    }
    let _ = writeln!(o, "limits.enabled = {}", s.sim.limits_enabled);
    let _ = writeln!(o, "limits.u_min = {}", fmt_vec(s.limits.u_min().iter().copied()));
    let _ = writeln!(o, "limits.u_max = {}", fmt_vec(s.limits.u_max().iter().copied()));
    let _ = writeln!(o, "aw.enabled = {}", s.sim.aw_enabled);
    let _ = writeln!(o, "aw.alpha_cbf = {:?}", s.params.alpha());
    let _ = writeln!(o, "sim.dt = {:?}", s.sim.dt);
    let _ = writeln!(o, "sim.duration = {:?}", s.sim.duration);
    let _ = writeln!(o, "sim.initial_state = {}", fmt_vec(s.sim.initial_state.iter().copied()));
    emit_signal(&mut o, "sim.command", &s.sim.command);
    let _ = writeln!(o, "sim.command.direction = {}", fmt_vec(s.sim.command_direction.iter().copied()));
    emit_signal(&mut o, "sim.disturbance", &s.sim.disturbance);
    let _ = writeln!(o, "sim.disturbance.column = {}", fmt_vec(s.sim.disturbance_column.iter().copied()));
    let _ = writeln!(o, "sim.actuator.enabled = {}", s.sim.actuator.enabled);
    let _ = writeln!(o, "sim.actuator.natural_frequency = {:?}", s.sim.actuator.natural_frequency);
    let _ = writeln!(o, "sim.actuator.damping_ratio = {:?}", s.sim.actuator.damping_ratio);
    let _ = writeln!(o, "analysis.include_actuator = {}", s.analysis.include_actuator);
    let _ = writeln!(o, "analysis.grid_points = {}", s.analysis.grid_points);
    let _ = writeln!(o, "analysis.omega_min = {:?}", s.analysis.omega_min);
    let _ = writeln!(o, "analysis.omega_max = {:?}", s.analysis.omega_max);
    if let Some(dir) = &s.output.directory {
        let _ = writeln!(o, "output.directory = \"{dir}\"");
    }
    let cols: Vec<&str> = s.output.columns.iter().map(|c| c.name()).collect();
    let _ = writeln!(o, "output.columns = [{}]", cols.join(", "));
    o
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "
plant.A_p = [[-1.0]]
plant.B_p = [[1.0]]
plant.C_p_reg = [[1.0]]
gains.K_I = [[2.0]]
gains.K_P = [[0.5]]
limits.u_min = [-1]
limits.u_max = [1]
aw.alpha_cbf = 2
sim.duration = 1
";

    #[test]
    fn minimal_file_gets_defaults() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.name, "unnamed");
        assert!(s.sim.limits_enabled && !s.sim.aw_enabled && !s.sim.actuator.enabled);
        assert_eq!(s.plant.d_p_reg, DMatrix::zeros(1, 1));
        assert_eq!(s.analysis, AnalysisSettings::default());
        assert_eq!(s.output.columns, ColumnGroup::DEFAULT.to_vec());
    }

    #[test]
    fn empty_file_names_first_missing_block() {
        let e = parse_scenario("").unwrap_err();
        assert_eq!(e.line, None);
        assert!(e.message.contains("'plant'"), "{e}");
        let e = parse_scenario("# nothing\nplant.A_p = [[-1]]\n").unwrap_err();
        assert!(e.message.contains("'gains'"), "{e}");
    }

    #[test]
    fn gains_and_weights_are_exclusive() {
        let text = format!("{MINIMAL}gains.Q_diag = [1, 1]\ngains.R = [[1]]\n");
        let e = parse_scenario(&text).unwrap_err();
        assert!(e.message.contains("not both"), "{e}");
        assert!(e.line.is_some());
    }

    #[test]
    fn unknown_and_duplicate_keys() {
        let e = parse_scenario(&format!("{MINIMAL}sim.bogus = 1\n")).unwrap_err();
        assert_eq!(e.line, Some(11));
        assert!(e.message.contains("unknown key"));
        let e = parse_scenario(&format!("{MINIMAL}sim.dt = 0.001\nsim.dt = 0.002\n")).unwrap_err();
        assert_eq!(e.line, Some(12));
        assert!(e.message.contains("first set on line 11"));
    }

    #[test]
    fn degree_keys_convert_and_conflict() {
        let text = MINIMAL.replace("limits.u_min = [-1]", "limits.u_min_deg = [-10]");
        let s = parse_scenario(&text).unwrap();
        assert_eq!(s.limits.u_min()[0], -10.0 * PI / 180.0);
        let e = parse_scenario(&format!("{text}limits.u_min = [-1]\n")).unwrap_err();
        assert!(e.message.contains("both"), "{e}");
    }

    #[test]
    fn multi_line_lists_and_comments() {
        let text = MINIMAL.replace(
            "plant.A_p = [[-1.0]]",
            "plant.A_p = [  # open\n   [-1.0]   # row\n]",
        );
        let s = parse_scenario(&text).unwrap();
        assert_eq!(s.plant.a_p[(0, 0)], -1.0);
        let e = parse_scenario(&MINIMAL.replace("[[-1.0]]", "[[-1.0]")).unwrap_err();
        assert_eq!(e.line, Some(2));
    }

    #[test]
    fn validation_errors_point_at_lines() {
        let e = parse_scenario(&MINIMAL.replace("[[-1.0]]", "[[1.0]]")).unwrap_err();
        assert_eq!(e.line, Some(2));
        assert!(e.message.contains("Hurwitz"));
        let e = parse_scenario(&MINIMAL.replace("gains.K_P = [[0.5]]", "gains.K_P = [[0.5, 1]]")).unwrap_err();
        assert_eq!(e.line, Some(5));
        let e = parse_scenario(&MINIMAL.replace("[[2.0]]", "[[0.0]]")).unwrap_err();
        assert!(e.line.is_some());
        let e = parse_scenario(&format!("{MINIMAL}aw.enabled = maybe\n")).unwrap_err();
        assert_eq!(e.line, Some(11));
        let e = parse_scenario(&format!("{MINIMAL}sim.dt = 1e-1\n")).unwrap_err();
        assert!(e.message.contains("exceeds"), "{e}");
        let e = parse_scenario(&format!("{MINIMAL}sim.dt = 1.2.3\n")).unwrap_err();
        assert!(e.message.contains("malformed"), "{e}");
    }

    #[test]
    fn transmission_zero_rejected_for_lqr() {
        let text = "
plant.A_p = [[-1.0, 0.0], [0.0, -2.0]]
plant.B_p = [[1.0], [1.0]]
plant.C_p_reg = [[2.0, -2.0]]
gains.Q_diag = [1, 1, 1]
gains.R = [[1]]
limits.u_min = [-1]
limits.u_max = [1]
aw.alpha_cbf = 1
sim.dt = 0.001
";
        // DC gain C(−A)⁻¹B = 2 − 1 = 1, nonzero
        assert!(parse_scenario(text).is_ok());
        let zero = text.replace("[[2.0, -2.0]]", "[[1.0, -2.0]]");
        let e = parse_scenario(&zero).unwrap_err();
        assert!(e.message.contains("transmission zero"), "{e}");
    }

    #[test]
    fn canonical_round_trip() {
        let mut text = MINIMAL.to_string();
        text.push_str(
            "sim.command.kind = doublet\nsim.command.amplitude_deg = 10\nsim.disturbance.kind = sinusoid\n\
             sim.disturbance.amplitude = 0.1\nsim.disturbance.frequency = 2\nsim.actuator.enabled = on\n\
             output.columns = [t, e_yI, u_rate]\noutput.directory = \"out dir/x\"\nscenario.name = demo\n",
        );
        let s = parse_scenario(&text).unwrap();
        let canon = emit_canonical(&s);
        let again = parse_scenario(&canon).unwrap();
        assert_eq!(s, again);
        assert_eq!(canon, emit_canonical(&again));
    }

    #[test]
    fn values() {
        assert_eq!(parse_value("[1, [2], on]").unwrap(), Value::List(vec![
            Value::Num(1.0),
            Value::List(vec![Value::Num(2.0)]),
            Value::Bool(true)
        ]));
        assert_eq!(parse_value("[]").unwrap(), Value::List(vec![]));
        assert!(parse_value("[1,]").is_err());
        assert!(parse_value("1 2").is_err());
        assert_eq!(parse_value("\"a b\"").unwrap(), Value::Word("a b".into()));
    }
}
