//! Strict JSON scenarios: model, detector, attack, simulation, bound and
//! heatmap settings in one file. Attack parameters may be arithmetic in the
//! token `alpha`, resolved once the detector threshold is known.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::attack::{AttackKind, AttackSpec, DirectionMode};
use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::geom::GeomSumConfig;
use crate::lmi::LmiGrid;
use crate::montecarlo::CloudConfig;
use crate::plant::{build_model, PlantModel, SimConfig};
use crate::system;

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub model: ModelBlock,
    #[serde(default)]
    pub detector: DetectorBlock,
    #[serde(default)]
    pub attack: Option<AttackBlock>,
    #[serde(default)]
    pub sim: SimBlock,
    #[serde(default)]
    pub bounds: BoundsBlock,
    #[serde(default)]
    pub heatmap: HeatmapBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    #[serde(rename = "F")]
    pub f: Rows,
    #[serde(rename = "G")]
    pub g: Rows,
    #[serde(rename = "C")]
    pub c: Rows,
    #[serde(rename = "K")]
    pub k: Rows,
    #[serde(rename = "R1")]
    pub r1: Rows,
    #[serde(rename = "R2")]
    pub r2: Rows,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub l: Option<Rows>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorBlock {
    /// False-alarm rate.
    #[serde(rename = "A")]
    pub rate: f64,
    /// Explicit threshold; tuned from `A` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl Default for DetectorBlock {
    fn default() -> Self {
        DetectorBlock {
            rate: system::FALSE_ALARM_RATE,
            alpha: None,
        }
    }
}

/// A number or an arithmetic expression in `alpha`, e.g. `"2*alpha"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Number(f64),
    Expr(String),
}

impl Param {
    pub fn resolve(&self, alpha: f64) -> std::result::Result<f64, String> {
        match self {
            Param::Number(v) => Ok(*v),
            Param::Expr(s) => eval_expr(s, alpha),
        }
    }
}

impl From<f64> for Param {
    fn from(v: f64) -> Self {
        Param::Number(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackBlock {
    /// One of the named presets; excludes the explicit fields below.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<AttackKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<Param>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w1: Option<Param>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<Param>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w2: Option<Param>,
    /// Mass above the threshold for hidden attacks; defaults to the detector's `A`.
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(default)]
    pub direction: DirectionMode,
}

impl AttackBlock {
    pub fn preset(name: &str) -> Self {
        AttackBlock {
            preset: Some(name.to_string()),
            kind: None,
            c1: None,
            w1: None,
            c2: None,
            w2: None,
            rate: None,
            direction: DirectionMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimBlock {
    pub horizon: usize,
    /// First attacked step; `null` disables the attack.
    pub attack_start: Option<usize>,
    pub master_seed: u64,
    pub trials: usize,
    pub initial_state: Option<Vec<f64>>,
    pub truncate_noise: bool,
    pub noise_gain: f64,
    pub burn_in: usize,
    pub stride: usize,
}

impl Default for SimBlock {
    fn default() -> Self {
        SimBlock {
            horizon: 150,
            attack_start: Some(1),
            master_seed: 1,
            trials: 1000,
            initial_state: None,
            truncate_noise: false,
            noise_gain: 1.0,
            burn_in: 50,
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    Lmi,
    #[serde(alias = "geom")]
    Geometric,
    #[default]
    Both,
}

impl MethodChoice {
    pub fn lmi(self) -> bool {
        matches!(self, MethodChoice::Lmi | MethodChoice::Both)
    }

    pub fn geometric(self) -> bool {
        matches!(self, MethodChoice::Geometric | MethodChoice::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsBlock {
    pub method: MethodChoice,
    pub geom: GeomSumConfig,
    pub lmi: LmiGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeatmapBlock {
    pub resolution: usize,
    pub trials: usize,
    pub horizon: usize,
    pub burn_in: usize,
    pub stride: usize,
}

impl Default for HeatmapBlock {
    fn default() -> Self {
        // 1000 trials × 10 kept steps = 10⁴ points per cell.
        HeatmapBlock {
            resolution: 16,
            trials: 1000,
            horizon: 150,
            burn_in: 50,
            stride: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    pub dir: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock {
            dir: PathBuf::from("out"),
            formats: vec![Format::Csv, Format::Json, Format::Svg],
        }
    }
}

impl OutputBlock {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

/// Everything a pipeline run needs, validated and with `alpha` substituted.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub model: PlantModel,
    pub detector: DetectorConfig,
    pub vbar: f64,
    pub spec: Option<AttackSpec>,
    pub sim: SimConfig,
    pub cloud: CloudConfig,
    pub heatmap: CloudConfig,
    pub resolution: usize,
    pub method: MethodChoice,
    pub geom: GeomSumConfig,
    pub lmi: LmiGrid,
}

fn schema(path: &str, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.to_string(),
        message: message.into(),
    }
}

fn matrix(rows: &Rows, path: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(schema(path, "matrix must be non-empty"));
    }
    if let Some(i) = rows.iter().position(|row| row.len() != c) {
        return Err(schema(&format!("{path}[{i}]"), format!("row has {} entries, expected {c}", rows[i].len())));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn to_rows(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl Scenario {
    /// Parses strictly: unknown keys and type errors report their JSON path
    /// and line.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            schema(&path, format!("{inner}"))
        })?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| schema(&path.display().to_string(), format!("cannot read scenario: {e}")))?;
        Self::from_json_str(&text)
    }

    /// The built-in two-state reference loop with a boundary zero-alarm attack.
    pub fn reference() -> Self {
        let m = |a| to_rows(&system::mat2(a));
        Scenario {
            model: ModelBlock {
                f: m(system::F),
                g: m(system::G),
                c: m(system::C),
                k: m(system::K),
                r1: m(system::R1),
                r2: m(system::R2),
                l: None,
            },
            detector: DetectorBlock::default(),
            attack: Some(AttackBlock::preset("ZA.C")),
            sim: SimBlock {
                truncate_noise: true,
                ..SimBlock::default()
            },
            bounds: BoundsBlock::default(),
            heatmap: HeatmapBlock::default(),
            output: OutputBlock::default(),
        }
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let mb = &self.model;
        let l = mb.l.as_ref().map(|l| matrix(l, "model.L")).transpose()?;
        let model = build_model(
            matrix(&mb.f, "model.F")?,
            matrix(&mb.g, "model.G")?,
            matrix(&mb.c, "model.C")?,
            matrix(&mb.k, "model.K")?,
            matrix(&mb.r1, "model.R1")?,
            matrix(&mb.r2, "model.R2")?,
            l,
        )?;
        let rate = self.detector.rate;
        if !(rate > 0.0 && rate < 1.0) {
            return Err(schema("detector.A", format!("false-alarm rate must lie in (0, 1), got {rate}")));
        }
        let detector = match self.detector.alpha {
            Some(alpha) => DetectorConfig::with_alpha(model.residual_covariance(), alpha, rate)
                .map_err(|e| schema("detector.alpha", e.to_string()))?,
            None => DetectorConfig::tuned(model.residual_covariance(), rate)?,
        };
        let vbar = detector.vbar(model.state_dim())?;
        let spec = self
            .attack
            .as_ref()
            .map(|a| resolve_attack(a, detector.alpha, rate, model.output_dim()))
            .transpose()?;

        let s = &self.sim;
        let sim = SimConfig {
            horizon: s.horizon,
            attack_start: s.attack_start,
            master_seed: s.master_seed,
            trials: s.trials,
            initial_state: s.initial_state.clone(),
            truncate_noise: s.truncate_noise,
            noise_gain: s.noise_gain,
        };
        let cloud = CloudConfig {
            sim: sim.clone(),
            burn_in: s.burn_in,
            stride: s.stride,
        };
        cloud.validate().map_err(|e| schema("sim", e.to_string()))?;
        if let Some(x0) = &s.initial_state {
            if x0.len() != model.state_dim() {
                return Err(schema("sim.initial_state", format!("expected {} entries", model.state_dim())));
            }
        }

        let h = &self.heatmap;
        let mut heatmap = CloudConfig::new(h.trials, h.horizon, s.master_seed);
        heatmap.burn_in = h.burn_in;
        heatmap.stride = h.stride;
        heatmap.validate().map_err(|e| schema("heatmap", e.to_string()))?;
        if h.resolution < 4 {
            return Err(schema("heatmap.resolution", "must be at least 4"));
        }
        self.bounds.geom.validate().map_err(|e| schema("bounds.geom", e.to_string()))?;
        self.bounds.lmi.validate().map_err(|e| schema("bounds.lmi", e.to_string()))?;

        Ok(Resolved {
            model,
            detector,
            vbar,
            spec,
            sim,
            cloud,
            heatmap,
            resolution: h.resolution,
            method: self.bounds.method,
            geom: self.bounds.geom.clone(),
            lmi: self.bounds.lmi.clone(),
        })
    }
}

fn resolve_attack(block: &AttackBlock, alpha: f64, default_rate: f64, p: usize) -> Result<AttackSpec> {
    let rate = block.rate.unwrap_or(default_rate);
    let spec = if let Some(name) = &block.preset {
        let explicit = [&block.c1, &block.w1, &block.c2, &block.w2];
        if block.kind.is_some() || explicit.iter().any(|v| v.is_some()) {
            return Err(schema("attack", "`preset` excludes kind/c1/w1/c2/w2"));
        }
        AttackSpec::preset(name, alpha, rate).map_err(|e| schema("attack.preset", e.to_string()))?
    } else {
        let kind = block
            .kind
            .ok_or_else(|| schema("attack.kind", "either `preset` or `kind` is required"))?;
        let field = |name: &str, v: &Option<Param>, default: Option<f64>| -> Result<f64> {
            let path = format!("attack.{name}");
            match v {
                Some(p) => p.resolve(alpha).map_err(|m| schema(&path, m)),
                None => default.ok_or_else(|| schema(&path, "missing field")),
            }
        };
        let c1 = field("c1", &block.c1, None)?;
        let w1 = field("w1", &block.w1, Some(0.0))?;
        match kind {
            AttackKind::ZeroAlarm => {
                if block.c2.is_some() || block.w2.is_some() {
                    return Err(schema("attack", "zero-alarm attacks take no c2/w2"));
                }
                AttackSpec::zero_alarm(alpha, c1, w1)
            }
            AttackKind::Hidden => {
                let c2 = field("c2", &block.c2, None)?;
                let w2 = field("w2", &block.w2, Some(0.0))?;
                AttackSpec::hidden(alpha, c1, w1, c2, w2, rate)
            }
        }
        .map_err(|e| schema("attack", e.to_string()))?
    };
    if let DirectionMode::Fixed(u) = &block.direction {
        if u.len() != p {
            return Err(schema("attack.direction", format!("fixed direction needs {p} entries")));
        }
    }
    spec.with_direction(block.direction.clone())
        .map_err(|e| schema("attack.direction", e.to_string()))
}

/// Evaluates `+ - * /`, parentheses, numbers and the identifier `alpha`.
pub fn eval_expr(src: &str, alpha: f64) -> std::result::Result<f64, String> {
    let mut p = ExprParser {
        s: src.as_bytes(),
        pos: 0,
        alpha,
    };
    let v = p.sum()?;
    p.skip_ws();
    if p.pos != p.s.len() {
        return Err(format!("unexpected {:?} at offset {} in {src:?}", p.s[p.pos] as char, p.pos));
    }
    if !v.is_finite() {
        return Err(format!("expression {src:?} is not finite"));
    }
    Ok(v)
}

struct ExprParser<'a> {
    s: &'a [u8],
    pos: usize,
    alpha: f64,
}

impl ExprParser<'_> {
    fn skip_ws(&mut self) {
        while self.s.get(self.pos).is_some_and(|c| c.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.pos).copied()
    }

    fn sum(&mut self) -> std::result::Result<f64, String> {
        let mut v = self.product()?;
        while let Some(op @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.product()?;
            v = if op == b'+' { v + rhs } else { v - rhs };
        }
        Ok(v)
    }

    fn product(&mut self) -> std::result::Result<f64, String> {
        let mut v = self.unary()?;
        while let Some(op @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.unary()?;
            v = if op == b'*' { v * rhs } else { v / rhs };
        }
        Ok(v)
    }

    fn unary(&mut self) -> std::result::Result<f64, String> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(-self.unary()?)
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.atom(),
        }
    }

    fn atom(&mut self) -> std::result::Result<f64, String> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let v = self.sum()?;
                if self.peek() != Some(b')') {
                    return Err(format!("missing ')' at offset {}", self.pos));
                }
                self.pos += 1;
                Ok(v)
            }
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.s.get(self.pos).is_some_and(|c| c.is_ascii_alphanumeric() || *c == b'_') {
                    self.pos += 1;
                }
                match &self.s[start..self.pos] {
                    b"alpha" => Ok(self.alpha),
                    other => Err(format!("unknown identifier {:?}", String::from_utf8_lossy(other))),
                }
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let start = self.pos;
                while let Some(&c) = self.s.get(self.pos) {
                    let exp_sign = (c == b'+' || c == b'-') && matches!(self.s[self.pos - 1], b'e' | b'E');
                    if c.is_ascii_digit() || c == b'.' || c == b'e' || c == b'E' || exp_sign {
                        self.pos += 1;
                    } else {
                        break;
                    }
                }
                let text = std::str::from_utf8(&self.s[start..self.pos]).unwrap_or_default();
                text.parse().map_err(|_| format!("bad number {text:?}"))
            }
            Some(c) => Err(format!("unexpected {:?} at offset {}", c as char, self.pos)),
            None => Err("unexpected end of expression".into()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expressions() {
        let a = 6.0;
        for (s, v) in [
            ("alpha", 6.0),
            ("2*alpha", 12.0),
            ("alpha/8", 0.75),
            (" 1.5 * alpha ", 9.0),
            ("100*alpha", 600.0),
            ("-(alpha - 1) + 2e1", 15.0),
            ("alpha*alpha/(2+1)", 12.0),
            ("1e-1*alpha", 0.6),
        ] {
            assert!((eval_expr(s, a).unwrap() - v).abs() < 1e-12, "{s}");
        }
        for s in ["", "beta", "2*", "(alpha", "alpha alpha", "1/0", "3..1"] {
            assert!(eval_expr(s, a).is_err(), "{s}");
        }
    }

    #[test]
    fn reference_round_trips_and_resolves() {
        let text = serde_json::to_string_pretty(&Scenario::reference()).unwrap();
        let back = Scenario::from_json_str(&text).unwrap();
        assert_eq!(back, Scenario::reference());
        let r = back.resolve().unwrap();
        assert!((r.detector.alpha - 5.991464547107979).abs() < 1e-9);
        assert_eq!(r.spec.unwrap().c1, r.detector.alpha);
        assert_eq!(r.cloud.sim.trials * (r.cloud.sim.horizon - r.cloud.burn_in), 100_000);
    }

    const MODEL: &str = r#""model": {"F": [[0.5]], "G": [[1]], "C": [[1]], "K": [[-0.2]], "R1": [[1]], "R2": [[1]]}"#;

    #[test]
    fn hidden_tokens_resolve() {
        let text = format!(
            r#"{{ {MODEL}, "detector": {{"A": 0.5}},
               "attack": {{"kind": "hidden", "c1": "alpha", "w1": 0, "c2": "2*alpha", "w2": 0}} }}"#
        );
        let r = Scenario::from_json_str(&text).unwrap().resolve().unwrap();
        let spec = r.spec.unwrap();
        let alpha = r.detector.alpha;
        assert!((alpha - 0.454936423119572).abs() < 1e-9);
        assert_eq!(spec.c2, 2.0 * alpha);
        assert_eq!(spec.rate, 0.5);
    }

    #[test]
    fn unknown_key_names_its_path() {
        let text = format!("{{ {MODEL},\n \"sim\": {{\"horizon\": 10, \"hoizon\": 3}} }}");
        match Scenario::from_json_str(&text) {
            Err(Error::Schema { path, message }) => {
                assert_eq!(path, "sim.hoizon");
                assert!(message.contains("line 2"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_inputs_are_schema_errors() {
        let cases = [
            (r#""attack": {"kind": "zero_alarm", "c1": "gamma"}"#, "attack.c1"),
            (r#""attack": {"preset": "ZA.C", "c1": 1}"#, "attack"),
            (r#""attack": {"kind": "zero_alarm", "c1": "2*alpha"}"#, "attack"),
            (r#""detector": {"A": 1.5}"#, "detector.A"),
            (r#""heatmap": {"resolution": 3}"#, "heatmap.resolution"),
        ];
        for (block, want) in cases {
            let text = format!("{{ {MODEL}, {block} }}");
            match Scenario::from_json_str(&text).and_then(|s| s.resolve()) {
                Err(Error::Schema { path, .. }) => assert_eq!(path, want, "{block}"),
                other => panic!("{block}: {other:?}"),
            }
        }
        let ragged = r#"{"model": {"F": [[0.5, 1], [0]], "G": [[1]], "C": [[1]], "K": [[0]], "R1": [[1]], "R2": [[1]]}}"#;
        assert!(matches!(
            Scenario::from_json_str(ragged).unwrap().resolve(),
            Err(Error::Schema { path, .. }) if path == "model.F[1]"
        ));
    }

    #[test]
    fn unstable_model_is_an_invariant_error() {
        let text = r#"{"model": {"F": [[1.5]], "G": [[1]], "C": [[1]], "K": [[0]], "R1": [[1]], "R2": [[1]]}}"#;
        let err = Scenario::from_json_str(text).unwrap().resolve().unwrap_err();
        assert_eq!(err.class(), crate::ErrorClass::Invariant);
    }
}
