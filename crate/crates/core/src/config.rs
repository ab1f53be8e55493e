//! TOML model configuration.
//!
//! A document describes one model family. It either spells out the
//! matrices (`dim`, `hamiltonian`, `detected`, `undetected`) or names a
//! built-in system (`lambda_system` or `two_level`), and always carries a
//! `sweep` table naming the single scalar that plays the role of θ.
//!
//! ```toml
//! [lambda_system]
//! omega0 = 5.0
//! omega1 = 3.0
//! gamma0 = 1.0
//! gamma1 = 0.5
//! gamma_deph = 0.1
//!
//! [sweep]
//! parameter = "delta1"
//! theta0 = 1.0
//! ```
//!
//! Swept scalars for explicit matrices are addressed by path:
//! `hamiltonian.real[i][j]` (sets both `(i,j)` and `(j,i)`),
//! `hamiltonian.imag[i][j]` (sets `(i,j)` and `−(j,i)`),
//! `detected[k].efficiency`, `detected[k].operator.real[i][j]`,
//! `detected[k].operator.imag[i][j]` and the same two for `undetected[k]`.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::model::{
    DetectedChannel, LambdaParams, OpenSystemModel, ParameterizedModel, TwoLevelParams,
    UndetectedDissipator,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSpec {
    pub real: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imag: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectedSpec {
    pub final_state: usize,
    #[serde(default = "default_efficiency")]
    pub efficiency: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub operator: MatrixSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UndetectedSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub operator: MatrixSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: String,
    pub theta0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fd_step: Option<f64>,
}

fn default_efficiency() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    /// Free-form note; rates are in units of a reference rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hamiltonian: Option<MatrixSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_system: Option<LambdaParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub two_level: Option<TwoLevelParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detected: Option<Vec<DetectedSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub undetected: Option<Vec<UndetectedSpec>>,
    pub sweep: SweepSpec,
}

#[derive(Clone, Debug, PartialEq)]
enum Slot {
    Lambda(String),
    TwoLevel(String),
    HamReal(usize, usize),
    HamImag(usize, usize),
    Efficiency(usize),
    DetectedOp { k: usize, imag: bool, i: usize, j: usize },
    UndetectedOp { k: usize, imag: bool, i: usize, j: usize },
}

/// Parses `[a][b]...` index suffixes.
fn indices(s: &str) -> Option<Vec<usize>> {
    let mut out = Vec::new();
    let mut rest = s;
    while !rest.is_empty() {
        let inner = rest.strip_prefix('[')?;
        let close = inner.find(']')?;
        out.push(inner[..close].trim().parse().ok()?);
        rest = &inner[close + 1..];
    }
    Some(out)
}

fn parse_slot(path: &str) -> Option<Slot> {
    if let Some(rest) = path.strip_prefix("hamiltonian.real") {
        let ix = indices(rest)?;
        return (ix.len() == 2).then(|| Slot::HamReal(ix[0], ix[1]));
    }
    if let Some(rest) = path.strip_prefix("hamiltonian.imag") {
        let ix = indices(rest)?;
        return (ix.len() == 2).then(|| Slot::HamImag(ix[0], ix[1]));
    }
    for (prefix, detected) in [("detected", true), ("undetected", false)] {
        let Some(rest) = path.strip_prefix(prefix) else { continue };
        if !rest.starts_with('[') {
            continue;
        }
        let close = rest.find(']')?;
        let k: usize = rest[1..close].trim().parse().ok()?;
        let field = &rest[close + 1..];
        if detected && field == ".efficiency" {
            return Some(Slot::Efficiency(k));
        }
        let (imag, ix) = if let Some(r) = field.strip_prefix(".operator.real") {
            (false, indices(r)?)
        } else if let Some(r) = field.strip_prefix(".operator.imag") {
            (true, indices(r)?)
        } else {
            return None;
        };
        if ix.len() != 2 {
            return None;
        }
        let (i, j) = (ix[0], ix[1]);
        return Some(if detected {
            Slot::DetectedOp { k, imag, i, j }
        } else {
            Slot::UndetectedOp { k, imag, i, j }
        });
    }
    None
}

fn set_entry(m: &mut MatrixSpec, imag: bool, i: usize, j: usize, v: f64, path: &str) -> Result<()> {
    let dim = m.real.len();
    let grid = if imag {
        m.imag.get_or_insert_with(|| vec![vec![0.0; dim]; dim])
    } else {
        &mut m.real
    };
    let cell = grid
        .get_mut(i)
        .and_then(|row| row.get_mut(j))
        .ok_or_else(|| Error::config(path, format!("index [{i}][{j}] out of range")))?;
    *cell = v;
    Ok(())
}

fn to_matrix(spec: &MatrixSpec, dim: usize, path: &str) -> Result<CMatrix> {
    let check = |rows: &Vec<Vec<f64>>, part: &str| -> Result<()> {
        if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::config(
                format!("{path}.{part}"),
                format!("expected a {dim}x{dim} array"),
            ));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::config(format!("{path}.{part}"), "non-finite entry"));
        }
        Ok(())
    };
    check(&spec.real, "real")?;
    if let Some(im) = &spec.imag {
        check(im, "imag")?;
    }
    Ok(CMatrix::from_fn(dim, dim, |i, j| {
        let im = spec.imag.as_ref().map_or(0.0, |m| m[i][j]);
        Complex64::new(spec.real[i][j], im)
    }))
}

fn from_matrix(m: &CMatrix) -> MatrixSpec {
    let dim = m.nrows();
    let real = (0..dim).map(|i| (0..dim).map(|j| m[(i, j)].re).collect()).collect();
    let imag: Vec<Vec<f64>> = (0..dim).map(|i| (0..dim).map(|j| m[(i, j)].im).collect()).collect();
    let has_imag = imag.iter().flatten().any(|v| *v != 0.0);
    MatrixSpec { real, imag: has_imag.then_some(imag) }
}

impl ModelConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let path = e
                .span()
                .and_then(|span| locate_key(text, span.start))
                .unwrap_or_else(|| "<document>".to_string());
            Error::config(path, message)
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model config is always representable as TOML")
    }

    /// Explicit-matrix config describing `model`, sweeping `parameter`.
    pub fn from_model(model: &OpenSystemModel, sweep: SweepSpec) -> Self {
        ModelConfig {
            dim: Some(model.dim()),
            units: None,
            hamiltonian: Some(from_matrix(model.hamiltonian())),
            lambda_system: None,
            two_level: None,
            detected: Some(
                model
                    .detected()
                    .iter()
                    .map(|c| DetectedSpec {
                        final_state: c.final_state(),
                        efficiency: c.efficiency(),
                        label: Some(c.label().to_string()),
                        operator: from_matrix(c.operator()),
                    })
                    .collect(),
            ),
            undetected: Some(
                model
                    .undetected()
                    .iter()
                    .map(|u| UndetectedSpec {
                        label: Some(u.label().to_string()),
                        operator: from_matrix(u.operator()),
                    })
                    .collect(),
            ),
            sweep,
        }
    }

    fn slot(&self) -> Result<Slot> {
        let p = self.sweep.parameter.trim();
        let path = "sweep.parameter";
        if self.lambda_system.is_some() {
            return if LambdaParams::NAMES.contains(&p) {
                Ok(Slot::Lambda(p.to_string()))
            } else {
                Err(Error::config(path, format!("`{p}` is not a lambda_system parameter")))
            };
        }
        if self.two_level.is_some() {
            return if TwoLevelParams::NAMES.contains(&p) {
                Ok(Slot::TwoLevel(p.to_string()))
            } else {
                Err(Error::config(path, format!("`{p}` is not a two_level parameter")))
            };
        }
        let slot = parse_slot(p)
            .ok_or_else(|| Error::config(path, format!("cannot address scalar `{p}`")))?;
        if let Slot::HamImag(i, j) = slot {
            if i == j {
                return Err(Error::config(path, "diagonal of a Hermitian matrix is real"));
            }
        }
        Ok(slot)
    }

    fn substituted(&self, slot: &Slot, theta: f64) -> Result<ModelConfig> {
        let mut cfg = self.clone();
        let path = self.sweep.parameter.as_str();
        let missing = || Error::config(path, "addressed element does not exist");
        match slot {
            Slot::Lambda(name) => {
                let p = cfg.lambda_system.as_mut().ok_or_else(missing)?;
                *p = p.with(name, theta)?;
            }
            Slot::TwoLevel(name) => {
                let p = cfg.two_level.as_mut().ok_or_else(missing)?;
                *p = p.with(name, theta)?;
            }
            Slot::HamReal(i, j) => {
                let h = cfg.hamiltonian.as_mut().ok_or_else(missing)?;
                set_entry(h, false, *i, *j, theta, path)?;
                set_entry(h, false, *j, *i, theta, path)?;
            }
            Slot::HamImag(i, j) => {
                let h = cfg.hamiltonian.as_mut().ok_or_else(missing)?;
                set_entry(h, true, *i, *j, theta, path)?;
                set_entry(h, true, *j, *i, -theta, path)?;
            }
            Slot::Efficiency(k) => {
                let d = cfg.detected.as_mut().and_then(|d| d.get_mut(*k)).ok_or_else(missing)?;
                d.efficiency = theta;
            }
            Slot::DetectedOp { k, imag, i, j } => {
                let d = cfg.detected.as_mut().and_then(|d| d.get_mut(*k)).ok_or_else(missing)?;
                set_entry(&mut d.operator, *imag, *i, *j, theta, path)?;
            }
            Slot::UndetectedOp { k, imag, i, j } => {
                let u = cfg.undetected.as_mut().and_then(|u| u.get_mut(*k)).ok_or_else(missing)?;
                set_entry(&mut u.operator, *imag, *i, *j, theta, path)?;
            }
        }
        Ok(cfg)
    }

    /// Builds the model described by the document as written.
    pub fn build(&self) -> Result<OpenSystemModel> {
        let kinds = [
            self.hamiltonian.is_some(),
            self.lambda_system.is_some(),
            self.two_level.is_some(),
        ];
        match kinds.iter().filter(|k| **k).count() {
            0 => {
                return Err(Error::config(
                    "<document>",
                    "one of `hamiltonian`, `lambda_system` or `two_level` is required",
                ))
            }
            1 => {}
            _ => {
                return Err(Error::config(
                    "<document>",
                    "`hamiltonian`, `lambda_system` and `two_level` are mutually exclusive",
                ))
            }
        }
        if let Some(p) = &self.lambda_system {
            self.builtin_checks("lambda_system", 3)?;
            return p.build().map_err(|e| Error::config("lambda_system", e.to_string()));
        }
        if let Some(p) = &self.two_level {
            self.builtin_checks("two_level", 2)?;
            return p.build().map_err(|e| Error::config("two_level", e.to_string()));
        }

        let dim = self.dim.ok_or_else(|| Error::config("dim", "missing field"))?;
        if dim < 2 {
            return Err(Error::config("dim", "must be at least 2"));
        }
        let h = to_matrix(self.hamiltonian.as_ref().expect("checked above"), dim, "hamiltonian")?;
        let detected_specs =
            self.detected.as_ref().ok_or_else(|| Error::config("detected", "missing field"))?;
        if detected_specs.is_empty() {
            return Err(Error::config("detected", "at least one detected channel is required"));
        }
        let mut detected = Vec::with_capacity(detected_specs.len());
        for (k, d) in detected_specs.iter().enumerate() {
            let path = format!("detected[{k}]");
            let op = to_matrix(&d.operator, dim, &format!("{path}.operator"))?;
            if d.final_state >= dim {
                return Err(Error::config(
                    format!("{path}.final_state"),
                    format!("{} out of range for dim {dim}", d.final_state),
                ));
            }
            if !(0.0..=1.0).contains(&d.efficiency) {
                return Err(Error::config(
                    format!("{path}.efficiency"),
                    format!("{} outside [0, 1]", d.efficiency),
                ));
            }
            let label = d.label.clone().unwrap_or_else(|| format!("channel {k}"));
            let ch = DetectedChannel::new(op, d.final_state, d.efficiency, label)
                .map_err(|e| Error::config(format!("{path}.operator"), e.to_string()))?;
            detected.push(ch);
        }
        let mut undetected = Vec::new();
        for (k, u) in self.undetected.iter().flatten().enumerate() {
            let path = format!("undetected[{k}]");
            let op = to_matrix(&u.operator, dim, &format!("{path}.operator"))?;
            let label = u.label.clone().unwrap_or_else(|| format!("dissipator {k}"));
            undetected.push(
                UndetectedDissipator::new(op, label)
                    .map_err(|e| Error::config(format!("{path}.operator"), e.to_string()))?,
            );
        }
        OpenSystemModel::new(h, detected, undetected).map_err(|e| {
            let path = if e.to_string().contains("Hermitian") { "hamiltonian" } else { "detected" };
            Error::config(path, e.to_string())
        })
    }

    fn builtin_checks(&self, key: &str, dim: usize) -> Result<()> {
        if self.detected.is_some() {
            return Err(Error::config("detected", format!("must be absent when `{key}` is given")));
        }
        if self.undetected.is_some() {
            return Err(Error::config(
                "undetected",
                format!("must be absent when `{key}` is given"),
            ));
        }
        match self.dim {
            Some(d) if d != dim => Err(Error::config("dim", format!("`{key}` has dim {dim}"))),
            _ => Ok(()),
        }
    }

    /// Validates the document eagerly at `theta0` and returns the family.
    pub fn parameterized(&self) -> Result<ParameterizedModel> {
        let slot = self.slot()?;
        let theta0 = self.sweep.theta0;
        if !theta0.is_finite() {
            return Err(Error::config("sweep.theta0", "must be finite"));
        }
        self.substituted(&slot, theta0)?.build()?;
        let cfg = Arc::new(self.clone());
        let pm = ParameterizedModel::new(self.sweep.parameter.trim(), theta0, move |theta| {
            cfg.substituted(&slot, theta)?.build()
        });
        match self.sweep.fd_step {
            Some(h) => pm
                .with_fd_step(h)
                .map_err(|e| Error::config("sweep.fd_step", e.to_string())),
            None => Ok(pm),
        }
    }
}

/// Best-effort dotted key for an error at byte `offset`.
fn locate_key(text: &str, offset: usize) -> Option<String> {
    let before = text.get(..offset)?;
    let mut table = String::new();
    let mut key = None;
    for line in before.lines() {
        let t = line.trim();
        if t.starts_with('[') {
            table = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            key = None;
        } else if let Some((k, _)) = t.split_once('=') {
            key = Some(k.trim().to_string());
        }
    }
    if let Some(last) = before.lines().last() {
        if let Some((k, _)) = last.trim().split_once('=') {
            key = Some(k.trim().to_string());
        }
    }
    match (table.is_empty(), key) {
        (true, Some(k)) => Some(k),
        (false, Some(k)) => Some(format!("{table}.{k}")),
        (false, None) => Some(table),
        (true, None) => None,
    }
}

/// Parses a config document into a model family, validating at `theta0`.
pub fn load_model(config_text: &str) -> Result<ParameterizedModel> {
    ModelConfig::parse(config_text)?.parameterized()
}

/// Renders `model` as an explicit-matrix document sweeping `sweep`.
pub fn render_model(model: &OpenSystemModel, sweep: SweepSpec) -> String {
    ModelConfig::from_model(model, sweep).to_toml()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_lambda_system, build_two_level};

    const LAMBDA: &str = r#"
units = "rates in units of gamma0"

[lambda_system]
omega0 = 5.0
omega1 = 3.0
delta0 = 0.0
delta1 = 0.0
gamma0 = 1.0
gamma1 = 0.5
gamma_deph = 0.1

[sweep]
parameter = "delta1"
theta0 = 1.0
"#;

    #[test]
    fn lambda_config_substitutes_swept_parameter() {
        let pm = load_model(LAMBDA).unwrap();
        let expected = build_lambda_system(5.0, 3.0, 0.0, 1.0, 1.0, 0.5, 0.1, 1.0, 1.0).unwrap();
        assert_eq!(pm.build(1.0).unwrap(), expected);
        assert_eq!(pm.theta0(), 1.0);
        assert_eq!(pm.configured_fd_step(), None);
        let shifted = build_lambda_system(5.0, 3.0, 0.0, -2.0, 1.0, 0.5, 0.1, 1.0, 1.0).unwrap();
        assert_eq!(pm.build(-2.0).unwrap(), shifted);
    }

    #[test]
    fn omitted_efficiencies_default_to_one() {
        let pm = load_model(LAMBDA).unwrap();
        assert_eq!(pm.model().unwrap().efficiencies(), vec![1.0, 1.0]);

        let text = r#"
dim = 2
[hamiltonian]
real = [[0.0, 0.5], [0.5, 0.0]]
[[detected]]
final_state = 0
operator = { real = [[0.0, 1.0], [0.0, 0.0]] }
[sweep]
parameter = "hamiltonian.real[0][1]"
theta0 = 0.5
"#;
        let pm = load_model(text).unwrap();
        assert_eq!(pm.model().unwrap().efficiencies(), vec![1.0]);
        let reference = build_two_level(1.0, 0.0, 1.0, 1.0).unwrap();
        let built = pm.model().unwrap();
        assert_eq!(built.hamiltonian(), reference.hamiltonian());
        assert_eq!(built.detected()[0].operator(), reference.detected()[0].operator());
    }

    #[test]
    fn non_rank_one_detected_operator_is_rejected() {
        let s = 0.5f64.sqrt();
        let text = format!(
            r#"
dim = 3
[hamiltonian]
real = [[0.0, 0.0, 2.5], [0.0, 0.0, 1.5], [2.5, 1.5, 0.0]]
[[detected]]
final_state = 0
operator = {{ real = [[0.0, 0.0, {s}], [0.0, 0.0, {s}], [0.0, 0.0, 0.0]] }}
[sweep]
parameter = "hamiltonian.real[0][0]"
theta0 = 0.0
"#
        );
        let err = load_model(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("detected[0].operator"), "{msg}");
        assert!(msg.contains("not rank-1 onto final state"), "{msg}");
    }

    #[test]
    fn schema_violations_name_the_field() {
        let missing_dim = r#"
[hamiltonian]
real = [[0.0, 0.5], [0.5, 0.0]]
[[detected]]
final_state = 0
operator = { real = [[0.0, 1.0], [0.0, 0.0]] }
[sweep]
parameter = "hamiltonian.real[0][1]"
theta0 = 0.5
"#;
        assert!(load_model(missing_dim).unwrap_err().to_string().contains("`dim`"));

        // Sweeping an off-diagonal entry sets its mirror too, so sweep a
        // diagonal one here.
        let non_hermitian = missing_dim
            .replace("[0.5, 0.0]]", "[0.7, 0.0]]")
            .replace("[hamiltonian]", "dim = 2\n[hamiltonian]")
            .replace("real[0][1]", "real[0][0]");
        let err = load_model(&non_hermitian).unwrap_err().to_string();
        assert!(err.contains("hamiltonian"), "{err}");

        let bad_final = missing_dim
            .replace("final_state = 0", "final_state = 5")
            .replace("[hamiltonian]", "dim = 2\n[hamiltonian]");
        let err = load_model(&bad_final).unwrap_err().to_string();
        assert!(err.contains("detected[0].final_state"), "{err}");

        let mixed = format!("{LAMBDA}\n[[detected]]\nfinal_state = 0\noperator = {{ real = [[1.0]] }}\n");
        let err = load_model(&mixed).unwrap_err().to_string();
        assert!(err.contains("must be absent"), "{err}");

        let missing_rate = LAMBDA.replace("gamma0 = 1.0\n", "");
        let err = load_model(&missing_rate).unwrap_err().to_string();
        assert!(err.contains("gamma0"), "{err}");

        let bad_param = LAMBDA.replace("\"delta1\"", "\"delta7\"");
        assert!(load_model(&bad_param).unwrap_err().to_string().contains("sweep.parameter"));
    }

    #[test]
    fn slot_paths_parse() {
        assert_eq!(parse_slot("hamiltonian.real[1][2]"), Some(Slot::HamReal(1, 2)));
        assert_eq!(parse_slot("detected[3].efficiency"), Some(Slot::Efficiency(3)));
        assert_eq!(
            parse_slot("undetected[0].operator.imag[1][0]"),
            Some(Slot::UndetectedOp { k: 0, imag: true, i: 1, j: 0 })
        );
        assert_eq!(parse_slot("detected[0].operator.real[1]"), None);
        assert_eq!(parse_slot("omega"), None);
    }

    #[test]
    fn rendered_model_round_trips() {
        let m = build_lambda_system(5.0, 3.0, 0.3, -1.1, 1.0, 0.5, 0.1, 0.8, 0.6).unwrap();
        let text = render_model(
            &m,
            SweepSpec { parameter: "detected[1].efficiency".into(), theta0: 0.6, fd_step: Some(1e-3) },
        );
        let pm = load_model(&text).unwrap();
        assert_eq!(pm.model().unwrap(), m);
        assert_eq!(pm.configured_fd_step(), Some(1e-3));
    }
}
