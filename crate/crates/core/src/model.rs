//! Parameterized open-system models: Hamiltonian, detected jump channels
//! with efficiencies, and undetected dissipators.
//!
//! Rates are in units of a reference rate and times in its inverse. The
//! computational basis indices are the physical level labels, and a
//! detected channel's `final_state` refers to that basis.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{is_hermitian, max_abs, real, CMatrix, ZERO};

const HERMITIAN_TOL: f64 = 1e-12;
const RANK_ONE_TOL: f64 = 1e-12;

/// A jump operator whose action always leaves the emitter in the basis
/// state `final_state`, i.e. `C = |final⟩⟨v|` for some `v`.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectedChannel {
    operator: CMatrix,
    final_state: usize,
    efficiency: f64,
    label: String,
}

impl DetectedChannel {
    pub fn new(
        operator: CMatrix,
        final_state: usize,
        efficiency: f64,
        label: impl Into<String>,
    ) -> Result<Self> {
        let label = label.into();
        if !operator.is_square() || operator.nrows() < 2 {
            return Err(Error::InvalidModel(format!(
                "detected channel `{label}` operator must be square with dim >= 2"
            )));
        }
        if final_state >= operator.nrows() {
            return Err(Error::InvalidModel(format!(
                "detected channel `{label}` final state {final_state} out of range for dim {}",
                operator.nrows()
            )));
        }
        if !(0.0..=1.0).contains(&efficiency) {
            return Err(Error::InvalidModel(format!(
                "detected channel `{label}` efficiency {efficiency} outside [0, 1]"
            )));
        }
        if operator.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "detected channel `{label}` operator has non-finite entries"
            )));
        }
        let scale = max_abs(&operator).max(1.0);
        let off_rows = operator
            .row_iter()
            .enumerate()
            .filter(|(i, _)| *i != final_state)
            .flat_map(|(_, r)| r.iter().map(|z| z.norm()).collect::<Vec<_>>())
            .fold(0.0, f64::max);
        if off_rows > RANK_ONE_TOL * scale {
            return Err(Error::InvalidModel(format!(
                "detected channel `{label}` not rank-1 onto final state {final_state}"
            )));
        }
        Ok(DetectedChannel { operator, final_state, efficiency, label })
    }

    pub fn operator(&self) -> &CMatrix {
        &self.operator
    }

    pub fn final_state(&self) -> usize {
        self.final_state
    }

    pub fn efficiency(&self) -> f64 {
        self.efficiency
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// `C†C`, whose expectation value is the physical jump rate.
    pub fn rate_operator(&self) -> CMatrix {
        self.operator.adjoint() * &self.operator
    }
}

/// A dissipator that is never counted, e.g. dephasing. It acts with its
/// full feeding term in every propagation.
#[derive(Clone, Debug, PartialEq)]
pub struct UndetectedDissipator {
    operator: CMatrix,
    label: String,
}

impl UndetectedDissipator {
    pub fn new(operator: CMatrix, label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        if !operator.is_square() {
            return Err(Error::InvalidModel(format!("dissipator `{label}` must be square")));
        }
        if max_abs(&operator) == 0.0 {
            return Err(Error::InvalidModel(format!("dissipator `{label}` is the zero operator")));
        }
        Ok(UndetectedDissipator { operator, label })
    }

    pub fn operator(&self) -> &CMatrix {
        &self.operator
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

/// Hamiltonian plus detected and undetected jump channels.
#[derive(Clone, Debug, PartialEq)]
pub struct OpenSystemModel {
    hamiltonian: CMatrix,
    detected: Vec<DetectedChannel>,
    undetected: Vec<UndetectedDissipator>,
}

impl OpenSystemModel {
    pub fn new(
        hamiltonian: CMatrix,
        detected: Vec<DetectedChannel>,
        undetected: Vec<UndetectedDissipator>,
    ) -> Result<Self> {
        let dim = hamiltonian.nrows();
        if !hamiltonian.is_square() || dim < 2 {
            return Err(Error::InvalidModel("Hamiltonian must be square with dim >= 2".into()));
        }
        if !is_hermitian(&hamiltonian, HERMITIAN_TOL) {
            return Err(Error::InvalidModel("Hamiltonian is not Hermitian".into()));
        }
        if detected.is_empty() {
            return Err(Error::InvalidModel("at least one detected channel is required".into()));
        }
        for c in &detected {
            if c.operator.nrows() != dim {
                return Err(Error::InvalidModel(format!(
                    "detected channel `{}` has dim {} but Hamiltonian has dim {dim}",
                    c.label,
                    c.operator.nrows()
                )));
            }
        }
        for u in &undetected {
            if u.operator.nrows() != dim {
                return Err(Error::InvalidModel(format!(
                    "dissipator `{}` has dim {} but Hamiltonian has dim {dim}",
                    u.label,
                    u.operator.nrows()
                )));
            }
        }
        if !detected.iter().any(|c| c.efficiency > 0.0) {
            return Err(Error::InvalidModel(
                "at least one detected channel needs a positive efficiency".into(),
            ));
        }
        Ok(OpenSystemModel { hamiltonian, detected, undetected })
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.nrows()
    }

    pub fn channel_count(&self) -> usize {
        self.detected.len()
    }

    pub fn hamiltonian(&self) -> &CMatrix {
        &self.hamiltonian
    }

    pub fn detected(&self) -> &[DetectedChannel] {
        &self.detected
    }

    pub fn undetected(&self) -> &[UndetectedDissipator] {
        &self.undetected
    }

    pub fn efficiencies(&self) -> Vec<f64> {
        self.detected.iter().map(|c| c.efficiency).collect()
    }

    /// Same model with the given detector efficiencies.
    pub fn with_efficiencies(&self, etas: &[f64]) -> Result<Self> {
        if etas.len() != self.detected.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} efficiencies, got {}",
                self.detected.len(),
                etas.len()
            )));
        }
        let detected = self
            .detected
            .iter()
            .zip(etas)
            .map(|(c, &eta)| {
                DetectedChannel::new(c.operator.clone(), c.final_state, eta, c.label.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        OpenSystemModel::new(self.hamiltonian.clone(), detected, self.undetected.clone())
    }

    /// Same model observed only through channel `m`.
    pub fn only_channel(&self, m: usize) -> Result<Self> {
        let etas: Vec<f64> = self
            .detected
            .iter()
            .enumerate()
            .map(|(k, c)| if k == m { c.efficiency } else { 0.0 })
            .collect();
        self.with_efficiencies(&etas)
    }

    /// All jump operators, detected first, in declaration order.
    pub fn jump_operators(&self) -> impl Iterator<Item = &CMatrix> {
        self.detected
            .iter()
            .map(|c| &c.operator)
            .chain(self.undetected.iter().map(|u| &u.operator))
    }

    /// `Σ_k C_k†C_k` over every channel.
    pub fn total_rate_operator(&self) -> CMatrix {
        let dim = self.dim();
        self.jump_operators()
            .fold(CMatrix::zeros(dim, dim), |acc, c| acc + c.adjoint() * c)
    }

    /// `H - (i/2) Σ_k C_k†C_k`.
    pub fn effective_hamiltonian(&self) -> CMatrix {
        &self.hamiltonian - self.total_rate_operator() * num_complex::Complex64::new(0.0, 0.5)
    }

    /// Short stable hash of every matrix entry and channel attribute.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        let mut put = |m: &CMatrix| {
            h.update((m.nrows() as u64).to_le_bytes());
            for z in m.iter() {
                h.update(z.re.to_le_bytes());
                h.update(z.im.to_le_bytes());
            }
        };
        put(&self.hamiltonian);
        for c in &self.detected {
            put(&c.operator);
        }
        for u in &self.undetected {
            put(&u.operator);
        }
        for c in &self.detected {
            h.update((c.final_state as u64).to_le_bytes());
            h.update(c.efficiency.to_le_bytes());
        }
        let digest = h.finalize();
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

fn check_rate(name: &str, v: f64, strictly_positive: bool) -> Result<()> {
    let ok = v.is_finite() && if strictly_positive { v > 0.0 } else { v >= 0.0 };
    if ok {
        Ok(())
    } else {
        let bound = if strictly_positive { "> 0" } else { ">= 0" };
        Err(Error::InvalidModel(format!("{name} = {v} must be {bound}")))
    }
}

fn check_efficiency(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidModel(format!("{name} = {v} outside [0, 1]")))
    }
}

/// Three-level Λ atom in the basis (|0⟩, |1⟩, |2⟩): two ground states
/// laser-coupled to the excited state |2⟩, which decays to |0⟩ (channel 0)
/// and |1⟩ (channel 1). Optional dephasing `√γ(|0⟩⟨0| − |1⟩⟨1| + |2⟩⟨2|)`
/// is undetected.
#[allow(clippy::too_many_arguments)]
pub fn build_lambda_system(
    omega0: f64,
    omega1: f64,
    delta0: f64,
    delta1: f64,
    gamma0: f64,
    gamma1: f64,
    gamma_deph: f64,
    eta0: f64,
    eta1: f64,
) -> Result<OpenSystemModel> {
    for (name, v) in [("omega0", omega0), ("omega1", omega1), ("delta0", delta0), ("delta1", delta1)] {
        if !v.is_finite() {
            return Err(Error::InvalidModel(format!("{name} = {v} is not finite")));
        }
    }
    check_rate("gamma0", gamma0, true)?;
    check_rate("gamma1", gamma1, false)?;
    check_rate("gamma_deph", gamma_deph, false)?;
    check_efficiency("eta0", eta0)?;
    check_efficiency("eta1", eta1)?;

    let mut h = CMatrix::zeros(3, 3);
    h[(0, 0)] = real(delta0);
    h[(1, 1)] = real(delta1);
    h[(0, 2)] = real(omega0 / 2.0);
    h[(2, 0)] = real(omega0 / 2.0);
    h[(1, 2)] = real(omega1 / 2.0);
    h[(2, 1)] = real(omega1 / 2.0);

    let mut c0 = CMatrix::zeros(3, 3);
    c0[(0, 2)] = real(gamma0.sqrt());
    let mut c1 = CMatrix::zeros(3, 3);
    c1[(1, 2)] = real(gamma1.sqrt());

    let detected = vec![
        DetectedChannel::new(c0, 0, eta0, "2->0")?,
        DetectedChannel::new(c1, 1, eta1, "2->1")?,
    ];
    let mut undetected = Vec::new();
    if gamma_deph > 0.0 {
        let s = gamma_deph.sqrt();
        let mut cd = CMatrix::zeros(3, 3);
        cd[(0, 0)] = real(s);
        cd[(1, 1)] = real(-s);
        cd[(2, 2)] = real(s);
        undetected.push(UndetectedDissipator::new(cd, "dephasing")?);
    }
    OpenSystemModel::new(h, detected, undetected)
}

/// Driven two-level atom in the basis (|g⟩, |e⟩) = (0, 1).
///
/// The rotating-frame Hamiltonian is `[[0, Ω/2], [Ω/2, −δ]]`: the ground
/// state sits at zero energy and δ is the laser detuning from resonance.
/// The single detected channel is `√Γ |g⟩⟨e|`.
pub fn build_two_level(omega: f64, delta: f64, gamma: f64, eta: f64) -> Result<OpenSystemModel> {
    if !omega.is_finite() || !delta.is_finite() {
        return Err(Error::InvalidModel("omega and delta must be finite".into()));
    }
    check_rate("gamma", gamma, true)?;
    check_efficiency("eta", eta)?;
    let mut h = CMatrix::zeros(2, 2);
    h[(0, 1)] = real(omega / 2.0);
    h[(1, 0)] = real(omega / 2.0);
    h[(1, 1)] = real(-delta);
    let mut c = CMatrix::zeros(2, 2);
    c[(0, 1)] = real(gamma.sqrt());
    OpenSystemModel::new(h, vec![DetectedChannel::new(c, 0, eta, "e->g")?], vec![])
}

/// Emitter whose detected waiting times are exactly exponential with rate
/// `gamma`: the detected jump `√Γ |e⟩⟨e|` returns the system to |e⟩, and an
/// undetected pump `√κ |e⟩⟨g|` keeps the steady state in |e⟩.
pub fn build_poisson_emitter(gamma: f64, pump: f64, eta: f64) -> Result<OpenSystemModel> {
    check_rate("gamma", gamma, true)?;
    check_rate("pump", pump, true)?;
    check_efficiency("eta", eta)?;
    let mut c = CMatrix::zeros(2, 2);
    c[(1, 1)] = real(gamma.sqrt());
    let mut p = CMatrix::zeros(2, 2);
    p[(1, 0)] = real(pump.sqrt());
    OpenSystemModel::new(
        CMatrix::from_element(2, 2, ZERO),
        vec![DetectedChannel::new(c, 1, eta, "e->e")?],
        vec![UndetectedDissipator::new(p, "pump")?],
    )
}

/// Physical parameters of the Λ system, addressable by name.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaParams {
    pub omega0: f64,
    pub omega1: f64,
    #[serde(default)]
    pub delta0: f64,
    #[serde(default)]
    pub delta1: f64,
    pub gamma0: f64,
    pub gamma1: f64,
    #[serde(default)]
    pub gamma_deph: f64,
    #[serde(default = "one")]
    pub eta0: f64,
    #[serde(default = "one")]
    pub eta1: f64,
}

fn one() -> f64 {
    1.0
}

impl LambdaParams {
    pub const NAMES: [&'static str; 9] = [
        "omega0", "omega1", "delta0", "delta1", "gamma0", "gamma1", "gamma_deph", "eta0", "eta1",
    ];

    pub fn build(&self) -> Result<OpenSystemModel> {
        build_lambda_system(
            self.omega0,
            self.omega1,
            self.delta0,
            self.delta1,
            self.gamma0,
            self.gamma1,
            self.gamma_deph,
            self.eta0,
            self.eta1,
        )
    }

    fn slot(&mut self, name: &str) -> Option<&mut f64> {
        Some(match name {
            "omega0" => &mut self.omega0,
            "omega1" => &mut self.omega1,
            "delta0" => &mut self.delta0,
            "delta1" => &mut self.delta1,
            "gamma0" => &mut self.gamma0,
            "gamma1" => &mut self.gamma1,
            "gamma_deph" => &mut self.gamma_deph,
            "eta0" => &mut self.eta0,
            "eta1" => &mut self.eta1,
            _ => return None,
        })
    }

    pub fn with(mut self, name: &str, value: f64) -> Result<Self> {
        *self
            .slot(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown Λ-system parameter `{name}`")))? =
            value;
        Ok(self)
    }

    /// Model family sweeping the named parameter, centred at `theta0`.
    pub fn sweep(self, name: &str, theta0: f64) -> Result<ParameterizedModel> {
        self.with(name, theta0)?;
        let name_owned = name.to_string();
        let pm = ParameterizedModel::new(name, theta0, move |theta| {
            self.with(&name_owned, theta)?.build()
        });
        pm.build(theta0)?;
        Ok(pm)
    }
}

/// Parameters of [`build_two_level`], addressable by name.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoLevelParams {
    pub omega: f64,
    #[serde(default)]
    pub delta: f64,
    pub gamma: f64,
    #[serde(default = "one")]
    pub eta: f64,
}

impl TwoLevelParams {
    pub const NAMES: [&'static str; 4] = ["omega", "delta", "gamma", "eta"];

    pub fn build(&self) -> Result<OpenSystemModel> {
        build_two_level(self.omega, self.delta, self.gamma, self.eta)
    }

    pub fn with(mut self, name: &str, value: f64) -> Result<Self> {
        match name {
            "omega" => self.omega = value,
            "delta" => self.delta = value,
            "gamma" => self.gamma = value,
            "eta" => self.eta = value,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown two-level parameter `{name}`"
                )))
            }
        }
        Ok(self)
    }

    pub fn sweep(self, name: &str, theta0: f64) -> Result<ParameterizedModel> {
        self.with(name, theta0)?;
        let name_owned = name.to_string();
        let pm = ParameterizedModel::new(name, theta0, move |theta| {
            self.with(&name_owned, theta)?.build()
        });
        pm.build(theta0)?;
        Ok(pm)
    }
}

pub type Builder = Arc<dyn Fn(f64) -> Result<OpenSystemModel> + Send + Sync>;

/// A family of models indexed by one real parameter θ, with the prior
/// value `theta0` around which derivatives are taken.
#[derive(Clone)]
pub struct ParameterizedModel {
    builder: Builder,
    parameter: String,
    theta0: f64,
    fd_step: Option<f64>,
}

impl fmt::Debug for ParameterizedModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParameterizedModel")
            .field("parameter", &self.parameter)
            .field("theta0", &self.theta0)
            .field("fd_step", &self.fd_step)
            .finish_non_exhaustive()
    }
}

impl ParameterizedModel {
    pub fn new<F>(parameter: impl Into<String>, theta0: f64, builder: F) -> Self
    where
        F: Fn(f64) -> Result<OpenSystemModel> + Send + Sync + 'static,
    {
        ParameterizedModel {
            builder: Arc::new(builder),
            parameter: parameter.into(),
            theta0,
            fd_step: None,
        }
    }

    pub fn with_fd_step(mut self, step: f64) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::InvalidArgument(format!("fd_step {step} must be positive")));
        }
        self.fd_step = Some(step);
        Ok(self)
    }

    pub fn parameter(&self) -> &str {
        &self.parameter
    }

    pub fn theta0(&self) -> f64 {
        self.theta0
    }

    /// Explicit step if one was configured.
    pub fn configured_fd_step(&self) -> Option<f64> {
        self.fd_step
    }

    /// Central-difference half-width used at `theta`; defaults to
    /// `1e-4 · max(1, |theta|)`.
    pub fn fd_step_at(&self, theta: f64) -> f64 {
        self.fd_step.unwrap_or(1e-4 * theta.abs().max(1.0))
    }

    pub fn build(&self, theta: f64) -> Result<OpenSystemModel> {
        (self.builder)(theta)
    }

    pub fn model(&self) -> Result<OpenSystemModel> {
        self.build(self.theta0)
    }

    /// Same family with the prior moved to `theta`.
    pub fn recentered(&self, theta: f64) -> Self {
        ParameterizedModel { theta0: theta, ..self.clone() }
    }

    /// Same family with every built model passed through `f`.
    pub fn map_models<F>(&self, f: F) -> Self
    where
        F: Fn(OpenSystemModel) -> Result<OpenSystemModel> + Send + Sync + 'static,
    {
        let inner = self.builder.clone();
        ParameterizedModel {
            builder: Arc::new(move |theta| f(inner(theta)?)),
            ..self.clone()
        }
    }
}
