//! Charged particle in a linear gauge field and its noncommutative
//! free-particle counterpart.
//!
//! The vector potential is `A = (α_x x + β_x y, α_y x + β_y y)`, so
//! `B_z = α_y − β_x`. With `k = e/c` and `K = k·[[α_x, β_x], [α_y, β_y]]` the
//! Hamiltonian is `|p − Kq|²/2m`. Phase points are ordered `(x, y, p_x, p_y)`.

use std::f64::consts::TAU;
use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{AlgebraError, DeformationParams, Mat, PhaseSpaceMap};
use crate::nc2d::{self, Nc2dError, Params2D};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("field is not matchable: beta_y*alpha_x - alpha_y*beta_x = {0:e}")]
    NonMatchable(f64),
    #[error("degenerate field: beta_x or alpha_y vanishes")]
    DegenerateField,
    #[error("invalid field: {0}")]
    InvalidField(&'static str),
    #[error("step too large: dt*|Omega S/hbar| = {0:e} (limit 0.1)")]
    StepTooLarge(f64),
    #[error("field has B_z = 0, no cyclotron period")]
    ZeroField,
    #[error("zero denominator {0}")]
    ZeroDenominator(&'static str),
    #[error("u vanishes or changes sign at sample {0}")]
    UCrossesZero(usize),
    #[error("invalid constant {0}: must be finite and nonzero")]
    InvalidConstant(&'static str),
    #[error("inconsistent inputs: {0}")]
    Inconsistent(&'static str),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Nc2d(#[from] Nc2dError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub alpha_x: f64,
    pub alpha_y: f64,
    pub beta_x: f64,
    pub beta_y: f64,
    pub e: f64,
    pub c: f64,
    #[serde(alias = "m")]
    pub m_p: f64,
}

const MATCH_TOL: f64 = 1e-12;

impl FieldConfig {
    pub fn new(alpha_x: f64, alpha_y: f64, beta_x: f64, beta_y: f64, e: f64, c: f64, m_p: f64) -> Self {
        Self { alpha_x, alpha_y, beta_x, beta_y, e, c, m_p }
    }

    /// `α_y = B/2`, `β_x = −B/2`, `e = c = m = 1`.
    pub fn symmetric_gauge(b_z: f64) -> Self {
        Self::new(0.0, 0.5 * b_z, -0.5 * b_z, 0.0, 1.0, 1.0, 1.0)
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let all = [self.alpha_x, self.alpha_y, self.beta_x, self.beta_y, self.e, self.c, self.m_p];
        if !all.iter().all(|v| v.is_finite()) {
            return Err(DynamicsError::InvalidField("non-finite entry"));
        }
        if self.c <= 0.0 {
            return Err(DynamicsError::InvalidField("c must be positive"));
        }
        if self.m_p <= 0.0 {
            return Err(DynamicsError::InvalidField("m_p must be positive"));
        }
        Ok(())
    }

    pub fn k(&self) -> f64 {
        self.e / self.c
    }

    pub fn b_z(&self) -> f64 {
        self.alpha_y - self.beta_x
    }

    /// `ω = −(e/c m) B_z`.
    pub fn omega(&self) -> f64 {
        -self.k() * self.b_z() / self.m_p
    }

    /// `2π c m / |e B_z|`, if the field bends the orbit.
    pub fn period(&self) -> Option<f64> {
        let w = self.omega().abs();
        (w > 0.0).then(|| TAU / w)
    }

    pub fn k_matrix(&self) -> Mat {
        DMatrix::from_row_slice(2, 2, &[self.alpha_x, self.beta_x, self.alpha_y, self.beta_y]) * self.k()
    }

    /// `k·A(x, y)`.
    pub fn gauge(&self, x: f64, y: f64) -> [f64; 2] {
        let k = self.k();
        [k * (self.alpha_x * x + self.beta_x * y), k * (self.alpha_y * x + self.beta_y * y)]
    }

    /// Proportionality defect `β_y α_x − α_y β_x`.
    pub fn proportionality_defect(&self) -> f64 {
        self.beta_y * self.alpha_x - self.alpha_y * self.beta_x
    }

    pub fn is_matchable(&self) -> bool {
        let scale =
            [self.alpha_x, self.alpha_y, self.beta_x, self.beta_y].iter().fold(0.0_f64, |m, v| m.max(v.abs())).powi(2);
        self.proportionality_defect().abs() <= MATCH_TOL * scale
    }
}

/// `H = ½ zᵀSz + offsetᵀz`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    pub s: Mat,
    pub offset: DVector<f64>,
}

impl QuadraticForm {
    pub fn new(s: Mat, offset: DVector<f64>) -> Result<Self, DynamicsError> {
        let n = s.nrows();
        if s.ncols() != n || !n.is_multiple_of(2) || n == 0 {
            return Err(DynamicsError::DimensionMismatch { expected: 2 * (n / 2).max(1), found: s.ncols() });
        }
        if offset.len() != n {
            return Err(DynamicsError::DimensionMismatch { expected: n, found: offset.len() });
        }
        let s = (&s + s.transpose()) * 0.5;
        Ok(Self { s, offset })
    }

    pub fn free_particle(dim: usize, mass: f64) -> Self {
        let mut s = Mat::zeros(2 * dim, 2 * dim);
        for i in dim..2 * dim {
            s[(i, i)] = 1.0 / mass;
        }
        Self { s, offset: DVector::zeros(2 * dim) }
    }

    /// Free particle plus the linear potential `−force·q`.
    pub fn with_constant_force(dim: usize, mass: f64, force: &[f64]) -> Self {
        let mut h = Self::free_particle(dim, mass);
        for (i, f) in force.iter().enumerate().take(dim) {
            h.offset[i] = -f;
        }
        h
    }

    pub fn phase_dim(&self) -> usize {
        self.s.nrows()
    }

    pub fn energy(&self, z: &[f64]) -> f64 {
        let z = DVector::from_row_slice(z);
        0.5 * z.dot(&(&self.s * &z)) + self.offset.dot(&z)
    }

    pub fn max_abs_diff(&self, other: &QuadraticForm) -> f64 {
        (&self.s - &other.s).abs().max().max((&self.offset - &other.offset).abs().max())
    }
}

/// `S = (1/m)·[[KᵀK, −Kᵀ], [−K, I]]`.
pub fn magnetic_hamiltonian(field: &FieldConfig) -> QuadraticForm {
    kinetic_form(&(-field.k_matrix()), field.m_p)
}

/// `|Cq + p|²/2m` in commutative variables.
fn kinetic_form(c: &Mat, mass: f64) -> QuadraticForm {
    let mut s = Mat::zeros(4, 4);
    s.view_mut((0, 0), (2, 2)).copy_from(&(c.transpose() * c));
    s.view_mut((0, 2), (2, 2)).copy_from(&c.transpose());
    s.view_mut((2, 0), (2, 2)).copy_from(c);
    s.view_mut((2, 2), (2, 2)).copy_from(&Mat::identity(2, 2));
    QuadraticForm { s: s / mass, offset: DVector::zeros(4) }
}

/// Outcome of matching a field against a noncommutative free particle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchResult {
    pub eta: f64,
    pub f_eta: f64,
    pub f_eta_x: f64,
    pub f_eta_y: f64,
    pub theta: f64,
    pub f_theta: f64,
    pub f_theta_x: f64,
    pub f_theta_y: f64,
    pub omega_commutative: f64,
    /// Signed rotation rate `−η/(mħ)` of the noncommutative momentum.
    pub omega_nc: f64,
    pub hbar: f64,
    pub m_p: f64,
    ratio_x: f64,
    ratio_y: f64,
}

impl MatchResult {
    /// `(f_θx, f_θy)` for another point `(θ, f_θ)` of the family.
    pub fn f_theta_relations(&self, theta: f64, f_theta: f64) -> (f64, f64) {
        (-self.ratio_x * (f_theta - theta), -self.ratio_y * (f_theta + theta))
    }

    pub fn params(&self) -> Params2D {
        Params2D::from_real(
            self.theta,
            self.eta,
            self.f_theta,
            self.f_eta,
            self.f_theta_x,
            self.f_theta_y,
            self.f_eta_x,
            self.f_eta_y,
            self.hbar,
        )
    }

    pub fn map(&self) -> Result<PhaseSpaceMap, DynamicsError> {
        Ok(nc2d::maps_2d(&self.params())?)
    }

    /// The frequency law with the extra factor of two, `2η/(mħ)`.
    pub fn omega_literal(&self) -> f64 {
        2.0 * self.eta / (self.m_p * self.hbar)
    }
}

/// Fixes `η`, `f_η` and the f_η diagonal by requiring `C = −K`, then solves
/// `BCᵀ = 0` for `f_θx`, `f_θy`. `θ` and `f_θ` stay free.
pub fn field_to_deformation(
    field: &FieldConfig,
    theta: f64,
    f_theta: f64,
    hbar: f64,
) -> Result<MatchResult, DynamicsError> {
    field.validate()?;
    if !(hbar.is_finite() && hbar > 0.0) {
        return Err(Nc2dError::InvalidHbar(hbar).into());
    }
    if !theta.is_finite() || !f_theta.is_finite() {
        return Err(DynamicsError::InvalidField("non-finite theta or f_theta"));
    }
    if !field.is_matchable() {
        return Err(DynamicsError::NonMatchable(field.proportionality_defect()));
    }
    if field.beta_x == 0.0 || field.alpha_y == 0.0 {
        return Err(DynamicsError::DegenerateField);
    }
    let FieldConfig { alpha_x, alpha_y, beta_x, beta_y, .. } = *field;
    let hk = hbar * field.k();
    let eta = hk * field.b_z();
    let ratio_x = beta_y / alpha_y;
    let ratio_y = alpha_x / beta_x;
    let omega_commutative = field.omega();
    Ok(MatchResult {
        eta,
        f_eta: -hk * (alpha_y + beta_x),
        f_eta_x: -2.0 * hk * alpha_x,
        f_eta_y: -2.0 * hk * beta_y,
        theta,
        f_theta,
        f_theta_x: -ratio_x * (f_theta - theta),
        f_theta_y: -ratio_y * (f_theta + theta),
        omega_commutative,
        omega_nc: -eta / (field.m_p * hbar),
        hbar,
        m_p: field.m_p,
        ratio_x,
        ratio_y,
    })
}

/// `|p̂|²/2m̂` expressed through the commutative variables of `params`.
pub fn nc_free_hamiltonian(
    matched: &MatchResult,
    params: &Params2D,
    nc_mass: Option<f64>,
) -> Result<QuadraticForm, DynamicsError> {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
    let p_eta_x = params.f_eta_x.re;
    let p_eta_y = params.f_eta_y.re;
    if !(close(matched.eta, params.eta)
        && close(matched.f_eta, params.f_eta)
        && close(matched.f_eta_x, p_eta_x)
        && close(matched.f_eta_y, p_eta_y)
        && close(matched.hbar, params.hbar))
    {
        return Err(DynamicsError::Inconsistent("params do not carry the matched eta, f_eta"));
    }
    let mass = nc_mass.unwrap_or(matched.m_p);
    if !(mass.is_finite() && mass > 0.0) {
        return Err(DynamicsError::InvalidField("nc mass must be positive"));
    }
    let map = nc2d::maps_2d(params)?;
    Ok(kinetic_form(map.c(), mass))
}

/// Integration constants of the orbit
/// `x = x₃ + x₁ sin ωt + x₂ cos ωt`, `y = y₃ + x₂ sin ωt − x₁ cos ωt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormCoeffs {
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
    pub y3: f64,
    #[serde(skip)]
    pub omega: f64,
}

/// Serialized shape of [`ClosedFormCoeffs`]; ω always comes from the field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoeffsDocument {
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
    pub y3: f64,
}

impl ClosedFormCoeffs {
    pub fn new(field: &FieldConfig, x1: f64, x2: f64, x3: f64, y3: f64) -> Self {
        Self { x1, x2, x3, y3, omega: field.omega() }
    }

    pub fn from_document(field: &FieldConfig, d: &CoeffsDocument) -> Self {
        Self::new(field, d.x1, d.x2, d.x3, d.y3)
    }

    pub fn to_document(&self) -> CoeffsDocument {
        CoeffsDocument { x1: self.x1, x2: self.x2, x3: self.x3, y3: self.y3 }
    }

    pub fn y1(&self) -> f64 {
        self.x2
    }

    pub fn y2(&self) -> f64 {
        -self.x1
    }

    /// Constants reproducing the phase point `z0` at `t = 0`.
    pub fn from_initial_state(field: &FieldConfig, z0: [f64; 4]) -> Result<Self, DynamicsError> {
        let w = field.omega();
        if w == 0.0 {
            return Err(DynamicsError::ZeroField);
        }
        let [ax, ay] = field.gauge(z0[0], z0[1]);
        let vx = (z0[2] - ax) / field.m_p;
        let vy = (z0[3] - ay) / field.m_p;
        let x1 = vx / w;
        let x2 = vy / w;
        Ok(Self::new(field, x1, x2, z0[0] - x2, z0[1] + x1))
    }

    /// Orbit radius `√(x₁² + x₂²)`.
    pub fn amplitude(&self) -> f64 {
        self.x1.hypot(self.x2)
    }
}

/// Position, velocity at time `t`.
fn orbit(c: &ClosedFormCoeffs, t: f64) -> ([f64; 2], [f64; 2]) {
    let (s, co) = (c.omega * t).sin_cos();
    let q = [c.x3 + c.x1 * s + c.x2 * co, c.y3 + c.x2 * s - c.x1 * co];
    let v = [c.omega * (c.x1 * co - c.x2 * s), c.omega * (c.x2 * co + c.x1 * s)];
    (q, v)
}

/// `(x, y, p_x, p_y)` with `p = m q̇ + k A(q)`.
pub fn commutative_closed_form(coeffs: &ClosedFormCoeffs, field: &FieldConfig, t: f64) -> [f64; 4] {
    let (q, v) = orbit(coeffs, t);
    let [ax, ay] = field.gauge(q[0], q[1]);
    [q[0], q[1], field.m_p * v[0] + ax, field.m_p * v[1] + ay]
}

/// `p̂_x = k B_z (x₂ sin ωt − x₁ cos ωt)`, `p̂_y = −k B_z (x₁ sin ωt + x₂ cos ωt)`.
pub fn nc_closed_form(coeffs: &ClosedFormCoeffs, field: &FieldConfig, t: f64) -> [f64; 2] {
    let kb = field.k() * field.b_z();
    let (s, co) = (coeffs.omega * t).sin_cos();
    [kb * (coeffs.x2 * s - coeffs.x1 * co), -kb * (coeffs.x1 * s + coeffs.x2 * co)]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<[f64; 4]>,
    pub hat: Option<Vec<[f64; 4]>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,x,y,px,py,xhat,yhat,pxhat,pyhat")?;
        for (i, (t, z)) in self.times.iter().zip(&self.states).enumerate() {
            write!(w, "{t:.16e}")?;
            for v in z {
                write!(w, ",{v:.16e}")?;
            }
            match &self.hat {
                Some(h) => {
                    for v in &h[i] {
                        write!(w, ",{v:.16e}")?;
                    }
                }
                None => write!(w, ",,,,")?,
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// `Ω = [[θ, ħI], [−ħI, η]]`.
pub fn generator_matrix(params: &DeformationParams) -> Mat {
    let d = params.dim();
    let h = params.hbar();
    let mut g = Mat::zeros(2 * d, 2 * d);
    g.view_mut((0, 0), (d, d)).copy_from(params.theta());
    g.view_mut((d, d), (d, d)).copy_from(params.eta());
    for i in 0..d {
        g[(i, d + i)] = h;
        g[(d + i, i)] = -h;
    }
    g
}

/// RK4 on `dz/dt = Ω(Sz + offset)/ħ`. `states` holds the evolved phase
/// point, in whichever variables `params` describes.
pub fn evolve_linear(
    h: &QuadraticForm,
    params: &DeformationParams,
    z0: &[f64],
    dt: f64,
    steps: usize,
) -> Result<Trajectory, DynamicsError> {
    let n = 2 * params.dim();
    if h.phase_dim() != n || n != 4 {
        return Err(DynamicsError::DimensionMismatch { expected: 4, found: h.phase_dim() });
    }
    if z0.len() != n {
        return Err(DynamicsError::DimensionMismatch { expected: n, found: z0.len() });
    }
    let omega = generator_matrix(params) / params.hbar();
    let a = &omega * &h.s;
    let b = &omega * &h.offset;
    let guard = dt * a.norm();
    if !(dt > 0.0 && guard < 0.1) {
        return Err(DynamicsError::StepTooLarge(guard));
    }
    let rhs = |z: &DVector<f64>| &a * z + &b;
    let mut z = DVector::from_row_slice(z0);
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let push = |states: &mut Vec<[f64; 4]>, z: &DVector<f64>| states.push([z[0], z[1], z[2], z[3]]);
    times.push(0.0);
    push(&mut states, &z);
    for i in 1..=steps {
        let k1 = rhs(&z);
        let k2 = rhs(&(&z + &k1 * (0.5 * dt)));
        let k3 = rhs(&(&z + &k2 * (0.5 * dt)));
        let k4 = rhs(&(&z + &k3 * dt));
        z += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        times.push(i as f64 * dt);
        push(&mut states, &z);
    }
    Ok(Trajectory { times, states, hat: None })
}

/// Signed angular rate of the planar vector `(xs, ys)`, by a least-squares
/// fit of its unwrapped polar angle against time.
pub fn rotation_frequency(times: &[f64], xs: &[f64], ys: &[f64]) -> f64 {
    let n = times.len();
    if n < 2 {
        return 0.0;
    }
    let mut angles = Vec::with_capacity(n);
    let mut prev = ys[0].atan2(xs[0]);
    let mut offset = 0.0;
    angles.push(prev);
    for i in 1..n {
        let a = ys[i].atan2(xs[i]);
        let d = a - prev;
        if d > std::f64::consts::PI {
            offset -= TAU;
        } else if d < -std::f64::consts::PI {
            offset += TAU;
        }
        prev = a;
        angles.push(a + offset);
    }
    let tm = times.iter().sum::<f64>() / n as f64;
    let am = angles.iter().sum::<f64>() / n as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for (t, a) in times.iter().zip(&angles) {
        num += (t - tm) * (a - am);
        den += (t - tm) * (t - tm);
    }
    num / den
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalenceOptions {
    pub theta: f64,
    pub f_theta: f64,
    pub hbar: f64,
    /// Multiplies the matched η in the noncommutative evolution.
    pub eta_scale: f64,
    /// Integrator steps per period (rounded up to a multiple of the sample
    /// count).
    pub steps_per_period: usize,
}

impl Default for EquivalenceOptions {
    fn default() -> Self {
        Self { theta: 0.0, f_theta: 0.0, hbar: 1.0, eta_scale: 1.0, steps_per_period: 4096 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub pass: bool,
    pub tol: f64,
    pub amplitude: f64,
    pub period: Option<f64>,
    pub eta: f64,
    /// `max |p̂ − m q̇|` over the samples.
    pub momentum_deviation: f64,
    /// Commutative RK4 against the closed form, relative to the amplitude.
    pub commutative_deviation: f64,
    /// Noncommutative RK4 against the closed form, relative to the amplitude.
    pub nc_deviation: f64,
    pub nc_deviations: Vec<f64>,
    pub energy_drift: f64,
    pub omega_extracted: f64,
    pub omega_nc: f64,
    pub omega_cyclotron: f64,
    pub omega_literal: f64,
    pub frequency_error: f64,
    /// `|2η/(mħ)| / |ω_extracted|`.
    pub literal_frequency_ratio: f64,
}

/// Samples one period `n_samples` times and compares the closed forms, the
/// commutative integrator and the noncommutative integrator.
pub fn equivalence_check(
    field: &FieldConfig,
    coeffs: &ClosedFormCoeffs,
    n_samples: usize,
    tol: f64,
    opts: &EquivalenceOptions,
) -> Result<EquivalenceReport, DynamicsError> {
    field.validate()?;
    let n_samples = n_samples.max(1);
    let amplitude = coeffs.amplitude();
    let scale = amplitude.max(1.0);

    let Some(period) = field.period() else {
        // No bending: both momenta vanish identically along the closed form.
        let mut momentum_deviation = 0.0_f64;
        for i in 0..=n_samples {
            let t = i as f64 / n_samples as f64;
            let (_, v) = orbit(coeffs, t);
            let ph = nc_closed_form(coeffs, field, t);
            momentum_deviation =
                momentum_deviation.max((ph[0] - field.m_p * v[0]).abs()).max((ph[1] - field.m_p * v[1]).abs());
        }
        return Ok(EquivalenceReport {
            pass: momentum_deviation <= tol * scale,
            tol,
            amplitude,
            period: None,
            eta: 0.0,
            momentum_deviation,
            commutative_deviation: 0.0,
            nc_deviation: 0.0,
            nc_deviations: vec![0.0; n_samples + 1],
            energy_drift: 0.0,
            omega_extracted: 0.0,
            omega_nc: 0.0,
            omega_cyclotron: 0.0,
            omega_literal: 0.0,
            frequency_error: 0.0,
            literal_frequency_ratio: 0.0,
        });
    };

    let matched = field_to_deformation(field, opts.theta, opts.f_theta, opts.hbar)?;
    let map = matched.map()?;
    let stride = opts.steps_per_period.div_ceil(n_samples);
    let steps = stride * n_samples;
    let dt = period / steps as f64;

    // Closed-form momentum against the velocity of the closed-form orbit.
    let mut momentum_deviation = 0.0_f64;
    for i in 0..n_samples {
        let t = period * i as f64 / n_samples as f64;
        let (_, v) = orbit(coeffs, t);
        let ph = nc_closed_form(coeffs, field, t);
        momentum_deviation =
            momentum_deviation.max((ph[0] - field.m_p * v[0]).abs()).max((ph[1] - field.m_p * v[1]).abs());
    }

    let z0 = commutative_closed_form(coeffs, field, 0.0);
    let h = magnetic_hamiltonian(field);
    let comm = evolve_linear(&h, &DeformationParams::commutative(2, opts.hbar)?, &z0, dt, steps)?;
    let e0 = h.energy(&z0);
    let mut energy_drift = 0.0_f64;
    let mut commutative_deviation = 0.0_f64;
    for i in (0..=steps).step_by(stride) {
        let exact = commutative_closed_form(coeffs, field, comm.times[i]);
        for (s, e) in comm.states[i].iter().zip(&exact) {
            commutative_deviation = commutative_deviation.max((s - e).abs());
        }
        energy_drift = energy_drift.max((h.energy(&comm.states[i]) - e0).abs() / e0.abs().max(f64::MIN_POSITIVE));
    }

    let nc_params = DeformationParams::new(
        crate::algebra::epsilon2() * matched.theta,
        crate::algebra::epsilon2() * (matched.eta * opts.eta_scale),
        opts.hbar,
    )?;
    let zh0 = map.apply(&z0);
    let nc = evolve_linear(&QuadraticForm::free_particle(2, field.m_p), &nc_params, &zh0, dt, steps)?;
    let mut nc_deviations = Vec::with_capacity(n_samples + 1);
    for i in (0..=steps).step_by(stride) {
        let t = nc.times[i];
        let ph = nc_closed_form(coeffs, field, t);
        let zh = map.apply(&commutative_closed_form(coeffs, field, t));
        let s = &nc.states[i];
        let dev = [s[0] - zh[0], s[1] - zh[1], s[2] - ph[0], s[3] - ph[1]].iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        nc_deviations.push(dev / scale);
    }
    let nc_deviation = nc_deviations.iter().fold(0.0_f64, |m, v| m.max(*v));

    let pxs: Vec<f64> = nc.states.iter().map(|s| s[2]).collect();
    let pys: Vec<f64> = nc.states.iter().map(|s| s[3]).collect();
    let omega_extracted = rotation_frequency(&nc.times, &pxs, &pys);
    let omega_nc = matched.omega_nc;
    let omega_cyclotron = field.omega();
    let omega_literal = matched.omega_literal();
    let rel = |a: f64, b: f64| (a.abs() - b.abs()).abs() / b.abs().max(f64::MIN_POSITIVE);
    let frequency_error = rel(omega_extracted, omega_nc).max(rel(omega_nc, omega_cyclotron));
    let literal_frequency_ratio = omega_literal.abs() / omega_extracted.abs().max(f64::MIN_POSITIVE);

    let commutative_deviation = commutative_deviation / scale;
    let pass = momentum_deviation <= tol * scale
        && commutative_deviation <= 1e-6
        && nc_deviation <= 1e-6
        && frequency_error <= 1e-6;
    Ok(EquivalenceReport {
        pass,
        tol,
        amplitude,
        period: Some(period),
        eta: matched.eta,
        momentum_deviation,
        commutative_deviation,
        nc_deviation,
        nc_deviations,
        energy_drift,
        omega_extracted,
        omega_nc,
        omega_cyclotron,
        omega_literal,
        frequency_error,
        literal_frequency_ratio,
    })
}

/// `u = (β_y/β_x) p_x + p_y`, `v = p_x + (β_x/β_y) p_y` along the closed form.
pub fn uv_momenta(field: &FieldConfig, coeffs: &ClosedFormCoeffs, t: f64) -> Result<(f64, f64), DynamicsError> {
    if field.beta_x == 0.0 {
        return Err(DynamicsError::ZeroDenominator("beta_x"));
    }
    if field.beta_y == 0.0 {
        return Err(DynamicsError::ZeroDenominator("beta_y"));
    }
    let [_, _, px, py] = commutative_closed_form(coeffs, field, t);
    Ok((field.beta_y / field.beta_x * px + py, px + field.beta_x / field.beta_y * py))
}

/// Constant part `2k(α_y x₃ + β_y y₃)` of `u`.
pub fn u_constant_term(field: &FieldConfig, coeffs: &ClosedFormCoeffs) -> f64 {
    2.0 * field.k() * (field.alpha_y * coeffs.x3 + field.beta_y * coeffs.y3)
}

fn check_u(u: &[f64]) -> Result<(), DynamicsError> {
    let sign = u.first().map(|v| v.signum()).unwrap_or(1.0);
    match u.iter().position(|v| !v.is_finite() || *v == 0.0 || v.signum() != sign) {
        Some(i) => Err(DynamicsError::UCrossesZero(i)),
        None => Ok(()),
    }
}

fn check_constant(v: f64, name: &'static str) -> Result<(), DynamicsError> {
    if v.is_finite() && v != 0.0 {
        Ok(())
    } else {
        Err(DynamicsError::InvalidConstant(name))
    }
}

/// `(f_θ(t), θ(t))` from `f_θ − θ = 1/(c₋u)`, `f_θ + θ = 1/(c₊u)`.
pub fn time_dependent_ftheta(u: &[f64], c_minus: f64, c_plus: f64) -> Result<Vec<(f64, f64)>, DynamicsError> {
    check_constant(c_minus, "c_minus")?;
    check_constant(c_plus, "c_plus")?;
    check_u(u)?;
    let ratio = c_minus / c_plus;
    let a_theta = (ratio - 1.0) / (2.0 * c_minus);
    let a_f = (ratio + 1.0) / (2.0 * c_minus);
    Ok(u.iter().map(|u| (a_f / u, a_theta / u)).collect())
}

/// `(f_θ − θ)(t) = 1/(c₋u)`; the split between f_θ and θ stays open.
pub fn approach_two_ftheta(u: &[f64], c_minus: f64) -> Result<Vec<f64>, DynamicsError> {
    check_constant(c_minus, "c_minus")?;
    check_u(u)?;
    Ok(u.iter().map(|u| 1.0 / (c_minus * u)).collect())
}
