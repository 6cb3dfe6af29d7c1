//! Two-dimensional consistency system `BCᵀ = 0`.
//!
//! In two dimensions θ = θ·ε and η = η·ε with ε = [[0, 1], [−1, 0]], and the
//! symmetric f-matrices are
//!
//! ```text
//! f_θ = [[f_θx, f_θ], [f_θ, f_θy]]      f_η = [[f_ηx, f_η], [f_η, f_ηy]]
//! ```
//!
//! The condition `(f_θ − θ)(f_η − η) = 0` is four bilinear equations in eight
//! unknowns. On the regular branch `f_θx` (or `f_θy`) is a free pivot and
//! `f_θy`, `f_ηx`, `f_ηy` follow in closed form.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

use crate::algebra::{epsilon2, extended_map, AlgebraError, DeformationParams, Mat, PhaseSpaceMap};
use crate::numeric;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SingularClass {
    Regular,
    /// `f_θ = +θ`
    FThetaPlus,
    /// `f_θ = −θ`
    FThetaMinus,
    /// `f_η = +η`
    FEtaPlus,
    /// `f_η = −η`
    FEtaMinus,
    /// Vanishing pivot `f_θx` (or `f_θy` when pivoting on it).
    ZeroPivot,
}

impl fmt::Display for SingularClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SingularClass::Regular => "Regular",
            SingularClass::FThetaPlus => "FThetaPlus",
            SingularClass::FThetaMinus => "FThetaMinus",
            SingularClass::FEtaPlus => "FEtaPlus",
            SingularClass::FEtaMinus => "FEtaMinus",
            SingularClass::ZeroPivot => "ZeroPivot",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Nc2dError {
    #[error("singular branch: {0}")]
    SingularBranch(SingularClass),
    #[error("imaginary-mode parameters cannot be exported as a real phase-space map")]
    ImaginaryMode,
    #[error("parameter set is incomplete: {0} is not finite")]
    Incomplete(&'static str),
    #[error("hbar must be positive and finite, got {0}")]
    InvalidHbar(f64),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error("{0}")]
    Document(String),
}

/// Which diagonal entry of `f_θ` is taken as the free parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pivot {
    ThetaX(f64),
    ThetaY(f64),
}

/// A complete two-dimensional parameter set.
///
/// `f_theta`, `f_eta_x` and `f_eta_y` are complex so the imaginary variant
/// fits the same type; in real mode their imaginary parts are zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Params2D {
    pub theta: f64,
    pub eta: f64,
    pub f_theta: Complex64,
    pub f_eta: f64,
    pub f_theta_x: f64,
    pub f_theta_y: f64,
    pub f_eta_x: Complex64,
    pub f_eta_y: Complex64,
    pub hbar: f64,
    pub imaginary_mode: bool,
}

impl Params2D {
    /// Builds a real-mode parameter set from explicit entries, without
    /// checking consistency.
    #[allow(clippy::too_many_arguments)]
    pub fn from_real(
        theta: f64,
        eta: f64,
        f_theta: f64,
        f_eta: f64,
        f_theta_x: f64,
        f_theta_y: f64,
        f_eta_x: f64,
        f_eta_y: f64,
        hbar: f64,
    ) -> Self {
        Self {
            theta,
            eta,
            f_theta: Complex64::new(f_theta, 0.0),
            f_eta,
            f_theta_x,
            f_theta_y,
            f_eta_x: Complex64::new(f_eta_x, 0.0),
            f_eta_y: Complex64::new(f_eta_y, 0.0),
            hbar,
            imaginary_mode: false,
        }
    }

    pub fn f_theta_re(&self) -> f64 {
        self.f_theta.re
    }

    pub fn f_eta_x_re(&self) -> f64 {
        self.f_eta_x.re
    }

    pub fn f_eta_y_re(&self) -> f64 {
        self.f_eta_y.re
    }

    /// `f_θ − θ` as laid out in the 2×2 placement.
    pub fn f_theta_minus_theta(&self) -> Mat {
        let (ft, t) = (self.f_theta.re, self.theta);
        Mat::from_row_slice(2, 2, &[self.f_theta_x, ft - t, ft + t, self.f_theta_y])
    }

    /// `f_η − η` as laid out in the 2×2 placement.
    pub fn f_eta_minus_eta(&self) -> Mat {
        let (fe, e) = (self.f_eta, self.eta);
        Mat::from_row_slice(2, 2, &[self.f_eta_x.re, fe - e, fe + e, self.f_eta_y.re])
    }

    pub fn f_theta_matrix(&self) -> Mat {
        let ft = self.f_theta.re;
        Mat::from_row_slice(2, 2, &[self.f_theta_x, ft, ft, self.f_theta_y])
    }

    pub fn f_eta_matrix(&self) -> Mat {
        let fe = self.f_eta;
        Mat::from_row_slice(2, 2, &[self.f_eta_x.re, fe, fe, self.f_eta_y.re])
    }

    pub fn deformation_params(&self) -> Result<DeformationParams, Nc2dError> {
        Ok(DeformationParams::new(epsilon2() * self.theta, epsilon2() * self.eta, self.hbar)?)
    }

    /// The two closed forms for `f_ηx`: via the `f_θx` pivot and via `f_θy`.
    pub fn f_eta_x_alternatives(&self) -> (f64, f64) {
        let (ft, t, fe, e) = (self.f_theta.re, self.theta, self.f_eta, self.eta);
        let via_x = -(ft - t) * (fe + e) / self.f_theta_x;
        let via_y = -((fe + e) / (ft + t)) * self.f_theta_y;
        (via_x, via_y)
    }

    /// Magnitude used to scale residual tolerances.
    pub fn scale(&self) -> f64 {
        let a = numeric::max_abs_slice(&[
            self.theta,
            self.eta,
            self.f_theta.norm(),
            self.f_eta,
            self.f_theta_x,
            self.f_theta_y,
            self.f_eta_x.norm(),
            self.f_eta_y.norm(),
        ]);
        a.max(1.0).powi(2)
    }

    fn check_finite(&self) -> Result<(), Nc2dError> {
        let fields: [(f64, &'static str); 12] = [
            (self.theta, "theta"),
            (self.eta, "eta"),
            (self.f_theta.re, "f_theta"),
            (self.f_theta.im, "f_theta"),
            (self.f_eta, "f_eta"),
            (self.f_theta_x, "f_theta_x"),
            (self.f_theta_y, "f_theta_y"),
            (self.f_eta_x.re, "f_eta_x"),
            (self.f_eta_x.im, "f_eta_x"),
            (self.f_eta_y.re, "f_eta_y"),
            (self.f_eta_y.im, "f_eta_y"),
            (self.hbar, "hbar"),
        ];
        for (v, name) in fields {
            if !v.is_finite() {
                return Err(Nc2dError::Incomplete(name));
            }
        }
        Ok(())
    }
}

/// Default singularity tolerance `1e-10·max(|θ|, |f_θ|, 1)`.
pub fn default_singular_tol(theta: f64, f_theta: f64) -> f64 {
    1e-10 * theta.abs().max(f_theta.abs()).max(1.0)
}

fn classify_values(theta: f64, eta: f64, f_theta: Complex64, f_eta: f64, pivot: f64, tol: f64) -> SingularClass {
    if (f_theta - theta).norm() <= tol {
        SingularClass::FThetaPlus
    } else if (f_theta + theta).norm() <= tol {
        SingularClass::FThetaMinus
    } else if (f_eta - eta).abs() <= tol {
        SingularClass::FEtaPlus
    } else if (f_eta + eta).abs() <= tol {
        SingularClass::FEtaMinus
    } else if pivot.abs() <= tol {
        SingularClass::ZeroPivot
    } else {
        SingularClass::Regular
    }
}

/// Classifies with fixed priority
/// `FThetaPlus > FThetaMinus > FEtaPlus > FEtaMinus > ZeroPivot > Regular`.
pub fn classify_singular(p: &Params2D, tol: f64) -> SingularClass {
    classify_values(p.theta, p.eta, p.f_theta, p.f_eta, p.f_theta_x, tol)
}

/// Only the f_θ branches and a vanishing pivot block the closed form;
/// `f_η = ±η` is a legitimate (if degenerate) regular input.
fn blocking_class(theta: f64, f_theta: Complex64, pivot: f64, tol: f64) -> Option<SingularClass> {
    if (f_theta - theta).norm() <= tol {
        Some(SingularClass::FThetaPlus)
    } else if (f_theta + theta).norm() <= tol {
        Some(SingularClass::FThetaMinus)
    } else if pivot.abs() <= tol {
        Some(SingularClass::ZeroPivot)
    } else {
        None
    }
}

fn check_hbar(hbar: f64) -> Result<(), Nc2dError> {
    if hbar.is_finite() && hbar > 0.0 {
        Ok(())
    } else {
        Err(Nc2dError::InvalidHbar(hbar))
    }
}

/// Completes a real parameter set from `(θ, η, f_θ, f_η, f_θx)`.
///
/// `tol` defaults to [`default_singular_tol`].
pub fn complete_2d(
    theta: f64,
    eta: f64,
    f_theta: f64,
    f_eta: f64,
    f_theta_x: f64,
    hbar: f64,
    tol: Option<f64>,
) -> Result<Params2D, Nc2dError> {
    complete_2d_pivot(theta, eta, f_theta, f_eta, Pivot::ThetaX(f_theta_x), hbar, tol)
}

/// As [`complete_2d`] but with either diagonal entry of `f_θ` as pivot.
pub fn complete_2d_pivot(
    theta: f64,
    eta: f64,
    f_theta: f64,
    f_eta: f64,
    pivot: Pivot,
    hbar: f64,
    tol: Option<f64>,
) -> Result<Params2D, Nc2dError> {
    check_hbar(hbar)?;
    let tol = tol.unwrap_or_else(|| default_singular_tol(theta, f_theta));
    let pivot_value = match pivot {
        Pivot::ThetaX(v) | Pivot::ThetaY(v) => v,
    };
    // Commutative limit: every derived entry is zero whatever the pivot.
    let limit = [theta, eta, f_theta, f_eta].iter().all(|v| v.abs() <= tol);
    if limit && pivot_value.abs() > tol {
        let (fx, fy) = match pivot {
            Pivot::ThetaX(v) => (v, 0.0),
            Pivot::ThetaY(v) => (0.0, v),
        };
        return Ok(Params2D::from_real(theta, eta, f_theta, f_eta, fx, fy, 0.0, 0.0, hbar));
    }
    if let Some(class) = blocking_class(theta, Complex64::new(f_theta, 0.0), pivot_value, tol) {
        return Err(Nc2dError::SingularBranch(class));
    }
    let (minus, plus) = (f_theta - theta, f_theta + theta);
    let (f_theta_x, f_theta_y, f_eta_x, f_eta_y) = match pivot {
        Pivot::ThetaX(fx) => {
            let fy = minus * plus / fx;
            let fex = -minus * (f_eta + eta) / fx;
            let fey = -((f_eta - eta) / minus) * fx;
            (fx, fy, fex, fey)
        }
        Pivot::ThetaY(fy) => {
            let fx = minus * plus / fy;
            let fex = -((f_eta + eta) / plus) * fy;
            let fey = -plus * (f_eta - eta) / fy;
            (fx, fy, fex, fey)
        }
    };
    let p = Params2D::from_real(theta, eta, f_theta, f_eta, f_theta_x, f_theta_y, f_eta_x, f_eta_y, hbar);
    p.check_finite()?;
    Ok(p)
}

/// Imaginary variant: `f_θy = (f_θ·conj(f_θ) − θ²)/f_θx`.
pub fn complete_2d_imaginary(
    theta: f64,
    eta: f64,
    f_theta: Complex64,
    f_eta: f64,
    f_theta_x: f64,
    hbar: f64,
    tol: Option<f64>,
) -> Result<Params2D, Nc2dError> {
    if f_theta.im == 0.0 {
        return complete_2d(theta, eta, f_theta.re, f_eta, f_theta_x, hbar, tol);
    }
    check_hbar(hbar)?;
    let tol = tol.unwrap_or_else(|| default_singular_tol(theta, f_theta.norm()));
    if let Some(class) = blocking_class(theta, f_theta, f_theta_x, tol) {
        return Err(Nc2dError::SingularBranch(class));
    }
    let minus = f_theta - theta;
    let f_theta_y = (f_theta.norm_sqr() - theta * theta) / f_theta_x;
    let f_eta_x = -minus * (f_eta + eta) / f_theta_x;
    let f_eta_y = -((f_eta - eta) / minus) * f_theta_x;
    let p = Params2D { theta, eta, f_theta, f_eta, f_theta_x, f_theta_y, f_eta_x, f_eta_y, hbar, imaginary_mode: true };
    p.check_finite()?;
    Ok(p)
}

/// Entries of `(2ħ)²·BCᵀ = (f_θ − θ)(f_η − η)`, row-major.
///
/// In imaginary mode the conjugate-product convention applies and the four
/// entries are moduli of
/// `f_θx f_ηx + (f_θ − θ)(f_η + η)`,
/// `f_θx(f_η − η) + (f_θ − θ) f_ηy`,
/// `f_θx f_θy − (f_θ·conj(f_θ) − θ²)` and
/// `(f_θ − θ) f_θy f_ηy + (f_θ·conj(f_θ) − θ²)(f_η − η)`,
/// which reduce to the real system whenever `f_θ` is real.
pub fn residual_2d(p: &Params2D) -> [f64; 4] {
    if p.imaginary_mode {
        let (t, e, fe) = (p.theta, p.eta, p.f_eta);
        let ft = p.f_theta;
        let conj_sq = ft.norm_sqr() - t * t;
        let r1 = p.f_theta_x * p.f_eta_x + (ft - t) * (fe + e);
        let r2 = p.f_theta_x * (fe - e) + (ft - t) * p.f_eta_y;
        let r3 = p.f_theta_x * p.f_theta_y - conj_sq;
        let r4 = (ft - t) * p.f_theta_y * p.f_eta_y + conj_sq * (fe - e);
        return [r1.norm(), r2.norm(), Complex64::from(r3).norm(), r4.norm()];
    }
    let prod = p.f_theta_minus_theta() * p.f_eta_minus_eta();
    [prod[(0, 0)], prod[(0, 1)], prod[(1, 0)], prod[(1, 1)]]
}

pub fn residual_2d_max(p: &Params2D) -> f64 {
    numeric::max_abs_slice(&residual_2d(p))
}

/// Real phase-space map `A = D = I`, `B = (f_θ − θ)/2ħ`, `C = (f_η + η)/2ħ`.
pub fn maps_2d(p: &Params2D) -> Result<PhaseSpaceMap, Nc2dError> {
    if p.imaginary_mode {
        return Err(Nc2dError::ImaginaryMode);
    }
    p.check_finite()?;
    check_hbar(p.hbar)?;
    let params = p.deformation_params()?;
    Ok(extended_map(&params, &p.f_theta_matrix(), &p.f_eta_matrix())?)
}

/// Unknown ordering used by [`jacobian_rank_2d`].
pub const UNKNOWNS_2D: [&str; 8] = ["f_theta_x", "f_theta_y", "f_eta_x", "f_eta_y", "f_theta", "f_eta", "theta", "eta"];

fn to_vector(p: &Params2D) -> DVector<f64> {
    DVector::from_vec(vec![p.f_theta_x, p.f_theta_y, p.f_eta_x.re, p.f_eta_y.re, p.f_theta.re, p.f_eta, p.theta, p.eta])
}

fn from_vector(v: &DVector<f64>, hbar: f64) -> Params2D {
    Params2D::from_real(v[6], v[7], v[4], v[5], v[0], v[1], v[2], v[3], hbar)
}

/// Rank of the 4×8 Jacobian of the real residual at `p`.
pub fn jacobian_rank_2d(p: &Params2D) -> usize {
    let f = |v: &DVector<f64>| DVector::from_row_slice(&residual_2d(&from_vector(v, p.hbar)));
    let x = to_vector(p);
    let jac = numeric::forward_jacobian(f, &x, &f(&x));
    numeric::rank(&jac, 1e-6)
}

/// JSON scalar: a plain number or a `[re, im]` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum JsonScalar {
    Real(f64),
    Complex([f64; 2]),
}

impl JsonScalar {
    fn of(z: Complex64, imaginary: bool) -> Self {
        if imaginary {
            JsonScalar::Complex([z.re, z.im])
        } else {
            JsonScalar::Real(z.re)
        }
    }

    fn complex(self) -> Complex64 {
        match self {
            JsonScalar::Real(v) => Complex64::new(v, 0.0),
            JsonScalar::Complex([re, im]) => Complex64::new(re, im),
        }
    }

    fn real(self, name: &'static str) -> Result<f64, Nc2dError> {
        match self {
            JsonScalar::Real(v) => Ok(v),
            JsonScalar::Complex([v, 0.0]) => Ok(v),
            JsonScalar::Complex(_) => Err(Nc2dError::Document(format!("{name} must be real"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params2DDocument {
    pub theta: f64,
    pub eta: f64,
    pub f_theta: JsonScalar,
    pub f_eta: f64,
    pub f_theta_x: f64,
    pub f_theta_y: f64,
    pub f_eta_x: JsonScalar,
    pub f_eta_y: JsonScalar,
    pub hbar: f64,
    #[serde(default)]
    pub imaginary_mode: bool,
}

impl From<&Params2D> for Params2DDocument {
    fn from(p: &Params2D) -> Self {
        let im = p.imaginary_mode;
        Self {
            theta: p.theta,
            eta: p.eta,
            f_theta: JsonScalar::of(p.f_theta, im),
            f_eta: p.f_eta,
            f_theta_x: p.f_theta_x,
            f_theta_y: p.f_theta_y,
            f_eta_x: JsonScalar::of(p.f_eta_x, im),
            f_eta_y: JsonScalar::of(p.f_eta_y, im),
            hbar: p.hbar,
            imaginary_mode: im,
        }
    }
}

impl TryFrom<&Params2DDocument> for Params2D {
    type Error = Nc2dError;

    fn try_from(d: &Params2DDocument) -> Result<Self, Self::Error> {
        let p = if d.imaginary_mode {
            Params2D {
                theta: d.theta,
                eta: d.eta,
                f_theta: d.f_theta.complex(),
                f_eta: d.f_eta,
                f_theta_x: d.f_theta_x,
                f_theta_y: d.f_theta_y,
                f_eta_x: d.f_eta_x.complex(),
                f_eta_y: d.f_eta_y.complex(),
                hbar: d.hbar,
                imaginary_mode: true,
            }
        } else {
            Params2D::from_real(
                d.theta,
                d.eta,
                d.f_theta.real("f_theta")?,
                d.f_eta,
                d.f_theta_x,
                d.f_theta_y,
                d.f_eta_x.real("f_eta_x")?,
                d.f_eta_y.real("f_eta_y")?,
                d.hbar,
            )
        };
        check_hbar(p.hbar)?;
        p.check_finite()?;
        Ok(p)
    }
}
