//! Three-dimensional consistency system.
//!
//! With the placements
//!
//! ```text
//! θ   = [[0, θ₁, θ₂], [−θ₁, 0, θ₃], [−θ₂, −θ₃, 0]]
//! f_θ = [[f_θx, f_θ1, f_θ2], [f_θ1, f_θy, f_θ3], [f_θ2, f_θ3, f_θz]]
//! ```
//!
//! (and likewise for η, f_η) the condition `(f_θ − θ)(f_η − η) = 0` is nine
//! bilinear equations in eighteen unknowns. This module evaluates it both by
//! direct multiplication and through the expanded entry formulas, implements
//! the diagonal elimination, generates feasible instances from a null-space
//! construction and solves the system numerically with a damped
//! Gauss-Newton iteration.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{antisym3, extended_map, sym3, AlgebraError, DeformationParams, Mat, PhaseSpaceMap};
use crate::numeric;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Nc3dError {
    #[error("degenerate denominator {name} = {value:e}")]
    DegenerateDenominator { name: &'static str, value: f64 },
    #[error("no feasible instance after {attempts} draws (seed {seed})")]
    GenerationFailed { seed: u64, attempts: usize },
    #[error("starting point has a non-finite entry")]
    NonFiniteStart,
    #[error("hbar must be positive and finite, got {0}")]
    InvalidHbar(f64),
    #[error("unknown name {0:?}")]
    UnknownName(String),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

/// Unknown ordering for Jacobian columns and frozen masks.
pub const UNKNOWNS_3D: [&str; 18] = [
    "f_theta_x",
    "f_theta_y",
    "f_theta_z",
    "f_theta_1",
    "f_theta_2",
    "f_theta_3", //
    "f_eta_x",
    "f_eta_y",
    "f_eta_z",
    "f_eta_1",
    "f_eta_2",
    "f_eta_3", //
    "theta_1",
    "theta_2",
    "theta_3",
    "eta_1",
    "eta_2",
    "eta_3",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params3D {
    pub theta: [f64; 3],
    pub eta: [f64; 3],
    pub f_theta_diag: [f64; 3],
    pub f_theta_off: [f64; 3],
    pub f_eta_diag: [f64; 3],
    pub f_eta_off: [f64; 3],
    pub hbar: f64,
}

impl Params3D {
    pub fn zero(hbar: f64) -> Self {
        Self {
            theta: [0.0; 3],
            eta: [0.0; 3],
            f_theta_diag: [0.0; 3],
            f_theta_off: [0.0; 3],
            f_eta_diag: [0.0; 3],
            f_eta_off: [0.0; 3],
            hbar,
        }
    }

    pub fn to_unknowns(&self) -> [f64; 18] {
        let mut v = [0.0; 18];
        v[0..3].copy_from_slice(&self.f_theta_diag);
        v[3..6].copy_from_slice(&self.f_theta_off);
        v[6..9].copy_from_slice(&self.f_eta_diag);
        v[9..12].copy_from_slice(&self.f_eta_off);
        v[12..15].copy_from_slice(&self.theta);
        v[15..18].copy_from_slice(&self.eta);
        v
    }

    pub fn from_unknowns(v: &[f64], hbar: f64) -> Self {
        assert_eq!(v.len(), 18, "expected 18 unknowns");
        let take = |i: usize| [v[i], v[i + 1], v[i + 2]];
        Self {
            f_theta_diag: take(0),
            f_theta_off: take(3),
            f_eta_diag: take(6),
            f_eta_off: take(9),
            theta: take(12),
            eta: take(15),
            hbar,
        }
    }

    pub fn theta_matrix(&self) -> Mat {
        antisym3(self.theta[0], self.theta[1], self.theta[2])
    }

    pub fn eta_matrix(&self) -> Mat {
        antisym3(self.eta[0], self.eta[1], self.eta[2])
    }

    pub fn f_theta_matrix(&self) -> Mat {
        sym3(self.f_theta_diag, self.f_theta_off)
    }

    pub fn f_eta_matrix(&self) -> Mat {
        sym3(self.f_eta_diag, self.f_eta_off)
    }

    pub fn deformation_params(&self) -> Result<DeformationParams, Nc3dError> {
        Ok(DeformationParams::new(self.theta_matrix(), self.eta_matrix(), self.hbar)?)
    }

    /// The extended map built from these parameters.
    pub fn phase_space_map(&self) -> Result<PhaseSpaceMap, Nc3dError> {
        let params = self.deformation_params()?;
        Ok(extended_map(&params, &self.f_theta_matrix(), &self.f_eta_matrix())?)
    }

    pub fn scale(&self) -> f64 {
        numeric::max_abs_slice(&self.to_unknowns()).max(1.0).powi(2)
    }

    fn all_finite(&self) -> bool {
        self.to_unknowns().iter().all(|v| v.is_finite())
    }
}

/// Entries of `(2ħ)²·BCᵀ = (f_θ − θ)(f_η − η)`, row-major.
pub fn residual_3d(p: &Params3D) -> [f64; 9] {
    let prod = (p.f_theta_matrix() - p.theta_matrix()) * (p.f_eta_matrix() - p.eta_matrix());
    let mut out = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            out[3 * i + j] = prod[(i, j)];
        }
    }
    out
}

pub fn residual_3d_max(p: &Params3D) -> f64 {
    numeric::max_abs_slice(&residual_3d(p))
}

/// Auxiliary combinations used by the expanded entry formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuxQuantities3D {
    /// `μ_k = θ_k f_ηk − η_k f_θk`
    pub mu: [f64; 3],
    /// `(μ₁₂, μ₁₃, μ₂₃) = (μ₁ + μ₂, μ₃ − μ₁, −μ₃ − μ₂)`
    pub mu_pair: [f64; 3],
    /// `(ϑ₁₂, ϑ₁₃, ϑ₂₃, ϑ₂₁, ϑ₃₁, ϑ₃₂)`
    pub vartheta: [f64; 6],
    /// `((θη)₁₂, (θη)₁₃, (θη)₂₃)`
    pub theta_eta: [f64; 3],
    /// `((f_θf_η)₁₂, (f_θf_η)₁₃, (f_θf_η)₂₃)`
    pub f_products: [f64; 3],
    /// `(w₁₂, w₂₁, w₁₃, w₃₁, w₂₃, w₃₂)`
    pub w: [f64; 6],
    /// `(w′₁₂, w′₁₃, w′₂₃)`
    pub w_prime: [f64; 3],
}

pub fn aux_quantities(p: &Params3D) -> AuxQuantities3D {
    let [t1, t2, t3] = p.theta;
    let [e1, e2, e3] = p.eta;
    let [ft1, ft2, ft3] = p.f_theta_off;
    let [fe1, fe2, fe3] = p.f_eta_off;

    let mu = [t1 * fe1 - e1 * ft1, t2 * fe2 - e2 * ft2, t3 * fe3 - e3 * ft3];
    let mu_pair = [mu[0] + mu[1], mu[2] - mu[0], -mu[2] - mu[1]];

    let v12 = t1 * fe2 - e2 * ft1;
    let v13 = t1 * fe3 + e3 * ft1;
    let v23 = t2 * fe3 - e3 * ft2;
    let v21 = t2 * fe1 - e1 * ft2;
    let v31 = t3 * fe1 + e1 * ft3;
    let v32 = t3 * fe2 - e2 * ft3;

    let theta_eta = [t1 * e1 + t2 * e2, t1 * e1 + t3 * e3, t2 * e2 + t3 * e3];
    let f_products = [ft1 * fe1 + ft2 * fe2, ft1 * fe1 + ft3 * fe3, ft2 * fe2 + ft3 * fe3];

    let w23 = t2 * e3 + v23 - ft2 * fe3;
    let w32 = t3 * e2 + v32 - ft3 * fe2;
    let w13 = -t1 * e3 + v13 - ft1 * fe3;
    let w31 = -t3 * e1 - v31 - ft3 * fe1;
    let w12 = t1 * e2 - v12 - ft1 * fe2;
    let w21 = t2 * e1 - v21 - ft2 * fe1;

    let w_prime = [
        theta_eta[0] - f_products[0] + mu_pair[0],
        theta_eta[1] - f_products[1] + mu_pair[1],
        theta_eta[2] - f_products[2] + mu_pair[2],
    ];

    AuxQuantities3D {
        mu,
        mu_pair,
        vartheta: [v12, v13, v23, v21, v31, v32],
        theta_eta,
        f_products,
        w: [w12, w21, w13, w31, w23, w32],
        w_prime,
    }
}

/// The nine expanded equations (left side minus right side), placed at the
/// row-major position of the product entry each one expresses.
pub fn residual_3d_expanded(p: &Params3D) -> [f64; 9] {
    let a = aux_quantities(p);
    let [t1, t2, t3] = p.theta;
    let [e1, e2, e3] = p.eta;
    let [fx, fy, fz] = p.f_theta_diag;
    let [ft1, ft2, ft3] = p.f_theta_off;
    let [gx, gy, gz] = p.f_eta_diag;
    let [fe1, fe2, fe3] = p.f_eta_off;
    let [mu1, mu2, mu3] = a.mu;
    let [v12, v13, v23, v21, v31, v32] = a.vartheta;

    let eq1 = fx * gx + a.f_products[0] - mu1 - mu2 - a.theta_eta[0];
    let eq2 = fy * gy + a.f_products[1] + mu1 - mu3 - a.theta_eta[1];
    let eq3 = fz * gz + a.f_products[2] + mu2 + mu3 - a.theta_eta[2];
    let eq4 = fx * fe1 + gy * ft1 - (t1 * gy + e1 * fx) - v23 + ft2 * fe3 - t2 * e3;
    let eq5 = fx * fe2 + gz * ft2 - (t2 * gz + e2 * fx) - v13 + ft1 * fe3 + t1 * e3;
    let eq6 = gx * ft1 + fy * fe1 + (t1 * gx + e1 * fy) - v32 + ft3 * fe2 - t3 * e2;
    let eq7 = fy * fe3 + gz * ft3 - (t3 * gz + e3 * fy) + v12 + ft1 * fe2 - t1 * e2;
    let eq8 = gx * ft2 + fz * fe2 + (t2 * gx + e2 * fz) + v31 + ft3 * fe1 + t3 * e1;
    let eq9 = gy * ft3 + fz * fe3 + (t3 * gy + e3 * fz) + v21 + ft2 * fe1 - t2 * e1;

    [eq1, eq4, eq5, eq6, eq2, eq7, eq8, eq9, eq3]
}

/// Three closed forms for each diagonal entry of `f_η`, with their gaps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Elimination3D {
    /// `expressions[k][j]`: j-th closed form for diagonal entry k (x, y, z).
    pub expressions: [[f64; 3]; 3],
    /// The stored `(f_ηx, f_ηy, f_ηz)`.
    pub stored: [f64; 3],
    /// Relative gap of each closed form from the stored value.
    pub value_gaps: [[f64; 3]; 3],
    /// Relative gaps between closed forms: (0,1), (0,2), (1,2).
    pub pairwise_gaps: [[f64; 3]; 3],
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

impl Elimination3D {
    pub fn max_value_gap(&self) -> f64 {
        self.value_gaps.iter().flatten().fold(0.0_f64, |m, g| m.max(*g))
    }

    pub fn max_pairwise_gap(&self) -> f64 {
        self.pairwise_gaps.iter().flatten().fold(0.0_f64, |m, g| m.max(*g))
    }

    /// All closed forms agree with each other and with the stored values.
    pub fn consistent(&self, tol: f64) -> bool {
        self.max_value_gap() <= tol && self.max_pairwise_gap() <= tol
    }
}

/// Solves each of the nine equations for the diagonal f_η entry it
/// contains. `tol` bounds the denominators away from zero and defaults to
/// `1e-10·max(1, |p|)`.
pub fn eliminate_3d(p: &Params3D, tol: Option<f64>) -> Result<Elimination3D, Nc3dError> {
    let tol = tol.unwrap_or_else(|| 1e-10 * p.scale().sqrt());
    let [t1, t2, t3] = p.theta;
    let [e1, e2, e3] = p.eta;
    let [fx, fy, fz] = p.f_theta_diag;
    let [ft1, ft2, ft3] = p.f_theta_off;
    let [fe1, fe2, fe3] = p.f_eta_off;

    let denominators: [(&'static str, f64); 9] = [
        ("f_theta_1 + theta_1", ft1 + t1),
        ("f_theta_2 + theta_2", ft2 + t2),
        ("f_theta_x", fx),
        ("f_theta_1 - theta_1", ft1 - t1),
        ("f_theta_3 + theta_3", ft3 + t3),
        ("f_theta_y", fy),
        ("f_theta_2 - theta_2", ft2 - t2),
        ("f_theta_3 - theta_3", ft3 - t3),
        ("f_theta_z", fz),
    ];
    if let Some((name, value)) = denominators.iter().find(|(_, v)| v.abs() <= tol) {
        return Err(Nc3dError::DegenerateDenominator { name, value: *value });
    }

    let a = aux_quantities(p);
    let [w12, w21, w13, w31, w23, w32] = a.w;
    let [wp12, wp13, wp23] = a.w_prime;

    let expressions = [
        [(w32 - (fe1 + e1) * fy) / (ft1 + t1), (w31 - (fe2 + e2) * fz) / (ft2 + t2), wp12 / fx],
        [(w23 - (fe1 - e1) * fx) / (ft1 - t1), (w21 - (fe3 + e3) * fz) / (ft3 + t3), wp13 / fy],
        [(w13 - (fe2 - e2) * fx) / (ft2 - t2), (w12 - (fe3 - e3) * fy) / (ft3 - t3), wp23 / fz],
    ];
    let stored = p.f_eta_diag;
    let mut value_gaps = [[0.0; 3]; 3];
    let mut pairwise_gaps = [[0.0; 3]; 3];
    for k in 0..3 {
        let e = expressions[k];
        for j in 0..3 {
            value_gaps[k][j] = rel_gap(e[j], stored[k]);
        }
        pairwise_gaps[k] = [rel_gap(e[0], e[1]), rel_gap(e[0], e[2]), rel_gap(e[1], e[2])];
    }
    Ok(Elimination3D { expressions, stored, value_gaps, pairwise_gaps })
}

/// Rank of the 9×18 residual Jacobian at `p`, over the unknown ordering
/// [`UNKNOWNS_3D`].
pub fn jacobian_rank_3d(p: &Params3D) -> usize {
    let hbar = p.hbar;
    let f = |v: &DVector<f64>| DVector::from_row_slice(&residual_3d(&Params3D::from_unknowns(v.as_slice(), hbar)));
    let x = DVector::from_row_slice(&p.to_unknowns());
    let jac = numeric::forward_jacobian(f, &x, &f(&x));
    numeric::rank(&jac, 1e-6)
}

/// How [`generate_feasible_3d_with`] satisfies the constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeasibleBranch {
    /// Rank-deficient `f_θ − θ` with `f_η − η` built from its null space.
    #[default]
    NullSpace,
    /// `C = 0`: η and f_η vanish, f_θ and θ arbitrary.
    ZeroC,
}

const MAX_DRAWS: usize = 100;

fn uniform3(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]
}

/// A random (generally infeasible) instance with entries in `[−1, 1)`.
pub fn random_params_3d(seed: u64, hbar: f64) -> Params3D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = [0.0; 18];
    for x in v.iter_mut() {
        *x = rng.gen_range(-1.0..1.0);
    }
    Params3D::from_unknowns(&v, hbar)
}

pub fn generate_feasible_3d(seed: u64, hbar: f64) -> Result<Params3D, Nc3dError> {
    generate_feasible_3d_with(seed, hbar, FeasibleBranch::NullSpace)
}

pub fn generate_feasible_3d_with(seed: u64, hbar: f64, branch: FeasibleBranch) -> Result<Params3D, Nc3dError> {
    if !(hbar.is_finite() && hbar > 0.0) {
        return Err(Nc3dError::InvalidHbar(hbar));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_DRAWS {
        let mut p = Params3D::zero(hbar);
        p.f_theta_diag = uniform3(&mut rng);
        p.f_theta_off = uniform3(&mut rng);
        p.theta = uniform3(&mut rng);
        if branch == FeasibleBranch::ZeroC {
            return Ok(p);
        }
        let f = p.f_theta_matrix() - p.theta_matrix();
        let svd = f.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => continue,
        };
        let mut sigma = svd.singular_values.clone();
        let k = sigma.imin();
        sigma[k] = 0.0;
        let f = &u * DMatrix::from_diagonal(&sigma) * &v_t;
        let null: Vector3<f64> = v_t.row(k).transpose().fixed_rows::<3>(0).into_owned();

        // Split the rank-2 matrix back into symmetric and antisymmetric parts.
        let sym = (&f + f.transpose()) * 0.5;
        let anti = (f.transpose() - &f) * 0.5;
        p.f_theta_diag = [sym[(0, 0)], sym[(1, 1)], sym[(2, 2)]];
        p.f_theta_off = [sym[(0, 1)], sym[(0, 2)], sym[(1, 2)]];
        p.theta = [anti[(0, 1)], anti[(0, 2)], anti[(1, 2)]];

        // Columns of f_η − η = 2ħCᵀ live in ker(f_θ − θ).
        let w = Vector3::from(uniform3(&mut rng));
        let g = null * w.transpose();
        let sym = (g + g.transpose()) * 0.5;
        let anti = (g.transpose() - g) * 0.5;
        p.f_eta_diag = [sym[(0, 0)], sym[(1, 1)], sym[(2, 2)]];
        p.f_eta_off = [sym[(0, 1)], sym[(0, 2)], sym[(1, 2)]];
        p.eta = [anti[(0, 1)], anti[(0, 2)], anti[(1, 2)]];

        if p.all_finite() && residual_3d_max(&p) <= 1e-12 {
            return Ok(p);
        }
    }
    Err(Nc3dError::GenerationFailed { seed, attempts: MAX_DRAWS })
}

/// Which of the eighteen unknowns stay fixed during [`solve_3d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrozenMask(pub [bool; 18]);

impl FrozenMask {
    pub fn none() -> Self {
        Self([false; 18])
    }

    pub fn all() -> Self {
        Self([true; 18])
    }

    /// θ and η fixed, all f entries free.
    pub fn theta_eta() -> Self {
        let mut m = [false; 18];
        m[12..].fill(true);
        Self(m)
    }

    /// Parses a comma-separated list of unknown names or the groups
    /// `theta`, `eta`, `f_theta`, `f_eta`.
    pub fn parse(spec: &str) -> Result<Self, Nc3dError> {
        let mut m = [false; 18];
        for name in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let range = match name {
                "f_theta" => 0..6,
                "f_eta" => 6..12,
                "theta" => 12..15,
                "eta" => 15..18,
                "all" => 0..18,
                other => {
                    let i = UNKNOWNS_3D
                        .iter()
                        .position(|n| *n == other)
                        .ok_or_else(|| Nc3dError::UnknownName(other.to_string()))?;
                    i..i + 1
                }
            };
            m[range].fill(true);
        }
        Ok(Self(m))
    }

    pub fn free_indices(&self) -> Vec<usize> {
        (0..18).filter(|i| !self.0[*i]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub trace: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 50, trace: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveStatus {
    Converged,
    NonConvergence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceStep {
    pub iteration: usize,
    pub residual_max: f64,
    pub residual_norm: f64,
    pub damping: f64,
    pub step_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    /// Final iterate on convergence, otherwise the best accepted iterate.
    pub params: Params3D,
    pub iterations: usize,
    pub residual_max: f64,
    pub history: Vec<TraceStep>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

const MAX_HALVINGS: usize = 30;
const DAMPING_START: f64 = 1e-8;
const DAMPING_MAX: f64 = 1e4;

/// Damped Gauss-Newton on [`residual_3d`] over the free unknowns.
///
/// Each step solves `(JᵀJ + λ‖J‖·I) δ = −Jᵀr` with `λ` starting at
/// `1e-8·‖J‖`, followed by a halving line search on `‖r‖₂`. When no
/// halving decreases the residual, `λ` grows tenfold up to `1e4·‖J‖`;
/// past that the best iterate is returned as non-converged.
pub fn solve_3d(p0: &Params3D, frozen: FrozenMask, opts: SolveOptions) -> Result<SolveReport, Nc3dError> {
    if !p0.all_finite() {
        return Err(Nc3dError::NonFiniteStart);
    }
    if !(p0.hbar.is_finite() && p0.hbar > 0.0) {
        return Err(Nc3dError::InvalidHbar(p0.hbar));
    }
    let hbar = p0.hbar;
    let base = p0.to_unknowns();
    let free = frozen.free_indices();
    let assemble = |x: &DVector<f64>| {
        let mut v = base;
        for (k, &i) in free.iter().enumerate() {
            v[i] = x[k];
        }
        Params3D::from_unknowns(&v, hbar)
    };
    let eval = |x: &DVector<f64>| DVector::from_row_slice(&residual_3d(&assemble(x)));

    let mut x = DVector::from_iterator(free.len(), free.iter().map(|&i| base[i]));
    let mut r = eval(&x);
    let mut history = Vec::new();
    let record = |history: &mut Vec<TraceStep>, it: usize, r: &DVector<f64>, damping: f64, step: f64| {
        if opts.trace {
            history.push(TraceStep {
                iteration: it,
                residual_max: r.amax(),
                residual_norm: r.norm(),
                damping,
                step_length: step,
            });
        }
    };
    record(&mut history, 0, &r, 0.0, 0.0);

    let finish = |status, x: &DVector<f64>, r: &DVector<f64>, iterations, history| SolveReport {
        status,
        params: assemble(x),
        iterations,
        residual_max: r.amax(),
        history,
    };

    if r.amax() <= opts.tol {
        return Ok(finish(SolveStatus::Converged, &x, &r, 0, history));
    }
    if free.is_empty() {
        return Ok(finish(SolveStatus::NonConvergence, &x, &r, 0, history));
    }

    for it in 1..=opts.max_iter {
        let jac = numeric::forward_jacobian(eval, &x, &r);
        let jnorm = jac.norm();
        if jnorm == 0.0 || !jnorm.is_finite() {
            return Ok(finish(SolveStatus::NonConvergence, &x, &r, it - 1, history));
        }
        let jtj = jac.transpose() * &jac;
        let rhs = -(jac.transpose() * &r);
        let current = r.norm();

        let mut lambda = DAMPING_START * jnorm;
        let mut accepted = None;
        while lambda <= DAMPING_MAX * jnorm {
            let mut a = jtj.clone();
            for k in 0..a.nrows() {
                a[(k, k)] += lambda * jnorm;
            }
            if let Some(chol) = a.cholesky() {
                let delta = chol.solve(&rhs);
                if delta.iter().all(|v| v.is_finite()) {
                    let mut t = 1.0;
                    for _ in 0..=MAX_HALVINGS {
                        let trial = &x + &delta * t;
                        let rt = eval(&trial);
                        if rt.norm() < current {
                            accepted = Some((trial, rt, t));
                            break;
                        }
                        t *= 0.5;
                    }
                }
            }
            if accepted.is_some() {
                break;
            }
            lambda *= 10.0;
        }

        match accepted {
            Some((nx, nr, t)) => {
                x = nx;
                r = nr;
                record(&mut history, it, &r, lambda, t);
                if r.amax() <= opts.tol {
                    return Ok(finish(SolveStatus::Converged, &x, &r, it, history));
                }
            }
            None => return Ok(finish(SolveStatus::NonConvergence, &x, &r, it - 1, history)),
        }
    }
    Ok(finish(SolveStatus::NonConvergence, &x, &r, opts.max_iter, history))
}

/// Adds uniform noise of amplitude `amplitude` to the six f_η entries.
pub fn perturb_f_eta(p: &Params3D, seed: u64, amplitude: f64) -> Params3D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = *p;
    for v in q.f_eta_diag.iter_mut().chain(q.f_eta_off.iter_mut()) {
        *v += amplitude * rng.gen_range(-1.0..1.0);
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{max_abs, verify_deformation};

    /// Entry-by-entry 3×3 product written out with explicit loops.
    fn brute_product(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [f64; 9] {
        let mut out = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += a[i][k] * b[k][j];
                }
                out[3 * i + j] = s;
            }
        }
        out
    }

    #[test]
    fn zero_parameters_have_zero_residual() {
        assert_eq!(residual_3d(&Params3D::zero(1.0)), [0.0; 9]);
        let a = aux_quantities(&Params3D::zero(1.0));
        assert_eq!(a.mu, [0.0; 3]);
        assert_eq!(a.w, [0.0; 6]);
        assert_eq!(a.w_prime, [0.0; 3]);
    }

    #[test]
    fn pure_theta_eta_product() {
        let mut p = Params3D::zero(1.0);
        p.theta = [1.0, 0.0, 0.0];
        p.eta = [0.0, 0.0, 1.0];
        // (−θ)(−η) with θ = antisym(1,0,0), η = antisym(0,0,1)
        let th = [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        let et = [[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]];
        let expected = brute_product(&th, &et);
        assert_eq!(residual_3d(&p), expected);
        assert_eq!(expected[2], 1.0);
    }

    #[test]
    fn aux_examples() {
        let mut p = Params3D::zero(1.0);
        p.theta[0] = 1.0;
        p.f_eta_off[0] = 2.0;
        p.eta[0] = 3.0;
        p.f_theta_off[0] = 4.0;
        assert_eq!(aux_quantities(&p).mu[0], -10.0);

        let mut q = Params3D::zero(1.0);
        q.theta = [1.0, 3.0, 0.0];
        q.eta = [2.0, 4.0, 0.0];
        assert_eq!(aux_quantities(&q).theta_eta[0], 14.0);
    }

    #[test]
    fn expanded_formulas_match_direct_product() {
        for seed in 0..200 {
            let p = random_params_3d(seed, 1.0);
            let direct = residual_3d(&p);
            let expanded = residual_3d_expanded(&p);
            for k in 0..9 {
                assert!((direct[k] - expanded[k]).abs() <= 1e-12 * p.scale(), "seed {seed} entry {k}");
            }
        }
    }

    #[test]
    fn generated_instances_are_feasible() {
        for seed in 0..200 {
            let p = generate_feasible_3d(seed, 1.0).unwrap();
            assert!(residual_3d_max(&p) <= 1e-12);
            let m = p.phase_space_map().unwrap();
            let r = verify_deformation(&m, &p.deformation_params().unwrap(), 1e-12).unwrap();
            assert!(r.pass, "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn zero_c_branch() {
        let p = generate_feasible_3d_with(2, 1.0, FeasibleBranch::ZeroC).unwrap();
        assert_eq!(p.eta, [0.0; 3]);
        assert_eq!(p.f_eta_diag, [0.0; 3]);
        assert_eq!(p.f_eta_off, [0.0; 3]);
        assert_eq!(residual_3d_max(&p), 0.0);
        assert!(max_abs(&p.f_theta_matrix()) > 0.0);
    }

    #[test]
    fn elimination_agrees_on_feasible_instances() {
        let p = generate_feasible_3d(1, 1.0).unwrap();
        let e = eliminate_3d(&p, None).unwrap();
        assert!(e.consistent(1e-10), "{e:?}");
    }

    #[test]
    fn elimination_of_commutative_limit_is_degenerate() {
        assert!(matches!(eliminate_3d(&Params3D::zero(1.0), None), Err(Nc3dError::DegenerateDenominator { .. })));
    }

    #[test]
    fn elimination_reports_gaps_on_infeasible_instances() {
        let p = random_params_3d(7, 1.0);
        let e = eliminate_3d(&p, None).unwrap();
        assert!(residual_3d_max(&p) > 1e-3);
        assert!(e.max_value_gap() > 1e-6);
    }

    #[test]
    fn solver_fixed_point() {
        let p = generate_feasible_3d(3, 1.0).unwrap();
        let rep = solve_3d(&p, FrozenMask::theta_eta(), SolveOptions::default()).unwrap();
        assert!(rep.converged());
        assert_eq!(rep.iterations, 0);
        assert_eq!(rep.params, p);
    }

    #[test]
    fn solver_recovers_from_perturbation() {
        let p = generate_feasible_3d(11, 1.0).unwrap();
        let q = perturb_f_eta(&p, 99, 1e-3);
        assert!(residual_3d_max(&q) > 1e-6);
        let opts = SolveOptions { tol: 1e-10, max_iter: 20, trace: true };
        let rep = solve_3d(&q, FrozenMask::theta_eta(), opts).unwrap();
        assert!(rep.converged(), "{rep:?}");
        assert!(rep.residual_max <= 1e-10);
        assert_eq!(rep.params.theta, q.theta);
        assert_eq!(rep.params.eta, q.eta);
        for w in rep.history.windows(2) {
            assert!(w[1].residual_norm <= w[0].residual_norm);
        }
    }

    #[test]
    fn frozen_everything_keeps_obstruction() {
        let mut p = Params3D::zero(1.0);
        p.theta = [0.4, -0.3, 0.8];
        p.eta = [0.5, 0.2, -0.6];
        let rep = solve_3d(&p, FrozenMask::all(), SolveOptions::default()).unwrap();
        assert_eq!(rep.status, SolveStatus::NonConvergence);
        let obstruction = crate::algebra::sw_obstruction(&p.deformation_params().unwrap());
        assert!(obstruction > 0.0);
        assert!(rep.residual_max >= obstruction);
    }

    #[test]
    fn jacobian_rank_at_feasible_points() {
        for seed in 0..20 {
            assert_eq!(jacobian_rank_3d(&generate_feasible_3d(seed, 1.0).unwrap()), 7);
        }
    }

    #[test]
    fn mask_parsing() {
        assert_eq!(FrozenMask::parse("theta,eta").unwrap(), FrozenMask::theta_eta());
        let m = FrozenMask::parse("f_eta_z, theta_2").unwrap();
        assert_eq!(m.free_indices().len(), 16);
        assert!(FrozenMask::parse("bogus").is_err());
    }

    #[test]
    fn unknown_vector_round_trip() {
        let p = random_params_3d(5, 2.0);
        assert_eq!(Params3D::from_unknowns(&p.to_unknowns(), 2.0), p);
    }
}
