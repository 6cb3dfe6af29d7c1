//! Linear phase-space maps and the commutator tables they induce.
//!
//! A map sends commutative coordinates `(x, p)` to deformed ones through
//!
//! ```text
//! x̂ = A x + B p
//! p̂ = C x + D p
//! ```
//!
//! With `[x_i, p_j] = iħδ_ij` on the commutative side, the induced brackets are
//! `[x̂, x̂] = iħ(ABᵀ − BAᵀ)`, `[p̂, p̂] = iħ(CDᵀ − DCᵀ)` and
//! `[x̂, p̂] = iħ(ADᵀ − BCᵀ)`. The same three blocks appear in `ħ·M·J·Mᵀ`
//! where `J = [[0, I], [−I, 0]]`; both routes are implemented so they can be
//! checked against each other.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Mat = DMatrix<f64>;

/// Largest condition number accepted by [`invert_map`].
pub const MAX_CONDITION: f64 = 1e12;

/// Reference upper bound on the spatial noncommutativity parameter, in m².
pub const THETA_BOUND_M2: f64 = 4e-40;

/// Reference upper bound on the momentum noncommutativity parameter.
///
/// Quoted in m²/s² in the literature; stored as a bare magnitude. No unit
/// conversion is applied anywhere in this crate.
pub const ETA_BOUND: f64 = 1.76e-61;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlgebraError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("{0} must be antisymmetric")]
    NotAntisymmetric(&'static str),
    #[error("{0} must be symmetric")]
    NotSymmetric(&'static str),
    #[error("hbar must be positive and finite, got {0}")]
    InvalidHbar(f64),
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("the spatial Seiberg-Witten map cannot carry momentum noncommutativity (eta != 0)")]
    NonZeroEta,
    #[error("scale factors must be nonzero (alpha = {alpha}, beta = {beta})")]
    ZeroScale { alpha: f64, beta: f64 },
    #[error("phase-space map is singular (condition number {condition:e})")]
    Singular { condition: f64 },
    #[error("malformed matrix in {0}: rows have unequal length")]
    Ragged(&'static str),
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

fn symmetry_tol(m: &Mat) -> f64 {
    1e-12 * max_abs(m).max(1.0)
}

pub fn is_antisymmetric(m: &Mat) -> bool {
    m.is_square() && max_abs(&(m + m.transpose())) <= symmetry_tol(m)
}

pub fn is_symmetric(m: &Mat) -> bool {
    m.is_square() && max_abs(&(m - m.transpose())) <= symmetry_tol(m)
}

fn all_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// The 2×2 antisymmetric unit `[[0, 1], [−1, 0]]`.
pub fn epsilon2() -> Mat {
    Mat::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])
}

/// 3×3 antisymmetric matrix with `t1` at (1,2), `t2` at (1,3), `t3` at (2,3).
pub fn antisym3(t1: f64, t2: f64, t3: f64) -> Mat {
    Mat::from_row_slice(3, 3, &[0.0, t1, t2, -t1, 0.0, t3, -t2, -t3, 0.0])
}

/// Symmetric 3×3 matrix with the given diagonal and off-diagonal
/// entries `off = (m12, m13, m23)`.
pub fn sym3(diag: [f64; 3], off: [f64; 3]) -> Mat {
    Mat::from_row_slice(
        3,
        3,
        &[
            diag[0], off[0], off[1], //
            off[0], diag[1], off[2], //
            off[1], off[2], diag[2],
        ],
    )
}

/// Target algebra `[x̂, x̂] = iθ`, `[p̂, p̂] = iη`, `[x̂, p̂] = iħI`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationParams {
    theta: Mat,
    eta: Mat,
    hbar: f64,
}

impl DeformationParams {
    /// Validates antisymmetry and stores the exactly antisymmetrized parts.
    pub fn new(theta: Mat, eta: Mat, hbar: f64) -> Result<Self, AlgebraError> {
        let dim = theta.nrows();
        if dim == 0 {
            return Err(AlgebraError::ZeroDimension);
        }
        if !theta.is_square() {
            return Err(AlgebraError::DimensionMismatch { expected: dim, found: theta.ncols() });
        }
        if eta.nrows() != dim || eta.ncols() != dim {
            return Err(AlgebraError::DimensionMismatch { expected: dim, found: eta.nrows() });
        }
        if !(hbar.is_finite() && hbar > 0.0) {
            return Err(AlgebraError::InvalidHbar(hbar));
        }
        if !all_finite(&theta) {
            return Err(AlgebraError::NonFinite("theta"));
        }
        if !all_finite(&eta) {
            return Err(AlgebraError::NonFinite("eta"));
        }
        if !is_antisymmetric(&theta) {
            return Err(AlgebraError::NotAntisymmetric("theta"));
        }
        if !is_antisymmetric(&eta) {
            return Err(AlgebraError::NotAntisymmetric("eta"));
        }
        let theta = (&theta - theta.transpose()) * 0.5;
        let eta = (&eta - eta.transpose()) * 0.5;
        Ok(Self { theta, eta, hbar })
    }

    pub fn commutative(dim: usize, hbar: f64) -> Result<Self, AlgebraError> {
        Self::new(Mat::zeros(dim, dim), Mat::zeros(dim, dim), hbar)
    }

    pub fn dim(&self) -> usize {
        self.theta.nrows()
    }

    pub fn theta(&self) -> &Mat {
        &self.theta
    }

    pub fn eta(&self) -> &Mat {
        &self.eta
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }
}

/// Blocks of `M = [[A, B], [C, D]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpaceMap {
    a: Mat,
    b: Mat,
    c: Mat,
    d: Mat,
}

impl PhaseSpaceMap {
    pub fn new(a: Mat, b: Mat, c: Mat, d: Mat) -> Result<Self, AlgebraError> {
        let dim = a.nrows();
        if dim == 0 {
            return Err(AlgebraError::ZeroDimension);
        }
        for (m, name) in [(&a, "A"), (&b, "B"), (&c, "C"), (&d, "D")] {
            if m.nrows() != dim || m.ncols() != dim {
                let found = if m.nrows() != dim { m.nrows() } else { m.ncols() };
                return Err(AlgebraError::DimensionMismatch { expected: dim, found });
            }
            if !all_finite(m) {
                return Err(AlgebraError::NonFinite(name));
            }
        }
        Ok(Self { a, b, c, d })
    }

    pub fn identity(dim: usize) -> Self {
        let i = Mat::identity(dim, dim);
        let z = Mat::zeros(dim, dim);
        Self { a: i.clone(), b: z.clone(), c: z, d: i }
    }

    /// Splits a `2d × 2d` matrix into its four blocks.
    pub fn from_block_matrix(m: &Mat) -> Result<Self, AlgebraError> {
        if !m.is_square() || !m.nrows().is_multiple_of(2) {
            return Err(AlgebraError::DimensionMismatch { expected: m.nrows(), found: m.ncols() });
        }
        let d = m.nrows() / 2;
        Self::new(
            m.view((0, 0), (d, d)).into_owned(),
            m.view((0, d), (d, d)).into_owned(),
            m.view((d, 0), (d, d)).into_owned(),
            m.view((d, d), (d, d)).into_owned(),
        )
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn b(&self) -> &Mat {
        &self.b
    }

    pub fn c(&self) -> &Mat {
        &self.c
    }

    pub fn d(&self) -> &Mat {
        &self.d
    }

    pub fn block_matrix(&self) -> Mat {
        let d = self.dim();
        let mut m = Mat::zeros(2 * d, 2 * d);
        m.view_mut((0, 0), (d, d)).copy_from(&self.a);
        m.view_mut((0, d), (d, d)).copy_from(&self.b);
        m.view_mut((d, 0), (d, d)).copy_from(&self.c);
        m.view_mut((d, d), (d, d)).copy_from(&self.d);
        m
    }

    /// Applies the map to a phase-space point `z = (x, p)`.
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        let m = self.block_matrix();
        let v = nalgebra::DVector::from_column_slice(z);
        (m * v).iter().copied().collect()
    }

    /// Induced brackets from the block formulas.
    pub fn bracket_table(&self, hbar: f64) -> BracketTable {
        bracket_table(self, hbar)
    }
}

/// Induced commutators divided by `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BracketTable {
    pub xx: Mat,
    pub pp: Mat,
    pub xp: Mat,
}

impl BracketTable {
    pub fn max_abs_diff(&self, other: &BracketTable) -> f64 {
        max_abs(&(&self.xx - &other.xx)).max(max_abs(&(&self.pp - &other.pp))).max(max_abs(&(&self.xp - &other.xp)))
    }
}

pub fn bracket_table(map: &PhaseSpaceMap, hbar: f64) -> BracketTable {
    let (a, b, c, d) = (&map.a, &map.b, &map.c, &map.d);
    BracketTable {
        xx: (a * b.transpose() - b * a.transpose()) * hbar,
        pp: (c * d.transpose() - d * c.transpose()) * hbar,
        xp: (a * d.transpose() - b * c.transpose()) * hbar,
    }
}

/// Canonical symplectic form `[[0, I], [−I, 0]]` of size `2d`.
pub fn symplectic_form(dim: usize) -> Mat {
    let mut j = Mat::zeros(2 * dim, 2 * dim);
    for i in 0..dim {
        j[(i, dim + i)] = 1.0;
        j[(dim + i, i)] = -1.0;
    }
    j
}

/// Same table as [`bracket_table`] computed as `ħ·M·J·Mᵀ`.
pub fn bracket_table_symplectic(map: &PhaseSpaceMap, hbar: f64) -> BracketTable {
    let d = map.dim();
    let m = map.block_matrix();
    let full = &m * symplectic_form(d) * m.transpose() * hbar;
    BracketTable {
        xx: full.view((0, 0), (d, d)).into_owned(),
        pp: full.view((d, d), (d, d)).into_owned(),
        xp: full.view((0, d), (d, d)).into_owned(),
    }
}

/// Rounding scale for the bracket computation: `ħ·max(|M|·|M|ᵀ)`.
pub fn bracket_scale(map: &PhaseSpaceMap, hbar: f64) -> f64 {
    let m = map.block_matrix().abs();
    hbar * max_abs(&(&m * m.transpose())).max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub max_abs_xx: f64,
    pub max_abs_pp: f64,
    pub max_abs_xp: f64,
    pub tol: f64,
    pub pass: bool,
}

impl ResidualReport {
    pub fn max(&self) -> f64 {
        self.max_abs_xx.max(self.max_abs_pp).max(self.max_abs_xp)
    }
}

pub fn verify_deformation(
    map: &PhaseSpaceMap,
    params: &DeformationParams,
    tol: f64,
) -> Result<ResidualReport, AlgebraError> {
    if map.dim() != params.dim() {
        return Err(AlgebraError::DimensionMismatch { expected: params.dim(), found: map.dim() });
    }
    let t = bracket_table(map, params.hbar);
    let ident = Mat::identity(params.dim(), params.dim()) * params.hbar;
    let max_abs_xx = max_abs(&(&t.xx - &params.theta));
    let max_abs_pp = max_abs(&(&t.pp - &params.eta));
    let max_abs_xp = max_abs(&(&t.xp - ident));
    let pass = max_abs_xx <= tol && max_abs_pp <= tol && max_abs_xp <= tol;
    Ok(ResidualReport { max_abs_xx, max_abs_pp, max_abs_xp, tol, pass })
}

/// `x̂ = x − θp/2ħ`, `p̂ = p`.
pub fn sw_map(params: &DeformationParams) -> Result<PhaseSpaceMap, AlgebraError> {
    if max_abs(&params.eta) != 0.0 {
        return Err(AlgebraError::NonZeroEta);
    }
    let d = params.dim();
    let i = Mat::identity(d, d);
    let b = -&params.theta / (2.0 * params.hbar);
    PhaseSpaceMap::new(i.clone(), b, Mat::zeros(d, d), i)
}

/// `A = D = I`, `B = (f_θ − θ)/2ħ`, `C = (f_η + η)/2ħ`.
///
/// The xx and pp blocks reproduce θ and η for any symmetric `f`; the xp
/// block equals `ħ(I − BCᵀ)`.
pub fn extended_map(params: &DeformationParams, f_theta: &Mat, f_eta: &Mat) -> Result<PhaseSpaceMap, AlgebraError> {
    let d = params.dim();
    for (f, name) in [(f_theta, "f_theta"), (f_eta, "f_eta")] {
        if f.nrows() != d || f.ncols() != d {
            return Err(AlgebraError::DimensionMismatch { expected: d, found: f.nrows() });
        }
        if !all_finite(f) {
            return Err(AlgebraError::NonFinite(name));
        }
        if !is_symmetric(f) {
            return Err(AlgebraError::NotSymmetric(name));
        }
    }
    let h2 = 2.0 * params.hbar;
    let i = Mat::identity(d, d);
    PhaseSpaceMap::new(i.clone(), (f_theta - &params.theta) / h2, (f_eta + &params.eta) / h2, i)
}

/// `x̂ = αx + ((f − θ)/2ħα) p`, `p̂ = βp`.
pub fn scaled_spatial_map(
    theta: &Mat,
    f: &Mat,
    alpha: f64,
    beta: f64,
    hbar: f64,
) -> Result<PhaseSpaceMap, AlgebraError> {
    if alpha == 0.0 || beta == 0.0 || !alpha.is_finite() || !beta.is_finite() {
        return Err(AlgebraError::ZeroScale { alpha, beta });
    }
    if !(hbar.is_finite() && hbar > 0.0) {
        return Err(AlgebraError::InvalidHbar(hbar));
    }
    let d = theta.nrows();
    if !is_antisymmetric(theta) {
        return Err(AlgebraError::NotAntisymmetric("theta"));
    }
    if f.nrows() != d || f.ncols() != d {
        return Err(AlgebraError::DimensionMismatch { expected: d, found: f.nrows() });
    }
    if !is_symmetric(f) {
        return Err(AlgebraError::NotSymmetric("f"));
    }
    let i = Mat::identity(d, d);
    PhaseSpaceMap::new(&i * alpha, (f - theta) / (2.0 * hbar * alpha), Mat::zeros(d, d), &i * beta)
}

/// Condition number `σ_max/σ_min` of the full block matrix.
pub fn condition_number(map: &PhaseSpaceMap) -> f64 {
    let sv = map.block_matrix().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if smin == 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

pub fn invert_map(map: &PhaseSpaceMap) -> Result<PhaseSpaceMap, AlgebraError> {
    let condition = condition_number(map);
    if condition.is_nan() || condition > MAX_CONDITION {
        return Err(AlgebraError::Singular { condition });
    }
    let inv = map.block_matrix().try_inverse().ok_or(AlgebraError::Singular { condition })?;
    PhaseSpaceMap::from_block_matrix(&inv)
}

/// Block product `M_outer · M_inner` (apply `inner` first).
pub fn compose(outer: &PhaseSpaceMap, inner: &PhaseSpaceMap) -> Result<PhaseSpaceMap, AlgebraError> {
    if outer.dim() != inner.dim() {
        return Err(AlgebraError::DimensionMismatch { expected: outer.dim(), found: inner.dim() });
    }
    let (a1, b1, c1, d1) = (&outer.a, &outer.b, &outer.c, &outer.d);
    let (a2, b2, c2, d2) = (&inner.a, &inner.b, &inner.c, &inner.d);
    PhaseSpaceMap::new(a1 * a2 + b1 * c2, a1 * b2 + b1 * d2, c1 * a2 + d1 * c2, c1 * b2 + d1 * d2)
}

/// Max-entry norm of `BCᵀ` for the `f = 0` extended map: `‖θη‖/(4ħ²)`.
///
/// Zero exactly when `θη = 0`. The induced xp block then deviates from `ħI`
/// by `ħ` times this value.
pub fn sw_obstruction(params: &DeformationParams) -> f64 {
    max_abs(&(&params.theta * &params.eta)) / (4.0 * params.hbar * params.hbar)
}

fn rows_of(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn mat_from_rows(rows: &[Vec<f64>], dim: usize, name: &'static str) -> Result<Mat, AlgebraError> {
    if rows.len() != dim {
        return Err(AlgebraError::DimensionMismatch { expected: dim, found: rows.len() });
    }
    let mut m = Mat::zeros(dim, dim);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != dim {
            return Err(AlgebraError::Ragged(name));
        }
        for (j, v) in row.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    Ok(m)
}

/// JSON form `{"dim", "hbar", "A", "B", "C", "D"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapDocument {
    pub dim: usize,
    pub hbar: f64,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    pub d: Vec<Vec<f64>>,
}

impl MapDocument {
    pub fn from_map(map: &PhaseSpaceMap, hbar: f64) -> Self {
        Self { dim: map.dim(), hbar, a: rows_of(&map.a), b: rows_of(&map.b), c: rows_of(&map.c), d: rows_of(&map.d) }
    }

    pub fn to_map(&self) -> Result<PhaseSpaceMap, AlgebraError> {
        PhaseSpaceMap::new(
            mat_from_rows(&self.a, self.dim, "A")?,
            mat_from_rows(&self.b, self.dim, "B")?,
            mat_from_rows(&self.c, self.dim, "C")?,
            mat_from_rows(&self.d, self.dim, "D")?,
        )
    }
}

/// JSON form `{"dim", "hbar", "theta", "eta"}`; a missing `eta` reads as zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsDocument {
    pub dim: usize,
    pub hbar: f64,
    pub theta: Vec<Vec<f64>>,
    #[serde(default)]
    pub eta: Option<Vec<Vec<f64>>>,
}

impl ParamsDocument {
    pub fn from_params(p: &DeformationParams) -> Self {
        Self { dim: p.dim(), hbar: p.hbar, theta: rows_of(&p.theta), eta: Some(rows_of(&p.eta)) }
    }

    pub fn to_params(&self) -> Result<DeformationParams, AlgebraError> {
        let theta = mat_from_rows(&self.theta, self.dim, "theta")?;
        let eta = match &self.eta {
            Some(rows) => mat_from_rows(rows, self.dim, "eta")?,
            None => Mat::zeros(self.dim, self.dim),
        };
        DeformationParams::new(theta, eta, self.hbar)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params(theta: Mat, eta: Mat, hbar: f64) -> DeformationParams {
        DeformationParams::new(theta, eta, hbar).unwrap()
    }

    #[test]
    fn identity_preserves_canonical_algebra() {
        for d in 1..=3 {
            let t = bracket_table(&PhaseSpaceMap::identity(d), 1.0);
            assert_eq!(max_abs(&t.xx), 0.0);
            assert_eq!(max_abs(&t.pp), 0.0);
            assert_eq!(t.xp, Mat::identity(d, d));
        }
    }

    #[test]
    fn half_theta_shift_yields_theta_bracket() {
        let e = epsilon2();
        let i = Mat::identity(2, 2);
        let map = PhaseSpaceMap::new(i.clone(), &e * -0.5, Mat::zeros(2, 2), i.clone()).unwrap();
        let t = bracket_table(&map, 1.0);
        assert_eq!(t.xx, e);
        assert_eq!(max_abs(&t.pp), 0.0);
        assert_eq!(t.xp, i);
        let s = bracket_table_symplectic(&map, 1.0);
        assert!(t.max_abs_diff(&s) <= 1e-15);
    }

    #[test]
    fn scaled_diagonal_blocks_multiply_in_xp() {
        let i = Mat::identity(3, 3);
        let z = Mat::zeros(3, 3);
        let map = PhaseSpaceMap::new(&i * 2.5, z.clone(), z, &i * -0.4).unwrap();
        let t = bracket_table(&map, 1.0);
        assert_abs_diff_eq!(max_abs(&(t.xp - &i * (2.5 * -0.4))), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn blocks_must_share_dimension() {
        let err = PhaseSpaceMap::new(Mat::identity(2, 2), Mat::zeros(3, 3), Mat::zeros(2, 2), Mat::identity(2, 2))
            .unwrap_err();
        assert_eq!(err, AlgebraError::DimensionMismatch { expected: 2, found: 3 });
    }

    #[test]
    fn params_reject_symmetric_theta() {
        let t = Mat::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(
            DeformationParams::new(t, Mat::zeros(2, 2), 1.0).unwrap_err(),
            AlgebraError::NotAntisymmetric("theta")
        );
        assert!(matches!(DeformationParams::new(epsilon2(), Mat::zeros(2, 2), 0.0), Err(AlgebraError::InvalidHbar(_))));
    }

    #[test]
    fn sw_map_reproduces_theta() {
        let p = params(epsilon2(), Mat::zeros(2, 2), 1.0);
        let m = sw_map(&p).unwrap();
        assert_eq!(m.b(), &Mat::from_row_slice(2, 2, &[0.0, -0.5, 0.5, 0.0]));
        assert!(verify_deformation(&m, &p, 1e-12).unwrap().pass);

        let p3 = params(antisym3(1.0, 0.0, 0.0), Mat::zeros(3, 3), 2.0);
        let m3 = sw_map(&p3).unwrap();
        assert_eq!(m3.b()[(0, 1)], -0.25);
        assert_eq!(m3.b()[(1, 0)], 0.25);
        assert_eq!(max_abs(&m3.b().clone().select_rows(&[2])), 0.0);
        assert!(verify_deformation(&m3, &p3, 1e-12).unwrap().pass);
    }

    #[test]
    fn sw_map_of_zero_theta_is_identity() {
        let p = DeformationParams::commutative(3, 1.0).unwrap();
        assert_eq!(sw_map(&p).unwrap(), PhaseSpaceMap::identity(3));
    }

    #[test]
    fn sw_map_rejects_eta() {
        let p = params(epsilon2(), epsilon2(), 1.0);
        assert_eq!(sw_map(&p).unwrap_err(), AlgebraError::NonZeroEta);
    }

    #[test]
    fn verify_detects_wrong_theta() {
        let m = sw_map(&params(epsilon2(), Mat::zeros(2, 2), 1.0)).unwrap();
        let r = verify_deformation(&m, &params(epsilon2() * 2.0, Mat::zeros(2, 2), 1.0), 1e-12).unwrap();
        assert!(!r.pass);
        assert_abs_diff_eq!(r.max_abs_xx, 1.0, epsilon = 1e-15);
        assert_eq!(r.max_abs_pp, 0.0);

        let id = verify_deformation(&PhaseSpaceMap::identity(2), &DeformationParams::commutative(2, 1.0).unwrap(), 0.0)
            .unwrap();
        assert!(id.pass);
        assert!(matches!(
            verify_deformation(&PhaseSpaceMap::identity(3), &DeformationParams::commutative(2, 1.0).unwrap(), 1.0),
            Err(AlgebraError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn extended_map_with_zero_f_matches_sw() {
        let p = params(epsilon2() * 0.7, Mat::zeros(2, 2), 1.3);
        let z = Mat::zeros(2, 2);
        assert_eq!(extended_map(&p, &z, &z).unwrap(), sw_map(&p).unwrap());
    }

    #[test]
    fn extended_map_obstruction_shows_in_xp() {
        let p = params(epsilon2(), epsilon2(), 1.0);
        let z = Mat::zeros(2, 2);
        let m = extended_map(&p, &z, &z).unwrap();
        let t = bracket_table(&m, 1.0);
        assert!(max_abs(&(&t.xx - p.theta())) <= 1e-15);
        assert!(max_abs(&(&t.pp - p.eta())) <= 1e-15);
        // θη = εε = −I, so BCᵀ = −I/4 and xp = I + I/4.
        assert!(max_abs(&(t.xp - Mat::identity(2, 2) * 1.25)) <= 1e-15);
        assert_abs_diff_eq!(sw_obstruction(&p), 0.25, epsilon = 1e-16);
    }

    #[test]
    fn extended_map_rejects_asymmetric_f() {
        let p = params(epsilon2(), Mat::zeros(2, 2), 1.0);
        assert_eq!(
            extended_map(&p, &epsilon2(), &Mat::zeros(2, 2)).unwrap_err(),
            AlgebraError::NotSymmetric("f_theta")
        );
    }

    #[test]
    fn scaled_map_cases() {
        let e = epsilon2();
        let z = Mat::zeros(2, 2);
        let p = params(e.clone(), z.clone(), 1.0);
        assert_eq!(scaled_spatial_map(&e, &z, 1.0, 1.0, 1.0).unwrap(), sw_map(&p).unwrap());

        let m = scaled_spatial_map(&e, &z, 2.0, 1.0, 1.0).unwrap();
        let t = bracket_table(&m, 1.0);
        assert!(max_abs(&(t.xx - &e)) <= 1e-15);

        let m = scaled_spatial_map(&e, &z, 1.0, 3.0, 1.0).unwrap();
        let t = bracket_table(&m, 1.0);
        assert!(max_abs(&(t.xp - Mat::identity(2, 2) * 3.0)) <= 1e-15);

        assert!(matches!(scaled_spatial_map(&e, &z, 0.0, 1.0, 1.0), Err(AlgebraError::ZeroScale { .. })));
    }

    #[test]
    fn sw_inverse_flips_sign_of_shift() {
        let p = params(epsilon2(), Mat::zeros(2, 2), 1.0);
        let m = sw_map(&p).unwrap();
        let inv = invert_map(&m).unwrap();
        assert!(max_abs(&(inv.b() - epsilon2() * 0.5)) <= 1e-15);
        let id = compose(&inv, &m).unwrap();
        assert!(max_abs(&(id.block_matrix() - Mat::identity(4, 4))) <= 1e-15);
        assert_eq!(invert_map(&PhaseSpaceMap::identity(2)).unwrap(), PhaseSpaceMap::identity(2));
    }

    #[test]
    fn inverse_x_block_matches_resolvent_form() {
        // For A = D = I the x-row of M⁻¹ is [I − BC]⁻¹ acting on (x̂ − B p̂).
        let p = params(epsilon2() * 0.3, epsilon2() * 0.2, 1.0);
        let f_t = Mat::from_row_slice(2, 2, &[0.1, 0.4, 0.4, -0.2]);
        let f_e = Mat::from_row_slice(2, 2, &[0.3, 0.05, 0.05, 0.7]);
        let m = extended_map(&p, &f_t, &f_e).unwrap();
        let inv = invert_map(&m).unwrap();
        let i = Mat::identity(2, 2);
        let r = (&i - m.b() * m.c()).try_inverse().unwrap();
        assert!(max_abs(&(inv.a() - &r)) <= 1e-14);
        assert!(max_abs(&(inv.b() + &r * m.b())) <= 1e-14);
    }

    #[test]
    fn singular_map_is_rejected() {
        let z = Mat::zeros(2, 2);
        let i = Mat::identity(2, 2);
        let m = PhaseSpaceMap::new(i.clone(), i.clone(), i.clone(), i).unwrap();
        assert!(matches!(invert_map(&m), Err(AlgebraError::Singular { .. })));
        let m = PhaseSpaceMap::new(z.clone(), z.clone(), z.clone(), z).unwrap();
        assert!(matches!(invert_map(&m), Err(AlgebraError::Singular { .. })));
    }

    #[test]
    fn composing_sw_maps_adds_theta() {
        let t1 = params(antisym3(0.3, -0.2, 0.5), Mat::zeros(3, 3), 1.5);
        let t2 = params(antisym3(-0.1, 0.7, 0.25), Mat::zeros(3, 3), 1.5);
        let c = compose(&sw_map(&t1).unwrap(), &sw_map(&t2).unwrap()).unwrap();
        let expected = (t1.theta() + t2.theta()) * (-1.0 / 3.0);
        assert!(max_abs(&(c.b() - expected)) <= 1e-15);
        let m = sw_map(&t1).unwrap();
        assert_eq!(compose(&PhaseSpaceMap::identity(3), &m).unwrap(), m);
    }

    #[test]
    fn obstruction_vanishes_without_theta() {
        let p = params(Mat::zeros(2, 2), epsilon2() * 5.0, 1.0);
        assert_eq!(sw_obstruction(&p), 0.0);
    }

    #[test]
    fn obstruction_at_reference_bounds() {
        let p = params(epsilon2() * THETA_BOUND_M2, epsilon2() * ETA_BOUND, 1.0);
        let v = sw_obstruction(&p);
        // θη·εε = −7.04e−101·I, quartered.
        assert!((v - 1.76e-101).abs() <= 1e-14 * 1.76e-101);
    }

    #[test]
    fn documents_round_trip() {
        let p = params(antisym3(0.1, 0.2, 0.30000000000000004), antisym3(1e-17, 3.0, -2.5), 1.054571817e-34);
        let doc = ParamsDocument::from_params(&p);
        let s = serde_json::to_string(&doc).unwrap();
        let back: ParamsDocument = serde_json::from_str(&s).unwrap();
        assert_eq!(back.to_params().unwrap(), p);

        let m = sw_map(&params(antisym3(0.1, 0.2, 0.3), Mat::zeros(3, 3), 0.7)).unwrap();
        let s = serde_json::to_string(&MapDocument::from_map(&m, 0.7)).unwrap();
        let back: MapDocument = serde_json::from_str(&s).unwrap();
        assert_eq!(back.to_map().unwrap(), m);
        assert_eq!(back.hbar, 0.7);
    }

    #[test]
    fn params_document_defaults_eta() {
        let s = r#"{"dim": 2, "hbar": 1, "theta": [[0, 1], [-1, 0]]}"#;
        let doc: ParamsDocument = serde_json::from_str(s).unwrap();
        let p = doc.to_params().unwrap();
        assert_eq!(max_abs(p.eta()), 0.0);
        assert!(serde_json::from_str::<ParamsDocument>(r#"{"dim":1,"hbar":1,"theta":[[0]],"zeta":1}"#).is_err());
    }
}
