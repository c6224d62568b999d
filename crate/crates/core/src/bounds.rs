//! Population-level ν statistics and closed-form lower bounds on mutual
//! information.
//!
//! For random vectors `X`, `Z`,
//!
//! ```text
//! ν(Z|X) = det E{V[Z|X]} / det V[Z]
//! ```
//!
//! is the determinant of the second-moment matrix of the conditional-mean
//! prediction error relative to the determinant of `V[Z]`, and
//! `−½·log ν(Z|X)` lower-bounds `I(X;Z)` when `E[Z|X]` is Gaussian. All values
//! here are in nats; log-determinants go through Cholesky factors.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, SymmetricEigen};

/// Absolute eigenvalue slack used for every Loewner-order check.
pub const ORDER_SLACK: f64 = 1e-10;

/// Relative tolerance for symmetry checks.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Values of ν this close above 1 come from rounding within `ORDER_SLACK`
/// and are treated as 1.
const NU_ROUNDING: f64 = 1e-9;

/// Which way the regression runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Direction {
    /// Regression of the output on the input, ν(Z|X).
    OutputGivenInput,
    /// Regression of the (Gaussianized) input on the output, ν(X̃|Z).
    InputGivenOutput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BoundKind {
    NuDeterminant,
    PearsonCorrelation,
    AvgMmseTrace,
}

/// A lower bound on mutual information, in nats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundEstimate {
    pub nats: f64,
    pub kind: BoundKind,
    pub direction: Direction,
    /// Whether the value has been divided by the dimension of the regressed variable.
    pub per_dimension: bool,
}

impl BoundEstimate {
    fn new(nats: f64, kind: BoundKind, direction: Direction, per_dimension: bool) -> Result<Self> {
        if !(nats >= 0.0) {
            return Err(Error::NegativeBound(nats));
        }
        Ok(Self {
            nats,
            kind,
            direction,
            per_dimension,
        })
    }

    pub fn bits(&self) -> f64 {
        nats_to_bits(self.nats)
    }
}

pub fn nats_to_bits(nats: f64) -> f64 {
    nats / std::f64::consts::LN_2
}

pub fn bits_to_nats(bits: f64) -> f64 {
    bits * std::f64::consts::LN_2
}

/// ν as a ratio of determinants, kept in log form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuStatistic {
    pub value: f64,
    /// log det E[e eᵀ], the expected conditional variance.
    pub numerator_logdet: f64,
    /// log det of the total variance.
    pub denominator_logdet: f64,
}

impl NuStatistic {
    pub fn from_logdets(numerator_logdet: f64, denominator_logdet: f64) -> Self {
        Self {
            value: (numerator_logdet - denominator_logdet).exp(),
            numerator_logdet,
            denominator_logdet,
        }
    }

    /// A scalar ν given directly, e.g. an estimate `ν̂`.
    pub fn from_value(value: f64) -> Self {
        Self {
            value,
            numerator_logdet: value.ln(),
            denominator_logdet: 0.0,
        }
    }
}

/// Covariance blocks of `(X, Z)`: `sigma_xz = E[(X − EX)(Z − EZ)ᵀ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariancePartition {
    sigma_xx: DMatrix<f64>,
    sigma_xz: DMatrix<f64>,
    sigma_zz: DMatrix<f64>,
}

impl CovariancePartition {
    pub fn new(sigma_xx: DMatrix<f64>, sigma_xz: DMatrix<f64>, sigma_zz: DMatrix<f64>) -> Result<Self> {
        let dx = sigma_xx.nrows();
        let dz = sigma_zz.nrows();
        if !sigma_xx.is_square() || !sigma_zz.is_square() || sigma_xz.shape() != (dx, dz) {
            return Err(Error::DimensionMismatch(format!(
                "blocks {:?}, {:?}, {:?}",
                sigma_xx.shape(),
                sigma_xz.shape(),
                sigma_zz.shape()
            )));
        }
        check_symmetric(&sigma_xx, "sigma_xx")?;
        check_symmetric(&sigma_zz, "sigma_zz")?;
        let part = Self {
            sigma_xx,
            sigma_xz,
            sigma_zz,
        };
        let min = min_eigenvalue(&part.assembled());
        if min < -ORDER_SLACK * (1.0 + part.assembled().amax()) {
            return Err(Error::NonPositiveDefinite("assembled covariance of (X, Z)"));
        }
        Ok(part)
    }

    /// Bivariate partition from variances and a covariance.
    pub fn bivariate(var_x: f64, cov_xz: f64, var_z: f64) -> Result<Self> {
        Self::new(
            DMatrix::from_element(1, 1, var_x),
            DMatrix::from_element(1, 1, cov_xz),
            DMatrix::from_element(1, 1, var_z),
        )
    }

    pub fn dim_x(&self) -> usize {
        self.sigma_xx.nrows()
    }

    pub fn dim_z(&self) -> usize {
        self.sigma_zz.nrows()
    }

    pub fn sigma_xx(&self) -> &DMatrix<f64> {
        &self.sigma_xx
    }

    pub fn sigma_xz(&self) -> &DMatrix<f64> {
        &self.sigma_xz
    }

    pub fn sigma_zz(&self) -> &DMatrix<f64> {
        &self.sigma_zz
    }

    /// The full `(d_X + d_Z)` square covariance matrix.
    pub fn assembled(&self) -> DMatrix<f64> {
        let (dx, dz) = (self.dim_x(), self.dim_z());
        let mut m = DMatrix::zeros(dx + dz, dx + dz);
        m.view_mut((0, 0), (dx, dx)).copy_from(&self.sigma_xx);
        m.view_mut((0, dx), (dx, dz)).copy_from(&self.sigma_xz);
        m.view_mut((dx, 0), (dz, dx)).copy_from(&self.sigma_xz.transpose());
        m.view_mut((dx, dx), (dz, dz)).copy_from(&self.sigma_zz);
        m
    }
}

fn check_symmetric(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!("{what} is {:?}", m.shape())));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::InvalidArgument(format!("{what} is not symmetric")));
    }
    Ok(())
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// log det of a symmetric positive-definite matrix.
pub fn log_det_spd(m: &DMatrix<f64>, what: &'static str) -> Result<f64> {
    let chol = m.clone().cholesky().ok_or(Error::NonPositiveDefinite(what))?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for i in 0..m.nrows() {
        let d = l[(i, i)];
        if !(d > 0.0) {
            return Err(Error::NonPositiveDefinite(what));
        }
        acc += d.ln();
    }
    Ok(2.0 * acc)
}

fn check_pair(total_var: &DMatrix<f64>, cond_var: &DMatrix<f64>) -> Result<(f64, f64)> {
    if total_var.shape() != cond_var.shape() || !total_var.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "total {:?} vs conditional {:?}",
            total_var.shape(),
            cond_var.shape()
        )));
    }
    check_symmetric(total_var, "total variance")?;
    check_symmetric(cond_var, "expected conditional variance")?;
    let num = log_det_spd(cond_var, "expected conditional variance")?;
    let den = log_det_spd(total_var, "total variance")?;
    let min = min_eigenvalue(&(total_var - cond_var));
    if min < -ORDER_SLACK {
        return Err(Error::OrderViolation { min_eigenvalue: min });
    }
    Ok((num, den))
}

/// ν = det(E{V[Z|X]}) / det(V[Z]).
pub fn nu_from_moments(total_var: &DMatrix<f64>, expected_cond_var: &DMatrix<f64>) -> Result<NuStatistic> {
    let (num, den) = check_pair(total_var, expected_cond_var)?;
    Ok(NuStatistic::from_logdets(num, den))
}

fn nu_nats(nu: &NuStatistic) -> Result<f64> {
    if !(nu.value > 0.0) || nu.value > 1.0 + NU_ROUNDING || !nu.value.is_finite() {
        return Err(Error::DomainError(nu.value));
    }
    Ok((-0.5 * (nu.numerator_logdet - nu.denominator_logdet)).max(0.0))
}

/// `−½·log ν`, tagged with the direction the ν was computed in.
pub fn bound_from_nu_directed(nu: &NuStatistic, direction: Direction) -> Result<BoundEstimate> {
    BoundEstimate::new(nu_nats(nu)?, BoundKind::NuDeterminant, direction, false)
}

/// `−½·log ν(Z|X)`.
pub fn bound_from_nu(nu: &NuStatistic) -> Result<BoundEstimate> {
    bound_from_nu_directed(nu, Direction::OutputGivenInput)
}

fn schur_logdet(outer: &DMatrix<f64>, inner: &DMatrix<f64>, cross: &DMatrix<f64>, what: &'static str) -> Result<f64> {
    // outer − crossᵀ inner⁻¹ cross
    let chol = inner.clone().cholesky().ok_or(Error::SingularMatrix(what))?;
    let solved = chol.solve(cross);
    let schur = outer - cross.transpose() * solved;
    let schur = (&schur + schur.transpose()) * 0.5;
    let min = min_eigenvalue(&schur);
    if min <= 0.0 {
        return Err(Error::OrderViolation { min_eigenvalue: min });
    }
    log_det_spd(&schur, "Schur complement")
}

/// Lower bound for Gaussian `X`:
/// `½·log[det Σ_ZZ / det(Σ_ZZ − Σ_ZX Σ_XX⁻¹ Σ_XZ)]`. For scalars this is
/// `−½·log(1 − Corr²(X, Z))`.
pub fn gaussian_corr_bound(cov: &CovariancePartition) -> Result<BoundEstimate> {
    let ld_zz = log_det_spd(cov.sigma_zz(), "sigma_zz").map_err(|_| Error::SingularMatrix("sigma_zz"))?;
    log_det_spd(cov.sigma_xx(), "sigma_xx").map_err(|_| Error::SingularMatrix("sigma_xx"))?;
    let ld_schur = schur_logdet(cov.sigma_zz(), cov.sigma_xx(), cov.sigma_xz(), "sigma_xx")?;
    BoundEstimate::new(
        0.5 * (ld_zz - ld_schur),
        BoundKind::PearsonCorrelation,
        Direction::OutputGivenInput,
        false,
    )
}

/// The same bound written on the `X` side:
/// `½·log[det Σ_XX / det(Σ_XX − Σ_XZ Σ_ZZ⁻¹ Σ_ZX)]`.
pub fn gaussian_corr_bound_input_form(cov: &CovariancePartition) -> Result<BoundEstimate> {
    let ld_xx = log_det_spd(cov.sigma_xx(), "sigma_xx").map_err(|_| Error::SingularMatrix("sigma_xx"))?;
    log_det_spd(cov.sigma_zz(), "sigma_zz").map_err(|_| Error::SingularMatrix("sigma_zz"))?;
    let cross = cov.sigma_xz().transpose();
    let ld_schur = schur_logdet(cov.sigma_xx(), cov.sigma_zz(), &cross, "sigma_zz")?;
    BoundEstimate::new(
        0.5 * (ld_xx - ld_schur),
        BoundKind::PearsonCorrelation,
        Direction::InputGivenOutput,
        false,
    )
}

fn trace_form(
    total_var: &DMatrix<f64>,
    cond_var: &DMatrix<f64>,
    den_logdet: f64,
    direction: Direction,
) -> Result<BoundEstimate> {
    let d = total_var.nrows() as f64;
    let avg_mse = cond_var.trace() / d;
    BoundEstimate::new(
        0.5 * (den_logdet / d - avg_mse.ln()),
        BoundKind::AvgMmseTrace,
        direction,
        true,
    )
}

/// Per-dimension average-MMSE bound
/// `½·log{[det V[Z]]^{1/d} / (tr E{V[Z|X]} / d)}`.
///
/// Never exceeds `bound_from_nu / d`; a negative value is reported as
/// [`Error::NegativeBound`].
pub fn avg_mmse_bound(total_var: &DMatrix<f64>, expected_cond_var: &DMatrix<f64>) -> Result<BoundEstimate> {
    let (_, den) = check_pair(total_var, expected_cond_var)?;
    trace_form(total_var, expected_cond_var, den, Direction::OutputGivenInput)
}

/// Both bounds obtained by regressing the Gaussianized input on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSideBounds {
    /// `−½·log ν(X̃|Z)` on the full scale.
    pub nu: BoundEstimate,
    /// Per-dimension trace form; `Err(NegativeBound)` when it is vacuous.
    pub trace: Result<BoundEstimate>,
    pub dim: usize,
}

impl InputSideBounds {
    /// The ν bound divided by `d_X`, comparable with `trace`.
    pub fn nu_per_dimension(&self) -> f64 {
        self.nu.nats / self.dim as f64
    }
}

pub fn input_side_bound(
    total_var_xtilde: &DMatrix<f64>,
    expected_cond_var_xtilde: &DMatrix<f64>,
) -> Result<InputSideBounds> {
    let (num, den) = check_pair(total_var_xtilde, expected_cond_var_xtilde)?;
    let nu = bound_from_nu_directed(&NuStatistic::from_logdets(num, den), Direction::InputGivenOutput)?;
    let trace = trace_form(
        total_var_xtilde,
        expected_cond_var_xtilde,
        den,
        Direction::InputGivenOutput,
    );
    Ok(InputSideBounds {
        nu,
        trace,
        dim: total_var_xtilde.nrows(),
    })
}
