//! Cubic smoothing-spline regression for conditional means.
//!
//! The fit minimises `Σᵢ (yᵢ − f(zᵢ))² + λ·s·∫ f''(t)² dt` over natural cubic
//! splines with `K` interior knots at the `i/(K+1)` quantiles of the distinct
//! predictor values. The basis is the cubic B-spline basis with the two
//! natural end conditions `f''(z_min) = f''(z_max) = 0` eliminated, which
//! leaves `K + 2` functions. `s = tr(BᵀB)/tr(Ω)` makes `λ` dimensionless, so a
//! value chosen on one dataset can be reused on a resample of it.
//!
//! Tied predictor values are collapsed to one row weighted by multiplicity;
//! the fitted values and hat diagonal are identical to the uncollapsed fit.

use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use std::fmt::Write as _;

pub const DEFAULT_KNOTS: usize = 10;
pub const DEFAULT_GRID_SIZE: usize = 41;
const DEGREE: usize = 3;
const MIN_EDF: f64 = 2.5;

/// Nonzero cubic B-spline values and first two derivatives at `x` in `span`.
fn basis_ders(span: usize, x: f64, t: &[f64]) -> [[f64; 4]; 3] {
    const P: usize = DEGREE;
    let mut ndu = [[0.0f64; 4]; 4];
    let mut left = [0.0f64; 4];
    let mut right = [0.0f64; 4];
    ndu[0][0] = 1.0;
    for j in 1..=P {
        left[j] = x - t[span + 1 - j];
        right[j] = t[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }
    let mut ders = [[0.0f64; 4]; 3];
    for j in 0..=P {
        ders[0][j] = ndu[j][P];
    }
    let mut a = [[0.0f64; 4]; 2];
    for r in 0..=P {
        let (mut s1, mut s2) = (0usize, 1usize);
        a[0][0] = 1.0;
        for k in 1..=2usize {
            let mut d = 0.0;
            let rk = r as isize - k as isize;
            let pk = P - k;
            if r >= k {
                a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                d = a[s2][0] * ndu[rk as usize][pk];
            }
            let j1: isize = if rk >= -1 { 1 } else { -rk };
            let j2: isize = if r as isize - 1 <= pk as isize {
                k as isize - 1
            } else {
                (P - r) as isize
            };
            let mut j = j1;
            while j <= j2 {
                let ju = j as usize;
                let idx = (rk + j) as usize;
                a[s2][ju] = (a[s1][ju] - a[s1][ju - 1]) / ndu[pk + 1][idx];
                d += a[s2][ju] * ndu[idx][pk];
                j += 1;
            }
            if r <= pk {
                a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                d += a[s2][k] * ndu[r][pk];
            }
            ders[k][r] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    let mut fac = P as f64;
    for (k, row) in ders.iter_mut().enumerate().skip(1) {
        for v in row.iter_mut() {
            *v *= fac;
        }
        fac *= (P - k) as f64;
    }
    ders
}

/// Type-7 quantile of sorted data.
fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    let h = (v.len() - 1) as f64 * p;
    let j = h.floor() as usize;
    if j + 1 >= v.len() {
        return v[v.len() - 1];
    }
    v[j] + (h - j as f64) * (v[j + 1] - v[j])
}

/// Natural cubic spline basis on `[lo, hi]` with interior knots.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalBasis {
    t: Vec<f64>,
    interior: Vec<f64>,
    // coefficient of B_1, B_2 in the eliminated B_0 and of B_{nb-3}, B_{nb-2} in B_{nb-1}
    left: [f64; 2],
    right: [f64; 2],
}

impl NaturalBasis {
    /// Interior knots at the `i/(K+1)` quantiles of the sorted distinct values.
    pub fn from_distinct(distinct: &[f64], knot_count: usize) -> Result<Self> {
        if knot_count == 0 {
            return Err(Error::InvalidArgument("knot_count must be at least 1".into()));
        }
        if distinct.len() < 2 {
            return Err(Error::RankDeficient("fewer than two distinct predictor values".into()));
        }
        let interior: Vec<f64> = (1..=knot_count)
            .map(|i| quantile_sorted(distinct, i as f64 / (knot_count + 1) as f64))
            .collect();
        Self::new(distinct[0], distinct[distinct.len() - 1], interior)
    }

    pub fn new(lo: f64, hi: f64, interior: Vec<f64>) -> Result<Self> {
        if !(lo < hi) || interior.iter().any(|&k| !(k > lo && k < hi)) || interior.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::RankDeficient(
                "knots are not strictly increasing inside the range".into(),
            ));
        }
        let mut t = vec![lo; DEGREE + 1];
        t.extend_from_slice(&interior);
        t.extend(std::iter::repeat_n(hi, DEGREE + 1));
        let mut basis = Self {
            t,
            interior,
            left: [0.0; 2],
            right: [0.0; 2],
        };
        let nb = basis.full_len();
        let dl = basis_ders(DEGREE, lo, &basis.t)[2];
        basis.left = [-dl[1] / dl[0], -dl[2] / dl[0]];
        let dr = basis_ders(nb - 1, hi, &basis.t)[2];
        basis.right = [-dr[1] / dr[3], -dr[2] / dr[3]];
        Ok(basis)
    }

    fn full_len(&self) -> usize {
        self.t.len() - DEGREE - 1
    }

    /// Number of natural basis functions, `K + 2`.
    pub fn len(&self) -> usize {
        self.full_len() - 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lo(&self) -> f64 {
        self.t[0]
    }

    pub fn hi(&self) -> f64 {
        self.t[self.t.len() - 1]
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior
    }

    fn span(&self, x: f64) -> usize {
        let nb = self.full_len();
        if x >= self.t[nb] {
            return nb - 1;
        }
        // largest i in [DEGREE, nb-1] with t[i] <= x
        let i = self.t[DEGREE..nb].partition_point(|&k| k <= x);
        (DEGREE + i).saturating_sub(1).max(DEGREE)
    }

    /// Writes derivative `order` of every natural basis function at `x`
    /// (which must lie in `[lo, hi]`) into `out`.
    fn row_into(&self, x: f64, order: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let span = self.span(x);
        let d = basis_ders(span, x, &self.t)[order];
        let nb = self.full_len();
        for (r, &v) in d.iter().enumerate() {
            let j = span - DEGREE + r;
            if j == 0 {
                out[0] += v * self.left[0];
                out[1] += v * self.left[1];
            } else if j == nb - 1 {
                out[nb - 4] += v * self.right[0];
                out[nb - 3] += v * self.right[1];
            } else {
                out[j - 1] += v;
            }
        }
    }

    /// Design row of basis values at `x` in `[lo, hi]`.
    pub fn row(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.row_into(x.clamp(self.lo(), self.hi()), 0, &mut out);
        out
    }

    /// `Ω_jk = ∫ φ_j'' φ_k''` over `[lo, hi]`. Second derivatives are linear on
    /// each knot interval, so two-point Gauss–Legendre is exact.
    pub fn penalty(&self) -> DMatrix<f64> {
        let p = self.len();
        let mut omega = DMatrix::zeros(p, p);
        let g = 1.0 / 3.0f64.sqrt();
        let mut row = vec![0.0; p];
        for w in self.t.windows(2) {
            let (a, b) = (w[0], w[1]);
            if !(b > a) {
                continue;
            }
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for s in [-g, g] {
                self.row_into(mid + s * half, 2, &mut row);
                for j in 0..p {
                    if row[j] == 0.0 {
                        continue;
                    }
                    for k in 0..p {
                        omega[(j, k)] += half * row[j] * row[k];
                    }
                }
            }
        }
        omega
    }
}

/// A fitted smoothing spline.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineFit {
    basis: NaturalBasis,
    pub coefficients: Vec<f64>,
    /// Dimensionless smoothing parameter (penalty weight relative to `tr(BᵀB)/tr(Ω)`).
    pub lambda: f64,
    /// Effective degrees of freedom, `tr(H)`.
    pub hat_trace: f64,
    /// Leave-one-out CV score at `lambda` (mean squared LOO residual).
    pub cv_score: f64,
    /// Fitted values in the order of the training observations.
    pub fitted: Vec<f64>,
    /// Hat-matrix diagonal in the order of the training observations.
    pub leverage: Vec<f64>,
}

impl SplineFit {
    pub fn knots(&self) -> &[f64] {
        self.basis.interior_knots()
    }

    pub fn training_range(&self) -> (f64, f64) {
        (self.basis.lo(), self.basis.hi())
    }

    pub fn basis(&self) -> &NaturalBasis {
        &self.basis
    }

    fn eval(&self, x: f64, order: usize) -> f64 {
        let mut row = vec![0.0; self.basis.len()];
        self.basis.row_into(x, order, &mut row);
        row.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum()
    }

    /// Fitted curve at each `z`; linear beyond the training range.
    pub fn predict(&self, z: &[f64]) -> Vec<f64> {
        let (lo, hi) = self.training_range();
        z.iter()
            .map(|&x| {
                if x < lo {
                    self.eval(lo, 0) + self.eval(lo, 1) * (x - lo)
                } else if x > hi {
                    self.eval(hi, 0) + self.eval(hi, 1) * (x - hi)
                } else {
                    self.eval(x, 0)
                }
            })
            .collect()
    }

    /// Plain-text dump of knots, coefficients and smoothing summary.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let (lo, hi) = self.training_range();
        let _ = writeln!(s, "range {lo} {hi}");
        let _ = writeln!(s, "lambda {}", self.lambda);
        let _ = writeln!(s, "edf {}", self.hat_trace);
        let _ = writeln!(s, "cv {}", self.cv_score);
        let _ = writeln!(
            s,
            "knots {}",
            self.knots().iter().map(|k| k.to_string()).collect::<Vec<_>>().join(" ")
        );
        let _ = writeln!(
            s,
            "coefficients {}",
            self.coefficients
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        );
        s
    }
}

/// Collapsed, sorted design for one dataset.
struct Problem {
    basis: NaturalBasis,
    n: usize,
    // per distinct predictor value
    rows: Vec<Vec<f64>>,
    // original observation -> distinct index
    group: Vec<usize>,
    gram: DMatrix<f64>,
    rhs: DVector<f64>,
    penalty: DMatrix<f64>,
    scale: f64,
}

impl Problem {
    fn new(z: &[f64], y: &[f64], knot_count: usize) -> Result<Self> {
        let n = z.len();
        if y.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} predictors, {} responses",
                n,
                y.len()
            )));
        }
        if n < knot_count + 2 {
            return Err(Error::TooFewPoints {
                got: n,
                min: knot_count + 2,
            });
        }
        if z.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite input to spline fit".into()));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| z[a].total_cmp(&z[b]));
        let mut distinct: Vec<f64> = Vec::with_capacity(n);
        let mut weight: Vec<f64> = Vec::with_capacity(n);
        let mut ysum: Vec<f64> = Vec::with_capacity(n);
        let mut group = vec![0usize; n];
        for &i in &order {
            if distinct.last() != Some(&z[i]) {
                distinct.push(z[i]);
                weight.push(0.0);
                ysum.push(0.0);
            }
            let g = distinct.len() - 1;
            weight[g] += 1.0;
            ysum[g] += y[i];
            group[i] = g;
        }
        if distinct.len() < knot_count {
            return Err(Error::RankDeficient(format!(
                "{} distinct predictor values for {} knots",
                distinct.len(),
                knot_count
            )));
        }
        let basis = NaturalBasis::from_distinct(&distinct, knot_count)?;
        let p = basis.len();
        let mut gram = DMatrix::zeros(p, p);
        let mut rhs = DVector::zeros(p);
        let mut rows = Vec::with_capacity(distinct.len());
        for (u, &x) in distinct.iter().enumerate() {
            let row = basis.row(x);
            for j in 0..p {
                if row[j] == 0.0 {
                    continue;
                }
                rhs[j] += row[j] * ysum[u];
                for k in 0..p {
                    gram[(j, k)] += weight[u] * row[j] * row[k];
                }
            }
            rows.push(row);
        }
        let penalty = basis.penalty();
        let scale = gram.trace() / penalty.trace();
        Ok(Self {
            basis,
            n,
            rows,
            group,
            gram,
            rhs,
            penalty,
            scale,
        })
    }

    fn system(&self, lambda: f64) -> Result<Cholesky<f64, Dyn>> {
        let a = &self.gram + &self.penalty * (lambda * self.scale);
        a.cholesky()
            .ok_or_else(|| Error::RankDeficient(format!("penalized normal equations singular at lambda {lambda:e}")))
    }

    fn edf(&self, lambda: f64) -> Result<f64> {
        let chol = self.system(lambda)?;
        Ok(chol.solve(&self.gram).trace())
    }

    fn solve(&self, lambda: f64, y: &[f64]) -> Result<SplineFit> {
        let chol = self.system(lambda)?;
        let coef = chol.solve(&self.rhs);
        let fitted_u: Vec<f64> = self
            .rows
            .iter()
            .map(|r| r.iter().zip(coef.iter()).map(|(a, b)| a * b).sum())
            .collect();
        let lev_u: Vec<f64> = self
            .rows
            .iter()
            .map(|r| {
                let v = DVector::from_column_slice(r);
                v.dot(&chol.solve(&v))
            })
            .collect();
        let fitted: Vec<f64> = self.group.iter().map(|&g| fitted_u[g]).collect();
        let leverage: Vec<f64> = self.group.iter().map(|&g| lev_u[g]).collect();
        let hat_trace = leverage.iter().sum();
        let cv_score = y
            .iter()
            .zip(&fitted)
            .zip(&leverage)
            .map(|((yi, fi), hi)| {
                let d = 1.0 - hi;
                if d <= 1e-10 {
                    f64::INFINITY
                } else {
                    ((yi - fi) / d).powi(2)
                }
            })
            .sum::<f64>()
            / self.n as f64;
        Ok(SplineFit {
            basis: self.basis.clone(),
            coefficients: coef.iter().copied().collect(),
            lambda,
            hat_trace,
            cv_score,
            fitted,
            leverage,
        })
    }

    fn fitted_only(&self, lambda: f64) -> Result<Vec<f64>> {
        let chol = self.system(lambda)?;
        let coef = chol.solve(&self.rhs);
        let fitted_u: Vec<f64> = self
            .rows
            .iter()
            .map(|r| r.iter().zip(coef.iter()).map(|(a, b)| a * b).sum())
            .collect();
        Ok(self.group.iter().map(|&g| fitted_u[g]).collect())
    }

    fn max_edf(&self) -> f64 {
        let p = self.basis.len() as f64;
        let distinct = self.rows.len() as f64;
        (self.n as f64 / 2.0).min(p - 0.5).min(distinct - 0.5)
    }

    fn lambda_for_edf(&self, target: f64) -> f64 {
        let (mut lo, mut hi) = (-12.0f64, 12.0f64);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            match self.edf(10f64.powf(mid)) {
                Ok(e) if e > target => lo = mid,
                Ok(_) => hi = mid,
                Err(_) => lo = mid,
            }
        }
        10f64.powf(0.5 * (lo + hi))
    }

    fn default_grid(&self, size: usize) -> Vec<f64> {
        let high = self.lambda_for_edf(MIN_EDF);
        let top = self.max_edf();
        if top <= MIN_EDF || size < 2 {
            return vec![high];
        }
        let low = self.lambda_for_edf(top);
        let (a, b) = (low.log10(), high.log10());
        (0..size)
            .map(|i| 10f64.powf(a + (b - a) * i as f64 / (size - 1) as f64))
            .collect()
    }
}

/// The default CV grid for a dataset: `size` log-spaced values of `λ` whose
/// effective degrees of freedom run from about `min(N/2, K + 1.5)` down to 2.5.
pub fn default_lambda_grid(z: &[f64], knot_count: usize, size: usize) -> Result<Vec<f64>> {
    let dummy = vec![0.0; z.len()];
    Ok(Problem::new(z, &dummy, knot_count)?.default_grid(size))
}

/// Fits with `λ` chosen by leave-one-out CV over `lambda_grid`. The first
/// grid value attaining the minimum score wins.
pub fn fit(z: &[f64], y: &[f64], knot_count: usize, lambda_grid: &[f64]) -> Result<SplineFit> {
    if lambda_grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let problem = Problem::new(z, y, knot_count)?;
    let mut best: Option<SplineFit> = None;
    for &lambda in lambda_grid {
        if !(lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda {lambda} must be non-negative")));
        }
        let Ok(candidate) = problem.solve(lambda, y) else {
            continue;
        };
        if best.as_ref().is_none_or(|b| candidate.cv_score < b.cv_score) {
            best = Some(candidate);
        }
    }
    best.ok_or_else(|| Error::RankDeficient("no grid value gave a solvable system".into()))
}

/// Fits with the default 41-point grid.
pub fn fit_cv(z: &[f64], y: &[f64], knot_count: usize) -> Result<SplineFit> {
    let problem = Problem::new(z, y, knot_count)?;
    let grid = problem.default_grid(DEFAULT_GRID_SIZE);
    fit(z, y, knot_count, &grid)
}

/// Fits at a fixed `λ`.
pub fn fit_fixed(z: &[f64], y: &[f64], knot_count: usize, lambda: f64) -> Result<SplineFit> {
    Problem::new(z, y, knot_count)?.solve(lambda, y)
}

/// Fitted values only, at a fixed `λ`. This is the bootstrap inner loop.
pub fn fitted_values(z: &[f64], y: &[f64], knot_count: usize, lambda: f64) -> Result<Vec<f64>> {
    Problem::new(z, y, knot_count)?.fitted_only(lambda)
}

/// The `N × N` hat matrix `H` with `ŷ = H y` at a fixed `λ`.
pub fn hat_matrix(z: &[f64], knot_count: usize, lambda: f64) -> Result<DMatrix<f64>> {
    let dummy = vec![0.0; z.len()];
    let problem = Problem::new(z, &dummy, knot_count)?;
    let chol = problem.system(lambda)?;
    let n = z.len();
    let p = problem.basis.len();
    let mut design = DMatrix::zeros(n, p);
    for i in 0..n {
        let row = &problem.rows[problem.group[i]];
        for j in 0..p {
            design[(i, j)] = row[j];
        }
    }
    let solved = chol.solve(&design.transpose());
    Ok(&design * solved)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid_z(n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (i as f64 * 0.731).sin() * 2.0 + i as f64 * 0.05)
            .collect()
    }

    #[test]
    fn basis_derivatives_match_finite_differences() {
        let basis = NaturalBasis::new(0.0, 10.0, vec![1.0, 2.5, 4.0, 7.0, 8.0]).unwrap();
        let p = basis.len();
        let h = 1e-5;
        for &x in &[0.3, 1.7, 3.3, 5.0, 7.5, 9.6] {
            let mut d1 = vec![0.0; p];
            let mut d2 = vec![0.0; p];
            basis.row_into(x, 1, &mut d1);
            basis.row_into(x, 2, &mut d2);
            let plus = basis.row(x + h);
            let minus = basis.row(x - h);
            let mid = basis.row(x);
            for j in 0..p {
                let fd1 = (plus[j] - minus[j]) / (2.0 * h);
                let fd2 = (plus[j] - 2.0 * mid[j] + minus[j]) / (h * h);
                assert!((fd1 - d1[j]).abs() < 1e-6, "d1 at {x}, {j}");
                assert!((fd2 - d2[j]).abs() < 1e-3, "d2 at {x}, {j}");
            }
        }
    }

    #[test]
    fn natural_end_conditions_and_partition_of_unity() {
        let basis = NaturalBasis::new(-1.0, 3.0, vec![0.0, 0.5, 1.0, 2.0]).unwrap();
        let p = basis.len();
        assert_eq!(p, 6);
        for x in [-1.0, 3.0] {
            let mut d2 = vec![0.0; p];
            basis.row_into(x, 2, &mut d2);
            assert!(d2.iter().all(|v| v.abs() < 1e-10), "{d2:?}");
        }
        // constants and lines are representable: the basis has them in its span,
        // so the unpenalized LS fit reproduces a line
        let z: Vec<f64> = (0..30).map(|i| -1.0 + i as f64 * 4.0 / 29.0).collect();
        let y: Vec<f64> = z.iter().map(|v| 2.0 - 0.5 * v).collect();
        let f = fit_fixed(&z, &y, 4, 0.0).unwrap();
        for (a, b) in f.fitted.iter().zip(&y) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn penalty_matches_quadrature_of_fitted_curvature() {
        let basis = NaturalBasis::new(0.0, 4.0, vec![1.0, 2.0, 3.0]).unwrap();
        let omega = basis.penalty();
        let c = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.5, -0.7]);
        let quad = c.dot(&(&omega * &c));
        // midpoint rule on f''²
        let m = 40_000;
        let mut acc = 0.0;
        let mut row = vec![0.0; 5];
        for i in 0..m {
            let x = (i as f64 + 0.5) * 4.0 / m as f64;
            basis.row_into(x, 2, &mut row);
            let f2: f64 = row.iter().zip(c.iter()).map(|(a, b)| a * b).sum();
            acc += f2 * f2;
        }
        acc *= 4.0 / m as f64;
        assert!((quad - acc).abs() < 1e-6 * quad.abs().max(1.0), "{quad} vs {acc}");
    }

    #[test]
    fn lines_are_reproduced_for_any_lambda() {
        let z = grid_z(40);
        let y: Vec<f64> = z.iter().map(|v| 1.5 + 3.0 * v).collect();
        for lambda in [0.0, 1e-6, 1.0, 1e6] {
            let f = fit_fixed(&z, &y, 10, lambda).unwrap();
            for (a, b) in f.fitted.iter().zip(&y) {
                assert!((a - b).abs() < 1e-8, "lambda {lambda}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn interpolates_in_the_small_lambda_limit() {
        let z: Vec<f64> = (0..12).map(|i| i as f64 + 0.1 * (i as f64).sin()).collect();
        let y: Vec<f64> = z.iter().map(|v| (v * 0.9).cos() * 3.0).collect();
        let f = fit_fixed(&z, &y, 10, 1e-12).unwrap();
        for (a, b) in f.fitted.iter().zip(&y) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn predict_matches_fitted_and_extrapolates_linearly() {
        let z = grid_z(50);
        let y: Vec<f64> = z.iter().map(|v| (2.0 * v).tanh()).collect();
        let f = fit_cv(&z, &y, 10).unwrap();
        let p = f.predict(&z);
        for (a, b) in p.iter().zip(&f.fitted) {
            assert!((a - b).abs() < 1e-12);
        }
        let (lo, hi) = f.training_range();
        for base in [lo - 5.0, hi + 0.5] {
            let ext: Vec<f64> = (0..8).map(|i| base + i as f64 * 0.5).collect();
            let v = f.predict(&ext);
            for w in v.windows(3) {
                assert!((w[2] - 2.0 * w[1] + w[0]).abs() < 1e-9);
            }
        }
        // extrapolation is continuous at the boundary
        let near = f.predict(&[lo - 1e-9, lo, hi, hi + 1e-9]);
        assert!((near[0] - near[1]).abs() < 1e-7);
        assert!((near[2] - near[3]).abs() < 1e-7);
    }

    #[test]
    fn mirrored_data_give_mirrored_predictions() {
        let z = grid_z(45);
        let y: Vec<f64> = z.iter().map(|v| v.powi(3) * 0.2 + v.sin()).collect();
        let mz: Vec<f64> = z.iter().map(|v| -v).collect();
        let my: Vec<f64> = y.iter().map(|v| -v).collect();
        let a = fit_cv(&z, &y, 10).unwrap();
        let b = fit_cv(&mz, &my, 10).unwrap();
        let probe: Vec<f64> = (-30..=30).map(|i| i as f64 * 0.2).collect();
        let mprobe: Vec<f64> = probe.iter().map(|v| -v).collect();
        let pa = a.predict(&probe);
        let pb = b.predict(&mprobe);
        for (u, v) in pa.iter().zip(&pb) {
            assert!((u + v).abs() < 1e-9, "{u} vs {v}");
        }
    }

    #[test]
    fn cv_choice_is_a_local_minimum_on_the_grid() {
        let z = grid_z(60);
        let y: Vec<f64> = z
            .iter()
            .enumerate()
            .map(|(i, v)| v.sin() + 0.3 * ((i * 7919 % 61) as f64 / 61.0 - 0.5))
            .collect();
        let grid = default_lambda_grid(&z, 10, 41).unwrap();
        assert_eq!(grid.len(), 41);
        let best = fit(&z, &y, 10, &grid).unwrap();
        let idx = grid.iter().position(|&l| l == best.lambda).unwrap();
        for j in [idx.saturating_sub(1), (idx + 1).min(40)] {
            let other = fit_fixed(&z, &y, 10, grid[j]).unwrap();
            assert!(best.cv_score <= other.cv_score);
        }
        assert!(best.hat_trace >= 2.0 - 1e-9 && best.hat_trace <= 12.0 + 1e-9);
    }

    #[test]
    fn loo_shortcut_matches_refitting() {
        let z = grid_z(30);
        let y: Vec<f64> = z.iter().map(|v| (1.3 * v).sin()).collect();
        let lambda = 1e-3;
        let full = fit_fixed(&z, &y, 6, lambda).unwrap();
        // Brute-force LOO with the basis and penalty scale of the full fit.
        let problem = Problem::new(&z, &y, 6).unwrap();
        let mut cv = 0.0;
        for i in 0..z.len() {
            let mut gram = DMatrix::zeros(8, 8);
            let mut rhs = DVector::zeros(8);
            for j in (0..z.len()).filter(|&j| j != i) {
                let r = DVector::from_vec(problem.basis.row(z[j]));
                gram += &r * r.transpose();
                rhs += &r * y[j];
            }
            let a = gram + &problem.penalty * (lambda * problem.scale);
            let c = a.cholesky().unwrap().solve(&rhs);
            let pred = DVector::from_vec(problem.basis.row(z[i])).dot(&c);
            cv += (y[i] - pred).powi(2);
        }
        cv /= z.len() as f64;
        assert!(
            (cv - full.cv_score).abs() < 1e-10 * cv.max(1.0),
            "{cv} vs {}",
            full.cv_score
        );
    }

    #[test]
    fn ties_are_collapsed() {
        let mut z = grid_z(30);
        z[5] = z[6];
        z[20] = z[6];
        let y: Vec<f64> = z.iter().enumerate().map(|(i, v)| v.cos() + 0.01 * i as f64).collect();
        let f = fit_fixed(&z, &y, 10, 0.01).unwrap();
        assert_eq!(f.fitted[5], f.fitted[6]);
        assert_eq!(f.fitted[20], f.fitted[6]);
        let h = hat_matrix(&z, 10, 0.01).unwrap();
        let hy = &h * DVector::from_vec(y.clone());
        for i in 0..z.len() {
            assert!((hy[i] - f.fitted[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn errors() {
        let z = grid_z(20);
        let y = z.clone();
        assert!(matches!(fit(&z, &y, 10, &[]), Err(Error::EmptyGrid)));
        assert!(matches!(
            fit_fixed(&z[..8], &y[..8], 10, 1.0),
            Err(Error::TooFewPoints { .. })
        ));
        let tied: Vec<f64> = (0..20).map(|i| (i % 5) as f64).collect();
        assert!(matches!(fit_fixed(&tied, &y, 10, 1.0), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn hat_matrix_properties() {
        let z = grid_z(35);
        let mut last_trace = f64::INFINITY;
        for lambda in [1e-6, 1e-4, 1e-2, 1.0, 100.0] {
            let h = hat_matrix(&z, 10, lambda).unwrap();
            assert!((&h - h.transpose()).amax() < 1e-10);
            let eig = nalgebra::SymmetricEigen::new(h.clone()).eigenvalues;
            assert!(eig.iter().all(|&e| e > -1e-9 && e < 1.0 + 1e-9));
            let tr = h.trace();
            assert!(tr < last_trace);
            last_trace = tr;
        }
    }

    proptest! {
        #[test]
        fn fitted_variance_never_exceeds_response_variance(
            ys in prop::collection::vec(-3.0f64..3.0, 30),
            lambda_exp in -6.0f64..3.0,
            shift in -100.0f64..100.0,
        ) {
            let z = grid_z(30);
            let f = fit_fixed(&z, &ys, 10, 10f64.powf(lambda_exp)).unwrap();
            let vf = crate::sample::variance(&f.fitted);
            let vy = crate::sample::variance(&ys);
            prop_assert!(vf <= vy * (1.0 + 1e-10) + 1e-14);

            let shifted: Vec<f64> = ys.iter().map(|v| v + shift).collect();
            let g = fit_fixed(&z, &shifted, 10, 10f64.powf(lambda_exp)).unwrap();
            for (a, b) in f.fitted.iter().zip(&g.fitted) {
                prop_assert!((a + shift - b).abs() < 1e-8 * (1.0 + shift.abs()));
            }
        }
    }
}
