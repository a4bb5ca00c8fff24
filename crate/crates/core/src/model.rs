//! Loglinear models with linear constraints on the expected cell counts.
//!
//! A model is the pair
//!
//! ```text
//! log m(θ) = X θ        and        Lᵀ m(θ) = d
//! ```
//!
//! where `X` is the `k × t` design matrix, `L = (X₀, C)` stacks the sampling
//! constraints `X₀` (one all-ones block per fixed multinomial stratum) next to
//! `r` extra linear constraints `C`, and `d = (X₀ᵀ n, d*)` fixes the strata
//! totals at their observed values. Under Poisson sampling `X₀` is empty and
//! `L = C`, `d = d*`.
//!
//! The square-table builders produce the symmetry, ordinal quasi-symmetry,
//! quasi-symmetry, marginal homogeneity and saturated models with the column
//! bases described on [`build_square_model`].

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::table::ContingencyTable;

/// Fixed-margin structure of the sampling design.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingScheme {
    subtable_sizes: Vec<usize>,
}

impl SamplingScheme {
    /// Independent Poisson cells (`c = 0`).
    pub fn poisson() -> Self {
        Self {
            subtable_sizes: Vec::new(),
        }
    }

    /// One multinomial over all `k` cells (`c = 1`).
    pub fn multinomial(k: usize) -> Self {
        Self {
            subtable_sizes: vec![k],
        }
    }

    /// Product-multinomial over consecutive blocks of cells.
    pub fn product_multinomial(subtable_sizes: Vec<usize>) -> Result<Self> {
        if subtable_sizes.is_empty() || subtable_sizes.contains(&0) {
            return Err(Error::domain("subtable sizes must be positive and non-empty"));
        }
        Ok(Self { subtable_sizes })
    }

    /// Number of fixed strata `c`.
    pub fn c(&self) -> usize {
        self.subtable_sizes.len()
    }

    pub fn subtable_sizes(&self) -> &[usize] {
        &self.subtable_sizes
    }

    pub fn is_poisson(&self) -> bool {
        self.subtable_sizes.is_empty()
    }

    /// `X₀ = J_{k₁} ⊕ … ⊕ J_{k_c}`, a `k × c` matrix (no columns under Poisson).
    pub fn x0(&self, k: usize) -> Result<DMatrix<f64>> {
        if self.is_poisson() {
            return Ok(DMatrix::zeros(k, 0));
        }
        let total: usize = self.subtable_sizes.iter().sum();
        if total != k {
            return Err(Error::dim("sampling scheme subtable sizes", k, total));
        }
        let mut x0 = DMatrix::zeros(k, self.c());
        let mut start = 0;
        for (h, &size) in self.subtable_sizes.iter().enumerate() {
            x0.view_mut((start, h), (size, 1)).fill(1.0);
            start += size;
        }
        Ok(x0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Saturated,
    Symmetry,
    QuasiSymmetry,
    OrdinalQuasiSymmetry,
    MarginalHomogeneity,
    Custom,
}

impl ModelKind {
    pub fn short_name(self) -> &'static str {
        match self {
            ModelKind::Saturated => "SAT",
            ModelKind::Symmetry => "S",
            ModelKind::QuasiSymmetry => "QS",
            ModelKind::OrdinalQuasiSymmetry => "OQS",
            ModelKind::MarginalHomogeneity => "MH",
            ModelKind::Custom => "custom",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kind = match s.to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "saturated" | "sat" => ModelKind::Saturated,
            "symmetry" | "s" => ModelKind::Symmetry,
            "quasi_symmetry" | "quasisymmetry" | "qs" => ModelKind::QuasiSymmetry,
            "ordinal_quasi_symmetry" | "ordinalquasisymmetry" | "oqs" => {
                ModelKind::OrdinalQuasiSymmetry
            }
            "marginal_homogeneity" | "marginalhomogeneity" | "mh" => {
                ModelKind::MarginalHomogeneity
            }
            "custom" => ModelKind::Custom,
            other => return Err(Error::domain(format!("unknown model kind `{other}`"))),
        };
        Ok(kind)
    }
}

/// A loglinear model with linear constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct LmlcSpec {
    kind: ModelKind,
    side: Option<usize>,
    design: DMatrix<f64>,
    sampling: SamplingScheme,
    constraints: DMatrix<f64>,
    d_star: DVector<f64>,
}

impl LmlcSpec {
    /// Assemble a model from its matrices. Only shapes are checked here; use
    /// [`validate_spec`] for the rank conditions.
    pub fn new(
        design: DMatrix<f64>,
        sampling: SamplingScheme,
        constraints: DMatrix<f64>,
        d_star: DVector<f64>,
    ) -> Result<Self> {
        let k = design.nrows();
        if k == 0 || design.ncols() == 0 {
            return Err(Error::domain("design matrix must be non-empty"));
        }
        if constraints.nrows() != k {
            return Err(Error::dim("constraint matrix rows", k, constraints.nrows()));
        }
        if d_star.len() != constraints.ncols() {
            return Err(Error::dim("d* length", constraints.ncols(), d_star.len()));
        }
        sampling.x0(k)?;
        Ok(Self {
            kind: ModelKind::Custom,
            side: None,
            design,
            sampling,
            constraints,
            d_star,
        })
    }

    /// Pure loglinear model (no extra constraints).
    pub fn loglinear(design: DMatrix<f64>, sampling: SamplingScheme) -> Result<Self> {
        let k = design.nrows();
        Self::new(design, sampling, DMatrix::zeros(k, 0), DVector::zeros(0))
    }

    fn with_kind(mut self, kind: ModelKind, side: usize) -> Self {
        self.kind = kind;
        self.side = Some(side);
        self
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    /// `I` for models built over an `I × I` table.
    pub fn side(&self) -> Option<usize> {
        self.side
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn sampling(&self) -> &SamplingScheme {
        &self.sampling
    }

    pub fn constraints(&self) -> &DMatrix<f64> {
        &self.constraints
    }

    pub fn d_star(&self) -> &DVector<f64> {
        &self.d_star
    }

    pub fn k(&self) -> usize {
        self.design.nrows()
    }

    /// Number of parameters (columns of `X`).
    pub fn t(&self) -> usize {
        self.design.ncols()
    }

    pub fn r(&self) -> usize {
        self.constraints.ncols()
    }

    pub fn c(&self) -> usize {
        self.sampling.c()
    }

    /// `X₀` for this model's `k`.
    pub fn x0(&self) -> DMatrix<f64> {
        self.sampling.x0(self.k()).expect("checked at construction")
    }

    /// `L = (X₀, C)`.
    pub fn l_matrix(&self) -> DMatrix<f64> {
        linalg::hcat(&self.x0(), &self.constraints)
    }

    /// `d(n) = (X₀ᵀ n, d*)`.
    pub fn d_vector(&self, n: &DVector<f64>) -> Result<DVector<f64>> {
        if n.len() != self.k() {
            return Err(Error::dim("d(n) table length", self.k(), n.len()));
        }
        let fixed = self.x0().transpose() * n;
        let mut d = DVector::zeros(self.c() + self.r());
        d.rows_mut(0, self.c()).copy_from(&fixed);
        d.rows_mut(self.c(), self.r()).copy_from(&self.d_star);
        Ok(d)
    }

    fn check_theta(&self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.t() {
            return Err(Error::dim("parameter vector", self.t(), theta.len()));
        }
        Ok(())
    }

    /// `m(θ) = exp(X θ)`. Overflow shows up as `+∞` entries and a warning.
    pub fn mean_vector(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_theta(theta)?;
        let m = (&self.design * theta).map(f64::exp);
        if m.iter().any(|v| !v.is_finite()) {
            log::warn!("mean vector overflow: exp(Xθ) has non-finite entries");
        }
        Ok(m)
    }

    /// `Lᵀ m(θ) − d(n)`; zero exactly when `θ` is in the parameter space.
    pub fn constraint_residual(
        &self,
        theta: &DVector<f64>,
        n: &ContingencyTable,
    ) -> Result<DVector<f64>> {
        let m = self.mean_vector(theta)?;
        let d = self.d_vector(&n.to_vector())?;
        Ok(self.l_matrix().transpose() * m - d)
    }

    /// Least-squares `θ` with `X θ ≈ log_m`.
    pub fn theta_for_log_means(&self, log_m: &DVector<f64>) -> Result<DVector<f64>> {
        if log_m.len() != self.k() {
            return Err(Error::dim("log-mean vector", self.k(), log_m.len()));
        }
        Ok(linalg::lstsq(&self.design, log_m))
    }

    /// True when the first column of `X` is `J_k`.
    pub fn has_intercept_column(&self) -> bool {
        self.design.column(0).iter().all(|&v| v == 1.0)
    }

    /// Complete a parameter vector given without its intercept so that the
    /// means sum to `total`: `u = log N − log Σ exp(X̃ θ̃)`.
    pub fn with_solved_intercept(&self, rest: &[f64], total: f64) -> Result<DVector<f64>> {
        if !self.has_intercept_column() {
            return Err(Error::domain("first design column is not the intercept J_k"));
        }
        if rest.len() + 1 != self.t() {
            return Err(Error::dim("parameters without intercept", self.t() - 1, rest.len()));
        }
        if !(total > 0.0) {
            return Err(Error::domain("total must be positive"));
        }
        let rest_v = DVector::from_column_slice(rest);
        let eta = self.design.columns(1, self.t() - 1) * &rest_v;
        let shift = eta.max();
        let log_sum = shift + eta.iter().map(|e| (e - shift).exp()).sum::<f64>().ln();
        let mut theta = DVector::zeros(self.t());
        theta[0] = total.ln() - log_sum;
        theta.rows_mut(1, rest.len()).copy_from(&rest_v);
        Ok(theta)
    }

    /// Same model with the design rearranged as `X' = (L, W)`: the columns of
    /// `L` first, then the columns of `X` that extend the span, in order.
    ///
    /// Requires `𝒞(L) ⊂ 𝒞(X)`; the new design spans the same space.
    pub fn with_leading_constraints(&self) -> Result<LmlcSpec> {
        let l = self.l_matrix();
        if !linalg::column_space_contains(&self.design, &l) {
            return Err(Error::domain(
                "constraint columns are not in the design column space",
            ));
        }
        let target = linalg::rank(&self.design);
        let mut cols = l.clone();
        let mut current = linalg::rank(&cols);
        for j in 0..self.t() {
            if current == target {
                break;
            }
            let candidate = linalg::hcat(&cols, &self.design.columns(j, 1).into_owned());
            let rank = linalg::rank(&candidate);
            if rank > current {
                cols = candidate;
                current = rank;
            }
        }
        let mut out = self.clone();
        out.design = cols;
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Square-table builders

/// Ordinal scores `w_j = (2j − (I+1)) / √(I(I−1)(I+1)/3)`, centred with unit
/// sum of squares.
pub fn ordinal_weights(side: usize) -> Vec<f64> {
    let i = side as f64;
    let scale = (i * (i - 1.0) * (i + 1.0) / 3.0).sqrt();
    (1..=side)
        .map(|j| (2.0 * j as f64 - (i + 1.0)) / scale)
        .collect()
}

/// Sum-to-zero contrast: `1` at level `p`, `−1` at the last level.
fn contrast(p: usize, level: usize, side: usize) -> f64 {
    if level == p {
        1.0
    } else if level == side - 1 {
        -1.0
    } else {
        0.0
    }
}

/// Free symmetric-interaction cells (0-based, `i ≤ j`). For `I = 4` these are
/// `{11, 22, 12, 13, 24, 34}` in that order; otherwise the cells `i ≤ j < I`
/// in lexicographic order.
fn free_interactions(side: usize) -> Vec<(usize, usize)> {
    if side == 4 {
        return vec![(0, 0), (1, 1), (0, 1), (0, 2), (1, 3), (2, 3)];
    }
    let mut free = Vec::new();
    for i in 0..side - 1 {
        for j in i..side - 1 {
            free.push((i, j));
        }
    }
    free
}

/// One `I × I` symmetric interaction matrix per free cell: that cell (and its
/// mirror) set to one, the other free cells zero, the dependent cells solved
/// from the zero row sums.
fn interaction_columns(side: usize) -> Result<Vec<DMatrix<f64>>> {
    let free = free_interactions(side);
    let mut dependent = Vec::new();
    for i in 0..side {
        for j in i..side {
            if !free.contains(&(i, j)) {
                dependent.push((i, j));
            }
        }
    }
    if dependent.len() != side {
        return Err(Error::Internal(format!(
            "expected {side} dependent interaction cells, found {}",
            dependent.len()
        )));
    }
    // Row-sum equations in the dependent unknowns.
    let mut a = DMatrix::zeros(side, side);
    for (u, &(p, q)) in dependent.iter().enumerate() {
        a[(p, u)] += 1.0;
        if p != q {
            a[(q, u)] += 1.0;
        }
    }
    let lu = a.lu();
    let mut out = Vec::with_capacity(free.len());
    for &(p, q) in &free {
        let mut rhs = DVector::zeros(side);
        rhs[p] -= 1.0;
        if p != q {
            rhs[q] -= 1.0;
        }
        let sol = lu.solve(&rhs).ok_or_else(|| {
            Error::Internal("interaction identities are not solvable".into())
        })?;
        let mut theta = DMatrix::zeros(side, side);
        theta[(p, q)] = 1.0;
        theta[(q, p)] = 1.0;
        for (u, &(a_, b_)) in dependent.iter().enumerate() {
            theta[(a_, b_)] = sol[u];
            theta[(b_, a_)] = sol[u];
        }
        out.push(theta);
    }
    Ok(out)
}

fn symmetry_design(side: usize) -> Result<DMatrix<f64>> {
    let k = side * side;
    let interactions = interaction_columns(side)?;
    let t = 1 + (side - 1) + interactions.len();
    let mut x = DMatrix::zeros(k, t);
    for a in 0..side {
        for b in 0..side {
            let cell = a * side + b;
            x[(cell, 0)] = 1.0;
            for p in 0..side - 1 {
                x[(cell, 1 + p)] = contrast(p, a, side) + contrast(p, b, side);
            }
            for (s, theta) in interactions.iter().enumerate() {
                x[(cell, side + s)] = theta[(a, b)];
            }
        }
    }
    Ok(x)
}

/// Reference-cell saturated coding: `J_k` then one indicator per cell other
/// than `(1, 1)`.
fn reference_cell_design(k: usize) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(k, k);
    x.column_mut(0).fill(1.0);
    for cell in 1..k {
        x[(cell, cell)] = 1.0;
    }
    x
}

/// Columns encoding `m_{i•} − m_{•i}` for `i = 1, …, I − 1`.
fn marginal_homogeneity_constraints(side: usize) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(side * side, side - 1);
    for i in 0..side - 1 {
        for a in 0..side {
            for b in 0..side {
                let v = (a == i) as i32 - (b == i) as i32;
                c[(a * side + b, i)] = v as f64;
            }
        }
    }
    c
}

/// Build one of the standard `I × I` square-table models.
///
/// Column bases:
///
/// * `Saturated`: reference-cell coding, `t = I²`.
/// * `Symmetry`: `log m_ij = u + θ_i + θ_j + θ_ij` with `Σ θ_i = 0`,
///   `θ_ij = θ_ji` and zero interaction row sums. Columns are the intercept,
///   the `I − 1` main-effect contrasts (entering each cell as row effect plus
///   column effect) and the free interaction cells (see source).
/// * `OrdinalQuasiSymmetry`: symmetry plus one column `w_j` of ordinal scores
///   on the column index.
/// * `QuasiSymmetry`: symmetry plus `I − 1` column-only contrasts.
/// * `MarginalHomogeneity`: the saturated design with
///   `C` encoding `m_{i•} = m_{•i}`, `i < I`, and `d* = 0`.
pub fn build_square_model(
    kind: ModelKind,
    side: usize,
    sampling: SamplingScheme,
) -> Result<LmlcSpec> {
    if side < 2 {
        return Err(Error::domain(format!("square models need I >= 2, got {side}")));
    }
    let k = side * side;
    let spec = match kind {
        ModelKind::Saturated => LmlcSpec::loglinear(reference_cell_design(k), sampling)?,
        ModelKind::Symmetry => LmlcSpec::loglinear(symmetry_design(side)?, sampling)?,
        ModelKind::OrdinalQuasiSymmetry => {
            let s = symmetry_design(side)?;
            let w = ordinal_weights(side);
            let mut extra = DMatrix::zeros(k, 1);
            for a in 0..side {
                for b in 0..side {
                    extra[(a * side + b, 0)] = w[b];
                }
            }
            LmlcSpec::loglinear(linalg::hcat(&s, &extra), sampling)?
        }
        ModelKind::QuasiSymmetry => {
            let s = symmetry_design(side)?;
            let mut extra = DMatrix::zeros(k, side - 1);
            for a in 0..side {
                for b in 0..side {
                    for p in 0..side - 1 {
                        extra[(a * side + b, p)] = contrast(p, b, side);
                    }
                }
            }
            LmlcSpec::loglinear(linalg::hcat(&s, &extra), sampling)?
        }
        ModelKind::MarginalHomogeneity => LmlcSpec::new(
            reference_cell_design(k),
            sampling,
            marginal_homogeneity_constraints(side),
            DVector::zeros(side - 1),
        )?,
        ModelKind::Custom => {
            return Err(Error::domain("custom models are assembled with LmlcSpec::new"))
        }
    };
    let spec = spec.with_kind(kind, side);
    let violations = validate_spec(&spec, None);
    if !violations.is_empty() {
        return Err(Error::Internal(format!(
            "{kind} builder produced an invalid model: {}",
            violations
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("; ")
        )));
    }
    Ok(spec)
}

// ---------------------------------------------------------------------------
// Validation and nesting

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    TableMismatch { expected: usize, found: usize },
    DesignRankDeficient { rank: usize, t: usize },
    TooManyParameters { k: usize, t: usize, c: usize, r: usize },
    ConstraintRankDeficient { rank: usize, expected: usize },
    InconsistentConstraints { rank_l: usize, rank_ld: usize },
    InterceptNotInDesign,
    StrataNotInDesign,
    EmptyStratum { stratum: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TableMismatch { expected, found } => {
                write!(f, "table has {found} cells, model has {expected}")
            }
            Violation::DesignRankDeficient { rank, t } => {
                write!(f, "rank(X) = {rank} < t = {t}")
            }
            Violation::TooManyParameters { k, t, c, r } => {
                write!(f, "k = {k} < t - c - r = {t} - {c} - {r}")
            }
            Violation::ConstraintRankDeficient { rank, expected } => {
                write!(f, "rank(L) = {rank}, expected c + r = {expected}")
            }
            Violation::InconsistentConstraints { rank_l, rank_ld } => {
                write!(f, "rank(L, d) = {rank_ld} > rank(L) = {rank_l}: constraints inconsistent")
            }
            Violation::InterceptNotInDesign => write!(f, "J_k is not in the column space of X"),
            Violation::StrataNotInDesign => {
                write!(f, "stratum indicators X0 are not in the column space of X")
            }
            Violation::EmptyStratum { stratum } => {
                write!(f, "stratum {stratum} has zero observed total")
            }
        }
    }
}

/// Check every structural requirement of a model, optionally against a table.
/// Returns the list of violations (empty when the model is usable).
pub fn validate_spec(spec: &LmlcSpec, n: Option<&ContingencyTable>) -> Vec<Violation> {
    let mut out = Vec::new();
    let (k, t, c, r) = (spec.k(), spec.t(), spec.c(), spec.r());

    let counts = match n {
        Some(table) if table.k() != k => {
            out.push(Violation::TableMismatch {
                expected: k,
                found: table.k(),
            });
            None
        }
        Some(table) => Some(table.to_vector()),
        None => None,
    };

    let rank_x = linalg::rank(spec.design());
    if rank_x < t {
        out.push(Violation::DesignRankDeficient { rank: rank_x, t });
    }
    if k + c + r < t {
        out.push(Violation::TooManyParameters { k, t, c, r });
    }

    let l = spec.l_matrix();
    let rank_l = linalg::rank(&l);
    if rank_l != c + r {
        out.push(Violation::ConstraintRankDeficient {
            rank: rank_l,
            expected: c + r,
        });
    }

    // Consistency of Lᵀ m = d: rank(Lᵀ | d) must equal rank(Lᵀ). Without a
    // table only the extra constraints can be checked.
    let (lt, d) = match &counts {
        Some(nv) => (l.transpose(), spec.d_vector(nv).ok()),
        None => (spec.constraints().transpose(), Some(spec.d_star().clone())),
    };
    if let Some(d) = d {
        if lt.nrows() > 0 {
            let rank_lt = linalg::rank(&lt);
            let aug = linalg::hcat(&lt, &DMatrix::from_column_slice(d.len(), 1, d.as_slice()));
            let rank_ld = linalg::rank(&aug);
            if rank_ld > rank_lt {
                out.push(Violation::InconsistentConstraints {
                    rank_l: rank_lt,
                    rank_ld,
                });
            }
        }
    }

    let ones = DMatrix::from_element(k, 1, 1.0);
    if !linalg::column_space_contains(spec.design(), &ones) {
        out.push(Violation::InterceptNotInDesign);
    }
    if c >= 2 && !linalg::column_space_contains(spec.design(), &spec.x0()) {
        out.push(Violation::StrataNotInDesign);
    }

    if let Some(nv) = &counts {
        let totals = spec.x0().transpose() * nv;
        for (h, &total) in totals.iter().enumerate() {
            if total <= 0.0 {
                out.push(Violation::EmptyStratum { stratum: h + 1 });
            }
        }
    }
    out
}

/// `inner ⊂ outer`: `𝒞(X_inner) ⊂ 𝒞(X_outer)`, `𝒞(L_outer) ⊂ 𝒞(L_inner)`,
/// `t_inner ≤ t_outer`, `r_inner ≥ r_outer`, and at least one of the two
/// inequalities strict.
pub fn is_nested(inner: &LmlcSpec, outer: &LmlcSpec) -> Result<bool> {
    if inner.k() != outer.k() {
        return Err(Error::dim("is_nested cell counts", outer.k(), inner.k()));
    }
    let t_in = linalg::rank(inner.design());
    let t_out = linalg::rank(outer.design());
    let r_in = linalg::rank(inner.constraints());
    let r_out = linalg::rank(outer.constraints());
    if t_in > t_out || r_in < r_out || (t_in == t_out && r_in == r_out) {
        return Ok(false);
    }
    Ok(linalg::column_space_contains(outer.design(), inner.design())
        && linalg::column_space_contains(&inner.l_matrix(), &outer.l_matrix()))
}
