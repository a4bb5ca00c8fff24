//! Monte Carlo sizes and powers of the marginal homogeneity testing
//! strategies on 4 × 4 tables.
//!
//! Three strategies are compared:
//!
//! * [`Strategy::Unconditional`]: goodness of fit of MH, one stage at level `α`.
//! * [`Strategy::ConditionalQs`]: QS against the saturated model, then S
//!   against QS.
//! * [`Strategy::ConditionalOqs`]: OQS against the saturated model, then S
//!   against OQS.
//!
//! Both stages of a conditional strategy run at level `1 − (1 − α)^{1/2}` on
//! the same simulated tables, and the overall size is
//! `1 − (1 − a₁)(1 − a₂)`. A failed fit counts as a rejection and is tallied.
//!
//! Tables for replicate `j` at sample size `n` are drawn from a generator
//! seeded by `(master_seed, n, j)` only, so all truths share common random
//! numbers and results do not depend on the number of workers.

mod fixtures;
mod rng;

pub use fixtures::{Fixtures, POWER_POINTS};
pub use rng::{
    replicate_rng, replicate_seed, sample_multinomial, sample_multinomial_with_rng, sample_poisson,
    sample_poisson_with_rng, splitmix64, PROBABILITY_SUM_TOL,
};

use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};

use crate::divergence::{parse_lambda, PhiFunction};
use crate::error::{Error, Result};
use crate::estimate::{fit_shared, FitOptions, FitResult};
use crate::inference::{chisq_quantile, scaled_divergence};
use crate::model::{build_square_model, LmlcSpec, ModelKind, SamplingScheme};
use crate::table::ContingencyTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "Unconditional43")]
    Unconditional,
    #[serde(rename = "ConditionalQS_30_42")]
    ConditionalQs,
    #[serde(rename = "ConditionalOQS_44_45")]
    ConditionalOqs,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [
        Strategy::Unconditional,
        Strategy::ConditionalQs,
        Strategy::ConditionalOqs,
    ];

    pub fn stages(self) -> usize {
        match self {
            Strategy::Unconditional => 1,
            _ => 2,
        }
    }

    /// Degrees of freedom per stage.
    pub fn stage_df(self) -> &'static [usize] {
        match self {
            Strategy::Unconditional => &[3],
            Strategy::ConditionalQs => &[3, 3],
            Strategy::ConditionalOqs => &[5, 1],
        }
    }

    /// Per-stage level for overall level `alpha`.
    pub fn stage_level(self, alpha: f64) -> f64 {
        match self {
            Strategy::Unconditional => alpha,
            _ => -((-alpha).ln_1p() / 2.0).exp_m1(),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Strategy::Unconditional => "Unconditional43",
            Strategy::ConditionalQs => "ConditionalQS_30_42",
            Strategy::ConditionalOqs => "ConditionalOQS_44_45",
        }
    }

    /// The stage rate that counts as power at alternative `point`.
    fn power_stage(self, point: usize) -> usize {
        match self {
            Strategy::Unconditional => 0,
            _ if point <= 6 => 0,
            _ => 1,
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "unconditional43" | "unconditional" | "43" => Ok(Strategy::Unconditional),
            "conditionalqs_30_42" | "qs" | "30-42" => Ok(Strategy::ConditionalQs),
            "conditionaloqs_44_45" | "oqs" | "44-45" => Ok(Strategy::ConditionalOqs),
            _ => Err(Error::domain(format!("unknown strategy `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n_grid: Vec<u64>,
    #[serde(rename = "R")]
    pub replicates: u64,
    pub alpha: f64,
    #[serde(deserialize_with = "lambda_list")]
    pub lambda1_grid: Vec<f64>,
    #[serde(deserialize_with = "lambda_list")]
    pub lambda2_grid: Vec<f64>,
    pub master_seed: u64,
    #[serde(alias = "strategy", deserialize_with = "one_or_many")]
    pub strategies: Vec<Strategy>,
    /// Alternative points (1..=12) for the power study.
    #[serde(default = "all_points")]
    pub power_points: Vec<usize>,
    /// Rayon worker count; `None` uses the global pool.
    #[serde(default)]
    pub workers: Option<usize>,
}

fn all_points() -> Vec<usize> {
    (1..=POWER_POINTS).collect()
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Strategy>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(Strategy),
        Many(Vec<Strategy>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(s) => vec![s],
        OneOrMany::Many(v) => v,
    })
}

fn lambda_list<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Lambda {
        Number(f64),
        Text(String),
    }
    Vec::<Lambda>::deserialize(d)?
        .into_iter()
        .map(|l| match l {
            Lambda::Number(v) => Ok(v),
            Lambda::Text(s) => parse_lambda(&s).map_err(serde::de::Error::custom),
        })
        .collect()
}

impl SimulationConfig {
    /// Full grid: four sample sizes, 10 000 replicates, five `λ` values each.
    pub fn reference_grid(master_seed: u64) -> Self {
        let grid = vec![-0.5, 0.0, 2.0 / 3.0, 1.0, 2.0];
        Self {
            n_grid: vec![100, 250, 400, 550],
            replicates: 10_000,
            alpha: 0.05,
            lambda1_grid: grid.clone(),
            lambda2_grid: grid,
            master_seed,
            strategies: Strategy::ALL.to_vec(),
            power_points: all_points(),
            workers: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::domain("R must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::domain(format!("alpha {} outside [0, 1)", self.alpha)));
        }
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            return Err(Error::domain("n_grid needs positive sample sizes"));
        }
        if self.lambda1_grid.is_empty() || self.lambda2_grid.is_empty() || self.strategies.is_empty() {
            return Err(Error::domain("lambda grids and strategies must be non-empty"));
        }
        if self.lambda1_grid.iter().chain(&self.lambda2_grid).any(|l| !l.is_finite()) {
            return Err(Error::domain("lambda values must be finite"));
        }
        if self.power_points.iter().any(|&p| p == 0 || p > POWER_POINTS) {
            return Err(Error::domain("power points must lie in 1..=12"));
        }
        if self.workers == Some(0) {
            return Err(Error::domain("workers must be positive"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Dale's criterion and the average gradient

/// `|logit(1 − size) − logit(1 − α)|` thresholds.
pub const DALE_CLOSE: f64 = 0.35;
pub const DALE_FAIRLY_CLOSE: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DaleBand {
    Close,
    FairlyClose,
    Far,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn check_open_unit(v: f64, what: &str) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::domain(format!("{what} = {v} outside (0, 1)")));
    }
    Ok(())
}

pub fn dale_classify(size: f64, alpha: f64) -> Result<DaleBand> {
    check_open_unit(size, "size")?;
    check_open_unit(alpha, "alpha")?;
    let gap = (logit(1.0 - size) - logit(1.0 - alpha)).abs();
    Ok(if gap <= DALE_CLOSE {
        DaleBand::Close
    } else if gap <= DALE_FAIRLY_CLOSE {
        DaleBand::FairlyClose
    } else {
        DaleBand::Far
    })
}

/// Sizes within `epsilon` of `alpha` on the logit scale.
pub fn dale_band(alpha: f64, epsilon: f64) -> Result<(f64, f64)> {
    check_open_unit(alpha, "alpha")?;
    if !(epsilon >= 0.0) {
        return Err(Error::domain("epsilon must be nonnegative"));
    }
    let centre = logit(1.0 - alpha);
    let expit = |x: f64| 1.0 / (1.0 + (-x).exp());
    Ok((1.0 - expit(centre + epsilon), 1.0 - expit(centre - epsilon)))
}

/// Size-corrected average gradient
/// `γ = sqrt(mean_i ((β(i) − α)/Δ(i))²) / α` with `Δ` the displacement of
/// each point (see [`Fixtures::displacements`]).
pub fn gamma_gradient(size: f64, powers: &[f64], displacements: &[f64]) -> Result<f64> {
    if !(size > 0.0) {
        return Err(Error::domain("gamma is undefined for a zero size"));
    }
    if powers.len() != displacements.len() || powers.is_empty() {
        return Err(Error::dim("gamma_gradient powers", displacements.len(), powers.len()));
    }
    if displacements.iter().any(|&d| d == 0.0 || !d.is_finite()) {
        return Err(Error::domain("displacements must be finite and non-zero"));
    }
    let mean = powers
        .iter()
        .zip(displacements)
        .map(|(p, d)| ((p - size) / d).powi(2))
        .sum::<f64>()
        / powers.len() as f64;
    Ok(mean.sqrt() / size)
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeEntry {
    pub strategy: Strategy,
    pub lambda1: f64,
    pub lambda2: f64,
    pub n: u64,
    pub stage_rates: Vec<f64>,
    /// `1 − Π (1 − a_stage)`.
    pub size: f64,
    pub dale: Option<DaleBand>,
    /// Replicates whose fit failed, per stage.
    pub failures: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerEntry {
    pub strategy: Strategy,
    pub lambda1: f64,
    pub lambda2: f64,
    pub n: u64,
    pub point: usize,
    pub stage_rates: Vec<f64>,
    pub power: f64,
    pub failures: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaEntry {
    pub strategy: Strategy,
    pub lambda1: f64,
    pub lambda2: f64,
    pub n: u64,
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub master_seed: u64,
    pub replicates: u64,
    pub scheme: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub config: SimulationConfig,
    pub sizes: Vec<SizeEntry>,
    pub powers: Vec<PowerEntry>,
    pub gamma: Vec<GammaEntry>,
    pub seeds_used: SeedRecord,
}

impl SimulationReport {
    fn empty(config: &SimulationConfig) -> Self {
        Self {
            config: config.clone(),
            sizes: Vec::new(),
            powers: Vec::new(),
            gamma: Vec::new(),
            seeds_used: SeedRecord {
                master_seed: config.master_seed,
                replicates: config.replicates,
                scheme: "splitmix64(splitmix64(splitmix64(master) ^ n) ^ replicate) -> ChaCha8"
                    .into(),
            },
        }
    }

    pub fn size(&self, strategy: Strategy, lambda1: f64, lambda2: f64, n: u64) -> Option<&SizeEntry> {
        self.sizes.iter().find(|e| {
            e.strategy == strategy && e.lambda1 == lambda1 && e.lambda2 == lambda2 && e.n == n
        })
    }

    pub fn power(
        &self,
        strategy: Strategy,
        lambda1: f64,
        lambda2: f64,
        n: u64,
        point: usize,
    ) -> Option<&PowerEntry> {
        self.powers.iter().find(|e| {
            e.strategy == strategy
                && e.lambda1 == lambda1
                && e.lambda2 == lambda2
                && e.n == n
                && e.point == point
        })
    }

    /// Fill `gamma` for every key with a positive size and all twelve powers.
    pub fn compute_gamma(&mut self, fixtures: &Fixtures) {
        let displacements = fixtures.displacements();
        let mut out = Vec::new();
        for s in &self.sizes {
            let powers: Option<Vec<f64>> = (1..=POWER_POINTS)
                .map(|p| self.power(s.strategy, s.lambda1, s.lambda2, s.n, p).map(|e| e.power))
                .collect();
            if let Some(powers) = powers {
                out.push(GammaEntry {
                    strategy: s.strategy,
                    lambda1: s.lambda1,
                    lambda2: s.lambda2,
                    n: s.n,
                    gamma: gamma_gradient(s.size, &powers, &displacements).ok(),
                });
            }
        }
        self.gamma = out;
    }
}

// ---------------------------------------------------------------------------
// Engine

struct Models {
    mh: Arc<LmlcSpec>,
    qs: Arc<LmlcSpec>,
    oqs: Arc<LmlcSpec>,
    s: Arc<LmlcSpec>,
}

impl Models {
    fn new() -> Result<Self> {
        let b = |kind| -> Result<Arc<LmlcSpec>> {
            Ok(Arc::new(build_square_model(kind, 4, SamplingScheme::multinomial(16))?))
        };
        Ok(Self {
            mh: b(ModelKind::MarginalHomogeneity)?,
            qs: b(ModelKind::QuasiSymmetry)?,
            oqs: b(ModelKind::OrdinalQuasiSymmetry)?,
            s: b(ModelKind::Symmetry)?,
        })
    }
}

struct Plan {
    strategies: Vec<Strategy>,
    phi1: Vec<PhiFunction>,
    phi2: Vec<PhiFunction>,
    /// Critical values per strategy and stage.
    critical: Vec<Vec<f64>>,
    models: Models,
    options: FitOptions,
}

/// Rejection and failure counts for one truth and sample size.
#[derive(Debug, Clone, PartialEq)]
struct Tally {
    rejections: Vec<u64>,
    failures: Vec<u64>,
}

impl Plan {
    fn new(config: &SimulationConfig) -> Result<Self> {
        config.validate()?;
        let mut critical = Vec::new();
        for &s in &config.strategies {
            let level = s.stage_level(config.alpha);
            let cuts = s
                .stage_df()
                .iter()
                .map(|&df| {
                    if level == 0.0 {
                        Ok(f64::INFINITY)
                    } else {
                        chisq_quantile(1.0 - level, df)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            critical.push(cuts);
        }
        Ok(Self {
            strategies: config.strategies.clone(),
            phi1: config.lambda1_grid.iter().map(|&l| PhiFunction::power(l)).collect(),
            phi2: config.lambda2_grid.iter().map(|&l| PhiFunction::power(l)).collect(),
            critical,
            models: Models::new()?,
            options: FitOptions {
                validate: false,
                ..FitOptions::default()
            },
        })
    }

    fn rejection_index(&self, s: usize, stage: usize, i1: usize, i2: usize) -> usize {
        ((s * 2 + stage) * self.phi1.len() + i1) * self.phi2.len() + i2
    }

    fn failure_index(&self, s: usize, stage: usize, i2: usize) -> usize {
        (s * 2 + stage) * self.phi2.len() + i2
    }

    fn zero_tally(&self) -> Tally {
        let n = self.strategies.len() * 2;
        Tally {
            rejections: vec![0; n * self.phi1.len() * self.phi2.len()],
            failures: vec![0; n * self.phi2.len()],
        }
    }

    fn fit(&self, spec: &Arc<LmlcSpec>, table: &ContingencyTable, phi: &PhiFunction) -> Option<FitResult> {
        match fit_shared(spec.clone(), table, phi, &self.options) {
            Ok(f) if f.converged => Some(f),
            Ok(_) => None,
            Err(e) => {
                log::debug!("fit of {} failed: {e}", spec.kind());
                None
            }
        }
    }

    fn replicate(&self, probabilities: &DVector<f64>, n: u64, master: u64, rep: u64) -> Result<Tally> {
        let mut rng = replicate_rng(master, n, rep);
        let counts = sample_multinomial_with_rng(probabilities, n, &mut rng)?;
        let table = ContingencyTable::new(counts, vec![4, 4])?;
        let nv = table.to_vector();
        let mut tally = self.zero_tally();
        let need = |s: Strategy| self.strategies.contains(&s);
        for (i2, phi2) in self.phi2.iter().enumerate() {
            let mh = need(Strategy::Unconditional)
                .then(|| self.fit(&self.models.mh, &table, phi2))
                .flatten();
            let qs = need(Strategy::ConditionalQs)
                .then(|| self.fit(&self.models.qs, &table, phi2))
                .flatten();
            let oqs = need(Strategy::ConditionalOqs)
                .then(|| self.fit(&self.models.oqs, &table, phi2))
                .flatten();
            let s = (need(Strategy::ConditionalQs) || need(Strategy::ConditionalOqs))
                .then(|| self.fit(&self.models.s, &table, phi2))
                .flatten();
            for (si, &strategy) in self.strategies.iter().enumerate() {
                // (outer means, inner means) per stage; `None` marks a failed fit.
                let stages: Vec<Option<(&DVector<f64>, &DVector<f64>)>> = match strategy {
                    Strategy::Unconditional => vec![mh.as_ref().map(|f| (&nv, &f.m_hat))],
                    Strategy::ConditionalQs => vec![
                        qs.as_ref().map(|f| (&nv, &f.m_hat)),
                        qs.as_ref().zip(s.as_ref()).map(|(a, b)| (&a.m_hat, &b.m_hat)),
                    ],
                    Strategy::ConditionalOqs => vec![
                        oqs.as_ref().map(|f| (&nv, &f.m_hat)),
                        oqs.as_ref().zip(s.as_ref()).map(|(a, b)| (&a.m_hat, &b.m_hat)),
                    ],
                };
                for (stage, pair) in stages.into_iter().enumerate() {
                    let cut = self.critical[si][stage];
                    match pair {
                        None => {
                            tally.failures[self.failure_index(si, stage, i2)] += 1;
                            for i1 in 0..self.phi1.len() {
                                tally.rejections[self.rejection_index(si, stage, i1, i2)] += 1;
                            }
                        }
                        Some((a, b)) => {
                            for (i1, phi1) in self.phi1.iter().enumerate() {
                                let stat = scaled_divergence(a, b, phi1)?;
                                if stat > cut || stat.is_nan() {
                                    tally.rejections[self.rejection_index(si, stage, i1, i2)] += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(tally)
    }

    fn run(&self, probabilities: &DVector<f64>, n: u64, config: &SimulationConfig) -> Result<Tally> {
        let add = |a: Result<Tally>, b: Result<Tally>| -> Result<Tally> {
            let (mut a, b) = (a?, b?);
            for (x, y) in a.rejections.iter_mut().zip(&b.rejections) {
                *x += y;
            }
            for (x, y) in a.failures.iter_mut().zip(&b.failures) {
                *x += y;
            }
            Ok(a)
        };
        (0..config.replicates)
            .into_par_iter()
            .map(|rep| self.replicate(probabilities, n, config.master_seed, rep))
            .reduce(|| Ok(self.zero_tally()), add)
    }

    /// Stage rates and failures for every (strategy, λ₁, λ₂).
    fn rates(&self, tally: &Tally, replicates: u64) -> Vec<(usize, usize, usize, Vec<f64>, Vec<u64>)> {
        let r = replicates as f64;
        let mut out = Vec::new();
        for (si, s) in self.strategies.iter().enumerate() {
            for i1 in 0..self.phi1.len() {
                for i2 in 0..self.phi2.len() {
                    let rates = (0..s.stages())
                        .map(|g| tally.rejections[self.rejection_index(si, g, i1, i2)] as f64 / r)
                        .collect();
                    let fails = (0..s.stages())
                        .map(|g| tally.failures[self.failure_index(si, g, i2)])
                        .collect();
                    out.push((si, i1, i2, rates, fails));
                }
            }
        }
        out
    }
}

fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// `1 − Π (1 − a)`.
pub fn combine_stage_rates(rates: &[f64]) -> f64 {
    1.0 - rates.iter().map(|a| 1.0 - a).product::<f64>()
}

/// Sizes under the symmetric null truth.
pub fn run_size_study(config: &SimulationConfig, fixtures: &Fixtures) -> Result<SimulationReport> {
    fixtures.validate()?;
    let plan = Plan::new(config)?;
    let probs = fixtures.null_probabilities()?;
    let mut report = SimulationReport::empty(config);
    for &n in &config.n_grid {
        let tally = with_pool(config.workers, || plan.run(&probs, n, config))??;
        for (si, i1, i2, rates, failures) in plan.rates(&tally, config.replicates) {
            let size = combine_stage_rates(&rates);
            report.sizes.push(SizeEntry {
                strategy: plan.strategies[si],
                lambda1: config.lambda1_grid[i1],
                lambda2: config.lambda2_grid[i2],
                n,
                stage_rates: rates,
                size,
                dale: if config.alpha > 0.0 {
                    dale_classify(size, config.alpha).ok()
                } else {
                    None
                },
                failures,
            });
        }
    }
    Ok(report)
}

/// Powers at the configured alternative points.
pub fn run_power_study(config: &SimulationConfig, fixtures: &Fixtures) -> Result<SimulationReport> {
    fixtures.validate()?;
    let plan = Plan::new(config)?;
    let mut report = SimulationReport::empty(config);
    for &n in &config.n_grid {
        for &point in &config.power_points {
            let probs = fixtures.point_probabilities(point)?;
            let tally = with_pool(config.workers, || plan.run(&probs, n, config))??;
            for (si, i1, i2, rates, failures) in plan.rates(&tally, config.replicates) {
                let strategy = plan.strategies[si];
                report.powers.push(PowerEntry {
                    strategy,
                    lambda1: config.lambda1_grid[i1],
                    lambda2: config.lambda2_grid[i2],
                    n,
                    point,
                    power: rates[strategy.power_stage(point)],
                    stage_rates: rates,
                    failures,
                });
            }
        }
    }
    Ok(report)
}

/// Sizes, powers and `γ` in one report.
pub fn run_simulation(config: &SimulationConfig, fixtures: &Fixtures) -> Result<SimulationReport> {
    let mut report = run_size_study(config, fixtures)?;
    report.powers = run_power_study(config, fixtures)?.powers;
    report.compute_gamma(fixtures);
    Ok(report)
}
