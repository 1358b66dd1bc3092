//! Network and risk specifications, validation, and threshold calibration.
//!
//! A [`NetworkSpec`] is the limiting model: a list of characteristic
//! classes, each with an in-degree (number of debtors), an out-degree
//! (number of creditors), a population weight, and a distribution of the
//! contagion threshold over `{0..d_in} ∪ {immune}`. Threshold 0 marks
//! institutions insolvent from the initial shock; immune institutions
//! never default by contagion.
//!
//! [`RiskSpec`] attaches wealth parameters: a per-institution baseline,
//! per-class losses for each default and each infected link, and optional
//! bounded random-loss distributions.
//!
//! [`threshold_pmf_from_balance_sheet`] calibrates a threshold
//! distribution from a stylized balance sheet: the threshold is the number
//! of counterparty defaults, in a uniformly random order, that the
//! post-shock capital can absorb before going strictly negative.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
use rand::seq::SliceRandom;

/// Tolerance for probability-mass normalization checks.
pub const MASS_TOL: f64 = 1e-12;
/// Tolerance for the in/out mean-degree balance check.
pub const DEGREE_BALANCE_TOL: f64 = 1e-9;
/// Largest degree accepted by the exact calibration mode.
pub const EXACT_CALIBRATION_MAX_DEGREE: usize = 12;

/// A node's contagion threshold: number of defaulted debtors it tolerates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Threshold {
    /// Defaults once `k` of its debtors have defaulted (0 = initial default).
    Finite(u32),
    /// Never defaults by contagion.
    Immune,
}

impl std::fmt::Display for Threshold {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Threshold::Finite(k) => write!(f, "{k}"),
            Threshold::Immune => write!(f, "immune"),
        }
    }
}

impl Serialize for Threshold {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

/// One characteristic class of institutions.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Characteristic {
    pub id: String,
    /// Number of debtors (incoming exposure links).
    pub d_in: u32,
    /// Number of creditors (outgoing liability links).
    pub d_out: u32,
    /// Fraction of the population in this class.
    pub weight: f64,
    /// Threshold mass on 0..=d_in.
    pub threshold_pmf: Vec<f64>,
    /// Mass of institutions that never default by contagion.
    #[serde(default)]
    pub immune_mass: f64,
    /// Finite-population overrides for weight and threshold distribution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finite_n: Option<ClassOverride>,
}

/// Finite-n weight/threshold override for one class.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassOverride {
    pub weight: f64,
    pub threshold_pmf: Vec<f64>,
    #[serde(default)]
    pub immune_mass: f64,
}

/// The limiting network model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    #[serde(rename = "class")]
    pub classes: Vec<Characteristic>,
}

/// Random-loss parameters for one class: bounded distributions given by
/// mean and variance (two-point by default, see [`crate::risk`]).
#[derive(Debug, Clone, Copy, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RandomLoss {
    pub mean: f64,
    pub variance: f64,
}

/// Per-class loss parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassLoss {
    /// Class id this row applies to.
    pub class: String,
    /// Wealth lost per defaulted institution of this class.
    #[serde(default)]
    pub default_loss: f64,
    /// Wealth lost per infected link into a solvent institution of this class.
    #[serde(default)]
    pub link_loss: f64,
    /// Random per-default loss (bounded; mean/variance).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_default: Option<RandomLoss>,
    /// Random per-link loss (bounded; mean/variance).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_link: Option<RandomLoss>,
}

/// Wealth/loss specification over the classes of a [`NetworkSpec`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskSpec {
    /// Baseline wealth per institution (system total is `n * gamma_bar`).
    pub gamma_bar: f64,
    #[serde(rename = "loss", default)]
    pub losses: Vec<ClassLoss>,
}

impl RiskSpec {
    /// Uniform deterministic losses across every class of `spec`.
    pub fn uniform(spec: &NetworkSpec, gamma_bar: f64, default_loss: f64, link_loss: f64) -> Self {
        RiskSpec {
            gamma_bar,
            losses: spec
                .classes
                .iter()
                .map(|c| ClassLoss {
                    class: c.id.clone(),
                    default_loss,
                    link_loss,
                    random_default: None,
                    random_link: None,
                })
                .collect(),
        }
    }

    /// Loss row for class index `x` of `spec`, or zero losses if absent.
    pub fn loss_for<'a>(&'a self, spec: &NetworkSpec, x: usize) -> ClassLoss {
        let id = &spec.classes[x].id;
        self.losses
            .iter()
            .find(|l| &l.class == id)
            .cloned()
            .unwrap_or(ClassLoss {
                class: id.clone(),
                default_loss: 0.0,
                link_loss: 0.0,
                random_default: None,
                random_link: None,
            })
    }

    /// Checks every loss row refers to a class of `spec` and all parameters
    /// are finite and nonnegative.
    pub fn validate(&self, spec: &NetworkSpec) -> Result<(), ModelError> {
        if !self.gamma_bar.is_finite() {
            return Err(ModelError::BadRisk("gamma_bar must be finite".into()));
        }
        for l in &self.losses {
            if !spec.classes.iter().any(|c| c.id == l.class) {
                return Err(ModelError::ClassMismatch(l.class.clone()));
            }
            let mut params = vec![l.default_loss, l.link_loss];
            for r in [&l.random_default, &l.random_link].into_iter().flatten() {
                params.push(r.mean);
                params.push(r.variance);
            }
            if params.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(ModelError::BadRisk(format!(
                    "losses for class '{}' must be finite and nonnegative",
                    l.class
                )));
            }
        }
        Ok(())
    }
}

/// Stylized post-shock balance sheet of one institution.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalanceSheet {
    pub external_assets: f64,
    pub interbank_assets: f64,
    pub interbank_liabilities: f64,
    pub deposits: f64,
    /// Loss amounts suffered if the corresponding debtor defaults.
    pub incoming_loss_exposures: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("class '{0}': {1}")]
    BadClass(String, String),
    #[error("weights sum != 1 (got {0})")]
    WeightSum(f64),
    #[error("in/out mean mismatch (in {0}, out {1})")]
    DegreeBalance(f64, f64),
    #[error("no classes")]
    Empty,
    #[error("duplicate class id '{0}'")]
    DuplicateId(String),
    #[error("shock fraction {0} outside [0, 1]")]
    BadShock(f64),
    #[error("degree {0} too large for exact mode (max {EXACT_CALIBRATION_MAX_DEGREE})")]
    DegreeTooLarge(usize),
    #[error("monte carlo mode needs at least one sample")]
    ZeroSamples,
    #[error("unknown class '{0}' in risk spec")]
    ClassMismatch(String),
    #[error("bad risk spec: {0}")]
    BadRisk(String),
    #[error("exposures must be finite and nonnegative")]
    BadExposure,
}

fn check_pmf(id: &str, d_in: u32, pmf: &[f64], immune: f64) -> Result<(), ModelError> {
    if pmf.len() != d_in as usize + 1 {
        return Err(ModelError::BadClass(
            id.into(),
            format!("threshold_pmf must have length d_in+1 = {}", d_in + 1),
        ));
    }
    if pmf.iter().any(|p| !p.is_finite() || *p < 0.0) || !(0.0..=1.0).contains(&immune) {
        return Err(ModelError::BadClass(
            id.into(),
            "threshold masses must be in [0, 1]".into(),
        ));
    }
    let total: f64 = pmf.iter().sum::<f64>() + immune;
    if (total - 1.0).abs() > MASS_TOL {
        return Err(ModelError::BadClass(
            id.into(),
            format!("threshold mass sums to {total}, expected 1"),
        ));
    }
    if d_in == 0 {
        // pmf has the single entry theta=0; nothing further to check.
    }
    Ok(())
}

/// Validates all invariants of `spec` and returns it certified.
///
/// Checks, in order: nonempty class list, unique ids, per-class threshold
/// mass normalization, weight normalization, and the balance of mean in-
/// and out-degrees (required for half-edge matching to close).
pub fn validate_spec(spec: NetworkSpec) -> Result<NetworkSpec, ModelError> {
    if spec.classes.is_empty() {
        return Err(ModelError::Empty);
    }
    for (i, c) in spec.classes.iter().enumerate() {
        if spec.classes[..i].iter().any(|o| o.id == c.id) {
            return Err(ModelError::DuplicateId(c.id.clone()));
        }
        if !c.weight.is_finite() || c.weight < 0.0 || c.weight > 1.0 {
            return Err(ModelError::BadClass(
                c.id.clone(),
                "weight must be in [0, 1]".into(),
            ));
        }
        check_pmf(&c.id, c.d_in, &c.threshold_pmf, c.immune_mass)?;
        if let Some(ov) = &c.finite_n {
            check_pmf(&c.id, c.d_in, &ov.threshold_pmf, ov.immune_mass)?;
        }
    }
    for finite_n in [false, true] {
        if finite_n && spec.classes.iter().all(|c| c.finite_n.is_none()) {
            continue;
        }
        let (mut wsum, mut din, mut dout) = (0.0f64, 0.0f64, 0.0f64);
        for c in &spec.classes {
            let w = match (&c.finite_n, finite_n) {
                (Some(ov), true) => ov.weight,
                _ => c.weight,
            };
            wsum += w;
            din += c.d_in as f64 * w;
            dout += c.d_out as f64 * w;
        }
        if (wsum - 1.0).abs() > MASS_TOL {
            return Err(ModelError::WeightSum(wsum));
        }
        if (din - dout).abs() > DEGREE_BALANCE_TOL {
            return Err(ModelError::DegreeBalance(din, dout));
        }
    }
    Ok(spec)
}

impl NetworkSpec {
    /// Mean degree of the limiting model.
    pub fn mean_degree(&self) -> f64 {
        self.classes
            .iter()
            .map(|c| c.d_in as f64 * c.weight)
            .sum()
    }

    /// Largest in-degree across classes.
    pub fn max_d_in(&self) -> u32 {
        self.classes.iter().map(|c| c.d_in).max().unwrap_or(0)
    }

    /// Class weight, using the finite-n override when requested.
    pub fn weight(&self, x: usize, finite_n: bool) -> f64 {
        let c = &self.classes[x];
        match (&c.finite_n, finite_n) {
            (Some(ov), true) => ov.weight,
            _ => c.weight,
        }
    }

    /// Threshold mass `q_x(theta)`, finite-n aware.
    pub fn q(&self, x: usize, theta: Threshold, finite_n: bool) -> f64 {
        let c = &self.classes[x];
        let (pmf, imm) = match (&c.finite_n, finite_n) {
            (Some(ov), true) => (&ov.threshold_pmf, ov.immune_mass),
            _ => (&c.threshold_pmf, c.immune_mass),
        };
        match theta {
            Threshold::Finite(k) => pmf.get(k as usize).copied().unwrap_or(0.0),
            Threshold::Immune => imm,
        }
    }

    /// Whether any class carries a finite-n override.
    pub fn has_finite_n(&self) -> bool {
        self.classes.iter().any(|c| c.finite_n.is_some())
    }

    /// Index of the class with the given id.
    pub fn class_index(&self, id: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.id == id)
    }
}

/// Capital remaining after a fractional shock to external assets.
///
/// May be negative; a negative value marks the institution as initially
/// insolvent.
pub fn capital_after_shock(bs: &BalanceSheet, epsilon: f64) -> Result<f64, ModelError> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(ModelError::BadShock(epsilon));
    }
    Ok((1.0 - epsilon) * bs.external_assets + bs.interbank_assets
        - bs.interbank_liabilities
        - bs.deposits)
}

/// Calibration mode for [`threshold_pmf_from_balance_sheet`].
#[derive(Debug, Clone, Copy)]
pub enum CalibrationMode {
    /// Exact distribution over all debtor default orders (degree <= 12).
    Exact,
    /// Average over sampled random orders.
    MonteCarlo { samples: u64, seed: u64 },
}

/// A calibrated threshold distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedPmf {
    /// Mass on thresholds 0..=degree.
    pub pmf: Vec<f64>,
    /// Mass on "never defaults": total exposure never exceeds capital.
    pub immune_mass: f64,
}

impl CalibratedPmf {
    pub fn degree(&self) -> usize {
        self.pmf.len() - 1
    }

    /// P(threshold > k), counting immune as +infinity.
    pub fn survival(&self, k: usize) -> f64 {
        self.pmf.iter().skip(k + 1).sum::<f64>() + self.immune_mass
    }
}

/// Calibrates the threshold distribution of one balance sheet under shock
/// `epsilon`.
///
/// The threshold is the count of debtor defaults, in a uniformly random
/// order, strictly exceeding post-shock capital in cumulative loss; a
/// prefix loss exactly equal to capital leaves the institution solvent.
/// Negative capital yields all mass on threshold 0; if even the total
/// exposure stays within capital the institution is immune.
pub fn threshold_pmf_from_balance_sheet(
    bs: &BalanceSheet,
    epsilon: f64,
    mode: CalibrationMode,
) -> Result<CalibratedPmf, ModelError> {
    let capital = capital_after_shock(bs, epsilon)?;
    let exposures = &bs.incoming_loss_exposures;
    if exposures.iter().any(|e| !e.is_finite() || *e < 0.0) {
        return Err(ModelError::BadExposure);
    }
    let d = exposures.len();
    let mut pmf = vec![0.0; d + 1];
    if capital < 0.0 {
        pmf[0] = 1.0;
        return Ok(CalibratedPmf {
            pmf,
            immune_mass: 0.0,
        });
    }
    match mode {
        CalibrationMode::Exact => {
            if d > EXACT_CALIBRATION_MAX_DEGREE {
                return Err(ModelError::DegreeTooLarge(d));
            }
            // The first k losses of a uniform order form a uniform k-subset,
            // so P(threshold > k) = #{k-subsets with sum <= capital} / C(d,k).
            let mut count = vec![0u64; d + 1];
            for mask in 0u32..(1u32 << d) {
                let mut sum = 0.0;
                for (i, e) in exposures.iter().enumerate() {
                    if mask >> i & 1 == 1 {
                        sum += e;
                    }
                }
                if sum <= capital {
                    count[mask.count_ones() as usize] += 1;
                }
            }
            let mut surv = vec![0.0; d + 1]; // surv[k] = P(threshold > k)
            for k in 0..=d {
                surv[k] = count[k] as f64 / binomial_u64(d, k) as f64;
            }
            let immune_mass = surv[d];
            for k in 1..=d {
                pmf[k] = (surv[k - 1] - surv[k]).max(0.0);
            }
            Ok(CalibratedPmf { pmf, immune_mass })
        }
        CalibrationMode::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return Err(ModelError::ZeroSamples);
            }
            let mut rng = seed::rng(seed);
            let mut order: Vec<usize> = (0..d).collect();
            let mut immune_hits = 0u64;
            let mut hits = vec![0u64; d + 1];
            for _ in 0..samples {
                order.shuffle(&mut rng);
                let mut sum = 0.0;
                let mut theta = None;
                for (k, &i) in order.iter().enumerate() {
                    sum += exposures[i];
                    if sum > capital {
                        theta = Some(k + 1);
                        break;
                    }
                }
                match theta {
                    Some(k) => hits[k] += 1,
                    None => immune_hits += 1,
                }
            }
            for k in 0..=d {
                pmf[k] = hits[k] as f64 / samples as f64;
            }
            Ok(CalibratedPmf {
                pmf,
                immune_mass: immune_hits as f64 / samples as f64,
            })
        }
    }
}

fn binomial_u64(n: usize, k: usize) -> u64 {
    let k = k.min(n - k.min(n));
    let mut acc = 1u64;
    for i in 0..k {
        acc = acc * (n - i) as u64 / (i + 1) as u64;
    }
    acc
}

/// On-disk spec file: the class list plus an optional risk block.
///
/// The schema is TOML: one `[[class]]` table per characteristic with
/// `id`, `d_in`, `d_out`, `weight`, `threshold_pmf` (array of length
/// `d_in + 1`) and `immune_mass`; an optional nested `[class.finite_n]`
/// override; and an optional `[risk]` block with `gamma_bar` and
/// `[[risk.loss]]` rows keyed by class id. Decimal values round-trip
/// exactly (writes use the shortest representation that reparses to the
/// same binary float).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    #[serde(rename = "class")]
    pub classes: Vec<Characteristic>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk: Option<RiskSpec>,
}

impl SpecFile {
    pub fn new(spec: NetworkSpec, risk: Option<RiskSpec>) -> Self {
        SpecFile {
            classes: spec.classes,
            risk,
        }
    }

    pub fn network_spec(&self) -> NetworkSpec {
        NetworkSpec {
            classes: self.classes.clone(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("spec serialization cannot fail")
    }
}
