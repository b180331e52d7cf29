//! Core membership for the cooperation game: coalition demands under the four
//! expectation models, core and least-core linear programs, balancedness
//! certificates and the planar core region for three users.

use std::collections::{HashMap, HashSet};
use std::fmt;

use num::{BigRational, Zero};
use rayon::prelude::*;

use crate::equilibrium::{partition_utilities_with, NeOptions};
use crate::error::{invalid, Error, Result};
use crate::lp::{rational_on_grid, Lp, LpOutcome, LpScalar, LpSolution};
use crate::model::{set_partitions_of, Coalition, Partition, Scenario};

/// Largest user count accepted by the core LPs.
pub const MAX_CORE_USERS: usize = 10;
/// Largest number of outsiders whose arrangements are enumerated.
pub const MAX_OUTSIDERS: usize = 8;
/// Up to this many users the verdict is confirmed in exact arithmetic.
pub const EXACT_CHECK_USERS: usize = 5;
/// Grid the utilities are rounded to for the exact check.
pub const EXACT_GRID: f64 = 1e-12;
/// Default margin a balanced collection must exceed to declare the core empty.
pub const DEFAULT_TOL_LP: f64 = 1e-9;
/// Tolerance for certificate balancedness and witness feasibility.
pub const CERT_TOL: f64 = 1e-9;

/// How a deviating coalition expects the outsiders to arrange themselves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExpectationModel {
    /// Outsiders pick the arrangement maximizing their own total.
    Rational,
    /// Outsiders merge into one coalition.
    Merging,
    /// The worst arrangement for the deviator.
    Cautious,
    /// Outsiders split into singletons.
    Singleton,
}

impl ExpectationModel {
    pub const ALL: [ExpectationModel; 4] = [
        ExpectationModel::Rational,
        ExpectationModel::Merging,
        ExpectationModel::Cautious,
        ExpectationModel::Singleton,
    ];
}

impl fmt::Display for ExpectationModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExpectationModel::Rational => "rational",
            ExpectationModel::Merging => "merging",
            ExpectationModel::Cautious => "cautious",
            ExpectationModel::Singleton => "singleton",
        })
    }
}

impl std::str::FromStr for ExpectationModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| invalid(format!("unknown expectation model {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Nonempty,
    Empty,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Nonempty => "nonempty",
            Verdict::Empty => "empty",
        })
    }
}

/// Weights on a balanced collection whose demands exceed the grand coalition's value.
#[derive(Debug, Clone, PartialEq)]
pub struct BalancedCertificate {
    /// Coalitions with positive weight, by mask.
    pub weights: Vec<(Coalition, f64)>,
    /// `sum lambda_S v_S - v(K)`.
    pub margin: f64,
}

impl BalancedCertificate {
    /// Checks balancedness and recomputes the margin from `demands`.
    pub fn validate(&self, k: usize, demands: &CoalitionDemands) -> Result<f64> {
        for i in 0..k {
            let cover: f64 = self.weights.iter().filter(|(s, _)| s.contains(i)).map(|(_, w)| w).sum();
            if (cover - 1.0).abs() > CERT_TOL {
                return Err(Error::NumericalFailure(format!(
                    "certificate covers user {} with weight {cover}",
                    i + 1
                )));
            }
        }
        if self
            .weights
            .iter()
            .any(|(_, w)| !(-CERT_TOL..=1.0 + CERT_TOL).contains(w))
        {
            return Err(Error::NumericalFailure("certificate weight outside [0, 1]".into()));
        }
        let mut total = 0.0;
        for &(s, w) in &self.weights {
            total += w * demands.get(s).ok_or_else(|| invalid(format!("no demand for {s}")))?;
        }
        let margin = total - demands.grand_value;
        if margin <= CERT_TOL {
            return Err(Error::NumericalFailure(format!(
                "certificate margin {margin:e} does not exceed {CERT_TOL:e}"
            )));
        }
        Ok(margin)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoreResult {
    pub verdict: Verdict,
    /// Witness maximizing the minimum slack, when nonempty.
    pub allocation: Option<Vec<f64>>,
    pub certificate: Option<BalancedCertificate>,
    /// Minimum constraint slack of the witness.
    pub slack: Option<f64>,
    /// Optimal relaxation of the least core.
    pub epsilon_star: f64,
    pub demands: CoalitionDemands,
    /// Whether the verdict was confirmed in exact arithmetic.
    pub exact_checked: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeastCoreResult {
    pub epsilon_star: f64,
    pub allocation: Vec<f64>,
}

/// Demands of every nonempty proper coalition plus the grand coalition's value.
#[derive(Debug, Clone, PartialEq)]
pub struct CoalitionDemands {
    pub num_users: usize,
    pub grand_value: f64,
    /// `(S, v_S)`; any order.
    pub entries: Vec<(Coalition, f64)>,
}

impl CoalitionDemands {
    pub fn get(&self, s: Coalition) -> Option<f64> {
        self.entries.iter().find(|(c, _)| *c == s).map(|&(_, v)| v)
    }

    /// Smallest `x(S) - v_S` over all listed coalitions.
    pub fn min_slack(&self, x: &[f64]) -> f64 {
        self.entries
            .iter()
            .map(|&(s, v)| s.members().map(|i| x[i]).sum::<f64>() - v)
            .fold(f64::INFINITY, f64::min)
    }
}

fn check_proper(scenario: &Scenario, s: Coalition) -> Result<()> {
    scenario.check_coalition(s)?;
    if s == scenario.grand_coalition() {
        return Err(invalid(format!("{s} is the grand coalition, not a proper subset")));
    }
    Ok(())
}

/// Partitions `{S} + rho` the model needs to evaluate `S`.
fn candidate_partitions(scenario: &Scenario, s: Coalition, model: ExpectationModel) -> Result<Vec<Partition>> {
    let k = scenario.num_users();
    let rest = scenario.grand_coalition().difference(s);
    let outsiders: Vec<usize> = rest.members().collect();
    let arrangements: Vec<Vec<Coalition>> = match model {
        ExpectationModel::Merging => vec![vec![rest]],
        ExpectationModel::Singleton => vec![outsiders.iter().map(|&i| Coalition::singleton(i)).collect()],
        ExpectationModel::Rational | ExpectationModel::Cautious => {
            if outsiders.len() > MAX_OUTSIDERS {
                return Err(invalid(format!(
                    "{} outsiders exceed the enumeration limit of {MAX_OUTSIDERS}",
                    outsiders.len()
                )));
            }
            set_partitions_of(&outsiders)
        }
    };
    arrangements
        .into_iter()
        .map(|mut blocks| {
            blocks.push(s);
            Partition::new(blocks, k)
        })
        .collect()
}

/// Evaluates equilibria once per distinct partition and answers demand queries.
struct UtilityCache<'a> {
    scenario: &'a Scenario,
    values: HashMap<Partition, Vec<f64>>,
}

impl<'a> UtilityCache<'a> {
    fn build(
        scenario: &'a Scenario,
        partitions: impl IntoIterator<Item = Partition>,
        opts: &NeOptions,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        let unique: Vec<Partition> = partitions.into_iter().filter(|p| seen.insert(p.clone())).collect();
        let utilities = unique
            .par_iter()
            .map(|p| partition_utilities_with(scenario, p, opts))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            scenario,
            values: unique.into_iter().zip(utilities).collect(),
        })
    }

    fn value(&self, partition: &Partition, s: Coalition) -> f64 {
        let pos = partition.position(s).expect("coalition is a block");
        self.values[partition][pos]
    }

    fn demand(&self, s: Coalition, model: ExpectationModel) -> Result<f64> {
        let candidates = candidate_partitions(self.scenario, s, model)?;
        let own: Vec<f64> = candidates.iter().map(|p| self.value(p, s)).collect();
        Ok(match model {
            ExpectationModel::Merging | ExpectationModel::Singleton => own[0],
            ExpectationModel::Cautious => own.iter().copied().fold(f64::INFINITY, f64::min),
            ExpectationModel::Rational => {
                let external: Vec<f64> = candidates
                    .iter()
                    .zip(&own)
                    .map(|(p, v)| self.values[p].iter().sum::<f64>() - v)
                    .collect();
                let best = external.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let tie = 1e-12 * best.abs().max(1.0);
                external
                    .iter()
                    .zip(&own)
                    .filter(|(e, _)| **e >= best - tie)
                    .map(|(_, v)| *v)
                    .fold(f64::INFINITY, f64::min)
            }
        })
    }
}

/// What coalition `S` can guarantee itself when it breaks away, under `model`.
pub fn coalition_demand(scenario: &Scenario, s: Coalition, model: ExpectationModel) -> Result<f64> {
    check_proper(scenario, s)?;
    let cache = UtilityCache::build(
        scenario,
        candidate_partitions(scenario, s, model)?,
        &NeOptions::default(),
    )?;
    cache.demand(s, model)
}

/// Demands of all nonempty proper coalitions (by mask) and `v(K;{K})`.
pub fn coalition_demands(scenario: &Scenario, model: ExpectationModel) -> Result<CoalitionDemands> {
    coalition_demands_with(scenario, model, &NeOptions::default())
}

pub fn coalition_demands_with(
    scenario: &Scenario,
    model: ExpectationModel,
    opts: &NeOptions,
) -> Result<CoalitionDemands> {
    let k = scenario.num_users();
    if k > MAX_CORE_USERS {
        return Err(invalid(format!(
            "core computations are limited to {MAX_CORE_USERS} users"
        )));
    }
    let coalitions: Vec<Coalition> = Coalition::proper_subsets(k).collect();
    let mut needed = vec![Partition::grand(k)];
    for &s in &coalitions {
        needed.extend(candidate_partitions(scenario, s, model)?);
    }
    let cache = UtilityCache::build(scenario, needed, opts)?;
    let entries = coalitions
        .iter()
        .map(|&s| Ok((s, cache.demand(s, model)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(CoalitionDemands {
        num_users: k,
        grand_value: cache.value(&Partition::grand(k), scenario.grand_coalition()),
        entries,
    })
}

/// Columns `lambda_S` then `mu`; rows `sum lambda = 1` then `sum_{S ni i} lambda_S - mu = 0`.
/// The optimum is the least-core epsilon and the row duals are `(epsilon, x)`.
fn least_core_lp<T: LpScalar>(k: usize, entries: &[(Coalition, T)], grand: T) -> Result<Lp<T>> {
    let p = entries.len();
    let mut a = vec![vec![T::zero(); p + 1]; k + 1];
    for (j, (s, _)) in entries.iter().enumerate() {
        a[0][j] = T::one();
        for i in s.members() {
            a[i + 1][j] = T::one();
        }
    }
    for row in a.iter_mut().skip(1) {
        row[p] = -T::one();
    }
    let mut b = vec![T::zero(); k + 1];
    b[0] = T::one();
    let mut c: Vec<T> = entries.iter().map(|(_, v)| v.clone()).collect();
    c.push(-grand);
    Lp::new(a, b, c)
}

/// `max sum lambda_S v_S` over balanced weights; optimum minus `v(K)` is the margin.
fn certificate_lp<T: LpScalar>(k: usize, entries: &[(Coalition, T)]) -> Result<Lp<T>> {
    let mut a = vec![vec![T::zero(); entries.len()]; k];
    for (j, (s, _)) in entries.iter().enumerate() {
        for i in s.members() {
            a[i][j] = T::one();
        }
    }
    Lp::new(a, vec![T::one(); k], entries.iter().map(|(_, v)| v.clone()).collect())
}

fn optimal<T>(outcome: LpOutcome<T>, what: &str) -> Result<LpSolution<T>> {
    match outcome {
        LpOutcome::Optimal(sol) => Ok(sol),
        LpOutcome::Infeasible { .. } => Err(Error::NumericalFailure(format!("{what} LP reported infeasible"))),
        LpOutcome::Unbounded => Err(Error::NumericalFailure(format!("{what} LP reported unbounded"))),
    }
}

fn check_demands(d: &CoalitionDemands) -> Result<()> {
    if d.num_users > MAX_CORE_USERS {
        return Err(invalid(format!(
            "core computations are limited to {MAX_CORE_USERS} users"
        )));
    }
    if !d.grand_value.is_finite() || d.entries.iter().any(|(_, v)| !v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite coalition demand".into()));
    }
    Ok(())
}

/// Least core of a game given by its demands.
pub fn least_core_from_demands(d: &CoalitionDemands) -> Result<LeastCoreResult> {
    check_demands(d)?;
    let k = d.num_users;
    if d.entries.is_empty() {
        // One player: no coalition constraint binds, so every epsilon works.
        return Ok(LeastCoreResult {
            epsilon_star: f64::NEG_INFINITY,
            allocation: vec![d.grand_value; k],
        });
    }
    let sol = optimal(least_core_lp(k, &d.entries, d.grand_value)?.solve()?, "least-core")?;
    let mut x = sol.duals[1..].to_vec();
    // The dual only enforces sum x <= v(K); hand any remainder out evenly.
    let gap = (d.grand_value - x.iter().sum::<f64>()) / k as f64;
    x.iter_mut().for_each(|xi| *xi += gap);
    let epsilon_star = sol.objective;
    let worst = -d.min_slack(&x);
    if worst > epsilon_star + 1e-7 * epsilon_star.abs().max(1.0) {
        return Err(Error::NumericalFailure(format!(
            "least-core allocation violates the relaxed constraints by {:e}",
            worst - epsilon_star
        )));
    }
    Ok(LeastCoreResult {
        epsilon_star,
        allocation: x,
    })
}

fn float_certificate(d: &CoalitionDemands) -> Result<BalancedCertificate> {
    let sol = optimal(certificate_lp(d.num_users, &d.entries)?.solve()?, "certificate")?;
    Ok(BalancedCertificate {
        weights: d
            .entries
            .iter()
            .zip(&sol.x)
            .filter(|(_, w)| **w > 0.0)
            .map(|(&(s, _), &w)| (s, w))
            .collect(),
        margin: sol.objective - d.grand_value,
    })
}

/// Balanced-collection margin in exact arithmetic on utilities rounded to the grid.
fn exact_margin(d: &CoalitionDemands) -> Result<(BigRational, Vec<(Coalition, BigRational)>)> {
    let entries: Vec<(Coalition, BigRational)> = d
        .entries
        .iter()
        .map(|&(s, v)| (s, rational_on_grid(v, EXACT_GRID)))
        .collect();
    let sol = optimal(certificate_lp(d.num_users, &entries)?.solve()?, "exact certificate")?;
    let margin = sol.objective - rational_on_grid(d.grand_value, EXACT_GRID);
    let weights = entries
        .iter()
        .zip(sol.x)
        .filter(|(_, w)| !w.is_zero())
        .map(|(&(s, _), w)| (s, w))
        .collect();
    Ok((margin, weights))
}

/// Core verdict for a game given by its demands. The LP columns follow the
/// order of `d.entries`.
pub fn core_from_demands(d: &CoalitionDemands, tol_lp: f64) -> Result<CoreResult> {
    check_demands(d)?;
    let k = d.num_users;
    if d.entries.is_empty() {
        return Ok(CoreResult {
            verdict: Verdict::Nonempty,
            allocation: Some(vec![d.grand_value; k]),
            certificate: None,
            slack: None,
            epsilon_star: f64::NEG_INFINITY,
            demands: d.clone(),
            exact_checked: false,
        });
    }
    let least = least_core_from_demands(d)?;
    let mut certificate = float_certificate(d)?;
    let mut empty = certificate.margin > tol_lp;
    let exact_checked = k <= EXACT_CHECK_USERS;
    if exact_checked {
        let (margin, weights) = exact_margin(d)?;
        let exact_empty = LpScalar::to_f64(&margin) > tol_lp;
        if exact_empty != empty {
            empty = exact_empty;
            certificate = BalancedCertificate {
                weights: weights.iter().map(|(s, w)| (*s, LpScalar::to_f64(w))).collect(),
                margin: LpScalar::to_f64(&margin),
            };
        }
    }
    if empty {
        certificate.margin = certificate.validate(k, d)?;
        Ok(CoreResult {
            verdict: Verdict::Empty,
            allocation: None,
            certificate: Some(certificate),
            slack: None,
            epsilon_star: least.epsilon_star,
            demands: d.clone(),
            exact_checked,
        })
    } else {
        let slack = d.min_slack(&least.allocation);
        if slack < -tol_lp.max(CERT_TOL) {
            return Err(Error::NumericalFailure(format!(
                "core witness violates a coalition constraint by {:e}",
                -slack
            )));
        }
        Ok(CoreResult {
            verdict: Verdict::Nonempty,
            allocation: Some(least.allocation),
            certificate: None,
            slack: Some(slack),
            epsilon_star: least.epsilon_star,
            demands: d.clone(),
            exact_checked,
        })
    }
}

/// Whether the grand coalition is stable under `model`, with a witness or a certificate.
pub fn check_core(scenario: &Scenario, model: ExpectationModel) -> Result<CoreResult> {
    check_core_with(scenario, model, DEFAULT_TOL_LP, &NeOptions::default())
}

pub fn check_core_with(
    scenario: &Scenario,
    model: ExpectationModel,
    tol_lp: f64,
    opts: &NeOptions,
) -> Result<CoreResult> {
    core_from_demands(&coalition_demands_with(scenario, model, opts)?, tol_lp)
}

/// Smallest uniform relaxation of the coalition constraints that admits an allocation.
pub fn least_core(scenario: &Scenario, model: ExpectationModel) -> Result<LeastCoreResult> {
    least_core_from_demands(&coalition_demands(scenario, model)?)
}

/// Balanced weights proving emptiness, or `None` when the core is nonempty.
pub fn balancedness_certificate(scenario: &Scenario, model: ExpectationModel) -> Result<Option<BalancedCertificate>> {
    Ok(check_core(scenario, model)?.certificate)
}

/// Vertices of the three-user core on the efficiency plane, counterclockwise
/// in the `(x1, x2)` projection, as full allocations `[x1, x2, x3]`.
pub fn core_region_3user(scenario: &Scenario, model: ExpectationModel) -> Result<Vec<[f64; 3]>> {
    if scenario.num_users() != 3 {
        return Err(invalid("the core region is only drawn for three users"));
    }
    region_from_demands(&coalition_demands(scenario, model)?)
}

/// Core polygon of a three-player game from its demands.
pub fn region_from_demands(d: &CoalitionDemands) -> Result<Vec<[f64; 3]>> {
    if d.num_users != 3 {
        return Err(invalid("the core region is only drawn for three users"));
    }
    let v = d.grand_value;
    let demand = |m: &[usize]| {
        d.get(Coalition::from_members(m))
            .ok_or_else(|| invalid("missing coalition demand"))
    };
    // Half-planes a . (x1, x2) <= b.
    let planes = [
        ([-1.0, 0.0], -demand(&[0])?),
        ([0.0, -1.0], -demand(&[1])?),
        ([1.0, 1.0], v - demand(&[2])?),
        ([-1.0, -1.0], -demand(&[0, 1])?),
        ([0.0, 1.0], v - demand(&[0, 2])?),
        ([1.0, 0.0], v - demand(&[1, 2])?),
    ];
    let scale = 1e-9
        * planes
            .iter()
            .map(|(_, b): &([f64; 2], f64)| b.abs())
            .fold(1.0, f64::max);
    let mut points: Vec<[f64; 2]> = Vec::new();
    for i in 0..planes.len() {
        for j in i + 1..planes.len() {
            let ([a1, a2], b1) = planes[i];
            let ([c1, c2], b2) = planes[j];
            let det = a1 * c2 - a2 * c1;
            if det.abs() < 1e-12 {
                continue;
            }
            let p = [(b1 * c2 - a2 * b2) / det, (a1 * b2 - b1 * c1) / det];
            let inside = planes.iter().all(|([a, b], rhs)| a * p[0] + b * p[1] <= rhs + scale);
            if inside
                && !points
                    .iter()
                    .any(|q| (q[0] - p[0]).abs() <= scale && (q[1] - p[1]).abs() <= scale)
            {
                points.push(p);
            }
        }
    }
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / n;
    points.sort_by(|p, q| {
        let ap = (p[1] - cy).atan2(p[0] - cx);
        let aq = (q[1] - cy).atan2(q[0] - cx);
        ap.total_cmp(&aq)
    });
    Ok(points.into_iter().map(|[x1, x2]| [x1, x2, v - x1 - x2]).collect())
}
