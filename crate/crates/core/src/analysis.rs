//! Property checks and parameter sweeps built on the equilibrium and core
//! machinery: super-additivity, externality signs, the empty/nonempty core
//! boundary over SNR, and the high-SNR approximation ratio.

use std::collections::HashMap;
use std::fmt;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::capacity::timeshare_highsnr_utility;
use crate::cores::{check_core, ExpectationModel, Verdict};
use crate::equilibrium::{ne_timeshare, partition_utilities};
use crate::error::{invalid, Error, Result};
use crate::model::{enumerate_partitions, Coalition, Partition, PowerConstraint, ReceiverModel, Scenario, UserSpec};

/// Tolerance for super-additivity and cohesiveness.
pub const PROPERTY_TOL: f64 = 1e-8;
/// Changes smaller than this are not counted as externalities.
pub const EXTERNALITY_TOL: f64 = 1e-9;
/// Resolution of the SNR bisection, in dB.
pub const BOUNDARY_RESOLUTION_DB: f64 = 0.01;
/// Largest user count for which cohesiveness is checked on every partition.
pub const COHESION_ENUM_USERS: usize = 7;

pub fn snr_db_to_noise(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

pub fn noise_to_snr_db(noise: f64) -> f64 {
    -10.0 * noise.log10()
}

/// Receiver family without user-specific data; instantiated per user count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReceiverKind {
    Sud,
    /// Identity base order.
    SicFixed,
    /// Uniform weights.
    SicTimeShare,
}

impl ReceiverKind {
    pub fn build(self, k: usize) -> ReceiverModel {
        match self {
            ReceiverKind::Sud => ReceiverModel::Sud,
            ReceiverKind::SicFixed => ReceiverModel::SicFixed {
                base_order: (0..k).collect(),
            },
            ReceiverKind::SicTimeShare => ReceiverModel::SicTimeShare { weights: None },
        }
    }
}

impl fmt::Display for ReceiverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReceiverKind::Sud => "sud",
            ReceiverKind::SicFixed => "sic_fixed",
            ReceiverKind::SicTimeShare => "sic_timeshare",
        })
    }
}

/// Shape of randomly drawn scenarios: Gaussian channel entries, powers in [0.5, 2].
#[derive(Debug, Clone)]
pub struct RandomScenarioSpec {
    pub users: usize,
    pub rx_antennas: usize,
    pub tx_antennas: usize,
    pub noise: f64,
    pub receiver: ReceiverKind,
    pub per_antenna: bool,
}

pub fn random_scenario<R: Rng>(spec: &RandomScenarioSpec, rng: &mut R) -> Result<Scenario> {
    let users = (0..spec.users)
        .map(|_| {
            let h = DMatrix::from_fn(spec.rx_antennas, spec.tx_antennas, |_, _| {
                rng.sample::<f64, _>(StandardNormal)
            });
            let power = if spec.per_antenna {
                PowerConstraint::PerAntenna((0..spec.tx_antennas).map(|_| rng.random_range(0.5..2.0)).collect())
            } else {
                PowerConstraint::SumPower(rng.random_range(0.5..2.0))
            };
            UserSpec::new(h, power)
        })
        .collect::<Result<Vec<_>>>()?;
    Scenario::new(users, spec.rx_antennas, spec.noise, spec.receiver.build(spec.users))
}

/// A uniformly labelled random partition (labels drawn per user, then canonicalized).
pub fn random_partition<R: Rng>(k: usize, rng: &mut R) -> Partition {
    let mut groups = vec![0u32; k];
    for i in 0..k {
        groups[rng.random_range(0..k)] |= 1 << i;
    }
    let blocks = groups
        .into_iter()
        .filter(|&m| m != 0)
        .map(Coalition::from_mask)
        .collect();
    Partition::new(blocks, k).expect("labels cover every user once")
}

struct Memo<'a> {
    scenario: &'a Scenario,
    values: HashMap<Partition, Vec<f64>>,
}

impl<'a> Memo<'a> {
    fn new(scenario: &'a Scenario) -> Self {
        Self {
            scenario,
            values: HashMap::new(),
        }
    }

    fn get(&mut self, p: &Partition) -> Result<&[f64]> {
        if !self.values.contains_key(p) {
            let u = partition_utilities(self.scenario, p)?;
            self.values.insert(p.clone(), u);
        }
        Ok(&self.values[p])
    }
}

fn is_nonconvergence(e: &Error) -> bool {
    match e {
        Error::NonConvergence(_) => true,
        Error::InPartition { source, .. } => is_nonconvergence(source),
        _ => false,
    }
}

/// One sampled merge: `merged` forms in `after` from blocks of `before`.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeWitness {
    pub before: Partition,
    pub after: Partition,
    pub merged: Coalition,
    pub parts_sum: f64,
    pub merged_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohesionWitness {
    pub partition: Partition,
    pub total: f64,
    pub grand_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperadditivityReport {
    pub trials: usize,
    /// Trials abandoned because an equilibrium solver did not converge.
    pub skipped: usize,
    /// Smallest `merged_value - parts_sum` seen.
    pub worst_gap: f64,
    pub violations: Vec<MergeWitness>,
    pub cohesion_checked: usize,
    pub cohesion_violations: Vec<CohesionWitness>,
}

impl SuperadditivityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.cohesion_violations.is_empty()
    }
}

/// Samples random merges and checks that merging never loses utility, then
/// checks that no partition beats the grand coalition.
pub fn verify_superadditivity(scenario: &Scenario, trials: usize, seed: u64) -> Result<SuperadditivityReport> {
    if trials == 0 {
        return Err(invalid("at least one trial is needed"));
    }
    let k = scenario.num_users();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut memo = Memo::new(scenario);
    let mut report = SuperadditivityReport {
        trials,
        skipped: 0,
        worst_gap: f64::INFINITY,
        violations: Vec::new(),
        cohesion_checked: 0,
        cohesion_violations: Vec::new(),
    };
    if k < 2 {
        return Ok(report);
    }
    let mut sampled = Vec::new();
    for _ in 0..trials {
        let before = loop {
            let p = random_partition(k, &mut rng);
            if p.len() >= 2 {
                break p;
            }
        };
        let r = rng.random_range(2..=before.len());
        let mut idx = sample(&mut rng, before.len(), r).into_vec();
        idx.sort_unstable();
        let after = before.merge(&idx)?;
        let merged = idx
            .iter()
            .fold(Coalition::from_mask(0), |acc, &i| acc.union(before.blocks()[i]));
        let parts = match memo.get(&before) {
            Ok(u) => idx.iter().map(|&i| u[i]).sum::<f64>(),
            Err(e) if is_nonconvergence(&e) => {
                report.skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let merged_value = match memo.get(&after) {
            Ok(u) => u[after.position(merged).expect("merged block present")],
            Err(e) if is_nonconvergence(&e) => {
                report.skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let gap = merged_value - parts;
        report.worst_gap = report.worst_gap.min(gap);
        if gap < -PROPERTY_TOL {
            report.violations.push(MergeWitness {
                before: before.clone(),
                after: after.clone(),
                merged,
                parts_sum: parts,
                merged_value,
            });
        }
        sampled.push(before);
        sampled.push(after);
    }

    let grand = memo.get(&Partition::grand(k))?[0];
    let partitions = if k <= COHESION_ENUM_USERS {
        enumerate_partitions(k)?
    } else {
        sampled
    };
    let totals: Vec<(Partition, Result<f64>)> = partitions
        .into_par_iter()
        .map(|p| {
            let total = memo
                .values
                .get(&p)
                .map(|u| Ok(u.iter().sum()))
                .unwrap_or_else(|| partition_utilities(scenario, &p).map(|u| u.iter().sum()));
            (p, total)
        })
        .collect();
    for (partition, total) in totals {
        let total = match total {
            Ok(t) => t,
            Err(e) if is_nonconvergence(&e) => {
                report.skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        report.cohesion_checked += 1;
        if total > grand + PROPERTY_TOL {
            report.cohesion_violations.push(CohesionWitness {
                partition,
                total,
                grand_value: grand,
            });
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExternalityClass {
    Negative,
    Positive,
    Mixed,
    /// No utility moved by more than the tolerance.
    Neutral,
}

impl fmt::Display for ExternalityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExternalityClass::Negative => "negative",
            ExternalityClass::Positive => "positive",
            ExternalityClass::Mixed => "mixed",
            ExternalityClass::Neutral => "neutral",
        })
    }
}

/// Utility of an outside coalition before and after two other blocks merge.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalityWitness {
    pub before: Partition,
    pub after: Partition,
    pub coalition: Coalition,
    pub value_before: f64,
    pub value_after: f64,
}

impl ExternalityWitness {
    pub fn change(&self) -> f64 {
        self.value_after - self.value_before
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalityVerdict {
    pub classification: ExternalityClass,
    /// Every comparison whose change exceeded the tolerance.
    pub witnesses: Vec<ExternalityWitness>,
    pub comparisons: usize,
    pub skipped: usize,
}

/// `(v(S;before), v(S;after))` for a coalition that is a block of both partitions.
pub fn externality_witness(
    scenario: &Scenario,
    before: &Partition,
    after: &Partition,
    s: Coalition,
) -> Result<ExternalityWitness> {
    let pb = before
        .position(s)
        .ok_or_else(|| invalid(format!("{s} is not a block of {before}")))?;
    let pa = after
        .position(s)
        .ok_or_else(|| invalid(format!("{s} is not a block of {after}")))?;
    Ok(ExternalityWitness {
        before: before.clone(),
        after: after.clone(),
        coalition: s,
        value_before: partition_utilities(scenario, before)?[pb],
        value_after: partition_utilities(scenario, after)?[pa],
    })
}

/// Samples pairwise merges and records how every other coalition's utility moves.
pub fn classify_externalities(scenario: &Scenario, trials: usize, seed: u64) -> Result<ExternalityVerdict> {
    if trials == 0 {
        return Err(invalid("at least one trial is needed"));
    }
    let k = scenario.num_users();
    let mut verdict = ExternalityVerdict {
        classification: ExternalityClass::Neutral,
        witnesses: Vec::new(),
        comparisons: 0,
        skipped: 0,
    };
    if k < 3 {
        return Ok(verdict);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut memo = Memo::new(scenario);
    for _ in 0..trials {
        let before = loop {
            let p = random_partition(k, &mut rng);
            if p.len() >= 3 {
                break p;
            }
        };
        let mut pair = sample(&mut rng, before.len(), 2).into_vec();
        pair.sort_unstable();
        let after = before.merge(&pair)?;
        let (ub, ua) = match (
            memo.get(&before).map(<[f64]>::to_vec),
            memo.get(&after).map(<[f64]>::to_vec),
        ) {
            (Ok(b), Ok(a)) => (b, a),
            (Err(e), _) | (_, Err(e)) if is_nonconvergence(&e) => {
                verdict.skipped += 1;
                continue;
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        for (i, &s) in before.blocks().iter().enumerate() {
            if pair.contains(&i) {
                continue;
            }
            let j = after.position(s).expect("untouched block survives");
            verdict.comparisons += 1;
            if (ua[j] - ub[i]).abs() > EXTERNALITY_TOL {
                verdict.witnesses.push(ExternalityWitness {
                    before: before.clone(),
                    after: after.clone(),
                    coalition: s,
                    value_before: ub[i],
                    value_after: ua[j],
                });
            }
        }
    }
    let neg = verdict.witnesses.iter().any(|w| w.change() < 0.0);
    let pos = verdict.witnesses.iter().any(|w| w.change() > 0.0);
    verdict.classification = match (neg, pos) {
        (true, true) => ExternalityClass::Mixed,
        (true, false) => ExternalityClass::Negative,
        (false, true) => ExternalityClass::Positive,
        (false, false) => ExternalityClass::Neutral,
    };
    Ok(verdict)
}

/// User counts and SNR grid for the symmetric template (unit gains, unit powers).
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub k_values: Vec<usize>,
    /// SNR in dB, defined as `1/N0`; strictly increasing.
    pub snr_db: Vec<f64>,
    pub receiver: ReceiverKind,
    /// Recorded for reproducibility; the symmetric template draws nothing.
    pub seed: u64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.snr_db.is_empty() || self.k_values.is_empty() {
            return Err(invalid("sweep needs at least one user count and one SNR"));
        }
        if self.snr_db.windows(2).any(|w| !(w[0] < w[1])) || self.snr_db.iter().any(|x| !x.is_finite()) {
            return Err(invalid("SNR grid must be finite and strictly increasing"));
        }
        if self.k_values.iter().any(|&k| k < 1) {
            return Err(invalid("user counts must be positive"));
        }
        Ok(())
    }
}

/// Symmetric scenario at the given SNR.
pub fn symmetric_at(k: usize, snr_db: f64, receiver: ReceiverKind) -> Result<Scenario> {
    Scenario::symmetric(k, snr_db_to_noise(snr_db), receiver.build(k))
}

pub fn core_verdict_at(k: usize, snr_db: f64, receiver: ReceiverKind, model: ExpectationModel) -> Result<Verdict> {
    Ok(check_core(&symmetric_at(k, snr_db, receiver)?, model)?.verdict)
}

/// A change of verdict between two SNRs, narrowed by bisection.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub lower_db: f64,
    pub upper_db: f64,
    pub below: Verdict,
    pub above: Verdict,
}

impl Transition {
    pub fn threshold_db(&self) -> f64 {
        0.5 * (self.lower_db + self.upper_db)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryReport {
    pub k: usize,
    /// Verdict at every grid point.
    pub grid: Vec<(f64, Verdict)>,
    pub transitions: Vec<Transition>,
    /// Nonempty below, empty above, at most one change.
    pub monotone: bool,
}

impl BoundaryReport {
    /// The single expected threshold, if there is exactly one transition.
    pub fn threshold_db(&self) -> Option<f64> {
        match self.transitions.as_slice() {
            [t] => Some(t.threshold_db()),
            _ => None,
        }
    }
}

/// For every user count, locates where the core verdict changes along the SNR grid.
pub fn snr_boundary(spec: &SweepSpec, model: ExpectationModel) -> Result<Vec<BoundaryReport>> {
    spec.validate()?;
    spec.k_values
        .iter()
        .map(|&k| {
            let verdicts = spec
                .snr_db
                .par_iter()
                .map(|&snr| core_verdict_at(k, snr, spec.receiver, model))
                .collect::<Result<Vec<_>>>()?;
            let grid: Vec<(f64, Verdict)> = spec.snr_db.iter().copied().zip(verdicts).collect();
            let mut transitions = Vec::new();
            for w in grid.windows(2) {
                let ((mut lo, below), (mut hi, above)) = (w[0], w[1]);
                if below == above {
                    continue;
                }
                while hi - lo > BOUNDARY_RESOLUTION_DB {
                    let mid = 0.5 * (lo + hi);
                    if core_verdict_at(k, mid, spec.receiver, model)? == below {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                transitions.push(Transition {
                    lower_db: lo,
                    upper_db: hi,
                    below,
                    above,
                });
            }
            let monotone = transitions.len() <= 1
                && transitions
                    .iter()
                    .all(|t| t.below == Verdict::Nonempty && t.above == Verdict::Empty);
            Ok(BoundaryReport {
                k,
                grid,
                transitions,
                monotone,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioPoint {
    pub snr_db: f64,
    /// Size of the representative coalition `{1..size}`, the rest as singletons.
    pub size: usize,
    pub approx: f64,
    pub exact: f64,
    pub ratio: f64,
}

/// High-SNR approximation over exact time-shared utility, per coalition size and SNR.
///
/// For each size `s` the partition is `{1..s}` plus singletons, and the ratio
/// is taken for the coalition `{1..s}`.
pub fn approx_ratio(scenario: &Scenario, snr_list: &[f64]) -> Result<Vec<RatioPoint>> {
    if !matches!(scenario.receiver(), ReceiverModel::SicTimeShare { .. }) {
        return Err(invalid("the approximation ratio needs a time-sharing receiver"));
    }
    let k = scenario.num_users();
    let jobs: Vec<(f64, usize)> = snr_list
        .iter()
        .flat_map(|&snr| (1..=k).map(move |s| (snr, s)))
        .collect();
    jobs.par_iter()
        .map(|&(snr_db, size)| {
            let sc = scenario.with_noise(snr_db_to_noise(snr_db))?;
            let s = Coalition::from_members(&(0..size).collect::<Vec<_>>());
            let mut blocks = vec![s];
            blocks.extend((size..k).map(Coalition::singleton));
            let p = Partition::new(blocks, k)?;
            let exact = ne_timeshare(&sc, &p)?[p.position(s).expect("block present")];
            let approx = timeshare_highsnr_utility(&sc, s)?;
            Ok(RatioPoint {
                snr_db,
                size,
                approx,
                exact,
                ratio: approx / exact,
            })
        })
        .collect()
}

/// Consecutive grid points above `from_db` where the ratio moves away from 1.
pub fn ratio_monotonicity_violations(points: &[RatioPoint], from_db: f64) -> Vec<(RatioPoint, RatioPoint)> {
    let mut out = Vec::new();
    let max_size = points.iter().map(|p| p.size).max().unwrap_or(0);
    for size in 1..=max_size {
        let mut series: Vec<&RatioPoint> = points.iter().filter(|p| p.size == size && p.snr_db > from_db).collect();
        series.sort_by(|a, b| a.snr_db.total_cmp(&b.snr_db));
        for w in series.windows(2) {
            if (w[1].ratio - 1.0).abs() > (w[0].ratio - 1.0).abs() + 1e-12 {
                out.push((w[0].clone(), w[1].clone()));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn random_partitions_are_valid_and_varied() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut sizes = std::collections::BTreeSet::new();
        for _ in 0..200 {
            let p = random_partition(5, &mut rng);
            sizes.insert(p.len());
        }
        assert_eq!(sizes.into_iter().collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn two_user_superadditivity() {
        let sc = Scenario::symmetric(2, 1.0, ReceiverKind::SicFixed.build(2)).unwrap();
        let r = verify_superadditivity(&sc, 5, 0).unwrap();
        assert!(r.passed());
        // ln 5 - (ln 1.5 + ln 2)
        assert_abs_diff_eq!(r.worst_gap, (5f64 / 3.0).ln(), epsilon = 1e-12);
        assert_eq!(r.cohesion_checked, 2);
    }

    #[test]
    fn single_antenna_externalities_negative() {
        let sc = Scenario::symmetric(4, 0.5, ReceiverKind::SicFixed.build(4)).unwrap();
        let v = classify_externalities(&sc, 40, 9).unwrap();
        assert_eq!(v.classification, ExternalityClass::Negative);
        assert!(v.witnesses.iter().all(|w| w.change() < 0.0));
    }

    #[test]
    fn boundary_for_four_users() {
        let spec = SweepSpec {
            k_values: vec![4],
            snr_db: vec![-30.0, -10.0, 0.0],
            receiver: ReceiverKind::SicFixed,
            seed: 0,
        };
        let r = &snr_boundary(&spec, ExpectationModel::Rational).unwrap()[0];
        assert_eq!(r.grid[0].1, Verdict::Nonempty);
        assert_eq!(r.grid[2].1, Verdict::Empty);
        assert!(r.monotone);
        let t = &r.transitions[0];
        assert!(t.upper_db - t.lower_db <= BOUNDARY_RESOLUTION_DB);
        let th = r.threshold_db().unwrap();
        assert_eq!(
            core_verdict_at(4, th - 0.01, ReceiverKind::SicFixed, ExpectationModel::Rational).unwrap(),
            Verdict::Nonempty
        );
        assert_eq!(
            core_verdict_at(4, th + 0.01, ReceiverKind::SicFixed, ExpectationModel::Rational).unwrap(),
            Verdict::Empty
        );
    }

    #[test]
    fn sweep_spec_validation() {
        let spec = SweepSpec {
            k_values: vec![3],
            snr_db: vec![0.0, 0.0],
            receiver: ReceiverKind::Sud,
            seed: 0,
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn grand_coalition_ratio_is_one() {
        let sc = Scenario::symmetric(3, 1.0, ReceiverKind::SicTimeShare.build(3)).unwrap();
        let pts = approx_ratio(&sc, &[-20.0, 0.0, 30.0]).unwrap();
        for p in pts.iter().filter(|p| p.size == 3) {
            assert_abs_diff_eq!(p.ratio, 1.0, epsilon = 1e-12);
        }
        assert!(approx_ratio(&sc.with_receiver(ReceiverModel::Sud).unwrap(), &[0.0]).is_err());
    }

    #[test]
    fn snr_conversion() {
        assert_abs_diff_eq!(snr_db_to_noise(30.0), 1e-3, epsilon = 1e-15);
        assert_abs_diff_eq!(noise_to_snr_db(1e4), -40.0, epsilon = 1e-12);
    }
}
