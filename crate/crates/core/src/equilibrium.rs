//! Nash equilibria of the game between the coalitions of one partition.
//!
//! With successive decoding, a coalition's rate depends only on coalitions
//! decoded after it, so one backward sweep over the decoding order (last
//! decoded first) yields an exact equilibrium. With single user decoding every
//! coalition sees every other one; the equilibrium is found by damped
//! simultaneous best responses.

use std::collections::{HashMap, VecDeque};

use itertools::Itertools;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::capacity::{best_response, logdet_rate, CovarianceProfile, PerAntennaOptions};
use crate::error::{invalid, Error, NonConvergence, Result};
use crate::linalg::{inverse_pd, received_covariance, symmetrize};
use crate::model::{
    coalition_channel, enumerate_partitions, induced_block_order, Coalition, Partition, PowerConstraint, ReceiverModel,
    Scenario,
};

/// Largest number of blocks for which all decoding orders are enumerated.
pub const MAX_TIMESHARE_BLOCKS: usize = 7;
/// Largest user count for which a time-sharing utility table is built.
pub const MAX_TIMESHARE_USERS: usize = 8;

/// Where iterative solvers start.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum StartPoint {
    #[default]
    Default,
    /// Random feasible covariances drawn from a seeded generator.
    Random(u64),
}

#[derive(Debug, Clone)]
pub struct NeOptions {
    pub start: StartPoint,
    pub solver: PerAntennaOptions,
    /// Weight on the new best response in each simultaneous update.
    pub damping: f64,
    /// Stop once no utility moves by more than this between rounds.
    pub tol: f64,
    pub max_rounds: usize,
}

impl Default for NeOptions {
    fn default() -> Self {
        Self {
            start: StartPoint::Default,
            solver: PerAntennaOptions::default(),
            damping: 0.5,
            tol: 1e-9,
            max_rounds: 10_000,
        }
    }
}

/// Equilibrium covariances and utilities, both aligned with the partition's blocks.
#[derive(Debug, Clone)]
pub struct Equilibrium {
    pub profile: CovarianceProfile,
    pub utilities: Vec<f64>,
    pub rounds: usize,
}

impl Equilibrium {
    /// `sum_n H_n Q_n H_n^T`.
    pub fn aggregate_covariance(&self, scenario: &Scenario, partition: &Partition) -> DMatrix<f64> {
        let m = scenario.rx_antennas();
        let mut acc = DMatrix::zeros(m, m);
        for (q, &s) in self.profile.blocks.iter().zip(partition.blocks()) {
            let h = coalition_channel(scenario, s);
            acc += &h * q * h.transpose();
        }
        acc
    }
}

fn block_channels(scenario: &Scenario, partition: &Partition) -> Vec<DMatrix<f64>> {
    partition
        .blocks()
        .iter()
        .map(|&s| coalition_channel(scenario, s))
        .collect()
}

/// A random covariance of size `n` satisfying `power`.
pub fn random_feasible_covariance<R: Rng>(power: &PowerConstraint, n: usize, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = &a * a.transpose();
    match power {
        PowerConstraint::SumPower(p) => {
            let t = q.trace();
            if t > 0.0 {
                symmetrize(&(q * (p * rng.random_range(0.0..=1.0) / t)))
            } else {
                q
            }
        }
        PowerConstraint::PerAntenna(caps) => {
            let scale: Vec<f64> = (0..n)
                .map(|i| {
                    let d = q[(i, i)];
                    if d > 0.0 {
                        (caps[i] * rng.random_range(0.0..=1.0) / d).sqrt()
                    } else {
                        0.0
                    }
                })
                .collect();
            symmetrize(&DMatrix::from_fn(n, n, |r, c| q[(r, c)] * scale[r] * scale[c]))
        }
    }
}

/// Random feasible covariances for every block of a partition.
pub fn random_feasible_profile<R: Rng>(scenario: &Scenario, partition: &Partition, rng: &mut R) -> CovarianceProfile {
    let blocks = partition
        .blocks()
        .iter()
        .map(|&s| {
            let n = coalition_channel(scenario, s).ncols();
            random_feasible_covariance(&scenario.coalition_power(s), n, rng)
        })
        .collect();
    CovarianceProfile { blocks }
}

fn start_profile(scenario: &Scenario, partition: &Partition, start: StartPoint) -> Option<CovarianceProfile> {
    match start {
        StartPoint::Default => None,
        StartPoint::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Some(random_feasible_profile(scenario, partition, &mut rng))
        }
    }
}

/// Equilibrium under successive decoding with the order induced by the
/// receiver's base order.
pub fn ne_sic(scenario: &Scenario, partition: &Partition) -> Result<Equilibrium> {
    ne_sic_with(scenario, partition, &NeOptions::default())
}

pub fn ne_sic_with(scenario: &Scenario, partition: &Partition, opts: &NeOptions) -> Result<Equilibrium> {
    let ReceiverModel::SicFixed { base_order } = scenario.receiver() else {
        return Err(invalid("ne_sic needs a fixed-order successive decoding receiver"));
    };
    scenario.check_partition(partition)?;
    let order = induced_block_order(partition, base_order);
    ne_sic_in_order(scenario, partition, &order, opts)
}

/// Backward pass for an explicit decoding order over block indices (first decoded first).
pub fn ne_sic_in_order(
    scenario: &Scenario,
    partition: &Partition,
    order: &[usize],
    opts: &NeOptions,
) -> Result<Equilibrium> {
    scenario.check_partition(partition)?;
    if order.len() != partition.len() || !order.iter().copied().sorted().eq(0..partition.len()) {
        return Err(invalid(format!(
            "{order:?} is not an order over the blocks of {partition}"
        )));
    }
    let m = scenario.rx_antennas();
    let n0 = scenario.noise();
    let channels = block_channels(scenario, partition);
    let start = start_profile(scenario, partition, opts.start);
    let mut profile = CovarianceProfile::zeros(scenario, partition);
    let mut utilities = vec![0.0; partition.len()];
    let mut interference = DMatrix::zeros(m, m);
    for &b in order.iter().rev() {
        let h = &channels[b];
        let noise_cov = DMatrix::identity(m, m) * n0 + &interference;
        let mut solver = opts.solver.clone();
        if let Some(start) = &start {
            solver.init = Some(start.blocks[b].clone());
        }
        let power = scenario.coalition_power(partition.blocks()[b]);
        let br = best_response(h, &noise_cov, &power, &solver)?;
        utilities[b] = logdet_rate(n0, h, &br.covariance, &interference)?;
        interference = symmetrize(&(interference + h * &br.covariance * h.transpose()));
        profile.blocks[b] = br.covariance;
    }
    Ok(Equilibrium {
        profile,
        utilities,
        rounds: 1,
    })
}

/// Equilibrium under single user decoding.
pub fn ne_sud(scenario: &Scenario, partition: &Partition) -> Result<Equilibrium> {
    ne_sud_with(scenario, partition, &NeOptions::default())
}

pub fn ne_sud_with(scenario: &Scenario, partition: &Partition, opts: &NeOptions) -> Result<Equilibrium> {
    if !matches!(scenario.receiver(), ReceiverModel::Sud) {
        return Err(invalid("ne_sud needs a single user decoding receiver"));
    }
    scenario.check_partition(partition)?;
    let m = scenario.rx_antennas();
    let n0 = scenario.noise();
    let channels = block_channels(scenario, partition);
    let powers: Vec<PowerConstraint> = partition
        .blocks()
        .iter()
        .map(|&s| scenario.coalition_power(s))
        .collect();
    let mut profile =
        start_profile(scenario, partition, opts.start).unwrap_or_else(|| CovarianceProfile::zeros(scenario, partition));
    let n = partition.len();
    let mut previous: Option<Vec<f64>> = None;
    let mut history: VecDeque<Vec<f64>> = VecDeque::new();
    let mut last_change = f64::INFINITY;

    for round in 0..opts.max_rounds {
        let total = received_covariance(0.0, m, channels.iter().zip(&profile.blocks));
        let mut utilities = Vec::with_capacity(n);
        let mut responses = Vec::with_capacity(n);
        let mut max_gain: f64 = 0.0;
        for b in 0..n {
            let h = &channels[b];
            let q = &profile.blocks[b];
            let others = symmetrize(&(&total - h * q * h.transpose()));
            let u = logdet_rate(n0, h, q, &others)?;
            let noise_cov = DMatrix::identity(m, m) * n0 + &others;
            let mut solver = opts.solver.clone();
            solver.init = Some(q.clone());
            let br = best_response(h, &noise_cov, &powers[b], &solver)?;
            max_gain = max_gain.max(br.rate - u);
            utilities.push(u);
            responses.push(br.covariance);
        }
        if let Some(prev) = &previous {
            last_change = prev
                .iter()
                .zip(&utilities)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if last_change < opts.tol && max_gain < 10.0 * opts.tol {
                return Ok(Equilibrium {
                    profile,
                    utilities,
                    rounds: round,
                });
            }
        }
        if n == 1 {
            // One coalition: its best response is the equilibrium.
            profile.blocks[0] = responses.pop().unwrap();
        } else {
            for (q, br) in profile.blocks.iter_mut().zip(responses) {
                *q = symmetrize(&(&*q * (1.0 - opts.damping) + br * opts.damping));
            }
        }
        history.push_back(utilities.clone());
        if history.len() > 20 {
            history.pop_front();
        }
        previous = Some(utilities);
    }
    let oscillation = (0..n)
        .map(|b| {
            let (lo, hi) = history
                .iter()
                .map(|u| u[b])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
            hi - lo
        })
        .collect();
    Err(Error::NonConvergence(Box::new(NonConvergence {
        context: format!("single user decoding best response on {partition}"),
        iterations: opts.max_rounds,
        residual: last_change,
        objective: previous.unwrap_or_default(),
        iterate: profile.blocks,
        oscillation,
    })))
}

/// Lexicographic rank order of all permutations of `n` blocks.
fn decoding_orders(n: usize) -> Vec<Vec<usize>> {
    (0..n).permutations(n).collect()
}

/// Time-shared successive decoding with the receiver's weights (uniform by default).
pub fn ne_timeshare(scenario: &Scenario, partition: &Partition) -> Result<Vec<f64>> {
    ne_timeshare_with(scenario, partition, &NeOptions::default())
}

pub fn ne_timeshare_with(scenario: &Scenario, partition: &Partition, opts: &NeOptions) -> Result<Vec<f64>> {
    let ReceiverModel::SicTimeShare { weights } = scenario.receiver() else {
        return Err(invalid("ne_timeshare needs a time-sharing receiver"));
    };
    timeshare_average(scenario, partition, weights.as_deref(), opts)
}

/// Weighted average of fixed-order equilibrium utilities over every decoding
/// order of the partition's blocks. `weights[i]` applies to the `i`-th order in
/// lexicographic rank; `None` means uniform.
pub fn ne_timeshare_weighted(scenario: &Scenario, partition: &Partition, weights: Option<&[f64]>) -> Result<Vec<f64>> {
    timeshare_average(scenario, partition, weights, &NeOptions::default())
}

fn timeshare_average(
    scenario: &Scenario,
    partition: &Partition,
    weights: Option<&[f64]>,
    opts: &NeOptions,
) -> Result<Vec<f64>> {
    scenario.check_partition(partition)?;
    let n = partition.len();
    if n > MAX_TIMESHARE_BLOCKS {
        return Err(invalid(format!(
            "time sharing over {n} blocks needs {n}! orders (limit {MAX_TIMESHARE_BLOCKS} blocks)"
        )));
    }
    let orders = decoding_orders(n);
    let uniform = 1.0 / orders.len() as f64;
    if let Some(w) = weights {
        if w.len() != orders.len() {
            return Err(invalid(format!(
                "{} time-sharing weights given but {partition} has {} decoding orders",
                w.len(),
                orders.len()
            )));
        }
    }
    let mut avg = vec![0.0; n];
    for (i, order) in orders.iter().enumerate() {
        let w = weights.map_or(uniform, |w| w[i]);
        if w == 0.0 {
            continue;
        }
        let eq = ne_sic_in_order(scenario, partition, order, opts)?;
        for (a, u) in avg.iter_mut().zip(&eq.utilities) {
            *a += w * u;
        }
    }
    Ok(avg)
}

/// Equilibrium utilities of a partition under the scenario's receiver.
pub fn partition_utilities(scenario: &Scenario, partition: &Partition) -> Result<Vec<f64>> {
    partition_utilities_with(scenario, partition, &NeOptions::default())
}

pub fn partition_utilities_with(scenario: &Scenario, partition: &Partition, opts: &NeOptions) -> Result<Vec<f64>> {
    let result = match scenario.receiver() {
        ReceiverModel::Sud => ne_sud_with(scenario, partition, opts).map(|e| e.utilities),
        ReceiverModel::SicFixed { .. } => ne_sic_with(scenario, partition, opts).map(|e| e.utilities),
        ReceiverModel::SicTimeShare { .. } => ne_timeshare_with(scenario, partition, opts),
    };
    result.map_err(|e| e.in_partition(partition))
}

/// Per-block values `C_n` of the diagonal strict concavity test and their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct DscReport {
    pub per_block: Vec<f64>,
    pub total: f64,
}

/// `C_n = tr[(A_n - B_n)(grad_n v_n(B) - grad_n v_n(A))]` for two feasible profiles.
pub fn dsc_diagnostic(
    scenario: &Scenario,
    partition: &Partition,
    a: &CovarianceProfile,
    b: &CovarianceProfile,
) -> Result<DscReport> {
    scenario.check_partition(partition)?;
    a.validate(scenario, partition)?;
    b.validate(scenario, partition)?;
    let channels = block_channels(scenario, partition);
    // slot[n]: position of block n in the decoding order; all zero for SUD
    // so every block sees every other one.
    let slot: Vec<usize> = match scenario.receiver() {
        ReceiverModel::Sud => vec![0; partition.len()],
        ReceiverModel::SicFixed { base_order } => {
            let order = induced_block_order(partition, base_order);
            let mut slot = vec![0; order.len()];
            for (pos, &blk) in order.iter().enumerate() {
                slot[blk] = pos;
            }
            slot
        }
        ReceiverModel::SicTimeShare { .. } => {
            return Err(invalid("the DSC test is defined for SUD or a fixed decoding order"))
        }
    };
    let gradients = |profile: &CovarianceProfile| -> Result<Vec<DMatrix<f64>>> {
        (0..partition.len())
            .map(|blk| {
                let seen = (0..partition.len())
                    .filter(|&j| slot[j] >= slot[blk])
                    .map(|j| (&channels[j], &profile.blocks[j]));
                let cov = received_covariance(scenario.noise(), scenario.rx_antennas(), seen);
                let inv = inverse_pd(&cov)?;
                Ok(channels[blk].transpose() * inv * &channels[blk])
            })
            .collect()
    };
    let ga = gradients(a)?;
    let gb = gradients(b)?;
    let per_block: Vec<f64> = (0..partition.len())
        .map(|n| (&a.blocks[n] - &b.blocks[n]).dot(&(&gb[n] - &ga[n])))
        .collect();
    let total = per_block.iter().sum();
    Ok(DscReport { per_block, total })
}

/// `v(S;T)` for every coalition of every partition.
#[derive(Debug, Clone)]
pub struct UtilityTable {
    fingerprint: String,
    partitions: Vec<Partition>,
    utilities: Vec<Vec<f64>>,
    index: HashMap<Partition, usize>,
}

impl UtilityTable {
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn partitions(&self) -> &[Partition] {
        &self.partitions
    }

    /// Utilities of a partition, aligned with its blocks.
    pub fn utilities(&self, partition: &Partition) -> Option<&[f64]> {
        self.index.get(partition).map(|&i| self.utilities[i].as_slice())
    }

    pub fn get(&self, partition: &Partition, s: Coalition) -> Option<f64> {
        let pos = partition.position(s)?;
        self.utilities(partition).map(|u| u[pos])
    }

    /// `(partition, coalition, utility)` in canonical order.
    pub fn entries(&self) -> impl Iterator<Item = (&Partition, Coalition, f64)> {
        self.partitions
            .iter()
            .zip(&self.utilities)
            .flat_map(|(p, u)| p.blocks().iter().zip(u).map(move |(&s, &v)| (p, s, v)))
    }

    pub fn len(&self) -> usize {
        self.utilities.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Equilibrium utilities for every partition, evaluated in parallel and stored
/// in canonical partition order.
pub fn utility_table(scenario: &Scenario) -> Result<UtilityTable> {
    utility_table_with(scenario, &NeOptions::default())
}

pub fn utility_table_with(scenario: &Scenario, opts: &NeOptions) -> Result<UtilityTable> {
    let k = scenario.num_users();
    if matches!(scenario.receiver(), ReceiverModel::SicTimeShare { .. }) && k > MAX_TIMESHARE_USERS {
        return Err(invalid(format!(
            "time-sharing utility tables are limited to {MAX_TIMESHARE_USERS} users"
        )));
    }
    let partitions = enumerate_partitions(k)?;
    let utilities = partitions
        .par_iter()
        .map(|p| partition_utilities_with(scenario, p, opts))
        .collect::<Result<Vec<_>>>()?;
    let index = partitions.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();
    Ok(UtilityTable {
        fingerprint: scenario_fingerprint(scenario),
        partitions,
        utilities,
        index,
    })
}

/// SHA-256 over a canonical byte encoding of the scenario, hex encoded.
pub fn scenario_fingerprint(scenario: &Scenario) -> String {
    let mut hasher = Sha256::new();
    let mut put = |x: u64| hasher.update(x.to_le_bytes());
    put(scenario.num_users() as u64);
    put(scenario.rx_antennas() as u64);
    put(scenario.noise().to_bits());
    for user in scenario.users() {
        put(user.antennas() as u64);
        for g in user.channel.iter() {
            put(g.to_bits());
        }
        match &user.power {
            PowerConstraint::SumPower(p) => {
                put(0);
                put(p.to_bits());
            }
            PowerConstraint::PerAntenna(caps) => {
                put(1);
                caps.iter().for_each(|c| put(c.to_bits()));
            }
        }
    }
    match scenario.receiver() {
        ReceiverModel::Sud => put(0),
        ReceiverModel::SicFixed { base_order } => {
            put(1);
            base_order.iter().for_each(|&u| put(u as u64));
        }
        ReceiverModel::SicTimeShare { weights } => {
            put(2);
            if let Some(w) = weights {
                put(w.len() as u64);
                w.iter().for_each(|x| put(x.to_bits()));
            }
        }
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
