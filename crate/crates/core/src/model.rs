//! Users, receivers, coalitions and partitions of a multiple access channel game.
//!
//! Users are indexed `0..K` throughout the library. Display impls print the
//! 1-based ids used in scenario files, so `{0, 2}` shows as `{1,3}`.

use std::fmt;

use nalgebra::DMatrix;

use crate::error::{invalid, Result};

/// Largest player count accepted by partition enumeration.
pub const MAX_USERS: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub enum PowerConstraint {
    /// Total transmit power over all antennas of the user.
    SumPower(f64),
    /// One cap per transmit antenna.
    PerAntenna(Vec<f64>),
}

impl PowerConstraint {
    pub fn total(&self) -> f64 {
        match self {
            PowerConstraint::SumPower(p) => *p,
            PowerConstraint::PerAntenna(caps) => caps.iter().sum(),
        }
    }

    pub fn mode(&self) -> PowerMode {
        match self {
            PowerConstraint::SumPower(_) => PowerMode::SumPower,
            PowerConstraint::PerAntenna(_) => PowerMode::PerAntenna,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowerMode {
    SumPower,
    PerAntenna,
}

/// One transmitter: its channel `G_k` (rx antennas x tx antennas) and power budget.
#[derive(Debug, Clone, PartialEq)]
pub struct UserSpec {
    pub channel: DMatrix<f64>,
    pub power: PowerConstraint,
}

impl UserSpec {
    pub fn new(channel: DMatrix<f64>, power: PowerConstraint) -> Result<Self> {
        if channel.ncols() == 0 || channel.nrows() == 0 {
            return Err(invalid("channel matrix must be nonempty"));
        }
        if channel.iter().any(|g| !g.is_finite()) {
            return Err(invalid("channel entries must be finite"));
        }
        match &power {
            PowerConstraint::SumPower(p) => {
                if !(p.is_finite() && *p >= 0.0) {
                    return Err(invalid(format!("sum power {p} must be finite and nonnegative")));
                }
            }
            PowerConstraint::PerAntenna(caps) => {
                if caps.len() != channel.ncols() {
                    return Err(invalid(format!(
                        "per-antenna vector has length {} but the user has {} antennas",
                        caps.len(),
                        channel.ncols()
                    )));
                }
                if caps.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                    return Err(invalid("per-antenna powers must be finite and nonnegative"));
                }
            }
        }
        Ok(Self { channel, power })
    }

    /// Single-antenna user seen by `channel.len()` receive antennas.
    pub fn single_antenna(channel: &[f64], power: f64) -> Result<Self> {
        Self::new(
            DMatrix::from_column_slice(channel.len(), 1, channel),
            PowerConstraint::SumPower(power),
        )
    }

    pub fn antennas(&self) -> usize {
        self.channel.ncols()
    }
}

/// Decoding strategy of the receiver.
#[derive(Debug, Clone, PartialEq)]
pub enum ReceiverModel {
    /// Single user decoding: every coalition is decoded treating all others as noise.
    Sud,
    /// Successive interference cancellation with a fixed order over users
    /// (`base_order[0]` decoded first).
    SicFixed { base_order: Vec<usize> },
    /// Time sharing between all decoding orders of the current partition.
    /// `None` means uniform weights. Explicit weights are indexed by the
    /// lexicographic rank of the order over the partition's blocks and only
    /// apply to partitions with exactly `weights.len()` orders.
    SicTimeShare { weights: Option<Vec<f64>> },
}

/// A complete game instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    users: Vec<UserSpec>,
    rx_antennas: usize,
    noise: f64,
    receiver: ReceiverModel,
}

impl Scenario {
    pub fn new(users: Vec<UserSpec>, rx_antennas: usize, noise: f64, receiver: ReceiverModel) -> Result<Self> {
        if users.is_empty() {
            return Err(invalid("scenario needs at least one user"));
        }
        if users.len() > MAX_USERS {
            return Err(invalid(format!("at most {MAX_USERS} users are supported")));
        }
        if rx_antennas == 0 {
            return Err(invalid("receiver needs at least one antenna"));
        }
        if !(noise.is_finite() && noise > 0.0) {
            return Err(invalid(format!("noise level {noise} must be positive")));
        }
        for (k, user) in users.iter().enumerate() {
            if user.channel.nrows() != rx_antennas {
                return Err(invalid(format!(
                    "user {} channel has {} rows, expected {rx_antennas}",
                    k + 1,
                    user.channel.nrows()
                )));
            }
        }
        let mode = users[0].power.mode();
        if users.iter().any(|u| u.power.mode() != mode) {
            return Err(invalid("all users must share one power-constraint mode"));
        }
        validate_receiver(&receiver, users.len())?;
        Ok(Self {
            users,
            rx_antennas,
            noise,
            receiver,
        })
    }

    /// `k` single-antenna users with unit gain and unit power at a single-antenna receiver.
    pub fn symmetric(k: usize, noise: f64, receiver: ReceiverModel) -> Result<Self> {
        let users = (0..k)
            .map(|_| UserSpec::single_antenna(&[1.0], 1.0))
            .collect::<Result<Vec<_>>>()?;
        Self::new(users, 1, noise, receiver)
    }

    pub fn users(&self) -> &[UserSpec] {
        &self.users
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn rx_antennas(&self) -> usize {
        self.rx_antennas
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn receiver(&self) -> &ReceiverModel {
        &self.receiver
    }

    pub fn power_mode(&self) -> PowerMode {
        self.users[0].power.mode()
    }

    pub fn grand_coalition(&self) -> Coalition {
        Coalition::grand(self.num_users())
    }

    pub fn with_noise(&self, noise: f64) -> Result<Self> {
        Self::new(self.users.clone(), self.rx_antennas, noise, self.receiver.clone())
    }

    pub fn with_receiver(&self, receiver: ReceiverModel) -> Result<Self> {
        Self::new(self.users.clone(), self.rx_antennas, self.noise, receiver)
    }

    /// The joint power constraint of a coalition acting as one virtual user.
    pub fn coalition_power(&self, s: Coalition) -> PowerConstraint {
        match self.power_mode() {
            PowerMode::SumPower => PowerConstraint::SumPower(s.members().map(|k| self.users[k].power.total()).sum()),
            PowerMode::PerAntenna => PowerConstraint::PerAntenna(
                s.members()
                    .flat_map(|k| match &self.users[k].power {
                        PowerConstraint::PerAntenna(caps) => caps.clone(),
                        PowerConstraint::SumPower(p) => vec![*p],
                    })
                    .collect(),
            ),
        }
    }

    pub(crate) fn check_coalition(&self, s: Coalition) -> Result<()> {
        if s.is_empty() || !s.is_subset_of(self.grand_coalition()) {
            return Err(invalid(format!(
                "coalition {s} is not a nonempty subset of {} users",
                self.num_users()
            )));
        }
        Ok(())
    }

    pub(crate) fn check_partition(&self, partition: &Partition) -> Result<()> {
        if partition.num_users() != self.num_users() {
            return Err(invalid(format!(
                "partition {partition} covers {} users, scenario has {}",
                partition.num_users(),
                self.num_users()
            )));
        }
        Ok(())
    }
}

fn validate_receiver(receiver: &ReceiverModel, k: usize) -> Result<()> {
    match receiver {
        ReceiverModel::Sud => Ok(()),
        ReceiverModel::SicFixed { base_order } => check_permutation(base_order, k),
        ReceiverModel::SicTimeShare { weights } => match weights {
            None => Ok(()),
            Some(w) => {
                if w.is_empty() || w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                    return Err(invalid("time-sharing weights must be nonnegative"));
                }
                let total: f64 = w.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(invalid(format!("time-sharing weights sum to {total}, not 1")));
                }
                Ok(())
            }
        },
    }
}

pub(crate) fn check_permutation(order: &[usize], k: usize) -> Result<()> {
    let mut seen = vec![false; k];
    if order.len() != k {
        return Err(invalid(format!(
            "decoding order has {} entries, expected {k}",
            order.len()
        )));
    }
    for &u in order {
        if u >= k || seen[u] {
            return Err(invalid(format!("decoding order {order:?} is not a permutation")));
        }
        seen[u] = true;
    }
    Ok(())
}

/// A nonempty set of users, stored as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coalition(u32);

impl Coalition {
    pub fn from_mask(mask: u32) -> Self {
        Coalition(mask)
    }

    pub fn from_members(members: &[usize]) -> Self {
        Coalition(members.iter().fold(0, |m, &k| m | (1 << k)))
    }

    pub fn singleton(k: usize) -> Self {
        Coalition(1 << k)
    }

    pub fn grand(k: usize) -> Self {
        Coalition(((1u64 << k) - 1) as u32)
    }

    pub fn mask(self) -> u32 {
        self.0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn contains(self, k: usize) -> bool {
        self.0 >> k & 1 == 1
    }

    pub fn union(self, other: Coalition) -> Coalition {
        Coalition(self.0 | other.0)
    }

    pub fn difference(self, other: Coalition) -> Coalition {
        Coalition(self.0 & !other.0)
    }

    pub fn is_subset_of(self, other: Coalition) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_disjoint(self, other: Coalition) -> bool {
        self.0 & other.0 == 0
    }

    pub fn smallest(self) -> Option<usize> {
        (self.0 != 0).then(|| self.0.trailing_zeros() as usize)
    }

    /// Members in ascending order.
    pub fn members(self) -> impl Iterator<Item = usize> {
        let mut rest = self.0;
        std::iter::from_fn(move || {
            (rest != 0).then(|| {
                let k = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                k
            })
        })
    }

    /// All nonempty proper subsets of the `k`-user grand coalition, by mask.
    pub fn proper_subsets(k: usize) -> impl Iterator<Item = Coalition> {
        let grand = Coalition::grand(k).0;
        (1..grand).map(Coalition)
    }
}

impl fmt::Display for Coalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, k) in self.members().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", k + 1)?;
        }
        write!(f, "}}")
    }
}

/// A set partition of the users, blocks sorted by smallest member.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    blocks: Vec<Coalition>,
    num_users: usize,
}

impl Partition {
    pub fn new(mut blocks: Vec<Coalition>, num_users: usize) -> Result<Self> {
        let grand = Coalition::grand(num_users);
        let mut covered = Coalition(0);
        for &b in &blocks {
            if b.is_empty() || !b.is_subset_of(grand) {
                return Err(invalid(format!("block {b} is empty or out of range")));
            }
            if !b.is_disjoint(covered) {
                return Err(invalid(format!("block {b} overlaps another block")));
            }
            covered = covered.union(b);
        }
        if covered != grand {
            return Err(invalid("blocks do not cover every user"));
        }
        blocks.sort_by_key(|b| b.smallest());
        Ok(Self { blocks, num_users })
    }

    /// Builds the partition encoded by a restricted growth string.
    pub fn from_rgs(rgs: &[usize]) -> Result<Self> {
        let mut blocks: Vec<Coalition> = Vec::new();
        for (k, &label) in rgs.iter().enumerate() {
            if label > blocks.len() {
                return Err(invalid(format!("{rgs:?} is not a restricted growth string")));
            }
            if label == blocks.len() {
                blocks.push(Coalition(0));
            }
            blocks[label] = blocks[label].union(Coalition::singleton(k));
        }
        Self::new(blocks, rgs.len())
    }

    pub fn grand(num_users: usize) -> Self {
        Self {
            blocks: vec![Coalition::grand(num_users)],
            num_users,
        }
    }

    pub fn singletons(num_users: usize) -> Self {
        Self {
            blocks: (0..num_users).map(Coalition::singleton).collect(),
            num_users,
        }
    }

    pub fn blocks(&self) -> &[Coalition] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn position(&self, s: Coalition) -> Option<usize> {
        self.blocks.iter().position(|&b| b == s)
    }

    /// Restricted growth string: entry `k` is the block index of user `k`.
    pub fn rgs(&self) -> Vec<usize> {
        (0..self.num_users)
            .map(|k| self.blocks.iter().position(|b| b.contains(k)).unwrap())
            .collect()
    }

    /// Merges the blocks at the given indices into one.
    pub fn merge(&self, indices: &[usize]) -> Result<Self> {
        let merged = indices.iter().fold(Coalition(0), |acc, &i| acc.union(self.blocks[i]));
        let mut blocks: Vec<Coalition> = self
            .blocks
            .iter()
            .enumerate()
            .filter(|(i, _)| !indices.contains(i))
            .map(|(_, &b)| b)
            .collect();
        blocks.push(merged);
        Self::new(blocks, self.num_users)
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, b) in self.blocks.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{b}")?;
        }
        write!(f, "}}")
    }
}

/// Every set partition of `members`, in lexicographic restricted-growth-string order.
pub fn set_partitions_of(members: &[usize]) -> Vec<Vec<Coalition>> {
    let n = members.len();
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    let mut rgs = vec![0usize; n];
    // max_prefix[i] = max(rgs[0..i])
    let mut max_prefix = vec![0usize; n];
    loop {
        let num_blocks = max_prefix[n - 1].max(rgs[n - 1]) + 1;
        let mut blocks = vec![Coalition(0); num_blocks];
        for (i, &label) in rgs.iter().enumerate() {
            blocks[label] = blocks[label].union(Coalition::singleton(members[i]));
        }
        out.push(blocks);

        // Find the rightmost position that can be incremented.
        let mut i = n - 1;
        loop {
            if i == 0 {
                return out;
            }
            if rgs[i] <= max_prefix[i] {
                break;
            }
            i -= 1;
        }
        rgs[i] += 1;
        for j in i + 1..n {
            rgs[j] = 0;
            max_prefix[j] = max_prefix[j - 1].max(rgs[j - 1]);
        }
    }
}

/// All partitions of `k` users in lexicographic restricted-growth-string order.
pub fn enumerate_partitions(k: usize) -> Result<Vec<Partition>> {
    if !(1..=MAX_USERS).contains(&k) {
        return Err(invalid(format!(
            "partition enumeration needs 1 <= K <= {MAX_USERS}, got {k}"
        )));
    }
    let members: Vec<usize> = (0..k).collect();
    Ok(set_partitions_of(&members)
        .into_iter()
        .map(|blocks| Partition { blocks, num_users: k })
        .collect())
}

/// Bell numbers `B_0..=B_12`.
pub const BELL: [usize; 13] = [1, 1, 2, 5, 15, 52, 203, 877, 4140, 21147, 115975, 678570, 4213597];

/// Decoding order of a partition's blocks under a base user order: each
/// coalition is decoded at the slot of its latest-decoded member.
pub fn induced_order(partition: &Partition, base_order: &[usize]) -> Result<Vec<Coalition>> {
    check_permutation(base_order, partition.num_users())?;
    Ok(induced_block_order(partition, base_order)
        .into_iter()
        .map(|i| partition.blocks()[i])
        .collect())
}

/// Same as [`induced_order`] but returns block indices.
pub(crate) fn induced_block_order(partition: &Partition, base_order: &[usize]) -> Vec<usize> {
    let mut slot = vec![0usize; base_order.len()];
    for (pos, &user) in base_order.iter().enumerate() {
        slot[user] = pos;
    }
    let mut idx: Vec<usize> = (0..partition.len()).collect();
    idx.sort_by_key(|&i| partition.blocks()[i].members().map(|k| slot[k]).max());
    idx
}

/// Horizontal stacking of member channels in ascending user order.
pub fn coalition_channel(scenario: &Scenario, s: Coalition) -> DMatrix<f64> {
    let m = scenario.rx_antennas();
    let cols: usize = s.members().map(|k| scenario.users()[k].antennas()).sum();
    let mut h = DMatrix::zeros(m, cols);
    let mut c = 0;
    for k in s.members() {
        let g = &scenario.users()[k].channel;
        h.view_mut((0, c), (m, g.ncols())).copy_from(g);
        c += g.ncols();
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(ids: &[usize]) -> Coalition {
        Coalition::from_members(&ids.iter().map(|i| i - 1).collect::<Vec<_>>())
    }

    #[test]
    fn bell_counts() {
        for k in 1..=10 {
            assert_eq!(enumerate_partitions(k).unwrap().len(), BELL[k], "K={k}");
        }
        assert_eq!(enumerate_partitions(1).unwrap()[0], Partition::grand(1));
    }

    #[test]
    fn rejects_out_of_range_k() {
        assert!(enumerate_partitions(0).is_err());
        assert!(enumerate_partitions(13).is_err());
    }

    #[test]
    fn rgs_order_is_lexicographic() {
        let parts = enumerate_partitions(4).unwrap();
        let strings: Vec<Vec<usize>> = parts.iter().map(|p| p.rgs()).collect();
        assert_eq!(strings[0], vec![0, 0, 0, 0]);
        assert_eq!(strings[14], vec![0, 1, 2, 3]);
        assert!(strings.windows(2).all(|w| w[0] < w[1]));
        for (p, s) in parts.iter().zip(&strings) {
            assert_eq!(&Partition::from_rgs(s).unwrap(), p);
        }
    }

    #[test]
    fn induced_order_merge_example() {
        let t = Partition::new(vec![c(&[1, 3]), c(&[2]), c(&[4])], 4).unwrap();
        let order = induced_order(&t, &[0, 1, 2, 3]).unwrap();
        assert_eq!(order, vec![c(&[2]), c(&[1, 3]), c(&[4])]);
    }

    #[test]
    fn induced_order_singletons_keep_base() {
        let t = Partition::singletons(3);
        let order = induced_order(&t, &[2, 0, 1]).unwrap();
        assert_eq!(order, vec![c(&[3]), c(&[1]), c(&[2])]);
        let g = induced_order(&Partition::grand(3), &[2, 0, 1]).unwrap();
        assert_eq!(g, vec![c(&[1, 2, 3])]);
    }

    #[test]
    fn induced_order_rejects_bad_base() {
        assert!(induced_order(&Partition::singletons(3), &[0, 0, 1]).is_err());
        assert!(induced_order(&Partition::singletons(3), &[0, 1]).is_err());
    }

    #[test]
    fn stacking_channels() {
        let users = vec![
            UserSpec::single_antenna(&[1.0, 2.0], 1.0).unwrap(),
            UserSpec::single_antenna(&[-0.5, 3.0], 1.0).unwrap(),
        ];
        let sc = Scenario::new(users, 2, 1.0, ReceiverModel::Sud).unwrap();
        let h = coalition_channel(&sc, c(&[1, 2]));
        assert_eq!(h, DMatrix::from_row_slice(2, 2, &[1.0, -0.5, 2.0, 3.0]));
        let gram = &h * h.transpose();
        let sum = sc
            .users()
            .iter()
            .fold(DMatrix::zeros(2, 2), |acc, u| acc + &u.channel * u.channel.transpose());
        assert!((gram - sum).norm() < 1e-14);
        assert_eq!(coalition_channel(&sc, c(&[2])), sc.users()[1].channel);
    }

    #[test]
    fn scenario_validation() {
        let u = UserSpec::single_antenna(&[1.0], 1.0).unwrap();
        assert!(Scenario::new(vec![u.clone()], 2, 1.0, ReceiverModel::Sud).is_err());
        assert!(Scenario::new(vec![u.clone()], 1, 0.0, ReceiverModel::Sud).is_err());
        assert!(Scenario::new(
            vec![u.clone(), u.clone()],
            1,
            1.0,
            ReceiverModel::SicFixed { base_order: vec![1, 1] }
        )
        .is_err());
        assert!(Scenario::new(
            vec![u.clone()],
            1,
            1.0,
            ReceiverModel::SicTimeShare {
                weights: Some(vec![0.5, 0.4])
            }
        )
        .is_err());
        assert!(UserSpec::new(DMatrix::zeros(1, 2), PowerConstraint::PerAntenna(vec![1.0])).is_err());
        assert!(UserSpec::new(DMatrix::zeros(1, 1), PowerConstraint::SumPower(-1.0)).is_err());
    }

    #[test]
    fn partition_validation_and_merge() {
        assert!(Partition::new(vec![c(&[1, 2]), c(&[2, 3])], 3).is_err());
        assert!(Partition::new(vec![c(&[1])], 2).is_err());
        let t = Partition::singletons(4);
        let merged = t.merge(&[0, 2]).unwrap();
        assert_eq!(merged.blocks(), &[c(&[1, 3]), c(&[2]), c(&[4])]);
        assert_eq!(merged.to_string(), "{{1,3},{2},{4}}");
    }
}
