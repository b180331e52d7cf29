//! Achievable-rate kernels: log-det rates, sum-power waterfilling, per-antenna
//! constrained rate maximization and the closed forms for a single-antenna
//! receiver. All rates are in nats.

use nalgebra::DMatrix;

use crate::error::{invalid, Error, NonConvergence, Result};
use crate::linalg::{check_psd, inverse_pd, logdet_pd, min_eigenvalue, project_psd, sorted_eigen, symmetrize};
use crate::model::{coalition_channel, Coalition, Partition, PowerConstraint, ReceiverModel, Scenario};

/// PSD tolerance applied to covariance inputs.
pub const PSD_TOL: f64 = 1e-10;
/// Slack allowed on power constraints.
pub const POWER_TOL: f64 = 1e-9;

/// Optimal (or best found) transmit covariance of one link and its rate.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkSolution {
    pub covariance: DMatrix<f64>,
    pub rate: f64,
}

/// `ln det(N0 I + H Q H^T + J) - ln det(N0 I + J)`.
pub fn logdet_rate(noise: f64, h: &DMatrix<f64>, q: &DMatrix<f64>, j: &DMatrix<f64>) -> Result<f64> {
    if !(noise.is_finite() && noise > 0.0) {
        return Err(invalid(format!("noise level {noise} must be positive")));
    }
    let m = h.nrows();
    if q.nrows() != h.ncols() || q.ncols() != h.ncols() {
        return Err(invalid(format!(
            "covariance is {}x{}, channel has {} columns",
            q.nrows(),
            q.ncols(),
            h.ncols()
        )));
    }
    if j.nrows() != m || j.ncols() != m {
        return Err(invalid(format!("interference covariance must be {m}x{m}")));
    }
    check_psd(q, PSD_TOL, "transmit covariance")?;
    check_psd(j, PSD_TOL, "interference covariance")?;
    let base = symmetrize(&(DMatrix::identity(m, m) * noise + j));
    let full = symmetrize(&(&base + h * q * h.transpose()));
    Ok((logdet_pd(&full)? - logdet_pd(&base)?).max(0.0))
}

fn whitening_factor(noise_cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if noise_cov.nrows() != noise_cov.ncols() || noise_cov.is_empty() {
        return Err(invalid("noise covariance must be square and nonempty"));
    }
    let (eig, _) = sorted_eigen(noise_cov);
    let (hi, lo) = (eig[0], eig[eig.len() - 1]);
    if !(hi > 0.0) || lo < 1e-12 * hi {
        return Err(Error::NumericalFailure(format!(
            "noise covariance is singular or indefinite (eigenvalues {lo:e}..{hi:e})"
        )));
    }
    let chol = symmetrize(noise_cov)
        .cholesky()
        .ok_or_else(|| Error::NumericalFailure("Cholesky of noise covariance failed".into()))?;
    Ok(chol.l())
}

/// `L^{-1} H` where `noise_cov = L L^T`.
fn whiten(h: &DMatrix<f64>, noise_cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if h.nrows() != noise_cov.nrows() {
        return Err(invalid("channel rows do not match noise covariance"));
    }
    let l = whitening_factor(noise_cov)?;
    l.solve_lower_triangular(h)
        .ok_or_else(|| Error::NumericalFailure("whitening solve failed".into()))
}

/// Result of sum-power waterfilling over the eigenmodes of the whitened channel.
#[derive(Debug, Clone)]
pub struct Waterfill {
    pub covariance: DMatrix<f64>,
    pub rate: f64,
    pub water_level: f64,
    /// Eigenmode gains in descending order (ties by ascending mode index).
    pub mode_gains: Vec<f64>,
    pub mode_powers: Vec<f64>,
}

impl From<Waterfill> for LinkSolution {
    fn from(w: Waterfill) -> Self {
        LinkSolution {
            covariance: w.covariance,
            rate: w.rate,
        }
    }
}

/// Maximizes `ln det(noise_cov + H Q H^T) - ln det(noise_cov)` over `tr Q <= power`.
pub fn waterfill(h: &DMatrix<f64>, noise_cov: &DMatrix<f64>, power: f64) -> Result<Waterfill> {
    if !(power.is_finite() && power >= 0.0) {
        return Err(invalid(format!("power budget {power} must be nonnegative")));
    }
    let hw = whiten(h, noise_cov)?;
    let n = h.ncols();
    let (gains, modes) = sorted_eigen(&(hw.transpose() * &hw));
    let top = gains.first().copied().unwrap_or(0.0);
    let usable = gains.iter().take_while(|&&g| top > 0.0 && g > 1e-14 * top).count();

    // Largest active set whose water level clears every active mode's floor.
    let mut active = 0;
    let mut level = 0.0;
    let mut inv_sum = 0.0;
    if power > 0.0 {
        for m in 1..=usable {
            inv_sum += 1.0 / gains[m - 1];
            let mu = (power + inv_sum) / m as f64;
            if mu > 1.0 / gains[m - 1] {
                active = m;
                level = mu;
            } else {
                break;
            }
        }
    }
    let mode_powers: Vec<f64> = (0..gains.len())
        .map(|i| if i < active { level - 1.0 / gains[i] } else { 0.0 })
        .collect();
    let mut covariance = DMatrix::zeros(n, n);
    for i in 0..active {
        let v = modes.column(i);
        covariance += mode_powers[i] * v * v.transpose();
    }
    let rate = (0..active).map(|i| (gains[i] * mode_powers[i]).ln_1p()).sum();
    Ok(Waterfill {
        covariance: symmetrize(&covariance),
        rate,
        water_level: level,
        mode_gains: gains,
        mode_powers,
    })
}

/// Tuning for [`maximize_per_antenna`].
#[derive(Debug, Clone)]
pub struct PerAntennaOptions {
    /// Starting covariance; projected onto the feasible set before use.
    pub init: Option<DMatrix<f64>>,
    pub max_iter: usize,
    /// Target for the projected-gradient stationarity residual.
    pub tol: f64,
    /// Residual still accepted when the line search stalls.
    pub accept_tol: f64,
    pub record_trace: bool,
}

impl Default for PerAntennaOptions {
    fn default() -> Self {
        Self {
            init: None,
            max_iter: 100_000,
            tol: 1e-10,
            accept_tol: 1e-6,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PerAntennaSolution {
    pub covariance: DMatrix<f64>,
    pub rate: f64,
    pub iterations: usize,
    /// `|Q - P(Q + grad)|_F` at the returned point.
    pub residual: f64,
    /// Objective after every accepted step, when requested.
    pub trace: Vec<f64>,
}

impl From<PerAntennaSolution> for LinkSolution {
    fn from(s: PerAntennaSolution) -> Self {
        LinkSolution {
            covariance: s.covariance,
            rate: s.rate,
        }
    }
}

fn clip_diagonal(a: &DMatrix<f64>, caps: &[f64]) -> DMatrix<f64> {
    let mut b = a.clone();
    for (i, &c) in caps.iter().enumerate() {
        if b[(i, i)] > c {
            b[(i, i)] = c;
        }
    }
    b
}

fn diag_within(a: &DMatrix<f64>, caps: &[f64], slack: f64) -> bool {
    caps.iter().enumerate().all(|(i, &c)| a[(i, i)] <= c + slack)
}

/// Scales rows and columns so every diagonal entry respects its cap; keeps PSD.
fn enforce_caps(a: &DMatrix<f64>, caps: &[f64]) -> DMatrix<f64> {
    let scale: Vec<f64> = caps
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let d = a[(i, i)];
            if d > c {
                (c / d).sqrt()
            } else {
                1.0
            }
        })
        .collect();
    DMatrix::from_fn(a.nrows(), a.ncols(), |r, c| a[(r, c)] * scale[r] * scale[c])
}

/// Euclidean projection onto `{Q PSD, diag(Q) <= caps}` by Dykstra's alternating projections.
pub(crate) fn project_per_antenna(y: &DMatrix<f64>, caps: &[f64]) -> DMatrix<f64> {
    let y = symmetrize(y);
    let a = project_psd(&y);
    if diag_within(&a, caps, 0.0) {
        return a;
    }
    let b = clip_diagonal(&y, caps);
    if min_eigenvalue(&b) >= 0.0 {
        return b;
    }
    let scale = y.norm().max(1.0);
    let mut x = y.clone();
    let mut p = DMatrix::zeros(y.nrows(), y.ncols());
    let mut q = DMatrix::zeros(y.nrows(), y.ncols());
    for _ in 0..20_000 {
        let z = project_psd(&(&x + &p));
        p = &x + &p - &z;
        let xn = clip_diagonal(&(&z + &q), caps);
        q = &z + &q - &xn;
        let moved = (&xn - &x).norm();
        x = xn;
        if moved <= 1e-13 * scale && (&z - &x).norm() <= 1e-12 * scale {
            break;
        }
    }
    enforce_caps(&project_psd(&x), caps)
}

/// Maximizes `ln det(noise_cov + H Q H^T) - ln det(noise_cov)` over PSD `Q` with
/// `diag(Q) <= caps`, by projected gradient ascent with backtracking.
pub fn maximize_per_antenna(
    h: &DMatrix<f64>,
    noise_cov: &DMatrix<f64>,
    caps: &[f64],
    opts: &PerAntennaOptions,
) -> Result<PerAntennaSolution> {
    let n = h.ncols();
    if caps.len() != n {
        return Err(invalid(format!("{} antenna caps for {n} antennas", caps.len())));
    }
    if caps.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
        return Err(invalid("per-antenna caps must be nonnegative"));
    }
    let hw = whiten(h, noise_cov)?;
    let m = h.nrows();
    let eye = DMatrix::<f64>::identity(m, m);
    let objective =
        |q: &DMatrix<f64>| -> Result<f64> { logdet_pd(&symmetrize(&(&eye + &hw * q * hw.transpose()))) };
    let gradient = |q: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let inv = inverse_pd(&symmetrize(&(&eye + &hw * q * hw.transpose())))?;
        Ok(symmetrize(&(hw.transpose() * inv * &hw)))
    };

    let mut q = match &opts.init {
        Some(init) => {
            if init.nrows() != n || init.ncols() != n {
                return Err(invalid("initial covariance has the wrong dimension"));
            }
            project_per_antenna(init, caps)
        }
        None => default_start(&hw, caps, &objective)?,
    };
    let mut f = objective(&q)?;
    let mut trace = Vec::new();
    if opts.record_trace {
        trace.push(f);
    }
    let mut step = 1.0;
    let mut residual = f64::INFINITY;
    let mut stalls = 0;
    for it in 0..opts.max_iter {
        let g = gradient(&q)?;
        residual = (&q - project_per_antenna(&(&q + &g), caps)).norm();
        if residual <= opts.tol {
            return Ok(PerAntennaSolution {
                covariance: q,
                rate: f.max(0.0),
                iterations: it,
                residual,
                trace,
            });
        }
        let mut accepted = false;
        while step > 1e-14 {
            let cand = project_per_antenna(&(&q + &g * step), caps);
            let d = &cand - &q;
            let fc = objective(&cand)?;
            let model = f + g.dot(&d) - d.norm_squared() / (2.0 * step);
            if fc >= f && fc >= model - 1e-14 * f.abs().max(1.0) {
                accepted = d.norm() > 0.0;
                stalls = if fc > f { 0 } else { stalls + 1 };
                q = cand;
                f = fc;
                break;
            }
            step *= 0.5;
        }
        if opts.record_trace && accepted {
            trace.push(f);
        }
        if !accepted || stalls > 20 {
            // No progress at machine precision.
            break;
        }
        step = (step * 2.0).min(1e8);
    }
    if residual <= opts.accept_tol {
        return Ok(PerAntennaSolution {
            covariance: q,
            rate: f.max(0.0),
            iterations: opts.max_iter,
            residual,
            trace,
        });
    }
    Err(Error::NonConvergence(Box::new(NonConvergence {
        context: "per-antenna rate maximization".into(),
        iterations: opts.max_iter,
        residual,
        objective: vec![f],
        iterate: vec![q],
        oscillation: Vec::new(),
    })))
}

/// Better of independent full-power signaling and full-power beamforming
/// co-phased with the dominant whitened eigenmode.
fn default_start(
    hw: &DMatrix<f64>,
    caps: &[f64],
    objective: &dyn Fn(&DMatrix<f64>) -> Result<f64>,
) -> Result<DMatrix<f64>> {
    let n = caps.len();
    let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(caps));
    if n == 0 {
        return Ok(diag);
    }
    let (_, modes) = sorted_eigen(&(hw.transpose() * hw));
    let beam = nalgebra::DVector::from_fn(n, |i, _| {
        let sign = if modes[(i, 0)] < 0.0 { -1.0 } else { 1.0 };
        sign * caps[i].sqrt()
    });
    let beamformed = &beam * beam.transpose();
    Ok(if objective(&beamformed)? > objective(&diag)? {
        beamformed
    } else {
        diag
    })
}

/// Best response of one link against `noise_cov` under its power constraint.
pub fn best_response(
    h: &DMatrix<f64>,
    noise_cov: &DMatrix<f64>,
    power: &PowerConstraint,
    opts: &PerAntennaOptions,
) -> Result<LinkSolution> {
    match power {
        PowerConstraint::SumPower(p) => waterfill(h, noise_cov, *p).map(Into::into),
        PowerConstraint::PerAntenna(caps) => maximize_per_antenna(h, noise_cov, caps, opts).map(Into::into),
    }
}

/// Interference-free maximum rate of a coalition.
pub fn coalition_capacity(scenario: &Scenario, s: Coalition) -> Result<LinkSolution> {
    scenario.check_coalition(s)?;
    let m = scenario.rx_antennas();
    let h = coalition_channel(scenario, s);
    best_response(
        &h,
        &(DMatrix::identity(m, m) * scenario.noise()),
        &scenario.coalition_power(s),
        &PerAntennaOptions::default(),
    )
}

/// Received power of a coalition that beamforms at a single-antenna receiver.
fn single_antenna_gain(scenario: &Scenario, s: Coalition) -> f64 {
    match scenario.coalition_power(s) {
        PowerConstraint::SumPower(p) => {
            let energy: f64 = s.members().map(|k| scenario.users()[k].channel.norm_squared()).sum();
            energy * p
        }
        PowerConstraint::PerAntenna(caps) => {
            let h = coalition_channel(scenario, s);
            let amp: f64 = h.iter().zip(&caps).map(|(g, p)| g.abs() * p.sqrt()).sum();
            amp * amp
        }
    }
}

/// Closed-form successive-decoding utilities at a single-antenna receiver.
/// `order` lists the partition's blocks from first to last decoded; the result
/// is aligned with `partition.blocks()`.
pub fn single_antenna_utilities(scenario: &Scenario, partition: &Partition, order: &[Coalition]) -> Result<Vec<f64>> {
    if scenario.rx_antennas() != 1 {
        return Err(invalid("closed-form utilities need a single-antenna receiver"));
    }
    scenario.check_partition(partition)?;
    let positions = order_positions(partition, order)?;
    let gains: Vec<f64> = order.iter().map(|&s| single_antenna_gain(scenario, s)).collect();
    let n0 = scenario.noise();
    // tail[i] = received power of blocks decoded at or after slot i
    let mut tail = vec![0.0; order.len() + 1];
    for i in (0..order.len()).rev() {
        tail[i] = tail[i + 1] + gains[i];
    }
    Ok(positions
        .iter()
        .map(|&slot| ((n0 + tail[slot]) / (n0 + tail[slot + 1])).ln())
        .collect())
}

/// For each block of the partition, its slot in `order`.
pub(crate) fn order_positions(partition: &Partition, order: &[Coalition]) -> Result<Vec<usize>> {
    if order.len() != partition.len() {
        return Err(invalid("decoding order must list every block once"));
    }
    partition
        .blocks()
        .iter()
        .map(|b| {
            order
                .iter()
                .position(|o| o == b)
                .ok_or_else(|| invalid(format!("block {b} missing from decoding order")))
        })
        .collect()
}

/// Low-SNR rate `sigma_max(H)^2 P / N0`.
pub fn low_snr_utility(h: &DMatrix<f64>, power: f64, noise: f64) -> f64 {
    let sigma = if h.is_empty() {
        0.0
    } else {
        h.clone()
            .svd(false, false)
            .singular_values
            .iter()
            .copied()
            .fold(0.0, f64::max)
    };
    sigma * sigma * power / noise
}

/// High-SNR time-sharing approximation `(|S|/K) C_S`, where `C_S` is the
/// interference-free capacity of `S`. Defined only for uniform time sharing.
pub fn timeshare_highsnr_utility(scenario: &Scenario, s: Coalition) -> Result<f64> {
    match scenario.receiver() {
        ReceiverModel::SicTimeShare { weights } => {
            if let Some(w) = weights {
                let first = w[0];
                if w.iter().any(|x| (x - first).abs() > 1e-12) {
                    return Err(invalid("high-SNR approximation needs uniform time sharing"));
                }
            }
        }
        _ => return Err(invalid("high-SNR approximation needs a time-sharing receiver")),
    }
    let rate = coalition_capacity(scenario, s)?.rate;
    Ok(s.len() as f64 / scenario.num_users() as f64 * rate)
}

/// Transmit covariances of every block of a partition, aligned with its blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceProfile {
    pub blocks: Vec<DMatrix<f64>>,
}

impl CovarianceProfile {
    pub fn zeros(scenario: &Scenario, partition: &Partition) -> Self {
        let blocks = partition
            .blocks()
            .iter()
            .map(|&s| {
                let n = coalition_channel(scenario, s).ncols();
                DMatrix::zeros(n, n)
            })
            .collect();
        Self { blocks }
    }

    /// Checks dimensions, PSD-ness and power constraints.
    pub fn validate(&self, scenario: &Scenario, partition: &Partition) -> Result<()> {
        if self.blocks.len() != partition.len() {
            return Err(Error::InvalidCovariance(format!(
                "{} covariances for {} blocks",
                self.blocks.len(),
                partition.len()
            )));
        }
        for (q, &s) in self.blocks.iter().zip(partition.blocks()) {
            let n: usize = s.members().map(|k| scenario.users()[k].antennas()).sum();
            if q.nrows() != n || q.ncols() != n {
                return Err(Error::InvalidCovariance(format!("covariance of {s} must be {n}x{n}")));
            }
            check_psd(q, PSD_TOL, &format!("covariance of {s}"))?;
            match scenario.coalition_power(s) {
                PowerConstraint::SumPower(p) => {
                    if q.trace() > p + POWER_TOL {
                        return Err(Error::InvalidCovariance(format!(
                            "covariance of {s} has trace {} above budget {p}",
                            q.trace()
                        )));
                    }
                }
                PowerConstraint::PerAntenna(caps) => {
                    if !diag_within(q, &caps, POWER_TOL) {
                        return Err(Error::InvalidCovariance(format!(
                            "covariance of {s} exceeds a per-antenna cap"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}
