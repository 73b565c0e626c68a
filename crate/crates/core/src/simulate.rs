//! Finite-SNR rates of a plan with zero-forcing receivers, and the DoF
//! estimate as the slope of sum rate against `log2 P`.
//!
//! Noise is unit variance everywhere. Each stream gets power `beta P / d_i`
//! on a unit-norm beam; `beta <= 1` backs the inputs off until the relay
//! output meets its own power budget `P`. Relay-forwarded noise is kept and
//! whitened at the receivers.

use nalgebra::{Cholesky, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{sample_channel, AntennaConfig, ChannelInstance, User};
use crate::error::{Error, Result};
use crate::exec::{try_map_indices, Execution};
use crate::numerics::{columns, hstack, pseudo_inverse, ComplexMatrix, TolerancePolicy};
use crate::scheme::{build_plan, effective_channels, BeamformingPlan, PlanOptions};
use crate::seeding::derive_seed;

/// Trials excluded beyond this fraction make the estimate unreliable.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrSweep {
    pub snr_points_db: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
}

impl SnrSweep {
    pub fn new(snr_points_db: Vec<f64>, trials: usize, seed: u64) -> Result<Self> {
        let sweep = Self {
            snr_points_db,
            trials,
            seed,
        };
        sweep.validate()?;
        Ok(sweep)
    }

    /// `points` values evenly spaced over `[start_db, stop_db]`.
    pub fn linear(
        start_db: f64,
        stop_db: f64,
        points: usize,
        trials: usize,
        seed: u64,
    ) -> Result<Self> {
        if points < 2 {
            return Err(Error::InvalidInput(
                "a sweep needs at least 3 points".into(),
            ));
        }
        let step = (stop_db - start_db) / (points - 1) as f64;
        let pts = (0..points).map(|i| start_db + step * i as f64).collect();
        Self::new(pts, trials, seed)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.snr_points_db;
        if p.len() < 3 {
            return Err(Error::InvalidInput(
                "a sweep needs at least 3 points".into(),
            ));
        }
        if p.iter().any(|x| !x.is_finite()) || p.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(
                "SNR points must be finite and strictly ascending".into(),
            ));
        }
        if p[p.len() - 1] - p[0] < 20.0 {
            return Err(Error::InvalidInput(
                "SNR span must be at least 20 dB".into(),
            ));
        }
        if self.trials == 0 {
            return Err(Error::InvalidInput("at least one trial is required".into()));
        }
        Ok(())
    }
}

pub fn db_to_power(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Whitening {
    /// `Q^{-1/2}` from the Hermitian eigendecomposition.
    #[default]
    InverseSqrt,
    /// `L^{-1}` with `Q = L L^H`.
    Cholesky,
}

fn whitener(q: &ComplexMatrix, kind: Whitening) -> Result<ComplexMatrix> {
    let n = q.nrows();
    let bad =
        || Error::DegenerateChannel("receiver noise covariance is not positive definite".into());
    match kind {
        Whitening::InverseSqrt => {
            let eig = SymmetricEigen::new(q.clone());
            if eig.eigenvalues.iter().any(|&e| e.is_nan() || e <= 0.0) {
                return Err(bad());
            }
            let d = ComplexMatrix::from_diagonal(
                &eig.eigenvalues.map(|e| Complex64::new(1.0 / e.sqrt(), 0.0)),
            );
            Ok(&eig.eigenvectors * d * eig.eigenvectors.adjoint())
        }
        Whitening::Cholesky => {
            let chol = Cholesky::new(q.clone()).ok_or_else(bad)?;
            chol.l()
                .solve_lower_triangular(&ComplexMatrix::identity(n, n))
                .ok_or_else(bad)
        }
    }
}

/// Relay noise-forwarding power `trace(A A^H)`.
pub fn relay_noise_power(plan: &BeamformingPlan) -> f64 {
    plan.a.norm_squared()
}

/// Input back-off `beta` at power `p`.
pub fn relay_backoff(ch: &ChannelInstance, plan: &BeamformingPlan, p: f64) -> Result<f64> {
    let headroom = relay_noise_power(plan);
    if p.is_nan() || p <= headroom {
        return Err(Error::LowSnrUnsupported { power: p, headroom });
    }
    let mut signal = 0.0;
    for user in User::BOTH {
        let d = plan.allocation.streams(user);
        if d > 0 {
            signal +=
                p / d as f64 * (&plan.a * ch.to_relay(user) * plan.beamformer(user)).norm_squared();
        }
    }
    Ok(if signal > 0.0 {
        ((p - headroom) / signal).min(1.0)
    } else {
        1.0
    })
}

/// Per-user rates in bits per channel use at power `p`.
pub fn rates_at_snr(
    ch: &ChannelInstance,
    plan: &BeamformingPlan,
    p: f64,
    whitening: Whitening,
) -> Result<(f64, f64)> {
    let beta = relay_backoff(ch, plan, p)?;
    rates_with_backoff(ch, plan, p, beta, whitening)
}

/// Rates with a given back-off, ignoring the relay power budget.
pub fn rates_with_backoff(
    ch: &ChannelInstance,
    plan: &BeamformingPlan,
    p: f64,
    beta: f64,
    whitening: Whitening,
) -> Result<(f64, f64)> {
    let al = plan.allocation;
    let k = al.k();
    let (e1, e2) = effective_channels(ch, plan);
    let tol = TolerancePolicy::default();
    let full = al.corner;

    let mut rates = [0.0; 2];
    for rx in User::BOTH {
        let e = match rx {
            User::One => &e1,
            User::Two => &e2,
        };
        let tx_other = rx.other();
        let d_own = al.streams(rx);
        let d_other = al.streams(tx_other);
        if d_own == 0 {
            continue;
        }
        let offset = |u: User| if u == User::One { 0 } else { al.d1 };
        // Cross streams not neutralized at this receiver are decoded and
        // discarded; neutralized ones leave only numerical residue.
        let decoded_cross = if rx == full {
            0
        } else {
            d_other - k.min(d_other)
        };
        let cross_start = offset(tx_other) + (d_other - decoded_cross);

        let amp = |u: User| Complex64::new((beta * p / al.streams(u) as f64).sqrt(), 0.0);
        let desired = columns(e, offset(rx), d_own) * amp(rx);
        let decoded = columns(e, cross_start, decoded_cross) * amp(tx_other);
        let residue = columns(e, offset(tx_other), d_other - decoded_cross)
            * if d_other > 0 {
                amp(tx_other)
            } else {
                Complex64::new(0.0, 0.0)
            };

        let hj0a = ch.from_relay(rx) * &plan.a;
        let n = ch.config.m;
        let q = ComplexMatrix::identity(n, n) + &hj0a * hj0a.adjoint();
        let w = whitener(&q, whitening)?;

        let d = &w * hstack(&[&desired, &decoded]);
        let r = &w * &residue;
        let cov = ComplexMatrix::identity(n, n) + &r * r.adjoint();
        let zf = pseudo_inverse(&d, &tol)?;
        let post = &zf * cov * zf.adjoint();
        let mut rate = 0.0;
        for s in 0..d_own {
            let noise = post[(s, s)].re;
            if noise > 0.0 {
                rate += (1.0 + 1.0 / noise).log2();
            }
        }
        rates[rx.index()] = rate / ch.config.extension as f64;
    }
    Ok((rates[0], rates[1]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateRow {
    pub snr_db: f64,
    pub trial: usize,
    pub r1: f64,
    pub r2: f64,
    pub sum: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeOptions {
    pub plan: PlanOptions,
    pub corner: User,
    pub whitening: Whitening,
    pub execution: Execution,
}

impl Default for SlopeOptions {
    fn default() -> Self {
        Self {
            plan: PlanOptions::default(),
            corner: User::One,
            whitening: Whitening::default(),
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeSummary {
    pub config: AntennaConfig,
    pub snr_points_db: Vec<f64>,
    pub trials: usize,
    pub excluded: usize,
    /// Sum-DoF estimate: least-squares slope of the mean sum rate.
    pub slope: f64,
    pub per_user: (f64, f64),
    /// Standard error of the mean over per-trial slopes.
    pub stderr: f64,
    #[serde(skip)]
    pub rows: Vec<RateRow>,
}

impl SlopeSummary {
    /// `snr_db,trial,r1,r2,sum` rows for the included trials.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("snr_db,trial,r1,r2,sum\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.snr_db, r.trial, r.r1, r.r2, r.sum
            ));
        }
        out
    }
}

/// Least-squares slope of `y` against `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

struct TrialOutcome {
    rows: Vec<RateRow>,
    slopes: [f64; 3],
}

fn run_trial(
    config: &AntennaConfig,
    sweep: &SnrSweep,
    trial: usize,
    opts: &SlopeOptions,
) -> Result<Option<TrialOutcome>> {
    let seed = derive_seed(sweep.seed, "trial", &[trial as u64]);
    let ch = sample_channel(*config, seed)?;
    let run = match build_plan(&ch, opts.corner, &opts.plan) {
        Ok(run) if run.report.passed() => run,
        Ok(_) | Err(Error::DegenerateChannel(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let mut rows = Vec::with_capacity(sweep.snr_points_db.len());
    for &db in &sweep.snr_points_db {
        match rates_at_snr(&run.channel, &run.plan, db_to_power(db), opts.whitening) {
            Ok((r1, r2)) => rows.push(RateRow {
                snr_db: db,
                trial,
                r1,
                r2,
                sum: r1 + r2,
            }),
            Err(Error::LowSnrUnsupported { .. }) => return Ok(None),
            Err(e) => return Err(e),
        }
    }
    let x: Vec<f64> = sweep
        .snr_points_db
        .iter()
        .map(|&db| db_to_power(db).log2())
        .collect();
    let col = |f: fn(&RateRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let slopes = [
        ls_slope(&x, &col(|r| r.sum)),
        ls_slope(&x, &col(|r| r.r1)),
        ls_slope(&x, &col(|r| r.r2)),
    ];
    Ok(Some(TrialOutcome { rows, slopes }))
}

/// Monte-Carlo DoF estimate over fresh channels and plans per trial.
pub fn slope_estimate(
    config: &AntennaConfig,
    sweep: &SnrSweep,
    opts: &SlopeOptions,
) -> Result<SlopeSummary> {
    config.validate()?;
    sweep.validate()?;
    if config.extension != 1 {
        return Err(Error::InvalidInput(
            "pass the unextended configuration; extension is applied per plan".into(),
        ));
    }
    let outcomes = try_map_indices(opts.execution, sweep.trials, |t| {
        run_trial(config, sweep, t, opts)
    })?;
    let kept: Vec<TrialOutcome> = outcomes.into_iter().flatten().collect();
    let excluded = sweep.trials - kept.len();
    if kept.is_empty() || excluded as f64 > MAX_EXCLUDED_FRACTION * sweep.trials as f64 {
        return Err(Error::UnstableConfiguration {
            excluded,
            trials: sweep.trials,
        });
    }
    let n = kept.len() as f64;
    let mean = |i: usize| kept.iter().map(|o| o.slopes[i]).sum::<f64>() / n;
    let slope = mean(0);
    let stderr = if kept.len() > 1 {
        let var = kept
            .iter()
            .map(|o| (o.slopes[0] - slope).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(SlopeSummary {
        config: *config,
        snr_points_db: sweep.snr_points_db.clone(),
        trials: sweep.trials,
        excluded,
        slope,
        per_user: (mean(1), mean(2)),
        stderr,
        rows: kept.into_iter().flat_map(|o| o.rows).collect(),
    })
}
