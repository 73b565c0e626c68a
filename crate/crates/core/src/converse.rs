//! Rank-sum machinery behind the linear-relay upper bound.
//!
//! A relay map `A` turns the channel into a plain two-user interference
//! channel whose cross links are `H'_i0 (Hij + Hi0 A H0j) H'_0j`. The sum of
//! their ranks bounds the linear sum DoF by `2M - rank_sum / 2`, and is never
//! below `2M - max{N, L}`.

use num_rational::Ratio;
use serde::Serialize;

use crate::channel::{gaussian_matrix, AntennaConfig, ChannelInstance, User};
use crate::dofregion::{format_rational, Rational};
use crate::error::{Error, Result};
use crate::exec::{try_map_indices, Execution};
use crate::numerics::{
    block, block2x2, hstack, left_null_space_rows, null_space_basis, numerical_rank,
    numerical_rank_at_scale, pseudo_inverse, spectral_norm, vstack, ComplexMatrix, TolerancePolicy,
};
use crate::scheme::{build_plan, PlanOptions};
use crate::seeding::{derive_seed, rng_for};

/// Equalize relay dimensions to `max{N, L}` by adding generic receive rows
/// to `H01, H02` or generic transmit columns to `H10, H20`. Original entries
/// are kept.
pub fn pad_relay(ch: &ChannelInstance, seed: u64) -> ChannelInstance {
    let cfg = ch.config;
    let mut out = ch.clone();
    let pad_seed = derive_seed(seed, "pad", &[]);
    if cfg.l > cfg.n {
        let extra = cfg.l - cfg.n;
        out.h01 = vstack(&[&ch.h01, &gaussian_matrix(pad_seed, "h01", extra, cfg.m)]);
        out.h02 = vstack(&[&ch.h02, &gaussian_matrix(pad_seed, "h02", extra, cfg.m)]);
        out.config.n = cfg.l;
    } else if cfg.n > cfg.l {
        let extra = cfg.n - cfg.l;
        out.h10 = hstack(&[&ch.h10, &gaussian_matrix(pad_seed, "h10", cfg.m, extra)]);
        out.h20 = hstack(&[&ch.h20, &gaussian_matrix(pad_seed, "h20", cfg.m, extra)]);
        out.config.l = cfg.n;
    }
    out
}

/// Zero-extend an `L x N` relay map to the padded `max x max` shape.
pub fn pad_relay_matrix(a: &ComplexMatrix) -> ComplexMatrix {
    let size = a.nrows().max(a.ncols());
    let mut out = ComplexMatrix::zeros(size, size);
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out
}

/// Relay-side pieces of one receiver `i`: `P = pinv(h11_i0) h12_i0` and
/// `Z = leftnull(h11_i0) h12_i0`.
#[derive(Debug, Clone)]
pub struct ReceiverSide {
    pub p: ComplexMatrix,
    pub z: ComplexMatrix,
}

/// Relay-side pieces of one transmitter `j`: `Q = h21_0j pinv(h11_0j)` and
/// `W = h21_0j null(h11_0j)`.
#[derive(Debug, Clone)]
pub struct TransmitterSide {
    pub q: ComplexMatrix,
    pub w: ComplexMatrix,
}

#[derive(Debug, Clone)]
pub struct TransformedChannel {
    pub config: AntennaConfig,
    pub h10_prime: ComplexMatrix,
    pub h20_prime: ComplexMatrix,
    pub h01_prime: ComplexMatrix,
    pub h02_prime: ComplexMatrix,
    /// `min{L, M}`, `(L - M)+`, `min{N, M}`, `(N - M)+`
    pub split: [usize; 4],
    /// `H'_i0 Hij H'_0j`, indexed `[i][j]` from zero.
    pub composites: [[ComplexMatrix; 2]; 2],
    pub receivers: [ReceiverSide; 2],
    pub transmitters: [TransmitterSide; 2],
}

impl TransformedChannel {
    pub fn prime_from_relay(&self, rx: User) -> &ComplexMatrix {
        match rx {
            User::One => &self.h10_prime,
            User::Two => &self.h20_prime,
        }
    }

    pub fn prime_to_relay(&self, tx: User) -> &ComplexMatrix {
        match tx {
            User::One => &self.h01_prime,
            User::Two => &self.h02_prime,
        }
    }

    pub fn composite(&self, rx: User, tx: User) -> &ComplexMatrix {
        &self.composites[rx.index()][tx.index()]
    }
}

fn require_nonsingular(name: &str, m: &ComplexMatrix, tol: &TolerancePolicy) -> Result<()> {
    let rank = numerical_rank(m, tol)?;
    if m.nrows() != m.ncols() || rank != m.nrows() {
        return Err(Error::DegenerateChannel(format!(
            "{name} is {}x{} with rank {rank}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

pub fn transform(ch: &ChannelInstance, tol: &TolerancePolicy) -> Result<TransformedChannel> {
    ch.validate()?;
    let cfg = ch.config;
    if cfg.n != cfg.l {
        return Err(Error::InvalidInput(format!(
            "transform needs N = L, got N = {}, L = {}; pad the relay first",
            cfg.n, cfg.l
        )));
    }
    let m = cfg.m;
    let ml = cfg.l.min(m);
    let lm = cfg.l.saturating_sub(m);
    let mn = cfg.n.min(m);
    let nm = cfg.n.saturating_sub(m);

    let rx_side = |rx: User| -> Result<(ComplexMatrix, ReceiverSide)> {
        let h = ch.from_relay(rx);
        let h11 = block(h, 0, 0, m, ml);
        let h12 = block(h, 0, ml, m, lm);
        let pinv = pseudo_inverse(&h11, tol)?;
        let null = left_null_space_rows(&h11, tol)?;
        let prime = vstack(&[&pinv, &null]);
        require_nonsingular(&format!("H'{rx}0"), &prime, tol)?;
        let side = ReceiverSide {
            p: &pinv * &h12,
            z: &null * &h12,
        };
        Ok((prime, side))
    };
    let tx_side = |tx: User| -> Result<(ComplexMatrix, TransmitterSide)> {
        let h = ch.to_relay(tx);
        let h11 = block(h, 0, 0, mn, m);
        let h21 = block(h, mn, 0, nm, m);
        let pinv = pseudo_inverse(&h11, tol)?;
        let null = null_space_basis(&h11, tol)?;
        let prime = hstack(&[&pinv, &null]);
        require_nonsingular(&format!("H'0{tx}"), &prime, tol)?;
        let side = TransmitterSide {
            q: &h21 * &pinv,
            w: &h21 * &null,
        };
        Ok((prime, side))
    };
    let (h10_prime, r1) = rx_side(User::One)?;
    let (h20_prime, r2) = rx_side(User::Two)?;
    let (h01_prime, t1) = tx_side(User::One)?;
    let (h02_prime, t2) = tx_side(User::Two)?;

    let primes_rx = [&h10_prime, &h20_prime];
    let primes_tx = [&h01_prime, &h02_prime];
    let comp = |rx: User, tx: User| primes_rx[rx.index()] * ch.link(rx, tx) * primes_tx[tx.index()];
    let composites = [
        [comp(User::One, User::One), comp(User::One, User::Two)],
        [comp(User::Two, User::One), comp(User::Two, User::Two)],
    ];
    Ok(TransformedChannel {
        config: cfg,
        h10_prime,
        h20_prime,
        h01_prime,
        h02_prime,
        split: [ml, lm, mn, nm],
        composites,
        receivers: [r1, r2],
        transmitters: [t1, t2],
    })
}

/// `G_ij` for receiver `rx` and transmitter `tx`, assembled from the blocks
/// of `a`:
///
/// ```text
/// [ a11 + a12 Q + P (a21 + a22 Q)   (a12 + P a22) W ]
/// [ Z (a21 + a22 Q)                 Z a22 W         ]
/// ```
pub fn g_matrix(
    tc: &TransformedChannel,
    a: &ComplexMatrix,
    rx: User,
    tx: User,
) -> Result<ComplexMatrix> {
    let cfg = tc.config;
    if a.shape() != (cfg.l, cfg.n) {
        return Err(Error::DimensionMismatch {
            field: "A".into(),
            expected_rows: cfg.l,
            expected_cols: cfg.n,
            found: format!("{}x{}", a.nrows(), a.ncols()),
        });
    }
    let [ml, lm, mn, nm] = tc.split;
    let a11 = block(a, 0, 0, ml, mn);
    let a12 = block(a, 0, mn, ml, nm);
    let a21 = block(a, ml, 0, lm, mn);
    let a22 = block(a, ml, mn, lm, nm);
    let ReceiverSide { p, z } = &tc.receivers[rx.index()];
    let TransmitterSide { q, w } = &tc.transmitters[tx.index()];
    let lower = &a21 + &a22 * q;
    let right = &a12 + p * &a22;
    Ok(block2x2(
        &(&a11 + &a12 * q + p * &lower),
        &(&right * w),
        &(z * &lower),
        &(z * &a22 * w),
    ))
}

/// `(G_12, G_21)`.
pub fn g_matrices(
    tc: &TransformedChannel,
    a: &ComplexMatrix,
) -> Result<(ComplexMatrix, ComplexMatrix)> {
    Ok((
        g_matrix(tc, a, User::One, User::Two)?,
        g_matrix(tc, a, User::Two, User::One)?,
    ))
}

/// Cross-link rank sum of the transformed channel under relay map `a`.
pub fn rank_sum(
    tc: &TransformedChannel,
    a: &ComplexMatrix,
    tol: &TolerancePolicy,
) -> Result<usize> {
    let (g12, g21) = g_matrices(tc, a)?;
    let rank = |f: &ComplexMatrix, g: ComplexMatrix| {
        let scale = spectral_norm(f).max(spectral_norm(&g));
        numerical_rank_at_scale(&(f + g), scale, tol)
    };
    Ok(rank(tc.composite(User::One, User::Two), g12)?
        + rank(tc.composite(User::Two, User::One), g21)?)
}

/// `2M - max{N, L}`.
pub fn rank_sum_bound(config: &AntennaConfig) -> i64 {
    2 * config.m as i64 - config.n.max(config.l) as i64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConverseReport {
    pub config: AntennaConfig,
    pub samples: usize,
    pub min_rank_sum: usize,
    pub bound: i64,
    /// Seeds of sampled relay maps whose rank sum fell below the bound.
    pub violations: Vec<u64>,
    /// Per channel use; absent when no plan could be built.
    #[serde(serialize_with = "ser_opt_rational")]
    pub scheme_rank_sum: Option<Rational>,
}

fn ser_opt_rational<S: serde::Serializer>(
    r: &Option<Rational>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    match r {
        Some(r) => s.serialize_str(&format_rational(r)),
        None => s.serialize_none(),
    }
}

impl ConverseReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.min_rank_sum as i64 >= self.bound
    }
}

/// Kinds of relay maps the sample set cycles through after the three fixed
/// entries (zero, identity embedding, scheme map).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleKind {
    Gaussian,
    LowRank,
    RankOne,
    ScaledIdentity,
    /// Convex mix of the maps that cancel one cross link each.
    CrossCancelMix,
    /// Fixed-entry map plus a rank-one perturbation.
    PerturbedAnchor,
}

impl SampleKind {
    pub const CYCLE: [SampleKind; 6] = [
        SampleKind::Gaussian,
        SampleKind::LowRank,
        SampleKind::RankOne,
        SampleKind::ScaledIdentity,
        SampleKind::CrossCancelMix,
        SampleKind::PerturbedAnchor,
    ];
}

fn identity_embedding(rows: usize, cols: usize) -> ComplexMatrix {
    ComplexMatrix::identity(rows, cols)
}

/// `-pinv(Hi0) Hij pinv(H0j)`, which cancels the cross link at `rx` when the
/// relay has enough antennas.
fn cross_cancel(ch: &ChannelInstance, rx: User, tol: &TolerancePolicy) -> Result<ComplexMatrix> {
    let tx = rx.other();
    let left = pseudo_inverse(ch.from_relay(rx), tol)?;
    let right = pseudo_inverse(ch.to_relay(tx), tol)?;
    Ok(-(left * ch.link(rx, tx) * right))
}

/// Random relay map of the given kind on a padded channel.
pub fn sample_relay_map(
    ch: &ChannelInstance,
    kind: SampleKind,
    anchor: &ComplexMatrix,
    seed: u64,
    tol: &TolerancePolicy,
) -> Result<ComplexMatrix> {
    use rand::Rng;
    let (l, n) = (ch.config.l, ch.config.n);
    let mut rng = rng_for(seed, "relay-sample", &[]);
    let g = |label: &str, r: usize, c: usize| gaussian_matrix(seed, label, r, c);
    Ok(match kind {
        SampleKind::Gaussian => g("full", l, n),
        SampleKind::LowRank => {
            let cap = l.min(n).max(1);
            let r = rng.random_range(1..=cap);
            g("left", l, r) * g("right", r, n)
        }
        SampleKind::RankOne => g("left", l, 1) * g("right", 1, n),
        SampleKind::ScaledIdentity => {
            let c = crate::channel::gaussian_entry(seed, "scale", 0, 0);
            identity_embedding(l, n) * c
        }
        SampleKind::CrossCancelMix => {
            let alpha: f64 = rng.random_range(0.0..=1.0);
            let a1 = cross_cancel(ch, User::One, tol)?;
            let a2 = cross_cancel(ch, User::Two, tol)?;
            a1 * num_complex::Complex64::new(alpha, 0.0)
                + a2 * num_complex::Complex64::new(1.0 - alpha, 0.0)
        }
        SampleKind::PerturbedAnchor => {
            let scale: f64 = 10f64.powf(rng.random_range(-6.0..0.0));
            anchor + g("left", l, 1) * g("right", 1, n) * num_complex::Complex64::new(scale, 0.0)
        }
    })
}

/// Generic change of relay antenna basis: `Hj0 -> Hj0 R`, `H0j -> S H0j`,
/// `A -> R^-1 A S^-1`. End-to-end links are unchanged. Block-diagonal
/// (extended) channels need this before the leading-block partition.
fn mix_relay_basis(
    ch: &ChannelInstance,
    a: &ComplexMatrix,
    seed: u64,
) -> Result<(ChannelInstance, ComplexMatrix)> {
    let (l, n) = (ch.config.l, ch.config.n);
    let mix_seed = derive_seed(seed, "relay-basis", &[]);
    let r = gaussian_matrix(mix_seed, "tx", l, l);
    let s = gaussian_matrix(mix_seed, "rx", n, n);
    let singular = || Error::DegenerateChannel("relay basis change is singular".into());
    let r_inv = r.clone().try_inverse().ok_or_else(singular)?;
    let s_inv = s.clone().try_inverse().ok_or_else(singular)?;
    let mut out = ch.clone();
    out.h10 = &ch.h10 * &r;
    out.h20 = &ch.h20 * &r;
    out.h01 = &s * &ch.h01;
    out.h02 = &s * &ch.h02;
    Ok((out, r_inv * a * s_inv))
}

/// Relay map of the scheme, zero-padded to the padded channel, together with
/// the per-use rank sum it attains.
fn scheme_anchor(
    ch: &ChannelInstance,
    padded: &ChannelInstance,
    tc: &TransformedChannel,
    seed: u64,
    opts: &PlanOptions,
) -> Result<Option<(Option<ComplexMatrix>, Rational)>> {
    let run = match build_plan(ch, User::One, opts) {
        Ok(run) => run,
        Err(Error::DegenerateChannel(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let a = pad_relay_matrix(&run.plan.a);
    if !run.extended() {
        let r = rank_sum(tc, &a, &opts.tol)?;
        debug_assert_eq!(padded.config, tc.config);
        return Ok(Some((Some(a), Ratio::from_integer(r as i64))));
    }
    let ext_padded = pad_relay(&run.channel, seed);
    let (mixed, a) = mix_relay_basis(&ext_padded, &a, seed)?;
    let ext_tc = transform(&mixed, &opts.tol)?;
    let r = rank_sum(&ext_tc, &a, &opts.tol)?;
    Ok(Some((
        None,
        Ratio::new(r as i64, run.channel.config.extension as i64),
    )))
}

/// Sample relay maps and check `rank_sum >= 2M - max{N, L}` on each.
///
/// Sample 0 is the zero map, 1 the identity embedding, 2 the scheme's map
/// (the map cancelling the cross link at receiver 1 when the scheme runs over
/// two channel uses), and the rest cycle through [`SampleKind::CYCLE`].
pub fn delta_bound_check(
    ch: &ChannelInstance,
    samples: usize,
    seed: u64,
    opts: &PlanOptions,
    exec: Execution,
) -> Result<ConverseReport> {
    if samples == 0 {
        return Err(Error::InvalidInput(
            "at least one sample is required".into(),
        ));
    }
    if ch.config.extension != 1 {
        return Err(Error::InvalidInput(
            "converse check expects an unextended channel".into(),
        ));
    }
    let tol = opts.tol;
    let padded = pad_relay(ch, seed);
    let tc = transform(&padded, &tol)?;
    let (l, n) = (padded.config.l, padded.config.n);

    let anchor = scheme_anchor(ch, &padded, &tc, seed, opts)?;
    let scheme_rank_sum = anchor.as_ref().map(|(_, r)| *r);
    let fixed_third = match anchor.and_then(|(a, _)| a) {
        Some(a) => a,
        None => cross_cancel(&padded, User::One, &tol)?,
    };

    let bound = rank_sum_bound(&padded.config);
    let ranks = try_map_indices(exec, samples, |i| {
        let sample_seed = derive_seed(seed, "converse-sample", &[i as u64]);
        let a = match i {
            0 => ComplexMatrix::zeros(l, n),
            1 => identity_embedding(l, n),
            2 => fixed_third.clone(),
            _ => {
                let kind = SampleKind::CYCLE[(i - 3) % SampleKind::CYCLE.len()];
                sample_relay_map(&padded, kind, &fixed_third, sample_seed, &tol)?
            }
        };
        Ok((sample_seed, rank_sum(&tc, &a, &tol)?))
    })?;

    let min_rank_sum = ranks.iter().map(|&(_, r)| r).min().unwrap_or(0);
    let violations = ranks
        .iter()
        .filter(|&&(_, r)| (r as i64) < bound)
        .map(|&(s, _)| s)
        .collect();
    Ok(ConverseReport {
        config: ch.config,
        samples,
        min_rank_sum,
        bound,
        violations,
        scheme_rank_sum,
    })
}
