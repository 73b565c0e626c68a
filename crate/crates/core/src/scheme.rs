//! Linear interference neutralization with a memoryless relay `X0 = A Y0`.
//!
//! At the corner where user `f` (the "full" user) sends `M` streams, the other
//! user `p` sends `K` streams. The first `K` streams of both users are
//! neutralized at the unintended receiver: receiver `f` sees no interference,
//! and receiver `p` decodes its `K` streams jointly with the `M - K` streams of
//! user `f` that still reach it.
//!
//! Stream layout inside each beamformer: aligned streams `0..k1`, non-aligned
//! neutralized streams `k1..K`, and (full user only) completion streams
//! `K..M`. Relay columns of `T` and rows of `U` follow the same order:
//! aligned, user-1 non-aligned, user-2 non-aligned.

use num_rational::Ratio;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::channel::{
    decode_matrix, encode_matrix, extend_channel, gaussian_matrix, AntennaConfig, ChannelInstance,
    User, WireMatrix,
};
use crate::dofregion::{format_rational, Rational};
use crate::error::{Error, Result};
use crate::numerics::{
    columns, hstack, null_space_basis, numerical_rank, orthonormal_completion, pseudo_inverse,
    rows, vstack, ComplexMatrix, TolerancePolicy,
};
use crate::seeding::derive_seed;

/// Stream selections and completions are resampled at most this many times.
pub const MAX_COMPLETION_RETRIES: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamAllocation {
    /// Streams aligned at the relay and neutralized at both receivers.
    pub k1: usize,
    /// Non-aligned neutralized streams per user.
    pub k2: usize,
    pub d1: usize,
    pub d2: usize,
    /// The user sending `M` streams.
    pub corner: User,
}

impl StreamAllocation {
    /// Neutralized streams per user.
    pub fn k(&self) -> usize {
        self.k1 + self.k2
    }

    /// Linear combinations the relay separates.
    pub fn relay_streams(&self) -> usize {
        self.k1 + 2 * self.k2
    }

    pub fn streams(&self, user: User) -> usize {
        match user {
            User::One => self.d1,
            User::Two => self.d2,
        }
    }
}

/// Closed-form neutralization count per user: `min{L, M, N/2}` when the
/// relay has at most as many transmit as receive antennas, `min{L/2, N, M}`
/// otherwise.
pub fn neutralization_count(config: &AntennaConfig) -> Rational {
    let (m, n, l) = (config.m as i64, config.n as i64, config.l as i64);
    let r = |x: i64| Ratio::from_integer(x);
    if l <= n {
        r(l).min(r(m)).min(Ratio::new(n, 2))
    } else {
        Ratio::new(l, 2).min(r(n)).min(r(m))
    }
}

pub fn allocate_streams(config: &AntennaConfig, corner: User) -> Result<StreamAllocation> {
    config.validate()?;
    let k = neutralization_count(config);
    if !k.is_integer() {
        return Err(Error::NeedsExtension {
            k: format_rational(&k),
        });
    }
    let k = k.to_integer() as usize;
    let (m, n, l) = (config.m, config.n, config.l);
    let (k1, k2) = if l <= n {
        (0, k)
    } else {
        // Alignment solutions with a nonzero beam part form a space of
        // dimension min{L - N, 2M - N}; the rest only move the relay output.
        let k1_cap = (l - n).min(n).min(m).min((2 * m).saturating_sub(n));
        let k2_cap = (n / 2).min(l).min(m);
        let mut best: Option<(usize, usize)> = None;
        for k1 in 0..=k1_cap {
            for k2 in 0..=k2_cap {
                if k1 + k2 > m || k1 + 2 * k2 > n {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((b1, b2)) => k1 + k2 > b1 + b2 || (k1 + k2 == b1 + b2 && k1 > b1),
                };
                if better {
                    best = Some((k1, k2));
                }
            }
        }
        let (k1, k2) = best.unwrap_or((0, 0));
        debug_assert_eq!(
            k1 + k2,
            k,
            "enumeration disagrees with closed form for {config}"
        );
        (k1, k2)
    };
    let (d1, d2) = match corner {
        User::One => (m, k),
        User::Two => (k, m),
    };
    Ok(StreamAllocation {
        k1,
        k2,
        d1,
        d2,
        corner,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingPlan {
    pub v1: ComplexMatrix,
    pub v2: ComplexMatrix,
    /// L x (k1 + 2 k2)
    pub t: ComplexMatrix,
    /// (k1 + 2 k2) x N
    pub u: ComplexMatrix,
    /// L x N, equal to `t * u`
    pub a: ComplexMatrix,
    pub allocation: StreamAllocation,
}

impl BeamformingPlan {
    pub fn beamformer(&self, user: User) -> &ComplexMatrix {
        match user {
            User::One => &self.v1,
            User::Two => &self.v2,
        }
    }

    /// Relay observation directions the relay separates with `U`.
    pub fn relay_selected_columns(&self, ch: &ChannelInstance) -> ComplexMatrix {
        let al = &self.allocation;
        let g1 = ch.h01.clone() * &self.v1;
        let g2 = ch.h02.clone() * &self.v2;
        hstack(&[
            &columns(&g1, 0, al.k1),
            &columns(&g1, al.k1, al.k2),
            &columns(&g2, al.k1, al.k2),
        ])
    }

    fn check_shapes(&self, config: &AntennaConfig) -> Result<()> {
        let al = &self.allocation;
        let r = al.relay_streams();
        let expect = [
            ("V1", &self.v1, (config.m, al.d1)),
            ("V2", &self.v2, (config.m, al.d2)),
            ("T", &self.t, (config.l, r)),
            ("U", &self.u, (r, config.n)),
            ("A", &self.a, (config.l, config.n)),
        ];
        for (name, mat, (er, ec)) in expect {
            if mat.shape() != (er, ec) {
                return Err(Error::DimensionMismatch {
                    field: name.into(),
                    expected_rows: er,
                    expected_cols: ec,
                    found: format!("{}x{}", mat.nrows(), mat.ncols()),
                });
            }
        }
        Ok(())
    }
}

/// Neutralized stream pairs `(t; v)` for one user, taken from the null space
/// of `[Hi0 Hij]` and kept orthogonal to `exclude` (the aligned directions).
fn neutralizing_pairs(
    ch: &ChannelInstance,
    user: User,
    count: usize,
    exclude: &ComplexMatrix,
    mix_seed: u64,
    tol: &TolerancePolicy,
) -> Result<(ComplexMatrix, ComplexMatrix)> {
    let (m, l) = (ch.config.m, ch.config.l);
    let rx = user.other();
    let system = hstack(&[ch.from_relay(rx), ch.link(rx, user)]);
    let mut basis = null_space_basis(&system, tol)?;
    if exclude.ncols() > 0 && basis.ncols() > 0 {
        let coords = null_space_basis(&(exclude.adjoint() * &basis), tol)?;
        basis = &basis * coords;
    }
    if basis.ncols() < count {
        return Err(Error::DegenerateChannel(format!(
            "null space of [H{}0 H{}{}] has {} usable directions, need {count}",
            rx,
            rx,
            user,
            basis.ncols()
        )));
    }
    let sel = generic_selection(
        &basis,
        count,
        mix_seed,
        match user {
            User::One => "pairs1",
            User::Two => "pairs2",
        },
    );
    let mut t = rows(&sel, 0, l);
    let mut v = rows(&sel, l, m);
    normalize_by_beam(&mut [&mut t], &mut v)?;
    Ok((t, v))
}

/// `count` generic combinations of the basis columns. Block-diagonal channels
/// (symbol extensions) have block-structured bases, so taking leading columns
/// could place every stream in one block.
fn generic_selection(basis: &ComplexMatrix, count: usize, seed: u64, label: &str) -> ComplexMatrix {
    if basis.ncols() == count {
        return basis.clone();
    }
    basis * gaussian_matrix(seed, label, basis.ncols(), count)
}

/// Scale columns so each beam column of `v` has unit norm, applying the same
/// factor to the companion matrices.
fn normalize_by_beam(companions: &mut [&mut ComplexMatrix], v: &mut ComplexMatrix) -> Result<()> {
    for c in 0..v.ncols() {
        let norm = v.column(c).norm();
        if norm.is_nan() || norm <= 1e-300 {
            return Err(Error::DegenerateChannel(
                "zero beamforming direction".into(),
            ));
        }
        let s = 1.0 / norm;
        v.column_mut(c).scale_mut(s);
        for m in companions.iter_mut() {
            m.column_mut(c).scale_mut(s);
        }
    }
    Ok(())
}

/// Aligned triples `(t; v1; v2)` solving
/// `[[H20 H21 0]; [H10 0 H12]; [0 H01 -H02]] (t; v1; v2) = 0`.
fn aligned_triples(
    ch: &ChannelInstance,
    count: usize,
    mix_seed: u64,
    tol: &TolerancePolicy,
) -> Result<(ComplexMatrix, ComplexMatrix, ComplexMatrix)> {
    let (m, n, l) = (ch.config.m, ch.config.n, ch.config.l);
    let zmm = ComplexMatrix::zeros(m, m);
    let system = vstack(&[
        &hstack(&[&ch.h20, &ch.h21, &zmm]),
        &hstack(&[&ch.h10, &zmm, &ch.h12]),
        &hstack(&[&ComplexMatrix::zeros(n, l), &ch.h01, &(-ch.h02.clone())]),
    ]);
    let basis = null_space_basis(&system, tol)?;
    if basis.ncols() < count {
        return Err(Error::DegenerateChannel(format!(
            "relay alignment system has {} solutions, need {count}",
            basis.ncols()
        )));
    }
    let sel = generic_selection(&basis, count, mix_seed, "aligned");
    let mut t = rows(&sel, 0, l);
    let mut v1 = rows(&sel, l, m);
    let mut v2 = rows(&sel, l + m, m);
    normalize_by_beam(&mut [&mut t, &mut v2], &mut v1)?;
    Ok((t, v1, v2))
}

fn build_neutralizing(
    ch: &ChannelInstance,
    alloc: &StreamAllocation,
    tol: &TolerancePolicy,
) -> Result<BeamformingPlan> {
    ch.validate()?;
    let cfg = ch.config;
    let (k1, k2, k) = (alloc.k1, alloc.k2, alloc.k());
    let full = alloc.corner;
    if alloc.streams(full) != cfg.m || alloc.streams(full.other()) != k || k > cfg.m {
        return Err(Error::InvalidInput(
            "allocation does not match configuration".into(),
        ));
    }
    if alloc.relay_streams() > cfg.n {
        return Err(Error::InvalidInput(
            "relay cannot separate that many streams".into(),
        ));
    }

    let mut last_failure = String::from("no attempt made");
    for attempt in 0..=MAX_COMPLETION_RETRIES {
        let mix_seed = derive_seed(ch.seed, "selection", &[attempt]);
        let (t_al, v1_al, v2_al) = if k1 > 0 {
            aligned_triples(ch, k1, mix_seed, tol)?
        } else {
            (
                ComplexMatrix::zeros(cfg.l, 0),
                ComplexMatrix::zeros(cfg.m, 0),
                ComplexMatrix::zeros(cfg.m, 0),
            )
        };
        let (t1, v1_na) =
            neutralizing_pairs(ch, User::One, k2, &vstack(&[&t_al, &v1_al]), mix_seed, tol)?;
        let (t2, v2_na) =
            neutralizing_pairs(ch, User::Two, k2, &vstack(&[&t_al, &v2_al]), mix_seed, tol)?;

        let v1_neut = hstack(&[&v1_al, &v1_na]);
        let v2_neut = hstack(&[&v2_al, &v2_na]);
        let t = hstack(&[&t_al, &t1, &t2]);

        let g_sel = hstack(&[
            &(ch.h01.clone() * &v1_al),
            &(ch.h01.clone() * &v1_na),
            &(ch.h02.clone() * &v2_na),
        ]);
        let u = pseudo_inverse(&g_sel, tol)?;
        let a = &t * &u;
        let extra = cfg.m - k;
        let completion = if extra > 0 {
            let seed = derive_seed(ch.seed, "completion", &[attempt]);
            let raw = gaussian_matrix(seed, "completion", cfg.m, extra);
            let neut = match full {
                User::One => &v1_neut,
                User::Two => &v2_neut,
            };
            orthonormal_completion(neut, &raw, tol)?
        } else {
            ComplexMatrix::zeros(cfg.m, 0)
        };
        let (v1, v2) = match full {
            User::One => (hstack(&[&v1_neut, &completion]), v2_neut.clone()),
            User::Two => (v1_neut.clone(), hstack(&[&v2_neut, &completion])),
        };
        let plan = BeamformingPlan {
            v1,
            v2,
            t,
            u,
            a,
            allocation: *alloc,
        };
        let full_rank = [&plan.v1, &plan.v2].iter().all(|v| {
            numerical_rank(v, tol)
                .map(|r| r == v.ncols())
                .unwrap_or(false)
        });
        if !full_rank {
            last_failure = "beamformer lost column rank".into();
            continue;
        }
        let report = verify_plan(ch, &plan, tol)?;
        if report.passed() {
            return Ok(plan);
        }
        last_failure = format!(
            "verification failed (relay rank {}/{}, residual {:.3e})",
            report.relay_decode_rank,
            alloc.relay_streams(),
            report.max_neutralization_residual
        );
    }
    Err(Error::DegenerateChannel(format!(
        "{last_failure} after {MAX_COMPLETION_RETRIES} retries"
    )))
}

/// Separate neutralization at each receiver; requires `L <= N`.
pub fn build_case1(
    ch: &ChannelInstance,
    alloc: &StreamAllocation,
    tol: &TolerancePolicy,
) -> Result<BeamformingPlan> {
    if ch.config.l > ch.config.n || alloc.k1 != 0 {
        return Err(Error::InvalidInput(
            "separate neutralization needs L <= N and no aligned streams".into(),
        ));
    }
    build_neutralizing(ch, alloc, tol)
}

/// Alignment at the relay plus separate neutralization; requires `L > N`.
pub fn build_case2(
    ch: &ChannelInstance,
    alloc: &StreamAllocation,
    tol: &TolerancePolicy,
) -> Result<BeamformingPlan> {
    if ch.config.l <= ch.config.n {
        return Err(Error::InvalidInput("relay alignment needs L > N".into()));
    }
    build_neutralizing(ch, alloc, tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlanOptions {
    pub tol: TolerancePolicy,
    /// Run over two channel uses even when the stream counts are integral.
    pub force_extension: bool,
}

/// A plan together with the channel it was built on (the two-use extension
/// of the input when half-integral stream counts required it).
#[derive(Debug, Clone)]
pub struct SchemeRun {
    pub channel: ChannelInstance,
    pub plan: BeamformingPlan,
    pub report: VerificationReport,
}

impl SchemeRun {
    pub fn extended(&self) -> bool {
        self.channel.config.extension > 1
    }
}

pub fn build_plan(ch: &ChannelInstance, corner: User, opts: &PlanOptions) -> Result<SchemeRun> {
    ch.validate()?;
    let needs_ext = match allocate_streams(&ch.config, corner) {
        Ok(_) => false,
        Err(Error::NeedsExtension { .. }) => true,
        Err(e) => return Err(e),
    };
    let channel = if ch.config.extension == 1 && (needs_ext || opts.force_extension) {
        extend_channel(ch, 2)?
    } else {
        ch.clone()
    };
    let alloc = allocate_streams(&channel.config, corner)?;
    let plan = if channel.config.l <= channel.config.n {
        build_case1(&channel, &alloc, &opts.tol)?
    } else {
        build_case2(&channel, &alloc, &opts.tol)?
    };
    let report = verify_plan(&channel, &plan, &opts.tol)?;
    Ok(SchemeRun {
        channel,
        plan,
        report,
    })
}

/// End-to-end stream matrices at both receivers: column `(i, d)` at receiver
/// `j` is `(Hji + Hj0 A H0i) v_id`, user-1 streams first.
pub fn effective_channels(
    ch: &ChannelInstance,
    plan: &BeamformingPlan,
) -> (ComplexMatrix, ComplexMatrix) {
    let e = |rx: User| {
        let cols: Vec<ComplexMatrix> = User::BOTH
            .iter()
            .map(|&tx| {
                let through_relay = ch.from_relay(rx) * &plan.a * ch.to_relay(tx);
                (ch.link(rx, tx) + through_relay) * plan.beamformer(tx)
            })
            .collect();
        hstack(&[&cols[0], &cols[1]])
    };
    (e(User::One), e(User::Two))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub corner: User,
    pub max_neutralization_residual: f64,
    pub relay_decode_rank: usize,
    pub relay_decode_required: usize,
    /// Rank of the desired columns at the receiver of the `M`-stream user.
    pub rx_full_desired_rank: usize,
    /// Rank of desired plus residual-interference columns at the other receiver.
    pub rx_partial_joint_rank: usize,
    /// Per receiver, index 0 is receiver 1.
    pub decodable: [bool; 2],
    /// Streams per channel use.
    #[serde(serialize_with = "ser_pair")]
    pub achieved_pair: (Rational, Rational),
    pub extension: usize,
    pub relay_factorization_residual: f64,
}

fn ser_pair<S: serde::Serializer>(
    p: &(Rational, Rational),
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    [format_rational(&p.0), format_rational(&p.1)].serialize(s)
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.decodable[0]
            && self.decodable[1]
            && self.relay_decode_rank == self.relay_decode_required
    }

    pub fn achieved_sum(&self) -> Rational {
        self.achieved_pair.0 + self.achieved_pair.1
    }
}

/// Neutralization residual of one effective column relative to the two
/// paths that are meant to cancel.
fn relative_residual(direct: &ComplexMatrix, relayed: &ComplexMatrix, col: usize) -> f64 {
    let d = direct.column(col);
    let r = relayed.column(col);
    let scale = d.norm() + r.norm();
    let resid = (d + r).norm();
    if scale > 0.0 {
        resid / scale
    } else {
        0.0
    }
}

pub fn verify_plan(
    ch: &ChannelInstance,
    plan: &BeamformingPlan,
    tol: &TolerancePolicy,
) -> Result<VerificationReport> {
    plan.check_shapes(&ch.config)?;
    let al = plan.allocation;
    let (m, k) = (ch.config.m, al.k());
    let full = al.corner;
    let partial = full.other();
    let rank = |x: &ComplexMatrix| numerical_rank(x, tol);

    // Stream `d` of user `tx` at receiver `rx`.
    let paths = |rx: User, tx: User| {
        let v = plan.beamformer(tx);
        let direct = ch.link(rx, tx) * v;
        let relayed = ch.from_relay(rx) * &plan.a * ch.to_relay(tx) * v;
        (direct, relayed)
    };

    let mut residual: [f64; 2] = [0.0, 0.0];
    // At the full user's receiver every stream of the partial user is
    // neutralized; at the partial receiver the first K full-user streams are.
    for (rx, tx, count) in [(full, partial, al.streams(partial)), (partial, full, k)] {
        let (direct, relayed) = paths(rx, tx);
        for c in 0..count {
            residual[rx.index()] =
                residual[rx.index()].max(relative_residual(&direct, &relayed, c));
        }
    }

    let relay_decode_rank = rank(&plan.relay_selected_columns(ch))?;

    let (e1, e2) = effective_channels(ch, plan);
    let eff = |rx: User| match rx {
        User::One => &e1,
        User::Two => &e2,
    };
    let offset = |tx: User| match tx {
        User::One => 0,
        User::Two => al.d1,
    };
    let e_full = eff(full);
    let rx_full_desired_rank = rank(&columns(e_full, offset(full), al.streams(full)))?;
    let e_part = eff(partial);
    let joint = hstack(&[
        &columns(e_part, offset(partial), al.streams(partial)),
        &columns(e_part, offset(full) + k, al.streams(full) - k),
    ]);
    let rx_partial_joint_rank = rank(&joint)?;

    let res_ok = |rx: User| residual[rx.index()] <= tol.residual_rel_tol;
    let mut decodable = [false; 2];
    decodable[full.index()] = rx_full_desired_rank == al.streams(full) && res_ok(full);
    decodable[partial.index()] = rx_partial_joint_rank == m && res_ok(partial);

    let tu = &plan.t * &plan.u;
    let a_norm = plan.a.norm().max(tu.norm());
    let relay_factorization_residual = if a_norm > 0.0 {
        (&plan.a - tu).norm() / a_norm
    } else {
        0.0
    };

    let ext = ch.config.extension as i64;
    Ok(VerificationReport {
        corner: full,
        max_neutralization_residual: residual[0].max(residual[1]),
        relay_decode_rank,
        relay_decode_required: al.relay_streams(),
        rx_full_desired_rank,
        rx_partial_joint_rank,
        decodable,
        achieved_pair: (Ratio::new(al.d1 as i64, ext), Ratio::new(al.d2 as i64, ext)),
        extension: ch.config.extension,
        relay_factorization_residual,
    })
}

#[derive(Serialize, Deserialize)]
struct PlanFile {
    allocation: StreamAllocation,
    #[serde(rename = "V1")]
    v1: WireMatrix,
    #[serde(rename = "V2")]
    v2: WireMatrix,
    #[serde(rename = "T")]
    t: WireMatrix,
    #[serde(rename = "U")]
    u: WireMatrix,
    #[serde(rename = "A")]
    a: WireMatrix,
}

pub fn write_plan(plan: &BeamformingPlan) -> Result<Vec<u8>> {
    let file = PlanFile {
        allocation: plan.allocation,
        v1: encode_matrix(&plan.v1),
        v2: encode_matrix(&plan.v2),
        t: encode_matrix(&plan.t),
        u: encode_matrix(&plan.u),
        a: encode_matrix(&plan.a),
    };
    let mut bytes = serde_json::to_vec(&file).map_err(Error::from_json)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Parse a plan for a channel with `config`, checking `A = T U`.
pub fn read_plan(
    bytes: &[u8],
    config: &AntennaConfig,
    tol: &TolerancePolicy,
) -> Result<BeamformingPlan> {
    let file: PlanFile = serde_json::from_slice(bytes).map_err(Error::from_json)?;
    let al = file.allocation;
    let r = al.relay_streams();
    let plan = BeamformingPlan {
        v1: decode_matrix("V1", &file.v1, config.m, al.d1)?,
        v2: decode_matrix("V2", &file.v2, config.m, al.d2)?,
        t: decode_matrix("T", &file.t, config.l, r)?,
        u: decode_matrix("U", &file.u, r, config.n)?,
        a: decode_matrix("A", &file.a, config.l, config.n)?,
        allocation: al,
    };
    let tu = &plan.t * &plan.u;
    let scale = plan.a.norm().max(tu.norm());
    let gap = (&plan.a - tu).norm();
    if !(gap.is_zero() || gap <= tol.residual_rel_tol * scale) {
        return Err(Error::InvalidInput(format!(
            "stored relay matrix differs from T*U (relative gap {:.3e})",
            gap / scale
        )));
    }
    Ok(plan)
}
