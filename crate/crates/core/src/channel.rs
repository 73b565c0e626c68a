//! The two-user MIMO interference channel with an instantaneous relay.
//!
//! Relay:      `Y0 = H01 X1 + H02 X2 + Z0`            (N x 1)
//! Receiver j: `Yj = Hj1 X1 + Hj2 X2 + Hj0 X0 + Zj`   (M x 1)

use std::fmt;

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{block_diag2, check_finite, ComplexMatrix};
use crate::seeding::{derive_seed, rng_for};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum User {
    One,
    Two,
}

impl From<User> for u8 {
    fn from(u: User) -> u8 {
        u.index() as u8 + 1
    }
}

impl TryFrom<u8> for User {
    type Error = Error;

    fn try_from(n: u8) -> Result<User> {
        User::from_number(n)
    }
}

impl User {
    pub const BOTH: [User; 2] = [User::One, User::Two];

    pub fn other(self) -> User {
        match self {
            User::One => User::Two,
            User::Two => User::One,
        }
    }

    pub fn index(self) -> usize {
        match self {
            User::One => 0,
            User::Two => 1,
        }
    }

    pub fn from_number(n: u8) -> Result<User> {
        match n {
            1 => Ok(User::One),
            2 => Ok(User::Two),
            _ => Err(Error::InvalidInput(format!("user must be 1 or 2, got {n}"))),
        }
    }
}

impl fmt::Display for User {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index() + 1)
    }
}

/// Antenna counts as seen by the matrices: `m` at every transmitter and
/// receiver, `n` relay receive antennas, `l` relay transmit antennas. Under a
/// two-use extension all three are already doubled and `extension == 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AntennaConfig {
    pub m: usize,
    pub n: usize,
    pub l: usize,
    pub extension: usize,
}

impl AntennaConfig {
    pub fn new(m: usize, n: usize, l: usize) -> Result<Self> {
        let c = Self {
            m,
            n,
            l,
            extension: 1,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidInput("m must be at least 1".into()));
        }
        match self.extension {
            1 => Ok(()),
            2 if self.m.is_multiple_of(2)
                && self.n.is_multiple_of(2)
                && self.l.is_multiple_of(2) =>
            {
                Ok(())
            }
            2 => Err(Error::InvalidInput(
                "extended configuration must have even antenna counts".into(),
            )),
            e => Err(Error::InvalidInput(format!(
                "extension must be 1 or 2, got {e}"
            ))),
        }
    }

    /// Per-channel-use antenna counts.
    pub fn base(&self) -> AntennaConfig {
        AntennaConfig {
            m: self.m / self.extension,
            n: self.n / self.extension,
            l: self.l / self.extension,
            extension: 1,
        }
    }

    pub(crate) fn extended(&self) -> AntennaConfig {
        AntennaConfig {
            m: 2 * self.m,
            n: 2 * self.n,
            l: 2 * self.l,
            extension: 2,
        }
    }
}

impl fmt::Display for AntennaConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.m, self.n, self.l)?;
        if self.extension > 1 {
            write!(f, "x{}", self.extension)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixName {
    H01,
    H02,
    H10,
    H20,
    H11,
    H12,
    H21,
    H22,
}

impl MatrixName {
    pub const ALL: [MatrixName; 8] = [
        MatrixName::H01,
        MatrixName::H02,
        MatrixName::H10,
        MatrixName::H20,
        MatrixName::H11,
        MatrixName::H12,
        MatrixName::H21,
        MatrixName::H22,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MatrixName::H01 => "h01",
            MatrixName::H02 => "h02",
            MatrixName::H10 => "h10",
            MatrixName::H20 => "h20",
            MatrixName::H11 => "h11",
            MatrixName::H12 => "h12",
            MatrixName::H21 => "h21",
            MatrixName::H22 => "h22",
        }
    }

    pub fn shape(self, c: &AntennaConfig) -> (usize, usize) {
        match self {
            MatrixName::H01 | MatrixName::H02 => (c.n, c.m),
            MatrixName::H10 | MatrixName::H20 => (c.m, c.l),
            _ => (c.m, c.m),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelInstance {
    pub config: AntennaConfig,
    pub h01: ComplexMatrix,
    pub h02: ComplexMatrix,
    pub h10: ComplexMatrix,
    pub h20: ComplexMatrix,
    pub h11: ComplexMatrix,
    pub h12: ComplexMatrix,
    pub h21: ComplexMatrix,
    pub h22: ComplexMatrix,
    pub seed: u64,
}

impl ChannelInstance {
    pub fn get(&self, name: MatrixName) -> &ComplexMatrix {
        match name {
            MatrixName::H01 => &self.h01,
            MatrixName::H02 => &self.h02,
            MatrixName::H10 => &self.h10,
            MatrixName::H20 => &self.h20,
            MatrixName::H11 => &self.h11,
            MatrixName::H12 => &self.h12,
            MatrixName::H21 => &self.h21,
            MatrixName::H22 => &self.h22,
        }
    }

    fn get_mut(&mut self, name: MatrixName) -> &mut ComplexMatrix {
        match name {
            MatrixName::H01 => &mut self.h01,
            MatrixName::H02 => &mut self.h02,
            MatrixName::H10 => &mut self.h10,
            MatrixName::H20 => &mut self.h20,
            MatrixName::H11 => &mut self.h11,
            MatrixName::H12 => &mut self.h12,
            MatrixName::H21 => &mut self.h21,
            MatrixName::H22 => &mut self.h22,
        }
    }

    /// Transmitter `tx` to relay, `H0i` (N x M).
    pub fn to_relay(&self, tx: User) -> &ComplexMatrix {
        match tx {
            User::One => &self.h01,
            User::Two => &self.h02,
        }
    }

    /// Relay to receiver `rx`, `Hj0` (M x L).
    pub fn from_relay(&self, rx: User) -> &ComplexMatrix {
        match rx {
            User::One => &self.h10,
            User::Two => &self.h20,
        }
    }

    /// Direct or cross link `Hji` from transmitter `tx` to receiver `rx`.
    pub fn link(&self, rx: User, tx: User) -> &ComplexMatrix {
        match (rx, tx) {
            (User::One, User::One) => &self.h11,
            (User::One, User::Two) => &self.h12,
            (User::Two, User::One) => &self.h21,
            (User::Two, User::Two) => &self.h22,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        for name in MatrixName::ALL {
            let (r, c) = name.shape(&self.config);
            let m = self.get(name);
            if m.shape() != (r, c) {
                return Err(Error::DimensionMismatch {
                    field: name.as_str().into(),
                    expected_rows: r,
                    expected_cols: c,
                    found: format!("{}x{}", m.nrows(), m.ncols()),
                });
            }
            check_finite(m)?;
        }
        Ok(())
    }
}

/// One unit-variance circularly-symmetric complex Gaussian entry, keyed by
/// `(seed, label, row, col)`.
pub fn gaussian_entry(seed: u64, label: &str, row: usize, col: usize) -> Complex64 {
    let mut rng = rng_for(seed, label, &[row as u64, col as u64]);
    let re: f64 = StandardNormal.sample(&mut rng);
    let im: f64 = StandardNormal.sample(&mut rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn gaussian_matrix(seed: u64, label: &str, rows: usize, cols: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |r, c| gaussian_entry(seed, label, r, c))
}

pub fn sample_channel(config: AntennaConfig, seed: u64) -> Result<ChannelInstance> {
    config.validate()?;
    if config.extension != 1 {
        return Err(Error::InvalidInput(
            "sample an unextended channel and call extend_channel".into(),
        ));
    }
    let draw = |name: MatrixName| {
        let (r, c) = name.shape(&config);
        gaussian_matrix(seed, name.as_str(), r, c)
    };
    Ok(ChannelInstance {
        config,
        h01: draw(MatrixName::H01),
        h02: draw(MatrixName::H02),
        h10: draw(MatrixName::H10),
        h20: draw(MatrixName::H20),
        h11: draw(MatrixName::H11),
        h12: draw(MatrixName::H12),
        h21: draw(MatrixName::H21),
        h22: draw(MatrixName::H22),
        seed,
    })
}

/// Two-use symbol extension: every matrix becomes `diag(H, P H Q)`.
///
/// The second use sees a different generic realization of each link, with
/// `P` and `Q` square Gaussian matrices keyed by the seed and matrix name.
/// Rank is preserved. Repeating `H` unchanged would make half-integral
/// points unreachable: with scalar links every matrix commutes with the
/// relay map, and the residual interference aligns with the desired stream.
pub fn extend_channel(ch: &ChannelInstance, factor: usize) -> Result<ChannelInstance> {
    if factor != 2 || ch.config.extension != 1 {
        return Err(Error::UnsupportedFactor(factor));
    }
    let mut out = ch.clone();
    out.config = ch.config.extended();
    for name in MatrixName::ALL {
        let h = ch.get(name);
        let (rows, cols) = h.shape();
        let label = name.as_str();
        let p = gaussian_matrix(derive_seed(ch.seed, "slot2-left", &[]), label, rows, rows);
        let q = gaussian_matrix(derive_seed(ch.seed, "slot2-right", &[]), label, cols, cols);
        *out.get_mut(name) = block_diag2(h, &(p * h * q));
    }
    Ok(out)
}

pub(crate) type WireMatrix = Vec<Vec<[f64; 2]>>;

pub(crate) fn encode_matrix(m: &ComplexMatrix) -> WireMatrix {
    (0..m.nrows())
        .map(|r| {
            (0..m.ncols())
                .map(|c| [m[(r, c)].re, m[(r, c)].im])
                .collect()
        })
        .collect()
}

pub(crate) fn decode_matrix(
    field: &str,
    wire: &WireMatrix,
    rows: usize,
    cols: usize,
) -> Result<ComplexMatrix> {
    let mismatch = || Error::DimensionMismatch {
        field: field.into(),
        expected_rows: rows,
        expected_cols: cols,
        found: match wire.first() {
            Some(r) => format!("{}x{}", wire.len(), r.len()),
            None => "0 rows".into(),
        },
    };
    if wire.len() != rows || wire.iter().any(|r| r.len() != cols) {
        return Err(mismatch());
    }
    let m = ComplexMatrix::from_fn(rows, cols, |r, c| {
        let [re, im] = wire[r][c];
        Complex64::new(re, im)
    });
    check_finite(&m)?;
    Ok(m)
}

#[derive(Serialize, Deserialize)]
struct MatricesFile {
    h01: WireMatrix,
    h02: WireMatrix,
    h10: WireMatrix,
    h20: WireMatrix,
    h11: WireMatrix,
    h12: WireMatrix,
    h21: WireMatrix,
    h22: WireMatrix,
}

#[derive(Serialize, Deserialize)]
struct ChannelFile {
    m: usize,
    n: usize,
    l: usize,
    extension: usize,
    seed: u64,
    matrices: MatricesFile,
}

pub fn write_channel(ch: &ChannelInstance) -> Result<Vec<u8>> {
    ch.validate()?;
    let file = ChannelFile {
        m: ch.config.m,
        n: ch.config.n,
        l: ch.config.l,
        extension: ch.config.extension,
        seed: ch.seed,
        matrices: MatricesFile {
            h01: encode_matrix(&ch.h01),
            h02: encode_matrix(&ch.h02),
            h10: encode_matrix(&ch.h10),
            h20: encode_matrix(&ch.h20),
            h11: encode_matrix(&ch.h11),
            h12: encode_matrix(&ch.h12),
            h21: encode_matrix(&ch.h21),
            h22: encode_matrix(&ch.h22),
        },
    };
    let mut bytes = serde_json::to_vec(&file).map_err(Error::from_json)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn read_channel(bytes: &[u8]) -> Result<ChannelInstance> {
    let file: ChannelFile = serde_json::from_slice(bytes).map_err(Error::from_json)?;
    let config = AntennaConfig {
        m: file.m,
        n: file.n,
        l: file.l,
        extension: file.extension,
    };
    config.validate()?;
    let decode = |name: MatrixName, wire: &WireMatrix| {
        let (r, c) = name.shape(&config);
        decode_matrix(name.as_str(), wire, r, c)
    };
    let mf = &file.matrices;
    Ok(ChannelInstance {
        config,
        h01: decode(MatrixName::H01, &mf.h01)?,
        h02: decode(MatrixName::H02, &mf.h02)?,
        h10: decode(MatrixName::H10, &mf.h10)?,
        h20: decode(MatrixName::H20, &mf.h20)?,
        h11: decode(MatrixName::H11, &mf.h11)?,
        h12: decode(MatrixName::H12, &mf.h12)?,
        h21: decode(MatrixName::H21, &mf.h21)?,
        h22: decode(MatrixName::H22, &mf.h22)?,
        seed: file.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{columns, numerical_rank, rows, TolerancePolicy};
    use proptest::prelude::*;

    fn cfg(m: usize, n: usize, l: usize) -> AntennaConfig {
        AntennaConfig::new(m, n, l).unwrap()
    }

    #[test]
    fn dimensions_follow_config() {
        let ch = sample_channel(cfg(4, 4, 2), 1).unwrap();
        assert_eq!(ch.h01.shape(), (4, 4));
        assert_eq!(ch.h10.shape(), (4, 2));
        assert_eq!(ch.h11.shape(), (4, 4));
        let ch = sample_channel(cfg(3, 1, 0), 1).unwrap();
        assert_eq!(ch.h02.shape(), (1, 3));
        assert_eq!(ch.h20.shape(), (3, 0));
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_channel(cfg(4, 4, 2), 99).unwrap();
        let b = sample_channel(cfg(4, 4, 2), 99).unwrap();
        assert_eq!(a, b);
        let c = sample_channel(cfg(4, 4, 2), 100).unwrap();
        assert_ne!(a.h11, c.h11);
    }

    #[test]
    fn entries_are_keyed_per_position() {
        // A larger configuration reproduces the smaller one's overlapping entries.
        let small = sample_channel(cfg(2, 2, 2), 5).unwrap();
        let big = sample_channel(cfg(3, 4, 4), 5).unwrap();
        assert_eq!(small.h12, big.h12.view((0, 0), (2, 2)).into_owned());
        assert_eq!(small.h01[(1, 1)], big.h01[(1, 1)]);
    }

    #[test]
    fn direct_links_are_full_rank() {
        let tol = TolerancePolicy::default();
        for seed in 0..100 {
            let ch = sample_channel(cfg(4, 4, 2), seed).unwrap();
            assert_eq!(numerical_rank(&ch.h11, &tol).unwrap(), 4);
        }
    }

    #[test]
    fn extension_is_block_diagonal() {
        let tol = TolerancePolicy::default();
        let ch = sample_channel(cfg(1, 1, 1), 3).unwrap();
        let ext = extend_channel(&ch, 2).unwrap();
        assert_eq!(
            ext.config,
            AntennaConfig {
                m: 2,
                n: 2,
                l: 2,
                extension: 2
            }
        );
        for name in MatrixName::ALL {
            let m = ext.get(name);
            assert_eq!(m.shape(), (2, 2));
            assert_eq!(m[(0, 1)], Complex64::new(0.0, 0.0));
            assert_eq!(m[(1, 0)], Complex64::new(0.0, 0.0));
            assert_ne!(m[(0, 0)], m[(1, 1)]);
            assert_eq!(m[(0, 0)], ch.get(name)[(0, 0)]);
        }
        let ch = sample_channel(cfg(4, 4, 2), 4).unwrap();
        let ext = extend_channel(&ch, 2).unwrap();
        assert_eq!(
            numerical_rank(&ext.h11, &tol).unwrap(),
            2 * numerical_rank(&ch.h11, &tol).unwrap()
        );
        assert!(ext.h12.view((0, 4), (4, 4)).iter().all(|z| z.norm() == 0.0));
        assert!(ext.h12.view((4, 0), (4, 4)).iter().all(|z| z.norm() == 0.0));

        let mut low = ch.clone();
        low.h11 = columns(&ch.h11, 0, 1) * rows(&ch.h11, 0, 1);
        let ext = extend_channel(&low, 2).unwrap();
        assert_eq!(numerical_rank(&ext.h11, &tol).unwrap(), 2);
    }

    #[test]
    fn extension_rejects_other_factors() {
        let ch = sample_channel(cfg(1, 1, 1), 3).unwrap();
        assert!(matches!(
            extend_channel(&ch, 3),
            Err(Error::UnsupportedFactor(3))
        ));
        let ext = extend_channel(&ch, 2).unwrap();
        assert!(matches!(
            extend_channel(&ext, 2),
            Err(Error::UnsupportedFactor(2))
        ));
    }

    #[test]
    fn missing_field_is_named() {
        let ch = sample_channel(cfg(1, 1, 1), 3).unwrap();
        let text = String::from_utf8(write_channel(&ch).unwrap()).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["matrices"].as_object_mut().unwrap().remove("h12");
        let err = read_channel(v.to_string().as_bytes()).unwrap_err();
        match err {
            Error::Parse { message, line, .. } => {
                assert!(message.contains("h12"), "{message}");
                assert_eq!(line, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mismatched_dimensions_are_rejected() {
        let text = r#"{"m":1,"n":1,"l":1,"extension":1,"seed":0,"matrices":{
            "h01":[[[1,0]]],"h02":[[[1,0]]],"h10":[[[1,0]]],"h20":[[[1,0]]],
            "h11":[[[1,0],[0,0]]],"h12":[[[1,0]]],"h21":[[[1,0]]],"h22":[[[1,0]]]}}"#;
        match read_channel(text.as_bytes()).unwrap_err() {
            Error::DimensionMismatch { field, .. } => assert_eq!(field, "h11"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn canonical_field_order() {
        let ch = sample_channel(cfg(1, 0, 1), 3).unwrap();
        let text = String::from_utf8(write_channel(&ch).unwrap()).unwrap();
        let keys = [
            "\"m\"",
            "\"n\"",
            "\"l\"",
            "\"extension\"",
            "\"seed\"",
            "\"matrices\"",
            "\"h01\"",
            "\"h22\"",
        ];
        let pos: Vec<usize> = keys.iter().map(|k| text.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        // zero-row relay matrices round-trip
        assert_eq!(read_channel(text.as_bytes()).unwrap(), ch);
    }

    proptest! {
        #[test]
        fn round_trip_is_entry_exact(m in 1usize..4, n in 0usize..4, l in 0usize..4, seed: u64, ext: bool) {
            let mut ch = sample_channel(cfg(m, n, l), seed).unwrap();
            if ext {
                ch = extend_channel(&ch, 2).unwrap();
            }
            let back = read_channel(&write_channel(&ch).unwrap()).unwrap();
            prop_assert_eq!(back, ch);
        }
    }
}
