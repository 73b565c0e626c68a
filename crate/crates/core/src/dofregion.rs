//! DoF regions as exact rational polygons in the `(d1, d2)` quadrant.

use num_rational::Ratio;
use num_traits::{Signed, Zero};
use serde::ser::{SerializeSeq, SerializeStruct};
use serde::{Serialize, Serializer};

use crate::channel::AntennaConfig;
use crate::error::{Error, Result};
use crate::numerics::{block2x2, hstack, numerical_rank, vstack, ComplexMatrix, TolerancePolicy};

pub type Rational = Ratio<i64>;

pub fn rat(n: i64) -> Rational {
    Rational::from_integer(n)
}

pub fn format_rational(r: &Rational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

/// `a1 * d1 + a2 * d2 <= b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Inequality {
    pub a1: i64,
    pub a2: i64,
    pub b: Rational,
}

impl Inequality {
    pub fn new(a1: i64, a2: i64, b: Rational) -> Self {
        Self { a1, a2, b }
    }

    pub fn holds(&self, p: (Rational, Rational)) -> bool {
        rat(self.a1) * p.0 + rat(self.a2) * p.1 <= self.b
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DofRegion {
    pub inequalities: Vec<Inequality>,
    /// Counter-clockwise, starting at the origin.
    pub vertices: Vec<(Rational, Rational)>,
}

impl DofRegion {
    pub fn from_inequalities(inequalities: Vec<Inequality>) -> Result<Self> {
        let vertices = region_vertices(&inequalities)?;
        Ok(Self {
            inequalities,
            vertices,
        })
    }

    pub fn max_sum(&self) -> Rational {
        self.vertices
            .iter()
            .map(|(a, b)| a + b)
            .max()
            .unwrap_or_else(Rational::zero)
    }

    /// Mirror across `d1 = d2`.
    pub fn mirrored(&self) -> Result<DofRegion> {
        DofRegion::from_inequalities(
            self.inequalities
                .iter()
                .map(|q| Inequality::new(q.a2, q.a1, q.b))
                .collect(),
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("d1,d2\n");
        for (a, b) in &self.vertices {
            out.push_str(&format!("{},{}\n", format_rational(a), format_rational(b)));
        }
        out
    }
}

impl Serialize for Inequality {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(3))?;
        seq.serialize_element(&self.a1)?;
        seq.serialize_element(&self.a2)?;
        seq.serialize_element(&format_rational(&self.b))?;
        seq.end()
    }
}

impl Serialize for DofRegion {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let vertices: Vec<[String; 2]> = self
            .vertices
            .iter()
            .map(|(a, b)| [format_rational(a), format_rational(b)])
            .collect();
        let mut st = s.serialize_struct("DofRegion", 2)?;
        st.serialize_field("inequalities", &self.inequalities)?;
        st.serialize_field("vertices", &vertices)?;
        st.end()
    }
}

/// Vertices of `{d >= 0} ∩ inequalities` by pairwise line intersection and
/// exact feasibility filtering.
pub fn region_vertices(inequalities: &[Inequality]) -> Result<Vec<(Rational, Rational)>> {
    for q in inequalities {
        if q.a1 < 0 || q.a2 < 0 {
            return Err(Error::InvalidInput(
                "coefficients must be nonnegative".into(),
            ));
        }
        if q.b.is_negative() {
            return Err(Error::InvalidInput("region must contain the origin".into()));
        }
    }
    let bounded_d1 = inequalities.iter().any(|q| q.a1 > 0);
    let bounded_d2 = inequalities.iter().any(|q| q.a2 > 0);
    if !(bounded_d1 && bounded_d2) {
        return Err(Error::UnboundedRegion);
    }

    let mut lines: Vec<Inequality> = vec![
        Inequality::new(-1, 0, rat(0)),
        Inequality::new(0, -1, rat(0)),
    ];
    lines.extend_from_slice(inequalities);

    let feasible = |p: (Rational, Rational)| lines.iter().all(|q| q.holds(p));
    let mut vertices: Vec<(Rational, Rational)> = Vec::new();
    for (i, p) in lines.iter().enumerate() {
        for q in &lines[i + 1..] {
            let det = p.a1 * q.a2 - p.a2 * q.a1;
            if det == 0 {
                continue;
            }
            let det = rat(det);
            let x = (p.b * rat(q.a2) - q.b * rat(p.a2)) / det;
            let y = (q.b * rat(p.a1) - p.b * rat(q.a1)) / det;
            let v = (x, y);
            if feasible(v) && !vertices.contains(&v) {
                vertices.push(v);
            }
        }
    }
    // The origin is always a vertex; sort the rest by polar angle using the
    // exact cross product (all points lie in the first quadrant).
    vertices.sort_by(|a, b| {
        let a0 = a.0.is_zero() && a.1.is_zero();
        let b0 = b.0.is_zero() && b.1.is_zero();
        match (a0, b0) {
            (true, true) => std::cmp::Ordering::Equal,
            (true, false) => std::cmp::Ordering::Less,
            (false, true) => std::cmp::Ordering::Greater,
            _ => {
                let cross = a.0 * b.1 - a.1 * b.0;
                rat(0).cmp(&cross)
            }
        }
    });
    Ok(vertices)
}

pub fn region_contains(region: &DofRegion, point: (Rational, Rational)) -> bool {
    !point.0.is_negative()
        && !point.1.is_negative()
        && region.inequalities.iter().all(|q| q.holds(point))
}

/// `M + min{M, N, L, max(N, L)/2}` with rational antenna counts, so that
/// hypothetical half-antenna splits can be evaluated too.
pub fn sum_dof_lin(m: Rational, n: Rational, l: Rational) -> Rational {
    let half_max = n.max(l) / rat(2);
    m + m.min(n).min(l).min(half_max)
}

pub fn dof_lin(config: &AntennaConfig) -> Rational {
    let c = config.base();
    sum_dof_lin(rat(c.m as i64), rat(c.n as i64), rat(c.l as i64))
}

/// Largest DoF region achievable with a memoryless linear relay.
pub fn theorem1_region(config: &AntennaConfig) -> DofRegion {
    let m = rat(config.base().m as i64);
    DofRegion::from_inequalities(vec![
        Inequality::new(1, 0, m),
        Inequality::new(0, 1, m),
        Inequality::new(1, 1, dof_lin(config)),
    ])
    .expect("linear DoF region is bounded")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OuterBounds {
    pub cognitive: Rational,
    pub genie: Rational,
    pub tight: bool,
}

impl OuterBounds {
    pub fn min(&self) -> Rational {
        self.cognitive.min(self.genie)
    }
}

impl Serialize for OuterBounds {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("OuterBounds", 3)?;
        st.serialize_field("cognitive", &format_rational(&self.cognitive))?;
        st.serialize_field("genie", &format_rational(&self.genie))?;
        st.serialize_field("tight", &self.tight)?;
        st.end()
    }
}

pub fn outer_bounds(config: &AntennaConfig) -> OuterBounds {
    let c = config.base();
    let (m, n, l) = (c.m as i64, c.n as i64, c.l as i64);
    OuterBounds {
        cognitive: rat((m + l).min(2 * m)),
        genie: rat((m + n).min(2 * m)),
        tight: n.max(l) >= 2 * m.min(n).min(l),
    }
}

/// Rank-based DoF region of a two-user MIMO IC with arbitrary channel
/// matrices `h_ij` of size `N_i x M_j`.
pub fn ic_dof_region(
    h11: &ComplexMatrix,
    h12: &ComplexMatrix,
    h21: &ComplexMatrix,
    h22: &ComplexMatrix,
    tol: &TolerancePolicy,
) -> Result<DofRegion> {
    let (n1, m1) = h11.shape();
    let (n2, m2) = h22.shape();
    for (name, m, want) in [("h12", h12, (n1, m2)), ("h21", h21, (n2, m1))] {
        if m.shape() != want {
            return Err(Error::DimensionMismatch {
                field: name.into(),
                expected_rows: want.0,
                expected_cols: want.1,
                found: format!("{}x{}", m.nrows(), m.ncols()),
            });
        }
    }
    let rk = |m: &ComplexMatrix| numerical_rank(m, tol).map(|r| r as i64);
    let z12 = ComplexMatrix::zeros(n2, m2);
    let z21 = ComplexMatrix::zeros(n1, m1);

    let r11 = rk(h11)?;
    let r22 = rk(h22)?;
    let r12 = rk(h12)?;
    let r21 = rk(h21)?;
    let row1 = rk(&hstack(&[h11, h12]))?;
    let row2 = rk(&hstack(&[h22, h21]))?;
    let col2 = rk(&vstack(&[h12, h22]))?;
    let col1 = rk(&vstack(&[h11, h21]))?;
    // [[H11 H12],[H21 0]] and [[0 H12],[H21 H22]]
    let with_zero_22 = rk(&block2x2(h11, h12, h21, &z12))?;
    let with_zero_11 = rk(&block2x2(&z21, h12, h21, h22))?;
    // [H22; H12] and [[0 H21],[H12 H11]] for the d1 + 2 d2 bound
    let col2_swapped = rk(&vstack(&[h22, h12]))?;
    let swapped_zero_11 = rk(&block2x2(&z12, h21, h12, h11))?;

    let ineq = vec![
        Inequality::new(1, 0, rat(r11)),
        Inequality::new(0, 1, rat(r22)),
        Inequality::new(1, 1, rat(row1 + col2 - r12)),
        Inequality::new(1, 1, rat(row2 + col1 - r21)),
        Inequality::new(1, 1, rat(with_zero_22 + with_zero_11 - r12 - r21)),
        Inequality::new(2, 1, rat(row1 + col1 + with_zero_11 - r12 - r21)),
        Inequality::new(1, 2, rat(row2 + col2_swapped + swapped_zero_11 - r12 - r21)),
    ];
    DofRegion::from_inequalities(ineq)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AntennaSplit {
    /// All `(n, l)` attaining the optimum, ordered by `n`.
    pub splits: Vec<(usize, usize)>,
    pub value: Rational,
}

/// Best split of `relay_total` half-duplex relay antennas into receive and
/// transmit sides, by exhaustive enumeration.
pub fn allocate_antennas(m: usize, relay_total: usize) -> AntennaSplit {
    let mr = rat(m as i64);
    let scored: Vec<((usize, usize), Rational)> = (0..=relay_total)
        .map(|n| {
            let l = relay_total - n;
            ((n, l), sum_dof_lin(mr, rat(n as i64), rat(l as i64)))
        })
        .collect();
    let value = scored.iter().map(|(_, v)| *v).max().expect("nonempty");
    let splits = scored
        .into_iter()
        .filter(|(_, v)| *v == value)
        .map(|(s, _)| s)
        .collect();
    AntennaSplit { splits, value }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn r(n: i64, d: i64) -> Rational {
        Rational::new(n, d)
    }

    fn cfg(m: usize, n: usize, l: usize) -> AntennaConfig {
        AntennaConfig::new(m, n, l).unwrap()
    }

    #[test]
    fn example_442_region() {
        let region = theorem1_region(&cfg(4, 4, 2));
        assert_eq!(region.inequalities[2].b, rat(6));
        let expect: Vec<_> = [(0, 0), (4, 0), (4, 2), (2, 4), (0, 4)]
            .iter()
            .map(|&(a, b)| (rat(a), rat(b)))
            .collect();
        assert_eq!(region.vertices, expect);
        assert!(region_contains(&region, (rat(4), rat(2))));
        assert!(!region_contains(&region, (rat(4), rat(3))));
    }

    #[test]
    fn symmetric_relay_gives_three_halves() {
        for m in 1..=6 {
            let region = theorem1_region(&cfg(m, m, m));
            assert_eq!(region.inequalities[2].b, r(3 * m as i64, 2));
        }
    }

    #[test]
    fn no_relay_receive_antennas() {
        let region = theorem1_region(&cfg(3, 0, 5));
        assert_eq!(region.inequalities[2].b, rat(3));
        assert_eq!(
            region.vertices,
            vec![(rat(0), rat(0)), (rat(3), rat(0)), (rat(0), rat(3))]
        );
    }

    #[test]
    fn triangle_and_redundancy() {
        let base = vec![
            Inequality::new(1, 0, rat(1)),
            Inequality::new(0, 1, rat(1)),
            Inequality::new(1, 1, rat(1)),
        ];
        let v = region_vertices(&base).unwrap();
        assert_eq!(
            v,
            vec![(rat(0), rat(0)), (rat(1), rat(0)), (rat(0), rat(1))]
        );
        let mut more = base.clone();
        more.push(Inequality::new(2, 1, rat(5)));
        assert_eq!(region_vertices(&more).unwrap(), v);
    }

    #[test]
    fn unbounded_is_rejected() {
        let only_d1 = vec![Inequality::new(1, 0, rat(2))];
        assert!(matches!(
            region_vertices(&only_d1),
            Err(Error::UnboundedRegion)
        ));
    }

    #[test]
    fn half_integer_vertices() {
        let region = theorem1_region(&cfg(1, 1, 1));
        assert_eq!(
            region.vertices,
            vec![
                (rat(0), rat(0)),
                (rat(1), rat(0)),
                (rat(1), r(1, 2)),
                (r(1, 2), rat(1)),
                (rat(0), rat(1))
            ]
        );
        let json = serde_json::to_string(&region).unwrap();
        assert!(
            json.starts_with(r#"{"inequalities":[[1,0,"1/1"],[0,1,"1/1"],[1,1,"3/2"]]"#),
            "{json}"
        );
        assert!(json.contains(r#"["1/1","1/2"]"#));
        assert!(region.to_csv().contains("1/2,1/1\n"));
    }

    #[test]
    fn outer_bound_examples() {
        let b = outer_bounds(&cfg(4, 4, 2));
        assert_eq!((b.cognitive, b.genie, b.tight), (rat(6), rat(8), true));
        let b = outer_bounds(&cfg(4, 4, 4));
        assert_eq!((b.cognitive, b.genie, b.tight), (rat(8), rat(8), false));
        let b = outer_bounds(&cfg(2, 8, 8));
        assert_eq!((b.min(), b.tight), (rat(4), true));
    }

    #[test]
    fn linear_sum_meets_outer_bound_exactly_when_tight() {
        for m in 1..=12 {
            for n in 0..=12 {
                for l in 0..=12 {
                    let c = cfg(m, n, l);
                    let lin = dof_lin(&c);
                    let b = outer_bounds(&c);
                    assert!(lin <= b.min());
                    assert_eq!(lin == b.min(), b.tight, "{c}");
                }
            }
        }
    }

    #[test]
    fn allocation_examples() {
        let a = allocate_antennas(4, 8);
        assert_eq!(a.value, r(13, 2));
        assert_eq!(a.splits, vec![(3, 5), (5, 3)]);
        let a = allocate_antennas(4, 9);
        assert_eq!(a.value, rat(7));
        assert_eq!(a.splits, vec![(3, 6), (6, 3)]);
        let a = allocate_antennas(4, 0);
        assert_eq!((a.value, a.splits), (rat(4), vec![(0, 0)]));
    }

    #[test]
    fn allocation_matches_brute_force_oracle() {
        // Independent oracle: scan the piecewise min formula
        // evaluated in floating point, then compare the argmax set.
        for m in 1..=6usize {
            for total in 0..=20usize {
                let best = allocate_antennas(m, total);
                let vals: Vec<f64> = (0..=total)
                    .map(|n| {
                        let l = total - n;
                        let (n, l, mf) = (n as f64, l as f64, m as f64);
                        mf + mf.min(n).min(l).min(n.max(l) / 2.0)
                    })
                    .collect();
                let top = vals.iter().cloned().fold(f64::MIN, f64::max);
                let arg: Vec<(usize, usize)> = (0..=total)
                    .filter(|&n| (vals[n] - top).abs() < 1e-12)
                    .map(|n| (n, total - n))
                    .collect();
                assert_eq!(best.splits, arg);
                assert!(
                    (*best.value.numer() as f64 / *best.value.denom() as f64 - top).abs() < 1e-12
                );
            }
        }
    }

    use crate::channel::gaussian_matrix;

    fn low_rank(seed: u64, label: &str, rows: usize, cols: usize, rank: usize) -> ComplexMatrix {
        gaussian_matrix(seed, &format!("{label}-a"), rows, rank)
            * gaussian_matrix(seed, &format!("{label}-b"), rank, cols)
    }

    #[test]
    fn generic_square_ic_has_sum_m() {
        let tol = TolerancePolicy::default();
        for m in 1..=4 {
            for seed in 0..10 {
                let h = |name: &str| gaussian_matrix(seed, name, m, m);
                let region =
                    ic_dof_region(&h("h11"), &h("h12"), &h("h21"), &h("h22"), &tol).unwrap();
                assert_eq!(region.max_sum(), rat(m as i64));
                assert_eq!(region.vertices.len(), 3);
            }
        }
    }

    #[test]
    fn no_cross_links_gives_rectangle() {
        let tol = TolerancePolicy::default();
        let h11 = low_rank(4, "h11", 3, 4, 2);
        let h22 = gaussian_matrix(4, "h22", 2, 3);
        let region = ic_dof_region(
            &h11,
            &ComplexMatrix::zeros(3, 3),
            &ComplexMatrix::zeros(2, 4),
            &h22,
            &tol,
        )
        .unwrap();
        assert_eq!(
            region.vertices,
            vec![
                (rat(0), rat(0)),
                (rat(2), rat(0)),
                (rat(2), rat(2)),
                (rat(0), rat(2))
            ]
        );
    }

    #[test]
    fn ic_region_rejects_incompatible_shapes() {
        let tol = TolerancePolicy::default();
        let a = ComplexMatrix::identity(2, 2);
        let b = ComplexMatrix::identity(3, 2);
        assert!(matches!(
            ic_dof_region(&a, &b, &a, &a, &tol),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn genie_augmented_channel_reproduces_bound() {
        let tol = TolerancePolicy::default();
        for &(m, n) in &[(2usize, 1usize), (2, 2), (4, 2), (4, 4), (3, 5)] {
            for seed in 0..5 {
                let g = |name: &str, r: usize| gaussian_matrix(seed, name, r, m);
                let (h01, h02) = (g("h01", n), g("h02", n));
                let aug = |direct: &ComplexMatrix, relay: &ComplexMatrix| vstack(&[direct, relay]);
                let region = ic_dof_region(
                    &aug(&g("h11", m), &h01),
                    &aug(&g("h12", m), &h02),
                    &aug(&g("h21", m), &h01),
                    &aug(&g("h22", m), &h02),
                    &tol,
                )
                .unwrap();
                let expected = rat(((m + n).min(2 * m)) as i64);
                assert_eq!(region.max_sum(), expected, "(M,N)=({m},{n})");
                for q in &region.inequalities[2..4] {
                    assert!(q.b <= expected);
                }
            }
        }
    }

    #[test]
    fn user_swap_mirrors_region() {
        let tol = TolerancePolicy::default();
        for seed in 0..30 {
            let (m1, m2, n1, n2) = (3, 4, 4, 3);
            let rk = |k: u64| 1 + (seed + k) as usize % 3;
            let h11 = low_rank(seed, "h11", n1, m1, rk(0));
            let h12 = low_rank(seed, "h12", n1, m2, rk(1));
            let h21 = low_rank(seed, "h21", n2, m1, rk(2));
            let h22 = low_rank(seed, "h22", n2, m2, rk(3));
            let region = ic_dof_region(&h11, &h12, &h21, &h22, &tol).unwrap();
            let swapped = ic_dof_region(&h22, &h21, &h12, &h11, &tol).unwrap();
            assert_eq!(swapped.vertices, region.mirrored().unwrap().vertices);
        }
    }

    proptest! {
        #[test]
        fn vertices_satisfy_all_inequalities(
            bounds in proptest::collection::vec((0i64..3, 0i64..3, 0i64..12, 1i64..3), 1..6)
        ) {
            let mut ineq: Vec<Inequality> = bounds
                .iter()
                .map(|&(a1, a2, n, d)| Inequality::new(a1, a2, Rational::new(n, d)))
                .collect();
            ineq.push(Inequality::new(1, 0, rat(7)));
            ineq.push(Inequality::new(0, 1, rat(7)));
            let region = DofRegion::from_inequalities(ineq).unwrap();
            prop_assert_eq!(region.vertices[0], (rat(0), rat(0)));
            for v in &region.vertices {
                prop_assert!(region_contains(&region, *v));
            }
            for (i, a) in region.vertices.iter().enumerate() {
                prop_assert!(!region.vertices[i + 1..].contains(a));
            }
            // counter-clockwise: consecutive cross products nonnegative
            let vs = &region.vertices;
            for i in 0..vs.len() {
                let (a, b, c) = (vs[i], vs[(i + 1) % vs.len()], vs[(i + 2) % vs.len()]);
                let cross = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
                prop_assert!(cross >= rat(0));
            }
        }

        #[test]
        fn linear_sum_is_monotone(m in 1usize..10, n in 0usize..10, l in 0usize..10) {
            let base = dof_lin(&cfg(m, n, l));
            prop_assert!(dof_lin(&cfg(m + 1, n, l)) >= base);
            prop_assert!(dof_lin(&cfg(m, n + 1, l)) >= base);
            prop_assert!(dof_lin(&cfg(m, n, l + 1)) >= base);
        }
    }
}
