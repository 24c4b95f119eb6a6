//! Missingness taxonomy for the paired 2×2 crossover.
//!
//! Responses are always stored in treatment order `(1A, 1B, 2A, 2B)`. The
//! fifteen missingness patterns, however, are defined on the *period* layout
//! (subject 1 period 1, subject 1 period 2, subject 2 period 1, subject 2
//! period 2): pattern 1 means "subject 2 missed the second period" whichever
//! sequence the pair was randomized to. For sequence AB the two layouts
//! coincide; for BA the A and B positions of each subject swap. The
//! selection matrix of a pattern therefore depends on the sequence as well.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector, Matrix4};

use crate::error::{Error, Result};
use crate::model::PairRecord;

/// Number of missingness patterns (non-empty observation masks).
pub const N_PATTERNS: usize = 15;

/// Position names in storage order.
pub const POSITION_NAMES: [&str; 4] = ["1A", "1B", "2A", "2B"];

/// Period layout of every pattern: (subject 1 per 1, subject 1 per 2,
/// subject 2 per 1, subject 2 per 2). Row `p` is pattern `p`; rows 0..=7 are
/// monotone within subject, rows 8..=14 are not.
const PATTERN_TABLE: [[bool; 4]; N_PATTERNS] = {
    const X: bool = true;
    const O: bool = false;
    [
        [X, X, X, X],
        [X, X, X, O],
        [X, O, X, X],
        [X, O, X, O],
        [X, X, O, O],
        [O, O, X, X],
        [X, O, O, O],
        [O, O, X, O],
        [O, O, O, X],
        [O, X, O, O],
        [O, X, X, X],
        [X, X, O, X],
        [O, X, O, X],
        [O, X, X, O],
        [X, O, O, X],
    ]
};

/// Treatment sequence a pair was randomized to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sequence {
    /// Sequence 1: treatment A in period 1, B in period 2.
    AB,
    /// Sequence 2: treatment B in period 1, A in period 2.
    BA,
}

impl Sequence {
    /// Both sequences in numbering order.
    pub const ALL: [Sequence; 2] = [Sequence::AB, Sequence::BA];

    /// 1 for AB, 2 for BA.
    pub fn number(self) -> u8 {
        match self {
            Sequence::AB => 1,
            Sequence::BA => 2,
        }
    }

    /// Zero-based index.
    pub fn index(self) -> usize {
        self.number() as usize - 1
    }

    /// Parse the 1-based sequence number.
    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Sequence::AB),
            2 => Ok(Sequence::BA),
            other => Err(Error::InvalidSequence(other)),
        }
    }

    /// Map a treatment-ordered 4-array onto the period layout.
    pub fn to_period_order<T: Copy>(self, v: [T; 4]) -> [T; 4] {
        match self {
            Sequence::AB => v,
            Sequence::BA => [v[1], v[0], v[3], v[2]],
        }
    }

    /// Inverse of [`Sequence::to_period_order`] (the permutation is an involution).
    pub fn from_period_order<T: Copy>(self, v: [T; 4]) -> [T; 4] {
        self.to_period_order(v)
    }
}

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sequence::AB => f.write_str("AB"),
            Sequence::BA => f.write_str("BA"),
        }
    }
}

/// Which of the four treatment-ordered positions `(1A, 1B, 2A, 2B)` are observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ObservationMask {
    observed: [bool; 4],
}

impl ObservationMask {
    /// Mask from explicit flags in `(1A, 1B, 2A, 2B)` order.
    pub fn new(observed: [bool; 4]) -> Self {
        Self { observed }
    }

    /// Mask from the presence of values.
    pub fn from_values(y: &[Option<f64>; 4]) -> Self {
        Self::new([y[0].is_some(), y[1].is_some(), y[2].is_some(), y[3].is_some()])
    }

    /// Per-position flags.
    pub fn observed(&self) -> [bool; 4] {
        self.observed
    }

    /// Number of observed positions.
    pub fn count(&self) -> usize {
        self.observed.iter().filter(|&&b| b).count()
    }

    /// True when nothing is observed.
    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Observed position indices in ascending order.
    pub fn positions(&self) -> impl Iterator<Item = usize> + '_ {
        (0..4).filter(move |&i| self.observed[i])
    }

    /// Render as `X`/`?` in the given order.
    pub fn symbols(flags: [bool; 4]) -> [char; 4] {
        flags.map(|b| if b { 'X' } else { '?' })
    }
}

/// One of the fifteen missingness patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PatternId(u8);

impl PatternId {
    /// Validate a pattern number.
    pub fn new(p: u8) -> Result<Self> {
        if (p as usize) < N_PATTERNS {
            Ok(Self(p))
        } else {
            Err(Error::InvalidPattern(p))
        }
    }

    /// All patterns in order.
    pub fn all() -> impl Iterator<Item = PatternId> {
        (0..N_PATTERNS as u8).map(PatternId)
    }

    /// Pattern number.
    pub fn value(self) -> u8 {
        self.0
    }

    /// Pattern number as an index.
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Observed flags in period layout (the table row).
    pub fn period_layout(self) -> [bool; 4] {
        PATTERN_TABLE[self.index()]
    }

    /// Observation mask in treatment order for a given sequence.
    pub fn mask(self, sequence: Sequence) -> ObservationMask {
        ObservationMask::new(sequence.from_period_order(self.period_layout()))
    }

    /// Whether each subject's own missingness is monotone (patterns 0–7).
    pub fn is_monotone_within_subject(self) -> bool {
        self.0 <= 7
    }
}

impl fmt::Display for PatternId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Classify a treatment-ordered mask observed under `sequence`.
pub fn classify(mask: ObservationMask, sequence: Sequence) -> Result<PatternId> {
    if mask.is_empty() {
        return Err(Error::NoObservations);
    }
    let layout = sequence.to_period_order(mask.observed());
    PATTERN_TABLE
        .iter()
        .position(|row| *row == layout)
        .map(|p| PatternId(p as u8))
        .ok_or(Error::NoObservations)
}

/// Rows of the 4×4 identity retained for a pattern, ascending by position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectionMatrix {
    rows: [usize; 4],
    len: usize,
}

impl SelectionMatrix {
    /// Selection matrix for an observation mask.
    pub fn for_mask(mask: ObservationMask) -> Self {
        let mut rows = [0; 4];
        let mut len = 0;
        for i in mask.positions() {
            rows[len] = i;
            len += 1;
        }
        Self { rows, len }
    }

    /// Observed position indices (the column holding each row's 1).
    pub fn rows(&self) -> &[usize] {
        &self.rows[..self.len]
    }

    /// Number of observed positions `r`.
    pub fn nrows(&self) -> usize {
        self.len
    }

    /// Dense `r × 4` 0/1 matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let mut e = DMatrix::zeros(self.len, 4);
        for (r, &c) in self.rows().iter().enumerate() {
            e[(r, c)] = 1.0;
        }
        e
    }

    /// `E v`: the observed subvector.
    pub fn extract(&self, v: &[f64; 4]) -> DVector<f64> {
        DVector::from_iterator(self.len, self.rows().iter().map(|&i| v[i]))
    }

    /// `E Σ Eᵀ`: the principal submatrix at the observed positions.
    pub fn project(&self, sigma: &Matrix4<f64>) -> DMatrix<f64> {
        let rows = self.rows();
        DMatrix::from_fn(self.len, self.len, |i, j| sigma[(rows[i], rows[j])])
    }
}

/// Selection matrix `E_ps` for pattern `p` observed under sequence `s`.
pub fn selection_matrix(p: PatternId, s: Sequence) -> SelectionMatrix {
    SelectionMatrix::for_mask(p.mask(s))
}

/// Collapse of the fifteen patterns into estimation groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupingScheme {
    labels: Vec<String>,
    group_of_pattern: [usize; N_PATTERNS],
    /// Groups with fewer pairs than this trigger an identifiability warning.
    pub min_pairs_per_group: usize,
}

impl Default for GroupingScheme {
    fn default() -> Self {
        Self::completers_dropout_pair()
    }
}

impl GroupingScheme {
    /// Default sparse-group threshold.
    pub const DEFAULT_MIN_PAIRS: usize = 3;

    /// Completers (C), dropouts (D) and missing-pair (P) groups.
    pub fn completers_dropout_pair() -> Self {
        let groups: [(&str, &[u8]); 3] =
            [("C", &[0, 10, 11, 12]), ("D", &[1, 2, 3, 6, 7, 13, 14]), ("P", &[4, 5, 8, 9])];
        Self::from_groups(&groups, Self::DEFAULT_MIN_PAIRS)
        .expect("built-in scheme is total")
    }

    /// Completers against the pooled dropout and missing-pair groups.
    pub fn merged_dp() -> Self {
        let groups: [(&str, &[u8]); 2] = [("C", &[0, 10, 11, 12]), ("D+P", &[1, 2, 3, 4, 5, 6, 7, 8, 9, 13, 14])];
        Self::from_groups(&groups, Self::DEFAULT_MIN_PAIRS)
        .expect("built-in scheme is total")
    }

    /// Every pattern in one group: the pattern-ignoring analysis.
    pub fn single(label: &str) -> Self {
        Self {
            labels: alloc::vec![label.to_string()],
            group_of_pattern: [0; N_PATTERNS],
            min_pairs_per_group: Self::DEFAULT_MIN_PAIRS,
        }
    }

    /// Build from `(label, patterns)` lists. Every pattern must appear exactly once.
    pub fn from_groups<S: AsRef<str>, P: AsRef<[u8]>>(
        groups: &[(S, P)],
        min_pairs_per_group: usize,
    ) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::InvalidScheme("no groups".to_string()));
        }
        let mut assigned = [None; N_PATTERNS];
        let mut labels = Vec::with_capacity(groups.len());
        for (g, (label, patterns)) in groups.iter().enumerate() {
            let label = label.as_ref();
            if label.is_empty() || labels.iter().any(|l: &String| l == label) {
                return Err(Error::InvalidScheme(alloc::format!(
                    "empty or duplicate group label {label:?}"
                )));
            }
            labels.push(label.to_string());
            for &p in patterns.as_ref() {
                let p = PatternId::new(p)?;
                if let Some(prev) = assigned[p.index()].replace(g) {
                    return Err(Error::InvalidScheme(alloc::format!(
                        "pattern {p} assigned to both {} and {label}",
                        labels[prev]
                    )));
                }
            }
        }
        let mut group_of_pattern = [0; N_PATTERNS];
        for (p, g) in assigned.iter().enumerate() {
            group_of_pattern[p] = g.ok_or_else(|| {
                Error::InvalidScheme(alloc::format!("pattern {p} is not assigned to a group"))
            })?;
        }
        Ok(Self { labels, group_of_pattern, min_pairs_per_group })
    }

    /// Group labels in scheme order.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Number of groups.
    pub fn n_groups(&self) -> usize {
        self.labels.len()
    }

    /// Group index of a pattern.
    pub fn group_of(&self, p: PatternId) -> usize {
        self.group_of_pattern[p.index()]
    }

    /// Label of a group index.
    pub fn label(&self, g: usize) -> &str {
        &self.labels[g]
    }

    /// Index of a label.
    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Patterns mapped to group `g`.
    pub fn patterns_of(&self, g: usize) -> Vec<PatternId> {
        PatternId::all().filter(|&p| self.group_of(p) == g).collect()
    }
}

/// Label of the group a pattern belongs to.
pub fn assign_group(p: PatternId, scheme: &GroupingScheme) -> &str {
    scheme.label(scheme.group_of(p))
}

/// Frequencies by pattern × sequence, sequence and group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternCounts {
    /// `n_ps`, indexed `[pattern][sequence index]`.
    pub by_pattern: [[usize; 2]; N_PATTERNS],
    /// `n_s`.
    pub by_sequence: [usize; 2],
    /// `n_g` in scheme order.
    pub by_group: Vec<usize>,
    /// `N`.
    pub total: usize,
}

impl PatternCounts {
    /// Count `(pattern, sequence)` cells under `scheme`.
    pub fn from_cells<I>(cells: I, scheme: &GroupingScheme) -> Self
    where
        I: IntoIterator<Item = (PatternId, Sequence)>,
    {
        let mut counts = Self {
            by_pattern: [[0; 2]; N_PATTERNS],
            by_sequence: [0; 2],
            by_group: alloc::vec![0; scheme.n_groups()],
            total: 0,
        };
        for (p, s) in cells {
            counts.by_pattern[p.index()][s.index()] += 1;
            counts.by_sequence[s.index()] += 1;
            counts.by_group[scheme.group_of(p)] += 1;
            counts.total += 1;
        }
        counts
    }

    /// Pairs in pattern `p` over both sequences.
    pub fn pattern_total(&self, p: PatternId) -> usize {
        self.by_pattern[p.index()].iter().sum()
    }
}

/// Tabulate records by pattern, sequence and group.
pub fn tabulate(records: &[PairRecord], scheme: &GroupingScheme) -> PatternCounts {
    PatternCounts::from_cells(records.iter().map(|r| (r.pattern(), r.sequence())), scheme)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn m(flags: &str) -> ObservationMask {
        let f: Vec<bool> = flags.chars().map(|c| c == 'X').collect();
        ObservationMask::new([f[0], f[1], f[2], f[3]])
    }

    #[test]
    fn classify_table_rows() {
        assert_eq!(classify(m("XXXX"), Sequence::AB).unwrap().value(), 0);
        assert_eq!(classify(m("X?XX"), Sequence::AB).unwrap().value(), 2);
        assert_eq!(classify(m("?XXX"), Sequence::AB).unwrap().value(), 10);
        assert_eq!(classify(m("????"), Sequence::AB), Err(Error::NoObservations));
    }

    #[test]
    fn sequence_ba_uses_period_layout() {
        // Subject 2 missed period 2; under BA that is treatment A.
        assert_eq!(classify(m("XXX?"), Sequence::AB).unwrap().value(), 1);
        assert_eq!(classify(m("XX?X"), Sequence::BA).unwrap().value(), 1);
        let e = selection_matrix(PatternId::new(1).unwrap(), Sequence::BA);
        assert_eq!(e.rows(), &[0, 1, 3]);
    }

    #[test]
    fn classify_is_bijective_per_sequence() {
        for s in Sequence::ALL {
            let mut seen = [false; N_PATTERNS];
            for bits in 1u8..16 {
                let mask = ObservationMask::new([
                    bits & 1 != 0,
                    bits & 2 != 0,
                    bits & 4 != 0,
                    bits & 8 != 0,
                ]);
                let p = classify(mask, s).unwrap();
                assert!(!seen[p.index()]);
                seen[p.index()] = true;
                assert_eq!(p.mask(s), mask);
            }
        }
    }

    #[test]
    fn selection_matrix_examples() {
        let e21 = selection_matrix(PatternId::new(2).unwrap(), Sequence::AB).to_matrix();
        let expected = DMatrix::from_row_slice(
            3,
            4,
            &[1., 0., 0., 0., 0., 0., 1., 0., 0., 0., 0., 1.],
        );
        assert_eq!(e21, expected);
        let e0 = selection_matrix(PatternId::new(0).unwrap(), Sequence::AB).to_matrix();
        assert_eq!(e0, DMatrix::identity(4, 4));
        let e71 = selection_matrix(PatternId::new(7).unwrap(), Sequence::AB).to_matrix();
        assert_eq!(e71, DMatrix::from_row_slice(1, 4, &[0., 0., 1., 0.]));
    }

    #[test]
    fn default_grouping() {
        let s = GroupingScheme::default();
        let lab = |p: u8| assign_group(PatternId::new(p).unwrap(), &s).to_string();
        assert_eq!(lab(0), "C");
        assert_eq!(lab(7), "D");
        assert_eq!(lab(5), "P");
        for p in [0, 10, 11, 12] {
            assert_eq!(lab(p), "C");
        }
        for p in [1, 2, 3, 6, 7, 13, 14] {
            assert_eq!(lab(p), "D");
        }
        for p in [4, 5, 8, 9] {
            assert_eq!(lab(p), "P");
        }
    }

    #[test]
    fn scheme_validation() {
        let missing = GroupingScheme::from_groups(&[("A", vec![0u8, 1, 2])], 3);
        assert!(matches!(missing, Err(Error::InvalidScheme(_))));
        let dup = GroupingScheme::from_groups(
            &[("A", (0u8..15).collect::<Vec<_>>()), ("B", vec![3u8])],
            3,
        );
        assert!(matches!(dup, Err(Error::InvalidScheme(_))));
        assert!(GroupingScheme::from_groups(&[("A", vec![0u8]), ("A", vec![1u8])], 3).is_err());
    }

    #[test]
    fn barge_counts() {
        let table4 = [(0u8, 29usize), (1, 1), (2, 1), (4, 3), (5, 2), (6, 1), (7, 3)];
        let cells = table4.iter().flat_map(|&(p, n)| {
            core::iter::repeat_n((PatternId::new(p).unwrap(), Sequence::AB), n)
        });
        let counts = PatternCounts::from_cells(cells, &GroupingScheme::default());
        assert_eq!(counts.by_group, vec![29, 6, 5]);
        assert_eq!(counts.total, 40);
    }

    #[test]
    fn empty_and_one_per_pattern() {
        let s = GroupingScheme::default();
        let c = tabulate(&[], &s);
        assert_eq!(c.total, 0);
        assert_eq!(c.by_group, vec![0, 0, 0]);
        let records: Vec<PairRecord> = PatternId::all()
            .map(|p| {
                let mask = p.mask(Sequence::AB).observed();
                let y = mask.map(|b| if b { Some(1.0) } else { None });
                PairRecord::new(alloc::format!("{p}"), Sequence::AB, y).unwrap()
            })
            .collect();
        let c = tabulate(&records, &s);
        for p in PatternId::all() {
            assert_eq!(c.by_pattern[p.index()], [1, 0]);
        }
        assert_eq!(c.by_sequence, [15, 0]);
    }

    fn arb_pattern() -> impl Strategy<Value = PatternId> {
        (0u8..15).prop_map(|p| PatternId::new(p).unwrap())
    }

    fn arb_seq() -> impl Strategy<Value = Sequence> {
        prop_oneof![Just(Sequence::AB), Just(Sequence::BA)]
    }

    fn arb_spd() -> impl Strategy<Value = Matrix4<f64>> {
        proptest::collection::vec(-2.0f64..2.0, 16).prop_map(|v| {
            let a = Matrix4::from_row_slice(&v);
            a * a.transpose() + Matrix4::identity() * 0.5
        })
    }

    proptest! {
        #[test]
        fn selection_extracts_observed(p in arb_pattern(), s in arb_seq(), v in proptest::array::uniform4(-1e3f64..1e3)) {
            let e = selection_matrix(p, s);
            let dense = e.to_matrix() * DVector::from_row_slice(&v);
            prop_assert_eq!(&dense, &e.extract(&v));
            let mask = p.mask(s).observed();
            let expected: Vec<f64> = (0..4).filter(|&i| mask[i]).map(|i| v[i]).collect();
            prop_assert_eq!(dense.as_slice(), expected.as_slice());
        }

        #[test]
        fn projection_is_principal_submatrix(p in arb_pattern(), s in arb_seq(), sigma in arb_spd()) {
            let e = selection_matrix(p, s);
            let em = e.to_matrix();
            let sig = DMatrix::from_iterator(4, 4, sigma.iter().copied());
            let dense = &em * sig * em.transpose();
            let sub = e.project(&sigma);
            prop_assert_eq!(&dense, &sub);
            prop_assert_eq!(&sub, &sub.transpose());
            prop_assert!(sub.cholesky().is_some());
        }

        #[test]
        fn counts_are_consistent(cells in proptest::collection::vec((arb_pattern(), arb_seq()), 0..200)) {
            for scheme in [GroupingScheme::default(), GroupingScheme::merged_dp(), GroupingScheme::single("all")] {
                let c = PatternCounts::from_cells(cells.iter().copied(), &scheme);
                for s in 0..2 {
                    let sum: usize = c.by_pattern.iter().map(|row| row[s]).sum();
                    prop_assert_eq!(sum, c.by_sequence[s]);
                }
                prop_assert_eq!(c.by_sequence.iter().sum::<usize>(), c.total);
                prop_assert_eq!(c.by_group.iter().sum::<usize>(), c.total);
            }
        }
    }
}
