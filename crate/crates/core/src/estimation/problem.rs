use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::independent_columns;
use crate::model::{MeanModel, PairRecord};
use crate::patterns::{selection_matrix, tabulate, GroupingScheme, PatternCounts, PatternId, SelectionMatrix, Sequence};

/// Pairs sharing group, pattern and sequence, reduced to sufficient statistics.
#[derive(Debug, Clone)]
pub struct Cell {
    /// Index into [`Problem::groups`].
    pub group: usize,
    /// Missingness pattern.
    pub pattern: PatternId,
    /// Sequence.
    pub sequence: Sequence,
    /// Observed positions.
    pub selection: SelectionMatrix,
    /// Number of pairs.
    pub n: usize,
    /// Mean of the observed vectors.
    pub mean: DVector<f64>,
    /// Sum of outer products of deviations from `mean`.
    pub scatter: DMatrix<f64>,
    /// Reduced design `E X_s`, all model columns.
    pub design: DMatrix<f64>,
}

/// A group that has at least one pair.
#[derive(Debug, Clone)]
pub struct GroupInfo {
    /// Label from the grouping scheme.
    pub label: String,
    /// Index of the group in the scheme.
    pub scheme_index: usize,
    /// Pairs in the group.
    pub n_pairs: usize,
    /// Observed responses in the group.
    pub n_obs: usize,
    /// Which fixed effects are identified by the group's patterns.
    pub estimable: Vec<bool>,
}

impl GroupInfo {
    /// Number of estimable fixed effects.
    pub fn rank(&self) -> usize {
        self.estimable.iter().filter(|&&e| e).count()
    }

    /// Indices of the estimable effects.
    pub fn kept(&self) -> Vec<usize> {
        (0..self.estimable.len()).filter(|&j| self.estimable[j]).collect()
    }
}

/// Records organized for likelihood evaluation.
///
/// Groups without pairs are dropped. Within a group, effects that the
/// observed patterns cannot separate are constrained to zero; the first
/// linearly independent columns in parameter order are kept.
#[derive(Debug, Clone)]
pub struct Problem {
    mean_model: MeanModel,
    scheme: GroupingScheme,
    groups: Vec<GroupInfo>,
    cells: Vec<Cell>,
    counts: PatternCounts,
    n_obs: usize,
}

const RANK_TOL: f64 = 1e-9;

impl Problem {
    /// Group records into cells under `scheme`.
    pub fn new(records: &[PairRecord], scheme: &GroupingScheme, mean_model: MeanModel) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyData);
        }
        let counts = tabulate(records, scheme);

        let mut buckets: BTreeMap<(usize, PatternId, Sequence), Vec<Vec<f64>>> = BTreeMap::new();
        for r in records {
            let key = (scheme.group_of(r.pattern()), r.pattern(), r.sequence());
            buckets.entry(key).or_default().push(r.observed());
        }

        let mut groups: Vec<GroupInfo> = Vec::new();
        let mut cells = Vec::with_capacity(buckets.len());
        let mut n_obs = 0;
        let k = mean_model.n_params();
        for ((scheme_group, pattern, sequence), rows) in buckets {
            if groups.last().map(|g| g.scheme_index) != Some(scheme_group) {
                groups.push(GroupInfo {
                    label: scheme.label(scheme_group).into(),
                    scheme_index: scheme_group,
                    n_pairs: 0,
                    n_obs: 0,
                    estimable: alloc::vec![false; k],
                });
            }
            let group = groups.len() - 1;
            let selection = selection_matrix(pattern, sequence);
            let r = selection.nrows();
            let n = rows.len();
            let mut mean = DVector::zeros(r);
            for row in &rows {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            mean /= n as f64;
            let mut scatter = DMatrix::zeros(r, r);
            for row in &rows {
                let d = DVector::from_row_slice(row) - &mean;
                scatter += &d * d.transpose();
            }
            let design = selection.to_matrix() * mean_model.design(sequence);
            groups[group].n_pairs += n;
            groups[group].n_obs += n * r;
            n_obs += n * r;
            cells.push(Cell { group, pattern, sequence, selection, n, mean, scatter, design });
        }

        for (g, info) in groups.iter_mut().enumerate() {
            let mut gram = DMatrix::zeros(k, k);
            for c in cells.iter().filter(|c| c.group == g) {
                gram += c.design.transpose() * &c.design * c.n as f64;
            }
            info.estimable = independent_columns(&gram, RANK_TOL);
            if info.rank() == 0 {
                return Err(Error::RankDeficient { group: info.label.clone() });
            }
        }

        Ok(Self { mean_model, scheme: scheme.clone(), groups, cells, counts, n_obs })
    }

    /// Mean structure.
    pub fn mean_model(&self) -> MeanModel {
        self.mean_model
    }

    /// Grouping scheme.
    pub fn scheme(&self) -> &GroupingScheme {
        &self.scheme
    }

    /// Groups with data, in scheme order.
    pub fn groups(&self) -> &[GroupInfo] {
        &self.groups
    }

    /// Cells ordered by group, pattern, sequence.
    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    /// Frequencies.
    pub fn counts(&self) -> &PatternCounts {
        &self.counts
    }

    /// Total observed responses.
    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    /// Total pairs.
    pub fn n_pairs(&self) -> usize {
        self.counts.total
    }

    /// Estimable fixed effects over all groups.
    pub fn n_estimable(&self) -> usize {
        self.groups.iter().map(GroupInfo::rank).sum()
    }

    /// Fixed effects per group.
    pub fn params_per_group(&self) -> usize {
        self.mean_model.n_params()
    }
}
