//! Steered-beamformer search over the folded hemisphere grid.
//!
//! The energy of grid point `k` is the sum, over microphone pairs, of the
//! pair correlation at the lag stored in the lookup table. Each of the `Q`
//! iterations takes the coarse argmax, refines it on the fine grid and then
//! zeroes the correlation values the winner used, so the next iteration
//! finds a different source.

use alloc::sync::Arc;
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::correlation::CorrelationSet;
use crate::error::{bail, Result};
use crate::geometry::{build_lookup_table, MicArrayGeometry, SearchGrid, TdoaLookupTable, Vec3};

/// Largest supported number of candidates per frame.
pub const MAX_SOURCES_PER_FRAME: usize = 4;

/// A grid together with its lookup table.
#[derive(Debug, Clone)]
pub struct SearchSpace {
    pub grid: SearchGrid,
    pub table: TdoaLookupTable,
}

impl SearchSpace {
    pub fn build(grid: SearchGrid, geom: &MicArrayGeometry, corr_len: usize) -> Result<Self> {
        let table = build_lookup_table(&grid, geom, corr_len)?;
        Ok(Self { grid, table })
    }
}

/// One candidate source location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub direction: Vec3,
    pub distance: f64,
    pub energy: f64,
    pub grid_index: usize,
}

impl Observation {
    pub fn position(&self, origin: Vec3) -> Vec3 {
        origin + self.direction * self.distance
    }
}

/// Candidates found in one frame, by descending energy.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BeamformerOutput {
    pub frame_index: u64,
    pub observations: Vec<Observation>,
}

/// Counts of table lookups spent in one search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SearchStats {
    pub coarse_lookups: u64,
    pub fine_lookups: u64,
}

/// `Σ_p R_p(lookup(k, p))`.
#[inline]
pub fn steered_energy(k: usize, corr: &CorrelationSet, table: &TdoaLookupTable) -> f64 {
    let len = corr.len();
    let values = corr.values();
    table
        .row(k)
        .iter()
        .enumerate()
        .map(|(p, &lag)| values[p * len + lag as usize])
        .sum()
}

/// Argmax of the energy over a contiguous range of grid indices; ties go to
/// the lowest index. Returns `None` for an empty range.
pub fn argmax_range(
    corr: &CorrelationSet,
    table: &TdoaLookupTable,
    range: Range<usize>,
) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for k in range {
        let e = steered_energy(k, corr, table);
        if best.is_none_or(|(_, b)| e > b) {
            best = Some((k, e));
        }
    }
    best
}

/// Combines two partial argmax results with the lowest-index tie break, so
/// any split of the grid reduces to the same winner.
pub fn merge_argmax(a: Option<(usize, f64)>, b: Option<(usize, f64)>) -> Option<(usize, f64)> {
    match (a, b) {
        (None, x) | (x, None) => x,
        (Some(x), Some(y)) => {
            if y.1 > x.1 || (y.1 == x.1 && y.0 < x.0) {
                Some(y)
            } else {
                Some(x)
            }
        }
    }
}

/// Strategy for the exhaustive energy scan over a whole grid.
pub trait CoarseScan {
    fn argmax(&self, corr: &CorrelationSet, table: &TdoaLookupTable) -> (usize, f64);
}

/// Single-threaded scan.
#[derive(Debug, Clone, Copy, Default)]
pub struct SerialScan;

impl CoarseScan for SerialScan {
    fn argmax(&self, corr: &CorrelationSet, table: &TdoaLookupTable) -> (usize, f64) {
        argmax_range(corr, table, 0..table.point_count()).expect("grid is not empty")
    }
}

/// How the coarse winner is refined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum FineSearch {
    /// Fine points within `radius_cells` coarse cells of the coarse winner
    /// in both `u` and `v`, at every fine distance.
    Local { radius_cells: f64 },
    /// The whole fine grid.
    Global,
    /// Report the coarse winner.
    Off,
}

impl Default for FineSearch {
    fn default() -> Self {
        FineSearch::Local { radius_cells: 1.5 }
    }
}

/// Coarse/fine search with iterative contribution removal.
#[derive(Debug, Clone)]
pub struct Localizer {
    coarse: Arc<SearchSpace>,
    fine: Option<Arc<SearchSpace>>,
    origin: Vec3,
    sources_per_frame: usize,
    fine_search: FineSearch,
    removal_radius: usize,
}

impl Localizer {
    pub fn new(
        coarse: Arc<SearchSpace>,
        fine: Option<Arc<SearchSpace>>,
        origin: Vec3,
        sources_per_frame: usize,
        fine_search: FineSearch,
    ) -> Result<Self> {
        if !(1..=MAX_SOURCES_PER_FRAME).contains(&sources_per_frame) {
            bail!(
                Config,
                "sources per frame must be in 1..={MAX_SOURCES_PER_FRAME}, got {sources_per_frame}"
            );
        }
        if fine.is_none() && fine_search != FineSearch::Off {
            bail!(Config, "fine search requested without a fine grid");
        }
        if let FineSearch::Local { radius_cells } = fine_search {
            if !(radius_cells >= 0.0 && radius_cells.is_finite()) {
                bail!(
                    Config,
                    "fine search radius must be non-negative, got {radius_cells}"
                );
            }
        }
        if let Some(f) = &fine {
            if f.table.pair_count() != coarse.table.pair_count()
                || f.table.correlation_len() != coarse.table.correlation_len()
            {
                bail!(
                    Config,
                    "coarse and fine tables disagree on pairs or correlation length"
                );
            }
        }
        Ok(Self {
            coarse,
            fine,
            origin,
            sources_per_frame,
            fine_search,
            removal_radius: 0,
        })
    }

    /// Also zeroes the `radius` lags on each side of every winner lag, so
    /// the flanks of a broad correlation peak are not found again.
    pub fn with_removal_radius(mut self, radius: usize) -> Self {
        self.removal_radius = radius;
        self
    }

    pub fn removal_radius(&self) -> usize {
        self.removal_radius
    }

    pub fn coarse(&self) -> &SearchSpace {
        &self.coarse
    }

    pub fn fine(&self) -> Option<&SearchSpace> {
        self.fine.as_deref()
    }

    pub fn sources_per_frame(&self) -> usize {
        self.sources_per_frame
    }

    /// Fine-grid indices within the local refinement window of coarse point
    /// `k`, in ascending order.
    pub fn fine_neighborhood(&self, k: usize) -> Vec<usize> {
        let (Some(fine), FineSearch::Local { radius_cells }) = (&self.fine, self.fine_search)
        else {
            return Vec::new();
        };
        let c = &self.coarse.grid;
        let f = &fine.grid;
        let p = c.point(k);
        let radius = radius_cells * c.step();
        let axis = |center: f64| -> Range<usize> {
            let tol = 1e-9;
            let lo = libm::ceil((center - radius + 1.0) / f.step() - tol).max(0.0) as usize;
            let hi = libm::floor((center + radius + 1.0) / f.step() + tol) as usize;
            lo..(hi + 1).min(f.side())
        };
        let nd = f.distances().len();
        let mut out = Vec::new();
        for iu in axis(p.u) {
            for iv in axis(p.v) {
                let base = f.index(iu, iv, 0);
                out.extend(base..base + nd);
            }
        }
        out
    }

    /// Runs the `Q` iterations on `corr`, which is left with the winners'
    /// lags zeroed.
    pub fn search(
        &self,
        corr: &mut CorrelationSet,
        scan: &dyn CoarseScan,
        frame_index: u64,
    ) -> Result<(BeamformerOutput, SearchStats)> {
        let pairs = self.coarse.table.pair_count();
        if corr.pair_count() != pairs || corr.len() != self.coarse.table.correlation_len() {
            bail!(Input, "correlation set does not match the lookup tables");
        }
        let mut stats = SearchStats::default();
        let mut observations = Vec::with_capacity(self.sources_per_frame);
        for _ in 0..self.sources_per_frame {
            let (ck, ce) = scan.argmax(corr, &self.coarse.table);
            stats.coarse_lookups += (self.coarse.table.point_count() * pairs) as u64;
            let (space, k, energy) = match (&self.fine, self.fine_search) {
                (Some(fine), FineSearch::Local { .. }) => {
                    let candidates = self.fine_neighborhood(ck);
                    stats.fine_lookups += (candidates.len() * pairs) as u64;
                    let mut best: Option<(usize, f64)> = None;
                    for &fk in &candidates {
                        let e = steered_energy(fk, corr, &fine.table);
                        if best.is_none_or(|(_, b)| e > b) {
                            best = Some((fk, e));
                        }
                    }
                    match best {
                        Some((fk, fe)) => (&**fine, fk, fe),
                        None => (&*self.coarse, ck, ce),
                    }
                }
                (Some(fine), FineSearch::Global) => {
                    stats.fine_lookups += (fine.table.point_count() * pairs) as u64;
                    let (fk, fe) = scan.argmax(corr, &fine.table);
                    (&**fine, fk, fe)
                }
                _ => (&*self.coarse, ck, ce),
            };
            let point = space.grid.point(k);
            observations.push(Observation {
                direction: point.direction,
                distance: point.distance,
                energy,
                grid_index: k,
            });
            let len = corr.len();
            let r = self.removal_radius.min(len / 2);
            for (p, &lag) in space.table.row(k).iter().enumerate() {
                for d in 0..=2 * r {
                    corr.set(p, (lag as usize + len + d - r) % len, 0.0);
                }
            }
        }
        observations.sort_by(|a, b| b.energy.total_cmp(&a.energy));
        Ok((
            BeamformerOutput {
                frame_index,
                observations,
            },
            stats,
        ))
    }

    /// Array center the grid directions are measured from.
    pub fn origin(&self) -> Vec3 {
        self.origin
    }
}
