//! Curriculum over en-route samples: a route-length × traveled-fraction
//! grid, difficulty ordering and the two-level release schedule.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::config::{CurriculumConfig, Neighborhood};
use crate::data::{request_times, split_route, RoadNetwork, RouteId, TravelRoute};
use crate::error::{Error, Result};

/// One en-route request of a training route.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    /// Index into the route slice the sample was enumerated from.
    pub route_index: usize,
    pub route_id: RouteId,
    pub t: f64,
    pub split_index: usize,
    pub n_links: usize,
    /// Traveled distance over total distance, in [0, 1).
    pub traveled_fraction: f64,
}

/// Requests at `0, Δt, 2Δt, …` strictly before each trip ends.
pub fn enumerate_samples(
    routes: &[TravelRoute],
    network: &RoadNetwork,
    interval_s: f64,
) -> Result<Vec<TrainingSample>> {
    if !(interval_s > 0.0) {
        return Err(Error::Config("train.interval_s: must be > 0".into()));
    }
    let mut out = Vec::new();
    for (route_index, r) in routes.iter().enumerate() {
        let total = r.total_length_m(network);
        for t in request_times(r, interval_s) {
            let split = split_route(r, t)?;
            let done: f64 = split
                .traveled
                .iter()
                .map(|l| network.segments()[l.segment as usize].length_m)
                .sum();
            out.push(TrainingSample {
                route_index,
                route_id: r.route_id,
                t,
                split_index: split.split_index,
                n_links: r.len(),
                traveled_fraction: (done / total).min(1.0 - f64::EPSILON),
            });
        }
    }
    Ok(out)
}

/// MAE (s), MAPE (%) and their sum for one sample's remaining time.
pub fn difficulty(truth: f64, estimate: f64) -> (f64, f64, f64) {
    let mae = (estimate - truth).abs();
    let mape = mae / truth * 100.0;
    (mae, mape, mae + mape)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetasetGrid {
    pub n: usize,
    pub m: usize,
    /// `cells[i][j]`: sample indices of subset `i`, metaset `j`.
    pub cells: Vec<Vec<Vec<usize>>>,
    /// Inclusive (min, max) link count of each subset.
    pub subset_bounds: Vec<(usize, usize)>,
    /// Lower edge of each metaset's traveled-fraction bin.
    pub metaset_edges: Vec<f64>,
    pub subset_of: Vec<usize>,
    pub metaset_of: Vec<usize>,
    /// Per-sample (mae, mape, mu) once scored.
    pub scores: Option<Vec<(f64, f64, f64)>>,
}

/// Splits samples into equal-frequency link-count subsets and equal-width
/// traveled-fraction metasets. Empty strata are dropped with a warning.
pub fn partition(samples: &[TrainingSample], n: usize, m: usize) -> Result<MetasetGrid> {
    if n == 0 || m == 0 {
        return Err(Error::Config(
            "curriculum.subsets and curriculum.metasets must be ≥ 1".into(),
        ));
    }
    if samples.is_empty() {
        return Err(Error::Schedule("no samples to partition".into()));
    }
    let total = samples.len();
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by_key(|&i| samples[i].n_links);

    // subset = floor(rank of first equal value · N / total), ties stay together
    let mut raw_subset = vec![0usize; total];
    let mut k = 0;
    while k < total {
        let v = samples[order[k]].n_links;
        let mut e = k;
        while e < total && samples[order[e]].n_links == v {
            e += 1;
        }
        let s = (k * n / total).min(n - 1);
        for &i in &order[k..e] {
            raw_subset[i] = s;
        }
        k = e;
    }
    let raw_metaset: Vec<usize> = samples
        .iter()
        .map(|s| ((s.traveled_fraction * m as f64).floor() as usize).min(m - 1))
        .collect();

    let used_s: Vec<usize> = raw_subset
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let used_m: Vec<usize> = raw_metaset
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if used_s.len() < n {
        warn!(
            "only {} non-empty route-length subsets; shrinking from {n}",
            used_s.len()
        );
    }
    if used_m.len() < m {
        warn!(
            "only {} non-empty traveled-fraction metasets; shrinking from {m}",
            used_m.len()
        );
    }
    let remap = |used: &[usize], x: usize| used.binary_search(&x).expect("value is used");
    let subset_of: Vec<usize> = raw_subset.iter().map(|&s| remap(&used_s, s)).collect();
    let metaset_of: Vec<usize> = raw_metaset.iter().map(|&j| remap(&used_m, j)).collect();
    let (n2, m2) = (used_s.len(), used_m.len());
    let mut cells = vec![vec![Vec::new(); m2]; n2];
    let mut subset_bounds = vec![(usize::MAX, 0usize); n2];
    for (i, s) in samples.iter().enumerate() {
        cells[subset_of[i]][metaset_of[i]].push(i);
        let b = &mut subset_bounds[subset_of[i]];
        b.0 = b.0.min(s.n_links);
        b.1 = b.1.max(s.n_links);
    }
    Ok(MetasetGrid {
        n: n2,
        m: m2,
        cells,
        subset_bounds,
        metaset_edges: used_m.iter().map(|&j| j as f64 / m as f64).collect(),
        subset_of,
        metaset_of,
        scores: None,
    })
}

impl MetasetGrid {
    pub fn n_samples(&self) -> usize {
        self.subset_of.len()
    }

    /// Attaches per-sample scores and sorts every cell by ascending μ
    /// (sample index breaks ties).
    pub fn apply_scores(&mut self, scores: Vec<(f64, f64, f64)>) -> Result<()> {
        if scores.len() != self.n_samples() {
            return Err(Error::Consistency(format!(
                "{} scores for {} samples",
                scores.len(),
                self.n_samples()
            )));
        }
        for row in &mut self.cells {
            for cell in row {
                cell.sort_by(|&a, &b| scores[a].2.total_cmp(&scores[b].2).then(a.cmp(&b)));
            }
        }
        self.scores = Some(scores);
        Ok(())
    }

    pub fn is_scored(&self) -> bool {
        self.scores.is_some()
    }

    /// The easiest `ceil(len · fraction)` samples of each listed cell.
    pub fn released(&self, cells: &[(usize, usize)], fraction: f64) -> Vec<usize> {
        let mut out = Vec::new();
        for &(i, j) in cells {
            let cell = &self.cells[i][j];
            let k = ((cell.len() as f64 * fraction).ceil() as usize).min(cell.len());
            out.extend_from_slice(&cell[..k]);
        }
        out
    }

    /// CSV `route_id,t,subset,metaset,mae,mape,mu`.
    pub fn write_scores_csv(&self, samples: &[TrainingSample], path: &Path) -> Result<()> {
        let scores = self
            .scores
            .as_ref()
            .ok_or_else(|| Error::State("difficulty scores have not been computed".into()))?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "route_id,t,subset,metaset,mae,mape,mu")?;
        for (i, s) in samples.iter().enumerate() {
            let (mae, mape, mu) = scores[i];
            writeln!(
                w,
                "{},{},{},{},{mae},{mape},{mu}",
                s.route_id, s.t, self.subset_of[i], self.metaset_of[i]
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// 1-based start index `round(κ · n)` clamped to `[1, n]`.
pub fn start_index(kappa: f64, n: usize) -> usize {
    ((kappa * n as f64).round() as usize).clamp(1, n)
}

/// Epochs until every cell is included, counting the start epoch, as
/// bounded by the distance to the farthest corner.
pub fn coverage_bound(n: usize, m: usize, start: (usize, usize)) -> usize {
    let (ks, km) = start;
    (n - ks).max(ks - 1).max(m - km).max(km - 1) + 1
}

/// One epoch of the schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochPlan {
    /// 1-based training circle.
    pub circle: usize,
    /// 1-based epoch within the circle.
    pub epoch: usize,
    /// 0-based (subset, metaset) cells in the pool.
    pub cells: Vec<(usize, usize)>,
    /// Fraction of each cell released in this circle.
    pub released_fraction: f64,
}

/// Two-level schedule: circles release harder tranches of every cell;
/// within a circle the pool grows outward from the start cell.
#[derive(Clone, Debug)]
pub struct Scheduler {
    n: usize,
    m: usize,
    start: (usize, usize),
    circles: usize,
    epochs_per_circle: usize,
    tolerance: f64,
    neighborhood: Neighborhood,
    circle: usize,
    epoch: usize,
    included: Vec<Vec<bool>>,
    frontier: Vec<(usize, usize)>,
    last_val: Option<f64>,
    circle_done: bool,
    finished: bool,
}

impl Scheduler {
    pub fn new(n: usize, m: usize, cfg: &CurriculumConfig) -> Result<Self> {
        for (k, name) in [(cfg.kappa_s, "curriculum.kappa_s"), (cfg.kappa_m, "curriculum.kappa_m")] {
            if !(k > 0.0 && k < 1.0) {
                return Err(Error::Config(format!("{name}: must lie in (0, 1)")));
            }
        }
        Self::with_start(n, m, (start_index(cfg.kappa_s, n), start_index(cfg.kappa_m, m)), cfg)
    }

    /// `start` is 1-based.
    pub fn with_start(n: usize, m: usize, start: (usize, usize), cfg: &CurriculumConfig) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::Config("curriculum grid must be at least 1×1".into()));
        }
        if !(1..=n).contains(&start.0) || !(1..=m).contains(&start.1) {
            return Err(Error::Config(format!("start cell {start:?} outside [1,{n}]×[1,{m}]")));
        }
        if cfg.circles == 0 || cfg.epochs_per_circle == 0 {
            return Err(Error::Config(
                "curriculum.circles and curriculum.epochs_per_circle must be ≥ 1".into(),
            ));
        }
        Ok(Self {
            n,
            m,
            start,
            circles: cfg.circles,
            epochs_per_circle: cfg.epochs_per_circle,
            tolerance: cfg.tolerance,
            neighborhood: cfg.neighborhood,
            circle: 0,
            epoch: 0,
            included: vec![vec![false; m]; n],
            frontier: Vec::new(),
            last_val: None,
            circle_done: true,
            finished: false,
        })
    }

    pub fn start(&self) -> (usize, usize) {
        self.start
    }

    pub fn all_included(&self) -> bool {
        self.included.iter().all(|r| r.iter().all(|&x| x))
    }

    fn neighbours(&self, (i, j): (usize, usize)) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(8);
        for di in -1i64..=1 {
            for dj in -1i64..=1 {
                if (di, dj) == (0, 0) {
                    continue;
                }
                if self.neighborhood == Neighborhood::Four && di != 0 && dj != 0 {
                    continue;
                }
                let (a, b) = (i as i64 + di, j as i64 + dj);
                if a >= 0 && b >= 0 && (a as usize) < self.n && (b as usize) < self.m {
                    out.push((a as usize, b as usize));
                }
            }
        }
        out
    }

    fn begin_circle(&mut self) {
        self.circle += 1;
        self.epoch = 0;
        self.last_val = None;
        self.circle_done = false;
        self.included = vec![vec![false; self.m]; self.n];
        let s = (self.start.0 - 1, self.start.1 - 1);
        self.included[s.0][s.1] = true;
        self.frontier = vec![s];
    }

    fn expand(&mut self) {
        let mut next = Vec::new();
        for c in std::mem::take(&mut self.frontier) {
            for nb in self.neighbours(c) {
                if !self.included[nb.0][nb.1] {
                    self.included[nb.0][nb.1] = true;
                    next.push(nb);
                }
            }
        }
        self.frontier = next;
    }

    /// The next epoch's pool, or `None` once every circle has finished.
    pub fn next_epoch(&mut self) -> Option<EpochPlan> {
        if self.finished {
            return None;
        }
        if self.circle_done || self.epoch >= self.epochs_per_circle {
            if self.circle >= self.circles {
                self.finished = true;
                return None;
            }
            self.begin_circle();
        } else {
            self.expand();
        }
        self.epoch += 1;
        let mut cells = Vec::new();
        for i in 0..self.n {
            for j in 0..self.m {
                if self.included[i][j] {
                    cells.push((i, j));
                }
            }
        }
        Some(EpochPlan {
            circle: self.circle,
            epoch: self.epoch,
            cells,
            released_fraction: self.circle as f64 / self.circles as f64,
        })
    }

    /// Records the validation loss after an epoch. Once the pool covers the
    /// whole grid, a change below the tolerance ends the circle.
    pub fn report_validation(&mut self, loss: f64) -> bool {
        let stop = self.all_included() && self.last_val.is_some_and(|prev| (loss - prev).abs() < self.tolerance);
        self.last_val = Some(loss);
        if stop {
            self.circle_done = true;
        }
        stop
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Link;

    fn cfg(circles: usize, ep: usize) -> CurriculumConfig {
        CurriculumConfig {
            circles,
            epochs_per_circle: ep,
            ..CurriculumConfig::default()
        }
    }

    #[test]
    fn enumerate_counts() {
        let net = RoadNetwork::new(
            2,
            vec![crate::data::SegmentAttrs {
                from: 0,
                to: 1,
                length_m: 100.0,
                speed_limit_mps: 10.0,
                lanes: 1,
                road_class: crate::data::RoadClass::Local,
            }],
        )
        .unwrap();
        let r = TravelRoute::new(
            1,
            0,
            0,
            vec![Link {
                segment: 0,
                time_s: 100.0,
            }],
        )
        .unwrap();
        let s = enumerate_samples(std::slice::from_ref(&r), &net, 30.0).unwrap();
        assert_eq!(s.iter().map(|x| x.t).collect::<Vec<_>>(), vec![0.0, 30.0, 60.0, 90.0]);
        assert_eq!(enumerate_samples(&[r], &net, 500.0).unwrap().len(), 1);
    }

    #[test]
    fn difficulty_hand_case() {
        assert_eq!(difficulty(100.0, 110.0), (10.0, 10.0, 20.0));
        assert_eq!(difficulty(50.0, 50.0).2, 0.0);
    }

    #[test]
    fn single_cell_grid_pool_is_everything() {
        let mut s = Scheduler::new(1, 1, &cfg(1, 3)).unwrap();
        let p = s.next_epoch().unwrap();
        assert_eq!(p.cells, vec![(0, 0)]);
        assert_eq!(p.released_fraction, 1.0);
    }

    #[test]
    fn centre_start_covers_after_one_expansion() {
        let mut s = Scheduler::with_start(3, 3, (2, 2), &cfg(1, 5)).unwrap();
        assert_eq!(s.next_epoch().unwrap().cells.len(), 1);
        assert_eq!(s.next_epoch().unwrap().cells.len(), 9);
        assert_eq!(coverage_bound(3, 3, (2, 2)), 2);
    }

    #[test]
    fn early_stop_needs_full_coverage() {
        let mut s = Scheduler::with_start(1, 3, (1, 1), &cfg(2, 10)).unwrap();
        s.next_epoch();
        assert!(!s.report_validation(1.0));
        s.next_epoch();
        assert!(!s.report_validation(1.0));
        let p = s.next_epoch().unwrap();
        assert_eq!(p.cells.len(), 3);
        assert!(!s.report_validation(0.5));
        s.next_epoch();
        assert!(s.report_validation(0.5));
        let p = s.next_epoch().unwrap();
        assert_eq!((p.circle, p.epoch, p.cells.len()), (2, 1, 1));
    }

    #[test]
    fn invalid_start_fraction_rejected() {
        let c = CurriculumConfig {
            kappa_s: 1.0,
            ..CurriculumConfig::default()
        };
        assert!(matches!(Scheduler::new(4, 4, &c), Err(Error::Config(_))));
    }
}
