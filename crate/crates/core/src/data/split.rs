use std::collections::BTreeSet;

use log::warn;

use super::calendar::day_index;
use super::TravelRoute;

#[derive(Clone, Debug, Default)]
pub struct DatasetSplit {
    pub train: Vec<TravelRoute>,
    pub validation: Vec<TravelRoute>,
    pub test: Vec<TravelRoute>,
    /// Set when there were too few distinct days and routes were split
    /// individually in departure order instead.
    pub per_route_fallback: bool,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Partition sizes for `n` items; validation and test get at least one item
/// whenever their ratio is positive and `n ≥ 3`.
fn partition_sizes(n: usize, ratios: [f64; 3]) -> (usize, usize, usize) {
    let mut val = (n as f64 * ratios[1]).round() as usize;
    let mut test = (n as f64 * ratios[2]).round() as usize;
    if n >= 3 {
        if ratios[1] > 0.0 {
            val = val.max(1);
        }
        if ratios[2] > 0.0 {
            test = test.max(1);
        }
    }
    val = val.min(n);
    test = test.min(n - val);
    (n - val - test, val, test)
}

/// Splits routes by departure day: the earliest days go to training, then
/// validation, then test. Routes sharing a day always land together.
pub fn chronological_split(routes: &[TravelRoute], ratios: [f64; 3]) -> DatasetSplit {
    let days: BTreeSet<i64> = routes.iter().map(|r| day_index(r.departure)).collect();
    let mut out = DatasetSplit::default();
    if days.len() < 3 {
        warn!(
            "only {} distinct departure day(s); splitting per route instead of per day",
            days.len()
        );
        let mut sorted: Vec<&TravelRoute> = routes.iter().collect();
        sorted.sort_by_key(|r| (r.departure, r.route_id));
        let (n_train, n_val, _) = partition_sizes(sorted.len(), ratios);
        for (i, r) in sorted.into_iter().enumerate() {
            let dst = if i < n_train {
                &mut out.train
            } else if i < n_train + n_val {
                &mut out.validation
            } else {
                &mut out.test
            };
            dst.push(r.clone());
        }
        out.per_route_fallback = true;
        return out;
    }
    let days: Vec<i64> = days.into_iter().collect();
    let (n_train, n_val, _) = partition_sizes(days.len(), ratios);
    let train_end = days[n_train - 1];
    let val_end = if n_val > 0 {
        Some(days[n_train + n_val - 1])
    } else {
        None
    };
    let mut sorted: Vec<&TravelRoute> = routes.iter().collect();
    sorted.sort_by_key(|r| (r.departure, r.route_id));
    for r in sorted {
        let d = day_index(r.departure);
        if d <= train_end {
            out.train.push(r.clone());
        } else if val_end.is_some_and(|end| d <= end) {
            out.validation.push(r.clone());
        } else {
            out.test.push(r.clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{calendar::SECONDS_PER_DAY, Link};

    fn route_on_day(id: u64, day: i64, second: i64) -> TravelRoute {
        TravelRoute::new(
            id,
            1_704_067_200 + day * SECONDS_PER_DAY + second,
            0,
            vec![Link {
                segment: 0,
                time_s: 10.0,
            }],
        )
        .unwrap()
    }

    #[test]
    fn ten_days_split_seven_one_two() {
        let routes: Vec<_> = (0..10).map(|d| route_on_day(d as u64, d, 100)).collect();
        let s = chronological_split(&routes, [0.7, 0.1, 0.2]);
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (7, 1, 2));
        assert!(!s.per_route_fallback);
        assert!(s.train.iter().all(|r| r.route_id < 7));
        assert_eq!(s.validation[0].route_id, 7);
    }

    #[test]
    fn single_route_falls_back() {
        let s = chronological_split(&[route_on_day(1, 0, 0)], [0.7, 0.1, 0.2]);
        assert!(s.per_route_fallback);
        assert_eq!(s.len(), 1);
        assert_eq!(s.train.len(), 1);
    }
}
