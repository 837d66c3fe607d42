use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::calendar::MINUTES_PER_WEEK;
use crate::data::{RoadNetwork, SegmentId, TravelRoute};
use crate::error::{Error, Result};

/// Weekly slot of `epoch`: minutes since Monday 00:00 divided by `slot_minutes`.
pub fn weekly_slot(epoch: i64, slot_minutes: u32) -> u32 {
    (crate::data::calendar::minutes_since_monday(epoch) / slot_minutes as i64) as u32
}

pub fn slots_per_week(slot_minutes: u32) -> u32 {
    (MINUTES_PER_WEEK / slot_minutes as i64) as u32
}

/// Speed statistics of one (segment, slot) cell, m/s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotStats {
    pub v_min: f64,
    pub v_max: f64,
    pub v_med: f64,
    pub v_avg: f64,
}

impl SlotStats {
    pub fn uniform(v: f64) -> Self {
        Self {
            v_min: v,
            v_max: v,
            v_med: v,
            v_avg: v,
        }
    }

    /// Statistics of a non-empty sample.
    pub fn from_samples(samples: &mut [f64]) -> Self {
        assert!(!samples.is_empty());
        samples.sort_by(f64::total_cmp);
        let n = samples.len();
        let v_med = if n % 2 == 1 {
            samples[n / 2]
        } else {
            (samples[n / 2 - 1] + samples[n / 2]) / 2.0
        };
        let v_avg = samples.iter().sum::<f64>() / n as f64;
        Self {
            v_min: samples[0],
            v_max: samples[n - 1],
            v_med,
            // clamp guards against summation rounding pushing the mean outside
            v_avg: v_avg.clamp(samples[0], samples[n - 1]),
        }
    }

    pub fn is_ordered(&self) -> bool {
        self.v_min <= self.v_med && self.v_med <= self.v_max && self.v_min <= self.v_avg && self.v_avg <= self.v_max
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.v_min, self.v_max, self.v_med, self.v_avg]
    }
}

/// Historical speed statistics keyed by segment and weekly slot.
#[derive(Clone, Debug, PartialEq)]
pub struct TrafficConditionStore {
    slot_minutes: u32,
    cells: BTreeMap<(SegmentId, u32), SlotStats>,
    fallback: SlotStats,
    /// Mean of observed `v_avg` per segment; fallback mean when unobserved.
    reference: Vec<f64>,
}

impl TrafficConditionStore {
    fn from_parts(
        slot_minutes: u32,
        cells: BTreeMap<(SegmentId, u32), SlotStats>,
        fallback: SlotStats,
        n_segments: usize,
    ) -> Self {
        let mut sums = vec![(0.0, 0usize); n_segments];
        for (&(seg, _), st) in &cells {
            if let Some(slot) = sums.get_mut(seg as usize) {
                slot.0 += st.v_avg;
                slot.1 += 1;
            }
        }
        let reference = sums
            .into_iter()
            .map(|(s, n)| if n == 0 { fallback.v_avg } else { s / n as f64 })
            .collect();
        Self {
            slot_minutes,
            cells,
            fallback,
            reference,
        }
    }

    /// Aggregates the speed of every traversal in `routes`, bucketed by the
    /// weekly slot in which the segment was entered.
    pub fn build(routes: &[TravelRoute], slot_minutes: u32, network: &RoadNetwork) -> Result<Self> {
        if slot_minutes == 0 || 60 % slot_minutes != 0 {
            return Err(Error::Config("data.slot_minutes: must divide 60".into()));
        }
        let mut samples: BTreeMap<(SegmentId, u32), Vec<f64>> = BTreeMap::new();
        let mut total = 0.0;
        let mut count = 0usize;
        for r in routes {
            let mut clock = 0.0;
            for l in &r.links {
                let len = network.segment(l.segment)?.length_m;
                let v = len / l.time_s;
                let slot = weekly_slot(r.departure + clock as i64, slot_minutes);
                samples.entry((l.segment, slot)).or_default().push(v);
                total += v;
                count += 1;
                clock += l.time_s;
            }
        }
        let fallback_speed = if count == 0 {
            network.segments().iter().map(|s| s.speed_limit_mps).sum::<f64>() / network.n_segments().max(1) as f64
        } else {
            total / count as f64
        };
        let cells = samples
            .into_iter()
            .map(|(k, mut v)| (k, SlotStats::from_samples(&mut v)))
            .collect();
        Ok(Self::from_parts(
            slot_minutes,
            cells,
            SlotStats::uniform(fallback_speed),
            network.n_segments(),
        ))
    }

    pub fn slot_minutes(&self) -> u32 {
        self.slot_minutes
    }

    pub fn slots_per_week(&self) -> u32 {
        slots_per_week(self.slot_minutes)
    }

    pub fn fallback(&self) -> SlotStats {
        self.fallback
    }

    pub fn observed(&self, segment: SegmentId, slot: u32) -> Option<SlotStats> {
        self.cells.get(&(segment, slot)).copied()
    }

    pub fn get(&self, segment: SegmentId, slot: u32) -> SlotStats {
        self.observed(segment, slot).unwrap_or(self.fallback)
    }

    /// Typical speed of a segment across all observed slots.
    pub fn reference_speed(&self, segment: SegmentId) -> f64 {
        self.reference
            .get(segment as usize)
            .copied()
            .unwrap_or(self.fallback.v_avg)
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> impl Iterator<Item = (SegmentId, u32, SlotStats)> + '_ {
        self.cells.iter().map(|(&(s, t), &st)| (s, t, st))
    }

    /// CSV with header `segment_id,slot,v_min,v_max,v_med,v_avg`; the
    /// fallback row comes first with segment id and slot `-1`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "segment_id,slot,v_min,v_max,v_med,v_avg")?;
        let f = self.fallback;
        writeln!(w, "-1,-1,{},{},{},{}", f.v_min, f.v_max, f.v_med, f.v_avg)?;
        let mut keys: Vec<_> = self.cells.keys().copied().collect();
        keys.sort_unstable();
        for k in keys {
            let s = self.cells[&k];
            writeln!(w, "{},{},{},{},{},{}", k.0, k.1, s.v_min, s.v_max, s.v_med, s.v_avg)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path, slot_minutes: u32, n_segments: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        let bad = |line: usize, msg: &str| Error::parse(path, line, msg.to_string());
        if slot_minutes == 0 || 60 % slot_minutes != 0 {
            return Err(Error::Config("data.slot_minutes: must divide 60".into()));
        }
        match lines.next() {
            Some((_, h)) if h.trim() == "segment_id,slot,v_min,v_max,v_med,v_avg" => {}
            _ => return Err(bad(1, "expected header `segment_id,slot,v_min,v_max,v_med,v_avg`")),
        }
        let mut fallback = None;
        let mut cells = BTreeMap::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 6 {
                return Err(bad(lineno, "expected 6 fields"));
            }
            let seg: i64 = parts[0].trim().parse().map_err(|_| bad(lineno, "bad segment_id"))?;
            let slot: i64 = parts[1].trim().parse().map_err(|_| bad(lineno, "bad slot"))?;
            let mut v = [0.0; 4];
            for (k, p) in parts[2..].iter().enumerate() {
                v[k] = p.trim().parse().map_err(|_| bad(lineno, "bad speed value"))?;
            }
            let stats = SlotStats {
                v_min: v[0],
                v_max: v[1],
                v_med: v[2],
                v_avg: v[3],
            };
            if !stats.is_ordered() || !(stats.v_min > 0.0) {
                return Err(bad(lineno, "speed statistics must be positive and ordered"));
            }
            if seg < 0 {
                fallback = Some(stats);
            } else {
                if slot < 0 || slot as u32 >= slots_per_week(slot_minutes) {
                    return Err(bad(lineno, "slot out of range"));
                }
                cells.insert((seg as SegmentId, slot as u32), stats);
            }
        }
        let fallback = fallback.ok_or_else(|| bad(2, "missing fallback row (segment_id -1)"))?;
        Ok(Self::from_parts(slot_minutes, cells, fallback, n_segments))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Link, RoadClass, SegmentAttrs};

    fn line_network() -> RoadNetwork {
        let seg = |from, to| SegmentAttrs {
            from,
            to,
            length_m: 100.0,
            speed_limit_mps: 15.0,
            lanes: 1,
            road_class: RoadClass::Local,
        };
        RoadNetwork::new(3, vec![seg(0, 1), seg(1, 2)]).unwrap()
    }

    fn route(id: u64, departure: i64, times: &[f64]) -> TravelRoute {
        let links = times
            .iter()
            .enumerate()
            .map(|(i, &t)| Link {
                segment: i as u32,
                time_s: t,
            })
            .collect();
        TravelRoute::new(id, departure, 0, links).unwrap()
    }

    #[test]
    fn slot_arithmetic() {
        let monday = 1_704_067_200;
        assert_eq!(weekly_slot(monday + 7 * 60, 5), 1);
        assert_eq!(weekly_slot(monday + 7 * 86_400 - 60, 5), 2015);
        assert_eq!(slots_per_week(5), 2016);
    }

    #[test]
    fn single_traversal_stats() {
        let store = TrafficConditionStore::build(&[route(1, 1_704_067_200, &[10.0])], 5, &line_network()).unwrap();
        assert_eq!(store.get(0, 0), SlotStats::uniform(10.0));
        assert_eq!(store.fallback(), SlotStats::uniform(10.0));
    }

    #[test]
    fn three_speeds_in_one_slot() {
        let t0 = 1_704_067_200;
        let routes = [
            route(1, t0, &[20.0]),
            route(2, t0 + 10, &[10.0]),
            route(3, t0 + 20, &[100.0 / 15.0]),
        ];
        let store = TrafficConditionStore::build(&routes, 5, &line_network()).unwrap();
        let s = store.get(0, 0);
        assert_eq!(s.v_min, 5.0);
        assert!((s.v_max - 15.0).abs() < 1e-12);
        assert_eq!(s.v_med, 10.0);
        assert!((s.v_avg - 10.0).abs() < 1e-12);
        // the second segment was never traversed
        assert_eq!(store.get(1, 0), store.fallback());
    }

    #[test]
    fn csv_round_trip() {
        let t0 = 1_704_067_200;
        let routes = [route(1, t0, &[20.0, 8.0]), route(2, t0 + 4000, &[10.0, 9.0])];
        let store = TrafficConditionStore::build(&routes, 5, &line_network()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("traffic.csv");
        store.write_csv(&p).unwrap();
        let back = TrafficConditionStore::read_csv(&p, 5, 2).unwrap();
        assert_eq!(back, store);
    }
}
