//! Offline (route, calendar, historical traffic) and online (driving
//! behaviour, decision history) request features.

mod traffic;

use serde::{Deserialize, Serialize};

use crate::data::{Background, Request, RoadNetwork, SegmentId};
use crate::error::{Error, Result};

pub use traffic::{slots_per_week, weekly_slot, SlotStats, TrafficConditionStore};

/// Width of the numeric segment attribute vector.
pub const SPATIAL_DIM: usize = 6;

/// Decision recorded against a traveled segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HistoryMark {
    /// No request was answered while on this segment.
    None,
    Lookup,
    Repredict,
}

impl HistoryMark {
    pub const COUNT: usize = 3;

    pub fn code(self) -> usize {
        match self {
            HistoryMark::None => 0,
            HistoryMark::Lookup => 1,
            HistoryMark::Repredict => 2,
        }
    }

    /// Merges two events on the same segment; a re-prediction dominates.
    pub fn merge(self, other: HistoryMark) -> HistoryMark {
        if other.code() > self.code() {
            other
        } else {
            self
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfflineFeatures {
    pub segments: Vec<SegmentId>,
    /// Numeric attributes per segment: length/km, limit/20 m/s, lanes/3,
    /// one-hot road class.
    pub spatial: Vec<[f64; SPATIAL_DIM]>,
    pub lengths_m: Vec<f64>,
    /// Weekly slot indices `t_c - p ..= t_c` per segment, oldest first.
    pub temporal: Vec<Vec<u32>>,
    /// Historical statistics matching `temporal`.
    pub traffic: Vec<Vec<SlotStats>>,
    pub background: Background,
}

impl OfflineFeatures {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// `p + 1`.
    pub fn depth(&self) -> usize {
        self.temporal.first().map_or(0, Vec::len)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OnlineFeatures {
    /// Realised speed per traveled segment, m/s.
    pub speeds: Vec<f64>,
    /// `ln(speed / reference speed)` per traveled segment.
    pub log_ratio: Vec<f64>,
    pub history: Vec<HistoryMark>,
}

impl OnlineFeatures {
    pub fn len(&self) -> usize {
        self.speeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speeds.is_empty()
    }
}

/// Read-only inputs shared by every feature extraction call.
#[derive(Clone, Copy, Debug)]
pub struct FeatureContext<'a> {
    pub network: &'a RoadNetwork,
    pub store: &'a TrafficConditionStore,
    pub past_slots: usize,
}

impl<'a> FeatureContext<'a> {
    pub fn new(network: &'a RoadNetwork, store: &'a TrafficConditionStore, past_slots: usize) -> Self {
        Self {
            network,
            store,
            past_slots,
        }
    }

    pub fn offline(&self, request: &Request<'_>) -> Result<OfflineFeatures> {
        extract_offline(request, self.network, self.store, self.past_slots)
    }

    pub fn online(&self, request: &Request<'_>, history: &[HistoryMark]) -> Result<OnlineFeatures> {
        extract_online(request, history, self.network, self.store)
    }
}

pub fn spatial_vector(network: &RoadNetwork, segment: SegmentId) -> Result<[f64; SPATIAL_DIM]> {
    let a = network.segment(segment)?;
    let mut v = [0.0; SPATIAL_DIM];
    v[0] = a.length_m / 1000.0;
    v[1] = a.speed_limit_mps / 20.0;
    v[2] = a.lanes as f64 / 3.0;
    v[3 + a.road_class.code() as usize] = 1.0;
    Ok(v)
}

/// Slot indices `t_c - p ..= t_c`, wrapping around the week.
pub fn past_slots(current: u32, p: usize, slots_per_week: u32) -> Vec<u32> {
    (0..=p)
        .rev()
        .map(|back| ((current as i64 - back as i64).rem_euclid(slots_per_week as i64)) as u32)
        .collect()
}

/// Offline features of every segment of the request's route, relative to
/// the wall-clock slot of the request.
pub fn extract_offline(
    request: &Request<'_>,
    network: &RoadNetwork,
    store: &TrafficConditionStore,
    p: usize,
) -> Result<OfflineFeatures> {
    let current = weekly_slot(request.wall_clock(), store.slot_minutes());
    let slots = past_slots(current, p, store.slots_per_week());
    let links = &request.route.links;
    let mut out = OfflineFeatures {
        segments: Vec::with_capacity(links.len()),
        spatial: Vec::with_capacity(links.len()),
        lengths_m: Vec::with_capacity(links.len()),
        temporal: Vec::with_capacity(links.len()),
        traffic: Vec::with_capacity(links.len()),
        background: request.route.background,
    };
    for l in links {
        let attrs = network.segment(l.segment).map_err(|_| {
            Error::Data(format!(
                "route {} references unknown segment {}",
                request.route.route_id, l.segment
            ))
        })?;
        out.segments.push(l.segment);
        out.spatial.push(spatial_vector(network, l.segment)?);
        out.lengths_m.push(attrs.length_m);
        out.temporal.push(slots.clone());
        out.traffic
            .push(slots.iter().map(|&s| store.get(l.segment, s)).collect());
    }
    Ok(out)
}

/// Online features for the traveled prefix. `history` may be shorter than
/// the prefix; missing positions carry [`HistoryMark::None`].
pub fn extract_online(
    request: &Request<'_>,
    history: &[HistoryMark],
    network: &RoadNetwork,
    store: &TrafficConditionStore,
) -> Result<OnlineFeatures> {
    let traveled = request.traveled();
    if history.len() > traveled.len() {
        return Err(Error::Consistency(format!(
            "decision history has {} entries but only {} segments are traveled",
            history.len(),
            traveled.len()
        )));
    }
    let mut out = OnlineFeatures::default();
    for (i, l) in traveled.iter().enumerate() {
        let speed = network.segment(l.segment)?.length_m / l.time_s;
        out.speeds.push(speed);
        out.log_ratio.push((speed / store.reference_speed(l.segment)).ln());
        out.history.push(history.get(i).copied().unwrap_or(HistoryMark::None));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Link, RoadClass, SegmentAttrs, TravelRoute};

    fn fixture() -> (RoadNetwork, TravelRoute) {
        let seg = |from, to, len| SegmentAttrs {
            from,
            to,
            length_m: len,
            speed_limit_mps: 15.0,
            lanes: 2,
            road_class: RoadClass::Collector,
        };
        let net = RoadNetwork::new(4, vec![seg(0, 1, 100.0), seg(1, 2, 200.0), seg(2, 3, 300.0)]).unwrap();
        let route = TravelRoute::new(
            9,
            1_704_067_200 + 3600,
            3,
            vec![
                Link {
                    segment: 0,
                    time_s: 10.0,
                },
                Link {
                    segment: 1,
                    time_s: 20.0,
                },
                Link {
                    segment: 2,
                    time_s: 30.0,
                },
            ],
        )
        .unwrap();
        (net, route)
    }

    #[test]
    fn offline_shapes() {
        let (net, route) = fixture();
        let store = TrafficConditionStore::build(std::slice::from_ref(&route), 5, &net).unwrap();
        let req = Request::new(&route, 0.0).unwrap();
        let f = extract_offline(&req, &net, &store, 2).unwrap();
        assert_eq!(f.len(), 3);
        assert_eq!(f.temporal.len(), 3);
        assert!(f.temporal.iter().all(|t| t.len() == 3));
        assert!(f.traffic.iter().all(|t| t.len() == 3));
        assert_eq!(f.temporal[0], vec![10, 11, 12]);
        let f0 = extract_offline(&req, &net, &store, 0).unwrap();
        assert_eq!(f0.depth(), 1);
    }

    #[test]
    fn past_slots_wrap_the_week() {
        assert_eq!(past_slots(1, 3, 2016), vec![2014, 2015, 0, 1]);
    }

    #[test]
    fn online_speeds_and_history() {
        let (net, route) = fixture();
        let store = TrafficConditionStore::build(std::slice::from_ref(&route), 5, &net).unwrap();
        let at_start = Request::new(&route, 0.0).unwrap();
        let f = extract_online(&at_start, &[], &net, &store).unwrap();
        assert!(f.is_empty() && f.history.is_empty());

        let req = Request::new(&route, 30.0).unwrap();
        let f = extract_online(&req, &[HistoryMark::Repredict], &net, &store).unwrap();
        assert_eq!(f.speeds, vec![10.0, 10.0]);
        assert_eq!(f.history, vec![HistoryMark::Repredict, HistoryMark::None]);
        let too_long = [HistoryMark::Lookup; 3];
        assert!(matches!(
            extract_online(&req, &too_long, &net, &store),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn unknown_segment_is_named() {
        let (net, _) = fixture();
        let bad = TravelRoute::new(
            1,
            0,
            0,
            vec![Link {
                segment: 7,
                time_s: 1.0,
            }],
        )
        .unwrap();
        let store = TrafficConditionStore::build(&[], 5, &net).unwrap();
        let req = Request::new(&bad, 0.0).unwrap();
        let err = extract_offline(&req, &net, &store, 1).unwrap_err();
        assert!(err.to_string().contains("segment 7"), "{err}");
    }
}
