//! Road network, travel routes, en-route requests and dataset splits.

pub mod calendar;
pub mod io;
mod split;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use split::{chronological_split, DatasetSplit};
pub use synth::{generate_synthetic_world, DriverProfile, SyntheticWorld};

pub type SegmentId = u32;
pub type VertexId = u32;
pub type RouteId = u64;

/// Number of weather categories carried in background information.
pub const WEATHER_CATEGORIES: u8 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoadClass {
    Arterial,
    Collector,
    Local,
}

impl RoadClass {
    pub const COUNT: usize = 3;

    pub fn code(self) -> u8 {
        match self {
            RoadClass::Arterial => 0,
            RoadClass::Collector => 1,
            RoadClass::Local => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(RoadClass::Arterial),
            1 => Some(RoadClass::Collector),
            2 => Some(RoadClass::Local),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentAttrs {
    pub from: VertexId,
    pub to: VertexId,
    pub length_m: f64,
    pub speed_limit_mps: f64,
    pub lanes: u8,
    pub road_class: RoadClass,
}

/// Directed road graph; segment ids are dense indices into `segments`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoadNetwork {
    n_vertices: u32,
    segments: Vec<SegmentAttrs>,
}

impl RoadNetwork {
    pub fn new(n_vertices: u32, segments: Vec<SegmentAttrs>) -> Result<Self> {
        for (id, s) in segments.iter().enumerate() {
            if s.from >= n_vertices || s.to >= n_vertices {
                return Err(Error::Data(format!(
                    "segment {id} references a vertex outside 0..{n_vertices}"
                )));
            }
            if !(s.length_m > 0.0 && s.length_m.is_finite()) {
                return Err(Error::Data(format!("segment {id}: length must be positive")));
            }
            if !(s.speed_limit_mps > 0.0 && s.speed_limit_mps.is_finite()) {
                return Err(Error::Data(format!("segment {id}: speed limit must be positive")));
            }
            if s.lanes == 0 {
                return Err(Error::Data(format!("segment {id}: lanes must be ≥ 1")));
            }
        }
        Ok(Self { n_vertices, segments })
    }

    pub fn n_vertices(&self) -> u32 {
        self.n_vertices
    }

    pub fn n_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn segments(&self) -> &[SegmentAttrs] {
        &self.segments
    }

    pub fn segment(&self, id: SegmentId) -> Result<&SegmentAttrs> {
        self.segments
            .get(id as usize)
            .ok_or_else(|| Error::Data(format!("unknown segment {id}")))
    }

    /// True when `next` starts where `prev` ends.
    pub fn connected(&self, prev: SegmentId, next: SegmentId) -> bool {
        match (self.segments.get(prev as usize), self.segments.get(next as usize)) {
            (Some(a), Some(b)) => a.to == b.from,
            _ => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub segment: SegmentId,
    pub time_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Background {
    /// 0 = Monday.
    pub weekday: u8,
    pub holiday: bool,
    pub rush_hour: bool,
    pub weather: u8,
}

impl Background {
    pub fn derive(departure: i64, weather: u8) -> Self {
        Self {
            weekday: calendar::weekday(departure),
            holiday: calendar::is_holiday(departure),
            rush_hour: calendar::is_rush_hour(departure),
            weather,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TravelRoute {
    pub route_id: RouteId,
    /// Departure, epoch seconds.
    pub departure: i64,
    pub links: Vec<Link>,
    pub background: Background,
    total_time_s: f64,
}

impl TravelRoute {
    pub fn new(route_id: RouteId, departure: i64, weather: u8, links: Vec<Link>) -> Result<Self> {
        if links.is_empty() {
            return Err(Error::Data(format!("route {route_id} has no links")));
        }
        if let Some(bad) = links.iter().find(|l| !(l.time_s > 0.0 && l.time_s.is_finite())) {
            return Err(Error::Data(format!(
                "route {route_id}: non-positive travel time on segment {}",
                bad.segment
            )));
        }
        if weather >= WEATHER_CATEGORIES {
            return Err(Error::Data(format!(
                "route {route_id}: weather code {weather} out of range"
            )));
        }
        let total_time_s = links.iter().map(|l| l.time_s).sum();
        Ok(Self {
            route_id,
            departure,
            links,
            background: Background::derive(departure, weather),
            total_time_s,
        })
    }

    pub fn total_time_s(&self) -> f64 {
        self.total_time_s
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// Consecutive links must be connected in `network`.
    pub fn validate(&self, network: &RoadNetwork) -> Result<()> {
        for l in &self.links {
            network.segment(l.segment)?;
        }
        for w in self.links.windows(2) {
            if !network.connected(w[0].segment, w[1].segment) {
                return Err(Error::Data(format!(
                    "route {}: segments {} and {} are not connected",
                    self.route_id, w[0].segment, w[1].segment
                )));
            }
        }
        Ok(())
    }

    pub fn total_length_m(&self, network: &RoadNetwork) -> f64 {
        self.links
            .iter()
            .map(|l| network.segments()[l.segment as usize].length_m)
            .sum()
    }
}

/// Outcome of splitting a route at an issue time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RouteSplit<'a> {
    pub traveled: &'a [Link],
    pub remaining: &'a [Link],
    pub split_index: usize,
}

/// Splits `route` at `t` seconds after departure. A link whose cumulative
/// completion time equals `t` exactly counts as traveled.
pub fn split_route(route: &TravelRoute, t: f64) -> Result<RouteSplit<'_>> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("issue time {t} is negative")));
    }
    if t > route.total_time_s() {
        return Err(Error::Domain(format!(
            "issue time {t} exceeds total route time {}",
            route.total_time_s()
        )));
    }
    let mut cum = 0.0;
    let mut split_index = 0;
    for l in &route.links {
        cum += l.time_s;
        if cum <= t {
            split_index += 1;
        } else {
            break;
        }
    }
    let (traveled, remaining) = route.links.split_at(split_index);
    Ok(RouteSplit {
        traveled,
        remaining,
        split_index,
    })
}

/// An en-route prediction request issued `t` seconds after departure.
#[derive(Clone, Copy, Debug)]
pub struct Request<'a> {
    pub route: &'a TravelRoute,
    pub t: f64,
    pub split_index: usize,
}

impl<'a> Request<'a> {
    pub fn new(route: &'a TravelRoute, t: f64) -> Result<Self> {
        let split = split_route(route, t)?;
        Ok(Self {
            route,
            t,
            split_index: split.split_index,
        })
    }

    pub fn traveled(&self) -> &'a [Link] {
        &self.route.links[..self.split_index]
    }

    pub fn remaining(&self) -> &'a [Link] {
        &self.route.links[self.split_index..]
    }

    /// Wall-clock epoch seconds when the request is issued.
    pub fn wall_clock(&self) -> i64 {
        self.route.departure + self.t.floor() as i64
    }

    /// Ground-truth remaining travel time.
    pub fn remaining_time_s(&self) -> f64 {
        self.remaining().iter().map(|l| l.time_s).sum()
    }
}

/// Request times `0, Δt, 2Δt, …` strictly before the end of the trip.
pub fn request_times(route: &TravelRoute, interval_s: f64) -> Vec<f64> {
    assert!(interval_s > 0.0, "request interval must be positive");
    let total = route.total_time_s();
    let mut times = Vec::new();
    let mut k = 0u64;
    loop {
        let t = k as f64 * interval_s;
        if t >= total {
            break;
        }
        times.push(t);
        k += 1;
    }
    if times.is_empty() {
        times.push(0.0);
    }
    times
}
