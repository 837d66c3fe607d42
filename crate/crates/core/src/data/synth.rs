//! Seeded synthetic city: a 4-connected street grid, time-of-week congestion
//! and drivers with either a constant or a once-shifting speed ratio.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::calendar::{hour_of_day, is_holiday, weekday, SECONDS_PER_DAY};
use super::{Link, RoadClass, RoadNetwork, RouteId, SegmentAttrs, SegmentId, TravelRoute, WEATHER_CATEGORIES};
use crate::config::DataConfig;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum DriverProfile {
    /// Realised speed is always `ratio` times the expected speed.
    Constant { ratio: f64 },
    /// `before` on links `[0, shift_at)`, `after` (with jitter) from then on.
    RegimeShift { before: f64, after: f64, shift_at: usize },
}

impl DriverProfile {
    pub fn is_constant(&self) -> bool {
        matches!(self, DriverProfile::Constant { .. })
    }
}

/// Ground-truth traffic model of a generated world.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrafficModel {
    /// Uncongested speed per segment, m/s.
    pub free_speed: Vec<f64>,
    /// Fractional slowdown at the peak of a rush hour.
    pub sensitivity: Vec<f64>,
}

impl TrafficModel {
    /// Expected speed on `segment` when entering it at `epoch` in `weather`.
    pub fn expected_speed(&self, segment: SegmentId, epoch: i64, weather: u8) -> f64 {
        let s = segment as usize;
        self.free_speed[s] * (1.0 - self.sensitivity[s] * rush_intensity(epoch)) * weather_factor(weather)
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticWorld {
    pub network: RoadNetwork,
    pub routes: Vec<TravelRoute>,
    pub profiles: Vec<DriverProfile>,
    pub traffic: TrafficModel,
}

/// Congestion intensity in [0, 1]: two weekday peaks, a mild weekend bump.
pub fn rush_intensity(epoch: i64) -> f64 {
    let h = hour_of_day(epoch);
    let bump = |center: f64, width: f64| (-((h - center) / width).powi(2) / 2.0).exp();
    if weekday(epoch) >= 5 || is_holiday(epoch) {
        0.3 * bump(13.0, 2.0)
    } else {
        bump(8.0, 0.9).max(bump(17.5, 1.0))
    }
}

/// Speed multiplier for the 16 weather categories: 0–9 dry, 10–13 rain,
/// 14–15 snow or storm.
pub fn weather_factor(weather: u8) -> f64 {
    match weather {
        0..=9 => 1.0,
        10..=13 => 0.9,
        _ => 0.8,
    }
}

fn build_grid<R: Rng>(n: usize, rng: &mut R) -> Result<(RoadNetwork, TrafficModel)> {
    let vid = |r: usize, c: usize| (r * n + c) as u32;
    let class_of = |line: usize| {
        if line.is_multiple_of(4) {
            RoadClass::Arterial
        } else if line.is_multiple_of(2) {
            RoadClass::Collector
        } else {
            RoadClass::Local
        }
    };
    let mut segments = Vec::new();
    let mut free_speed = Vec::new();
    let mut sensitivity = Vec::new();
    for r in 0..n {
        for c in 0..n {
            let mut neighbours = Vec::with_capacity(4);
            if c + 1 < n {
                neighbours.push((r, c + 1, class_of(r)));
            }
            if c > 0 {
                neighbours.push((r, c - 1, class_of(r)));
            }
            if r + 1 < n {
                neighbours.push((r + 1, c, class_of(c)));
            }
            if r > 0 {
                neighbours.push((r - 1, c, class_of(c)));
            }
            for (nr, nc, class) in neighbours {
                let (limit, lanes) = match class {
                    RoadClass::Arterial => (16.7, 3),
                    RoadClass::Collector => (13.9, 2),
                    RoadClass::Local => (11.1, 1),
                };
                segments.push(SegmentAttrs {
                    from: vid(r, c),
                    to: vid(nr, nc),
                    length_m: rng.random_range(150.0..450.0f64).round(),
                    speed_limit_mps: limit,
                    lanes,
                    road_class: class,
                });
                free_speed.push(limit * rng.random_range(0.65..0.9));
                sensitivity.push(rng.random_range(0.2..0.5));
            }
        }
    }
    let network = RoadNetwork::new((n * n) as u32, segments)?;
    Ok((
        network,
        TrafficModel {
            free_speed,
            sensitivity,
        },
    ))
}

/// Random walk of `len` links avoiding immediate U-turns and, where
/// possible, previously visited vertices.
fn random_walk<R: Rng>(network: &RoadNetwork, out_edges: &[Vec<SegmentId>], len: usize, rng: &mut R) -> Vec<SegmentId> {
    let mut at = rng.random_range(0..network.n_vertices());
    let mut visited = vec![false; network.n_vertices() as usize];
    visited[at as usize] = true;
    let mut prev_from: Option<u32> = None;
    let mut path = Vec::with_capacity(len);
    for _ in 0..len {
        let options: Vec<SegmentId> = out_edges[at as usize]
            .iter()
            .copied()
            .filter(|&s| Some(network.segments()[s as usize].to) != prev_from)
            .collect();
        let fresh: Vec<SegmentId> = options
            .iter()
            .copied()
            .filter(|&s| !visited[network.segments()[s as usize].to as usize])
            .collect();
        let pool = if fresh.is_empty() { &options } else { &fresh };
        let &seg = pool.choose(rng).expect("grid vertices have ≥ 2 out-edges");
        path.push(seg);
        prev_from = Some(at);
        at = network.segments()[seg as usize].to;
        visited[at as usize] = true;
    }
    path
}

fn departure_second_of_day<R: Rng>(rng: &mut R) -> i64 {
    let hours: f64 = if rng.random_bool(0.4) {
        let center = if rng.random_bool(0.5) { 8.0 } else { 17.5 };
        Normal::new(center, 1.0).unwrap().sample(rng)
    } else {
        rng.random_range(6.0..23.0)
    };
    ((hours.clamp(0.0, 23.99)) * 3600.0) as i64
}

fn round_ms(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Generates the network plus `cfg.n_routes` routes, deterministically in
/// `cfg.seed`.
pub fn generate_synthetic_world(cfg: &DataConfig) -> Result<SyntheticWorld> {
    if cfg.grid_size < 2 {
        return Err(Error::Config("data.grid_size: must be ≥ 2".into()));
    }
    if cfg.n_routes == 0 {
        return Err(Error::Config("data.n_routes: must be ≥ 1".into()));
    }
    let mix = &cfg.profile_mix;
    if mix.constant < 0.0 || mix.regime_shift < 0.0 || (mix.constant + mix.regime_shift - 1.0).abs() > 1e-9 {
        return Err(Error::Config(
            "data.profile_mix: fractions must be non-negative and sum to 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (network, traffic) = build_grid(cfg.grid_size, &mut rng)?;
    let mut out_edges = vec![Vec::new(); network.n_vertices() as usize];
    for (id, s) in network.segments().iter().enumerate() {
        out_edges[s.from as usize].push(id as SegmentId);
    }

    let weather_by_day: Vec<u8> = (0..cfg.n_days)
        .map(|_| rng.random_range(0..WEATHER_CATEGORIES))
        .collect();
    let half_width = (cfg.mean_segments - cfg.min_segments).min(cfg.max_segments - cfg.mean_segments);
    let driver = Normal::new(0.0, cfg.driver_spread.max(0.0)).unwrap();
    let shift = Normal::new(0.0, cfg.shift_spread.max(0.0)).unwrap();
    let jitter = Normal::new(0.0, cfg.segment_jitter.max(0.0)).unwrap();

    let mut routes = Vec::with_capacity(cfg.n_routes);
    let mut profiles = Vec::with_capacity(cfg.n_routes);
    for route_idx in 0..cfg.n_routes {
        let len = rng.random_range(cfg.mean_segments - half_width..=cfg.mean_segments + half_width);
        let path = random_walk(&network, &out_edges, len, &mut rng);
        let day = rng.random_range(0..cfg.n_days);
        let departure = cfg.start_epoch + day as i64 * SECONDS_PER_DAY + departure_second_of_day(&mut rng);
        let weather = weather_by_day[day as usize];
        let base: f64 = driver.sample(&mut rng).exp();
        let profile = if rng.random_bool(mix.constant.clamp(0.0, 1.0)) {
            DriverProfile::Constant { ratio: base }
        } else {
            let lo = (len / 3).max(1);
            let hi = (2 * len / 3).max(lo + 1);
            let mut log_jump: f64 = shift.sample(&mut rng);
            // keep the jump large enough to matter
            if log_jump.abs() < 0.15 {
                log_jump = 0.15_f64.copysign(log_jump);
            }
            DriverProfile::RegimeShift {
                before: base,
                after: base * log_jump.exp(),
                shift_at: rng.random_range(lo..hi.min(len).max(lo + 1)),
            }
        };
        let mut links = Vec::with_capacity(len);
        let mut clock = 0.0;
        for (i, &seg) in path.iter().enumerate() {
            let entry = departure + clock as i64;
            let expected = traffic.expected_speed(seg, entry, weather);
            let ratio = match profile {
                DriverProfile::Constant { ratio } => ratio,
                DriverProfile::RegimeShift {
                    before,
                    after,
                    shift_at,
                } => {
                    let r = if i < shift_at { before } else { after };
                    r * jitter.sample(&mut rng).exp()
                }
            };
            let length = network.segments()[seg as usize].length_m;
            let time_s = round_ms(length / (expected * ratio)).max(0.001);
            clock += time_s;
            links.push(Link { segment: seg, time_s });
        }
        routes.push(TravelRoute::new(route_idx as RouteId, departure, weather, links)?);
        profiles.push(profile);
    }
    Ok(SyntheticWorld {
        network,
        routes,
        profiles,
        traffic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ProfileMix;

    fn small(seed: u64, n_routes: usize) -> DataConfig {
        DataConfig {
            seed,
            grid_size: 6,
            n_routes,
            ..DataConfig::default()
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = generate_synthetic_world(&small(1, 50)).unwrap();
        let b = generate_synthetic_world(&small(1, 50)).unwrap();
        assert_eq!(a.network, b.network);
        assert_eq!(a.routes, b.routes);
        let c = generate_synthetic_world(&small(2, 50)).unwrap();
        assert_ne!(a.routes, c.routes);
    }

    #[test]
    fn routes_are_connected_and_totals_exact() {
        let w = generate_synthetic_world(&small(3, 200)).unwrap();
        for r in &w.routes {
            r.validate(&w.network).unwrap();
            let sum: f64 = r.links.iter().map(|l| l.time_s).sum();
            assert_eq!(sum, r.total_time_s());
        }
    }

    #[test]
    fn all_constant_mix_keeps_ratio() {
        let cfg = DataConfig {
            profile_mix: ProfileMix {
                constant: 1.0,
                regime_shift: 0.0,
            },
            ..small(4, 100)
        };
        let w = generate_synthetic_world(&cfg).unwrap();
        for (r, p) in w.routes.iter().zip(&w.profiles) {
            let DriverProfile::Constant { ratio } = *p else {
                panic!("expected constant profile")
            };
            let mut clock = 0.0;
            for l in &r.links {
                let expected = w
                    .traffic
                    .expected_speed(l.segment, r.departure + clock as i64, r.background.weather);
                let realised = w.network.segments()[l.segment as usize].length_m / l.time_s;
                // only millisecond rounding separates realised from ratio·expected
                assert!((realised / expected / ratio - 1.0).abs() < 1e-3);
                clock += l.time_s;
            }
        }
    }

    #[test]
    fn invalid_mix_is_config_error() {
        let cfg = DataConfig {
            profile_mix: ProfileMix {
                constant: 0.5,
                regime_shift: 0.6,
            },
            ..small(1, 10)
        };
        assert!(matches!(generate_synthetic_world(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn mean_segments_matches_target() {
        let w = generate_synthetic_world(&small(5, 5000)).unwrap();
        let mean = w.routes.iter().map(|r| r.len()).sum::<usize>() as f64 / 5000.0;
        let target = DataConfig::default().mean_segments as f64;
        assert!((mean / target - 1.0).abs() < 0.05, "mean {mean}");
    }
}
