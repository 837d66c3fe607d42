//! Text formats for networks and routes.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{Link, RoadClass, RoadNetwork, SegmentAttrs, TravelRoute};
use crate::error::{Error, Result};

fn parse(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::parse(path, line, msg)
}

pub const NETWORK_HEADER: &str = "segment_id,from_vertex,to_vertex,length_m,speed_limit_mps,lanes,road_class";

pub fn write_network(network: &RoadNetwork, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{NETWORK_HEADER}")?;
    for (id, s) in network.segments().iter().enumerate() {
        writeln!(
            w,
            "{id},{},{},{},{},{},{}",
            s.from,
            s.to,
            s.length_m,
            s.speed_limit_mps,
            s.lanes,
            s.road_class.code()
        )?;
    }
    w.flush()?;
    Ok(())
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, name: &str, raw: Option<&str>) -> Result<T> {
    let raw = raw.ok_or_else(|| parse(path, line, format!("missing field `{name}`")))?;
    raw.trim()
        .parse()
        .map_err(|_| parse(path, line, format!("bad `{name}` value {raw:?}")))
}

pub fn read_network(path: &Path) -> Result<RoadNetwork> {
    let reader = BufReader::new(File::open(path)?);
    let mut segments = Vec::new();
    let mut n_vertices = 0u32;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if idx == 0 {
            if line.trim() != NETWORK_HEADER {
                return Err(parse(path, lineno, format!("expected header `{NETWORK_HEADER}`")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let id: usize = field(path, lineno, "segment_id", parts.next())?;
        if id != segments.len() {
            return Err(parse(
                path,
                lineno,
                format!(
                    "segment ids must be dense and ordered; expected {}, got {id}",
                    segments.len()
                ),
            ));
        }
        let from: u32 = field(path, lineno, "from_vertex", parts.next())?;
        let to: u32 = field(path, lineno, "to_vertex", parts.next())?;
        let length_m: f64 = field(path, lineno, "length_m", parts.next())?;
        let speed_limit_mps: f64 = field(path, lineno, "speed_limit_mps", parts.next())?;
        let lanes: u8 = field(path, lineno, "lanes", parts.next())?;
        let code: u8 = field(path, lineno, "road_class", parts.next())?;
        if parts.next().is_some() {
            return Err(parse(path, lineno, "too many fields"));
        }
        let road_class =
            RoadClass::from_code(code).ok_or_else(|| parse(path, lineno, format!("unknown road_class {code}")))?;
        if !(length_m > 0.0) || !(speed_limit_mps > 0.0) || lanes == 0 {
            return Err(parse(path, lineno, "length, speed limit and lanes must be positive"));
        }
        n_vertices = n_vertices.max(from + 1).max(to + 1);
        segments.push(SegmentAttrs {
            from,
            to,
            length_m,
            speed_limit_mps,
            lanes,
            road_class,
        });
    }
    RoadNetwork::new(n_vertices, segments)
}

pub fn format_route(route: &TravelRoute) -> String {
    let links: Vec<String> = route
        .links
        .iter()
        .map(|l| format!("{}:{:.3}", l.segment, l.time_s))
        .collect();
    format!(
        "{}|{}|{}|{}",
        route.route_id,
        route.departure,
        route.background.weather,
        links.join(",")
    )
}

pub fn write_routes(routes: &[TravelRoute], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in routes {
        writeln!(w, "{}", format_route(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_route_line(path: &Path, lineno: usize, line: &str) -> Result<TravelRoute> {
    let mut parts = line.split('|');
    let route_id: u64 = field(path, lineno, "route_id", parts.next())?;
    let departure: i64 = field(path, lineno, "departure_epoch", parts.next())?;
    let weather: u8 = field(path, lineno, "weather_code", parts.next())?;
    let raw_links = parts.next().ok_or_else(|| parse(path, lineno, "missing link list"))?;
    if parts.next().is_some() {
        return Err(parse(path, lineno, "too many `|`-separated fields"));
    }
    let mut links = Vec::new();
    for item in raw_links.split(',') {
        let (seg, time) = item
            .split_once(':')
            .ok_or_else(|| parse(path, lineno, format!("link {item:?} is not `seg:time`")))?;
        links.push(Link {
            segment: field(path, lineno, "segment", Some(seg))?,
            time_s: field(path, lineno, "time", Some(time))?,
        });
    }
    TravelRoute::new(route_id, departure, weather, links).map_err(|e| match e {
        Error::Data(msg) => parse(path, lineno, msg),
        other => other,
    })
}

/// Reads a route file; when `network` is given each route's connectivity is
/// checked too.
pub fn read_routes(path: &Path, network: Option<&RoadNetwork>) -> Result<Vec<TravelRoute>> {
    let reader = BufReader::new(File::open(path)?);
    let mut routes = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let route = parse_route_line(path, idx + 1, line.trim())?;
        if let Some(net) = network {
            route.validate(net).map_err(|e| parse(path, idx + 1, e.to_string()))?;
        }
        routes.push(route);
    }
    Ok(routes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DataConfig;
    use crate::data::generate_synthetic_world;

    #[test]
    fn network_and_routes_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DataConfig {
            grid_size: 4,
            n_routes: 30,
            ..DataConfig::default()
        };
        let w = generate_synthetic_world(&cfg).unwrap();
        let np = dir.path().join("net.csv");
        let rp = dir.path().join("routes.txt");
        write_network(&w.network, &np).unwrap();
        write_routes(&w.routes, &rp).unwrap();
        let net = read_network(&np).unwrap();
        assert_eq!(net, w.network);
        let routes = read_routes(&rp, Some(&net)).unwrap();
        assert_eq!(routes, w.routes);
    }

    #[test]
    fn malformed_route_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.txt");
        std::fs::write(&p, "1|100|0|0:1.000\n2|100|0|0-1.0\n").unwrap();
        match read_routes(&p, None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("n.csv");
        std::fs::write(&p, "id,from,to\n").unwrap();
        assert!(matches!(read_network(&p), Err(Error::Parse { line: 1, .. })));
    }
}
