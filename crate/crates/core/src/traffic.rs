//! Vehicle placement, mobility and the uplink channel.
//!
//! Vehicles live either on a one-dimensional road (position in metres along
//! the road plus a ±1 direction) or in the plane (x, y and a heading in
//! degrees). Roads are open or closed into a ring.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed cap of the synthetic mobility model (m/s).
pub const MAX_SPEED_MPS: f64 = 20.0;
/// Shortest distance the channel model will use (m).
pub const MIN_DISTANCE_M: f64 = 1.0;

pub const HEADER_1D: [&str; 6] = [
    "time_s",
    "vehicle_id",
    "role",
    "pos_m",
    "speed_mps",
    "direction",
];
pub const HEADER_2D: [&str; 7] = [
    "time_s",
    "vehicle_id",
    "role",
    "x_m",
    "y_m",
    "speed_mps",
    "heading_deg",
];

#[derive(Debug, Error)]
pub enum TrafficError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Parse { line: u64, reason: String },
    #[error("trace header is missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("line {line}: time {time} precedes the previous row's {previous}")]
    NonMonotoneTime { line: u64, time: f64, previous: f64 },
    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, TrafficError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "TAV")]
    Tav,
    #[serde(rename = "SEV")]
    Sev,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Tav => "TAV",
            Role::Sev => "SEV",
        })
    }
}

impl std::str::FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "TAV" => Ok(Role::Tav),
            "SEV" => Ok(Role::Sev),
            other => Err(format!("unknown role `{other}` (expected TAV or SEV)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Position {
    Road {
        pos_m: f64,
        direction: i8,
    },
    Plane {
        x_m: f64,
        y_m: f64,
        heading_deg: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleSnapshot {
    pub time_s: f64,
    pub vehicle_id: u64,
    pub role: Role,
    pub position: Position,
    pub speed_mps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Topology {
    #[default]
    Open,
    Ring {
        length_m: f64,
    },
}

impl Topology {
    fn wrap(&self, x: f64) -> f64 {
        match *self {
            Topology::Open => x,
            Topology::Ring { length_m } => x.rem_euclid(length_m),
        }
    }
}

/// All vehicles at one instant.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Frame {
    pub time_s: f64,
    pub vehicles: Vec<VehicleSnapshot>,
}

impl Frame {
    pub fn by_role(&self, role: Role) -> impl Iterator<Item = &VehicleSnapshot> {
        self.vehicles.iter().filter(move |v| v.role == role)
    }

    pub fn vehicle(&self, id: u64) -> Option<&VehicleSnapshot> {
        self.vehicles.iter().find(|v| v.vehicle_id == id)
    }
}

/// A time-ordered sequence of frames.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub frames: Vec<Frame>,
}

impl Trace {
    pub fn rows(&self) -> impl Iterator<Item = &VehicleSnapshot> {
        self.frames.iter().flat_map(|f| f.vehicles.iter())
    }

    pub fn len_rows(&self) -> usize {
        self.frames.iter().map(|f| f.vehicles.len()).sum()
    }

    /// Frame in effect at time `t`: the last frame at or before `t`, or the
    /// first frame when `t` precedes the trace.
    pub fn frame_at(&self, t: f64) -> Option<&Frame> {
        let idx = self.frames.partition_point(|f| f.time_s <= t);
        self.frames.get(idx.saturating_sub(1))
    }

    fn is_planar(&self) -> bool {
        self.rows()
            .next()
            .is_some_and(|v| matches!(v.position, Position::Plane { .. }))
    }
}

/// Road stretch used for PPP placement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadSpec {
    pub length_km: f64,
    pub gamma_t: f64,
    pub gamma_s: f64,
}

/// Places TaVs and SeVs as independent PPPs on `[0, L)`, all heading `+1`,
/// at time 0 with speeds uniform on `[0, 20]` m/s. TaV ids come first.
pub fn generate_ppp_snapshot(road: &RoadSpec, seed: u64) -> Result<Vec<VehicleSnapshot>> {
    sample_ppp_snapshot(road, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn sample_ppp_snapshot<R: Rng + ?Sized>(
    road: &RoadSpec,
    rng: &mut R,
) -> Result<Vec<VehicleSnapshot>> {
    if !(road.length_km > 0.0 && road.length_km.is_finite()) {
        return Err(TrafficError::Domain(format!(
            "road length must be positive, got {}",
            road.length_km
        )));
    }
    if !(road.gamma_t >= 0.0 && road.gamma_s >= 0.0) {
        return Err(TrafficError::Domain(
            "densities must be non-negative".into(),
        ));
    }
    let length_m = road.length_km * 1000.0;
    let mut out = Vec::new();
    let mut next_id = 0u64;
    for (role, gamma) in [(Role::Tav, road.gamma_t), (Role::Sev, road.gamma_s)] {
        let n = poisson_count(gamma * road.length_km, rng);
        for _ in 0..n {
            out.push(VehicleSnapshot {
                time_s: 0.0,
                vehicle_id: next_id,
                role,
                position: Position::Road {
                    pos_m: rng.random::<f64>() * length_m,
                    direction: 1,
                },
                speed_mps: rng.random::<f64>() * MAX_SPEED_MPS,
            });
            next_id += 1;
        }
    }
    Ok(out)
}

pub(crate) fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpeedLaw {
    /// Keep each vehicle's snapshot speed.
    #[default]
    Initial,
    Constant {
        speed_mps: f64,
    },
    /// Uniform on `[0, max_mps]`, capped at 20 m/s.
    Uniform {
        max_mps: f64,
    },
}

/// Constant-velocity motion from `initial`, one frame per `timestep_s` up to
/// and including `duration_s`.
pub fn generate_synthetic_trace(
    initial: &[VehicleSnapshot],
    duration_s: f64,
    timestep_s: f64,
    speed: SpeedLaw,
    topology: Topology,
    seed: u64,
) -> Result<Trace> {
    if !(timestep_s > 0.0) {
        return Err(TrafficError::Domain(format!(
            "timestep must be positive, got {timestep_s}"
        )));
    }
    if !(duration_s >= 0.0) {
        return Err(TrafficError::Domain(format!(
            "duration must be non-negative, got {duration_s}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let speeds: Vec<f64> = initial
        .iter()
        .map(|v| match speed {
            SpeedLaw::Initial => v.speed_mps,
            SpeedLaw::Constant { speed_mps } => speed_mps,
            SpeedLaw::Uniform { max_mps } => rng.random::<f64>() * max_mps.min(MAX_SPEED_MPS),
        })
        .collect();
    if let Some(s) = speeds.iter().find(|s| !(**s >= 0.0)) {
        return Err(TrafficError::Domain(format!(
            "speed must be non-negative, got {s}"
        )));
    }
    let steps = (duration_s / timestep_s + 1e-9).floor() as u64;
    let t0 = initial.first().map_or(0.0, |v| v.time_s);
    let mut frames = Vec::with_capacity(steps as usize + 1);
    for i in 0..=steps {
        let elapsed = i as f64 * timestep_s;
        let vehicles = initial
            .iter()
            .zip(&speeds)
            .map(|(v, &s)| {
                let travelled = s * elapsed;
                let position = match v.position {
                    Position::Road { pos_m, direction } => Position::Road {
                        pos_m: topology.wrap(pos_m + f64::from(direction) * travelled),
                        direction,
                    },
                    Position::Plane {
                        x_m,
                        y_m,
                        heading_deg,
                    } => {
                        let h = heading_deg.to_radians();
                        Position::Plane {
                            x_m: x_m + travelled * h.cos(),
                            y_m: y_m + travelled * h.sin(),
                            heading_deg,
                        }
                    }
                };
                VehicleSnapshot {
                    time_s: t0 + elapsed,
                    position,
                    speed_mps: s,
                    ..*v
                }
            })
            .collect();
        frames.push(Frame {
            time_s: t0 + elapsed,
            vehicles,
        });
    }
    Ok(Trace { frames })
}

/// Distance in metres; ring roads use the shorter arc. Vehicles of different
/// kinds are infinitely far apart.
pub fn distance(a: &VehicleSnapshot, b: &VehicleSnapshot, topology: Topology) -> f64 {
    match (a.position, b.position) {
        (Position::Road { pos_m: x, .. }, Position::Road { pos_m: y, .. }) => {
            let d = (x - y).abs();
            match topology {
                Topology::Open => d,
                Topology::Ring { length_m } => {
                    let d = d.rem_euclid(length_m);
                    d.min(length_m - d)
                }
            }
        }
        (
            Position::Plane {
                x_m: ax, y_m: ay, ..
            },
            Position::Plane {
                x_m: bx, y_m: by, ..
            },
        ) => (ax - bx).hypot(ay - by),
        _ => f64::INFINITY,
    }
}

pub fn same_direction(a: &VehicleSnapshot, b: &VehicleSnapshot) -> bool {
    match (a.position, b.position) {
        (Position::Road { direction: x, .. }, Position::Road { direction: y, .. }) => x == y,
        (Position::Plane { heading_deg: x, .. }, Position::Plane { heading_deg: y, .. }) => {
            let diff = (x - y).rem_euclid(360.0);
            diff.min(360.0 - diff) < 90.0
        }
        _ => false,
    }
}

/// Ids of SeVs moving the same way as `tav` within `range_m` (inclusive),
/// in ascending order.
pub fn candidate_set(
    tav: &VehicleSnapshot,
    vehicles: &[VehicleSnapshot],
    range_m: f64,
    topology: Topology,
) -> Vec<u64> {
    let mut ids: Vec<u64> = vehicles
        .iter()
        .filter(|v| v.role == Role::Sev && v.vehicle_id != tav.vehicle_id)
        .filter(|v| same_direction(tav, v) && distance(tav, v, topology) <= range_m)
        .map(|v| v.vehicle_id)
        .collect();
    ids.sort_unstable();
    ids
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub bandwidth_hz: f64,
    pub tx_power_w: f64,
    pub noise_w: f64,
    pub interference_w: f64,
    pub pathloss_exponent: f64,
    pub input_bits: f64,
    pub output_bits: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            bandwidth_hz: 10e6,
            tx_power_w: 0.5,
            noise_w: 1e-13,
            interference_w: 0.0,
            pathloss_exponent: 2.0,
            input_bits: 1e6,
            output_bits: 0.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_hz > 0.0 && self.tx_power_w > 0.0) {
            return Err(TrafficError::Domain(
                "bandwidth and transmit power must be positive".into(),
            ));
        }
        let rest = [
            self.noise_w,
            self.interference_w,
            self.pathloss_exponent,
            self.input_bits,
            self.output_bits,
        ];
        if rest.iter().any(|x| !(*x >= 0.0)) {
            return Err(TrafficError::Domain(
                "channel parameters must be non-negative".into(),
            ));
        }
        if self.noise_w + self.interference_w <= 0.0 {
            return Err(TrafficError::Domain(
                "noise plus interference must be positive".into(),
            ));
        }
        Ok(())
    }

    /// `W·log₂(1 + P·d^(−η)/(N₀ + I))`, with `d` floored at 1 m.
    pub fn rate_at(&self, distance_m: f64) -> f64 {
        let d = distance_m.max(MIN_DISTANCE_M);
        let snr = self.tx_power_w * d.powf(-self.pathloss_exponent)
            / (self.noise_w + self.interference_w);
        self.bandwidth_hz * snr.ln_1p() / std::f64::consts::LN_2
    }
}

pub fn uplink_rate(
    tav: &VehicleSnapshot,
    sev: &VehicleSnapshot,
    params: &ChannelParams,
    topology: Topology,
) -> f64 {
    params.rate_at(distance(tav, sev, topology))
}

/// Multicast rate (the slowest member's unicast rate) and upload delay
/// `L_i / rate`. `None` for an empty selection.
pub fn multicast_rate_and_upload_delay(rates: &[f64], input_bits: f64) -> Option<(f64, f64)> {
    let rate = rates.iter().copied().reduce(f64::min)?;
    Some((rate, input_bits / rate))
}

/// [`multicast_rate_and_upload_delay`] for concrete vehicles.
pub fn multicast_to(
    tav: &VehicleSnapshot,
    selected: &[&VehicleSnapshot],
    params: &ChannelParams,
    topology: Topology,
) -> Option<(f64, f64)> {
    let rates: Vec<f64> = selected
        .iter()
        .map(|s| uplink_rate(tav, s, params, topology))
        .collect();
    multicast_rate_and_upload_delay(&rates, params.input_bits)
}

fn fmt_direction(d: i8) -> &'static str {
    if d >= 0 {
        "+1"
    } else {
        "-1"
    }
}

/// Writes the trace as CSV with the road or plane header.
pub fn write_trace<W: Write>(trace: &Trace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let planar = trace.is_planar();
    let csv_err = |e: csv::Error| TrafficError::Io(std::io::Error::other(e));
    if planar {
        w.write_record(HEADER_2D).map_err(csv_err)?;
    } else {
        w.write_record(HEADER_1D).map_err(csv_err)?;
    }
    for v in trace.rows() {
        let row: Vec<String> = match v.position {
            Position::Road { pos_m, direction } if !planar => vec![
                v.time_s.to_string(),
                v.vehicle_id.to_string(),
                v.role.to_string(),
                pos_m.to_string(),
                v.speed_mps.to_string(),
                fmt_direction(direction).to_string(),
            ],
            Position::Plane {
                x_m,
                y_m,
                heading_deg,
            } if planar => vec![
                v.time_s.to_string(),
                v.vehicle_id.to_string(),
                v.role.to_string(),
                x_m.to_string(),
                y_m.to_string(),
                v.speed_mps.to_string(),
                heading_deg.to_string(),
            ],
            _ => {
                return Err(TrafficError::Domain(
                    "trace mixes road and plane positions".into(),
                ))
            }
        };
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_trace(trace, std::io::BufWriter::new(file))
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Trace> {
    read_trace(std::fs::File::open(path)?)
}

/// Parses a trace CSV. Rows must be sorted by time; rows sharing a
/// timestamp form one frame.
pub fn read_trace<R: Read>(input: R) -> Result<Trace> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| TrafficError::Parse {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let planar = headers.iter().any(|h| h == "x_m");
    let wanted: &[&'static str] = if planar { &HEADER_2D } else { &HEADER_1D };
    let mut index = Vec::with_capacity(wanted.len());
    for &name in wanted {
        index.push(
            headers
                .iter()
                .position(|h| h == name)
                .ok_or(TrafficError::MissingColumn(name))?,
        );
    }

    let mut trace = Trace::default();
    let mut record = csv::StringRecord::new();
    loop {
        let more = reader
            .read_record(&mut record)
            .map_err(|e| TrafficError::Parse {
                line: e.position().map_or(0, |p| p.line()),
                reason: e.to_string(),
            })?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| -> Result<&str> {
            record.get(index[i]).ok_or_else(|| TrafficError::Parse {
                line,
                reason: format!("missing value for `{}`", wanted[i]),
            })
        };
        let num = |i: usize| -> Result<f64> {
            let raw = field(i)?;
            raw.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| TrafficError::Parse {
                    line,
                    reason: format!("`{}` is not a finite number: `{raw}`", wanted[i]),
                })
        };
        let time_s = num(0)?;
        let vehicle_id = field(1)?.parse::<u64>().map_err(|_| TrafficError::Parse {
            line,
            reason: format!(
                "`vehicle_id` is not an integer: `{}`",
                record.get(index[1]).unwrap_or("")
            ),
        })?;
        let role = field(2)?
            .parse::<Role>()
            .map_err(|reason| TrafficError::Parse { line, reason })?;
        let (position, speed_mps) = if planar {
            (
                Position::Plane {
                    x_m: num(3)?,
                    y_m: num(4)?,
                    heading_deg: num(6)?,
                },
                num(5)?,
            )
        } else {
            let direction = match field(5)? {
                "+1" | "1" => 1,
                "-1" => -1,
                other => {
                    return Err(TrafficError::Parse {
                        line,
                        reason: format!("`direction` must be +1 or -1, got `{other}`"),
                    })
                }
            };
            (
                Position::Road {
                    pos_m: num(3)?,
                    direction,
                },
                num(4)?,
            )
        };
        if speed_mps < 0.0 {
            return Err(TrafficError::Parse {
                line,
                reason: format!("negative speed {speed_mps}"),
            });
        }
        let snap = VehicleSnapshot {
            time_s,
            vehicle_id,
            role,
            position,
            speed_mps,
        };
        match trace.frames.last_mut() {
            Some(f) if f.time_s == time_s => f.vehicles.push(snap),
            Some(f) if f.time_s > time_s => {
                return Err(TrafficError::NonMonotoneTime {
                    line,
                    time: time_s,
                    previous: f.time_s,
                })
            }
            _ => trace.frames.push(Frame {
                time_s,
                vehicles: vec![snap],
            }),
        }
    }
    Ok(trace)
}
