//! Line-oriented measurement log.
//!
//! ```text
//! # ilns-log v1
//! # origin <lat rad> <lon rad> <alt m>
//! # buoy <e> <n> <u>                 (first line is the reference buoy)
//! # imu <rate> <scheme> <gyro bias> <accel bias> <arw> <vrw> <gyro walk> <accel walk>
//! # lbl <σ> <extra σ> <δR σ> <δR τ>
//! # gnss <σ horizontal> <σ vertical>
//! # dvl <σ> <world|body>
//! # mcp <σ rad>
//! # ps <σ>
//! # init <t> <p×3> <v×3> <q w x y z> <b_a×3> <b_g×3>
//! # init_sigma <15 values, tangent order>
//! <t> IMU <gx> <gy> <gz> <ax> <ay> <az>
//! <t> LBL <ρ₁> … <ρ_M>
//! <t> GNSS <lat rad> <lon rad> <alt m>
//! <t> DVL <vx> <vy> <vz>
//! <t> MCP <yaw rad>
//! <t> PS <u m>
//! ```
//!
//! Timestamps carry nine decimals; payloads use the shortest representation
//! that parses back to the same `f64`.

use std::fmt::Write as _;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use nalgebra::{DVector, Quaternion, UnitQuaternion, Vector3};

use crate::config::DvlFrame;
use crate::error::{Error, Result};
use crate::factors::{AuxMeasurement, AuxValue, BuoyArray, LblMeasurement};
use crate::geo::{lla_to_local_enu, Ellipsoid, Lla};
use crate::imu::{ImuNoiseParams, ImuSample, Scheme};
use crate::state::NavState;

pub const LOG_MAGIC: &str = "# ilns-log v1";

/// Rounds a timestamp to the nine-decimal grid of the log format.
pub fn quantize_time(t: f64) -> f64 {
    (t * 1e9).round() / 1e9
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogHeader {
    pub origin: Lla,
    pub buoys: BuoyArray,
    pub imu_rate: f64,
    pub scheme: Scheme,
    pub imu_noise: ImuNoiseParams,
    pub lbl_sigma: f64,
    pub lbl_extra_sigma: f64,
    pub dr_sigma: f64,
    pub dr_tau: f64,
    pub gnss_sigma: [f64; 2],
    pub dvl_sigma: f64,
    pub dvl_frame: DvlFrame,
    pub mcp_sigma: f64,
    pub ps_sigma: f64,
    pub init: NavState,
    pub init_sigma: [f64; 15],
}

#[derive(Clone, Debug, PartialEq)]
pub enum Record {
    Imu(ImuSample),
    Lbl { t: f64, rho: Vec<f64> },
    Gnss { t: f64, fix: Lla },
    Dvl { t: f64, v: Vector3<f64> },
    Mcp { t: f64, yaw: f64 },
    Ps { t: f64, u: f64 },
}

impl Record {
    pub fn t(&self) -> f64 {
        match self {
            Record::Imu(s) => s.t,
            Record::Lbl { t, .. }
            | Record::Gnss { t, .. }
            | Record::Dvl { t, .. }
            | Record::Mcp { t, .. }
            | Record::Ps { t, .. } => *t,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Record::Imu(_) => "IMU",
            Record::Lbl { .. } => "LBL",
            Record::Gnss { .. } => "GNSS",
            Record::Dvl { .. } => "DVL",
            Record::Mcp { .. } => "MCP",
            Record::Ps { .. } => "PS",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementLog {
    pub header: LogHeader,
    /// Time-ordered; at equal times IMU precedes the aiding sensors.
    pub records: Vec<Record>,
}

/// Estimator-side view of one aiding record.
#[derive(Clone, Debug, PartialEq)]
pub enum Aiding {
    Lbl(LblMeasurement),
    Aux(AuxMeasurement),
}

impl Aiding {
    pub fn t(&self) -> f64 {
        match self {
            Aiding::Lbl(z) => z.t,
            Aiding::Aux(z) => z.t,
        }
    }
}

impl MeasurementLog {
    pub fn imu(&self) -> impl Iterator<Item = &ImuSample> {
        self.records.iter().filter_map(|r| match r {
            Record::Imu(s) => Some(s),
            _ => None,
        })
    }

    /// Converts a non-IMU record into an estimator measurement (GNSS fixes to
    /// the local ENU frame, noise from the header). DVL stays in the logged frame.
    pub fn aiding(&self, r: &Record) -> Option<Aiding> {
        let h = &self.header;
        let aux = |t: f64, value: AuxValue, sigma: Vector3<f64>| Some(Aiding::Aux(AuxMeasurement { t, value, sigma }));
        match r {
            Record::Imu(_) => None,
            Record::Lbl { t, rho } => Some(Aiding::Lbl(LblMeasurement {
                t: *t,
                rho: DVector::from_column_slice(rho),
                sigma: h.lbl_sigma,
            })),
            Record::Gnss { t, fix } => {
                let enu = lla_to_local_enu(fix, &h.origin, &Ellipsoid::WGS84);
                let [sh, sv] = h.gnss_sigma;
                aux(*t, AuxValue::Gnss(enu), Vector3::new(sh, sh, sv))
            }
            Record::Dvl { t, v } => aux(*t, AuxValue::Dvl(*v), Vector3::repeat(h.dvl_sigma)),
            Record::Mcp { t, yaw } => aux(*t, AuxValue::Mcp(*yaw), Vector3::repeat(h.mcp_sigma)),
            Record::Ps { t, u } => aux(*t, AuxValue::Ps(*u), Vector3::repeat(h.ps_sigma)),
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let h = &self.header;
        let mut s = String::new();
        writeln!(s, "{LOG_MAGIC}").ok();
        writeln!(s, "# origin {} {} {}", h.origin.lat, h.origin.lon, h.origin.alt).ok();
        for b in std::iter::once(&h.buoys.reference).chain(&h.buoys.others) {
            writeln!(s, "# buoy {} {} {}", b.x, b.y, b.z).ok();
        }
        let n = &h.imu_noise;
        let scheme = match h.scheme {
            Scheme::Euler => "euler",
            Scheme::Midpoint => "midpoint",
        };
        writeln!(
            s,
            "# imu {} {scheme} {} {} {} {} {} {}",
            h.imu_rate, n.gyro_bias, n.accel_bias, n.gyro_noise_density, n.accel_noise_density, n.gyro_bias_walk, n.accel_bias_walk
        )
        .ok();
        writeln!(s, "# lbl {} {} {} {}", h.lbl_sigma, h.lbl_extra_sigma, h.dr_sigma, h.dr_tau).ok();
        writeln!(s, "# gnss {} {}", h.gnss_sigma[0], h.gnss_sigma[1]).ok();
        let frame = match h.dvl_frame {
            DvlFrame::World => "world",
            DvlFrame::Body => "body",
        };
        writeln!(s, "# dvl {} {frame}", h.dvl_sigma).ok();
        writeln!(s, "# mcp {}", h.mcp_sigma).ok();
        writeln!(s, "# ps {}", h.ps_sigma).ok();
        let x = &h.init;
        let q = x.q.quaternion();
        writeln!(
            s,
            "# init {} {} {} {} {} {} {} {} {} {} {} {} {} {} {} {} {}",
            x.t, x.p.x, x.p.y, x.p.z, x.v.x, x.v.y, x.v.z, q.w, q.i, q.j, q.k, x.ba.x, x.ba.y, x.ba.z, x.bg.x, x.bg.y, x.bg.z
        )
        .ok();
        let sig: Vec<String> = h.init_sigma.iter().map(|v| v.to_string()).collect();
        writeln!(s, "# init_sigma {}", sig.join(" ")).ok();
        w.write_all(s.as_bytes())?;

        let mut line = String::with_capacity(128);
        for r in &self.records {
            line.clear();
            write!(line, "{:.9} {}", r.t(), r.tag()).ok();
            match r {
                Record::Imu(m) => {
                    for v in m.gyro.iter().chain(m.accel.iter()) {
                        write!(line, " {v}").ok();
                    }
                }
                Record::Lbl { rho, .. } => {
                    for v in rho {
                        write!(line, " {v}").ok();
                    }
                }
                Record::Gnss { fix, .. } => {
                    write!(line, " {} {} {}", fix.lat, fix.lon, fix.alt).ok();
                }
                Record::Dvl { v, .. } => {
                    write!(line, " {} {} {}", v.x, v.y, v.z).ok();
                }
                Record::Mcp { yaw, .. } => {
                    write!(line, " {yaw}").ok();
                }
                Record::Ps { u, .. } => {
                    write!(line, " {u}").ok();
                }
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f), &path.display().to_string())
    }

    pub fn read_from(r: impl BufRead, name: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse { path: name.to_string(), line, msg };
        let mut origin = None;
        let mut buoys: Vec<Vector3<f64>> = Vec::new();
        let mut imu = None;
        let mut lbl = None;
        let mut gnss = None;
        let mut dvl = None;
        let mut mcp = None;
        let mut ps = None;
        let mut init = None;
        let mut init_sigma = None;
        let mut records = Vec::new();
        let mut last_t = f64::NEG_INFINITY;
        let mut saw_magic = false;

        for (i, line) in r.lines().enumerate() {
            let n = i + 1;
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if line == LOG_MAGIC {
                    saw_magic = true;
                    continue;
                }
                let mut it = rest.split_whitespace();
                let key = it.next().unwrap_or("");
                let words: Vec<&str> = it.collect();
                let nums = |k: usize| -> Result<Vec<f64>> { parse_nums(&words, k).map_err(|m| err(n, m)) };
                match key {
                    "origin" => {
                        let v = nums(3)?;
                        origin = Some(Lla::new(v[0], v[1], v[2]).map_err(|e| err(n, e.to_string()))?);
                    }
                    "buoy" => {
                        let v = nums(3)?;
                        buoys.push(Vector3::new(v[0], v[1], v[2]));
                    }
                    "imu" => {
                        if words.len() != 8 {
                            return Err(err(n, "imu header needs 8 fields".into()));
                        }
                        let scheme = match words[1] {
                            "euler" => Scheme::Euler,
                            "midpoint" => Scheme::Midpoint,
                            other => return Err(err(n, format!("unknown scheme '{other}'"))),
                        };
                        let mut rest = words.clone();
                        rest.remove(1);
                        let v = parse_nums(&rest, 7).map_err(|m| err(n, m))?;
                        imu = Some((
                            v[0],
                            scheme,
                            ImuNoiseParams {
                                gyro_bias: v[1],
                                accel_bias: v[2],
                                gyro_noise_density: v[3],
                                accel_noise_density: v[4],
                                gyro_bias_walk: v[5],
                                accel_bias_walk: v[6],
                            },
                        ));
                    }
                    "lbl" => lbl = Some(nums(4)?),
                    "gnss" => gnss = Some(nums(2)?),
                    "dvl" => {
                        if words.len() != 2 {
                            return Err(err(n, "dvl header needs 2 fields".into()));
                        }
                        let frame = match words[1] {
                            "world" => DvlFrame::World,
                            "body" => DvlFrame::Body,
                            other => return Err(err(n, format!("unknown DVL frame '{other}'"))),
                        };
                        dvl = Some((parse_nums(&words[..1], 1).map_err(|m| err(n, m))?[0], frame));
                    }
                    "mcp" => mcp = Some(nums(1)?[0]),
                    "ps" => ps = Some(nums(1)?[0]),
                    "init" => {
                        let v = nums(17)?;
                        let q = Quaternion::new(v[7], v[8], v[9], v[10]);
                        if (q.norm() - 1.0).abs() > 1e-6 {
                            return Err(err(n, "initial attitude is not a unit quaternion".into()));
                        }
                        init = Some(NavState {
                            t: v[0],
                            p: Vector3::new(v[1], v[2], v[3]),
                            v: Vector3::new(v[4], v[5], v[6]),
                            q: UnitQuaternion::new_normalize(q),
                            ba: Vector3::new(v[11], v[12], v[13]),
                            bg: Vector3::new(v[14], v[15], v[16]),
                        });
                    }
                    "init_sigma" => {
                        let v = nums(15)?;
                        if v.iter().any(|x| !(*x > 0.0)) {
                            return Err(err(n, "init_sigma entries must be positive".into()));
                        }
                        init_sigma = Some(<[f64; 15]>::try_from(v.as_slice()).expect("15 values"));
                    }
                    _ => {}
                }
                continue;
            }
            if !saw_magic {
                return Err(err(n, format!("missing '{LOG_MAGIC}' header")));
            }
            let mut it = line.split_whitespace();
            let t: f64 = it
                .next()
                .and_then(|w| w.parse().ok())
                .filter(|t: &f64| t.is_finite())
                .ok_or_else(|| err(n, "bad timestamp".into()))?;
            if t < last_t {
                return Err(err(n, format!("timestamp {t} precedes {last_t}")));
            }
            last_t = t;
            let tag = it.next().ok_or_else(|| err(n, "missing sensor tag".into()))?;
            let words: Vec<&str> = it.collect();
            let nums = |k: usize| -> Result<Vec<f64>> { parse_nums(&words, k).map_err(|m| err(n, m)) };
            let rec = match tag {
                "IMU" => {
                    let v = nums(6)?;
                    Record::Imu(ImuSample { t, gyro: Vector3::new(v[0], v[1], v[2]), accel: Vector3::new(v[3], v[4], v[5]) })
                }
                "LBL" => {
                    let k = buoys.len().saturating_sub(1);
                    Record::Lbl { t, rho: nums(k)? }
                }
                "GNSS" => {
                    let v = nums(3)?;
                    Record::Gnss { t, fix: Lla::new(v[0], v[1], v[2]).map_err(|e| err(n, e.to_string()))? }
                }
                "DVL" => {
                    let v = nums(3)?;
                    Record::Dvl { t, v: Vector3::new(v[0], v[1], v[2]) }
                }
                "MCP" => Record::Mcp { t, yaw: nums(1)?[0] },
                "PS" => Record::Ps { t, u: nums(1)?[0] },
                other => return Err(err(n, format!("unknown sensor tag '{other}'"))),
            };
            records.push(rec);
        }
        if !saw_magic {
            return Err(err(0, format!("missing '{LOG_MAGIC}' header")));
        }
        let missing = |what: &str| err(0, format!("header is missing '# {what}'"));
        if buoys.len() < 2 {
            return Err(missing("buoy"));
        }
        let (imu_rate, scheme, imu_noise) = imu.ok_or_else(|| missing("imu"))?;
        let lbl = lbl.ok_or_else(|| missing("lbl"))?;
        let gnss = gnss.ok_or_else(|| missing("gnss"))?;
        let (dvl_sigma, dvl_frame) = dvl.ok_or_else(|| missing("dvl"))?;
        let header = LogHeader {
            origin: origin.ok_or_else(|| missing("origin"))?,
            buoys: BuoyArray::new(buoys[0], buoys[1..].to_vec()).map_err(|e| err(0, e.to_string()))?,
            imu_rate,
            scheme,
            imu_noise,
            lbl_sigma: lbl[0],
            lbl_extra_sigma: lbl[1],
            dr_sigma: lbl[2],
            dr_tau: lbl[3],
            gnss_sigma: [gnss[0], gnss[1]],
            dvl_sigma,
            dvl_frame,
            mcp_sigma: mcp.ok_or_else(|| missing("mcp"))?,
            ps_sigma: ps.ok_or_else(|| missing("ps"))?,
            init: init.ok_or_else(|| missing("init"))?,
            init_sigma: init_sigma.ok_or_else(|| missing("init_sigma"))?,
        };
        Ok(Self { header, records })
    }
}

fn parse_nums(words: &[&str], k: usize) -> std::result::Result<Vec<f64>, String> {
    if words.len() != k {
        return Err(format!("expected {k} numbers, found {}", words.len()));
    }
    words
        .iter()
        .map(|w| w.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| format!("bad number '{w}'")))
        .collect()
}
