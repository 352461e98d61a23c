//! Minute-resolution load and solar profiles.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feeder::FeederModel;

/// Per-minute loads and generation for buses 1..=N. Matrices are stored row
/// per minute.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSet {
    /// Minute of day for each row.
    pub timestamps: Vec<u32>,
    pub p_c: Vec<Vec<f64>>,
    pub q_c: Vec<Vec<f64>>,
    pub p_g: Vec<Vec<f64>>,
    /// Inverter ratings, zero where a bus has no solar.
    pub s_bar: Vec<f64>,
}

impl ProfileSet {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn n(&self) -> usize {
        self.s_bar.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (t, n) = (self.len(), self.n());
        for (name, m) in [("p_c", &self.p_c), ("q_c", &self.q_c), ("p_g", &self.p_g)] {
            if m.len() != t || m.iter().any(|row| row.len() != n) {
                return Err(Error::Dimension(format!("{name} must be {t}x{n}")));
            }
            if m.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} has non-finite entries")));
            }
        }
        if self.p_c.iter().chain(&self.p_g).flatten().any(|&v| v < 0.0) {
            return Err(Error::InvalidParameter("loads and generation must be nonnegative".into()));
        }
        if self.s_bar.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
            return Err(Error::InvalidParameter("inverter ratings must be nonnegative".into()));
        }
        Ok(())
    }

    /// Net active injection `p_g - p_c` at minute row `t`.
    pub fn net_p(&self, t: usize) -> Vec<f64> {
        self.p_g[t].iter().zip(&self.p_c[t]).map(|(g, c)| g - c).collect()
    }

    /// Reactive limits `sqrt(max(s̄² - p_g², 0))` at minute row `t`.
    pub fn q_bar(&self, t: usize) -> Vec<f64> {
        self.s_bar.iter().zip(&self.p_g[t]).map(|(&s, &p)| q_limit(s, p)).collect()
    }

    /// Buses carrying an inverter.
    pub fn inverter_buses(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.s_bar[i] > 0.0).map(|i| i + 1).collect()
    }

    /// Every profile multiplied by `alpha` (ratings included).
    pub fn scaled(&self, alpha: f64) -> ProfileSet {
        let sc = |m: &Vec<Vec<f64>>| m.iter().map(|r| r.iter().map(|v| v * alpha).collect()).collect();
        ProfileSet {
            timestamps: self.timestamps.clone(),
            p_c: sc(&self.p_c),
            q_c: sc(&self.q_c),
            p_g: sc(&self.p_g),
            s_bar: self.s_bar.iter().map(|s| s * alpha).collect(),
        }
    }

    /// Writes the long `t,bus,p_c,q_c,p_g` table.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        for (k, &t) in self.timestamps.iter().enumerate() {
            for n in 0..self.n() {
                w.serialize(Row {
                    t,
                    bus: n + 1,
                    p_c: self.p_c[k][n],
                    q_c: self.q_c[k][n],
                    p_g: self.p_g[k][n],
                })
                .map_err(|e| Error::csv(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads the long table written by [`ProfileSet::write_csv`]; ratings are
    /// `oversize` times the peak generation of each bus.
    pub fn read_csv(path: impl AsRef<Path>, oversize: f64) -> Result<ProfileSet> {
        let path = path.as_ref();
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::csv(path, e))?;
        let rows: Vec<Row> = rdr
            .deserialize()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::csv(path, e))?;
        let n = rows.iter().map(|r| r.bus).max().unwrap_or(0);
        if n == 0 || rows.iter().any(|r| r.bus == 0) {
            return Err(Error::Parse(format!("{}: bus ids must start at 1", path.display())));
        }
        let mut timestamps: Vec<u32> = rows.iter().map(|r| r.t).collect();
        timestamps.dedup();
        let t_len = timestamps.len();
        if rows.len() != t_len * n {
            return Err(Error::Parse(format!(
                "{}: expected {n} rows per minute sorted by time, got {} rows for {t_len} minutes",
                path.display(),
                rows.len()
            )));
        }
        let mut p = ProfileSet {
            timestamps,
            p_c: vec![vec![0.0; n]; t_len],
            q_c: vec![vec![0.0; n]; t_len],
            p_g: vec![vec![0.0; n]; t_len],
            s_bar: vec![0.0; n],
        };
        for (k, r) in rows.iter().enumerate() {
            let t = k / n;
            if r.t != p.timestamps[t] || r.bus != k % n + 1 {
                return Err(Error::Parse(format!(
                    "{}: row {} should be minute {} bus {}",
                    path.display(),
                    k + 2,
                    p.timestamps[t],
                    k % n + 1
                )));
            }
            p.p_c[t][r.bus - 1] = r.p_c;
            p.q_c[t][r.bus - 1] = r.q_c;
            p.p_g[t][r.bus - 1] = r.p_g;
        }
        for b in 0..n {
            p.s_bar[b] = oversize * p.p_g.iter().map(|row| row[b]).fold(0.0, f64::max);
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Serialize, Deserialize)]
struct Row {
    t: u32,
    bus: usize,
    p_c: f64,
    q_c: f64,
    p_g: f64,
}

pub(crate) fn q_limit(s_bar: f64, p_g: f64) -> f64 {
    (s_bar * s_bar - p_g * p_g).max(0.0).sqrt()
}

/// Settings for [`synthesize_profiles`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub horizon_min: usize,
    /// Minute of day of the first sample.
    pub start_min: u32,
    pub penetration: f64,
    /// Daily load peak as a multiple of the nominal bus load.
    pub peak_scale: f64,
    pub pf_range: [f64; 2],
    /// Inverter rating as a multiple of peak generation.
    pub oversize: f64,
    /// Per-minute relative volatility of loads.
    pub noise: f64,
    /// Per-minute relative volatility of solar output.
    pub solar_noise: f64,
    /// Raw solar peak relative to the raw load peak, before the common scaling.
    pub solar_ratio: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            horizon_min: 480,
            start_min: 8 * 60,
            penetration: 0.75,
            peak_scale: 1.5,
            pf_range: [0.9, 0.95],
            oversize: 1.1,
            noise: 0.03,
            solar_noise: 0.08,
            solar_ratio: 4.0,
            seed: 1,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.penetration) {
            return Err(Error::InvalidParameter(format!("penetration {} outside [0, 1]", self.penetration)));
        }
        if self.horizon_min < 2 {
            return Err(Error::InvalidParameter("horizon must be at least 2 minutes".into()));
        }
        let [lo, hi] = self.pf_range;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidParameter(format!("power factor range {lo}..{hi} is invalid")));
        }
        if !(0.0..=0.15).contains(&self.noise) || !(0.0..=0.15).contains(&self.solar_noise) {
            return Err(Error::InvalidParameter("noise levels must lie in [0, 0.15]".into()));
        }
        if !(self.peak_scale > 0.0 && self.oversize >= 1.0 && self.solar_ratio >= 0.0) {
            return Err(Error::InvalidParameter("peak_scale > 0, oversize >= 1 and solar_ratio >= 0 required".into()));
        }
        Ok(())
    }
}

/// Which of buses 1..=N carry solar at the given penetration. At 0.25 these are
/// the multiples of 4, at 0.5 the even buses, and at 0.75 all but the
/// multiples of 4.
pub fn solar_buses(n: usize, penetration: f64) -> Vec<bool> {
    let spread = |p: f64| -> Vec<bool> {
        (1..=n)
            .map(|i| (i as f64 * p + 1e-9).floor() > ((i - 1) as f64 * p + 1e-9).floor())
            .collect()
    };
    if penetration <= 0.5 {
        spread(penetration)
    } else {
        spread(1.0 - penetration).into_iter().map(|b| !b).collect()
    }
}

/// AR(1) series with stationary standard deviation `sigma`.
fn ar1(rng: &mut ChaCha8Rng, len: usize, phi: f64, sigma: f64) -> Vec<f64> {
    let innov = sigma * (1.0 - phi * phi).sqrt();
    let mut e = sigma * rng.sample::<f64, _>(StandardNormal);
    (0..len)
        .map(|_| {
            let v = e;
            e = phi * e + innov * rng.sample::<f64, _>(StandardNormal);
            v
        })
        .collect()
}

fn raised_cosine(minute: f64, center: f64, width: f64) -> f64 {
    let d = (minute - center) / width;
    if d.abs() >= 0.5 {
        0.0
    } else {
        0.5 * (1.0 + (2.0 * PI * d).cos())
    }
}

/// Deterministic synthetic profiles: a raised-cosine diurnal shape per bus
/// with autoregressive noise, scaled so each bus's load peaks at
/// `peak_scale` times its nominal load. Solar uses the same per-bus scaling.
pub fn synthesize_profiles(f: &FeederModel, cfg: &GeneratorConfig) -> Result<ProfileSet> {
    cfg.validate()?;
    let n = f.n();
    let t_len = cfg.horizon_min;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let minutes: Vec<u32> = (0..t_len as u32).map(|k| cfg.start_min + k).collect();
    let solar = solar_buses(n, cfg.penetration);

    // clouds shared by the whole feeder, plus a local component per bus
    let shared = ar1(&mut rng, t_len, 0.97, cfg.solar_noise);
    let mut p_c = vec![vec![0.0; n]; t_len];
    let mut q_c = vec![vec![0.0; n]; t_len];
    let mut p_g = vec![vec![0.0; n]; t_len];
    for b in 0..n {
        let pf = rng.random_range(cfg.pf_range[0]..=cfg.pf_range[1]);
        let tan_phi = pf.acos().tan();
        let peak_at = rng.random_range(15.0 * 60.0..=18.0 * 60.0);
        let base = rng.random_range(0.35..0.55);
        let noise = ar1(&mut rng, t_len, 0.9, cfg.noise);
        let raw_load: Vec<f64> = minutes
            .iter()
            .zip(&noise)
            .map(|(&m, e)| ((base + (1.0 - base) * raised_cosine(m as f64, peak_at, 1440.0)) * (1.0 + e)).max(0.0))
            .collect();
        let load_peak = raw_load.iter().cloned().fold(0.0, f64::max);
        let scale = if load_peak > 0.0 {
            cfg.peak_scale * f.buses[b + 1].p_nom.max(0.0) / load_peak
        } else {
            0.0
        };

        let local = ar1(&mut rng, t_len, 0.9, cfg.solar_noise);
        let size = cfg.solar_ratio * rng.random_range(0.8..=1.2);
        let noon = rng.random_range(12.0 * 60.0..=13.0 * 60.0);
        for k in 0..t_len {
            p_c[k][b] = scale * raw_load[k];
            q_c[k][b] = p_c[k][b] * tan_phi;
            if solar[b] {
                let clear = raised_cosine(minutes[k] as f64, noon, 14.0 * 60.0);
                let cloud = (1.0 + shared[k] + local[k]).clamp(0.0, 1.2);
                p_g[k][b] = scale * size * load_peak * clear * cloud;
            }
        }
    }
    let s_bar = (0..n)
        .map(|b| cfg.oversize * p_g.iter().map(|row| row[b]).fold(0.0, f64::max))
        .collect();
    let p = ProfileSet {
        timestamps: minutes,
        p_c,
        q_c,
        p_g,
        s_bar,
    };
    p.validate()?;
    Ok(p)
}
