//! Day-long weather profiles: CSV ingestion, validation, interpolation and a
//! synthetic clear-sky generator with square cloud events.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::harness::rng::substream;

/// Largest accepted spacing between profile samples, s.
pub const MAX_GAP: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileSample {
    /// Seconds since local solar midnight.
    pub time: f64,
    /// Direct normal irradiance, W/m².
    pub dni: f64,
    /// Ambient temperature, °C.
    pub t_a: f64,
    /// Precomputed geometric efficiency, if the file provides it.
    pub n_o: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    samples: Vec<ProfileSample>,
}

impl Profile {
    pub fn new(samples: Vec<ProfileSample>) -> Result<Self> {
        let p = Self { samples };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        let s = &self.samples;
        if s.len() < 2 {
            return Err(Error::Degenerate("a profile needs at least two samples".into()));
        }
        let has_geo = s[0].n_o.is_some();
        for (i, x) in s.iter().enumerate() {
            let ok = x.time.is_finite()
                && x.dni.is_finite()
                && x.dni >= 0.0
                && x.t_a.is_finite()
                && x.n_o.is_some() == has_geo
                && x.n_o.is_none_or(|g| (0.0..=1.0).contains(&g));
            if !ok {
                return Err(Error::Degenerate(format!("invalid profile sample {i}: {x:?}")));
            }
        }
        Ok(())
    }

    pub fn samples(&self) -> &[ProfileSample] {
        &self.samples
    }

    pub fn start(&self) -> f64 {
        self.samples[0].time
    }

    pub fn end(&self) -> f64 {
        self.samples[self.samples.len() - 1].time
    }

    pub fn duration(&self) -> f64 {
        self.end() - self.start()
    }

    pub fn has_geometry(&self) -> bool {
        self.samples[0].n_o.is_some()
    }

    /// Linear interpolation, held constant outside the covered span.
    pub fn at(&self, t: f64) -> ProfileSample {
        let s = &self.samples;
        let k = s.partition_point(|x| x.time <= t);
        if k == 0 {
            return ProfileSample { time: t, ..s[0] };
        }
        if k == s.len() {
            return ProfileSample { time: t, ..s[k - 1] };
        }
        let (a, b) = (&s[k - 1], &s[k]);
        let w = (t - a.time) / (b.time - a.time);
        let lerp = |u: f64, v: f64| u + w * (v - u);
        ProfileSample {
            time: t,
            dni: lerp(a.dni, b.dni),
            t_a: lerp(a.t_a, b.t_a),
            n_o: a.n_o.zip(b.n_o).map(|(u, v)| lerp(u, v)),
        }
    }

    /// Read a `time_s,dni_wm2,t_ambient_c[,n_o]` file.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFiles(vec![path.to_path_buf()]));
        }
        let bad = |line: usize, message: String| Error::Parse {
            path: path.into(),
            line,
            message,
        };
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| bad(0, e.to_string()))?;
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| bad(1, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let with_geo = match header.iter().map(String::as_str).collect::<Vec<_>>()[..] {
            ["time_s", "dni_wm2", "t_ambient_c"] => false,
            ["time_s", "dni_wm2", "t_ambient_c", "n_o"] => true,
            _ => return Err(bad(1, format!("unexpected header {header:?}"))),
        };
        let mut samples: Vec<ProfileSample> = Vec::new();
        for (k, rec) in reader.records().enumerate() {
            let line = k + 2;
            let rec = rec.map_err(|e| bad(line, e.to_string()))?;
            let field = |i: usize| -> Result<f64> {
                let s = rec.get(i).ok_or_else(|| bad(line, format!("missing column {}", i + 1)))?;
                s.parse().map_err(|_| bad(line, format!("{s:?} is not a number")))
            };
            let sample = ProfileSample {
                time: field(0)?,
                dni: field(1)?,
                t_a: field(2)?,
                n_o: if with_geo { Some(field(3)?) } else { None },
            };
            if sample.dni < 0.0 || !sample.dni.is_finite() {
                return Err(bad(line, format!("negative irradiance {}", sample.dni)));
            }
            if let Some(prev) = samples.last() {
                if !(sample.time > prev.time) {
                    return Err(bad(line, format!("time {} does not increase", sample.time)));
                }
                if sample.time - prev.time > MAX_GAP {
                    return Err(bad(line, format!("gap of {} s exceeds {MAX_GAP} s", sample.time - prev.time)));
                }
            }
            samples.push(sample);
        }
        Self::new(samples).map_err(|e| bad(0, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
        let io = |e: csv::Error| Error::io(path, e.into());
        if self.has_geometry() {
            w.write_record(["time_s", "dni_wm2", "t_ambient_c", "n_o"]).map_err(io)?;
        } else {
            w.write_record(["time_s", "dni_wm2", "t_ambient_c"]).map_err(io)?;
        }
        for s in &self.samples {
            let mut row = vec![s.time.to_string(), s.dni.to_string(), s.t_a.to_string()];
            if let Some(g) = s.n_o {
                row.push(g.to_string());
            }
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Square attenuation of the direct irradiance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudEvent {
    /// Solar hour the event starts.
    pub start_hour: f64,
    pub duration_hours: f64,
    /// Fraction of irradiance removed, in [0, 1].
    pub depth: f64,
}

/// Sine-bump clear-sky day with optional cloud events.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDay {
    pub sunrise_hour: f64,
    pub sunset_hour: f64,
    pub peak_dni: f64,
    pub t_a_min: f64,
    pub t_a_max: f64,
    /// Sample spacing, s.
    pub step: f64,
    pub clouds: Vec<CloudEvent>,
}

impl Default for SyntheticDay {
    fn default() -> Self {
        Self {
            sunrise_hour: 6.0,
            sunset_hour: 18.0,
            peak_dni: 950.0,
            t_a_min: 22.0,
            t_a_max: 38.0,
            step: 60.0,
            clouds: Vec::new(),
        }
    }
}

impl SyntheticDay {
    pub fn sunny(peak_dni: f64) -> Self {
        Self {
            peak_dni,
            ..Self::default()
        }
    }

    /// Broken clouds: `n` events spread over the day.
    pub fn partly_cloudy(peak_dni: f64, n: usize, depth: f64) -> Self {
        let mut day = Self::sunny(peak_dni);
        let span = day.sunset_hour - day.sunrise_hour;
        day.clouds = (0..n)
            .map(|k| CloudEvent {
                start_hour: day.sunrise_hour + span * (k as f64 + 0.6) / (n as f64 + 0.5),
                duration_hours: 0.3,
                depth,
            })
            .collect();
        day
    }

    /// Overcast: one long deep event over the middle of the day.
    pub fn cloudy(peak_dni: f64) -> Self {
        let mut day = Self::sunny(peak_dni);
        day.clouds = vec![CloudEvent {
            start_hour: 8.0,
            duration_hours: 8.0,
            depth: 0.8,
        }];
        day
    }

    pub fn dni(&self, hour: f64) -> f64 {
        if hour <= self.sunrise_hour || hour >= self.sunset_hour {
            return 0.0;
        }
        let phase = (hour - self.sunrise_hour) / (self.sunset_hour - self.sunrise_hour);
        let clear = self.peak_dni * (PI * phase).sin();
        let shade: f64 = self
            .clouds
            .iter()
            .filter(|c| hour >= c.start_hour && hour < c.start_hour + c.duration_hours)
            .map(|c| c.depth)
            .fold(0.0, f64::max);
        clear * (1.0 - shade)
    }

    /// Ambient temperature, a sinusoid with its peak at 15 h.
    pub fn ambient(&self, hour: f64) -> f64 {
        let mid = 0.5 * (self.t_a_min + self.t_a_max);
        let amp = 0.5 * (self.t_a_max - self.t_a_min);
        mid + amp * (2.0 * PI * (hour - 9.0) / 24.0).sin()
    }

    pub fn generate(&self) -> Result<Profile> {
        if !(self.sunset_hour > self.sunrise_hour && self.step > 0.0 && self.peak_dni >= 0.0) {
            return Err(Error::Config(format!("invalid synthetic day {self:?}")));
        }
        let (t0, t1) = (self.sunrise_hour * 3600.0, self.sunset_hour * 3600.0);
        let n = ((t1 - t0) / self.step).round() as usize;
        let samples = (0..=n)
            .map(|k| {
                let time = t0 + k as f64 * self.step;
                let hour = time / 3600.0;
                ProfileSample {
                    time,
                    dni: self.dni(hour),
                    t_a: self.ambient(hour),
                    n_o: None,
                }
            })
            .collect();
        Profile::new(samples)
    }
}

/// `n` varied synthetic days for dataset campaigns, cycling through sunny,
/// partly cloudy and cloudy with peaks, temperatures and clouds drawn from
/// the `days` substream of `seed`.
pub fn campaign_days(n: usize, seed: u64) -> Result<Vec<Profile>> {
    let mut rng = substream(seed, "days");
    (0..n)
        .map(|k| {
            let peak = rng.gen_range(780.0..1020.0);
            let mut day = match k % 3 {
                0 => SyntheticDay::sunny(peak),
                1 => SyntheticDay::partly_cloudy(peak, rng.gen_range(2..7), rng.gen_range(0.3..0.8)),
                _ => SyntheticDay::cloudy(peak),
            };
            day.t_a_min = rng.gen_range(8.0..26.0);
            day.t_a_max = day.t_a_min + rng.gen_range(8.0..16.0);
            day.generate()
        })
        .collect()
}
