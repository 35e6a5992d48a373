use std::fmt::Write as _;
use std::path::Path;

use super::mlp::{Activation, Mlp, Workspace};
use super::scaler::Scaler;
use crate::auction::ValveSet;
use crate::error::{Error, Result};

const MAGIC: &str = "ptc-mlp 1";
/// Smallest aperture the network may command.
pub const MIN_NET_APERTURE: f64 = 0.01;

/// A trained network with its input and output scalers.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnModel {
    pub net: Mlp,
    pub input_scaler: Scaler,
    pub output_scaler: Scaler,
    pub seed: u64,
}

/// Reusable buffers for repeated inference.
#[derive(Debug, Clone)]
pub struct InferenceBuffers {
    scaled: Vec<f64>,
    ws: Workspace,
    pub clamped_inputs: usize,
}

impl AnnModel {
    pub fn new(net: Mlp, input_scaler: Scaler, output_scaler: Scaler, seed: u64) -> Result<Self> {
        if input_scaler.len() != net.n_inputs() {
            return Err(Error::Shape {
                expected: net.n_inputs(),
                got: input_scaler.len(),
            });
        }
        if output_scaler.len() != net.n_outputs() {
            return Err(Error::Shape {
                expected: net.n_outputs(),
                got: output_scaler.len(),
            });
        }
        Ok(Self {
            net,
            input_scaler,
            output_scaler,
            seed,
        })
    }

    pub fn buffers(&self) -> InferenceBuffers {
        InferenceBuffers {
            scaled: vec![0.0; self.net.n_inputs()],
            ws: self.net.workspace(),
            clamped_inputs: 0,
        }
    }

    /// Raw network output, unscaled to aperture units.
    pub fn predict_raw(&self, raw: &[f64], buf: &mut InferenceBuffers) -> Result<Vec<f64>> {
        if raw.len() != self.net.n_inputs() {
            return Err(Error::Shape {
                expected: self.net.n_inputs(),
                got: raw.len(),
            });
        }
        for (i, (s, &v)) in buf.scaled.iter_mut().zip(raw).enumerate() {
            let x = self.input_scaler.scale_one(i, v);
            if !(-1.0..=1.0).contains(&x) {
                buf.clamped_inputs += 1;
            }
            *s = x.clamp(-1.0, 1.0);
        }
        let out = self.net.forward_ws(&buf.scaled, &mut buf.ws);
        Ok(out
            .iter()
            .enumerate()
            .map(|(i, &s)| self.output_scaler.unscale_one(i, s))
            .collect())
    }

    /// Apertures for a raw controller state: clamped to `[0.01, 1]` and
    /// renormalised so the largest is fully open.
    pub fn infer_apertures(&self, raw: &[f64], buf: &mut InferenceBuffers) -> Result<ValveSet> {
        let before = buf.clamped_inputs;
        let mut v = self.predict_raw(raw, buf)?;
        if buf.clamped_inputs > before {
            log::debug!("{} controller inputs outside the training range were clamped", buf.clamped_inputs - before);
        }
        for a in v.iter_mut() {
            *a = a.clamp(MIN_NET_APERTURE, 1.0);
        }
        let max = v.iter().cloned().fold(0.0, f64::max);
        for a in v.iter_mut() {
            *a /= max;
        }
        Ok(ValveSet { apertures: v })
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let mut s = String::new();
        writeln!(s, "{MAGIC}").unwrap();
        let sizes: Vec<String> = self.net.sizes().iter().map(|n| n.to_string()).collect();
        writeln!(s, "layers {}", sizes.join(" ")).unwrap();
        writeln!(s, "hidden {}", self.net.hidden_activation().name()).unwrap();
        writeln!(s, "output {}", self.net.output_activation().name()).unwrap();
        writeln!(s, "seed {}", self.seed).unwrap();
        writeln!(s, "input_min {}", join(&self.input_scaler.min)).unwrap();
        writeln!(s, "input_max {}", join(&self.input_scaler.max)).unwrap();
        writeln!(s, "output_min {}", join(&self.output_scaler.min)).unwrap();
        writeln!(s, "output_max {}", join(&self.output_scaler.max)).unwrap();
        for l in 0..self.net.n_layers() {
            let (n_in, n_out) = (self.net.sizes()[l], self.net.sizes()[l + 1]);
            writeln!(s, "weights {l} {n_out} {n_in}").unwrap();
            for row in self.net.weights(l).chunks_exact(n_in) {
                writeln!(s, "{}", join(row)).unwrap();
            }
            writeln!(s, "biases {l} {n_out}").unwrap();
            writeln!(s, "{}", join(self.net.biases(l))).unwrap();
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFiles(vec![path.to_path_buf()]));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut last_line = 0;
        let mut next = |what: &str| -> Result<(usize, &str)> {
            let (n, l) = lines.next().ok_or_else(|| Error::Parse {
                path: path.into(),
                line: last_line + 1,
                message: format!("unexpected end of file, expected {what}"),
            })?;
            last_line = n;
            Ok((n, l))
        };
        let bad = |line: usize, message: String| Error::Parse {
            path: path.into(),
            line,
            message,
        };
        let floats = |line: usize, s: &str| -> Result<Vec<f64>> {
            s.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| bad(line, format!("{t:?}: {e}"))))
                .collect()
        };
        let keyed = |line: usize, l: &'_ str, key: &str| -> Result<String> {
            l.strip_prefix(key)
                .map(|r| r.trim().to_string())
                .ok_or_else(|| bad(line, format!("expected `{key}`")))
        };

        let (n, l) = next("header")?;
        if l != MAGIC {
            return Err(bad(n, format!("not a model file (header {l:?})")));
        }
        let (n, l) = next("layers")?;
        let sizes: Vec<usize> = keyed(n, l, "layers")?
            .split_whitespace()
            .map(|t| t.parse().map_err(|e| bad(n, format!("{t:?}: {e}"))))
            .collect::<Result<_>>()?;
        let (n, l) = next("hidden")?;
        let hidden = Activation::parse(&keyed(n, l, "hidden")?).ok_or_else(|| bad(n, "unknown activation".into()))?;
        let (n, l) = next("output")?;
        let output = Activation::parse(&keyed(n, l, "output")?).ok_or_else(|| bad(n, "unknown activation".into()))?;
        let (n, l) = next("seed")?;
        let seed: u64 = keyed(n, l, "seed")?.parse().map_err(|e| bad(n, format!("{e}")))?;
        let mut ranges = Vec::new();
        for key in ["input_min", "input_max", "output_min", "output_max"] {
            let (n, l) = next(key)?;
            ranges.push(floats(n, &keyed(n, l, key)?)?);
        }
        let mut net = Mlp::new(&sizes, hidden, output).map_err(|e| bad(2, e.to_string()))?;
        for layer in 0..net.n_layers() {
            let (n_in, n_out) = (sizes[layer], sizes[layer + 1]);
            let (n, l) = next("weights")?;
            if l != format!("weights {layer} {n_out} {n_in}") {
                return Err(bad(n, format!("expected weight block of layer {layer}")));
            }
            for r in 0..n_out {
                let (n, l) = next("weight row")?;
                let row = floats(n, l)?;
                if row.len() != n_in {
                    return Err(bad(n, format!("expected {n_in} weights, got {}", row.len())));
                }
                net.weights_mut(layer)[r * n_in..(r + 1) * n_in].copy_from_slice(&row);
            }
            let (n, l) = next("biases")?;
            if l != format!("biases {layer} {n_out}") {
                return Err(bad(n, format!("expected bias block of layer {layer}")));
            }
            let (n, l) = next("bias row")?;
            let row = floats(n, l)?;
            if row.len() != n_out {
                return Err(bad(n, format!("expected {n_out} biases, got {}", row.len())));
            }
            net.biases_mut(layer).copy_from_slice(&row);
        }
        let [in_min, in_max, out_min, out_max]: [Vec<f64>; 4] = ranges.try_into().expect("four ranges");
        let wrap = |e: Error| bad(6, e.to_string());
        AnnModel::new(
            net,
            Scaler::new(in_min, in_max).map_err(wrap)?,
            Scaler::new(out_min, out_max).map_err(wrap)?,
            seed,
        )
        .map_err(wrap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(seed: u64) -> AnnModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Mlp::standard();
        net.init_uniform(&mut rng);
        let min: Vec<f64> = (0..35).map(|_| rng.gen_range(-10.0..0.0)).collect();
        let max: Vec<f64> = min.iter().map(|m| m + rng.gen_range(0.1..400.0)).collect();
        AnnModel::new(
            net,
            Scaler::new(min, max).unwrap(),
            Scaler::new(vec![0.5; 10], vec![1.0; 10]).unwrap(),
            seed,
        )
        .unwrap()
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let m = random_model(77);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.txt");
        m.save(&path).unwrap();
        let back = AnnModel::load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_text(), m.to_text());
    }

    #[test]
    fn corrupt_file_reports_line() {
        let m = random_model(1);
        let mut text = m.to_text();
        text = text.replacen("weights 1 25 50", "weights 1 25 49", 1);
        let err = AnnModel::from_text(&text, Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Parse { line, .. } if line > 50));
    }

    #[test]
    fn zero_net_gives_scaler_midpoint() {
        let mut m = random_model(3);
        m.net = Mlp::standard();
        let mut buf = m.buffers();
        let raw = m.predict_raw(&[0.0; 35], &mut buf).unwrap();
        assert!(raw.iter().all(|&v| (v - 0.75).abs() < 1e-15));
        let valves = m.infer_apertures(&[0.0; 35], &mut buf).unwrap();
        assert_eq!(valves.apertures, vec![1.0; 10]);
    }

    #[test]
    fn apertures_are_clamped_and_normalised() {
        let m = random_model(5);
        let mut buf = m.buffers();
        let v = m.infer_apertures(&[1e6; 35], &mut buf).unwrap();
        assert!(buf.clamped_inputs > 0);
        assert_eq!(v.apertures.iter().cloned().fold(0.0, f64::max), 1.0);
        assert!(v.apertures.iter().all(|&a| (MIN_NET_APERTURE..=1.0).contains(&a)));
    }
}
