//! Small synthetic classification sets in the unit cube.
//!
//! Labels alternate with the sample index, so classes are balanced within
//! one. Points are generated around the cube center and, only if some
//! coordinate escapes `[0, 1]`, contracted uniformly toward the center; the
//! geometry (and the separation relative to the cube) is otherwise kept.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{child_rng, streams};

pub const MAX_DIMS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    /// Two isotropic Gaussians whose centers differ by `class_separation`
    /// along the first axis.
    TwoGaussians,
    /// Concentric spheres in the first two coordinates with radii `0.15` and
    /// `0.15 + class_separation`; `noise` is radial.
    Rings,
    /// A 2x2 checkerboard of Gaussian blobs, centers `class_separation` apart.
    XorGrid,
}

impl Generator {
    pub fn name(self) -> &'static str {
        match self {
            Generator::TwoGaussians => "two_gaussians",
            Generator::Rings => "rings",
            Generator::XorGrid => "xor_grid",
        }
    }
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Generator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_gaussians" => Ok(Generator::TwoGaussians),
            "rings" => Ok(Generator::Rings),
            "xor_grid" => Ok(Generator::XorGrid),
            _ => Err(Error::InvalidConfig(format!(
                "unknown generator {s:?} (expected two_gaussians, rings or xor_grid)"
            ))),
        }
    }
}

const RING_INNER: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub generator: Generator,
    pub n_samples: usize,
    pub class_separation: f64,
    pub noise: f64,
    pub dims: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_DIMS).contains(&self.dims) {
            return Err(Error::InvalidConfig(format!(
                "dims must lie in 1..={MAX_DIMS}, got {}",
                self.dims
            )));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidConfig("n_samples must be at least 1".into()));
        }
        for (name, v) in [("class_separation", self.class_separation), ("noise", self.noise)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = child_rng(spec.seed, streams::DATA);
    let gauss = Normal::new(0.0, spec.noise).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let half = spec.class_separation / 2.0;
    let d = spec.dims;
    let mut inputs = Vec::with_capacity(spec.n_samples);
    let mut labels = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let y = i % 2;
        let mut x: Vec<f64> = (0..d).map(|_| 0.5 + gauss.sample(&mut rng)).collect();
        match spec.generator {
            Generator::TwoGaussians => {
                x[0] += if y == 0 { -half } else { half };
            }
            Generator::Rings => {
                let r = RING_INNER + y as f64 * spec.class_separation + gauss.sample(&mut rng);
                if d == 1 {
                    let s = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                    x[0] = 0.5 + s * r;
                } else {
                    let t = rng.gen_range(0.0..std::f64::consts::TAU);
                    x[0] = 0.5 + r * t.cos();
                    x[1] = 0.5 + r * t.sin();
                }
            }
            Generator::XorGrid => {
                // quadrant q in 0..4, label = parity of its two sign bits
                let q = 2 * rng.gen_range(0..2usize) + y;
                let (a, b) = (q / 2, (q / 2) ^ (q % 2));
                if d == 1 {
                    x[0] += (q as f64 - 1.5) * half;
                } else {
                    x[0] += if a == 0 { -half } else { half };
                    x[1] += if b == 0 { -half } else { half };
                }
            }
        }
        inputs.push(x);
        labels.push(y);
    }
    let reach = inputs
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max((v - 0.5).abs()));
    if reach > 0.5 {
        let s = 0.5 / reach;
        for v in inputs.iter_mut().flatten() {
            *v = (0.5 + (*v - 0.5) * s).clamp(0.0, 1.0);
        }
    }
    Dataset::new(inputs, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(generator: Generator) -> SyntheticSpec {
        SyntheticSpec {
            generator,
            n_samples: 101,
            class_separation: 0.4,
            noise: 0.1,
            dims: 2,
            seed: 9,
        }
    }

    #[test]
    fn in_cube_and_balanced() {
        for g in [Generator::TwoGaussians, Generator::Rings, Generator::XorGrid] {
            for dims in [1, 2, 5] {
                let d = generate(&SyntheticSpec { dims, ..spec(g) }).unwrap();
                assert!(d.inputs().iter().flatten().all(|v| (0.0..=1.0).contains(v)));
                let ones = d.labels().iter().filter(|&&y| y == 1).count() as i64;
                assert!((2 * ones - d.len() as i64).abs() <= 1);
            }
        }
    }

    #[test]
    fn seed_repeat_identical() {
        let a = generate(&spec(Generator::Rings)).unwrap();
        let b = generate(&spec(Generator::Rings)).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        let c = generate(&SyntheticSpec { seed: 10, ..spec(Generator::Rings) }).unwrap();
        assert_ne!(a.to_csv(), c.to_csv());
    }

    #[test]
    fn noiseless_rings_lie_on_two_circles() {
        let d = generate(&SyntheticSpec { noise: 0.0, class_separation: 0.3, ..spec(Generator::Rings) }).unwrap();
        for (x, y) in d.iter() {
            let r = ((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)).sqrt();
            let want = RING_INNER + y as f64 * 0.3;
            assert!((r - want).abs() < 1e-12, "{r} vs {want}");
        }
    }

    #[test]
    fn invalid_dims_rejected() {
        assert!(generate(&SyntheticSpec { dims: 0, ..spec(Generator::XorGrid) }).is_err());
        assert!(generate(&SyntheticSpec { dims: 9, ..spec(Generator::XorGrid) }).is_err());
    }
}
