//! Deterministic synthetic volumes with known structure and labels.
//!
//! Intensities are HU-like so the default preprocessing window applies.
//! Geometry is in voxel-index coordinates (voxel centres at integer indices).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::volume::Volume3D;

pub const AIR_HU: f32 = -1000.0;
pub const SHELL_HU: f32 = 1500.0;
pub const CORE_HU: f32 = 300.0;
pub const BONE_HU: f32 = 700.0;
pub const CANAL_HU: f32 = 100.0;
pub const SOFT_HU: f32 = 0.0;
pub const BLOCK_HU: f32 = 400.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum PhantomKind {
    Constant {
        value: f32,
    },
    /// Ball of `radius` in air: a dense shell of `shell` voxels over a softer core.
    SphereShell {
        center: [f64; 3],
        radius: f64,
        shell: f64,
    },
    /// Low-density cylinder along `axis` through bone. `center` holds the two
    /// remaining coordinates in ascending axis order.
    Tube {
        center: [f64; 2],
        radius: f64,
        axis: usize,
    },
    /// Uniform noise of `noise_amplitude` inside the half-open box `lo..hi`.
    TexturedBlock {
        lo: [usize; 3],
        hi: [usize; 3],
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub dims: [usize; 3],
    #[serde(default = "unit_spacing")]
    pub spacing: [f64; 3],
    /// Amplitude of uniform noise in HU (added everywhere except for
    /// textured blocks, where it is confined to the block).
    #[serde(default)]
    pub noise_amplitude: f32,
    #[serde(default)]
    pub seed: u64,
}

fn unit_spacing() -> [f64; 3] {
    [1.0; 3]
}

#[derive(Clone, Debug)]
pub struct Phantom {
    pub volume: Volume3D,
    pub label: Volume3D,
}

impl PhantomSpec {
    /// Noise-free sphere centred in the grid, radius a third of the smallest axis.
    pub fn standard_sphere(dims: [usize; 3]) -> Self {
        let min = *dims.iter().min().unwrap() as f64;
        Self {
            kind: PhantomKind::SphereShell {
                center: dims.map(|d| (d as f64 - 1.0) / 2.0),
                radius: min / 3.0,
                shell: 2.0,
            },
            dims,
            spacing: [1.0; 3],
            noise_amplitude: 0.0,
            seed: 0,
        }
    }

    /// The textured phantoms used by masking experiments.
    pub fn textured_set(dims: [usize; 3], seed: u64) -> Vec<(String, PhantomSpec)> {
        let c = dims.map(|d| (d as f64 - 1.0) / 2.0);
        let min = *dims.iter().min().unwrap() as f64;
        let q = dims.map(|d| d / 4);
        vec![
            (
                "sphere_shell".into(),
                PhantomSpec {
                    kind: PhantomKind::SphereShell {
                        center: c,
                        radius: min / 3.0,
                        shell: 2.0,
                    },
                    dims,
                    spacing: [1.0; 3],
                    noise_amplitude: 20.0,
                    seed,
                },
            ),
            (
                "tube".into(),
                PhantomSpec {
                    kind: PhantomKind::Tube {
                        center: [c[1] * 0.8, c[2] * 1.1],
                        radius: min / 8.0,
                        axis: 0,
                    },
                    dims,
                    spacing: [1.0; 3],
                    noise_amplitude: 20.0,
                    seed: seed.wrapping_add(1),
                },
            ),
            (
                "textured_block".into(),
                PhantomSpec {
                    kind: PhantomKind::TexturedBlock {
                        lo: q,
                        hi: [q[0] * 3, q[1] * 2 + q[1] / 2, q[2] * 3],
                    },
                    dims,
                    spacing: [1.0; 3],
                    noise_amplitude: 300.0,
                    seed: seed.wrapping_add(2),
                },
            ),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.dims;
        if dims.contains(&0) {
            return Err(Error::GeometryOutOfBounds(format!("dims must be positive, got {dims:?}")));
        }
        if !(self.noise_amplitude >= 0.0 && self.noise_amplitude.is_finite()) {
            return Err(Error::config("noise_amplitude", "must be finite and >= 0"));
        }
        let fits = |c: f64, r: f64, d: usize| c - r >= 0.0 && c + r <= (d - 1) as f64;
        match &self.kind {
            PhantomKind::Constant { value } if !value.is_finite() => {
                Err(Error::config("value", "must be finite"))
            }
            PhantomKind::Constant { .. } => Ok(()),
            PhantomKind::SphereShell { center, radius, shell } => {
                if !(*radius > 0.0 && *shell >= 0.0) {
                    return Err(Error::GeometryOutOfBounds("sphere radius must be > 0 and shell >= 0".into()));
                }
                if (0..3).all(|a| fits(center[a], *radius, dims[a])) {
                    Ok(())
                } else {
                    Err(Error::GeometryOutOfBounds(format!(
                        "sphere centre {center:?} radius {radius} exceeds dims {dims:?}"
                    )))
                }
            }
            PhantomKind::Tube { center, radius, axis } => {
                if *axis > 2 {
                    return Err(Error::GeometryOutOfBounds(format!("tube axis {axis} not in 0..=2")));
                }
                if *radius <= 0.0 {
                    return Err(Error::GeometryOutOfBounds("tube radius must be > 0".into()));
                }
                let others = tube_axes(*axis);
                if (0..2).all(|k| fits(center[k], *radius, dims[others[k]])) {
                    Ok(())
                } else {
                    Err(Error::GeometryOutOfBounds(format!(
                        "tube centre {center:?} radius {radius} exceeds dims {dims:?}"
                    )))
                }
            }
            PhantomKind::TexturedBlock { lo, hi } => {
                if (0..3).all(|a| lo[a] < hi[a] && hi[a] <= dims[a]) {
                    Ok(())
                } else {
                    Err(Error::GeometryOutOfBounds(format!(
                        "block {lo:?}..{hi:?} not inside dims {dims:?}"
                    )))
                }
            }
        }
    }
}

fn tube_axes(axis: usize) -> [usize; 2] {
    match axis {
        0 => [1, 2],
        1 => [0, 2],
        _ => [0, 1],
    }
}

pub fn make_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let dims = spec.dims;
    let mut rng = StreamRng::new(spec.seed);
    let amp = spec.noise_amplitude as f64;
    let noise = |rng: &mut StreamRng| {
        if amp > 0.0 {
            rng.uniform(-amp, amp) as f32
        } else {
            0.0
        }
    };
    let mut vol = Vec::with_capacity(dims.iter().product());
    let mut lab = Vec::with_capacity(vol.capacity());
    for a in 0..dims[0] {
        for b in 0..dims[1] {
            for c in 0..dims[2] {
                let p = [a as f64, b as f64, c as f64];
                let (value, inside) = match &spec.kind {
                    PhantomKind::Constant { value } => (*value, false),
                    PhantomKind::SphereShell { center, radius, shell } => {
                        let d2: f64 = (0..3).map(|k| (p[k] - center[k]).powi(2)).sum();
                        let inner = (radius - shell).max(0.0);
                        if d2 > radius * radius {
                            (AIR_HU + noise(&mut rng), false)
                        } else if d2 > inner * inner {
                            (SHELL_HU + noise(&mut rng), true)
                        } else {
                            (CORE_HU + noise(&mut rng), true)
                        }
                    }
                    PhantomKind::Tube { center, radius, axis } => {
                        let o = tube_axes(*axis);
                        let d2 = (p[o[0]] - center[0]).powi(2) + (p[o[1]] - center[1]).powi(2);
                        let inside = d2 <= radius * radius;
                        let base = if inside { CANAL_HU } else { BONE_HU };
                        (base + noise(&mut rng), inside)
                    }
                    PhantomKind::TexturedBlock { lo, hi } => {
                        let idx = [a, b, c];
                        let inside = (0..3).all(|k| idx[k] >= lo[k] && idx[k] < hi[k]);
                        if inside {
                            (BLOCK_HU + noise(&mut rng), true)
                        } else {
                            (SOFT_HU, false)
                        }
                    }
                };
                vol.push(value);
                lab.push(if inside { 1.0 } else { 0.0 });
            }
        }
    }
    Ok(Phantom {
        volume: Volume3D::new(vol, dims, spec.spacing)?,
        label: Volume3D::new(lab, dims, spec.spacing)?,
    })
}
