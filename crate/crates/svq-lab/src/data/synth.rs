//! Synthetic spatio-temporal sequences for forecaster experiments.
//!
//! Two generators: a scalar field advected by a smooth divergence-free
//! velocity field with explicit diffusion, and Gaussian blobs drifting with
//! reflective bounces. Both keep every pixel inside [0, 1] by construction
//! and are bit-reproducible from the spec alone.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::util::fnv1a64;

/// Largest explicit diffusion coefficient that keeps the five-point update a
/// convex combination (and therefore stable) on a unit grid.
pub const MAX_DIFFUSION: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    AdvectionDiffusion,
    MovingBlobs,
}

impl SyntheticKind {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "advection-diffusion" => Self::AdvectionDiffusion,
            "moving-blobs" => Self::MovingBlobs,
            other => {
                return Err(Error::config(format!(
                    "unknown dataset kind '{other}' (expected advection-diffusion or moving-blobs)"
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::AdvectionDiffusion => "advection-diffusion",
            Self::MovingBlobs => "moving-blobs",
        }
    }
}

/// Full recipe for a synthetic dataset; equal specs generate bit-identical
/// data.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub height: usize,
    pub width: usize,
    /// Frames per half-sequence: each sample holds `t_in` input frames and
    /// `t_in` target frames.
    pub t_in: usize,
    pub samples: usize,
    /// Peak advection / blob speed in cells per frame.
    pub velocity_scale: f64,
    /// Explicit diffusion coefficient, at most [`MAX_DIFFUSION`].
    pub diffusion: f64,
    pub blob_count: usize,
    /// Blob radius in cells.
    pub blob_sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(kind: SyntheticKind) -> Self {
        Self {
            kind,
            height: 16,
            width: 16,
            t_in: 4,
            samples: 64,
            velocity_scale: 1.5,
            diffusion: 0.05,
            blob_count: 3,
            blob_sigma: 2.0,
            seed: 7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 2 || self.width < 2 {
            return Err(Error::param("grid must be at least 2x2"));
        }
        if self.t_in == 0 {
            return Err(Error::param("need at least one frame per half-sequence"));
        }
        if self.samples == 0 {
            return Err(Error::param("need at least one sample"));
        }
        if !self.velocity_scale.is_finite() || self.velocity_scale < 0.0 {
            return Err(Error::param("velocity scale must be finite and non-negative"));
        }
        if !self.diffusion.is_finite() || self.diffusion < 0.0 {
            return Err(Error::param("diffusion coefficient must be finite and non-negative"));
        }
        if self.diffusion > MAX_DIFFUSION {
            return Err(Error::param(format!(
                "explicit diffusion step is unstable: coefficient {} exceeds the stability bound {MAX_DIFFUSION}",
                self.diffusion
            )));
        }
        if self.kind == SyntheticKind::MovingBlobs {
            if self.blob_count == 0 {
                return Err(Error::param("need at least one blob"));
            }
            if !(self.blob_sigma > 0.0) || !self.blob_sigma.is_finite() {
                return Err(Error::param("blob radius must be positive and finite"));
            }
        }
        Ok(())
    }

    /// Canonical one-line description; equal specs produce equal strings.
    pub fn canonical_string(&self) -> String {
        format!(
            "kind={} h={} w={} t={} samples={} vel={} diff={} blobs={} sigma={} seed={}",
            self.kind.name(),
            self.height,
            self.width,
            self.t_in,
            self.samples,
            self.velocity_scale,
            self.diffusion,
            self.blob_count,
            self.blob_sigma,
            self.seed
        )
    }

    pub fn spec_hash(&self) -> u64 {
        fnv1a64(self.canonical_string().as_bytes())
    }
}

/// Input/target frame pairs, both shaped `[samples, t_in, height, width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub targets: Tensor,
}

impl Dataset {
    pub fn new(inputs: Tensor, targets: Tensor) -> Result<Self> {
        if inputs.shape().len() != 4 || targets.shape().len() != 4 {
            return Err(Error::shape("datasets hold [samples, frames, height, width] tensors"));
        }
        if inputs.shape() != targets.shape() {
            return Err(Error::shape(format!(
                "input shape {:?} does not match target shape {:?}",
                inputs.shape(),
                targets.shape()
            )));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn t_in(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.inputs.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.inputs.shape()[3]
    }

    /// Frame count times pixel count of one sample's input half.
    pub fn sample_volume(&self) -> usize {
        self.t_in() * self.height() * self.width()
    }

    /// Borrows one sample's flattened input frames.
    pub fn input_sample(&self, i: usize) -> &[f64] {
        let v = self.sample_volume();
        &self.inputs.data()[i * v..(i + 1) * v]
    }

    /// Borrows one sample's flattened target frames.
    pub fn target_sample(&self, i: usize) -> &[f64] {
        let v = self.sample_volume();
        &self.targets.data()[i * v..(i + 1) * v]
    }

    /// Dataset restricted to samples `[from, to)`.
    pub fn slice(&self, from: usize, to: usize) -> Result<Dataset> {
        if from > to || to > self.len() {
            return Err(Error::usage(format!(
                "slice {from}..{to} out of range for {} samples",
                self.len()
            )));
        }
        let v = self.sample_volume();
        let shape = [to - from, self.t_in(), self.height(), self.width()];
        let inputs = Tensor::new(&shape, self.inputs.data()[from * v..to * v].to_vec())?;
        let targets = Tensor::new(&shape, self.targets.data()[from * v..to * v].to_vec())?;
        Dataset::new(inputs, targets)
    }
}

/// Generates the dataset described by `spec`.
pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let (h, w, t) = (spec.height, spec.width, spec.t_in);
    let frame = h * w;
    let half = t * frame;
    let mut inputs = vec![0.0; spec.samples * half];
    let mut targets = vec![0.0; spec.samples * half];
    for s in 0..spec.samples {
        let mut rng = Rng::derive(spec.seed, s as u64);
        let frames = match spec.kind {
            SyntheticKind::AdvectionDiffusion => advect_sample(spec, &mut rng),
            SyntheticKind::MovingBlobs => blob_sample(spec, &mut rng),
        };
        debug_assert_eq!(frames.len(), 2 * half);
        inputs[s * half..(s + 1) * half].copy_from_slice(&frames[..half]);
        targets[s * half..(s + 1) * half].copy_from_slice(&frames[half..]);
    }
    let shape = [spec.samples, t, h, w];
    Dataset::new(Tensor::new(&shape, inputs)?, Tensor::new(&shape, targets)?)
}

/// Smooth random initial field in [0, 1]: a handful of Fourier modes,
/// min-max normalized.
fn initial_field(h: usize, w: usize, rng: &mut Rng) -> Vec<f64> {
    let mut field = vec![0.0; h * w];
    let modes = 4;
    let params: Vec<(f64, f64, f64, f64)> = (0..modes)
        .map(|_| {
            (
                rng.uniform(0.5, 1.0),                 // amplitude
                1.0 + rng.next_below(2) as f64,        // x frequency
                1.0 + rng.next_below(2) as f64,        // y frequency
                rng.uniform(0.0, std::f64::consts::TAU), // phase
            )
        })
        .collect();
    for y in 0..h {
        for x in 0..w {
            let mut v = 0.0;
            for &(a, fx, fy, phase) in &params {
                v += a
                    * (std::f64::consts::TAU * (fx * x as f64 / w as f64 + fy * y as f64 / h as f64)
                        + phase)
                        .sin();
            }
            field[y * w + x] = v;
        }
    }
    let lo = field.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = field.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        for v in &mut field {
            *v = (*v - lo) / (hi - lo);
        }
    } else {
        field.fill(0.5);
    }
    field
}

/// Mirrors a continuous coordinate into [0, n-1].
fn reflect_coord(mut p: f64, n: usize) -> f64 {
    let hi = (n - 1) as f64;
    if hi == 0.0 {
        return 0.0;
    }
    let period = 2.0 * hi;
    p = p.rem_euclid(period);
    if p > hi {
        p = period - p;
    }
    p
}

/// Bilinear sample with reflective boundary.
fn sample_bilinear(field: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let x = reflect_coord(x, w);
    let y = reflect_coord(y, h);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let v00 = field[y0 * w + x0];
    let v01 = field[y0 * w + x1];
    let v10 = field[y1 * w + x0];
    let v11 = field[y1 * w + x1];
    let top = v00 + fx * (v01 - v00);
    let bottom = v10 + fx * (v11 - v10);
    top + fy * (bottom - top)
}

/// One semi-Lagrangian advection step followed by explicit diffusion with
/// mirrored (zero-flux) boundaries. Both stages are convex combinations, so
/// values never leave the initial range.
fn advect_diffuse_step(
    field: &[f64],
    h: usize,
    w: usize,
    vel_x: &[f64],
    vel_y: &[f64],
    diffusion: f64,
) -> Vec<f64> {
    let mut advected = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if vel_x[i] == 0.0 && vel_y[i] == 0.0 {
                advected[i] = field[i];
            } else {
                advected[i] = sample_bilinear(field, h, w, x as f64 - vel_x[i], y as f64 - vel_y[i]);
            }
        }
    }
    if diffusion == 0.0 {
        return advected;
    }
    let at = |y: isize, x: isize| -> f64 {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        advected[y * w + x]
    };
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (yi, xi) = (y as isize, x as isize);
            let c = advected[y * w + x];
            let lap = at(yi - 1, xi) + at(yi + 1, xi) + at(yi, xi - 1) + at(yi, xi + 1) - 4.0 * c;
            out[y * w + x] = c + diffusion * lap;
        }
    }
    out
}

fn advect_sample(spec: &SyntheticSpec, rng: &mut Rng) -> Vec<f64> {
    let (h, w) = (spec.height, spec.width);
    let mut field = initial_field(h, w, rng);
    // divergence-free shear field: vx depends only on y, vy only on x
    let phase_x = rng.uniform(0.0, std::f64::consts::TAU);
    let phase_y = rng.uniform(0.0, std::f64::consts::TAU);
    let s = spec.velocity_scale;
    let mut vel_x = vec![0.0; h * w];
    let mut vel_y = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            vel_x[i] = s * (std::f64::consts::TAU * y as f64 / h as f64 + phase_x).sin();
            vel_y[i] = s * (std::f64::consts::TAU * x as f64 / w as f64 + phase_y).sin();
        }
    }
    let mut frames = Vec::with_capacity(2 * spec.t_in * h * w);
    frames.extend_from_slice(&field);
    for _ in 1..2 * spec.t_in {
        field = advect_diffuse_step(&field, h, w, &vel_x, &vel_y, spec.diffusion);
        frames.extend_from_slice(&field);
    }
    frames
}

fn blob_sample(spec: &SyntheticSpec, rng: &mut Rng) -> Vec<f64> {
    let (h, w) = (spec.height, spec.width);
    let k = spec.blob_count;
    let mut px: Vec<f64> = (0..k).map(|_| rng.uniform(0.0, (w - 1) as f64)).collect();
    let mut py: Vec<f64> = (0..k).map(|_| rng.uniform(0.0, (h - 1) as f64)).collect();
    let mut vx: Vec<f64> = (0..k)
        .map(|_| spec.velocity_scale * rng.uniform(-1.0, 1.0))
        .collect();
    let mut vy: Vec<f64> = (0..k)
        .map(|_| spec.velocity_scale * rng.uniform(-1.0, 1.0))
        .collect();
    let inv_two_sigma2 = 1.0 / (2.0 * spec.blob_sigma * spec.blob_sigma);
    let mut frames = Vec::with_capacity(2 * spec.t_in * h * w);
    for _ in 0..2 * spec.t_in {
        for y in 0..h {
            for x in 0..w {
                let mut v: f64 = 0.0;
                for b in 0..k {
                    let dx = x as f64 - px[b];
                    let dy = y as f64 - py[b];
                    v = v.max((-(dx * dx + dy * dy) * inv_two_sigma2).exp());
                }
                frames.push(v);
            }
        }
        for b in 0..k {
            px[b] += vx[b];
            py[b] += vy[b];
            let (p, v) = bounce(px[b], vx[b], (w - 1) as f64);
            px[b] = p;
            vx[b] = v;
            let (p, v) = bounce(py[b], vy[b], (h - 1) as f64);
            py[b] = p;
            vy[b] = v;
        }
    }
    frames
}

/// Reflects a position back into [0, hi], flipping the velocity when a wall
/// was crossed.
fn bounce(mut p: f64, mut v: f64, hi: f64) -> (f64, f64) {
    // at most a few reflections per step for sane velocities
    for _ in 0..8 {
        if p < 0.0 {
            p = -p;
            v = -v;
        } else if p > hi {
            p = 2.0 * hi - p;
            v = -v;
        } else {
            break;
        }
    }
    (p.clamp(0.0, hi), v)
}
