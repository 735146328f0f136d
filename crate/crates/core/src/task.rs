//! Two-joint arm regression task: joint angles (θ, φ) ∈ [0,1]² map to a
//! hand position (x, y) ∈ [0,1]².

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskSample {
    pub theta: f64,
    pub phi: f64,
    pub x: f64,
    pub y: f64,
}

impl TaskSample {
    pub fn input(&self) -> [f64; 2] {
        [self.theta, self.phi]
    }

    pub fn target(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

fn in_unit(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

pub fn make_sample(theta: f64, phi: f64) -> Result<TaskSample> {
    if !in_unit(theta) || !in_unit(phi) {
        return Err(Error::InvalidArgument(format!(
            "task input ({theta}, {phi}) outside [0,1]²"
        )));
    }
    let a = PI * phi;
    let b = PI * (phi + theta);
    Ok(TaskSample {
        theta,
        phi,
        x: (a.cos() + b.cos() + 2.0) / 4.0,
        y: (a.sin() + b.sin() + 2.0) / 4.0,
    })
}

/// `n` i.i.d. samples with (θ, φ) uniform on the unit square.
pub fn sample_uniform<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Result<Vec<TaskSample>> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    (0..n).map(|_| draw(rng)).collect()
}

pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Result<TaskSample> {
    let theta = rng.gen::<f64>();
    let phi = rng.gen::<f64>();
    make_sample(theta, phi)
}

/// k×k grid over the unit square including the corners, θ-major.
pub fn grid(k: usize) -> Result<Vec<TaskSample>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "grid size must be ≥ 2, got {k}"
        )));
    }
    let step = 1.0 / (k - 1) as f64;
    let mut out = Vec::with_capacity(k * k);
    for a in 0..k {
        for b in 0..k {
            out.push(make_sample(a as f64 * step, b as f64 * step)?);
        }
    }
    Ok(out)
}

/// Mean Euclidean distance between predicted and target positions.
pub fn euclid_error(predictions: &[[f64; 2]], targets: &[[f64; 2]]) -> Result<f64> {
    check_len("predictions", targets.len(), predictions.len())?;
    if targets.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let total: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p[0] - t[0]).hypot(p[1] - t[1]))
        .sum();
    Ok(total / targets.len() as f64)
}

pub fn write_csv<W: Write>(samples: &[TaskSample], mut out: W) -> std::io::Result<()> {
    writeln!(out, "theta,phi,x,y")?;
    for s in samples {
        writeln!(out, "{},{},{},{}", s.theta, s.phi, s.x, s.y)?;
    }
    Ok(())
}
