use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::schedule::{SolverKind, TimeGrid};
use crate::score::ScoreField;

/// Trajectories whose state norm exceeds this are aborted.
pub const BLOWUP_NORM: f64 = 1e6;

/// Single-trajectory integrator with reusable buffers and an NFE counter.
///
/// All updates follow the backward ODE `dx/dt = −t·s(x, t)`.
pub(crate) struct Stepper<'a, F: ?Sized> {
    field: &'a F,
    d: Vec<f64>,
    d2: Vec<f64>,
    pred: Vec<f64>,
    noise: Vec<f64>,
    pub nfe: usize,
    pub steps: usize,
}

impl<'a, F: ScoreField + ?Sized> Stepper<'a, F> {
    pub fn new(field: &'a F) -> Self {
        let dim = field.dim();
        Self {
            field,
            d: vec![0.0; dim],
            d2: vec![0.0; dim],
            pred: vec![0.0; dim],
            noise: vec![0.0; dim],
            nfe: 0,
            steps: 0,
        }
    }

    /// `buf ← t·s(x, t)`.
    fn derivative(field: &F, nfe: &mut usize, x: &[f64], t: f64, buf: &mut [f64]) -> Result<()> {
        field.eval_into(x, t, buf)?;
        *nfe += 1;
        buf.iter_mut().for_each(|v| *v *= t);
        Ok(())
    }

    fn check(&mut self, x: &[f64], t_cur: f64, t_next: f64) -> Result<()> {
        let step = self.steps;
        self.steps += 1;
        let norm2: f64 = x.iter().map(|v| v * v).sum();
        if norm2.is_finite() && norm2 <= BLOWUP_NORM * BLOWUP_NORM {
            Ok(())
        } else {
            Err(Error::Blowup {
                count: 1,
                trajectory: 0,
                step,
                t_cur,
                t_next,
            })
        }
    }

    pub fn euler(&mut self, x: &mut [f64], t_cur: f64, t_next: f64) -> Result<()> {
        Self::derivative(self.field, &mut self.nfe, x, t_cur, &mut self.d)?;
        let h = t_next - t_cur;
        for (xi, di) in x.iter_mut().zip(&self.d) {
            *xi -= h * di;
        }
        self.check(x, t_cur, t_next)
    }

    pub fn heun(&mut self, x: &mut [f64], t_cur: f64, t_next: f64) -> Result<()> {
        Self::derivative(self.field, &mut self.nfe, x, t_cur, &mut self.d)?;
        let h = t_next - t_cur;
        for ((p, xi), di) in self.pred.iter_mut().zip(x.iter()).zip(&self.d) {
            *p = xi - h * di;
        }
        if t_next != 0.0 {
            Self::derivative(self.field, &mut self.nfe, &self.pred, t_next, &mut self.d2)?;
            for ((xi, di), d2i) in x.iter_mut().zip(&self.d).zip(&self.d2) {
                *xi -= h * (0.5 * di + 0.5 * d2i);
            }
        } else {
            x.copy_from_slice(&self.pred);
        }
        self.check(x, t_cur, t_next)
    }

    pub fn step(&mut self, solver: SolverKind, x: &mut [f64], t_cur: f64, t_next: f64) -> Result<()> {
        match solver {
            SolverKind::Euler => self.euler(x, t_cur, t_next),
            SolverKind::Heun => self.heun(x, t_cur, t_next),
        }
    }

    pub fn ode(&mut self, solver: SolverKind, x: &mut [f64], grid: &TimeGrid) -> Result<()> {
        for (t_cur, t_next) in grid.steps() {
            self.step(solver, x, t_cur, t_next)?;
        }
        Ok(())
    }

    /// Euler–Maruyama step of the SDE family
    /// `dx = −(1+m)·t·s dt + √(2mt) dW` (backward in time).
    pub fn sde<R: Rng + ?Sized>(
        &mut self,
        x: &mut [f64],
        t_cur: f64,
        t_next: f64,
        noise_mult: f64,
        rng: &mut R,
    ) -> Result<()> {
        Self::derivative(self.field, &mut self.nfe, x, t_cur, &mut self.d)?;
        rng::fill_normal(rng, &mut self.noise);
        let h = t_next - t_cur;
        let drift = 1.0 + noise_mult;
        let diffusion = (2.0 * noise_mult * t_cur * h.abs()).sqrt();
        for ((xi, di), ni) in x.iter_mut().zip(&self.d).zip(&self.noise) {
            *xi = *xi - h * (drift * di) + diffusion * ni;
        }
        self.check(x, t_cur, t_next)
    }

    /// Raise the noise level from `t_cur` to `t_cur·(1+γ)` by adding fresh
    /// noise, then take a Heun step to `t_next`.
    pub fn churn<R: Rng + ?Sized>(
        &mut self,
        x: &mut [f64],
        t_cur: f64,
        t_next: f64,
        gamma: f64,
        s_noise: f64,
        rng: &mut R,
    ) -> Result<()> {
        let t_hat = t_cur + gamma * t_cur;
        let std = (t_hat * t_hat - t_cur * t_cur).sqrt() * s_noise;
        rng::fill_normal(rng, &mut self.noise);
        for (xi, ni) in x.iter_mut().zip(&self.noise) {
            *xi += std * ni;
        }
        self.heun(x, t_hat, t_next)
    }
}

/// Restart forward process: `x ← x + s_noise·√(t_max² − t_min²)·ξ`.
///
/// Takes no score field; the forward kernel is known in closed form.
pub fn restart_forward<R: Rng + ?Sized>(x: &mut [f64], t_min: f64, t_max: f64, s_noise: f64, rng: &mut R) {
    let std = s_noise * (t_max * t_max - t_min * t_min).sqrt();
    for xi in x.iter_mut() {
        *xi += std * rng::normal(rng);
    }
}

fn single_step<F: ScoreField + ?Sized>(
    solver: SolverKind,
    f: &F,
    x: &[f64],
    t_cur: f64,
    t_next: f64,
) -> Result<(Vec<f64>, usize)> {
    if !(t_cur > 0.0) || !(t_next >= 0.0) {
        return Err(Error::domain(format!("step needs t_cur > 0 and t_next >= 0, got {t_cur} -> {t_next}")));
    }
    if x.len() != f.dim() {
        return Err(Error::config("point dimension does not match the score field"));
    }
    let mut stepper = Stepper::new(f);
    let mut out = x.to_vec();
    stepper.step(solver, &mut out, t_cur, t_next)?;
    Ok((out, stepper.nfe))
}

/// One Euler step of the backward ODE; returns the new point and the NFE (1).
pub fn euler_step<F: ScoreField + ?Sized>(f: &F, x: &[f64], t_cur: f64, t_next: f64) -> Result<(Vec<f64>, usize)> {
    single_step(SolverKind::Euler, f, x, t_cur, t_next)
}

/// One Heun step; 2 NFE, or 1 when `t_next = 0` (plain Euler).
pub fn heun_step<F: ScoreField + ?Sized>(f: &F, x: &[f64], t_cur: f64, t_next: f64) -> Result<(Vec<f64>, usize)> {
    single_step(SolverKind::Heun, f, x, t_cur, t_next)
}
