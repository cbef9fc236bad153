//! Flow-matching objective, ODE sampling and classifier-free guidance.
//!
//! Path orientation: `t = 0` carries the noise sample `x0` and `t = 1` the
//! data sample `x1`, so the regression target is `x1 - x0` and sampling
//! integrates forward from noise. [`interpolate`] keeps the literal
//! `t * a + (1 - t) * b` form; the training path calls it as
//! `interpolate(x1, x0, t)`.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::condition::ConditionBundle;
use crate::error::{Error, Result};
use crate::features::AcousticFeatures;
use crate::latent::LatentClip;
use crate::rng::{self, Rng};

/// Anything that predicts a velocity for `(x_t, t, C, a)`.
pub trait VelocityField {
    fn velocity(
        &self,
        x: &LatentClip,
        t: f64,
        c: &ConditionBundle,
        a: &AcousticFeatures,
    ) -> Result<LatentClip>;

    /// Number of latent channels the field operates on.
    fn latent_channels(&self) -> usize;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceWeights {
    pub w1: f64,
    pub w2: f64,
}

impl Default for GuidanceWeights {
    fn default() -> Self {
        Self { w1: 7.5, w2: 3.75 }
    }
}

impl GuidanceWeights {
    pub fn validate(&self) -> Result<()> {
        if self.w1.is_finite() && self.w2.is_finite() && self.w1 >= 0.0 && self.w2 >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "guidance weights must be finite and >= 0, got ({}, {})",
                self.w1, self.w2
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
    Midpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_steps: usize,
    pub scheme: Scheme,
    /// Derived from the run's root seed, never read from a config file.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_steps: 50,
            scheme: Scheme::Midpoint,
            seed: 0,
        }
    }
}

fn check_shapes(a: &LatentClip, b: &LatentClip) -> Result<()> {
    if a.dim() == b.dim() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "latent shapes differ: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )))
    }
}

/// `t * x0 + (1 - t) * x1`.
pub fn interpolate(x0: &LatentClip, x1: &LatentClip, t: f64) -> Result<LatentClip> {
    check_shapes(x0, x1)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("t = {t} outside [0, 1]")));
    }
    Ok(LatentClip {
        values: &x0.values * t + &x1.values * (1.0 - t),
        frame_rate: x0.frame_rate,
    })
}

/// Conditional velocity `x1 - x0` of the straight path.
pub fn target_velocity(x0: &LatentClip, x1: &LatentClip) -> Result<LatentClip> {
    check_shapes(x0, x1)?;
    Ok(LatentClip {
        values: &x1.values - &x0.values,
        frame_rate: x0.frame_rate,
    })
}

/// One training example: data latent with its conditions.
#[derive(Debug, Clone)]
pub struct FlowExample {
    pub x1: LatentClip,
    pub c: ConditionBundle,
    pub a: AcousticFeatures,
}

/// Random draws for one example: noise and time.
#[derive(Debug, Clone)]
pub struct PathDraw {
    pub x0: LatentClip,
    pub t: f64,
}

impl PathDraw {
    /// Point on the path and its regression target.
    pub fn point_and_target(&self, x1: &LatentClip) -> Result<(LatentClip, LatentClip)> {
        Ok((interpolate(x1, &self.x0, self.t)?, target_velocity(&self.x0, x1)?))
    }
}

pub fn standard_normal(channels: usize, frames: usize, r: &mut Rng) -> LatentClip {
    LatentClip::new(ndarray::Array2::from_shape_simple_fn((channels, frames), || {
        StandardNormal.sample(r)
    }))
}

/// Per-example noise and uniform time, drawn in example order.
pub fn draw_paths(batch: &[FlowExample], r: &mut Rng) -> Vec<PathDraw> {
    batch
        .iter()
        .map(|ex| {
            let (c, f) = ex.x1.dim();
            let x0 = standard_normal(c, f, r);
            let t = r.gen_range(0.0..1.0);
            PathDraw { x0, t }
        })
        .collect()
}

/// Mean squared error between predicted and conditional velocity over a
/// batch with given path draws.
pub fn fm_loss_with<F: VelocityField + ?Sized>(
    model: &F,
    batch: &[FlowExample],
    draws: &[PathDraw],
) -> Result<f64> {
    if batch.is_empty() || batch.len() != draws.len() {
        return Err(Error::invalid("batch and path draws must be non-empty and aligned"));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (ex, d) in batch.iter().zip(draws) {
        let (xt, target) = d.point_and_target(&ex.x1)?;
        let pred = model.velocity(&xt, d.t, &ex.c, &ex.a)?;
        check_shapes(&pred, &target)?;
        total += (&pred.values - &target.values).mapv(|v| v * v).sum();
        count += target.values.len();
    }
    let loss = total / count as f64;
    if !loss.is_finite() {
        return Err(Error::TrainingDivergence { step: 0, loss });
    }
    Ok(loss)
}

/// Flow-matching loss with noise and times drawn from `r`.
pub fn fm_loss<F: VelocityField + ?Sized>(model: &F, batch: &[FlowExample], r: &mut Rng) -> Result<f64> {
    let draws = draw_paths(batch, r);
    fm_loss_with(model, batch, &draws)
}

/// Two-term guidance:
/// `u(∅,∅) + w1 (u(C,∅) - u(∅,∅)) + w2 (u(C,a) - u(C,∅))`.
pub fn guided_velocity<F: VelocityField + ?Sized>(
    model: &F,
    x: &LatentClip,
    t: f64,
    c: &ConditionBundle,
    a: &AcousticFeatures,
    g: GuidanceWeights,
) -> Result<LatentClip> {
    let null_c = c.null();
    let null_a = a.null_like();
    let uncond = model.velocity(x, t, &null_c, &null_a)?;
    let cond = model.velocity(x, t, c, &null_a)?;
    let full = model.velocity(x, t, c, a)?;
    let values = &uncond.values
        + &((&cond.values - &uncond.values) * g.w1)
        + &((&full.values - &cond.values) * g.w2);
    Ok(LatentClip {
        values,
        frame_rate: x.frame_rate,
    })
}

/// Classic single-condition guidance `u(∅) + w (u(C) - u(∅))`, with the
/// acoustic features held at the null condition.
pub fn guided_velocity_single<F: VelocityField + ?Sized>(
    model: &F,
    x: &LatentClip,
    t: f64,
    c: &ConditionBundle,
    null_a: &AcousticFeatures,
    w: f64,
) -> Result<LatentClip> {
    let uncond = model.velocity(x, t, &c.null(), null_a)?;
    let cond = model.velocity(x, t, c, null_a)?;
    Ok(LatentClip {
        values: &uncond.values + &((&cond.values - &uncond.values) * w),
        frame_rate: x.frame_rate,
    })
}

/// Integrate `dx/dt = v(x, t)` from `t = 0` to `t = 1`.
pub fn integrate(
    x_init: LatentClip,
    n_steps: usize,
    scheme: Scheme,
    mut v: impl FnMut(&LatentClip, f64) -> Result<LatentClip>,
) -> Result<LatentClip> {
    if n_steps == 0 {
        return Err(Error::InvalidConfig("n_steps must be >= 1".into()));
    }
    let h = 1.0 / n_steps as f64;
    let mut x = x_init;
    for k in 0..n_steps {
        let t = k as f64 * h;
        let step = match scheme {
            Scheme::Euler => v(&x, t)?,
            Scheme::Midpoint => {
                let k1 = v(&x, t)?;
                let mid = LatentClip {
                    values: &x.values + &(&k1.values * (0.5 * h)),
                    frame_rate: x.frame_rate,
                };
                v(&mid, t + 0.5 * h)?
            }
        };
        x.values.scaled_add(h, &step.values);
        if !x.is_finite() {
            return Err(Error::SamplingDivergence { t: t + h });
        }
    }
    Ok(x)
}

/// Guided sampling from seeded standard-normal noise.
pub fn sample<F: VelocityField + ?Sized>(
    model: &F,
    cfg: &SamplerConfig,
    c: &ConditionBundle,
    a: &AcousticFeatures,
    g: GuidanceWeights,
) -> Result<LatentClip> {
    let mut r = rng::stream(cfg.seed, "sampling");
    let x0 = standard_normal(model.latent_channels(), c.latent_frames(), &mut r);
    integrate(x0, cfg.n_steps, cfg.scheme, |x, t| {
        guided_velocity(model, x, t, c, a, g)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{scene_for_class, synth_scene};
    use ndarray::Array2;

    fn bundle(frames: usize) -> ConditionBundle {
        let (_, control, prompt) = synth_scene(&scene_for_class(0, 1)).unwrap();
        ConditionBundle::new(prompt, control, frames)
    }

    /// Returns a fixed tensor per (condition null?, features null?) pair.
    struct Stub {
        outs: [LatentClip; 4],
    }

    impl Stub {
        fn new(dim: (usize, usize), seed: u64) -> Self {
            let mut r = rng::from_seed(seed);
            Self {
                outs: std::array::from_fn(|_| standard_normal(dim.0, dim.1, &mut r)),
            }
        }
    }

    impl VelocityField for Stub {
        fn velocity(&self, _x: &LatentClip, _t: f64, c: &ConditionBundle, a: &AcousticFeatures) -> Result<LatentClip> {
            let i = (c.is_null() as usize) * 2 + a.is_null() as usize;
            Ok(self.outs[i].clone())
        }
        fn latent_channels(&self) -> usize {
            self.outs[0].dim().0
        }
    }

    struct Constant(LatentClip);

    impl VelocityField for Constant {
        fn velocity(&self, _x: &LatentClip, _t: f64, _c: &ConditionBundle, _a: &AcousticFeatures) -> Result<LatentClip> {
            Ok(self.0.clone())
        }
        fn latent_channels(&self) -> usize {
            self.0.dim().0
        }
    }

    fn lc(v: Array2<f64>) -> LatentClip {
        LatentClip::new(v)
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let x0 = lc(Array2::zeros((2, 3)));
        let x1 = lc(Array2::from_elem((2, 3), 2.0));
        assert_eq!(interpolate(&x0, &x1, 0.0).unwrap(), x1);
        assert_eq!(interpolate(&x0, &x1, 1.0).unwrap(), x0);
        assert_eq!(interpolate(&x0, &x1, 0.5).unwrap().values, Array2::<f64>::ones((2, 3)));
        assert!(interpolate(&x0, &lc(Array2::zeros((3, 3))), 0.5).is_err());
        assert!(interpolate(&x0, &x1, 1.5).is_err());
    }

    #[test]
    fn target_velocity_basics() {
        let v = lc(Array2::from_shape_fn((2, 2), |(i, j)| (i + 2 * j) as f64));
        let zero = lc(Array2::<f64>::zeros((2, 2)));
        assert_eq!(target_velocity(&v, &v).unwrap().values, Array2::<f64>::zeros((2, 2)));
        assert_eq!(target_velocity(&zero, &v).unwrap(), v);
    }

    #[test]
    fn path_derivative_matches_finite_difference() {
        let mut r = rng::from_seed(4);
        let x0 = standard_normal(3, 5, &mut r);
        let x1 = standard_normal(3, 5, &mut r);
        let (t, dt) = (0.3, 1e-3);
        let a = interpolate(&x0, &x1, t).unwrap();
        let b = interpolate(&x0, &x1, t + dt).unwrap();
        let fd = (&b.values - &a.values) / dt;
        let v = target_velocity(&x0, &x1).unwrap();
        // d/dt [t x0 + (1-t) x1] = x0 - x1 = -(x1 - x0)
        for (f, v) in fd.iter().zip(v.values.iter()) {
            assert!((f + v).abs() < 1e-9);
        }
        let stepped = &a.values - &(&v.values * dt);
        for (s, e) in stepped.iter().zip(b.values.iter()) {
            assert!((s - e).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_velocity_gives_zero_loss() {
        struct Exact(LatentClip, LatentClip);
        impl VelocityField for Exact {
            fn velocity(&self, _x: &LatentClip, _t: f64, _c: &ConditionBundle, _a: &AcousticFeatures) -> Result<LatentClip> {
                target_velocity(&self.0, &self.1)
            }
            fn latent_channels(&self) -> usize {
                self.0.dim().0
            }
        }
        let mut r = rng::from_seed(1);
        let x1 = standard_normal(4, 6, &mut r);
        let batch = vec![FlowExample {
            x1: x1.clone(),
            c: bundle(6),
            a: AcousticFeatures::null(1, 12),
        }];
        let draws = draw_paths(&batch, &mut rng::from_seed(2));
        let model = Exact(draws[0].x0.clone(), x1.clone());
        assert_eq!(fm_loss_with(&model, &batch, &draws).unwrap(), 0.0);

        let zero = Constant(LatentClip::zeros(4, 6));
        let want = (&draws[0].x0.values - &x1.values).mapv(|v| v * v).mean().unwrap();
        let got = fm_loss_with(&zero, &batch, &draws).unwrap();
        assert!((got - want).abs() < 1e-12);
        // Same seed, same loss.
        assert_eq!(
            fm_loss(&zero, &batch, &mut rng::from_seed(2)).unwrap(),
            got
        );
    }

    #[test]
    fn guidance_identities() {
        let dim = (3, 8);
        let c = bundle(8);
        let a = AcousticFeatures {
            channels: Array2::ones((6, 16)),
            l_max: 1,
        };
        let x = LatentClip::zeros(dim.0, dim.1);
        for seed in 0..20 {
            let m = Stub::new(dim, seed);
            let full = m.velocity(&x, 0.0, &c, &a).unwrap();
            let g = guided_velocity(&m, &x, 0.1, &c, &a, GuidanceWeights { w1: 1.0, w2: 1.0 }).unwrap();
            assert!((&g.values - &full.values).iter().all(|d| d.abs() <= 1e-12));
            let un = m.velocity(&x, 0.0, &c.null(), &a.null_like()).unwrap();
            let g0 = guided_velocity(&m, &x, 0.1, &c, &a, GuidanceWeights { w1: 0.0, w2: 0.0 }).unwrap();
            assert_eq!(g0.values, un.values);
            let na = a.null_like();
            let single = guided_velocity_single(&m, &x, 0.1, &c, &na, 7.5).unwrap();
            for w2 in [0.0, 3.75, 11.0] {
                let multi = guided_velocity(&m, &x, 0.1, &c, &na, GuidanceWeights { w1: 7.5, w2 }).unwrap();
                assert!((&multi.values - &single.values).iter().all(|d| d.abs() <= 1e-12));
            }
            let s1 = guided_velocity_single(&m, &x, 0.1, &c, &na, 1.0).unwrap();
            let cond = m.velocity(&x, 0.0, &c, &na).unwrap();
            assert!((&s1.values - &cond.values).iter().all(|d| d.abs() <= 1e-12));
        }
    }

    #[test]
    fn constant_field_is_integrated_exactly() {
        let mut r = rng::from_seed(3);
        let v = standard_normal(2, 4, &mut r);
        let x0 = standard_normal(2, 4, &mut r);
        let one = integrate(x0.clone(), 1, Scheme::Euler, |_, _| Ok(v.clone())).unwrap();
        assert_eq!(one.values, &x0.values + &v.values);
        for scheme in [Scheme::Euler, Scheme::Midpoint] {
            let many = integrate(x0.clone(), 100, scheme, |_, _| Ok(v.clone())).unwrap();
            assert!((&many.values - &one.values).iter().all(|d| d.abs() <= 1e-9));
        }
    }

    #[test]
    fn endpoint_exactness_for_true_velocity() {
        let mut r = rng::from_seed(5);
        let x0 = standard_normal(3, 7, &mut r);
        let x1 = standard_normal(3, 7, &mut r);
        let v = target_velocity(&x0, &x1).unwrap();
        for steps in [1, 3, 17, 50] {
            for scheme in [Scheme::Euler, Scheme::Midpoint] {
                let end = integrate(x0.clone(), steps, scheme, |_, _| Ok(v.clone())).unwrap();
                let err = (&end.values - &x1.values).iter().fold(0.0f64, |m, d| m.max(d.abs()));
                assert!(err <= 1e-9);
            }
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let c = bundle(8);
        let a = AcousticFeatures::null(1, 16);
        let m = Stub::new((3, 8), 9);
        let cfg = SamplerConfig {
            n_steps: 4,
            scheme: Scheme::Midpoint,
            seed: 11,
        };
        let g = GuidanceWeights::default();
        let s1 = sample(&m, &cfg, &c, &a, g).unwrap();
        let s2 = sample(&m, &cfg, &c, &a, g).unwrap();
        assert_eq!(s1, s2);
        let other = sample(&m, &SamplerConfig { seed: 12, ..cfg }, &c, &a, g).unwrap();
        assert_ne!(s1, other);
        assert!(integrate(s1, 0, Scheme::Euler, |x, _| Ok(x.clone())).is_err());
    }

    #[test]
    fn divergence_detected() {
        let x0 = LatentClip::zeros(1, 1);
        let res = integrate(x0, 2, Scheme::Euler, |_, _| Ok(lc(Array2::from_elem((1, 1), f64::INFINITY))));
        assert!(matches!(res, Err(Error::SamplingDivergence { .. })));
    }
}
