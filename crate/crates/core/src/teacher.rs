//! Mean-Teacher machinery: the EMA copy of the student and the input
//! perturbations that feed the two forward passes.

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::networks::ModelState;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// EMA decay after `step` updates: `min(1 - 1/(step + 1), alpha_max)`.
pub fn effective_alpha(step: u64, alpha_max: f64) -> f64 {
    (1.0 - 1.0 / (step as f64 + 1.0)).min(alpha_max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherState {
    pub params: ModelState,
    pub alpha_max: f64,
    pub step: u64,
    pub noise_sigma: f64,
}

impl TeacherState {
    /// Teacher starting as a copy of `student`.
    pub fn new(student: &ModelState, alpha_max: f64, noise_sigma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha_max) {
            return Err(Error::InvalidArgument(format!(
                "alpha_max must lie in [0, 1), got {alpha_max}"
            )));
        }
        if noise_sigma.is_nan() || noise_sigma < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "noise_sigma must be non-negative, got {noise_sigma}"
            )));
        }
        Ok(Self {
            params: student.clone(),
            alpha_max,
            step: 0,
            noise_sigma,
        })
    }

    /// `θ' <- α θ' + (1 - α) θ` with `α = effective_alpha(step)`, then
    /// advances `step`.
    pub fn ema_update(&mut self, student: &ModelState) -> Result<()> {
        let alpha = effective_alpha(self.step, self.alpha_max);
        self.ema_update_with(student, alpha)?;
        self.step += 1;
        Ok(())
    }

    /// EMA step with an explicit decay; does not advance `step`.
    pub fn ema_update_with(&mut self, student: &ModelState, alpha: f64) -> Result<()> {
        if self.params.spec != student.spec {
            return Err(Error::Contract("teacher and student specs differ".into()));
        }
        for (t, s) in self.params.param_sets_mut().into_iter().zip(student.param_sets()) {
            if !t.same_layout(s) {
                return Err(Error::Contract("teacher and student shapes differ".into()));
            }
            for ((_, tv), (_, sv)) in t.iter_mut().zip(s.iter()) {
                for (a, &b) in tv.values_mut().iter_mut().zip(sv.values()) {
                    *a = alpha * *a + (1.0 - alpha) * b;
                }
            }
        }
        Ok(())
    }

    /// Class probabilities of the teacher on a perturbed copy of `x_batch`.
    pub fn predict(&self, x_batch: &Tensor, rng: &mut Rng) -> Result<Tensor> {
        let x = perturb(x_batch, self.noise_sigma, rng)?;
        self.params.predict(&x)
    }
}

/// `x` plus independent `N(0, sigma^2)` noise per entry. `sigma = 0`
/// returns `x` unchanged without drawing.
pub fn perturb(x: &Tensor, sigma: f64, rng: &mut Rng) -> Result<Tensor> {
    if sigma.is_nan() || sigma < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "sigma must be non-negative, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    let mut out = x.clone();
    out.values_mut()
        .iter_mut()
        .for_each(|v| *v += normal.sample(rng));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::ModelSpec;
    use crate::rng::{stream, Stream};

    fn tiny() -> ModelSpec {
        ModelSpec::new(2, vec![3], 2, vec![], vec![2], 2)
    }

    fn student(seed: u64) -> ModelState {
        ModelState::init(tiny(), &mut stream(seed, Stream::Init)).unwrap()
    }

    #[test]
    fn alpha_schedule() {
        assert_eq!(effective_alpha(0, 0.99), 0.0);
        assert!((effective_alpha(9, 0.99) - 0.9).abs() < 1e-15);
        assert_eq!(effective_alpha(1_000_000, 0.99), 0.99);
    }

    #[test]
    fn first_update_copies_student() {
        let s0 = student(1);
        let s1 = student(2);
        let mut t = TeacherState::new(&s0, 0.99, 0.0).unwrap();
        t.ema_update(&s1).unwrap();
        assert_eq!(t.params, s1);
        assert_eq!(t.step, 1);
    }

    #[test]
    fn alpha_one_is_fixed_point() {
        let s0 = student(1);
        let mut t = TeacherState::new(&s0, 0.99, 0.0).unwrap();
        t.ema_update_with(&student(5), 1.0).unwrap();
        assert_eq!(t.params, s0);
    }

    #[test]
    fn scalar_step() {
        let mut ones = ModelState::zeros(tiny()).unwrap();
        for set in ones.param_sets_mut() {
            for (_, t) in set.iter_mut() {
                t.values_mut().fill(1.0);
            }
        }
        let zeros = ModelState::zeros(tiny()).unwrap();
        let mut t = TeacherState::new(&ones, 0.99, 0.0).unwrap();
        t.ema_update_with(&zeros, 0.99).unwrap();
        for set in t.params.param_sets() {
            for (_, v) in set.iter() {
                assert!(v.values().iter().all(|&x| x == 0.99));
            }
        }
    }

    #[test]
    fn converges_toward_frozen_student() {
        let target = student(3);
        let mut t = TeacherState::new(&student(4), 0.9, 0.0).unwrap();
        t.step = 100;
        let dist = |t: &TeacherState| -> Vec<f64> {
            t.params
                .param_sets()
                .iter()
                .zip(target.param_sets())
                .flat_map(|(a, b)| {
                    a.iter()
                        .zip(b.iter())
                        .flat_map(|((_, x), (_, y))| {
                            x.values().iter().zip(y.values()).map(|(p, q)| (p - q).abs()).collect::<Vec<_>>()
                        })
                        .collect::<Vec<_>>()
                })
                .collect()
        };
        let mut prev = dist(&t);
        for _ in 0..20 {
            t.ema_update(&target).unwrap();
            let cur = dist(&t);
            assert!(cur.iter().zip(&prev).all(|(c, p)| c <= p));
            prev = cur;
        }
    }

    #[test]
    fn perturbation() {
        let x = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut rng = stream(1, Stream::NoiseStudent);
        assert_eq!(perturb(&x, 0.0, &mut rng).unwrap(), x);
        let a = perturb(&x, 0.1, &mut stream(5, Stream::NoiseStudent)).unwrap();
        let b = perturb(&x, 0.1, &mut stream(5, Stream::NoiseStudent)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, x);

        let big = Tensor::zeros(vec![1000, 100]);
        let noisy = perturb(&big, 0.1, &mut stream(6, Stream::NoiseStudent)).unwrap();
        let mean = noisy.values().iter().sum::<f64>() / noisy.len() as f64;
        assert!(mean.abs() < 0.002, "mean {mean}");
    }

    #[test]
    fn teacher_prediction_matches_equal_student() {
        let s = student(8);
        let t = TeacherState::new(&s, 0.99, 0.0).unwrap();
        let x = Tensor::matrix(3, 2, vec![0.1, 0.2, -0.5, 1.0, 2.0, 0.3]).unwrap();
        let tp = t.predict(&x, &mut stream(1, Stream::NoiseTeacher)).unwrap();
        assert_eq!(tp, s.predict(&x).unwrap());
        for r in 0..3 {
            assert!((tp.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let z = TeacherState::new(&ModelState::zeros(tiny()).unwrap(), 0.99, 0.1).unwrap();
        let zp = z.predict(&x, &mut stream(1, Stream::NoiseTeacher)).unwrap();
        assert!(zp.values().iter().all(|&v| v == 0.5));
    }
}
