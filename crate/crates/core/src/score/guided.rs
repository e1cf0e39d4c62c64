use crate::error::{Error, Result};

use super::ScoreField;

/// Classifier-free guidance: `w·cond + (1 − w)·uncond`.
#[derive(Debug, Clone)]
pub struct GuidedScore<C, U> {
    cond: C,
    uncond: U,
    weight: f64,
}

impl<C: ScoreField, U: ScoreField> GuidedScore<C, U> {
    pub fn new(cond: C, uncond: U, weight: f64) -> Result<Self> {
        if cond.dim() != uncond.dim() {
            return Err(Error::config(format!(
                "guided score needs equal dimensions, got {} and {}",
                cond.dim(),
                uncond.dim()
            )));
        }
        if !weight.is_finite() {
            return Err(Error::config("guidance weight must be finite"));
        }
        Ok(Self { cond, uncond, weight })
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }
}

pub fn guided_score<C: ScoreField, U: ScoreField>(cond: C, uncond: U, w: f64) -> Result<GuidedScore<C, U>> {
    GuidedScore::new(cond, uncond, w)
}

impl<C: ScoreField, U: ScoreField> ScoreField for GuidedScore<C, U> {
    fn dim(&self) -> usize {
        self.cond.dim()
    }

    fn eval_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let mut uncond = vec![0.0; out.len()];
        self.cond.eval_into(x, t, out)?;
        self.uncond.eval_into(x, t, &mut uncond)?;
        let w = self.weight;
        for (o, u) in out.iter_mut().zip(&uncond) {
            *o = w * *o + (1.0 - w) * u;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::{GaussianMixture, ZeroScore};
    use approx::assert_relative_eq;

    fn fields() -> (GaussianMixture, GaussianMixture) {
        (
            GaussianMixture::single(vec![1.0, 2.0], 0.5).unwrap(),
            GaussianMixture::single(vec![-1.0, 0.0], 1.0).unwrap(),
        )
    }

    #[test]
    fn endpoints_select_one_field() {
        let (c, u) = fields();
        let x = [0.3, 0.4];
        let t = 0.9;
        let g1 = guided_score(&c, &u, 1.0).unwrap().eval(&x, t).unwrap();
        let g0 = guided_score(&c, &u, 0.0).unwrap().eval(&x, t).unwrap();
        assert_eq!(g1, c.eval(&x, t).unwrap());
        assert_eq!(g0, u.eval(&x, t).unwrap());
    }

    #[test]
    fn equal_fields_are_fixed_points() {
        let (c, _) = fields();
        for w in [-1.0, 0.3, 2.0, 7.5] {
            let g = guided_score(&c, &c, w).unwrap().eval(&[0.1, -0.2], 0.5).unwrap();
            let base = c.eval(&[0.1, -0.2], 0.5).unwrap();
            for (a, b) in g.iter().zip(&base) {
                assert_relative_eq!(a, b, max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn weight_two_extrapolates() {
        let (c, u) = fields();
        let x = [0.7, -0.1];
        let g = guided_score(&c, &u, 2.0).unwrap().eval(&x, 0.4).unwrap();
        let sc = c.eval(&x, 0.4).unwrap();
        let su = u.eval(&x, 0.4).unwrap();
        for i in 0..2 {
            assert_relative_eq!(g[i] - su[i], 2.0 * (sc[i] - su[i]), max_relative = 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let (c, _) = fields();
        assert!(guided_score(&c, ZeroScore(3), 1.5).is_err());
    }
}
