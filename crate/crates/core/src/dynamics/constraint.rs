use super::config::{ConstraintConfig, PathMode};
use crate::error::{Error, Result};

pub(crate) fn sq_norm(h: &[f64]) -> f64 {
    h.iter().map(|v| v * v).sum()
}

pub(crate) fn l2(h: &[f64]) -> f64 {
    sq_norm(h).sqrt()
}

/// Transition burden:
/// `w_disp·|h' − h|²/n + w_grow·max{0, |h'|² − |h|²}/n`.
pub fn burden(h: &[f64], h_next: &[f64], cfg: &ConstraintConfig) -> Result<f64> {
    if h.len() != h_next.len() {
        return Err(Error::DimensionMismatch {
            expected: h.len(),
            found: h_next.len(),
        });
    }
    if h.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: 1,
            found: 0,
        });
    }
    Ok(burden_unchecked(h, h_next, cfg))
}

pub(crate) fn burden_unchecked(h: &[f64], h_next: &[f64], cfg: &ConstraintConfig) -> f64 {
    let inv_n = 1.0 / h.len() as f64;
    let disp: f64 = h_next.iter().zip(h).map(|(a, b)| (a - b) * (a - b)).sum();
    let growth = (sq_norm(h_next) - sq_norm(h)).max(0.0);
    cfg.w_disp * inv_n * disp + cfg.w_grow * inv_n * growth
}

pub fn path_load_update(load_prev: f64, burden: f64, cfg: &ConstraintConfig) -> Result<f64> {
    if burden < 0.0 || burden.is_nan() {
        return Err(Error::NegativeBurden(burden));
    }
    Ok(match cfg.path_mode {
        PathMode::Uniform => load_prev + cfg.alpha * burden,
        PathMode::Discounted => cfg.lambda_path * load_prev + burden,
    })
}

/// Radius of the feasible ball after accumulating `load`:
/// `max{r_min, r0·exp(−kappa·load)}`.
pub fn feasible_radius(load: f64, cfg: &ConstraintConfig) -> f64 {
    (cfg.r0 * (-cfg.kappa * load).exp()).max(cfg.r_min)
}

/// `(max{0, |h| − r})²`
pub fn feasibility_penalty(h_next: &[f64], radius: f64) -> f64 {
    let excess = (l2(h_next) - radius).max(0.0);
    excess * excess
}

/// Radial projection onto the closed ball of the given radius.
pub fn project(h: &[f64], radius: f64) -> Vec<f64> {
    let norm = l2(h);
    if norm <= radius {
        h.to_vec()
    } else {
        let mut s = radius / norm;
        loop {
            let out: Vec<f64> = h.iter().map(|v| v * s).collect();
            // rounding can leave the scaled norm a few ulps above the radius
            if l2(&out) <= radius {
                return out;
            }
            s *= 1.0 - f64::EPSILON;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ConstraintConfig {
        ConstraintConfig::default()
    }

    #[test]
    fn burden_examples() {
        assert_eq!(burden(&[0.3, -0.2], &[0.3, -0.2], &cfg()).unwrap(), 0.0);
        assert!((burden(&[0.0, 0.0], &[1.0, 1.0], &cfg()).unwrap() - 1.5).abs() < 1e-15);
        assert!((burden(&[2.0, 0.0], &[1.0, 0.0], &cfg()).unwrap() - 0.5).abs() < 1e-15);
        assert!(burden(&[1.0], &[1.0, 2.0], &cfg()).is_err());
    }

    #[test]
    fn path_load_examples() {
        let c = cfg();
        assert!((path_load_update(0.0, 0.3, &c).unwrap() - 0.3).abs() < 1e-15);
        assert!((path_load_update(0.3, 0.2, &c).unwrap() - 0.5).abs() < 1e-15);
        let d = ConstraintConfig {
            path_mode: PathMode::Discounted,
            lambda_path: 0.9,
            ..cfg()
        };
        assert!((path_load_update(1.0, 0.5, &d).unwrap() - 1.4).abs() < 1e-15);
        assert!(matches!(path_load_update(0.0, -0.1, &c), Err(Error::NegativeBurden(_))));
    }

    #[test]
    fn radius_examples() {
        let c = cfg();
        assert_eq!(feasible_radius(0.0, &c), 3.0);
        assert!((feasible_radius(10.0, &c) - 3.0 * (-0.5f64).exp()).abs() < 1e-15);
        assert!((feasible_radius(10.0, &c) - 1.81959).abs() < 1e-5);
        assert_eq!(feasible_radius(200.0, &c), 0.5);
    }

    #[test]
    fn penalty_examples() {
        assert_eq!(feasibility_penalty(&[1.0, 0.0], 2.0), 0.0);
        assert_eq!(feasibility_penalty(&[0.0, 2.0], 2.0), 0.0);
        assert!((feasibility_penalty(&[3.0, 0.0], 2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project(&[0.5, 0.5], 1.0), vec![0.5, 0.5]);
        let p = project(&[3.0, 4.0], 2.5);
        assert!((p[0] - 1.5).abs() < 1e-15 && (p[1] - 2.0).abs() < 1e-15);
        assert_eq!(project(&[0.0, 0.0], 0.1), vec![0.0, 0.0]);
    }
}
