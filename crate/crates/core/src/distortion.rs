//! Distortion measures `ρ(x, y)` and their gradients in `y`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistortionKind {
    #[serde(rename = "sq_l2")]
    SquaredL2,
    #[serde(rename = "l1")]
    L1,
}

impl DistortionKind {
    pub fn name(self) -> &'static str {
        match self {
            DistortionKind::SquaredL2 => "sq_l2",
            DistortionKind::L1 => "l1",
        }
    }

    pub fn distortion(self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dim(x.len(), y.len())?;
        Ok(self.eval(x, y))
    }

    pub fn grad_y(self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        check_dim(x.len(), y.len())?;
        let mut out = vec![0.0; x.len()];
        self.add_grad_y(x, y, 1.0, &mut out);
        Ok(out)
    }

    /// Unchecked `ρ(x, y)` for hot loops.
    #[inline]
    pub(crate) fn eval(self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            DistortionKind::SquaredL2 => x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum(),
            DistortionKind::L1 => x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum(),
        }
    }

    /// `out += scale · ∇_y ρ(x, y)`. The L1 subgradient at a kink is 0.
    #[inline]
    pub(crate) fn add_grad_y(self, x: &[f64], y: &[f64], scale: f64, out: &mut [f64]) {
        match self {
            DistortionKind::SquaredL2 => {
                for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
                    *o += scale * 2.0 * (b - a);
                }
            }
            DistortionKind::L1 => {
                for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
                    let diff = b - a;
                    if diff > 0.0 {
                        *o += scale;
                    } else if diff < 0.0 {
                        *o -= scale;
                    }
                }
            }
        }
    }
}

impl std::fmt::Display for DistortionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::DistortionKind::*;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(SquaredL2.distortion(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 25.0);
        assert_eq!(L1.distortion(&[2.0], &[-1.0]).unwrap(), 3.0);
        assert_eq!(SquaredL2.grad_y(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), vec![-2.0, 0.0]);
        assert_eq!(L1.grad_y(&[0.0], &[0.0]).unwrap(), vec![0.0]);
        assert_eq!(L1.grad_y(&[0.0, 1.0], &[2.0, -1.0]).unwrap(), vec![1.0, -1.0]);
        assert!(SquaredL2.distortion(&[0.0], &[0.0, 1.0]).is_err());
        assert!(L1.grad_y(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn config_names() {
        let k: DistortionKind = serde_json::from_str("\"sq_l2\"").unwrap();
        assert_eq!(k, SquaredL2);
        let k: DistortionKind = serde_json::from_str("\"l1\"").unwrap();
        assert_eq!(k, L1);
    }

    fn vecs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..6).prop_flat_map(|d| {
            (
                proptest::collection::vec(-10.0f64..10.0, d),
                proptest::collection::vec(-10.0f64..10.0, d),
            )
        })
    }

    proptest! {
        #[test]
        fn metric_properties((x, y) in vecs()) {
            for kind in [SquaredL2, L1] {
                let d = kind.distortion(&x, &y).unwrap();
                prop_assert!(d >= 0.0);
                prop_assert_eq!(kind.distortion(&x, &x).unwrap(), 0.0);
                prop_assert_eq!(d, kind.distortion(&y, &x).unwrap());
                if x != y {
                    prop_assert!(d > 0.0);
                }
            }
        }

        #[test]
        fn sq_l2_gradient_matches_fd((x, y) in vecs()) {
            let g = SquaredL2.grad_y(&x, &y).unwrap();
            let h = 1e-5;
            for i in 0..y.len() {
                let mut up = y.clone();
                up[i] += h;
                let mut down = y.clone();
                down[i] -= h;
                let fd = (SquaredL2.distortion(&x, &up).unwrap() - SquaredL2.distortion(&x, &down).unwrap()) / (2.0 * h);
                prop_assert!((g[i] - fd).abs() <= 1e-6 * g[i].abs().max(1.0));
            }
        }
    }
}
