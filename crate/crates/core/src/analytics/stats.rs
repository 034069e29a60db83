use crate::model::{Channel, SensorReading, CHANNELS};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("need at least {need} points, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("inputs differ in length ({0} vs {1})")]
    Length(usize, usize),
    #[error("input is constant")]
    Constant,
    #[error("pooled standard deviation is zero")]
    ZeroPooledSd,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Unbiased sample variance.
fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

fn need(v: &[f64], n: usize) -> Result<(), StatsError> {
    if v.len() < n {
        Err(StatsError::TooFew {
            need: n,
            got: v.len(),
        })
    } else {
        Ok(())
    }
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::Length(x.len(), y.len()));
    }
    need(x, 2)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::Constant);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchT {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

pub fn welch_t(a: &[f64], b: &[f64]) -> Result<WelchT, StatsError> {
    need(a, 2)?;
    need(b, 2)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (variance(a) / na, variance(b) / nb);
    let diff = mean(a) - mean(b);
    let se2 = sa + sb;
    if se2 == 0.0 {
        return Ok(if diff == 0.0 {
            WelchT {
                t: 0.0,
                df: na + nb - 2.0,
                p: 1.0,
            }
        } else {
            WelchT {
                t: diff.signum() * f64::INFINITY,
                df: na + nb - 2.0,
                p: 0.0,
            }
        });
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("df is positive");
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(WelchT { t, df, p })
}

/// `(mean a − mean b) / pooled sd`.
pub fn cohen_d(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    need(a, 2)?;
    need(b, 2)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = (((na - 1.0) * variance(a) + (nb - 1.0) * variance(b)) / (na + nb - 2.0)).sqrt();
    if pooled == 0.0 {
        if mean(a) == mean(b) {
            return Ok(0.0);
        }
        return Err(StatsError::ZeroPooledSd);
    }
    Ok((mean(a) - mean(b)) / pooled)
}

/// Leak-versus-normal comparison for one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelContrast {
    pub channel: Channel,
    pub leak_mean: f64,
    pub normal_mean: f64,
    pub welch: WelchT,
    pub cohen_d: f64,
    /// Point-biserial correlation with the leak indicator.
    pub r_leak: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exploration {
    pub leak_minutes: usize,
    pub normal_minutes: usize,
    pub r_pressure_humidity: f64,
    pub channels: Vec<ChannelContrast>,
}

impl Exploration {
    pub fn channel(&self, c: Channel) -> &ChannelContrast {
        &self.channels[c.index()]
    }
}

/// Correlations and leak/normal contrasts over the readings.
pub fn explore(readings: &[SensorReading], is_leaking: &[bool]) -> Result<Exploration, StatsError> {
    if readings.len() != is_leaking.len() {
        return Err(StatsError::Length(readings.len(), is_leaking.len()));
    }
    let column = |c: usize| -> Vec<f64> { readings.iter().map(|r| r.channels()[c]).collect() };
    let leak01: Vec<f64> = is_leaking.iter().map(|&l| f64::from(u8::from(l))).collect();
    let mut channels = Vec::with_capacity(CHANNELS);
    for ch in Channel::ALL {
        let col = column(ch.index());
        let (leak, normal): (Vec<(f64, bool)>, Vec<(f64, bool)>) =
            col.iter().copied().zip(is_leaking.iter().copied()).partition(|p| p.1);
        let leak: Vec<f64> = leak.into_iter().map(|p| p.0).collect();
        let normal: Vec<f64> = normal.into_iter().map(|p| p.0).collect();
        channels.push(ChannelContrast {
            channel: ch,
            leak_mean: mean(&leak),
            normal_mean: mean(&normal),
            welch: welch_t(&leak, &normal)?,
            cohen_d: cohen_d(&leak, &normal)?,
            r_leak: pearson(&col, &leak01)?,
        });
    }
    let leak_minutes = is_leaking.iter().filter(|&&l| l).count();
    Ok(Exploration {
        leak_minutes,
        normal_minutes: readings.len() - leak_minutes,
        r_pressure_humidity: pearson(
            &column(Channel::Pressure.index()),
            &column(Channel::Humidity.index()),
        )?,
        channels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn welch_fixture_one_to_five() {
        let w = welch_t(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_abs_diff_eq!(w.t, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w.df, 8.0, epsilon = 1e-12);
        // scipy.stats.ttest_ind(equal_var=False)
        assert_abs_diff_eq!(w.p, 0.34659350708733416, epsilon = 1e-6);
    }

    #[test]
    fn welch_fixture_unequal() {
        let a = [1.0, 2.5, 2.0, 4.0, 7.5, 3.0];
        let b = [5.0, 6.5, 9.0, 8.0];
        let w = welch_t(&a, &b).unwrap();
        assert_abs_diff_eq!(w.t, -2.972840417750845, epsilon = 1e-9);
        assert_abs_diff_eq!(w.df, 7.699442779193583, epsilon = 1e-9);
        assert_abs_diff_eq!(w.p, 0.018578493810547738, epsilon = 1e-6);
        assert_abs_diff_eq!(cohen_d(&a, &b).unwrap(), -1.8122241186444652, epsilon = 1e-12);
    }

    #[test]
    fn welch_identical_samples() {
        let a = [1.0, 2.0, 4.0];
        let w = welch_t(&a, &a).unwrap();
        assert_eq!((w.t, w.p), (0.0, 1.0));
        let c = [3.0, 3.0];
        assert_eq!(welch_t(&c, &c).unwrap().p, 1.0);
    }

    #[test]
    fn pearson_cases() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_abs_diff_eq!(pearson(&x, &x).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(pearson(&x, &neg).unwrap(), -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(pearson(&x, &[2.0, 1.0, 4.0, 3.0, 5.0]).unwrap(), 0.8, epsilon = 1e-12);
        assert_eq!(pearson(&x, &[1.0; 5]), Err(StatsError::Constant));
    }

    #[test]
    fn cohen_cases() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(cohen_d(&a, &a).unwrap(), 0.0);
        assert_eq!(cohen_d(&[1.0, 1.0], &[2.0, 2.0]), Err(StatsError::ZeroPooledSd));
        assert!(matches!(cohen_d(&[1.0], &a), Err(StatsError::TooFew { .. })));
    }

    proptest! {
        #[test]
        fn welch_is_antisymmetric(
            a in prop::collection::vec(-100.0f64..100.0, 2..30),
            b in prop::collection::vec(-100.0f64..100.0, 2..30),
        ) {
            let (ab, ba) = (welch_t(&a, &b).unwrap(), welch_t(&b, &a).unwrap());
            prop_assert!((ab.t + ba.t).abs() <= 1e-9 * ab.t.abs().max(1.0));
            prop_assert!((ab.p - ba.p).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab.p));
        }

        #[test]
        fn pearson_bounded(pts in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 3..40)) {
            let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            if let Ok(r) = pearson(&x, &y) {
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }
    }
}
