use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;

use crate::hems::ForecastSeries;

const DAY_MINUTES: f64 = 1440.0;

/// Daily load and PV shapes sampled on a minute-of-day grid. Load is a
/// multiplier of each node's base demand; PV is a clear-sky fraction in
/// `[0, 1]`. Lookups wrap around midnight and interpolate linearly.
#[derive(Debug, Clone, PartialEq)]
pub struct Profiles {
    minutes: Vec<f64>,
    load: Vec<f64>,
    pv: Vec<f64>,
}

fn bump(h: f64, center: f64, width: f64) -> f64 {
    (-((h - center) / width).powi(2)).exp()
}

impl Profiles {
    /// Two-peak residential demand at base level around midday, and a
    /// half-sine PV day from 06:00 to 18:00.
    pub fn synthetic() -> Self {
        let minutes: Vec<f64> = (0..288).map(|k| 5.0 * k as f64).collect();
        let load = minutes
            .iter()
            .map(|m| {
                let h = m / 60.0;
                1.0 + 0.35 * bump(h, 7.5, 1.5) + 0.55 * bump(h, 19.0, 2.0) - 0.4 * bump(h, 3.0, 2.5)
            })
            .collect();
        let pv = minutes
            .iter()
            .map(|m| {
                let h = m / 60.0;
                if (6.0..=18.0).contains(&h) {
                    (std::f64::consts::PI * (h - 6.0) / 12.0).sin().max(0.0)
                } else {
                    0.0
                }
            })
            .collect();
        Profiles { minutes, load, pv }
    }

    /// The synthetic demand with no PV at any hour.
    pub fn without_pv() -> Self {
        let mut p = Self::synthetic();
        p.pv.iter_mut().for_each(|v| *v = 0.0);
        p
    }

    /// Reads `minute,load,pv` rows with a header. Minutes must increase and
    /// lie in `[0, 1440)`.
    pub fn from_csv(text: &str) -> Result<Self, String> {
        #[derive(Deserialize)]
        struct Row {
            minute: f64,
            load: f64,
            pv: f64,
        }
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut p = Profiles {
            minutes: Vec::new(),
            load: Vec::new(),
            pv: Vec::new(),
        };
        for (i, row) in reader.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| format!("profile row {}: {e}", i + 1))?;
            if !(0.0..DAY_MINUTES).contains(&row.minute)
                || p.minutes.last().is_some_and(|&m| row.minute <= m)
            {
                return Err(format!("profile row {}: minute {} out of order", i + 1, row.minute));
            }
            if !(row.load >= 0.0 && row.pv >= 0.0 && row.load.is_finite() && row.pv.is_finite()) {
                return Err(format!("profile row {}: negative or non-finite value", i + 1));
            }
            p.minutes.push(row.minute);
            p.load.push(row.load);
            p.pv.push(row.pv);
        }
        if p.minutes.is_empty() {
            return Err("profile has no rows".into());
        }
        Ok(p)
    }

    fn sample(&self, series: &[f64], minute: f64) -> f64 {
        let n = self.minutes.len();
        if n == 1 {
            return series[0];
        }
        let m = minute.rem_euclid(DAY_MINUTES);
        let k = self.minutes.partition_point(|&x| x <= m);
        let (i0, i1) = if k == 0 || k == n { (n - 1, 0) } else { (k - 1, k) };
        let m0 = self.minutes[i0];
        let m1 = self.minutes[i1] + if i1 < i0 { DAY_MINUTES } else { 0.0 };
        let mm = if m < m0 { m + DAY_MINUTES } else { m };
        let w = (mm - m0) / (m1 - m0);
        series[i0] * (1.0 - w) + series[i1] * w
    }

    pub fn load_at(&self, minute: f64) -> f64 {
        self.sample(&self.load, minute)
    }

    pub fn pv_at(&self, minute: f64) -> f64 {
        self.sample(&self.pv, minute)
    }
}

/// Multiplies every entry by `1 + e` with `e ~ N(0, sigma^2)` drawn from
/// `rng`, clamping at zero.
pub fn perturb<R: Rng>(base: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    if sigma <= 0.0 {
        return base.to_vec();
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    base.iter()
        .map(|&b| (b * (1.0 + normal.sample(rng))).max(0.0))
        .collect()
}

/// Noisy forecast of both series of `base`.
pub fn generate_forecasts_with<R: Rng>(
    base: &ForecastSeries,
    sigma: f64,
    rng: &mut R,
) -> ForecastSeries {
    let p_load_kw = perturb(&base.p_load_kw, sigma, rng);
    let p_pv_kw = perturb(&base.p_pv_kw, sigma, rng);
    ForecastSeries {
        p_load_kw,
        p_pv_kw,
        dt_hours: base.dt_hours,
    }
}

pub fn generate_forecasts(base: &ForecastSeries, sigma: f64, seed: u64) -> ForecastSeries {
    generate_forecasts_with(base, sigma, &mut ChaCha8Rng::seed_from_u64(seed))
}
