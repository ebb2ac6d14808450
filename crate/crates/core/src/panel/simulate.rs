use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{PricePanel, Transform, YearMonth};
use crate::msfactor::{ergodic_probs, TransitionMatrix};
use crate::{Error, Result};

/// How the regime path of a synthetic panel is generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RegimeSpec {
    /// Deterministic breaks; break `b` ends a regime after observation `b`
    /// (1-based), so regime `k` covers `(b_{k-1}, b_k]`.
    Breaks { breaks: Vec<usize> },
    /// Row-stochastic transition matrix; the chain starts from its ergodic
    /// distribution.
    Markov { transition: Vec<Vec<f64>> },
}

/// Data-generating process for a one-factor regime-switching panel
/// `x_{it} = lambda_{s_t,i} f_t + e_{it}` with Gaussian factor and noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    pub n: usize,
    pub t: usize,
    pub regimes: RegimeSpec,
    /// Factor variance per regime.
    pub factor_var: Vec<f64>,
    /// Explicit loadings per regime (each of length `n`). When absent, base
    /// loadings are drawn uniformly on `[0.5, 1.5]` and adjusted per regime by
    /// `loading_signs`.
    #[serde(default)]
    pub loadings: Option<Vec<Vec<f64>>>,
    /// Per-regime sign applied to the loadings of the second half of the
    /// series (columns `n/2..n`). Flipping the whole vector would leave the
    /// distribution of the panel unchanged.
    #[serde(default)]
    pub loading_signs: Option<Vec<f64>>,
    /// Standard deviation of the idiosyncratic noise.
    #[serde(default = "default_noise")]
    pub noise_scale: f64,
    #[serde(default = "default_start")]
    pub start: YearMonth,
}

fn default_noise() -> f64 {
    0.5
}

fn default_start() -> YearMonth {
    YearMonth::new(2000, 1).unwrap()
}

impl DgpSpec {
    /// One break at `break_at` with the given factor variances before and after.
    pub fn single_break(n: usize, t: usize, break_at: usize, var_before: f64, var_after: f64) -> Self {
        Self {
            n,
            t,
            regimes: RegimeSpec::Breaks { breaks: vec![break_at] },
            factor_var: vec![var_before, var_after],
            loadings: None,
            loading_signs: None,
            noise_scale: default_noise(),
            start: default_start(),
        }
    }

    /// No breaks: a single stationary regime with unit factor variance.
    pub fn no_break(n: usize, t: usize) -> Self {
        Self {
            n,
            t,
            regimes: RegimeSpec::Breaks { breaks: vec![] },
            factor_var: vec![1.0],
            loadings: None,
            loading_signs: None,
            noise_scale: default_noise(),
            start: default_start(),
        }
    }

    pub fn n_regimes(&self) -> usize {
        match &self.regimes {
            RegimeSpec::Breaks { breaks } => breaks.len() + 1,
            RegimeSpec::Markov { transition } => transition.len(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.t < 2 {
            return Err(Error::arg("DGP needs n >= 1 and t >= 2"));
        }
        let m = self.n_regimes();
        match &self.regimes {
            RegimeSpec::Breaks { breaks } => {
                let mut prev = 0;
                for &b in breaks {
                    if b < 1 || b >= self.t || b <= prev {
                        return Err(Error::arg(format!(
                            "break {b} must be increasing and inside [1, {})",
                            self.t
                        )));
                    }
                    prev = b;
                }
            }
            RegimeSpec::Markov { transition } => {
                TransitionMatrix::from_rows(transition)?;
            }
        }
        if self.factor_var.len() != m || self.factor_var.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::arg(format!(
                "factor_var needs {m} non-negative entries"
            )));
        }
        if let Some(l) = &self.loadings {
            if l.len() != m || l.iter().any(|row| row.len() != self.n) {
                return Err(Error::arg(format!("loadings must be {m} vectors of length {}", self.n)));
            }
        }
        if let Some(s) = &self.loading_signs {
            if s.len() != m {
                return Err(Error::arg(format!("loading_signs needs {m} entries")));
            }
        }
        if !(self.noise_scale >= 0.0) {
            return Err(Error::arg("noise_scale must be non-negative"));
        }
        Ok(())
    }
}

/// The latent quantities behind a simulated panel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub factors: Vec<f64>,
    pub regimes: Vec<usize>,
    /// 1-based last observation of each regime except the final one.
    pub break_indices: Vec<usize>,
    pub loadings: Vec<Vec<f64>>,
    /// Idiosyncratic noise, row-major `t x n`.
    pub noise: Vec<Vec<f64>>,
}

impl GroundTruth {
    /// Recomputes `x = lambda_{s_t} f_t + e_t` from the stored components.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let t = self.factors.len();
        let n = self.loadings[0].len();
        DMatrix::from_fn(t, n, |r, c| {
            self.loadings[self.regimes[r]][c] * self.factors[r] + self.noise[r][c]
        })
    }
}

/// Simulates a panel from `spec`; identical `seed` gives bit-identical output.
///
/// The returned panel is labelled [`Transform::YoY`]: it plays the role of an
/// inflation-rate panel and is meant to be standardized by the caller, like
/// real data.
pub fn simulate_panel(spec: &DgpSpec, seed: u64) -> Result<(PricePanel, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = spec.n_regimes();

    let loadings: Vec<Vec<f64>> = match &spec.loadings {
        Some(l) => l.clone(),
        None => {
            let base: Vec<f64> = (0..spec.n).map(|_| rng.random_range(0.5..1.5)).collect();
            let signs = spec.loading_signs.clone().unwrap_or_else(|| vec![1.0; m]);
            let half = spec.n / 2;
            signs
                .iter()
                .map(|s| base.iter().enumerate().map(|(c, b)| if c >= half { s * b } else { *b }).collect())
                .collect()
        }
    };

    let (regimes, break_indices) = match &spec.regimes {
        RegimeSpec::Breaks { breaks } => {
            let mut path = Vec::with_capacity(spec.t);
            let mut k = 0;
            for t in 1..=spec.t {
                path.push(k);
                if k < breaks.len() && t == breaks[k] {
                    k += 1;
                }
            }
            (path, breaks.clone())
        }
        RegimeSpec::Markov { transition } => {
            let p = TransitionMatrix::from_rows(transition)?;
            let pi = ergodic_probs(&p)?;
            let mut state = draw_categorical(&mut rng, &pi);
            let mut path = vec![state];
            for _ in 1..spec.t {
                state = draw_categorical(&mut rng, p.row(state));
                path.push(state);
            }
            let breaks = (1..spec.t).filter(|&t| path[t] != path[t - 1]).collect();
            (path, breaks)
        }
    };

    let factors: Vec<f64> = regimes
        .iter()
        .map(|&s| {
            let z: f64 = StandardNormal.sample(&mut rng);
            spec.factor_var[s].sqrt() * z
        })
        .collect();
    let noise: Vec<Vec<f64>> = (0..spec.t)
        .map(|_| {
            (0..spec.n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    spec.noise_scale * z
                })
                .collect()
        })
        .collect();

    let truth = GroundTruth {
        factors,
        regimes,
        break_indices,
        loadings,
        noise,
    };
    let values = truth.reconstruct();
    let ids = (0..spec.n).map(|i| format!("x{:03}", i + 1)).collect();
    let panel = PricePanel::new(YearMonth::range(spec.start, spec.t), ids, values, Transform::YoY)?;
    Ok((panel, truth))
}

fn draw_categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_runs_are_bit_identical() {
        let mut spec = DgpSpec::single_break(10, 120, 60, 1.0, 1.0);
        spec.loading_signs = Some(vec![1.0, -1.0]);
        let (a, ta) = simulate_panel(&spec, 7).unwrap();
        let (b, tb) = simulate_panel(&spec, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert_eq!(ta.regimes[59], 0);
        assert_eq!(ta.regimes[60], 1);
        assert_eq!(ta.loadings[0][3], ta.loadings[1][3]);
        assert_eq!(ta.loadings[0][7], -ta.loadings[1][7]);
        let (c, _) = simulate_panel(&spec, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn reconstruction_reproduces_panel_exactly() {
        let spec = DgpSpec {
            regimes: RegimeSpec::Markov {
                transition: vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            },
            factor_var: vec![1.0, 3.0],
            ..DgpSpec::no_break(6, 50)
        };
        let (p, truth) = simulate_panel(&spec, 3).unwrap();
        assert_eq!(&truth.reconstruct(), p.values());
    }

    #[test]
    fn noiseless_rank_one_rows_are_proportional_to_loadings() {
        let spec = DgpSpec {
            noise_scale: 0.0,
            ..DgpSpec::no_break(5, 30)
        };
        let (p, truth) = simulate_panel(&spec, 11).unwrap();
        for r in 0..30 {
            let ratio = p.values()[(r, 0)] / truth.loadings[0][0];
            for c in 0..5 {
                assert!((p.values()[(r, c)] - ratio * truth.loadings[0][c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn markov_occupancy_near_half() {
        let spec = DgpSpec {
            regimes: RegimeSpec::Markov {
                transition: vec![vec![0.95, 0.05], vec![0.05, 0.95]],
            },
            factor_var: vec![1.0, 1.0],
            ..DgpSpec::no_break(2, 2000)
        };
        let (_, truth) = simulate_panel(&spec, 5).unwrap();
        let share = truth.regimes.iter().filter(|&&s| s == 0).count() as f64 / 2000.0;
        assert!((share - 0.5).abs() < 0.10, "occupancy {share}");
    }

    #[test]
    fn inconsistent_specs_rejected() {
        assert!(simulate_panel(&DgpSpec::single_break(4, 50, 50, 1.0, 2.0), 1).is_err());
        assert!(simulate_panel(&DgpSpec::single_break(4, 50, 0, 1.0, 2.0), 1).is_err());
        let bad = DgpSpec {
            regimes: RegimeSpec::Markov {
                transition: vec![vec![0.9, 0.2], vec![0.5, 0.5]],
            },
            factor_var: vec![1.0, 1.0],
            ..DgpSpec::no_break(3, 20)
        };
        assert!(simulate_panel(&bad, 1).is_err());
    }

    #[test]
    fn spec_round_trips_through_json() {
        let json = r#"{"n": 4, "t": 40, "regimes": {"breaks": {"breaks": [20]}}, "factor_var": [1.0, 2.0]}"#;
        let spec: DgpSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.n_regimes(), 2);
        let bad = r#"{"n": 4, "t": 40, "regimes": {"breaks": {"breaks": []}}, "factor_var": [1.0], "extra": 1}"#;
        assert!(serde_json::from_str::<DgpSpec>(bad).is_err());
    }
}
