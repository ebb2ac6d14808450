//! Second-step regressions of headline inflation on estimated factors.
//!
//! The fitted values of `pi_t = alpha + beta f_t + u_t`, estimated with or
//! without regimes, are the core-inflation indicator.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::breaks::BreakModel;
use crate::linalg::{mean, sample_var};
use crate::msfactor::MsModel;
use crate::panel::{InflationSeries, YearMonth};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Baseline,
    #[serde(rename = "SC")]
    Sc,
    #[serde(rename = "MS")]
    Ms,
}

/// How periods are attributed to Markov regimes in [`fit_ms`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MsWeighting {
    /// Each period belongs to its most probable smoothed regime.
    #[default]
    Argmax,
    /// Weighted least squares with smoothed probabilities as weights; fitted
    /// values are probability-weighted averages over regimes.
    Probability,
}

/// Intercept and slope of one regime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeCoefficients {
    pub regime: usize,
    pub alpha: f64,
    pub beta: f64,
    pub se_alpha: f64,
    pub se_beta: f64,
    /// Observations (or summed weights) behind the estimate.
    pub n_obs: f64,
    /// Residual variance within the regime.
    pub residual_var: f64,
    /// The regime had too few periods and uses the pooled coefficients.
    pub pooled_fallback: bool,
}

/// A dated core-inflation indicator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSeries {
    pub dates: Vec<YearMonth>,
    pub headline: Vec<f64>,
    pub values: Vec<f64>,
    pub variant: Variant,
    pub weighting: Option<MsWeighting>,
    /// Regime of every period (argmax regime for the Markov variant).
    pub regimes: Vec<usize>,
    /// Regressor used for every period under its regime.
    pub factor: Vec<f64>,
    pub coefficients: Vec<RegimeCoefficients>,
    pub residuals: Vec<f64>,
    /// Last date of data used.
    pub vintage: YearMonth,
}

impl IndicatorSeries {
    pub fn last(&self) -> f64 {
        *self.values.last().expect("indicator series is never empty")
    }

    pub fn value_at(&self, date: YearMonth) -> Option<f64> {
        let k = date.months_since(*self.dates.first()?);
        (k >= 0).then(|| self.values.get(k as usize).copied()).flatten()
    }

    /// Indicator CSV: `date,headline,indicator,regime,alpha,beta`, regimes
    /// numbered from one.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("date,headline,indicator,regime,alpha,beta\n");
        for t in 0..self.dates.len() {
            let c = &self.coefficients[self.regimes[t]];
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                self.dates[t],
                self.headline[t],
                self.values[t],
                self.regimes[t] + 1,
                c.alpha,
                c.beta
            ));
        }
        out
    }

    /// Coefficients and diagnostics for the JSON sidecar.
    pub fn sidecar(&self) -> IndicatorSidecar {
        IndicatorSidecar {
            variant: self.variant,
            weighting: self.weighting,
            vintage: self.vintage,
            first_date: self.dates[0],
            n_periods: self.dates.len(),
            coefficients: self.coefficients.clone(),
            residual_sd: sample_var(&self.residuals).sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSidecar {
    pub variant: Variant,
    pub weighting: Option<MsWeighting>,
    pub vintage: YearMonth,
    pub first_date: YearMonth,
    pub n_periods: usize,
    pub coefficients: Vec<RegimeCoefficients>,
    pub residual_sd: f64,
}

struct Ols {
    alpha: f64,
    beta: f64,
    se_alpha: f64,
    se_beta: f64,
    n: f64,
    residual_var: f64,
}

/// Weighted least squares of `y` on `(1, x)`; unit weights give OLS.
fn wls(y: &[f64], x: &[f64], w: Option<&[f64]>) -> Result<Ols> {
    let weight = |t: usize| w.map_or(1.0, |w| w[t]);
    let sw: f64 = (0..y.len()).map(weight).sum();
    if sw <= 0.0 {
        return Err(Error::arg("regression has no weight"));
    }
    let xm = (0..y.len()).map(|t| weight(t) * x[t]).sum::<f64>() / sw;
    let ym = (0..y.len()).map(|t| weight(t) * y[t]).sum::<f64>() / sw;
    let sxx: f64 = (0..y.len()).map(|t| weight(t) * (x[t] - xm).powi(2)).sum();
    let sxy: f64 = (0..y.len()).map(|t| weight(t) * (x[t] - xm) * (y[t] - ym)).sum();
    let scale: f64 = (0..y.len()).map(|t| weight(t) * x[t] * x[t]).sum::<f64>().max(f64::MIN_POSITIVE);
    if sxx <= 1e-12 * scale {
        return Err(Error::arg("factor is constant over the regression sample"));
    }
    let beta = sxy / sxx;
    let alpha = ym - beta * xm;
    let ssr: f64 = (0..y.len()).map(|t| weight(t) * (y[t] - alpha - beta * x[t]).powi(2)).sum();
    let dof = (sw - 2.0).max(1.0);
    let s2 = ssr / dof;
    Ok(Ols {
        alpha,
        beta,
        se_alpha: (s2 * (1.0 / sw + xm * xm / sxx)).sqrt(),
        se_beta: (s2 / sxx).sqrt(),
        n: sw,
        residual_var: s2,
    })
}

fn coefficients(regime: usize, o: &Ols, pooled_fallback: bool) -> RegimeCoefficients {
    RegimeCoefficients {
        regime,
        alpha: o.alpha,
        beta: o.beta,
        se_alpha: o.se_alpha,
        se_beta: o.se_beta,
        n_obs: o.n,
        residual_var: o.residual_var,
        pooled_fallback,
    }
}

fn assemble(
    headline: &InflationSeries,
    variant: Variant,
    weighting: Option<MsWeighting>,
    regimes: Vec<usize>,
    factor: Vec<f64>,
    coefficients: Vec<RegimeCoefficients>,
    values: Vec<f64>,
) -> IndicatorSeries {
    let residuals = headline.values.iter().zip(&values).map(|(p, v)| p - v).collect();
    IndicatorSeries {
        vintage: *headline.dates.last().expect("non-empty"),
        dates: headline.dates.clone(),
        headline: headline.values.clone(),
        values,
        variant,
        weighting,
        regimes,
        factor,
        coefficients,
        residuals,
    }
}

fn check_len(headline: &InflationSeries, t: usize) -> Result<()> {
    if headline.values.len() != t {
        return Err(Error::arg(format!(
            "headline has {} periods but the factor has {t}",
            headline.values.len()
        )));
    }
    if t < 3 {
        return Err(Error::arg("at least 3 periods are needed"));
    }
    Ok(())
}

/// OLS of headline on an intercept and one factor over the whole sample.
pub fn fit_baseline(headline: &InflationSeries, factor: &[f64]) -> Result<IndicatorSeries> {
    check_len(headline, factor.len())?;
    let o = wls(&headline.values, factor, None)?;
    let values = factor.iter().map(|f| o.alpha + o.beta * f).collect();
    Ok(assemble(
        headline,
        Variant::Baseline,
        None,
        vec![0; factor.len()],
        factor.to_vec(),
        vec![coefficients(0, &o, false)],
        values,
    ))
}

/// Per-segment OLS on each segment's own first factor.
pub fn fit_sc(headline: &InflationSeries, model: &BreakModel) -> Result<IndicatorSeries> {
    check_len(headline, model.n_periods)?;
    let factor = model.stitched_factor();
    let mut coefs = Vec::new();
    let mut values = Vec::with_capacity(factor.len());
    for (k, (a, b)) in model.segments().into_iter().enumerate() {
        if b - a < 3 {
            return Err(Error::arg(format!("segment {} has fewer than 3 observations", k + 1)));
        }
        let o = wls(&headline.values[a..b], &factor[a..b], None)?;
        values.extend(factor[a..b].iter().map(|f| o.alpha + o.beta * f));
        coefs.push(coefficients(k, &o, false));
    }
    Ok(assemble(headline, Variant::Sc, None, model.regime_path(), factor, coefs, values))
}

/// The same fit as [`fit_sc`] computed as one regression on the
/// block-diagonal design `[I_bar, F_bar]`.
pub fn fit_sc_stacked(headline: &InflationSeries, model: &BreakModel) -> Result<IndicatorSeries> {
    check_len(headline, model.n_periods)?;
    let factor = model.stitched_factor();
    let segs = model.segments();
    let k = segs.len();
    let t_len = factor.len();
    let mut design = DMatrix::zeros(t_len, 2 * k);
    for (j, &(a, b)) in segs.iter().enumerate() {
        if b - a < 3 {
            return Err(Error::arg(format!("segment {} has fewer than 3 observations", j + 1)));
        }
        for t in a..b {
            design[(t, j)] = 1.0;
            design[(t, k + j)] = factor[t];
        }
    }
    let y = DVector::from_column_slice(&headline.values);
    let coef = design
        .clone()
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|e| Error::numerical(format!("stacked regression failed: {e}")))?;
    let fitted = &design * &coef;
    let mut coefs = Vec::with_capacity(k);
    for (j, &(a, b)) in segs.iter().enumerate() {
        let (alpha, beta) = (coef[j], coef[k + j]);
        let n = (b - a) as f64;
        let xm = mean(&factor[a..b]);
        let sxx: f64 = factor[a..b].iter().map(|x| (x - xm).powi(2)).sum();
        let s2 = (a..b).map(|t| (y[t] - fitted[t]).powi(2)).sum::<f64>() / (n - 2.0).max(1.0);
        coefs.push(RegimeCoefficients {
            regime: j,
            alpha,
            beta,
            se_alpha: (s2 * (1.0 / n + xm * xm / sxx)).sqrt(),
            se_beta: (s2 / sxx).sqrt(),
            n_obs: n,
            residual_var: s2,
            pooled_fallback: false,
        });
    }
    Ok(assemble(
        headline,
        Variant::Sc,
        None,
        model.regime_path(),
        factor,
        coefs,
        fitted.iter().copied().collect(),
    ))
}

/// Per-regime regressions on the regime-specific factor of a Markov model.
///
/// A regime with fewer than 3 periods (or a degenerate factor) borrows the
/// pooled coefficients from a regression on the argmax regime factor and is
/// flagged.
pub fn fit_ms(headline: &InflationSeries, model: &MsModel, weighting: MsWeighting) -> Result<IndicatorSeries> {
    let t_len = model.regimes.len();
    check_len(headline, t_len)?;
    let m = model.n_regimes();
    let y = &headline.values;
    let pooled = wls(y, &model.regime_factors, None)?;
    let mut coefs = Vec::with_capacity(m);
    let values: Vec<f64> = match weighting {
        MsWeighting::Argmax => {
            for j in 0..m {
                let idx: Vec<usize> = (0..t_len).filter(|&t| model.regimes[t] == j).collect();
                let fit = (idx.len() >= 3)
                    .then(|| {
                        let ys: Vec<f64> = idx.iter().map(|&t| y[t]).collect();
                        let xs: Vec<f64> = idx.iter().map(|&t| model.regime_factors[t]).collect();
                        wls(&ys, &xs, None).ok()
                    })
                    .flatten();
                coefs.push(match fit {
                    Some(o) => coefficients(j, &o, false),
                    None => coefficients(j, &pooled, true),
                });
            }
            (0..t_len)
                .map(|t| {
                    let c = &coefs[model.regimes[t]];
                    c.alpha + c.beta * model.regime_factors[t]
                })
                .collect()
        }
        MsWeighting::Probability => {
            for j in 0..m {
                let w: Vec<f64> = model.smoothed_probs.column(j).iter().copied().collect();
                let xs: Vec<f64> = model.regime_factor_paths.column(j).iter().copied().collect();
                let fit = (w.iter().sum::<f64>() >= 3.0).then(|| wls(y, &xs, Some(&w)).ok()).flatten();
                coefs.push(match fit {
                    Some(o) => coefficients(j, &o, false),
                    None => coefficients(j, &pooled, true),
                });
            }
            (0..t_len)
                .map(|t| {
                    (0..m)
                        .map(|j| {
                            let c = &coefs[j];
                            model.smoothed_probs[(t, j)] * (c.alpha + c.beta * model.regime_factor_paths[(t, j)])
                        })
                        .sum()
                })
                .collect()
        }
    };
    Ok(assemble(
        headline,
        Variant::Ms,
        Some(weighting),
        model.regimes.clone(),
        model.regime_factors.clone(),
        coefs,
        values,
    ))
}

/// Pairwise F-ratio comparison of factor variances across regimes.
///
/// This is a heuristic: the factor is serially dependent and estimated, so
/// the nominal F distribution is only a rough guide.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceComparison {
    pub regime_a: usize,
    pub regime_b: usize,
    pub var_a: f64,
    pub var_b: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub f_ratio: f64,
    /// Two-sided p-value under `F(n_a - 1, n_b - 1)`.
    pub p_value: f64,
}

/// Compares the variance of `factor` across every pair of regimes in
/// `regimes` (labels `0..M`). Regimes with fewer than 2 periods are skipped.
pub fn regime_variance_diagnostic(factor: &[f64], regimes: &[usize]) -> Result<Vec<VarianceComparison>> {
    if factor.len() != regimes.len() {
        return Err(Error::arg("factor and regime path differ in length"));
    }
    let m = regimes.iter().copied().max().map_or(0, |v| v + 1);
    let groups: Vec<Vec<f64>> = (0..m)
        .map(|j| (0..factor.len()).filter(|&t| regimes[t] == j).map(|t| factor[t]).collect())
        .collect();
    let mut out = Vec::new();
    for a in 0..m {
        for b in a + 1..m {
            let (ga, gb) = (&groups[a], &groups[b]);
            if ga.len() < 2 || gb.len() < 2 {
                continue;
            }
            let (va, vb) = (sample_var(ga), sample_var(gb));
            let f = va / vb;
            let dist = FisherSnedecor::new((ga.len() - 1) as f64, (gb.len() - 1) as f64)
                .map_err(|e| Error::numerical(e.to_string()))?;
            let cdf = dist.cdf(f);
            out.push(VarianceComparison {
                regime_a: a,
                regime_b: b,
                var_a: va,
                var_b: vb,
                n_a: ga.len(),
                n_b: gb.len(),
                f_ratio: f,
                p_value: (2.0 * cdf.min(1.0 - cdf)).min(1.0),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::breaks::fixed_break_model;
    use crate::exec::Execution;
    use crate::linalg::normal_equations;
    use crate::msfactor::{em_fit, EmOptions};
    use crate::panel::{simulate_panel, standardize, DgpSpec, SeriesKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn series(values: Vec<f64>) -> InflationSeries {
        let start = YearMonth::new(2000, 1).unwrap();
        InflationSeries::new(YearMonth::range(start, values.len()), values, SeriesKind::Headline).unwrap()
    }

    fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    }

    #[test]
    fn perfect_regressor_reproduces_headline() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h: Vec<f64> = noise(&mut rng, 50).iter().map(|z| 2.0 + 1.5 * z).collect();
        let m = mean(&h);
        let sd = sample_var(&h).sqrt();
        let f: Vec<f64> = h.iter().map(|v| (v - m) / sd).collect();
        let ind = fit_baseline(&series(h.clone()), &f).unwrap();
        for (a, b) in ind.values.iter().zip(&h) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((ind.coefficients[0].beta - sd).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_factor_gives_mean() {
        let h = vec![1.0, 3.0, 1.0, 3.0];
        let f = vec![1.0, 1.0, -1.0, -1.0];
        let ind = fit_baseline(&series(h), &f).unwrap();
        assert!(ind.values.iter().all(|v| (v - 2.0).abs() < 1e-14));
    }

    #[test]
    fn baseline_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = noise(&mut rng, 80);
        let h: Vec<f64> = f.iter().map(|x| 1.0 + 0.7 * x + rng.random_range(-1.0..1.0)).collect();
        let ind = fit_baseline(&series(h.clone()), &f).unwrap();
        let design = DMatrix::from_fn(80, 2, |t, c| if c == 0 { 1.0 } else { f[t] });
        let coef = normal_equations(&design, &DVector::from_vec(h)).unwrap();
        assert!((coef[0] - ind.coefficients[0].alpha).abs() < 1e-10);
        assert!((coef[1] - ind.coefficients[0].beta).abs() < 1e-10);
        let r = &ind.residuals;
        assert!(r.iter().sum::<f64>().abs() < 1e-8);
        assert!(r.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>().abs() < 1e-8);
    }

    #[test]
    fn constant_factor_rejected() {
        assert!(fit_baseline(&series(vec![1.0, 2.0, 3.0]), &[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn sign_flip_leaves_indicator_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = noise(&mut rng, 40);
        let h: Vec<f64> = f.iter().map(|x| 2.0 - x + 0.3 * rng.random::<f64>()).collect();
        let a = fit_baseline(&series(h.clone()), &f).unwrap();
        let neg: Vec<f64> = f.iter().map(|x| -x).collect();
        let b = fit_baseline(&series(h), &neg).unwrap();
        assert!((a.coefficients[0].beta + b.coefficients[0].beta).abs() < 1e-12);
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    fn panel_and_headline(seed: u64, spec: &DgpSpec) -> (DMatrix<f64>, DMatrix<f64>, InflationSeries) {
        let (p, truth) = simulate_panel(spec, seed).unwrap();
        let s = standardize(&p, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let h: Vec<f64> = truth.factors.iter().map(|f| 2.0 + 0.8 * f + 0.3 * rng.random::<f64>()).collect();
        let head = InflationSeries::new(p.dates().to_vec(), h, SeriesKind::Headline).unwrap();
        (s.values().clone(), p.values().clone(), head)
    }

    #[test]
    fn stacked_and_per_segment_agree() {
        let spec = DgpSpec::single_break(12, 100, 45, 1.0, 3.0);
        let (x, raw, head) = panel_and_headline(4, &spec);
        let model = fixed_break_model(&x, &raw, &[45], 1, 0.1).unwrap();
        let a = fit_sc(&head, &model).unwrap();
        let b = fit_sc_stacked(&head, &model).unwrap();
        for (u, v) in a.values.iter().zip(&b.values) {
            assert!((u - v).abs() < 1e-10);
        }
        for (ca, cb) in a.coefficients.iter().zip(&b.coefficients) {
            assert!((ca.alpha - cb.alpha).abs() < 1e-10 && (ca.beta - cb.beta).abs() < 1e-10);
        }
        for (k, (lo, hi)) in model.segments().into_iter().enumerate() {
            let r = &a.residuals[lo..hi];
            assert!(r.iter().sum::<f64>().abs() < 1e-8, "segment {k}");
        }
    }

    #[test]
    fn reduction_chain() {
        let spec = DgpSpec::no_break(10, 90);
        let (x, raw, head) = panel_and_headline(5, &spec);
        let sc = fit_sc(&head, &fixed_break_model(&x, &raw, &[], 1, 0.1).unwrap()).unwrap();
        let ms = em_fit(&x, 1, 1, &EmOptions::default(), Execution::Sequential).unwrap();
        let ms = fit_ms(&head, &ms, MsWeighting::Argmax).unwrap();
        let base = fit_baseline(&head, &crate::factor::estimate_factors(&x, 1).unwrap().factor(0)).unwrap();
        for t in 0..90 {
            assert!((sc.values[t] - base.values[t]).abs() < 1e-10);
            assert!((ms.values[t] - base.values[t]).abs() < 1e-10);
        }
    }

    #[test]
    fn ms_falls_back_for_sparse_regime() {
        let spec = DgpSpec::no_break(8, 60);
        let (x, _, head) = panel_and_headline(6, &spec);
        let mut model = em_fit(&x, 1, 1, &EmOptions::default(), Execution::Sequential).unwrap();
        // graft a second regime that owns only two periods
        model.params.loadings.push(model.params.loadings[0].clone());
        model.factor_loadings.push(model.factor_loadings[0].clone());
        model.regimes[10] = 1;
        model.regimes[20] = 1;
        let pad = |a: &DMatrix<f64>| DMatrix::from_fn(a.nrows(), 2, |t, j| if j == 0 { a[(t, 0)] } else { 0.0 });
        model.smoothed_probs = pad(&model.smoothed_probs);
        model.regime_factor_paths = pad(&model.regime_factor_paths);
        let ind = fit_ms(&head, &model, MsWeighting::Argmax).unwrap();
        assert!(ind.coefficients[1].pooled_fallback);
        assert!(!ind.coefficients[0].pooled_fallback);
        let prob = fit_ms(&head, &model, MsWeighting::Probability).unwrap();
        assert!(prob.coefficients[1].pooled_fallback);
    }

    #[test]
    fn csv_and_sidecar() {
        let ind = fit_baseline(&series(vec![1.0, 2.0, 4.0, 3.0]), &[0.1, 0.2, 0.5, 0.3]).unwrap();
        let csv = ind.to_csv();
        assert!(csv.starts_with("date,headline,indicator,regime,alpha,beta\n2000-01,1,"));
        assert_eq!(csv.lines().count(), 5);
        let json = serde_json::to_value(ind.sidecar()).unwrap();
        assert_eq!(json["variant"], "Baseline");
        assert_eq!(json["vintage"], "2000-04");
    }

    #[test]
    fn variance_diagnostic() {
        assert!(regime_variance_diagnostic(&[1.0, 2.0, 3.0], &[0, 0, 0]).unwrap().is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut reject_null = 0;
        let mut reject_alt = 0;
        for _ in 0..200 {
            let mut f = noise(&mut rng, 200);
            let regimes: Vec<usize> = (0..200).map(|t| usize::from(t >= 100)).collect();
            let null = regime_variance_diagnostic(&f, &regimes).unwrap();
            reject_null += usize::from(null[0].p_value < 0.05);
            f[100..].iter_mut().for_each(|v| *v *= 2.0);
            let alt = regime_variance_diagnostic(&f, &regimes).unwrap();
            reject_alt += usize::from(alt[0].p_value < 0.05);
        }
        assert!(reject_null <= 20, "{reject_null}");
        assert!(reject_alt >= 190, "{reject_alt}");
    }
}
