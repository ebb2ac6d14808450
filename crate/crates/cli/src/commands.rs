use std::path::Path;

use regimefactor::breaks::{
    analyze_breaks, simulate_critical_values, BreakReport, CriticalSimConfig, CriticalValueTable,
};
use regimefactor::evaluate::{evaluate_models, vintage_fan};
use regimefactor::factor::{estimate_factors, ic_num_factors, InfoCriterion};
use regimefactor::indicator::{fit_baseline, fit_ms, fit_sc, IndicatorSeries, Variant};
use regimefactor::msfactor::em_fit;
use regimefactor::panel::{
    ingest_csv, read_inflation_series, simulate_panel, standardize, to_mom, to_yoy, DgpSpec, InflationSeries,
    PricePanel, SeriesKind, Transform,
};
use regimefactor::Execution;
use serde_json::json;

use crate::config::{RateTransform, RunConfig};
use crate::output::Output;
use crate::CliError;

const EXEC: Execution = Execution::Parallel;

fn rates(cfg: &RunConfig, out: &mut Output) -> Result<PricePanel, CliError> {
    let path = cfg.require_components()?;
    out.record_input(path)?;
    let raw = ingest_csv(path, cfg.layout)?;
    Ok(match cfg.transform {
        RateTransform::Yoy => to_yoy(&raw)?,
        RateTransform::Mom => to_mom(&raw)?,
        RateTransform::Rates => PricePanel::new(
            raw.dates().to_vec(),
            raw.series_ids().to_vec(),
            raw.values().clone(),
            Transform::YoY,
        )?,
    })
}

fn headline(cfg: &RunConfig, out: &mut Output) -> Result<InflationSeries, CliError> {
    let path = cfg.require_headline()?;
    out.record_input(path)?;
    let (dates, values) = read_inflation_series(path, cfg.headline_column.as_deref())?;
    Ok(match cfg.transform {
        RateTransform::Yoy => InflationSeries::headline_from_index(&dates, &values, 12)?,
        RateTransform::Mom => InflationSeries::headline_from_index(&dates, &values, 1)?,
        RateTransform::Rates => InflationSeries::new(dates, values, SeriesKind::Headline)?,
    })
}

fn aligned_headline(head: &InflationSeries, panel: &PricePanel) -> Result<InflationSeries, CliError> {
    let values = head.aligned_to(panel.dates())?;
    Ok(InflationSeries::new(panel.dates().to_vec(), values, SeriesKind::Headline)?)
}

pub fn ingest(cfg: &RunConfig, out: &mut Output) -> Result<(), CliError> {
    let p = rates(cfg, out)?;
    out.write("rates.csv", &p.to_csv())?;
    let mut summary = json!({
        "n_series": p.n_series(),
        "n_periods": p.n_periods(),
        "first": p.dates().first(),
        "last": p.dates().last(),
        "transform": p.transform(),
        "series_ids": p.series_ids(),
    });
    if cfg.headline.is_some() {
        let h = headline(cfg, out)?;
        let mut csv = String::from("date,headline\n");
        for (d, v) in h.dates.iter().zip(&h.values) {
            csv.push_str(&format!("{d},{v}\n"));
        }
        out.write("headline.csv", &csv)?;
        summary["headline_periods"] = json!(h.values.len());
    }
    out.write_json("ingest.json", &summary)
}

pub fn factors(cfg: &RunConfig, out: &mut Output) -> Result<(), CliError> {
    let p = rates(cfg, out)?;
    let x = standardize(&p, None)?;
    let est = estimate_factors(x.values(), cfg.r)?;
    let mut csv = String::from("date");
    for k in 1..=cfg.r {
        csv.push_str(&format!(",factor_{k}"));
    }
    csv.push('\n');
    for (t, d) in p.dates().iter().enumerate() {
        csv.push_str(&d.to_string());
        for k in 0..cfg.r {
            csv.push_str(&format!(",{}", est.factors[(t, k)]));
        }
        csv.push('\n');
    }
    out.write("factors.csv", &csv)?;
    let r_max = (p.n_series().min(p.n_periods()) / 2).min(8);
    let ic = |c| ic_num_factors(x.values(), r_max, c).ok();
    let loadings: serde_json::Map<String, serde_json::Value> = p
        .series_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), json!((0..cfg.r).map(|k| est.loadings[(i, k)]).collect::<Vec<_>>())))
        .collect();
    out.write_json(
        "factors.json",
        &json!({
            "r": cfg.r,
            "eigenvalues": est.eigenvalues,
            "explained_share": est.explained_share(),
            "residual_variance": est.residual_variance(),
            "ic_p1": ic(InfoCriterion::ICp1),
            "ic_p2": ic(InfoCriterion::ICp2),
            "loadings": loadings,
        }),
    )
}

pub fn breaks(cfg: &RunConfig, out: &mut Output) -> Result<(), CliError> {
    let p = rates(cfg, out)?;
    let x = standardize(&p, None)?;
    let a = analyze_breaks(x.values(), p.values(), &cfg.break_config(), CriticalValueTable::embedded(), EXEC)?;
    out.write_json("breaks.json", &BreakReport::new(&a, p.dates()))?;
    let path = a.model.regime_path();
    let factor = a.model.stitched_factor();
    let mut csv = String::from("date,regime,factor\n");
    for (t, d) in p.dates().iter().enumerate() {
        csv.push_str(&format!("{d},{},{}\n", path[t] + 1, factor[t]));
    }
    out.write("regimes.csv", &csv)
}

pub fn msfit(cfg: &RunConfig, out: &mut Output) -> Result<(), CliError> {
    let p = rates(cfg, out)?;
    let x = standardize(&p, None)?;
    let model = em_fit(x.values(), cfg.regimes, cfg.r, &cfg.em_options(), EXEC)?;
    out.write_json("msfit.json", &model.report())?;
    out.write("smoothed_probs.csv", &model.smoothed_csv(p.dates())?)
}

fn fit_indicator(cfg: &RunConfig, p: &PricePanel, head: &InflationSeries) -> Result<IndicatorSeries, CliError> {
    let x = standardize(p, None)?;
    Ok(match cfg.variant {
        Variant::Baseline => fit_baseline(head, &estimate_factors(x.values(), cfg.r)?.factor(0))?,
        Variant::Sc => {
            let a = analyze_breaks(x.values(), p.values(), &cfg.break_config(), CriticalValueTable::embedded(), EXEC)?;
            fit_sc(head, &a.model)?
        }
        Variant::Ms => {
            let model = em_fit(x.values(), cfg.regimes, cfg.r, &cfg.em_options(), EXEC)?;
            fit_ms(head, &model, cfg.weighting)?
        }
    })
}

pub fn indicator(cfg: &RunConfig, out: &mut Output) -> Result<(), CliError> {
    let p = rates(cfg, out)?;
    let head = aligned_headline(&headline(cfg, out)?, &p)?;
    let series = fit_indicator(cfg, &p, &head)?;
    out.write("indicator.csv", &series.to_csv())?;
    out.write_json("indicator.json", &series.sidecar())
}

pub fn evaluate(cfg: &RunConfig, out: &mut Output) -> Result<(), CliError> {
    let ev = cfg
        .evaluation
        .as_ref()
        .ok_or_else(|| CliError::invalid("evaluate needs a vintage range (--vintage-start/--vintage-end or config.evaluation)"))?;
    let p = rates(cfg, out)?;
    let head = headline(cfg, out)?;
    let (report, runs) = evaluate_models(&p, &head, &cfg.model_specs(), ev, EXEC)?;
    out.write_json("evaluation.json", &report)?;
    let cell = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let mut rev = String::from("model,sample,start,end,rmsd,mad\n");
    for r in &report.revisions {
        rev.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.model,
            r.sample,
            r.start,
            r.end,
            cell(r.rmsd),
            cell(r.mad)
        ));
    }
    out.write("revisions.csv", &rev)?;
    let mut fc = String::from("model,horizon,start,end,rmsfe,mcs_p_value,in_mcs\n");
    for r in &report.forecasts {
        fc.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.model, r.horizon, r.start, r.end, r.rmsfe, r.mcs_p_value, r.in_mcs
        ));
    }
    out.write("forecasts.csv", &fc)?;
    for run in &runs {
        let mut fan = String::from("vintage,date,value\n");
        for row in vintage_fan(run) {
            fan.push_str(&format!("{},{},{}\n", row.vintage, row.date, row.value));
        }
        out.write(&format!("fan_{}.csv", run.model.label()), &fan)?;
    }
    Ok(())
}

pub fn simulate(cfg: &RunConfig, out: &mut Output) -> Result<(), CliError> {
    let path = cfg
        .spec
        .as_deref()
        .ok_or_else(|| CliError::invalid("simulate needs a DGP spec (--spec or config key)"))?;
    let spec = read_spec(path)?;
    out.record_input(path)?;
    let (panel, truth) = simulate_panel(&spec, cfg.seed)?;
    out.write("panel.csv", &panel.to_csv())?;
    out.write_json("truth.json", &truth)
}

fn read_spec(path: &Path) -> Result<DgpSpec, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::invalid(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::invalid(format!("DGP spec {}: {e}", path.display())))
}

pub fn critvals(sim: &CriticalSimConfig, out: &mut Output) -> Result<(), CliError> {
    let table = simulate_critical_values(sim, EXEC)?;
    out.write_json("critical_values.json", &table)
}
