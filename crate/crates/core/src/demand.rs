//! Demand distributions, sampling and empirical-data ingestion.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::special::{normal_cdf, normal_quantile};

/// Upper truncation bound used for ingested empirical processes.
pub const EMPIRICAL_TRUNC_HI: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DemandModel {
    DiscreteUniform { lo: i64, hi: i64 },
    /// Finite-support distribution; `pmf` is sorted by value.
    Empirical { pmf: Vec<(i64, f64)> },
    /// Independent per-period truncated normals with period-specific moments.
    TruncatedNormalProcess {
        mu: Vec<f64>,
        sigma: Vec<f64>,
        trunc_lo: f64,
        trunc_hi: f64,
    },
}

impl DemandModel {
    pub fn uniform(lo: i64, hi: i64) -> Self {
        DemandModel::DiscreteUniform { lo, hi }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DemandModel::DiscreteUniform { lo, hi } => {
                if *lo < 0 {
                    return Err(Error::Negative(format!("uniform lower bound {lo}")));
                }
                if lo > hi {
                    return Err(Error::InvalidParams(format!("uniform bounds {lo} > {hi}")));
                }
            }
            DemandModel::Empirical { pmf } => {
                if pmf.is_empty() {
                    return Err(Error::InvalidParams("empty pmf".into()));
                }
                let mut total = 0.0;
                for (i, &(v, p)) in pmf.iter().enumerate() {
                    if v < 0 {
                        return Err(Error::Negative(format!("pmf support value {v}")));
                    }
                    if !(p >= 0.0) {
                        return Err(Error::InvalidParams(format!("pmf probability {p}")));
                    }
                    if i > 0 && pmf[i - 1].0 >= v {
                        return Err(Error::InvalidParams("pmf support must be strictly ascending".into()));
                    }
                    total += p;
                }
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidParams(format!("pmf sums to {total}")));
                }
            }
            DemandModel::TruncatedNormalProcess { mu, sigma, trunc_lo, trunc_hi } => {
                if mu.len() != sigma.len() {
                    return Err(Error::DimensionMismatch { expected: mu.len(), got: sigma.len() });
                }
                if mu.is_empty() {
                    return Err(Error::InvalidParams("empty demand process".into()));
                }
                if !(trunc_lo < trunc_hi) {
                    return Err(Error::InvalidParams(format!("truncation ({trunc_lo}, {trunc_hi})")));
                }
                if let Some(s) = sigma.iter().find(|s| !(**s >= 0.0)) {
                    return Err(Error::Negative(format!("sigma {s}")));
                }
                if mu.iter().any(|m| !m.is_finite()) {
                    return Err(Error::NonFinite("mu".into()));
                }
            }
        }
        Ok(())
    }

    pub fn is_stationary(&self) -> bool {
        !matches!(self, DemandModel::TruncatedNormalProcess { .. })
    }

    /// Number of periods covered by a time-varying model.
    pub fn horizon(&self) -> Option<usize> {
        match self {
            DemandModel::TruncatedNormalProcess { mu, .. } => Some(mu.len()),
            _ => None,
        }
    }

    /// Single-period pmf for discrete models.
    pub fn pmf(&self) -> Result<Vec<(i64, f64)>> {
        match self {
            DemandModel::DiscreteUniform { lo, hi } => {
                let p = 1.0 / (hi - lo + 1) as f64;
                Ok((*lo..=*hi).map(|v| (v, p)).collect())
            }
            DemandModel::Empirical { pmf } => Ok(pmf.clone()),
            DemandModel::TruncatedNormalProcess { .. } => {
                Err(Error::Unsupported("pmf of a continuous demand model".into()))
            }
        }
    }

    /// Largest possible single-period demand of a discrete model.
    pub fn max_demand(&self) -> Result<i64> {
        match self {
            DemandModel::DiscreteUniform { hi, .. } => Ok(*hi),
            DemandModel::Empirical { pmf } => {
                Ok(pmf.iter().rev().find(|(_, p)| *p > 0.0).map(|(v, _)| *v).unwrap_or(0))
            }
            DemandModel::TruncatedNormalProcess { .. } => {
                Err(Error::Unsupported("maximum demand of a continuous model".into()))
            }
        }
    }

    pub fn min_demand(&self) -> Result<i64> {
        match self {
            DemandModel::DiscreteUniform { lo, .. } => Ok(*lo),
            DemandModel::Empirical { pmf } => {
                Ok(pmf.iter().find(|(_, p)| *p > 0.0).map(|(v, _)| *v).unwrap_or(0))
            }
            DemandModel::TruncatedNormalProcess { .. } => {
                Err(Error::Unsupported("minimum demand of a continuous model".into()))
            }
        }
    }

    /// Mean and standard deviation of period-`t` demand. For the truncated-normal
    /// process these are the untruncated parameters, which is what the network
    /// features and the time-varying CDI rule consume.
    pub fn moments(&self, t: usize) -> Result<(f64, f64)> {
        match self {
            DemandModel::TruncatedNormalProcess { mu, sigma, .. } => {
                if t >= mu.len() {
                    return Err(Error::OutOfHorizon { period: t, horizon: mu.len() });
                }
                Ok((mu[t], sigma[t]))
            }
            _ => {
                let pmf = self.pmf()?;
                let mean: f64 = pmf.iter().map(|(v, p)| *v as f64 * p).sum();
                let var: f64 = pmf.iter().map(|(v, p)| (*v as f64 - mean).powi(2) * p).sum();
                Ok((mean, var.sqrt()))
            }
        }
    }

    pub fn sample(&self, t: usize, rng: &mut SimRng) -> Result<f64> {
        match self {
            DemandModel::DiscreteUniform { lo, hi } => {
                Ok((*lo + rng.below((hi - lo + 1) as u64) as i64) as f64)
            }
            DemandModel::Empirical { pmf } => {
                let u = rng.uniform();
                let mut acc = 0.0;
                for &(v, p) in pmf {
                    acc += p;
                    if u < acc {
                        return Ok(v as f64);
                    }
                }
                // Rounding left a sliver of mass above the last cumulative sum.
                Ok(pmf.iter().rev().find(|(_, p)| *p > 0.0).map(|(v, _)| *v).unwrap_or(0) as f64)
            }
            DemandModel::TruncatedNormalProcess { mu, sigma, trunc_lo, trunc_hi } => {
                if t >= mu.len() {
                    return Err(Error::OutOfHorizon { period: t, horizon: mu.len() });
                }
                Ok(sample_truncated_normal(mu[t], sigma[t], *trunc_lo, *trunc_hi, rng))
            }
        }
    }
}

/// Draw from N(mu, sigma²) restricted to (lo, hi).
///
/// Plain rejection when the interval holds more than 5% of the mass, inverse CDF otherwise.
/// With `sigma == 0` the result is `mu` clamped into the interval.
pub fn sample_truncated_normal(mu: f64, sigma: f64, lo: f64, hi: f64, rng: &mut SimRng) -> f64 {
    if sigma == 0.0 {
        return mu.clamp(lo, hi);
    }
    let mut a = (lo - mu) / sigma;
    let mut b = (hi - mu) / sigma;
    // Work in the lower tail where Φ is accurate.
    let flip = a > 0.0;
    if flip {
        (a, b) = (-b, -a);
    }
    let (pa, pb) = (normal_cdf(a), normal_cdf(b));
    let z = if pb - pa > 0.05 {
        loop {
            let z = normal_quantile(rng.uniform_open());
            if z > a && z < b {
                break z;
            }
        }
    } else {
        let u = pa + rng.uniform_open() * (pb - pa);
        normal_quantile(u).clamp(a, b)
    };
    let z = if flip { -z } else { z };
    // Rounding can land exactly on a bound; keep the interval open.
    (mu + sigma * z).clamp(lo.next_up(), hi.next_down())
}

/// Exact `p`-quantile of the `k`-period cumulative demand of a discrete model:
/// the smallest `x` with `P(D_1 + … + D_k ≤ x) ≥ p`.
pub fn quantile(model: &DemandModel, k: usize, p: f64) -> Result<i64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParams(format!("quantile level {p}")));
    }
    let (offset, dist) = convolve_power(&model.pmf()?, k);
    let mut acc = 0.0;
    for (i, q) in dist.iter().enumerate() {
        acc += q;
        // Allow for rounding in the accumulated sum.
        if acc >= p - 1e-12 {
            return Ok(offset + i as i64);
        }
    }
    Ok(offset + dist.len() as i64 - 1)
}

/// Dense pmf of the `k`-fold sum, returned as (smallest value, probabilities).
pub fn convolve_power(pmf: &[(i64, f64)], k: usize) -> (i64, Vec<f64>) {
    let lo = pmf.first().map(|x| x.0).unwrap_or(0);
    let hi = pmf.last().map(|x| x.0).unwrap_or(0);
    let mut base = vec![0.0; (hi - lo + 1) as usize];
    for &(v, p) in pmf {
        base[(v - lo) as usize] += p;
    }
    let mut acc = vec![1.0];
    for _ in 0..k {
        let mut next = vec![0.0; acc.len() + base.len() - 1];
        for (i, a) in acc.iter().enumerate() {
            for (j, b) in base.iter().enumerate() {
                next[i + j] += a * b;
            }
        }
        acc = next;
    }
    (lo * k as i64, acc)
}

/// One observation of an empirical demand table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandRecord {
    pub period: usize,
    pub series_id: String,
    pub demand: f64,
}

/// Per-period cross-series mean and sample standard deviation, truncated to (0, 1e8).
pub fn ingest_empirical(rows: &[DemandRecord]) -> Result<DemandModel> {
    let mut series: BTreeMap<&str, BTreeMap<usize, f64>> = BTreeMap::new();
    for r in rows {
        if !(r.demand >= 0.0) {
            return Err(Error::Negative(format!(
                "demand {} in series {} period {}",
                r.demand, r.series_id, r.period
            )));
        }
        if series.entry(&r.series_id).or_default().insert(r.period, r.demand).is_some() {
            return Err(Error::Format(format!(
                "duplicate period {} in series {}",
                r.period, r.series_id
            )));
        }
    }
    if series.len() < 2 {
        return Err(Error::InsufficientSamples { need: 2, got: series.len() });
    }
    let horizon = series.values().next().map(|s| s.len()).unwrap_or(0);
    for (id, s) in &series {
        let consecutive = s.keys().enumerate().all(|(i, p)| i == *p);
        if s.len() != horizon || !consecutive {
            return Err(Error::Format(format!(
                "series {id} does not cover periods 0..{horizon}"
            )));
        }
    }
    let n = series.len() as f64;
    let mut mu = Vec::with_capacity(horizon);
    let mut sigma = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let values: Vec<f64> = series.values().map(|s| s[&t]).collect();
        let m = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        mu.push(m);
        sigma.push(var.sqrt());
    }
    Ok(DemandModel::TruncatedNormalProcess { mu, sigma, trunc_lo: 0.0, trunc_hi: EMPIRICAL_TRUNC_HI })
}

pub fn read_demand_csv<R: Read>(reader: R) -> Result<Vec<DemandRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["period", "series_id", "demand"] {
        return Err(Error::Format(format!(
            "expected header period,series_id,demand, found {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

pub fn write_demand_csv<W: Write>(writer: W, rows: &[DemandRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Length in weeks of the bundled synthetic lifecycle series.
pub const HUMP_WEEKS: usize = 115;

/// Synthetic product-lifecycle demand: nothing for the first weeks, a ramp to a plateau
/// of roughly 3e5 units per week centred near week 70, then a decline to zero.
///
/// Series differ in launch week, peak height and timing, and carry weekly
/// multiplicative noise.
pub fn synthetic_hump_series(n_series: usize, seed: u64) -> Vec<DemandRecord> {
    let mut rows = Vec::with_capacity(n_series * HUMP_WEEKS);
    for s in 0..n_series {
        let mut rng = SimRng::with_stream(seed, s as u64);
        let launch = 4.0 + 8.0 * rng.uniform();
        let peak = 3.0e5 * (0.75 + 0.5 * rng.uniform());
        let rise = 40.0 + 8.0 * (rng.uniform() - 0.5);
        let fall = 98.0 + 8.0 * (rng.uniform() - 0.5);
        for t in 0..HUMP_WEEKS {
            let x = t as f64;
            let demand = if x < launch {
                0.0
            } else {
                let up = 1.0 / (1.0 + (-(x - rise) / 6.0).exp());
                let down = 1.0 / (1.0 + ((x - fall) / 5.0).exp());
                let noise = (0.2 * normal_quantile(rng.uniform_open())).exp();
                (peak * up * down * noise).round()
            };
            rows.push(DemandRecord { period: t, series_id: format!("s{s:03}"), demand });
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn uniform_sampling_is_flat() {
        let m = DemandModel::uniform(0, 4);
        let mut rng = SimRng::new(11);
        let mut counts = [0usize; 5];
        for _ in 0..100_000 {
            counts[m.sample(0, &mut rng).unwrap() as usize] += 1;
        }
        for c in counts {
            assert!((c as f64 / 1e5 - 0.2).abs() < 0.005);
        }
        let degenerate = DemandModel::uniform(3, 3);
        assert!((0..100).all(|_| degenerate.sample(0, &mut rng).unwrap() == 3.0));
    }

    #[test]
    fn half_normal_mean() {
        let m = DemandModel::TruncatedNormalProcess {
            mu: vec![0.0],
            sigma: vec![1.0],
            trunc_lo: 0.0,
            trunc_hi: f64::INFINITY,
        };
        let mut rng = SimRng::new(5);
        let n = 1_000_000;
        let mean = (0..n).map(|_| m.sample(0, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - (2.0 / std::f64::consts::PI).sqrt()).abs() < 0.003, "{mean}");
    }

    #[test]
    fn deep_tail_uses_inverse_cdf_and_stays_inside() {
        let mut rng = SimRng::new(9);
        for _ in 0..10_000 {
            let x = sample_truncated_normal(0.0, 1.0, 6.0, 7.0, &mut rng);
            assert!(x > 6.0 && x < 7.0);
            let y = sample_truncated_normal(0.0, 1.0, -9.0, -8.5, &mut rng);
            assert!(y > -9.0 && y < -8.5);
        }
        assert_eq!(sample_truncated_normal(5.0, 0.0, 0.0, 1e8, &mut rng), 5.0);
    }

    #[test]
    fn out_of_horizon_is_an_error() {
        let m = DemandModel::TruncatedNormalProcess {
            mu: vec![1.0; 3],
            sigma: vec![1.0; 3],
            trunc_lo: 0.0,
            trunc_hi: 10.0,
        };
        assert!(matches!(m.sample(3, &mut SimRng::new(0)), Err(Error::OutOfHorizon { .. })));
    }

    #[test]
    fn exact_quantiles() {
        let m = DemandModel::uniform(0, 4);
        assert_eq!(quantile(&m, 1, 0.99).unwrap(), 4);
        assert_eq!(quantile(&m, 1, 0.5).unwrap(), 2);
        assert_eq!(quantile(&m, 2, 0.99).unwrap(), 8);
        let tn = DemandModel::TruncatedNormalProcess {
            mu: vec![1.0],
            sigma: vec![1.0],
            trunc_lo: 0.0,
            trunc_hi: 5.0,
        };
        assert!(matches!(quantile(&tn, 1, 0.5), Err(Error::Unsupported(_))));
    }

    #[test]
    fn convolution_quantile_matches_monte_carlo() {
        let mut rng = SimRng::new(21);
        for hi in [4, 8] {
            let m = DemandModel::uniform(0, hi);
            for k in 1..=3 {
                let n = 1_000_000;
                let mut sums: Vec<i64> = (0..n)
                    .map(|_| (0..k).map(|_| m.sample(0, &mut rng).unwrap() as i64).sum())
                    .collect();
                sums.sort_unstable();
                for p in [0.85, 0.95, 0.99] {
                    let mc = sums[((p * n as f64).ceil() as usize).saturating_sub(1)];
                    let exact = quantile(&m, k, p).unwrap();
                    // A quantile sitting exactly on a CDF step may land on either side in MC.
                    assert!((mc - exact).abs() <= 1, "hi={hi} k={k} p={p}: {mc} vs {exact}");
                }
            }
        }
    }

    #[test]
    fn ingest_two_series() {
        let rows = vec![
            DemandRecord { period: 0, series_id: "A".into(), demand: 10.0 },
            DemandRecord { period: 0, series_id: "B".into(), demand: 14.0 },
        ];
        let DemandModel::TruncatedNormalProcess { mu, sigma, trunc_lo, trunc_hi } =
            ingest_empirical(&rows).unwrap()
        else {
            panic!("wrong model kind");
        };
        assert_eq!(mu, vec![12.0]);
        assert_relative_eq!(sigma[0], 2.0 * 2f64.sqrt(), epsilon = 1e-12);
        assert_eq!((trunc_lo, trunc_hi), (0.0, 1e8));
    }

    #[test]
    fn ingest_rejects_bad_tables() {
        let one = vec![DemandRecord { period: 0, series_id: "A".into(), demand: 1.0 }];
        assert!(matches!(ingest_empirical(&one), Err(Error::InsufficientSamples { .. })));
        let ragged = vec![
            DemandRecord { period: 0, series_id: "A".into(), demand: 1.0 },
            DemandRecord { period: 1, series_id: "A".into(), demand: 1.0 },
            DemandRecord { period: 0, series_id: "B".into(), demand: 1.0 },
        ];
        assert!(matches!(ingest_empirical(&ragged), Err(Error::Format(_))));
    }

    #[test]
    fn duplicated_series_has_zero_sigma() {
        let rows: Vec<_> = ["A", "B"]
            .iter()
            .flat_map(|id| {
                (0..5).map(move |t| DemandRecord { period: t, series_id: id.to_string(), demand: 7.0 })
            })
            .collect();
        let DemandModel::TruncatedNormalProcess { sigma, .. } = ingest_empirical(&rows).unwrap() else {
            unreachable!()
        };
        assert!(sigma.iter().all(|s| *s == 0.0));
    }

    #[test]
    fn csv_round_trip_and_header_check() {
        let rows = synthetic_hump_series(3, 1);
        let mut buf = Vec::new();
        write_demand_csv(&mut buf, &rows).unwrap();
        assert!(buf.starts_with(b"period,series_id,demand\n"));
        assert_eq!(read_demand_csv(buf.as_slice()).unwrap(), rows);
        let bad = b"week,id,qty\n0,a,1\n";
        assert!(matches!(read_demand_csv(&bad[..]), Err(Error::Format(_))));
    }

    #[test]
    fn hump_shape() {
        let rows = synthetic_hump_series(200, 3);
        let DemandModel::TruncatedNormalProcess { mu, .. } = ingest_empirical(&rows).unwrap() else {
            unreachable!()
        };
        assert_eq!(mu.len(), HUMP_WEEKS);
        assert_eq!(mu[0], 0.0);
        let (argmax, peak) = mu
            .iter()
            .enumerate()
            .fold((0, 0.0), |acc, (i, &m)| if m > acc.1 { (i, m) } else { acc });
        assert!((55..=85).contains(&argmax), "peak week {argmax}");
        assert!(peak > 2.0e5 && peak < 4.0e5, "peak {peak}");
        assert!(mu[HUMP_WEEKS - 1] < 0.05 * peak);
    }
}
