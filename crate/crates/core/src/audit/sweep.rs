use std::collections::BTreeMap;

use serde_json::{Map, Value};

use super::real17;

/// Flat metric name to value map produced by one stage run.
pub type MetricMap = BTreeMap<String, f64>;

#[derive(Debug, thiserror::Error)]
pub enum SweepError<E: std::error::Error + 'static> {
    #[error("seed set is empty")]
    EmptySeedSet,
    #[error("seed {seed}: {source}")]
    Stage {
        seed: u64,
        #[source]
        source: E,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub seeds: Vec<u64>,
    pub per_seed: Vec<(u64, MetricMap)>,
    pub mean: MetricMap,
    pub min: MetricMap,
    pub max: MetricMap,
}

/// Runs `stage` once per seed, in the order given, and aggregates every
/// metric. Sums run in seed order so the mean is reproducible bit-for-bit.
pub fn run_seed_sweep<F, E>(seeds: &[u64], mut stage: F) -> Result<SweepReport, SweepError<E>>
where
    F: FnMut(u64) -> Result<MetricMap, E>,
    E: std::error::Error + 'static,
{
    if seeds.is_empty() {
        return Err(SweepError::EmptySeedSet);
    }
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let metrics = stage(seed).map_err(|source| SweepError::Stage { seed, source })?;
        per_seed.push((seed, metrics));
    }

    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut min = MetricMap::new();
    let mut max = MetricMap::new();
    for (_, metrics) in &per_seed {
        for (k, &v) in metrics {
            let e = sums.entry(k.clone()).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
            min.entry(k.clone()).and_modify(|m| *m = m.min(v)).or_insert(v);
            max.entry(k.clone()).and_modify(|m| *m = m.max(v)).or_insert(v);
        }
    }
    let mean = sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect();
    Ok(SweepReport {
        seeds: seeds.to_vec(),
        per_seed,
        mean,
        min,
        max,
    })
}

pub fn metrics_to_value(metrics: &MetricMap) -> Value {
    Value::Object(
        metrics
            .iter()
            .map(|(k, &v)| (k.clone(), Value::String(real17(v))))
            .collect(),
    )
}

impl SweepReport {
    pub fn to_value(&self) -> Value {
        let mut per_seed = Map::new();
        for (seed, m) in &self.per_seed {
            per_seed.insert(seed.to_string(), metrics_to_value(m));
        }
        let mut out = Map::new();
        out.insert("seeds".into(), Value::from(self.seeds.clone()));
        out.insert("per_seed".into(), Value::Object(per_seed));
        out.insert("mean".into(), metrics_to_value(&self.mean));
        out.insert("min".into(), metrics_to_value(&self.min));
        out.insert("max".into(), metrics_to_value(&self.max));
        Value::Object(out)
    }
}
