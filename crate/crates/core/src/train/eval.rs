use rayon::prelude::*;

use crate::bounds::certify;
use crate::data::DatasetHandle;
use crate::dln::local_tightness;
use crate::error::Result;
use crate::net::ReluNet;

fn fraction(hits: Vec<bool>) -> f64 {
    if hits.is_empty() {
        return 0.0;
    }
    hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64
}

pub fn standard_accuracy(net: &ReluNet, data: &DatasetHandle) -> Result<f64> {
    let hits = (0..data.len())
        .into_par_iter()
        .map(|i| Ok(net.predict(&data.inputs[i])? == data.labels[i]))
        .collect::<Result<Vec<bool>>>()?;
    Ok(fraction(hits))
}

/// Fraction of points whose whole `ε`-ball is certified for the true label.
pub fn certified_accuracy(net: &ReluNet, data: &DatasetHandle, eps: f64) -> Result<f64> {
    let hits = (0..data.len())
        .into_par_iter()
        .map(|i| certify(net, &data.inputs[i], eps, data.labels[i]))
        .collect::<Result<Vec<bool>>>()?;
    Ok(fraction(hits))
}

/// Mean over points of the output-averaged local tightness.
pub fn mean_local_tightness(net: &ReluNet, data: &DatasetHandle) -> Result<f64> {
    let taus = (0..data.len())
        .into_par_iter()
        .map(|i| Ok(local_tightness(net, &data.inputs[i])?.mean_tau))
        .collect::<Result<Vec<f64>>>()?;
    Ok(taus.iter().sum::<f64>() / taus.len().max(1) as f64)
}
