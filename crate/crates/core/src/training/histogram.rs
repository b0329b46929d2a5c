use std::io::Write;

use serde::Serialize;

use crate::energy::Parameters;
use crate::numerics::Scalar;
use crate::{Error, Result};

/// Value distribution of one parameter tensor over `[min, max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightHistogram {
    pub param_id: String,
    pub min: f64,
    pub max: f64,
    pub counts: Vec<u64>,
    pub mean: f64,
    pub std: f64,
    /// Fraction of entries with `|w| < 1e-3`.
    pub frac_near_zero: f64,
}

pub fn export_weight_histograms<T: Scalar>(
    params: &Parameters<T>,
    bins: usize,
) -> Result<Vec<WeightHistogram>> {
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 bins, got {bins}")));
    }
    let mut out = Vec::new();
    for (id, t) in &params.tensors {
        let vals: Vec<f64> = t.data().iter().map(|v| v.as_f64()).collect();
        let n = vals.len().max(1) as f64;
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let mut counts = vec![0u64; bins];
        let width = max - min;
        for &v in &vals {
            let b = if width > 0.0 {
                (((v - min) / width) * bins as f64).floor() as usize
            } else {
                0
            };
            counts[b.min(bins - 1)] += 1;
        }
        out.push(WeightHistogram {
            param_id: id.clone(),
            min,
            max,
            counts,
            mean,
            std: var.sqrt(),
            frac_near_zero: vals.iter().filter(|v| v.abs() < 1e-3).count() as f64 / n,
        });
    }
    Ok(out)
}

#[derive(Serialize)]
struct Row<'a> {
    param_id: &'a str,
    bin: usize,
    bin_lo: f64,
    bin_hi: f64,
    count: u64,
    mean: f64,
    std: f64,
    frac_near_zero: f64,
}

/// One row per bin; the summary statistics repeat on every row of a parameter.
pub fn write_histograms_csv(hists: &[WeightHistogram], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for h in hists {
        let width = (h.max - h.min) / h.counts.len() as f64;
        for (bin, &count) in h.counts.iter().enumerate() {
            w.serialize(Row {
                param_id: &h.param_id,
                bin,
                bin_lo: h.min + width * bin as f64,
                bin_hi: h.min + width * (bin + 1) as f64,
                count,
                mean: h.mean,
                std: h.std,
                frac_near_zero: h.frac_near_zero,
            })
            .map_err(|e| Error::InvalidArgument(format!("histogram csv: {e}")))?;
        }
    }
    w.flush().map_err(|e| Error::io("flushing histogram csv", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use std::collections::BTreeMap;

    fn params(vals: Vec<f64>) -> Parameters<f64> {
        Parameters {
            tensors: BTreeMap::from([("w".into(), Tensor::new(vec![vals.len()], vals).unwrap())]),
            site_alpha: BTreeMap::new(),
        }
    }

    #[test]
    fn constant_tensor_fills_one_bin() {
        let h = &export_weight_histograms(&params(vec![0.3; 7]), 5).unwrap()[0];
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.counts.iter().sum::<u64>(), 7);
    }

    #[test]
    fn zero_tensor_is_all_near_zero() {
        let h = &export_weight_histograms(&params(vec![0.0; 4]), 3).unwrap()[0];
        assert_eq!(h.frac_near_zero, 1.0);
    }

    #[test]
    fn counts_sum_to_size() {
        let vals: Vec<f64> = (0..101).map(|i| (i as f64 * 0.37).sin()).collect();
        let h = &export_weight_histograms(&params(vals), 10).unwrap()[0];
        assert_eq!(h.counts.iter().sum::<u64>(), 101);
        assert!(h.counts[9] > 0 && h.counts[0] > 0);
    }

    #[test]
    fn one_bin_is_rejected() {
        assert!(export_weight_histograms(&params(vec![1.0]), 1).is_err());
    }

    #[test]
    fn csv_has_a_row_per_bin() {
        let hists = export_weight_histograms(&params(vec![0.0, 1.0]), 4).unwrap();
        let mut buf = Vec::new();
        write_histograms_csv(&hists, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }
}
