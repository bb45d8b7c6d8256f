//! Closed-form mean-pooling model and a Monte-Carlo probe of the
//! generalization gap under k-shot proxy sampling.

use num_bigint::BigUint;
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndiff::{sigmoid, Tensor};
use crate::train::seeded_rng;

fn inv_or_zero(x: f64) -> f64 {
    if x > 0.0 {
        1.0 / x
    } else {
        0.0
    }
}

fn degrees(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let rows = (0..x.rows()).map(|i| x.row(i).iter().sum()).collect();
    let mut cols = vec![0.0; x.cols()];
    for i in 0..x.rows() {
        for (c, v) in cols.iter_mut().zip(x.row(i)) {
            *c += v;
        }
    }
    (rows, cols)
}

/// One feature-to-feature round of mean pooling, `D_out⁻¹ Xᵀ D_in⁻¹ X` (`D×D`).
pub fn feature_transition(x: &Tensor) -> Result<Tensor> {
    let (d_in, d_out) = degrees(x);
    let mut scaled = x.clone();
    for (i, &d) in d_in.iter().enumerate() {
        scaled.row_mut(i).iter_mut().for_each(|v| *v *= inv_or_zero(d));
    }
    let mut t = x.t_matmul(&scaled)?;
    for (j, &d) in d_out.iter().enumerate() {
        t.row_mut(j).iter_mut().for_each(|v| *v *= inv_or_zero(d));
    }
    Ok(t)
}

/// Instance influence weights `C_L = (X D_out⁻¹ Xᵀ D_in⁻¹)^⌊L/2⌋` (`N×N`), so that
/// `C_L X = X (D_out⁻¹ Xᵀ D_in⁻¹ X)^⌊L/2⌋`. Zero degrees contribute nothing.
pub fn coefficients(x: &Tensor, layers: usize) -> Result<Tensor> {
    let (d_in, d_out) = degrees(x);
    let mut left = x.clone();
    for i in 0..x.rows() {
        for (v, d) in left.row_mut(i).iter_mut().zip(&d_out) {
            *v *= inv_or_zero(*d);
        }
    }
    let mut step = left.matmul_t(x)?;
    for i in 0..step.rows() {
        for (v, d) in step.row_mut(i).iter_mut().zip(&d_in) {
            *v *= inv_or_zero(*d);
        }
    }
    let mut c = Tensor::identity(x.rows());
    for _ in 0..layers / 2 {
        c = c.matmul(&step)?;
    }
    Ok(c)
}

/// `σ(C_L X Ψ)` for a `D×1` parameter, computed as `σ(X T^⌊L/2⌋ Ψ)`.
pub fn simplified_forward(x: &Tensor, psi: &Tensor, layers: usize) -> Result<Tensor> {
    Ok(simplified_logits(x, psi, layers)?.map(sigmoid))
}

/// Pre-activation of [`simplified_forward`] together with the effective design `X T^⌊L/2⌋`.
fn design(x: &Tensor, layers: usize) -> Result<Tensor> {
    let t = feature_transition(x)?;
    let mut a = x.clone();
    for _ in 0..layers / 2 {
        a = a.matmul(&t)?;
    }
    Ok(a)
}

fn simplified_logits(x: &Tensor, psi: &Tensor, layers: usize) -> Result<Tensor> {
    if psi.shape() != (x.cols(), 1) {
        return Err(Error::shape(
            "simplified_forward",
            format!("parameter {:?} for {} features", psi.shape(), x.cols()),
        ));
    }
    design(x, layers)?.matmul(psi)
}

/// Number of distinct proxy matrices: `C(d,k)`, times `C(N,B)` with batching.
pub fn proxy_space_size(d: usize, k: usize, n: usize, b: usize, with_batching: bool) -> Result<BigUint> {
    if k > d || (with_batching && b > n) {
        return Err(Error::invalid(format!(
            "invalid proxy space: d={d} k={k} N={n} B={b}"
        )));
    }
    let features = binomial(d, k);
    Ok(if with_batching { features * binomial(n, b) } else { features })
}

/// Exact binomial coefficient; zero when `k > n`.
pub fn binomial(n: usize, k: usize) -> BigUint {
    if k > n {
        return BigUint::from(0u32);
    }
    let k = k.min(n - k);
    let mut acc = BigUint::from(1u32);
    for i in 0..k {
        acc *= BigUint::from(n - i);
        acc /= BigUint::from(i + 1);
    }
    acc
}

/// Rows of i.i.d. uniform categorical raw features with labels drawn from a
/// fixed logistic rule over the one-hot vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub raw_features: usize,
    pub cardinality: usize,
    /// Category of each raw feature per row.
    pub values: Vec<Vec<usize>>,
    pub labels: Vec<f64>,
}

/// Weights of the labelling rule, one per one-hot feature.
pub fn labelling_rule(raw_features: usize, cardinality: usize, scale: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..raw_features * cardinality)
        .map(|_| scale * (2.0 * rng.gen::<f64>() - 1.0))
        .collect()
}

impl SyntheticTask {
    pub fn generate(rule: &[f64], raw_features: usize, cardinality: usize, rows: usize, rng: &mut impl Rng) -> Result<Self> {
        if rule.len() != raw_features * cardinality || cardinality == 0 {
            return Err(Error::invalid("labelling rule does not match the feature layout"));
        }
        let mut values = Vec::with_capacity(rows);
        let mut labels = Vec::with_capacity(rows);
        for _ in 0..rows {
            let v: Vec<usize> = (0..raw_features).map(|_| rng.gen_range(0..cardinality)).collect();
            let logit: f64 = v.iter().enumerate().map(|(m, &c)| rule[m * cardinality + c]).sum();
            labels.push(f64::from(u8::from(rng.gen::<f64>() < sigmoid(logit))));
            values.push(v);
        }
        Ok(SyntheticTask {
            raw_features,
            cardinality,
            values,
            labels,
        })
    }

    pub fn features(&self) -> usize {
        self.raw_features * self.cardinality
    }

    /// Dense proxy matrix over `rows`, keeping only the one-hot blocks of `raws`.
    pub fn proxy(&self, rows: &[usize], raws: &[usize]) -> (Tensor, Vec<f64>) {
        let mut x = Tensor::zeros(rows.len(), self.features());
        for (r, &i) in rows.iter().enumerate() {
            for &m in raws {
                x.set(r, m * self.cardinality + self.values[i][m], 1.0);
            }
        }
        (x, rows.iter().map(|&i| self.labels[i]).collect())
    }
}

/// Parameters of the gap probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapConfig {
    pub raw_features: usize,
    pub cardinality: usize,
    pub batch: usize,
    pub steps: usize,
    pub seeds: usize,
    /// First seed; seeds run `seed_offset..seed_offset + seeds`.
    pub seed_offset: u64,
    pub train_rows: usize,
    pub heldout_rows: usize,
    pub layers: usize,
    pub learning_rate: f64,
    /// Proxy matrices drawn for each risk estimate.
    pub eval_samples: usize,
    /// Predicted probabilities are clipped to `[clip, 1 − clip]`, bounding the loss by `−ln clip`.
    pub clip: f64,
    pub rule_scale: f64,
    pub rule_seed: u64,
}

impl Default for GapConfig {
    fn default() -> Self {
        GapConfig {
            raw_features: 12,
            cardinality: 4,
            batch: 32,
            steps: 300,
            seeds: 20,
            seed_offset: 0,
            train_rows: 96,
            heldout_rows: 2000,
            layers: 2,
            learning_rate: 0.5,
            eval_samples: 200,
            clip: 1e-3,
            rule_scale: 1.0,
            rule_seed: 7,
        }
    }
}

impl GapConfig {
    pub fn validate(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.raw_features {
            return Err(Error::invalid(format!("k = {k} outside 1..={}", self.raw_features)));
        }
        if self.batch == 0 || self.batch > self.train_rows || self.batch > self.heldout_rows {
            return Err(Error::invalid("batch must be positive and at most the row counts"));
        }
        if self.seeds == 0 || self.eval_samples == 0 || self.cardinality == 0 {
            return Err(Error::invalid("seeds, evaluation samples and cardinality must be positive"));
        }
        if !(self.clip > 0.0 && self.clip < 0.5) || !(self.learning_rate >= 0.0) {
            return Err(Error::invalid("clip must lie in (0, 0.5) and the learning rate be non-negative"));
        }
        Ok(())
    }

    /// Upper bound of the clipped loss.
    pub fn loss_bound(&self) -> f64 {
        -self.clip.ln()
    }
}

/// Risks of one seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapSample {
    pub seed: u64,
    pub empirical_risk: f64,
    pub heldout_risk: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    pub k: usize,
    pub samples: Vec<GapSample>,
    pub empirical_risk: f64,
    pub heldout_risk: f64,
    pub gap_mean: f64,
    pub gap_stderr: f64,
    pub gap_median: f64,
}

fn clipped_loss(logit: f64, y: f64, clip: f64) -> (f64, bool) {
    let p = sigmoid(logit);
    let clipped = p.clamp(clip, 1.0 - clip);
    let loss = -(y * clipped.ln() + (1.0 - y) * (1.0 - clipped).ln());
    (loss, clipped == p)
}

fn sample_proxy(task: &SyntheticTask, batch: usize, k: usize, rng: &mut impl Rng) -> (Tensor, Vec<f64>) {
    let rows = index::sample(rng, task.values.len(), batch).into_vec();
    let mut raws = index::sample(rng, task.raw_features, k).into_vec();
    raws.sort_unstable();
    task.proxy(&rows, &raws)
}

fn mean_risk(task: &SyntheticTask, psi: &Tensor, k: usize, config: &GapConfig, rng: &mut impl Rng) -> Result<f64> {
    let mut total = 0.0;
    for _ in 0..config.eval_samples {
        let (x, y) = sample_proxy(task, config.batch, k, rng);
        let logits = simplified_logits(&x, psi, config.layers)?;
        let sum: f64 = logits
            .as_slice()
            .iter()
            .zip(&y)
            .map(|(&l, &t)| clipped_loss(l, t, config.clip).0)
            .sum();
        total += sum / y.len() as f64;
    }
    Ok(total / config.eval_samples as f64)
}

/// Trains the simplified model with `config.steps` SGD steps on sampled proxy
/// matrices, starting from zero.
pub fn train_simplified(task: &SyntheticTask, k: usize, config: &GapConfig, rng: &mut impl Rng) -> Result<Tensor> {
    let mut psi = Tensor::zeros(task.features(), 1);
    for _ in 0..config.steps {
        let (x, y) = sample_proxy(task, config.batch, k, rng);
        let a = design(&x, config.layers)?;
        let logits = a.matmul(&psi)?;
        let residual: Vec<f64> = logits
            .as_slice()
            .iter()
            .zip(&y)
            .map(|(&l, &t)| {
                let (_, active) = clipped_loss(l, t, config.clip);
                if active {
                    (sigmoid(l) - t) / y.len() as f64
                } else {
                    0.0
                }
            })
            .collect();
        let grad = a.t_matmul(&Tensor::from_vec(residual.len(), 1, residual)?)?;
        for (p, g) in psi.as_mut_slice().iter_mut().zip(grad.as_slice()) {
            *p -= config.learning_rate * g;
        }
    }
    Ok(psi)
}

/// Risks of one seed: training rows for the empirical risk, fresh rows for the held-out risk.
pub fn gap_for_seed(k: usize, seed: u64, config: &GapConfig) -> Result<GapSample> {
    config.validate(k)?;
    let rule = labelling_rule(
        config.raw_features,
        config.cardinality,
        config.rule_scale,
        &mut seeded_rng(config.rule_seed, 0),
    );
    let mut data_rng: ChaCha8Rng = seeded_rng(seed, 10);
    let train = SyntheticTask::generate(&rule, config.raw_features, config.cardinality, config.train_rows, &mut data_rng)?;
    let heldout = SyntheticTask::generate(&rule, config.raw_features, config.cardinality, config.heldout_rows, &mut data_rng)?;
    let mut rng = seeded_rng(seed, 11 + k as u64);
    let psi = train_simplified(&train, k, config, &mut rng)?;
    let empirical_risk = mean_risk(&train, &psi, k, config, &mut rng)?;
    let heldout_risk = mean_risk(&heldout, &psi, k, config, &mut rng)?;
    Ok(GapSample {
        seed,
        empirical_risk,
        heldout_risk,
        gap: heldout_risk - empirical_risk,
    })
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Gap statistics for `k` across `config.seeds` seeds.
pub fn estimate_gap(k: usize, config: &GapConfig) -> Result<GapEstimate> {
    config.validate(k)?;
    let samples = (0..config.seeds as u64)
        .map(|s| gap_for_seed(k, config.seed_offset + s, config))
        .collect::<Result<Vec<_>>>()?;
    let n = samples.len() as f64;
    let gaps: Vec<f64> = samples.iter().map(|s| s.gap).collect();
    let gap_mean = gaps.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        gaps.iter().map(|g| (g - gap_mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(GapEstimate {
        k,
        empirical_risk: samples.iter().map(|s| s.empirical_risk).sum::<f64>() / n,
        heldout_risk: samples.iter().map(|s| s.heldout_risk).sum::<f64>() / n,
        gap_mean,
        gap_stderr: (var / n).sqrt(),
        gap_median: median(&gaps),
        samples,
    })
}

/// Tab-separated table with one row per (d, k, seed).
pub fn gap_table(d: usize, estimates: &[GapEstimate]) -> String {
    let mut out = String::from("d\tk\tseed\tempirical_risk\theldout_risk\tgap\n");
    for e in estimates {
        for s in &e.samples {
            out.push_str(&format!(
                "{d}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\n",
                e.k, s.seed, s.empirical_risk, s.heldout_risk, s.gap
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomials() {
        assert_eq!(binomial(5, 5), BigUint::from(1u32));
        assert_eq!(binomial(22, 17), BigUint::from(26_334u32));
        assert_eq!(proxy_space_size(4, 2, 6, 3, true).unwrap(), BigUint::from(120u32));
        assert!(proxy_space_size(3, 4, 1, 1, false).is_err());
    }

    #[test]
    fn all_ones_coefficients() {
        let x = Tensor::filled(2, 2, 1.0);
        let c = coefficients(&x, 2).unwrap();
        assert_eq!(c.as_slice(), &[0.5, 0.5, 0.5, 0.5]);
        assert_eq!(coefficients(&x, 1).unwrap(), Tensor::identity(2));
    }

    #[test]
    fn zero_parameter_predicts_half() {
        let x = Tensor::filled(3, 4, 1.0);
        let p = simplified_forward(&x, &Tensor::zeros(4, 1), 2).unwrap();
        assert!(p.as_slice().iter().all(|&v| v == 0.5));
    }
}
