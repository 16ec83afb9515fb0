//! Linear per-kernel latency predictors for CRACK and REFINE.
//!
//! Each kernel's latency is modeled as `w1 * compute + w2 * movement + b`,
//! with the two features derived from index cardinalities.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    GetLocalRegion,
    CommitReorgWithDyn,
    CommitReorgWithoutDyn,
    UpdateCentroids,
    LocalKmeans,
}

impl Kernel {
    pub const ALL: [Kernel; 5] = [
        Kernel::GetLocalRegion,
        Kernel::CommitReorgWithDyn,
        Kernel::CommitReorgWithoutDyn,
        Kernel::UpdateCentroids,
        Kernel::LocalKmeans,
    ];

    pub const CRACK: [Kernel; 3] = [Kernel::GetLocalRegion, Kernel::CommitReorgWithDyn, Kernel::UpdateCentroids];

    pub const REFINE: [Kernel; 3] = [Kernel::GetLocalRegion, Kernel::LocalKmeans, Kernel::CommitReorgWithoutDyn];

    pub fn name(self) -> &'static str {
        match self {
            Kernel::GetLocalRegion => "get_local_region",
            Kernel::CommitReorgWithDyn => "commit_reorg_with_dyn",
            Kernel::CommitReorgWithoutDyn => "commit_reorg_without_dyn",
            Kernel::UpdateCentroids => "update_centroids",
            Kernel::LocalKmeans => "local_kmeans",
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Kernel::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownKernel(s.to_string()))
    }
}

/// Cardinalities a kernel's features are computed from.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KernelInputs {
    /// |P|
    pub n_points: usize,
    /// |C|
    pub nlist: usize,
    pub dim: usize,
    /// |C_buffered|
    pub buffered: usize,
    /// |P_local|
    pub local_points: usize,
    /// |C_local|
    pub local_cracks: usize,
    /// |P_train|
    pub train_points: usize,
    pub n_iter: usize,
}

/// `(compute, movement)` features of `kernel`.
pub fn kernel_features(kernel: Kernel, x: &KernelInputs) -> (f64, f64) {
    let f = |v: usize| v as f64;
    let d = f(x.dim);
    match kernel {
        Kernel::GetLocalRegion => (f(x.buffered) * f(x.nlist), f(x.local_points) * d),
        Kernel::CommitReorgWithoutDyn => (
            f(x.local_points) * f(x.local_cracks) * d + f(x.nlist),
            f(x.local_points) * d,
        ),
        Kernel::CommitReorgWithDyn => (f(x.nlist), f(x.local_points) * d),
        Kernel::UpdateCentroids => (f(x.n_points) * d, (f(x.n_points) + f(x.nlist)) * d),
        Kernel::LocalKmeans => (f(x.n_iter) * f(x.train_points) * f(x.local_cracks) * d, f(x.nlist) * d),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSample {
    pub kernel: Kernel,
    pub compute: f64,
    pub movement: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelModel {
    pub kernel: Kernel,
    pub w1: f64,
    pub w2: f64,
    pub b: f64,
    pub r2: f64,
    pub rmse: f64,
    pub n: usize,
    /// The two features were collinear and only one was fitted.
    #[serde(default)]
    pub single_feature: bool,
}

impl KernelModel {
    pub fn predict(&self, compute: f64, movement: f64) -> f64 {
        (self.w1 * compute + self.w2 * movement + self.b).max(0.0)
    }
}

/// Ordinary least squares with intercept on two features.
///
/// Falls back to the single feature with the larger spread when the two are
/// (numerically) collinear, and to an intercept-only model when neither varies.
pub fn fit_kernel(kernel: Kernel, samples: &[KernelSample]) -> Result<KernelModel> {
    let rows: Vec<&KernelSample> = samples.iter().filter(|s| s.kernel == kernel).collect();
    let n = rows.len();
    if n < 3 {
        return Err(Error::CostModel(format!("{kernel}: need at least 3 samples, got {n}")));
    }
    let nf = n as f64;
    let mx = rows.iter().map(|s| s.compute).sum::<f64>() / nf;
    let my = rows.iter().map(|s| s.movement).sum::<f64>() / nf;
    let mt = rows.iter().map(|s| s.seconds).sum::<f64>() / nf;
    let (mut sxx, mut syy, mut sxy, mut sxt, mut syt, mut stt) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for s in &rows {
        let (x, y, t) = (s.compute - mx, s.movement - my, s.seconds - mt);
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
        sxt += x * t;
        syt += y * t;
        stt += t * t;
    }
    let det = sxx * syy - sxy * sxy;
    let (w1, w2, single_feature) = if sxx > 0.0 && syy > 0.0 && det > 1e-10 * sxx * syy {
        ((syy * sxt - sxy * syt) / det, (sxx * syt - sxy * sxt) / det, false)
    } else {
        // Compare spreads relative to magnitude so unit scale doesn't decide.
        let rel = |ss: f64, m: f64| if ss > 0.0 { ss / (m * m * nf).max(f64::MIN_POSITIVE) } else { 0.0 };
        if sxx > 0.0 && rel(sxx, mx) >= rel(syy, my) {
            (sxt / sxx, 0.0, true)
        } else if syy > 0.0 {
            (0.0, syt / syy, true)
        } else {
            (0.0, 0.0, true)
        }
    };
    let b = mt - w1 * mx - w2 * my;
    let sse: f64 = rows
        .iter()
        .map(|s| (s.seconds - (w1 * s.compute + w2 * s.movement + b)).powi(2))
        .sum();
    let r2 = if stt > 0.0 { 1.0 - sse / stt } else if sse == 0.0 { 1.0 } else { 0.0 };
    Ok(KernelModel {
        kernel,
        w1,
        w2,
        b,
        r2,
        rmse: (sse / nf).sqrt(),
        n,
        single_feature,
    })
}

/// Fits every kernel present in `samples`.
pub fn fit(samples: &[KernelSample]) -> Result<CostModel> {
    let mut models = Vec::new();
    for kernel in Kernel::ALL {
        if samples.iter().any(|s| s.kernel == kernel) {
            models.push(fit_kernel(kernel, samples)?);
        }
    }
    Ok(CostModel::from_models(models))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CostModel {
    models: BTreeMap<Kernel, KernelModel>,
}

impl CostModel {
    pub fn from_models(models: impl IntoIterator<Item = KernelModel>) -> Self {
        Self {
            models: models.into_iter().map(|m| (m.kernel, m)).collect(),
        }
    }

    /// Same coefficients for every kernel; handy for deterministic runs.
    pub fn uniform(w1: f64, w2: f64, b: f64) -> Self {
        Self::from_models(Kernel::ALL.map(|kernel| KernelModel {
            kernel,
            w1,
            w2,
            b,
            r2: 1.0,
            rmse: 0.0,
            n: 0,
            single_feature: false,
        }))
    }

    pub fn model(&self, kernel: Kernel) -> Option<&KernelModel> {
        self.models.get(&kernel)
    }

    pub fn models(&self) -> impl Iterator<Item = &KernelModel> {
        self.models.values()
    }

    pub fn is_complete(&self) -> bool {
        Kernel::ALL.iter().all(|k| self.models.contains_key(k))
    }

    pub fn ensure_complete(&self) -> Result<()> {
        match Kernel::ALL.iter().find(|k| !self.models.contains_key(k)) {
            Some(k) => Err(Error::CostModel(format!("no fitted model for {k}"))),
            None => Ok(()),
        }
    }

    pub fn estimate(&self, kernel: Kernel, inputs: &KernelInputs) -> Result<f64> {
        let m = self
            .models
            .get(&kernel)
            .ok_or_else(|| Error::CostModel(format!("no fitted model for {kernel}")))?;
        let (c, d) = kernel_features(kernel, inputs);
        Ok(m.predict(c, d))
    }

    pub fn estimate_crack(&self, inputs: &KernelInputs) -> Result<f64> {
        Kernel::CRACK.iter().map(|&k| self.estimate(k, inputs)).sum()
    }

    /// The local-region lookup of a refine always handles one "buffered" crack.
    pub fn estimate_refine(&self, inputs: &KernelInputs) -> Result<f64> {
        let inputs = KernelInputs { buffered: 1, ..*inputs };
        Kernel::REFINE.iter().map(|&k| self.estimate(k, &inputs)).sum()
    }

    /// One line per kernel: `kernel=<name> w1=.. w2=.. b=.. r2=.. rmse=.. n=..`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for m in self.models.values() {
            out.push_str(&format!(
                "kernel={} w1={} w2={} b={} r2={} rmse={} n={}\n",
                m.kernel, m.w1, m.w2, m.b, m.r2, m.rmse, m.n
            ));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut models = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = BTreeMap::new();
            for tok in line.split_whitespace() {
                let (k, v) = tok
                    .split_once('=')
                    .ok_or_else(|| Error::CostModel(format!("line {}: malformed field {tok:?}", lineno + 1)))?;
                fields.insert(k, v);
            }
            let get = |key: &str| {
                fields
                    .get(key)
                    .copied()
                    .ok_or_else(|| Error::CostModel(format!("line {}: missing {key}", lineno + 1)))
            };
            let num = |key: &str| -> Result<f64> {
                get(key)?
                    .parse()
                    .map_err(|_| Error::CostModel(format!("line {}: bad number for {key}", lineno + 1)))
            };
            models.push(KernelModel {
                kernel: get("kernel")?.parse()?,
                w1: num("w1")?,
                w2: num("w2")?,
                b: num("b")?,
                r2: num("r2")?,
                rmse: num("rmse")?,
                n: num("n")? as usize,
                single_feature: false,
            });
        }
        Ok(Self::from_models(models))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn local_kmeans_features() {
        let x = KernelInputs {
            n_iter: 10,
            train_points: 150,
            local_cracks: 3,
            dim: 8,
            nlist: 40,
            ..Default::default()
        };
        assert_eq!(kernel_features(Kernel::LocalKmeans, &x), (36000.0, 320.0));
    }

    #[test]
    fn local_region_compute_scales_with_buffer() {
        let x = KernelInputs {
            nlist: 120,
            local_points: 10,
            dim: 4,
            ..Default::default()
        };
        assert_eq!(kernel_features(Kernel::GetLocalRegion, &x).0, 0.0);
        let m = CostModel::uniform(1.0, 0.0, 0.0);
        // The refine estimate uses a single buffered crack: |C| * 1.
        let refine_region = m.estimate_refine(&x).unwrap() - m.estimate(Kernel::LocalKmeans, &x).unwrap()
            - m.estimate(Kernel::CommitReorgWithoutDyn, &x).unwrap();
        assert_eq!(refine_region, 120.0);
    }

    #[test]
    fn unknown_kernel_name() {
        assert!(matches!("nope".parse::<Kernel>(), Err(Error::UnknownKernel(_))));
        for k in Kernel::ALL {
            assert_eq!(k.name().parse::<Kernel>().unwrap(), k);
        }
    }

    #[test]
    fn zero_features_give_intercepts() {
        let m = CostModel::uniform(1.0, 1.0, 0.25);
        assert_eq!(m.estimate_crack(&KernelInputs::default()).unwrap(), 0.75);
        let neg = CostModel::uniform(1.0, 1.0, -0.25);
        assert_eq!(neg.estimate_crack(&KernelInputs::default()).unwrap(), 0.0);
    }

    #[test]
    fn text_round_trip() {
        let m = CostModel::from_models([KernelModel {
            kernel: Kernel::UpdateCentroids,
            w1: 1.25e-9,
            w2: -3.0e-10,
            b: 4.5e-6,
            r2: 0.87,
            rmse: 1e-5,
            n: 30,
            single_feature: false,
        }]);
        assert_eq!(CostModel::from_text(&m.to_text()).unwrap(), m);
        assert!(CostModel::from_text("kernel=local_kmeans w1=1").is_err());
        assert!(!m.is_complete());
        assert!(m.estimate(Kernel::LocalKmeans, &KernelInputs::default()).is_err());
    }

    #[test]
    fn collinear_features_fall_back() {
        let samples: Vec<KernelSample> = (1..=10)
            .map(|i| KernelSample {
                kernel: Kernel::UpdateCentroids,
                compute: i as f64,
                movement: 2.0 * i as f64,
                seconds: 3.0 * i as f64 + 1.0,
            })
            .collect();
        let m = fit_kernel(Kernel::UpdateCentroids, &samples).unwrap();
        assert!(m.single_feature);
        assert!((m.predict(4.0, 8.0) - 13.0).abs() < 1e-9);
        assert!(fit_kernel(Kernel::LocalKmeans, &samples).is_err());
    }
}
