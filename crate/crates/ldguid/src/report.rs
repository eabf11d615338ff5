//! Metrics reports, the β-sweep CSV and the aggregate table.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ldguid_core::evalkit::SweepRow;
use ldguid_core::metrics::{mean_std, Confusion};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::welch_one_sided;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerSeed {
    pub iou: Vec<f64>,
    pub f1: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub dataset: String,
    pub dataset_hash: String,
    pub split: String,
    pub seeds: Vec<u64>,
    pub per_seed: PerSeed,
    /// Test-set confusion counts pooled over all pixels, one entry per seed.
    pub confusion: Vec<Confusion>,
    pub mean_iou: f64,
    pub std_iou: f64,
    pub mean_f1: f64,
    pub std_f1: f64,
    /// Method name of the comparison report, if one was given.
    pub baseline: Option<String>,
    /// One-sided Welch p-value on per-seed IoU for this method over the
    /// baseline; null without a baseline or with fewer than two seeds on
    /// either side.
    pub p_value: Option<f64>,
    pub conventions: String,
    #[serde(default)]
    pub error_maps: Vec<String>,
    /// Resolved configuration of every evaluated checkpoint, in seed order.
    pub provenance: Vec<serde_json::Value>,
}

pub const CONVENTIONS: &str = "IoU = tp/(tp+fp+fn), F1 = 2tp/(2tp+fp+fn), both 1 when tp+fp+fn = 0; \
counts pooled over all test pixels per seed; std is the sample std (n-1), 0 for one seed; \
p_value is a one-sided Welch t-test on per-seed IoU, method > baseline.";

impl MetricsReport {
    pub fn new(method: String, dataset: String, dataset_hash: String, split: String, seeds: Vec<u64>, confusion: Vec<Confusion>) -> Self {
        let per_seed = PerSeed { iou: confusion.iter().map(Confusion::iou).collect(), f1: confusion.iter().map(Confusion::f1).collect() };
        let (mean_iou, std_iou) = mean_std(&per_seed.iou);
        let (mean_f1, std_f1) = mean_std(&per_seed.f1);
        Self {
            method,
            dataset,
            dataset_hash,
            split,
            seeds,
            per_seed,
            confusion,
            mean_iou,
            std_iou,
            mean_f1,
            std_f1,
            baseline: None,
            p_value: None,
            conventions: CONVENTIONS.into(),
            error_maps: Vec::new(),
            provenance: Vec::new(),
        }
    }

    /// Records `baseline` and, when both sides have two or more seeds, the p-value.
    pub fn compare_to(&mut self, baseline: &MetricsReport) -> Result<()> {
        self.baseline = Some(baseline.method.clone());
        self.p_value = match welch_one_sided(&self.per_seed.iou, &baseline.per_seed.iou) {
            Ok(p) => Some(p),
            Err(Error::TooFewSamples { .. }) => None,
            Err(e) => return Err(e),
        };
        Ok(())
    }

    pub fn validate(&self, path: &Path) -> Result<()> {
        let n = self.seeds.len();
        if self.per_seed.iou.len() != n || self.per_seed.f1.len() != n {
            return Err(Error::malformed(path, "per_seed lengths differ from the seed list"));
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let all = self.per_seed.iou.iter().chain(&self.per_seed.f1).chain([&self.mean_iou, &self.mean_f1]);
        if !all.copied().all(unit) || self.std_iou < 0.0 || self.std_f1 < 0.0 || !self.p_value.map_or(true, unit) {
            return Err(Error::malformed(path, "metric outside its range"));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::dataset::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        let r: Self = serde_json::from_str(&text).map_err(|e| Error::malformed(path, e))?;
        r.validate(path)?;
        Ok(r)
    }
}

/// Full-scale values published for the β ablation, kept apart from measured
/// desk-scale numbers.
pub const FULL_SCALE_SWEEP_REFERENCE: [SweepRow; 4] = [
    SweepRow { beta: 0.1, rec_loss: 7.40e-6, adv_loss: 0.330 },
    SweepRow { beta: 0.5, rec_loss: 6.12e-6, adv_loss: 0.314 },
    SweepRow { beta: 1.5, rec_loss: 6.14e-6, adv_loss: 0.294 },
    SweepRow { beta: 5.0, rec_loss: 6.74e-5, adv_loss: 0.311 },
];

/// Provenance written next to a sweep CSV as `<csv>.meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepMeta {
    pub dataset: String,
    pub dataset_hash: String,
    pub seed: u64,
    pub resolved_config: serde_json::Value,
    pub full_scale_reference: Vec<SweepRow>,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("beta,rec_loss,adv_loss\n");
    for r in rows {
        // `{:?}` on f64 is the shortest representation that parses back exactly.
        writeln!(s, "{:?},{:?},{:?}", r.beta, r.rec_loss, r.adv_loss).expect("write to String");
    }
    s
}

pub fn parse_sweep_csv(text: &str, path: &Path) -> Result<Vec<SweepRow>> {
    let mut lines = text.lines();
    if lines.next() != Some("beta,rec_loss,adv_loss") {
        return Err(Error::malformed(path, "missing sweep header"));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(str::parse).collect::<Result<_, _>>().map_err(|e| Error::malformed(path, e))?;
            match v[..] {
                [beta, rec_loss, adv_loss] => Ok(SweepRow { beta, rec_loss, adv_loss }),
                _ => Err(Error::malformed(path, format!("expected 3 columns: {l}"))),
            }
        })
        .collect()
}

pub fn sweep_meta_path(csv: &Path) -> std::path::PathBuf {
    let mut name = csv.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    csv.with_file_name(name)
}

pub fn write_sweep(csv: &Path, rows: &[SweepRow], meta: &SweepMeta) -> Result<()> {
    if let Some(dir) = csv.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    fs::write(csv, sweep_csv(rows)).map_err(Error::io(csv))?;
    crate::dataset::write_json(&sweep_meta_path(csv), meta)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One row per report: method, dataset, seed count, mean and std of IoU and F1, baseline, p-value.
pub fn table_csv(reports: &[MetricsReport]) -> String {
    let mut s = String::from("method,dataset,n_seeds,mean_iou,std_iou,mean_f1,std_f1,baseline,p_value\n");
    for r in reports {
        writeln!(
            s,
            "{},{},{},{:?},{:?},{:?},{:?},{},{}",
            csv_field(&r.method),
            csv_field(&r.dataset),
            r.seeds.len(),
            r.mean_iou,
            r.std_iou,
            r.mean_f1,
            r.std_f1,
            csv_field(r.baseline.as_deref().unwrap_or("")),
            r.p_value.map(|p| format!("{p:?}")).unwrap_or_default()
        )
        .expect("write to String");
    }
    s
}

/// Human-readable `mean ± std` lines, IoU and F1 in percent.
pub fn table_text(reports: &[MetricsReport]) -> String {
    let mut s = String::new();
    for r in reports {
        let p = r.p_value.map(|p| format!("  p={p:.3e} vs {}", r.baseline.as_deref().unwrap_or("?"))).unwrap_or_default();
        writeln!(
            s,
            "{:<28} IoU {:6.2} ± {:5.2}  F1 {:6.2} ± {:5.2}  (n={}){p}",
            r.method,
            100.0 * r.mean_iou,
            100.0 * r.std_iou,
            100.0 * r.mean_f1,
            100.0 * r.std_f1,
            r.seeds.len()
        )
        .expect("write to String");
    }
    s
}
