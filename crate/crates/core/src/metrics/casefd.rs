use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::frechet::{fit_stats, frechet_distance};
use crate::embed::FeatureExtractor;
use crate::error::{Error, Result};
use crate::types::{EmbeddingVector, ImagePatch};

fn widen(e: &[EmbeddingVector<f32>]) -> Vec<EmbeddingVector<f64>> {
    e.iter().map(|v| EmbeddingVector(v.0.iter().map(|x| *x as f64).collect())).collect()
}

/// Fréchet distance between two patch sets in the extractor's feature space.
pub fn case_fd(extractor: &dyn FeatureExtractor, a: &[ImagePatch], b: &[ImagePatch]) -> Result<f64> {
    let ea = widen(&extractor.extract_batch(a)?);
    let eb = widen(&extractor.extract_batch(b)?);
    frechet_distance(&fit_stats(&ea)?, &fit_stats(&eb)?)
}

/// Per-case distances and their aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseFdSummary {
    pub per_case: BTreeMap<String, f64>,
    pub mean: f64,
    pub median: f64,
}

impl CaseFdSummary {
    pub fn from_cases(per_case: BTreeMap<String, f64>) -> Result<Self> {
        if per_case.is_empty() {
            return Err(Error::invalid("no cases to aggregate"));
        }
        let mut v: Vec<f64> = per_case.values().copied().collect();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        let mean = v.iter().sum::<f64>() / n as f64;
        Ok(Self { per_case, mean, median })
    }
}

/// Groups both sets by case and computes one distance per case present in both.
pub fn case_fd_by_case(
    extractor: &dyn FeatureExtractor,
    source: &[ImagePatch],
    reference: &[ImagePatch],
) -> Result<CaseFdSummary> {
    let group = |set: &[ImagePatch]| {
        let mut m: BTreeMap<String, Vec<ImagePatch>> = BTreeMap::new();
        for p in set {
            m.entry(p.case_id.clone()).or_default().push(p.clone());
        }
        m
    };
    let src = group(source);
    let refs = group(reference);
    let mut per_case = BTreeMap::new();
    for (case, a) in &src {
        if let Some(b) = refs.get(case) {
            per_case.insert(case.clone(), case_fd(extractor, a, b)?);
        }
    }
    CaseFdSummary::from_cases(per_case)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{ClassLabel, Domain};

    /// Embeds a patch as its first `d` pixel values.
    struct Raw(usize);
    impl FeatureExtractor for Raw {
        fn name(&self) -> &str {
            "raw"
        }
        fn dim(&self) -> usize {
            self.0
        }
        fn extract_batch(&self, p: &[ImagePatch]) -> Result<Vec<EmbeddingVector<f32>>> {
            Ok(p.iter().map(|x| EmbeddingVector(x.pixels[..self.0].to_vec())).collect())
        }
    }

    fn patch(case: &str, v: f32, w: f32) -> ImagePatch {
        let mut px = vec![0.0; 12];
        px[0] = v;
        px[1] = w;
        ImagePatch::new(px, 2, 2, Domain::Ffpe, ClassLabel::A, case, format!("{case}-{v}-{w}")).unwrap()
    }

    #[test]
    fn identical_sets_have_zero_distance() {
        let set: Vec<ImagePatch> = (0..6).map(|i| patch("c1", i as f32 / 10.0, (i * i) as f32 / 50.0)).collect();
        assert!(case_fd(&Raw(2), &set, &set).unwrap() < 1e-6);
    }

    #[test]
    fn grouping_and_aggregation() {
        let mut src = Vec::new();
        let mut reference = Vec::new();
        for i in 0..5 {
            let (a, b) = (i as f32 / 10.0, (i % 3) as f32 / 10.0);
            src.push(patch("c1", a, b));
            reference.push(patch("c1", a, b));
            src.push(patch("c2", a + 0.3, b));
            reference.push(patch("c2", a, b));
            src.push(patch("c3", a, b));
        }
        let s = case_fd_by_case(&Raw(2), &src, &reference).unwrap();
        assert_eq!(s.per_case.len(), 2);
        assert!(s.per_case["c1"] < 1e-6);
        // a pure mean shift of 0.3 in one coordinate
        assert!((s.per_case["c2"] - 0.09).abs() < 1e-5, "{}", s.per_case["c2"]);
        assert!((s.mean - s.per_case["c2"] / 2.0).abs() < 1e-6);
        assert_eq!(s.mean, s.median);
    }

    #[test]
    fn median_of_odd_and_even() {
        let m = |v: &[f64]| {
            let cases = v.iter().enumerate().map(|(i, x)| (format!("c{i}"), *x)).collect();
            CaseFdSummary::from_cases(cases).unwrap().median
        };
        assert_eq!(m(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(m(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(CaseFdSummary::from_cases(BTreeMap::new()).is_err());
    }
}
