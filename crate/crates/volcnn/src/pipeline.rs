//! Data preparation (synthesis, preprocessing) and embedding export.

use std::path::{Path, PathBuf};

use volcnn_core::dataset::{generate_synthetic, synthetic_records, SampleRecord, SyntheticSpec};
use volcnn_core::metrics::{tsne, TsneConfig};
use volcnn_core::nn::{Batch5D, Model};
use volcnn_core::volume::{normalize_intensity, resize, Dims, NormalizeMode, Volume3D};
use volcnn_core::Label;

use crate::error::Result;
use crate::format::{read_provenance, write_volume, Provenance};
use crate::manifest::{load_manifest, write_manifest};
use crate::tables::{write_embeddings, EmbeddingRow};

/// Generates a synthetic cohort into `dir` (one volume per sample plus
/// `manifest.csv`) and returns the manifest path.
pub fn synthesize(spec: &SyntheticSpec, dir: &Path, prefix: &str, cohort_tag: &str) -> Result<PathBuf> {
    let set = generate_synthetic(spec)?;
    let records = synthetic_records(&set, prefix, cohort_tag);
    for (record, (vol, label)) in records.iter().zip(&set) {
        let prov = Provenance::new(&record.id)
            .with_step(format!("synthetic seed={} label={} noise_sigma={}", spec.seed, label.name(), spec.noise_sigma));
        write_volume(&dir.join(&record.path), vol, &prov)?;
    }
    let manifest = dir.join("manifest.csv");
    write_manifest(&manifest, &records)?;
    log::info!("wrote {} synthetic volumes ({}) to {}", records.len(), spec.dims, dir.display());
    Ok(manifest)
}

/// Resamples a volume to `dims` and normalizes its nonzero support.
pub fn preprocess_volume(vol: &Volume3D, dims: Dims, mode: NormalizeMode) -> Result<(Volume3D, Vec<String>)> {
    let mut steps = Vec::new();
    let resized = if vol.dims() == dims {
        vol.clone()
    } else {
        steps.push(format!("resize {} -> {dims} (trilinear)", vol.dims()));
        resize(vol, dims)?
    };
    let n = normalize_intensity(&resized, mode)?;
    let mode_name = match mode {
        NormalizeMode::Standardize => "standardize",
        NormalizeMode::CenterOnly => "center_only",
    };
    steps.push(format!("normalize {mode_name} mean={} std={}{}", n.mean, n.std, if n.degenerate { " degenerate" } else { "" }));
    Ok((n.volume, steps))
}

/// Preprocesses every volume of `manifest` into `dir`, writing a new manifest
/// whose records keep the ids, labels and cohort tags.
pub fn preprocess_manifest(manifest: &Path, dir: &Path, dims: Dims, mode: NormalizeMode) -> Result<PathBuf> {
    let m = load_manifest(manifest)?;
    let mut out = Vec::with_capacity(m.records.len());
    for r in &m.records {
        let src = m.resolve(r);
        let vol = crate::format::read_volume(&src)?;
        let mut prov = read_provenance(&src).unwrap_or_else(|_| Provenance::new(&r.id));
        let (vol, steps) = preprocess_volume(&vol, dims, mode)?;
        prov.steps.extend(steps);
        let path = format!("{}.vol", r.id);
        write_volume(&dir.join(&path), &vol, &prov)?;
        out.push(SampleRecord { path, ..r.clone() });
    }
    let path = dir.join("manifest.csv");
    write_manifest(&path, &out)?;
    log::info!("preprocessed {} volumes to {dims} in {}", out.len(), dir.display());
    Ok(path)
}

/// Up to `max` items, evenly spaced, in original order.
fn subsample<T: Clone>(items: &[T], max: usize) -> Vec<T> {
    if items.len() <= max {
        return items.to_vec();
    }
    (0..max).map(|i| items[i * items.len() / max].clone()).collect()
}

/// Projects every conv layer's flattened activations of the given splits to
/// 2D, writing one CSV row per (layer, sample). Each split is evenly
/// subsampled to at most `max_per_split` samples.
pub fn export_embeddings(
    model: &Model,
    splits: &[(&str, Vec<(String, Volume3D, Label)>)],
    max_per_split: usize,
    cfg: &TsneConfig,
    path: &Path,
) -> Result<Vec<EmbeddingRow>> {
    let mut tags = Vec::new();
    let mut layers: Vec<Vec<Vec<f64>>> = Vec::new();
    for (split, samples) in splits {
        for chunk in subsample(samples, max_per_split).chunks(16) {
            let batch = Batch5D::from_volumes(chunk.iter().map(|s| &s.1))?;
            let fwd = model.infer_with_embeddings(&batch)?;
            layers.resize_with(fwd.embeddings.len(), Vec::new);
            for (layer, emb) in fwd.embeddings.iter().enumerate() {
                layers[layer].extend(emb.data().chunks(emb.sample_len()).map(<[f64]>::to_vec));
            }
            tags.extend(chunk.iter().map(|s| (split.to_string(), s.0.clone(), s.2)));
        }
    }
    let mut rows = Vec::new();
    for (layer, points) in layers.iter().enumerate() {
        // keep perplexity valid for small exports
        let perplexity = cfg.perplexity.min((points.len() as f64 - 1.0) / 3.0).max(1.5);
        let res = tsne(points, &TsneConfig { perplexity, ..cfg.clone() })?;
        log::info!("layer {}: t-SNE of {} points, final KL {:?}", layer + 1, points.len(), res.kl_trace.last());
        for ((split, id, label), c) in tags.iter().zip(&res.coords) {
            rows.push(EmbeddingRow { layer: layer + 1, split: split.clone(), id: id.clone(), label: *label, x: c[0], y: c[1] });
        }
    }
    write_embeddings(path, &rows)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::load_manifest;

    #[test]
    fn synth_then_preprocess() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec { dims: Dims::new(8, 8, 6), n_per_class: [2, 3], ..Default::default() };
        let m = synthesize(&spec, &dir.path().join("raw"), "syn", "synthetic").unwrap();
        let man = load_manifest(&m).unwrap();
        assert_eq!(man.class_totals(), [2, 3]);
        let p = preprocess_manifest(&m, &dir.path().join("pre"), Dims::new(6, 6, 5), NormalizeMode::Standardize).unwrap();
        let pre = load_manifest(&p).unwrap();
        let vols = pre.load_volumes().unwrap();
        assert!(vols.iter().all(|v| v.dims() == Dims::new(6, 6, 5)));
        let prov = read_provenance(&pre.resolve(&pre.records[0])).unwrap();
        assert_eq!(prov.source_id, pre.records[0].id);
        assert_eq!(prov.steps.len(), 3);
    }

    #[test]
    fn subsample_is_even() {
        let v: Vec<usize> = (0..10).collect();
        assert_eq!(subsample(&v, 4), [0, 2, 5, 7]);
        assert_eq!(subsample(&v, 20).len(), 10);
    }
}
