use sbde::backend::BackendDescriptor;
use sbde::dataio::DatasetManifest;
use sbde::editpipe::{HarmonicInpainter, HttpInpainter, IdentityInpainter, InpainterBackend};
use sbde::metrics::{ClassifierBackend, HeuristicClassifier, HttpClassifier};
use sbde::segpipe::{HttpSegmenter, OracleSegmenter, SegmenterBackend, ThresholdSegmenter};
use serde::Serialize;

use crate::config::{check_backend, remote_url, CLASSIFY_BUILTINS, INPAINT_BUILTINS, SEGMENT_BUILTINS};
use crate::error::{input, CliError};

/// Backend identity as recorded in `run.json`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BackendInfo {
    pub stage: &'static str,
    pub spec: String,
    pub name: String,
    pub remote: bool,
}

impl BackendInfo {
    fn new(stage: &'static str, spec: &str, d: BackendDescriptor) -> Self {
        Self { stage, spec: spec.to_string(), name: d.name, remote: d.remote }
    }
}

/// The oracle reads ground-truth masks from `manifest`.
pub fn segmenter(
    spec: &str,
    manifest: Option<&DatasetManifest>,
) -> Result<(Box<dyn SegmenterBackend>, BackendInfo), CliError> {
    check_backend("segment", spec, &SEGMENT_BUILTINS).map_err(|e| CliError::Usage(e.to_string()))?;
    let backend: Box<dyn SegmenterBackend> = match (remote_url(spec), spec) {
        (Some(url), _) => Box::new(HttpSegmenter::new(url)),
        (None, "oracle") => {
            let m = manifest.ok_or_else(|| CliError::Usage("oracle segmenter needs a manifest".into()))?;
            Box::new(OracleSegmenter::from_manifest(m).map_err(input)?)
        }
        _ => Box::new(ThresholdSegmenter),
    };
    let info = BackendInfo::new("segment", spec, backend.descriptor());
    Ok((backend, info))
}

pub fn inpainter(spec: &str) -> Result<(Box<dyn InpainterBackend>, BackendInfo), CliError> {
    check_backend("inpaint", spec, &INPAINT_BUILTINS).map_err(|e| CliError::Usage(e.to_string()))?;
    let backend: Box<dyn InpainterBackend> = match (remote_url(spec), spec) {
        (Some(url), _) => Box::new(HttpInpainter::new(url)),
        (None, "identity") => Box::new(IdentityInpainter),
        _ => Box::new(HarmonicInpainter::default()),
    };
    let info = BackendInfo::new("inpaint", spec, backend.descriptor());
    Ok((backend, info))
}

pub fn classifier(spec: &str) -> Result<(Box<dyn ClassifierBackend>, BackendInfo), CliError> {
    check_backend("classify", spec, &CLASSIFY_BUILTINS).map_err(|e| CliError::Usage(e.to_string()))?;
    let backend: Box<dyn ClassifierBackend> = match remote_url(spec) {
        Some(url) => Box::new(HttpClassifier::new(url)),
        None => Box::new(HeuristicClassifier::default()),
    };
    let info = BackendInfo::new("classify", spec, backend.descriptor());
    Ok((backend, info))
}
