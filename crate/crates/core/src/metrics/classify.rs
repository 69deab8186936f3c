use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::backend::{encode_image, BackendDescriptor, BackendError, ClassifyRequest, ClassifyResponse, HttpClient};
use crate::dataio::{Label, RasterImage};
use crate::synth::{Zone, NUT_ZONE, PIN_ZONES};

const SCORE_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub label: Label,
    pub scores: BTreeMap<Label, f64>,
}

impl Classification {
    /// Exactly the three labels, each in [0, 1], summing to 1 ± 1e-6.
    pub fn check(&self) -> Result<(), BackendError> {
        if self.scores.len() != Label::ALL.len() {
            return Err(BackendError::MalformedResponse(format!("expected 3 scores, got {}", self.scores.len())));
        }
        if self.scores.values().any(|s| !(0.0..=1.0 + SCORE_TOLERANCE).contains(s)) {
            return Err(BackendError::MalformedResponse("score outside [0, 1]".into()));
        }
        let sum: f64 = self.scores.values().sum();
        if (sum - 1.0).abs() > SCORE_TOLERANCE {
            return Err(BackendError::MalformedResponse(format!("scores sum to {sum}")));
        }
        Ok(())
    }
}

pub trait ClassifierBackend: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;
    fn classify(&self, img: &RasterImage) -> Result<Classification, BackendError>;
}

/// Run a backend and enforce the score contract on its answer.
pub fn classify(backend: &dyn ClassifierBackend, img: &RasterImage) -> Result<Classification, MetricsError> {
    let c = backend.classify(img)?;
    c.check()?;
    Ok(c)
}

/// Rule-based classifier for the synthetic bolt fixtures.
///
/// A part counts as present in proportion to the fraction of dark pixels
/// (luma below `dark_below`) inside its zone. With pin presence `p` and nut
/// presence `q` the scores are `normal = p·q`, `pin_losing = (1 − p)·q` and
/// `nut_losing = 1 − q`; the label is the highest score.
#[derive(Clone, Copy, Debug)]
pub struct HeuristicClassifier {
    pub dark_below: u8,
}

impl Default for HeuristicClassifier {
    fn default() -> Self {
        Self { dark_below: 100 }
    }
}

impl HeuristicClassifier {
    fn dark_fraction(&self, luma: &RasterImage, zones: &[Zone]) -> f64 {
        let (mut dark, mut total) = (0u64, 0u64);
        for z in zones {
            let (x0, y0, x1, y1) = z.rect(luma.width(), luma.height());
            for y in y0..y1 {
                for x in x0..x1 {
                    total += 1;
                    dark += u64::from(luma.get(x, y, 0) < self.dark_below);
                }
            }
        }
        if total == 0 {
            0.0
        } else {
            dark as f64 / total as f64
        }
    }
}

impl ClassifierBackend for HeuristicClassifier {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::local("heuristic")
    }

    fn classify(&self, img: &RasterImage) -> Result<Classification, BackendError> {
        let luma = img.to_luma();
        let p = self.dark_fraction(&luma, &PIN_ZONES);
        let q = self.dark_fraction(&luma, &[NUT_ZONE]);
        let scores = BTreeMap::from([
            (Label::Normal, p * q),
            (Label::PinLosing, (1.0 - p) * q),
            (Label::NutLosing, 1.0 - q),
        ]);
        let label = Label::ALL
            .into_iter()
            .fold(Label::Normal, |best, l| if scores[&l] > scores[&best] { l } else { best });
        Ok(Classification { label, scores })
    }
}

/// Remote classifier speaking the `/v1/classify` protocol.
#[derive(Clone, Debug)]
pub struct HttpClassifier {
    client: HttpClient,
}

impl HttpClassifier {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self { client: HttpClient::new(base_url) }
    }

    pub fn with_client(client: HttpClient) -> Self {
        Self { client }
    }
}

impl ClassifierBackend for HttpClassifier {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor { name: format!("http:{}", self.client.base()), remote: true }
    }

    fn classify(&self, img: &RasterImage) -> Result<Classification, BackendError> {
        let resp: ClassifyResponse =
            self.client.post_json("/v1/classify", &ClassifyRequest { image: encode_image(img)? })?;
        let c = Classification { label: resp.label, scores: resp.scores };
        c.check()?;
        Ok(c)
    }
}
