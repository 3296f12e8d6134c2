//! Synthetic image generation and curation.
//!
//! A [`GenerationProvider`] turns a prompt into encoded images. Two providers
//! ship with the crate: a deterministic procedural [`StubProvider`] used by
//! tests and offline runs, and an HTTP client (`remote` feature).

use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::dataset::ClassLabel;
use crate::error::{Error, Result};
use crate::raster::Raster;

mod curate;
mod prompt;
#[cfg(feature = "remote")]
mod remote;
mod stub;

pub use curate::{crop_lower_fraction, curate_dataset, Curated, CurationConfig, Rejection};
pub use prompt::{build_prompt, class_of_prompt};
#[cfg(feature = "remote")]
pub use remote::{RemoteProvider, TOKEN_ENV};
pub use stub::{BlobSpec, StubMetadata, StubProvider};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub count: usize,
    pub target_class: ClassLabel,
    pub session_tag: String,
}

impl GenerationRequest {
    pub fn new(target_class: ClassLabel, count: usize, session_tag: impl Into<String>) -> Self {
        GenerationRequest {
            prompt: prompt::build_prompt(target_class, count),
            count,
            target_class,
            session_tag: session_tag.into(),
        }
    }

    fn check(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::invalid("generation count must be at least 1"));
        }
        if self.prompt.trim().is_empty() {
            return Err(Error::invalid("generation prompt is empty"));
        }
        Ok(())
    }
}

/// A generated image as received, before curation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    pub pixels: Raster,
    pub provider_metadata: String,
}

/// Encoded image plus free-form metadata, as returned by a provider.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderImage {
    pub bytes: Vec<u8>,
    pub metadata: String,
}

#[derive(Debug)]
pub enum ProviderError {
    /// Retryable; any images that did arrive are carried along.
    Transport {
        message: String,
        partial: Vec<ProviderImage>,
    },
    /// The provider declined the request.
    Refused(String),
}

pub trait GenerationProvider: Send + Sync {
    fn name(&self) -> &str;

    /// One round trip. May return fewer than `count` images. `tag` uniquely
    /// names the round trip within a run.
    fn request(
        &self,
        prompt: &str,
        count: usize,
        tag: &str,
    ) -> std::result::Result<Vec<ProviderImage>, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            base_delay_ms: 500,
            max_delay_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        let ms = self
            .base_delay_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.max_delay_ms);
        Duration::from_millis(ms)
    }
}

fn decode_all(images: Vec<ProviderImage>, provider: &str) -> Result<Vec<RawImage>> {
    images
        .into_iter()
        .map(|img| {
            let pixels = Raster::decode(&img.bytes).map_err(|message| Error::Decode {
                path: PathBuf::from(format!("<{provider} response>")),
                message,
            })?;
            Ok(RawImage {
                pixels,
                provider_metadata: img.metadata,
            })
        })
        .collect()
}

fn persist(raw_dir: &Path, tag: &str, start: usize, images: &[RawImage]) -> Result<()> {
    std::fs::create_dir_all(raw_dir).map_err(|e| Error::io(raw_dir, e))?;
    for (k, img) in images.iter().enumerate() {
        let stem = format!("{tag}-{:03}", start + k);
        img.pixels.save_png(&raw_dir.join(format!("{stem}.png")))?;
        let meta = raw_dir.join(format!("{stem}.meta"));
        std::fs::write(&meta, &img.provider_metadata).map_err(|e| Error::io(&meta, e))?;
    }
    Ok(())
}

/// Issue one generation request, retrying transport failures with bounded
/// exponential backoff. Returns up to `request.count` images; the caller loops
/// until its quota is met. When `raw_dir` is given every received image and
/// its metadata are written there before returning.
pub fn request_batch(
    provider: &dyn GenerationProvider,
    request: &GenerationRequest,
    retry: RetryPolicy,
    raw_dir: Option<&Path>,
) -> Result<Vec<RawImage>> {
    request.check()?;
    let mut received: Vec<RawImage> = Vec::new();
    let mut attempt = 0;
    loop {
        let remaining = request.count - received.len();
        let tag = format!("{}-a{attempt}", request.session_tag);
        match provider.request(&request.prompt, remaining, &tag) {
            Ok(images) => {
                let mut images = decode_all(images, provider.name())?;
                images.truncate(remaining);
                if let Some(dir) = raw_dir {
                    persist(dir, &request.session_tag, received.len(), &images)?;
                }
                received.extend(images);
                return Ok(received);
            }
            Err(ProviderError::Refused(msg)) => return Err(Error::ProviderRefused(msg)),
            Err(ProviderError::Transport { message, partial }) => {
                let mut partial = decode_all(partial, provider.name())?;
                partial.truncate(remaining);
                if let Some(dir) = raw_dir {
                    persist(dir, &request.session_tag, received.len(), &partial)?;
                }
                received.extend(partial);
                attempt += 1;
                if received.len() >= request.count {
                    return Ok(received);
                }
                if attempt >= retry.max_attempts {
                    return Err(Error::PartialResults {
                        attempts: attempt,
                        message,
                        partial: received,
                    });
                }
                log::warn!(
                    "{} transport failure ({message}); retry {attempt}/{}",
                    provider.name(),
                    retry.max_attempts
                );
                thread::sleep(retry.delay(attempt - 1));
            }
        }
    }
}

/// Request images of one class in batches of at most `batch_size` until
/// `quota` have arrived. Every round trip gets a distinct tag
/// `{session}-{class}-{round}`.
pub fn collect_class(
    provider: &dyn GenerationProvider,
    class: ClassLabel,
    quota: usize,
    batch_size: usize,
    retry: RetryPolicy,
    raw_dir: Option<&Path>,
    session: &str,
) -> Result<Vec<RawImage>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    let mut out = Vec::with_capacity(quota);
    let mut empty_rounds = 0;
    let mut round = 0;
    while out.len() < quota {
        let count = batch_size.min(quota - out.len());
        let req = GenerationRequest::new(class, count, format!("{session}-{class}-{round:04}"));
        let got = request_batch(provider, &req, retry, raw_dir)?;
        round += 1;
        if got.is_empty() {
            empty_rounds += 1;
            if empty_rounds >= retry.max_attempts {
                return Err(Error::PartialResults {
                    attempts: empty_rounds,
                    message: format!("{} returned no images", provider.name()),
                    partial: out,
                });
            }
        } else {
            empty_rounds = 0;
        }
        out.extend(got);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    const NO_WAIT: RetryPolicy = RetryPolicy {
        max_attempts: 3,
        base_delay_ms: 0,
        max_delay_ms: 0,
    };

    fn png(v: u8) -> ProviderImage {
        ProviderImage {
            bytes: Raster::from_gray_fn(4, 3, |_, _| v).encode_png(),
            metadata: format!("v={v}"),
        }
    }

    struct Flaky {
        calls: Mutex<u32>,
    }

    impl GenerationProvider for Flaky {
        fn name(&self) -> &str {
            "flaky"
        }

        fn request(
            &self,
            _prompt: &str,
            _count: usize,
            _tag: &str,
        ) -> std::result::Result<Vec<ProviderImage>, ProviderError> {
            let mut c = self.calls.lock().unwrap();
            *c += 1;
            Err(ProviderError::Transport {
                message: "connection reset".into(),
                partial: vec![png(*c as u8), png(100 + *c as u8)],
            })
        }
    }

    struct Refuser;

    impl GenerationProvider for Refuser {
        fn name(&self) -> &str {
            "refuser"
        }

        fn request(
            &self,
            _: &str,
            _: usize,
            _: &str,
        ) -> std::result::Result<Vec<ProviderImage>, ProviderError> {
            Err(ProviderError::Refused("content policy".into()))
        }
    }

    #[test]
    fn stub_returns_exact_count() {
        let stub = StubProvider::new(3);
        let req = GenerationRequest::new(ClassLabel::Pneumonia, 10, "s0");
        let imgs = request_batch(&stub, &req, RetryPolicy::default(), None).unwrap();
        assert_eq!(imgs.len(), 10);
        assert!(imgs.iter().all(|i| i.pixels.is_portrait()));
    }

    #[test]
    fn transport_failures_end_in_partial_result() {
        let p = Flaky {
            calls: Mutex::new(0),
        };
        let req = GenerationRequest::new(ClassLabel::Healthy, 10, "s1");
        match request_batch(&p, &req, NO_WAIT, None) {
            Err(Error::PartialResults {
                attempts, partial, ..
            }) => {
                assert_eq!(attempts, 3);
                assert_eq!(partial.len(), 6);
            }
            other => panic!("expected partial results, got {other:?}"),
        }
    }

    #[test]
    fn partial_error_after_four_images() {
        let p = Flaky {
            calls: Mutex::new(0),
        };
        let req = GenerationRequest::new(ClassLabel::Healthy, 10, "s1");
        let policy = RetryPolicy {
            max_attempts: 2,
            ..NO_WAIT
        };
        match request_batch(&p, &req, policy, None) {
            Err(Error::PartialResults { partial, .. }) => assert_eq!(partial.len(), 4),
            other => panic!("expected partial results, got {other:?}"),
        }
    }

    #[test]
    fn refusal_carries_message() {
        let req = GenerationRequest::new(ClassLabel::Healthy, 1, "s2");
        let err = request_batch(&Refuser, &req, NO_WAIT, None).unwrap_err();
        assert!(matches!(err, Error::ProviderRefused(m) if m == "content policy"));
    }

    #[test]
    fn zero_count_is_rejected() {
        let mut req = GenerationRequest::new(ClassLabel::Healthy, 1, "s3");
        req.count = 0;
        assert!(request_batch(&StubProvider::new(0), &req, NO_WAIT, None).is_err());
    }

    #[test]
    fn received_images_are_persisted() {
        let dir = tempfile::tempdir().unwrap();
        let req = GenerationRequest::new(ClassLabel::Healthy, 2, "batch7");
        let imgs = request_batch(&StubProvider::new(1), &req, NO_WAIT, Some(dir.path())).unwrap();
        for (k, img) in imgs.iter().enumerate() {
            let stem = dir.path().join(format!("batch7-{k:03}"));
            let back = Raster::load(&stem.with_extension("png")).unwrap();
            assert_eq!(back, img.pixels);
            let meta = std::fs::read_to_string(stem.with_extension("meta")).unwrap();
            assert_eq!(meta, img.provider_metadata);
        }
    }

    #[test]
    fn collect_meets_quota_with_distinct_images() {
        let stub = StubProvider::new(9);
        let imgs =
            collect_class(&stub, ClassLabel::Healthy, 23, 10, NO_WAIT, None, "run").unwrap();
        assert_eq!(imgs.len(), 23);
        let hashes: std::collections::HashSet<_> =
            imgs.iter().map(|i| i.pixels.content_hash()).collect();
        assert_eq!(hashes.len(), 23);
    }

    #[test]
    fn backoff_is_bounded() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay(0), Duration::from_millis(500));
        assert_eq!(p.delay(2), Duration::from_millis(2000));
        assert_eq!(p.delay(30), Duration::from_millis(8000));
    }
}
