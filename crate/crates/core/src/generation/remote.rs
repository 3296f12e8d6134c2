//! JSON-over-HTTP generation client.
//!
//! Request: `POST {endpoint}` with body `{"prompt": .., "count": .., "tag": ..}`
//! and `Authorization: Bearer <token>`. Response:
//! `{"images": [{"data": "<base64 PNG/JPEG>", "metadata": <any JSON>}]}`.

use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{GenerationProvider, ProviderError, ProviderImage};
use crate::error::{Error, Result};

/// Environment variable holding the provider's bearer token.
pub const TOKEN_ENV: &str = "CXRSYNTH_PROVIDER_TOKEN";

#[derive(Serialize)]
struct RequestBody<'a> {
    prompt: &'a str,
    count: usize,
    tag: &'a str,
}

#[derive(Deserialize)]
struct ResponseBody {
    images: Vec<ResponseImage>,
}

#[derive(Deserialize)]
struct ResponseImage {
    data: String,
    #[serde(default)]
    metadata: serde_json::Value,
}

pub struct RemoteProvider {
    name: String,
    endpoint: String,
    token: String,
    agent: ureq::Agent,
}

impl RemoteProvider {
    pub fn new(name: impl Into<String>, endpoint: impl Into<String>, token: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(300)))
            .build()
            .into();
        RemoteProvider {
            name: name.into(),
            endpoint: endpoint.into(),
            token: token.into(),
            agent,
        }
    }

    /// Reads the token from [`TOKEN_ENV`].
    pub fn from_env(name: impl Into<String>, endpoint: impl Into<String>) -> Result<Self> {
        let token = std::env::var(TOKEN_ENV)
            .map_err(|_| Error::invalid(format!("{TOKEN_ENV} is not set")))?;
        Ok(Self::new(name, endpoint, token))
    }
}

fn transport(message: impl Into<String>) -> ProviderError {
    ProviderError::Transport {
        message: message.into(),
        partial: Vec::new(),
    }
}

/// 408 and 429 are worth retrying like server errors; other 4xx are final.
fn classify_status(status: u16, body: &str) -> ProviderError {
    let msg = format!("HTTP {status}: {}", body.trim());
    if (400..500).contains(&status) && status != 408 && status != 429 {
        ProviderError::Refused(msg)
    } else {
        transport(msg)
    }
}

fn decode_images(body: ResponseBody) -> std::result::Result<Vec<ProviderImage>, ProviderError> {
    let b64 = base64::engine::general_purpose::STANDARD;
    let mut out = Vec::with_capacity(body.images.len());
    for (i, img) in body.images.into_iter().enumerate() {
        match b64.decode(img.data.trim()) {
            Ok(bytes) => out.push(ProviderImage {
                bytes,
                metadata: img.metadata.to_string(),
            }),
            Err(e) => {
                return Err(ProviderError::Transport {
                    message: format!("image {i}: bad base64: {e}"),
                    partial: out,
                })
            }
        }
    }
    Ok(out)
}

impl GenerationProvider for RemoteProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn request(
        &self,
        prompt: &str,
        count: usize,
        tag: &str,
    ) -> std::result::Result<Vec<ProviderImage>, ProviderError> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.token))
            .send_json(RequestBody { prompt, count, tag })
            .map_err(|e| transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if status >= 400 {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(classify_status(status, &text));
        }
        let body: ResponseBody = resp
            .body_mut()
            .read_json()
            .map_err(|e| transport(format!("malformed response: {e}")))?;
        decode_images(body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;

    /// Serves one canned response per accepted connection and reports each
    /// request's headers and body.
    fn serve(responses: Vec<(u16, String)>) -> (String, mpsc::Receiver<(String, String)>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/generate", listener.local_addr().unwrap());
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut headers = String::new();
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    headers.push_str(&line);
                }
                let mut req = vec![0; len];
                reader.read_exact(&mut req).unwrap();
                tx.send((headers, String::from_utf8(req).unwrap())).unwrap();
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (url, rx)
    }

    fn png_b64() -> String {
        let mut buf = std::io::Cursor::new(Vec::new());
        image::GrayImage::from_pixel(4, 4, image::Luma([9u8]))
            .write_to(&mut buf, image::ImageFormat::Png)
            .unwrap();
        base64::engine::general_purpose::STANDARD.encode(buf.into_inner())
    }

    #[test]
    fn posts_json_with_bearer_and_decodes_images() {
        let body = format!(
            r#"{{"images":[{{"data":"{0}","metadata":{{"model":"m1"}}}},{{"data":"{0}"}}]}}"#,
            png_b64()
        );
        let (url, rx) = serve(vec![(200, body)]);
        let p = RemoteProvider::new("remote", url, "sekret");
        let imgs = p.request("a chest x-ray", 2, "t-0001").unwrap();
        assert_eq!(imgs.len(), 2);
        assert_eq!(imgs[0].metadata, r#"{"model":"m1"}"#);
        assert_eq!(&imgs[0].bytes[1..4], b"PNG");
        let (headers, req) = rx.recv().unwrap();
        assert!(headers.to_ascii_lowercase().contains("authorization: bearer sekret"));
        let sent: serde_json::Value = serde_json::from_str(&req).unwrap();
        assert_eq!(sent, serde_json::json!({"prompt": "a chest x-ray", "count": 2, "tag": "t-0001"}));
    }

    #[test]
    fn status_codes_are_classified() {
        let (url, _rx) = serve(vec![
            (403, "{\"error\":\"policy\"}".into()),
            (429, "{}".into()),
            (503, "{}".into()),
            (200, "not json".into()),
        ]);
        let p = RemoteProvider::new("remote", url, "t");
        assert!(matches!(p.request("x", 1, "a"), Err(ProviderError::Refused(m)) if m.contains("policy")));
        assert!(matches!(p.request("x", 1, "b"), Err(ProviderError::Transport { .. })));
        assert!(matches!(p.request("x", 1, "c"), Err(ProviderError::Transport { .. })));
        assert!(matches!(p.request("x", 1, "d"), Err(ProviderError::Transport { .. })));
    }

    #[test]
    fn bad_base64_keeps_earlier_images() {
        let body = format!(r#"{{"images":[{{"data":"{}"}},{{"data":"@@@"}}]}}"#, png_b64());
        let (url, _rx) = serve(vec![(200, body)]);
        let p = RemoteProvider::new("remote", url, "t");
        match p.request("x", 2, "a") {
            Err(ProviderError::Transport { partial, .. }) => assert_eq!(partial.len(), 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unreachable_endpoint_is_transport() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let p = RemoteProvider::new("remote", format!("http://127.0.0.1:{port}/"), "t");
        assert!(matches!(p.request("x", 1, "a"), Err(ProviderError::Transport { .. })));
    }
}
