use std::io::Read;
use std::time::Duration;

use openml_lite_core::registry::{FileFetcher, UrlFetcher};

/// Fetches `http://` URLs (and `file://` when explicitly allowed). Meant to
/// run on a blocking thread.
#[derive(Debug, Clone)]
pub struct HttpFetcher {
    allow_file: bool,
    max_bytes: usize,
}

impl HttpFetcher {
    pub fn new(allow_file: bool, max_bytes: usize) -> Self {
        HttpFetcher { allow_file, max_bytes }
    }
}

impl UrlFetcher for HttpFetcher {
    fn fetch(&self, url: &url::Url) -> Result<Vec<u8>, String> {
        match url.scheme() {
            "file" if self.allow_file => FileFetcher.fetch(url),
            "file" => Err("file URLs are disabled on this server".into()),
            "http" | "https" => {
                let client = reqwest::blocking::Client::builder()
                    .timeout(Duration::from_secs(120))
                    .build()
                    .map_err(|e| e.to_string())?;
                let response = client.get(url.as_str()).send().map_err(|e| e.to_string())?;
                if !response.status().is_success() {
                    return Err(format!("{url} answered {}", response.status()));
                }
                let mut bytes = Vec::new();
                response
                    .take(self.max_bytes as u64 + 1)
                    .read_to_end(&mut bytes)
                    .map_err(|e| e.to_string())?;
                if bytes.len() > self.max_bytes {
                    return Err(format!("{url} is larger than {} bytes", self.max_bytes));
                }
                Ok(bytes)
            }
            other => Err(format!("unsupported URL scheme '{other}'")),
        }
    }
}
