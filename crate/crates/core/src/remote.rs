//! Shared plumbing for remote (HTTP) adapter variants.
//!
//! Every remote adapter endpoint can be overridden with the environment
//! variable `HANDFUSION_ADAPTER_<NAME>_URL`.

use std::io::Cursor;
use std::time::Duration;

use crate::img::Image;

/// Resolves an adapter base URL: the env override wins over the configured
/// value.
pub fn resolve_url(adapter_name: &str, configured: Option<&str>) -> Option<String> {
    let var = format!(
        "HANDFUSION_ADAPTER_{}_URL",
        adapter_name.to_ascii_uppercase()
    );
    match std::env::var(&var) {
        Ok(v) if !v.is_empty() => Some(v),
        _ => configured.map(str::to_string),
    }
}

/// Blocking HTTP client with a conservative timeout.
pub fn make_client() -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(30))
        .build()
        .expect("client construction cannot fail with static config")
}

/// Encodes an image as PNG bytes for request bodies.
pub fn png_bytes(img: &Image) -> Vec<u8> {
    let gray = img.to_gray();
    let mut buf = image::GrayImage::new(gray.width() as u32, gray.height() as u32);
    for y in 0..gray.height() {
        for x in 0..gray.width() {
            let v = (gray.get(0, y, x).clamp(0.0, 1.0) * 255.0).round() as u8;
            buf.put_pixel(x as u32, y as u32, image::Luma([v]));
        }
    }
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, image::ImageFormat::Png)
        .expect("in-memory PNG encoding cannot fail");
    out.into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_override_wins() {
        // Var names are unique per test to avoid cross-test interference.
        std::env::set_var("HANDFUSION_ADAPTER_TESTONLY_URL", "http://a:1");
        assert_eq!(
            resolve_url("testonly", Some("http://b:2")).as_deref(),
            Some("http://a:1")
        );
        std::env::remove_var("HANDFUSION_ADAPTER_TESTONLY_URL");
        assert_eq!(
            resolve_url("testonly", Some("http://b:2")).as_deref(),
            Some("http://b:2")
        );
    }
}
