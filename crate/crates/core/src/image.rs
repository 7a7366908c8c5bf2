use std::path::Path;

use serde::{Deserialize, Serialize};

/// An image handed to tools and models. Pixels are never decoded here.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    /// Filesystem path or URI.
    pub location: String,
    pub media_type: String,
    #[serde(skip)]
    pub bytes: Option<Vec<u8>>,
}

impl ImageRef {
    pub fn new(id: impl Into<String>, location: impl Into<String>) -> Self {
        let location = location.into();
        let media_type = media_type_for(&location).to_string();
        ImageRef { id: id.into(), location, media_type, bytes: None }
    }

    /// Builds a reference whose id is the file stem of `path`.
    pub fn from_path(path: impl AsRef<Path>) -> Self {
        let path = path.as_ref();
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        ImageRef::new(id, path.display().to_string())
    }

    pub fn is_remote(&self) -> bool {
        self.location.starts_with("http://") || self.location.starts_with("https://")
    }

    /// Returns the attached bytes, reading them from `location` when absent.
    pub fn load_bytes(&self) -> std::io::Result<Vec<u8>> {
        match &self.bytes {
            Some(b) => Ok(b.clone()),
            None => std::fs::read(&self.location),
        }
    }
}

pub fn media_type_for(location: &str) -> &'static str {
    let ext = location.rsplit('.').next().unwrap_or("").to_ascii_lowercase();
    match ext.as_str() {
        "png" => "image/png",
        "jpg" | "jpeg" => "image/jpeg",
        "gif" => "image/gif",
        "webp" => "image/webp",
        "bmp" => "image/bmp",
        _ => "application/octet-stream",
    }
}
