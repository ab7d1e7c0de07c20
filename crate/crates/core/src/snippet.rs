use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::scorer::FeatureVector;

/// Stable 64-bit snippet identifier.
pub type SnippetId = u64;

/// A unit of text sent to the oracle. Synthetic snippets carry an empty
/// text and are identified by index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snippet {
    pub id: SnippetId,
    pub source_doc: String,
    pub offset: u64,
    pub text: String,
}

impl Snippet {
    /// Builds a snippet whose id is derived from its provenance and content.
    pub fn new(source_doc: impl Into<String>, offset: u64, text: impl Into<String>) -> Self {
        let source_doc = source_doc.into();
        let text = text.into();
        Snippet {
            id: content_id(&source_doc, offset, &text),
            source_doc,
            offset,
            text,
        }
    }

    /// A textless snippet for simulated streams.
    pub fn synthetic(id: SnippetId) -> Self {
        Snippet {
            id,
            source_doc: String::new(),
            offset: id,
            text: String::new(),
        }
    }
}

/// `id = H(source_doc, offset, text)`: the first eight bytes of a SHA-256
/// over length-prefixed fields, read big-endian.
pub fn content_id(source_doc: &str, offset: u64, text: &str) -> SnippetId {
    let mut h = Sha256::new();
    h.update((source_doc.len() as u64).to_be_bytes());
    h.update(source_doc.as_bytes());
    h.update(offset.to_be_bytes());
    h.update((text.len() as u64).to_be_bytes());
    h.update(text.as_bytes());
    let digest = h.finalize();
    let mut first = [0u8; 8];
    first.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(first)
}

/// Lowercase hex SHA-256 of a string.
pub fn sha256_hex(text: &str) -> String {
    format!("{:x}", Sha256::digest(text.as_bytes()))
}

/// A stream element: the snippet plus the features the scorer consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamItem {
    pub snippet: Snippet,
    pub features: FeatureVector,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_depend_on_every_field() {
        let a = Snippet::new("doc", 0, "hello");
        assert_eq!(a.id, Snippet::new("doc", 0, "hello").id);
        assert_ne!(a.id, Snippet::new("doc", 1, "hello").id);
        assert_ne!(a.id, Snippet::new("doc2", 0, "hello").id);
        assert_ne!(a.id, Snippet::new("doc", 0, "hello!").id);
        // length prefixes keep field boundaries unambiguous
        assert_ne!(content_id("ab", 0, "c"), content_id("a", 0, "bc"));
    }

    #[test]
    fn sha256_hex_known_value() {
        assert_eq!(
            sha256_hex("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
