//! Hashed character n-gram text embeddings and node featurisation.
//!
//! Layout of a node feature row (`d_in = d_text + 15`):
//!
//! ```text
//! [ text (d_text) | kind one-hot (4) | log1p(freq) (1) | mention kind (3) | cues (7) ]
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::extract::{Cue, MentionKind};
use crate::graph::{KnowledgeGraph, NodeKind};
use crate::{Error, Result};

pub const KIND_SLOTS: usize = 4;
pub const MENTION_SLOTS: usize = 3;
pub const CUE_SLOTS: usize = 7;
pub const AUX_DIM: usize = KIND_SLOTS + 1 + MENTION_SLOTS + CUE_SLOTS;

pub fn feature_dim(d_text: usize) -> usize {
    d_text + AUX_DIM
}

fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // splitmix64 finaliser so low bits are usable as a bucket index
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Signed feature hashing of character 3..=5-grams of the lower-cased,
/// boundary-padded text, L2-normalised. Empty text gives the zero vector.
pub fn embed_text(text: &str, d_text: usize, seed: u64) -> Vec<f64> {
    let mut v = vec![0.0; d_text];
    if text.is_empty() {
        return v;
    }
    let chars: Vec<char> = std::iter::once('<')
        .chain(text.to_lowercase().chars())
        .chain(std::iter::once('>'))
        .collect();
    let mut buf = String::new();
    for n in 3..=5 {
        for w in chars.windows(n) {
            buf.clear();
            buf.extend(w);
            let h = fnv1a(buf.as_bytes(), seed);
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            v[(h % d_text as u64) as usize] += sign;
        }
    }
    normalize(&mut v);
    v
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Reads `text<TAB>v1,v2,...` rows. Every row must have `d_text` values.
pub fn import_embeddings(path: &Path, d_text: usize) -> Result<HashMap<String, Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, d_text)
}

pub fn parse_embeddings(text: &str, d_text: usize) -> Result<HashMap<String, Vec<f64>>> {
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (key, values) = line
            .rsplit_once('\t')
            .ok_or_else(|| Error::data(format!("row {row}: expected text<TAB>vector")))?;
        let mut v = values
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::data(format!("row {row}: {e}")))?;
        if v.len() != d_text {
            return Err(Error::data(format!(
                "row {row}: dim {} ≠ {d_text}",
                v.len()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::data(format!("row {row}: non-finite value")));
        }
        normalize(&mut v);
        out.insert(key.to_string(), v);
    }
    Ok(out)
}

/// Text embedder: imported vectors take precedence over hashing.
#[derive(Debug, Clone)]
pub struct TextEmbedder {
    pub d_text: usize,
    pub seed: u64,
    imported: HashMap<String, Vec<f64>>,
}

impl TextEmbedder {
    pub fn new(d_text: usize, seed: u64) -> Result<Self> {
        if d_text < 8 {
            return Err(Error::Config(format!("d_text must be >= 8, got {d_text}")));
        }
        Ok(TextEmbedder {
            d_text,
            seed,
            imported: HashMap::new(),
        })
    }

    pub fn with_imported(mut self, imported: HashMap<String, Vec<f64>>) -> Result<Self> {
        if let Some((k, v)) = imported.iter().find(|(_, v)| v.len() != self.d_text) {
            return Err(Error::data(format!(
                "imported vector for {k:?}: dim {} ≠ {}",
                v.len(),
                self.d_text
            )));
        }
        self.imported = imported;
        Ok(self)
    }

    pub fn imported_len(&self) -> usize {
        self.imported.len()
    }

    pub fn embed(&self, text: &str) -> Vec<f64> {
        match self.imported.get(text) {
            Some(v) => v.clone(),
            None => embed_text(text, self.d_text, self.seed),
        }
    }

    pub fn d_in(&self) -> usize {
        feature_dim(self.d_text)
    }

    /// One feature row per node, in node-id order.
    pub fn featurize(&self, graph: &KnowledgeGraph) -> Array2<f64> {
        let d = self.d_text;
        let mut x = Array2::zeros((graph.nodes.len(), self.d_in()));
        for node in &graph.nodes {
            let mut row = x.row_mut(node.id);
            for (slot, val) in self.embed(&node.text).into_iter().enumerate() {
                row[slot] = val;
            }
            row[d + node.kind.index()] = 1.0;
            let aux = d + KIND_SLOTS;
            match node.kind {
                NodeKind::Entity => {
                    row[aux] = f64::from(node.features.frequency).ln_1p();
                    if let Some(k) = node.features.mention_kind {
                        row[aux + 1 + k.index()] = 1.0;
                    }
                }
                NodeKind::Query => {
                    for c in &node.features.cues {
                        row[aux + 1 + MENTION_SLOTS + c.index()] = 1.0;
                    }
                }
                NodeKind::Agent | NodeKind::Relation => {}
            }
        }
        x
    }
}

/// Human-readable names of the aux slots, for diagnostics.
pub fn aux_slot_names() -> Vec<String> {
    let mut names: Vec<String> = NodeKind::ALL
        .iter()
        .map(|k| format!("kind:{}", k.as_str()))
        .collect();
    names.push("log1p_frequency".into());
    for k in [
        MentionKind::Named,
        MentionKind::Temporal,
        MentionKind::Numeric,
    ] {
        names.push(format!("mention:{k:?}").to_lowercase());
    }
    names.extend(Cue::ALL.iter().map(|c| format!("cue:{}", c.as_str())));
    names
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{parse_dataset, AgentPool};
    use crate::graph::build_record_graph;
    use std::collections::BTreeMap;

    #[test]
    fn deterministic_and_unit_norm() {
        let a = embed_text("George Sanders", 256, 7);
        assert_eq!(a, embed_text("George Sanders", 256, 7));
        let n: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
        assert_ne!(a, embed_text("George Sanders", 256, 8));
        assert!(embed_text("", 256, 0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn near_duplicates_are_closer() {
        let a = embed_text("George Sanders", 256, 0);
        let b = embed_text("George Sander", 256, 0);
        let c = embed_text("1942", 256, 0);
        assert!(cosine(&a, &b) > cosine(&a, &c));
    }

    #[test]
    fn import_dimension_errors() {
        let good = "a\t1,0,0,0,0,0,0,0\nb\t0,2,0,0,0,0,0,0\n";
        let m = parse_embeddings(good, 8).unwrap();
        assert_eq!(m["b"][1], 1.0);
        let bad = "a\t1,0,0,0,0,0,0,0\nb\t1,0,0,0,0,0,0,0\nc\t1,2\n";
        let e = parse_embeddings(bad, 8).unwrap_err().to_string();
        assert_eq!(e, "row 3: dim 2 ≠ 8");
        let row = vec!["0"; 128].join(",");
        let e = parse_embeddings(&format!("x\t{row}\n"), 256)
            .unwrap_err()
            .to_string();
        assert_eq!(e, "row 1: dim 128 ≠ 256");
    }

    #[test]
    fn imported_override_and_fallback() {
        let mut m = HashMap::new();
        m.insert("hello".to_string(), vec![1.0; 8]);
        assert!(TextEmbedder::new(8, 0)
            .unwrap()
            .with_imported(m.clone())
            .is_ok());
        let e = TextEmbedder::new(8, 0).unwrap();
        let e = e
            .with_imported(parse_embeddings("hello\t1,1,1,1,1,1,1,1", 8).unwrap())
            .unwrap();
        assert!((e.embed("hello")[0] - 1.0 / 8f64.sqrt()).abs() < 1e-15);
        assert_eq!(e.embed("other"), embed_text("other", 8, 0));
        assert!(TextEmbedder::new(4, 0).is_err());
    }

    #[test]
    fn featurize_slots() {
        let line = serde_json::json!({
            "id": "r", "question": "Who met George Sanders?",
            "context": "George Sanders met George Sanders.", "answers": ["x"]
        });
        let rec = parse_dataset(&line.to_string(), "t").unwrap().remove(0);
        let pool = AgentPool::default_pool();
        let (g, _) = build_record_graph(&rec, &pool, &BTreeMap::new()).unwrap();
        let emb = TextEmbedder::new(16, 0).unwrap();
        let x = emb.featurize(&g);
        assert_eq!(x.ncols(), 16 + 15);
        assert_eq!(aux_slot_names().len(), AUX_DIM);
        let ent = g.nodes_of(NodeKind::Entity)[0];
        assert!((x[[ent, 16 + 4]] - 3f64.ln()).abs() < 1e-12);
        assert_eq!(x[[ent, 16 + 5]], 1.0);
        assert_eq!(x[[0, 16 + 8 + Cue::Person.index()]], 1.0);
        assert_eq!(x[[0, 16]], 1.0);
        let agent = g.agents()[0];
        assert_eq!(x[[agent, 17]], 1.0);
        assert!(x.row(agent).iter().skip(16 + 4).all(|&v| v == 0.0));
    }
}
