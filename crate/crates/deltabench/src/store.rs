//! Dense vector index over passages: exact top-k cosine search, the
//! re-retrieval scoring variant, and binary + JSONL persistence.
//!
//! Search is exact (full scan); all vectors are unit-norm so cosine is the
//! plain dot product. Ties break by ascending passage id for determinism.
//! Persistence is a little-endian f64 matrix with a `(dim, count)` header
//! plus a JSONL sidecar of passage records, cross-checked by count on load.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::corpus::Passage;
use crate::error::{Error, Result};
use crate::providers::{Embedder, EmbeddingVector};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexRecord {
    pub passage_id: String,
    pub vector: EmbeddingVector,
    pub passage: Passage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchHit {
    pub passage_id: String,
    pub score: f64,
}

pub struct Index {
    dim: usize,
    records: Vec<IndexRecord>,
    by_id: HashMap<String, usize>,
}

impl Index {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn passage(&self, passage_id: &str) -> Option<&Passage> {
        self.by_id.get(passage_id).map(|&i| &self.records[i].passage)
    }

    fn from_records(records: Vec<IndexRecord>) -> Result<Index> {
        let Some(first) = records.first() else {
            return Err(Error::Parameter("index requires at least one record".into()));
        };
        let dim = first.vector.dim();
        let mut by_id = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            if r.vector.dim() != dim {
                return Err(Error::WrongDimension {
                    expected: dim,
                    got: r.vector.dim(),
                });
            }
            if by_id.insert(r.passage_id.clone(), i).is_some() {
                return Err(Error::DuplicatePassageId(r.passage_id.clone()));
            }
        }
        Ok(Index {
            dim,
            records,
            by_id,
        })
    }

    fn top_k(&self, mut scored: Vec<SearchHit>, k: usize) -> Vec<SearchHit> {
        scored.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap()
                .then_with(|| a.passage_id.cmp(&b.passage_id))
        });
        scored.truncate(k);
        scored
    }

    /// Exact top-k cosine search over records not in `exclude`.
    pub fn search(
        &self,
        query_vec: &EmbeddingVector,
        k: usize,
        exclude: &HashSet<String>,
    ) -> Vec<SearchHit> {
        let scored = self
            .records
            .iter()
            .filter(|r| !exclude.contains(&r.passage_id))
            .map(|r| SearchHit {
                passage_id: r.passage_id.clone(),
                score: r.vector.dot(query_vec),
            })
            .collect();
        self.top_k(scored, k)
    }

    /// Re-retrieval search: scores are
    /// `(1 - omega) * (q . d) + omega * (qy . d)`.
    pub fn search_arr(
        &self,
        q_vec: &EmbeddingVector,
        qy_vec: &EmbeddingVector,
        omega: f64,
        k: usize,
        exclude: &HashSet<String>,
    ) -> Result<Vec<SearchHit>> {
        if !(0.0..=1.0).contains(&omega) {
            return Err(Error::Parameter(format!("omega {omega} outside [0, 1]")));
        }
        let scored = self
            .records
            .iter()
            .filter(|r| !exclude.contains(&r.passage_id))
            .map(|r| SearchHit {
                passage_id: r.passage_id.clone(),
                score: (1.0 - omega) * r.vector.dot(q_vec) + omega * r.vector.dot(qy_vec),
            })
            .collect();
        Ok(self.top_k(scored, k))
    }

    /// True iff a single retrieved passage contains every evidence sentence
    /// (whitespace-normalized substring test).
    pub fn evidence_hit(&self, hits: &[SearchHit], evidence_text: &[String]) -> bool {
        if evidence_text.is_empty() {
            return false;
        }
        hits.iter().any(|hit| {
            self.passage(&hit.passage_id).is_some_and(|p| {
                let haystack = normalize_ws(&p.text);
                evidence_text
                    .iter()
                    .all(|e| haystack.contains(&normalize_ws(e)))
            })
        })
    }

    /// Persist as `<stem>.vec` (binary matrix) and `<stem>.jsonl` (passages).
    pub fn save(&self, stem: &Path) -> Result<()> {
        let vec_path = stem.with_extension("vec");
        let mut w = BufWriter::new(File::create(&vec_path).map_err(|e| Error::Io {
            path: vec_path.display().to_string(),
            source: e,
        })?);
        let io_err = |e: std::io::Error| Error::Io {
            path: vec_path.display().to_string(),
            source: e,
        };
        w.write_u64::<LittleEndian>(self.dim as u64).map_err(io_err)?;
        w.write_u64::<LittleEndian>(self.records.len() as u64)
            .map_err(io_err)?;
        for r in &self.records {
            for &v in &r.vector.0 {
                w.write_f64::<LittleEndian>(v).map_err(io_err)?;
            }
        }
        w.flush().map_err(io_err)?;

        let side_path = stem.with_extension("jsonl");
        let mut side = BufWriter::new(File::create(&side_path).map_err(|e| Error::Io {
            path: side_path.display().to_string(),
            source: e,
        })?);
        for r in &self.records {
            #[derive(Serialize)]
            struct SideRecord<'a> {
                passage_id: &'a str,
                passage: &'a Passage,
            }
            let line = serde_json::to_string(&SideRecord {
                passage_id: &r.passage_id,
                passage: &r.passage,
            })
            .map_err(|e| Error::IndexFormat(e.to_string()))?;
            writeln!(side, "{line}").map_err(|e| Error::Io {
                path: side_path.display().to_string(),
                source: e,
            })?;
        }
        side.flush().map_err(|e| Error::Io {
            path: side_path.display().to_string(),
            source: e,
        })?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Index> {
        let vec_path = stem.with_extension("vec");
        let mut r = BufReader::new(File::open(&vec_path).map_err(|e| Error::Io {
            path: vec_path.display().to_string(),
            source: e,
        })?);
        let io_err = |e: std::io::Error| Error::IndexFormat(format!("truncated matrix: {e}"));
        let dim = r.read_u64::<LittleEndian>().map_err(io_err)? as usize;
        let count = r.read_u64::<LittleEndian>().map_err(io_err)? as usize;
        let mut vectors = Vec::with_capacity(count);
        for _ in 0..count {
            let mut v = vec![0.0f64; dim];
            r.read_f64_into::<LittleEndian>(&mut v).map_err(io_err)?;
            vectors.push(EmbeddingVector(v));
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing).map_err(io_err)? != 0 {
            return Err(Error::IndexFormat("trailing bytes after matrix".into()));
        }

        let side_path = stem.with_extension("jsonl");
        let side = BufReader::new(File::open(&side_path).map_err(|e| Error::Io {
            path: side_path.display().to_string(),
            source: e,
        })?);
        #[derive(Deserialize)]
        struct SideRecord {
            passage_id: String,
            passage: Passage,
        }
        let mut records = Vec::with_capacity(count);
        for (i, line) in side.lines().enumerate() {
            let line = line.map_err(|e| Error::Io {
                path: side_path.display().to_string(),
                source: e,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: SideRecord = serde_json::from_str(&line).map_err(|e| {
                Error::IndexFormat(format!("sidecar line {}: {e}", i + 1))
            })?;
            let Some(vector) = vectors.get(records.len()).cloned() else {
                return Err(Error::IndexFormat(format!(
                    "sidecar has more than {count} records"
                )));
            };
            records.push(IndexRecord {
                passage_id: rec.passage_id,
                vector,
                passage: rec.passage,
            });
        }
        if records.len() != count {
            return Err(Error::IndexFormat(format!(
                "matrix header says {count} records, sidecar has {}",
                records.len()
            )));
        }
        Index::from_records(records)
    }
}

fn normalize_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Embed and index a passage collection.
pub fn build_index(passages: &[Passage], embedder: &dyn Embedder) -> Result<Index> {
    if passages.is_empty() {
        return Err(Error::Parameter("build_index requires passages".into()));
    }
    let texts: Vec<String> = passages.iter().map(|p| p.text.clone()).collect();
    let vectors = embedder.embed(&texts)?;
    let records = passages
        .iter()
        .zip(vectors)
        .map(|(p, vector)| IndexRecord {
            passage_id: p.passage_id.clone(),
            vector,
            passage: p.clone(),
        })
        .collect();
    Index::from_records(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::mock::MockProvider;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn passage(id: &str, text: &str) -> Passage {
        Passage {
            passage_id: id.to_string(),
            article_id: "a".to_string(),
            text: text.to_string(),
            char_span: (0, text.len()),
        }
    }

    fn mock() -> MockProvider {
        MockProvider::new(2, 48, 8)
    }

    fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> EmbeddingVector {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() - 0.5).collect();
        EmbeddingVector(v).normalized().unwrap()
    }

    #[test]
    fn single_passage_self_search() {
        let passages = vec![passage("a#0", "The annual report was published today.")];
        let m = mock();
        let index = build_index(&passages, &m).unwrap();
        assert_eq!(index.len(), 1);
        let q = m.embed_one("The annual report was published today.").unwrap();
        let hits = index.search(&q, 3, &HashSet::new());
        assert_eq!(hits.len(), 1);
        assert!((hits[0].score - 1.0).abs() < 1e-6);
    }

    #[test]
    fn duplicate_passage_id_rejected() {
        let passages = vec![passage("a#0", "First text."), passage("a#0", "Second text.")];
        assert!(matches!(
            build_index(&passages, &mock()),
            Err(Error::DuplicatePassageId(_))
        ));
    }

    #[test]
    fn exclude_all_yields_empty() {
        let passages = vec![passage("a#0", "Something here.")];
        let m = mock();
        let index = build_index(&passages, &m).unwrap();
        let q = m.embed_one("query").unwrap();
        let exclude: HashSet<String> = ["a#0".to_string()].into();
        assert!(index.search(&q, 3, &exclude).is_empty());
    }

    #[test]
    fn search_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let records: Vec<IndexRecord> = (0..10)
            .map(|i| IndexRecord {
                passage_id: format!("p{i:02}"),
                vector: random_unit(&mut rng, 16),
                passage: passage(&format!("p{i:02}"), "text"),
            })
            .collect();
        let index = Index::from_records(records.clone()).unwrap();
        let q = random_unit(&mut rng, 16);
        let hits = index.search(&q, 3, &HashSet::new());

        let mut oracle: Vec<(f64, String)> = records
            .iter()
            .map(|r| (r.vector.dot(&q), r.passage_id.clone()))
            .collect();
        oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        for (hit, (score, id)) in hits.iter().zip(&oracle) {
            assert_eq!(&hit.passage_id, id);
            assert_eq!(hit.score, *score);
        }
    }

    #[test]
    fn arr_scoring_arithmetic() {
        // Scores are exactly (1-w) q.d + w qy.d.
        let records = vec![IndexRecord {
            passage_id: "p".into(),
            vector: EmbeddingVector(vec![1.0, 0.0]),
            passage: passage("p", "t"),
        }];
        let index = Index::from_records(records).unwrap();
        let q = EmbeddingVector(vec![0.8, 0.6]);
        let qy = EmbeddingVector(vec![0.4, 0.916515138991168]);
        let hits = index.search_arr(&q, &qy, 0.5, 1, &HashSet::new()).unwrap();
        assert!((hits[0].score - 0.6).abs() < 1e-12);
    }

    #[test]
    fn arr_omega_bounds() {
        let index = Index::from_records(vec![IndexRecord {
            passage_id: "p".into(),
            vector: EmbeddingVector(vec![1.0]),
            passage: passage("p", "t"),
        }])
        .unwrap();
        let v = EmbeddingVector(vec![1.0]);
        assert!(index.search_arr(&v, &v, -0.1, 1, &HashSet::new()).is_err());
        assert!(index.search_arr(&v, &v, 1.1, 1, &HashSet::new()).is_err());
    }

    #[test]
    fn arr_degenerate_omegas() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let records: Vec<IndexRecord> = (0..50)
            .map(|i| IndexRecord {
                passage_id: format!("p{i:03}"),
                vector: random_unit(&mut rng, 12),
                passage: passage(&format!("p{i:03}"), "text"),
            })
            .collect();
        let index = Index::from_records(records).unwrap();
        let q = random_unit(&mut rng, 12);
        let qy = random_unit(&mut rng, 12);
        let plain_q = index.search(&q, 5, &HashSet::new());
        let plain_qy = index.search(&qy, 5, &HashSet::new());
        let w0 = index.search_arr(&q, &qy, 0.0, 5, &HashSet::new()).unwrap();
        let w1 = index.search_arr(&q, &qy, 1.0, 5, &HashSet::new()).unwrap();
        assert_eq!(plain_q, w0);
        assert_eq!(plain_qy, w1);
    }

    #[test]
    fn evidence_hit_single_passage_rule() {
        let passages = vec![
            passage("a#0", "The mayor   resigned on Monday. Other text follows."),
            passage("a#1", "A second passage about the budget."),
        ];
        let m = mock();
        let index = build_index(&passages, &m).unwrap();
        let hits: Vec<SearchHit> = ["a#0", "a#1"]
            .iter()
            .map(|id| SearchHit {
                passage_id: id.to_string(),
                score: 0.5,
            })
            .collect();
        // Whitespace-normalized containment.
        assert!(index.evidence_hit(&hits, &["The mayor resigned on Monday.".to_string()]));
        // Split across two passages -> miss.
        assert!(!index.evidence_hit(
            &hits,
            &[
                "The mayor resigned on Monday.".to_string(),
                "A second passage about the budget.".to_string(),
            ]
        ));
        assert!(!index.evidence_hit(&[], &["anything".to_string()]));
    }

    #[test]
    fn save_load_roundtrip_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let records: Vec<IndexRecord> = (0..100)
            .map(|i| IndexRecord {
                passage_id: format!("p{i:03}"),
                vector: random_unit(&mut rng, 24),
                passage: passage(&format!("p{i:03}"), &format!("passage text {i}")),
            })
            .collect();
        let index = Index::from_records(records).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("index");
        index.save(&stem).unwrap();
        let loaded = Index::load(&stem).unwrap();
        assert_eq!(loaded.len(), index.len());

        let q = random_unit(&mut rng, 24);
        let before = index.search(&q, 10, &HashSet::new());
        let after = loaded.search(&q, 10, &HashSet::new());
        assert_eq!(before, after);
    }

    #[test]
    fn load_count_mismatch_rejected() {
        let records = vec![IndexRecord {
            passage_id: "p0".into(),
            vector: EmbeddingVector(vec![1.0, 0.0]),
            passage: passage("p0", "t"),
        }];
        let index = Index::from_records(records).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("index");
        index.save(&stem).unwrap();
        // Append a bogus sidecar line.
        let side = stem.with_extension("jsonl");
        let mut contents = std::fs::read_to_string(&side).unwrap();
        contents.push_str(&contents.clone());
        std::fs::write(&side, contents).unwrap();
        assert!(matches!(Index::load(&stem), Err(Error::IndexFormat(_))));
    }
}
