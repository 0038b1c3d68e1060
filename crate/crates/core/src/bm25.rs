//! BM25 inverted index for first-stage retrieval.
//!
//! Index files are little-endian:
//!
//! ```text
//! magic      8 bytes  "BM25IDX\0"
//! version    u32      currently 1
//! k1, b      f64, f64
//! doc_count  u32
//! total_len  u64      sum of document lengths in tokens
//! docs       doc_count x (id: u32 length + UTF-8 bytes, len: u32)
//! stopwords  u32 count, then each as u32 length + UTF-8 bytes
//! terms      u32 count, then each as term string, u32 posting count,
//!            postings as (doc index u32, tf u32)
//! ```
//!
//! Strings are length-prefixed; terms are written in sorted order.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, Query, RankedDoc, Ranking};

const MAGIC: &[u8; 8] = b"BM25IDX\0";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum Bm25Error {
    #[error("cannot index an empty corpus")]
    EmptyCorpus,
    #[error("document id `{0}` appears more than once")]
    DuplicateDocId(String),
    #[error("document `{0}` is not in the index")]
    UnknownDoc(String),
    #[error("invalid BM25 parameters: {0}")]
    InvalidParams(String),
    #[error("index file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.5, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), Bm25Error> {
        if !(self.k1.is_finite() && self.k1 > 0.0) {
            return Err(Bm25Error::InvalidParams(format!(
                "k1 = {} must be positive",
                self.k1
            )));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Bm25Error::InvalidParams(format!(
                "b = {} must lie in [0, 1]",
                self.b
            )));
        }
        Ok(())
    }
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// [`tokenize`] plus an optional stopword list.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Tokenizer {
    stopwords: BTreeSet<String>,
}

impl Tokenizer {
    pub fn with_stopwords<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Tokenizer {
            stopwords: words
                .into_iter()
                .flat_map(|w| tokenize(w.as_ref()))
                .collect(),
        }
    }

    /// One stopword per line; blank lines and `#` comments are skipped.
    pub fn from_stopword_file(path: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(Self::with_stopwords(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        ))
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let mut terms = tokenize(text);
        if !self.stopwords.is_empty() {
            terms.retain(|t| !self.stopwords.contains(t));
        }
        terms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    params: Bm25Params,
    tokenizer: Tokenizer,
    doc_ids: Vec<String>,
    doc_lens: Vec<u32>,
    total_len: u64,
    postings: BTreeMap<String, Vec<Posting>>,
    by_id: HashMap<String, u32>,
}

pub fn build_index(docs: &[Document], params: Bm25Params) -> Result<InvertedIndex, Bm25Error> {
    InvertedIndex::build(docs, params, Tokenizer::default())
}

impl InvertedIndex {
    pub fn build(
        docs: &[Document],
        params: Bm25Params,
        tokenizer: Tokenizer,
    ) -> Result<Self, Bm25Error> {
        params.validate()?;
        if docs.is_empty() {
            return Err(Bm25Error::EmptyCorpus);
        }
        let mut by_id = HashMap::with_capacity(docs.len());
        let mut doc_lens = Vec::with_capacity(docs.len());
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut total_len = 0u64;
        for (i, doc) in docs.iter().enumerate() {
            let i = i as u32;
            if by_id.insert(doc.id.clone(), i).is_some() {
                return Err(Bm25Error::DuplicateDocId(doc.id.clone()));
            }
            let terms = tokenizer.tokenize(&doc.text);
            doc_lens.push(terms.len() as u32);
            total_len += terms.len() as u64;
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in terms {
                *tf.entry(t).or_default() += 1;
            }
            for (term, tf) in tf {
                postings
                    .entry(term)
                    .or_default()
                    .push(Posting { doc: i, tf });
            }
        }
        Ok(InvertedIndex {
            params,
            tokenizer,
            doc_ids: docs.iter().map(|d| d.id.clone()).collect(),
            doc_lens,
            total_len,
            postings,
            by_id,
        })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.total_len as f64 / self.doc_ids.len() as f64
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn doc_len(&self, doc_id: &str) -> Option<usize> {
        self.by_id
            .get(doc_id)
            .map(|&i| self.doc_lens[i as usize] as usize)
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn vocabulary_size(&self) -> usize {
        self.postings.len()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count() as f64;
        let df = self.doc_freq(term) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    fn term_weight(&self, idf: f64, tf: u32, doc: u32) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let norm = 1.0 - b + b * self.doc_lens[doc as usize] as f64 / self.avg_doc_len();
        idf * tf * (k1 + 1.0) / (tf + k1 * norm)
    }

    /// BM25 score of one document; repeated query terms count once.
    pub fn score(&self, query_terms: &[String], doc_id: &str) -> Result<f64, Bm25Error> {
        let doc = *self
            .by_id
            .get(doc_id)
            .ok_or_else(|| Bm25Error::UnknownDoc(doc_id.to_string()))?;
        let mut total = 0.0;
        for term in unique(query_terms) {
            let postings = self.postings(term);
            if let Ok(pos) = postings.binary_search_by_key(&doc, |p| p.doc) {
                total += self.term_weight(self.idf(term), postings[pos].tf, doc);
            }
        }
        Ok(total)
    }

    /// Scores of every document, indexed like [`Self::doc_ids`].
    pub fn score_all(&self, query_terms: &[String]) -> Vec<f64> {
        let mut scores = vec![0.0; self.doc_count()];
        for term in unique(query_terms) {
            let idf = self.idf(term);
            for p in self.postings(term) {
                scores[p.doc as usize] += self.term_weight(idf, p.tf, p.doc);
            }
        }
        scores
    }

    /// Top `k` documents for already tokenized terms. Every document is a
    /// candidate, including those scoring zero.
    pub fn retrieve_terms(&self, query_id: &str, query_terms: &[String], k: usize) -> Ranking {
        let scores = self.score_all(query_terms);
        let mut order: Vec<usize> = (0..scores.len()).collect();
        let cmp = |a: &usize, b: &usize| {
            scores[*b]
                .total_cmp(&scores[*a])
                .then_with(|| self.doc_ids[*a].cmp(&self.doc_ids[*b]))
        };
        let k = k.min(order.len());
        if k < order.len() && k > 0 {
            order.select_nth_unstable_by(k - 1, cmp);
        }
        order.truncate(k);
        order.sort_unstable_by(cmp);
        let entries = order
            .into_iter()
            .map(|i| RankedDoc::new(self.doc_ids[i].clone(), scores[i]))
            .collect();
        Ranking::from_ordered(query_id, entries, "bm25")
            .expect("index ids are unique and scores finite")
    }

    pub fn retrieve(&self, query: &Query, k: usize) -> Ranking {
        self.retrieve_terms(&query.id, &self.tokenizer.tokenize(&query.prompt_text()), k)
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.params.k1.to_le_bytes())?;
        w.write_all(&self.params.b.to_le_bytes())?;
        w.write_all(&(self.doc_ids.len() as u32).to_le_bytes())?;
        w.write_all(&self.total_len.to_le_bytes())?;
        for (id, len) in self.doc_ids.iter().zip(&self.doc_lens) {
            write_str(w, id)?;
            w.write_all(&len.to_le_bytes())?;
        }
        w.write_all(&(self.tokenizer.stopwords.len() as u32).to_le_bytes())?;
        for s in &self.tokenizer.stopwords {
            write_str(w, s)?;
        }
        w.write_all(&(self.postings.len() as u32).to_le_bytes())?;
        for (term, list) in &self.postings {
            write_str(w, term)?;
            w.write_all(&(list.len() as u32).to_le_bytes())?;
            for p in list {
                w.write_all(&p.doc.to_le_bytes())?;
                w.write_all(&p.tf.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), Bm25Error> {
        let mut w = io::BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, Bm25Error> {
        let mut magic = [0u8; 8];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Bm25Error::Format("not a BM25 index file".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Bm25Error::Format(format!("unsupported version {version}")));
        }
        let params = Bm25Params {
            k1: read_f64(r)?,
            b: read_f64(r)?,
        };
        params.validate()?;
        let n = read_u32(r)? as usize;
        if n == 0 {
            return Err(Bm25Error::EmptyCorpus);
        }
        let total_len = read_u64(r)?;
        let mut doc_ids = Vec::with_capacity(n.min(1 << 20));
        let mut doc_lens = Vec::with_capacity(n.min(1 << 20));
        let mut by_id = HashMap::new();
        for i in 0..n {
            let id = read_str(r)?;
            if by_id.insert(id.clone(), i as u32).is_some() {
                return Err(Bm25Error::DuplicateDocId(id));
            }
            doc_ids.push(id);
            doc_lens.push(read_u32(r)?);
        }
        if doc_lens.iter().map(|&l| l as u64).sum::<u64>() != total_len {
            return Err(Bm25Error::Format(
                "document lengths do not add up to the total".into(),
            ));
        }
        let stop_count = read_u32(r)?;
        let mut stopwords = BTreeSet::new();
        for _ in 0..stop_count {
            stopwords.insert(read_str(r)?);
        }
        let term_count = read_u32(r)?;
        let mut postings = BTreeMap::new();
        for _ in 0..term_count {
            let term = read_str(r)?;
            let len = read_u32(r)? as usize;
            let mut list = Vec::with_capacity(len.min(n));
            for _ in 0..len {
                let doc = read_u32(r)?;
                let tf = read_u32(r)?;
                if doc as usize >= n
                    || tf == 0
                    || list.last().is_some_and(|p: &Posting| p.doc >= doc)
                {
                    return Err(Bm25Error::Format(format!("bad posting for term `{term}`")));
                }
                list.push(Posting { doc, tf });
            }
            postings.insert(term, list);
        }
        Ok(InvertedIndex {
            params,
            tokenizer: Tokenizer { stopwords },
            doc_ids,
            doc_lens,
            total_len,
            postings,
            by_id,
        })
    }

    pub fn load(path: &Path) -> Result<Self, Bm25Error> {
        let mut r = io::BufReader::new(fs::File::open(path)?);
        Self::read_from(&mut r)
    }
}

fn unique(terms: &[String]) -> impl Iterator<Item = &str> {
    let mut seen = BTreeSet::new();
    terms
        .iter()
        .map(String::as_str)
        .filter(move |t| seen.insert(*t))
}

fn write_str(w: &mut impl Write, s: &str) -> io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<(), Bm25Error> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Bm25Error::Format("truncated file".into()),
        _ => Bm25Error::Io(e),
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32, Bm25Error> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, Bm25Error> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64, Bm25Error> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_str(r: &mut impl Read) -> Result<String, Bm25Error> {
    let len = read_u32(r)? as usize;
    let mut buf = Vec::new();
    r.take(len as u64).read_to_end(&mut buf)?;
    if buf.len() != len {
        return Err(Bm25Error::Format("truncated file".into()));
    }
    String::from_utf8(buf).map_err(|_| Bm25Error::Format("string is not UTF-8".into()))
}
