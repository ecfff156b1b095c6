use std::collections::{BTreeMap, HashMap};

use super::{extract_numbers, BenchError};

/// Lowercase, punctuation removed, whitespace collapsed.
pub fn normalize(text: &str) -> String {
    let cleaned: String = text
        .chars()
        .flat_map(char::to_lowercase)
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn tokens(text: &str) -> Vec<String> {
    normalize(text).split_whitespace().map(str::to_string).collect()
}

fn normalize_answer(text: &str) -> String {
    let n = normalize(text);
    let mut words: Vec<&str> = n.split_whitespace().collect();
    while matches!(words.first(), Some(&("a" | "an" | "the"))) {
        words.remove(0);
    }
    words.join(" ")
}

/// 1 when any number in the prediction equals `gt`.
pub fn count_accuracy(prediction: &str, gt: u64) -> f64 {
    if extract_numbers(prediction).contains(&gt) {
        1.0
    } else {
        0.0
    }
}

pub fn exact_match<S: AsRef<str>>(prediction: &str, references: &[S]) -> f64 {
    let p = normalize_answer(prediction);
    if references.iter().any(|r| normalize_answer(r.as_ref()) == p) {
        1.0
    } else {
        0.0
    }
}

fn ngram_counts(toks: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Sentence BLEU-4 with clipped counts; an n-gram order (n ≥ 2) without
/// matches uses `1/(c_n + 1)`.
pub fn bleu4<S: AsRef<str>>(prediction: &str, references: &[S]) -> f64 {
    let cand = tokens(prediction);
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokens(r.as_ref())).collect();
    if cand.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let c = ngram_counts(&cand, n);
        let total: usize = c.values().sum();
        let mut max_ref: HashMap<&[String], usize> = HashMap::new();
        for r in &refs {
            for (g, k) in ngram_counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(k);
            }
        }
        let matched: usize = c.iter().map(|(g, k)| (*k).min(max_ref.get(g).copied().unwrap_or(0))).sum();
        let p = if matched > 0 {
            matched as f64 / total as f64
        } else if n == 1 {
            return 0.0;
        } else {
            1.0 / (total as f64 + 1.0)
        };
        log_sum += p.ln();
    }
    let c = cand.len();
    let r = refs
        .iter()
        .map(Vec::len)
        .min_by_key(|&l| (l.abs_diff(c), l))
        .unwrap_or(0);
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * (log_sum / 4.0).exp()
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Longest-common-subsequence F1, best reference.
pub fn rouge_l<S: AsRef<str>>(prediction: &str, references: &[S]) -> f64 {
    let cand = tokens(prediction);
    if cand.is_empty() {
        return 0.0;
    }
    references
        .iter()
        .map(|r| {
            let r = tokens(r.as_ref());
            let l = lcs(&cand, &r);
            if l == 0 {
                return 0.0;
            }
            let p = l as f64 / cand.len() as f64;
            let rc = l as f64 / r.len() as f64;
            2.0 * p * rc / (p + rc)
        })
        .fold(0.0, f64::max)
}

type Grams = HashMap<Vec<String>, f64>;

fn grams(toks: &[String], n: usize) -> Grams {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w.to_vec()).or_insert(0.0) += 1.0;
        }
    }
    m
}

fn tfidf(g: &Grams, df: &HashMap<Vec<String>, f64>, log_n: f64) -> (Grams, f64) {
    let mut v = HashMap::with_capacity(g.len());
    let mut norm = 0.0;
    for (k, tf) in g {
        let w = tf * (log_n - df.get(k).copied().unwrap_or(0.0).max(1.0).ln());
        norm += w * w;
        v.insert(k.clone(), w);
    }
    (v, norm.sqrt())
}

/// Per-candidate CIDEr (TF-IDF n-gram cosine, n = 1..4, uniform weights,
/// ×10) with document frequencies over the reference corpus. Returns the
/// per-candidate scores in input order.
pub fn cider<S: AsRef<str>>(
    candidates: &[(String, String)],
    references: &BTreeMap<String, Vec<S>>,
) -> Result<Vec<f64>, BenchError> {
    if references.is_empty() || references.values().all(|r| r.is_empty()) {
        return Err(BenchError::EmptyCorpus);
    }
    let ref_toks: BTreeMap<&str, Vec<Vec<String>>> = references
        .iter()
        .map(|(id, rs)| (id.as_str(), rs.iter().map(|r| tokens(r.as_ref())).collect()))
        .collect();
    let log_n = (references.len() as f64).ln();
    let mut dfs: Vec<HashMap<Vec<String>, f64>> = vec![HashMap::new(); 4];
    for rs in ref_toks.values() {
        for (n, df) in dfs.iter_mut().enumerate() {
            let mut seen: std::collections::HashSet<Vec<String>> = std::collections::HashSet::new();
            for r in rs {
                seen.extend(grams(r, n + 1).into_keys());
            }
            for k in seen {
                *df.entry(k).or_insert(0.0) += 1.0;
            }
        }
    }
    let mut out = Vec::with_capacity(candidates.len());
    for (id, text) in candidates {
        let rs = ref_toks.get(id.as_str()).ok_or_else(|| BenchError::UnknownId(id.clone()))?;
        let cand = tokens(text);
        let mut total = 0.0;
        for (n, df) in dfs.iter().enumerate() {
            let (cv, cn) = tfidf(&grams(&cand, n + 1), df, log_n);
            let mut acc = 0.0;
            for r in rs {
                let (rv, rn) = tfidf(&grams(r, n + 1), df, log_n);
                if cn > 0.0 && rn > 0.0 {
                    let dot: f64 = cv.iter().map(|(k, a)| a * rv.get(k).copied().unwrap_or(0.0)).sum();
                    acc += dot / (cn * rn);
                }
            }
            if !rs.is_empty() {
                total += acc / rs.len() as f64;
            }
        }
        out.push(10.0 * total / 4.0);
    }
    Ok(out)
}
