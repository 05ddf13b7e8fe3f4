//! Independent cosine ranking over hashed term counts, and random corpora.

use std::collections::HashMap;
use std::path::PathBuf;

use rand::seq::IndexedRandom;
use rand::Rng;

pub const WORDS: [&str; 16] = [
    "rego", "deny", "rule", "cpu", "cores", "memory", "disk", "tag", "VM", "plan", "input", "policy", "Storage",
    "proxmox", "count", "not",
];

/// Cosine of raw hashed term counts, computed from the definition: terms are
/// lowercased alphanumeric runs, bucket = FNV-1a(term) mod 1024.
pub fn reference_vector(text: &str) -> HashMap<u64, f64> {
    let mut v = HashMap::new();
    let mut term = String::new();
    let flush = |term: &mut String, v: &mut HashMap<u64, f64>| {
        if !term.is_empty() {
            let mut h: u64 = 14695981039346656037;
            for b in term.to_lowercase().bytes() {
                h = (h ^ b as u64).wrapping_mul(1099511628211);
            }
            *v.entry(h % 1024).or_insert(0.0) += 1.0;
            term.clear();
        }
    };
    for c in text.chars() {
        if c.is_alphanumeric() {
            term.push(c);
        } else {
            flush(&mut term, &mut v);
        }
    }
    flush(&mut term, &mut v);
    v
}

pub fn cosine(a: &HashMap<u64, f64>, b: &HashMap<u64, f64>) -> f64 {
    let dot: f64 = a.iter().map(|(k, x)| x * b.get(k).unwrap_or(&0.0)).sum();
    let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub fn sentence(rng: &mut impl Rng) -> String {
    let n = rng.random_range(1..8);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

pub fn write_corpus(rng: &mut impl Rng, dir: &std::path::Path) -> Vec<PathBuf> {
    (0..rng.random_range(1..4))
        .map(|k| {
            let p = dir.join(format!("doc{k}.md"));
            let body: Vec<String> = (0..rng.random_range(1..12)).map(|_| sentence(rng)).collect();
            std::fs::write(&p, body.join(". ")).unwrap();
            p
        })
        .collect()
}
