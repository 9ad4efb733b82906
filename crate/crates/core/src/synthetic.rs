//! Synthetic two-domain NER tasks with a known embedding relation.
//!
//! Both domains share a sentence grammar: a fixed set of templates of
//! lowercase context words with typed entity slots. Source entities come from
//! dictionary A and target entities from a disjoint dictionary B. Every word
//! has a latent vector (entities: a type centroid plus noise); source vectors
//! are the latent vectors and target vectors are `latent · R` for a random
//! orthogonal `R`, so the ideal target→source projection is `Rᵀ`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use nerxfer_autograd::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::pipeline::conll::save_conll;
use crate::pipeline::data::{Dataset, SequenceExample, OUTSIDE};
use crate::training::stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub dim: usize,
    pub entity_types: Vec<String>,
    pub context_vocab: usize,
    pub templates: usize,
    /// Entries per entity type in each domain's dictionary.
    pub dictionary_size: usize,
    /// Norm of each type centroid.
    pub centroid_norm: f64,
    /// Per-coordinate standard deviation of entity vectors around their centroid.
    pub entity_noise: f64,
    /// Probability that a context word is replaced by a random one.
    pub word_noise: f64,
    /// Per-coordinate standard deviation of the perturbation added to each
    /// target vector after rotation, so no projection is exact.
    pub target_noise: f64,
    pub source_train: usize,
    pub source_dev: usize,
    pub target_train: usize,
    pub target_dev: usize,
    pub target_test: usize,
    /// Extra unlabeled sentences per domain for the frequency tables.
    pub raw_sentences: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            entity_types: vec!["PER".into(), "LOC".into(), "ORG".into()],
            context_vocab: 80,
            templates: 40,
            dictionary_size: 40,
            centroid_norm: 1.0,
            entity_noise: 0.3,
            word_noise: 0.1,
            target_noise: 0.02,
            source_train: 500,
            source_dev: 100,
            target_train: 40,
            target_dev: 100,
            target_test: 100,
            raw_sentences: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Slot {
    Word(usize),
    Entity(usize),
}

/// A generated two-domain task.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub config: SyntheticConfig,
    pub source: Dataset,
    pub target: Dataset,
    /// Source-domain embeddings (context words and dictionary A).
    pub v_s: EmbeddingMatrix,
    /// Target-domain embeddings (context words and dictionary B), rotated.
    pub v_t: EmbeddingMatrix,
    /// One table in the source space covering both dictionaries.
    pub shared: EmbeddingMatrix,
    /// The rotation with `v_t ≈ v_s · R`, `[dim, dim]`.
    pub rotation: Tensor,
    pub source_corpus: Vec<Vec<String>>,
    pub target_corpus: Vec<Vec<String>>,
}

/// Pronounceable word number `n`: three consonant-vowel syllables.
fn pseudo_word(n: usize) -> String {
    const C: &[u8] = b"bdfgklmnprstvz";
    const V: &[u8] = b"aeiou";
    let base = C.len() * V.len();
    let mut n = n;
    let mut s = String::new();
    for _ in 0..3 {
        let syl = n % base;
        s.push(C[syl / V.len()] as char);
        s.push(V[syl % V.len()] as char);
        n /= base;
    }
    s
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> Vec<f64> {
    (0..n).map(|_| { let z: f64 = StandardNormal.sample(rng); sd * z }).collect::<Vec<f64>>()
}

/// Uniformly random orthogonal matrix (QR of a Gaussian matrix with sign fix).
pub fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> Tensor {
    let m = DMatrix::from_vec(d, d, gaussian(rng, d * d, 1.0));
    let qr = m.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let data = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| q[(i, j)]).collect();
    Tensor::matrix(d, d, data).expect("square")
}

struct Generator {
    cfg: SyntheticConfig,
    templates: Vec<Vec<Slot>>,
    context: Vec<String>,
    /// `[domain][type]` → multi-token entity names.
    dictionaries: [Vec<Vec<Vec<String>>>; 2],
}

impl Generator {
    fn entity_label(&self, ty: usize, first: bool) -> String {
        format!("{}-{}", if first { 'B' } else { 'I' }, self.cfg.entity_types[ty])
    }

    fn context_word(&self, rng: &mut ChaCha8Rng) -> usize {
        // Zipf-like: low indices are frequent.
        let u: f64 = rng.gen();
        ((u * u) * self.cfg.context_vocab as f64) as usize
    }

    fn sentence(&self, domain: usize, rng: &mut ChaCha8Rng) -> SequenceExample {
        let template = &self.templates[rng.gen_range(0..self.templates.len())];
        let mut tokens = Vec::new();
        let mut labels = Vec::new();
        for slot in template {
            match *slot {
                Slot::Word(w) => {
                    let w = if rng.gen_bool(self.cfg.word_noise) { self.context_word(rng) } else { w };
                    tokens.push(self.context[w].clone());
                    labels.push(OUTSIDE.to_string());
                }
                Slot::Entity(ty) => {
                    let name = self.dictionaries[domain][ty].choose(rng).expect("non-empty dictionary");
                    for (i, part) in name.iter().enumerate() {
                        tokens.push(part.clone());
                        labels.push(self.entity_label(ty, i == 0));
                    }
                }
            }
        }
        SequenceExample { tokens, labels }
    }

    fn sentences(&self, domain: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<SequenceExample> {
        (0..n).map(|_| self.sentence(domain, rng)).collect()
    }
}

impl SyntheticTask {
    pub fn generate(cfg: &SyntheticConfig) -> Result<Self> {
        let types = cfg.entity_types.len();
        if cfg.dim == 0 || types == 0 || cfg.context_vocab < 2 || cfg.templates == 0 || cfg.dictionary_size == 0 {
            return Err(Error::InvalidInput("synthetic config sizes must be positive".into()));
        }
        if cfg.source_train == 0 || cfg.target_train == 0 {
            return Err(Error::InvalidInput("synthetic training sets must be non-empty".into()));
        }
        let mut rng = stream(cfg.seed, 10);

        let context: Vec<String> = (0..cfg.context_vocab).map(pseudo_word).collect();
        let mut next_name = cfg.context_vocab;
        let mut dictionaries: [Vec<Vec<Vec<String>>>; 2] = [Vec::new(), Vec::new()];
        for dict in &mut dictionaries {
            for _ in 0..types {
                let entries = (0..cfg.dictionary_size)
                    .map(|_| {
                        let parts = if rng.gen_bool(0.3) { 2 } else { 1 };
                        (0..parts)
                            .map(|_| {
                                next_name += 1;
                                capitalize(&pseudo_word(next_name))
                            })
                            .collect()
                    })
                    .collect();
                dict.push(entries);
            }
        }
        let mut generator = Generator {
            cfg: cfg.clone(),
            templates: Vec::new(),
            context,
            dictionaries,
        };
        for _ in 0..cfg.templates {
            let len = rng.gen_range(4..=9);
            let entities = if len > 6 { rng.gen_range(1..=2) } else { 1 };
            let mut slots: Vec<Slot> = (0..len).map(|_| Slot::Word(generator.context_word(&mut rng))).collect();
            let mut positions: Vec<usize> = (0..len).collect();
            positions.shuffle(&mut rng);
            let mut placed = Vec::new();
            for &p in &positions {
                if placed.len() == entities {
                    break;
                }
                if placed.iter().all(|&q: &usize| q.abs_diff(p) > 1) {
                    slots[p] = Slot::Entity(rng.gen_range(0..types));
                    placed.push(p);
                }
            }
            generator.templates.push(slots);
        }

        // Latent vectors in the source space.
        let d = cfg.dim;
        let mut latent: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for w in &generator.context {
            latent.insert(w.clone(), gaussian(&mut rng, d, 1.0 / (d as f64).sqrt()));
        }
        let centroids: Vec<Vec<f64>> = (0..types)
            .map(|_| {
                let v = gaussian(&mut rng, d, 1.0);
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter().map(|x| x * cfg.centroid_norm / n).collect()
            })
            .collect();
        let mut domain_words: [Vec<String>; 2] = [Vec::new(), Vec::new()];
        for (domain, dict) in generator.dictionaries.iter().enumerate() {
            for (ty, entries) in dict.iter().enumerate() {
                for part in entries.iter().flatten() {
                    let key = part.to_lowercase();
                    let noise = gaussian(&mut rng, d, cfg.entity_noise);
                    let v = centroids[ty].iter().zip(noise).map(|(c, n)| c + n).collect();
                    latent.insert(key.clone(), v);
                    domain_words[domain].push(key);
                }
            }
        }
        let rotation = random_orthogonal(&mut rng, d);
        let rotate = |v: &[f64]| -> Vec<f64> {
            (0..d).map(|j| (0..d).map(|i| v[i] * rotation.get(i, j)).sum()).collect()
        };
        let rows = |words: &[String], f: &dyn Fn(&String) -> Vec<f64>| -> Result<EmbeddingMatrix> {
            EmbeddingMatrix::from_rows(generator.context.iter().chain(words).map(|w| (w.clone(), f(w))))
        };
        let v_s = rows(&domain_words[0], &|w| latent[w].clone())?;
        let mut target_rng = stream(cfg.seed, 12);
        let perturbed: BTreeMap<&String, Vec<f64>> = generator
            .context
            .iter()
            .chain(&domain_words[1])
            .map(|w| {
                let noise = gaussian(&mut target_rng, d, cfg.target_noise);
                (w, rotate(&latent[w]).iter().zip(noise).map(|(x, n)| x + n).collect())
            })
            .collect();
        let v_t = rows(&domain_words[1], &|w| perturbed[w].clone())?;
        let both: Vec<String> = domain_words.concat();
        let shared = rows(&both, &|w| latent[w].clone())?;

        let mut data_rng = stream(cfg.seed, 11);
        let source = Dataset::new(
            generator.sentences(0, cfg.source_train, &mut data_rng),
            generator.sentences(0, cfg.source_dev, &mut data_rng),
            Vec::new(),
        );
        let target = Dataset::new(
            generator.sentences(1, cfg.target_train, &mut data_rng),
            generator.sentences(1, cfg.target_dev, &mut data_rng),
            generator.sentences(1, cfg.target_test, &mut data_rng),
        );
        let raw = |domain: usize, labeled: &Dataset, rng: &mut ChaCha8Rng| -> Vec<Vec<String>> {
            labeled
                .train
                .iter()
                .chain(&labeled.dev)
                .cloned()
                .chain(generator.sentences(domain, cfg.raw_sentences, rng))
                .map(|e| e.tokens.iter().map(|t| t.to_lowercase()).collect())
                .collect()
        };
        let source_corpus = raw(0, &source, &mut data_rng);
        let target_corpus = raw(1, &target, &mut data_rng);

        Ok(Self {
            config: cfg.clone(),
            source,
            target,
            v_s,
            v_t,
            shared,
            rotation,
            source_corpus,
            target_corpus,
        })
    }

    /// Write the task as CoNLL, embedding and raw-text files under `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_conll(&dir.join("source_train.conll"), &self.source.train)?;
        save_conll(&dir.join("source_dev.conll"), &self.source.dev)?;
        save_conll(&dir.join("target_train.conll"), &self.target.train)?;
        save_conll(&dir.join("target_dev.conll"), &self.target.dev)?;
        save_conll(&dir.join("target_test.conll"), &self.target.test)?;
        self.v_s.save(&dir.join("source.vec"))?;
        self.v_t.save(&dir.join("target.vec"))?;
        self.shared.save(&dir.join("shared.vec"))?;
        for (name, corpus) in [("source_corpus.txt", &self.source_corpus), ("target_corpus.txt", &self.target_corpus)] {
            let text: String = corpus.iter().map(|s| s.join(" ") + "\n").collect();
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Configuration of the bundled 20-sentence corpus.
pub fn bundled_config() -> SyntheticConfig {
    SyntheticConfig {
        templates: 10,
        context_vocab: 30,
        dictionary_size: 8,
        source_train: 20,
        source_dev: 0,
        target_train: 20,
        target_dev: 0,
        target_test: 0,
        raw_sentences: 100,
        seed: 2024,
        ..SyntheticConfig::default()
    }
}

/// The bundled 20-sentence corpus (20 source and 20 target training sentences).
pub fn bundled_task() -> SyntheticTask {
    SyntheticTask::generate(&bundled_config()).expect("valid bundled config")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pseudo_words_are_distinct() {
        let words: std::collections::HashSet<String> = (0..5000).map(pseudo_word).collect();
        assert_eq!(words.len(), 5000);
    }

    #[test]
    fn rotation_is_orthogonal() {
        let r = random_orthogonal(&mut stream(1, 1), 6);
        let rrt = r.matmul(&r.transpose().unwrap()).unwrap();
        let eye = Tensor::identity(6);
        for (a, b) in rrt.data().iter().zip(eye.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn target_vectors_are_rotated_source_space() {
        let task = bundled_task();
        assert_eq!(task.source.train.len(), 20);
        assert_eq!(task.target.train.len(), 20);
        let w = &task.v_s.vocab()[0];
        let vs = task.v_s.lookup(w).unwrap();
        let vt = task.v_t.lookup(w).unwrap();
        let d = task.config.dim;
        for j in 0..d {
            let x: f64 = (0..d).map(|i| vs[i] * task.rotation.get(i, j)).sum();
            assert!((x - vt[j]).abs() < 6.0 * task.config.target_noise);
        }
        for ex in &task.target.train {
            for (t, l) in ex.tokens.iter().zip(&ex.labels) {
                if l != OUTSIDE {
                    assert!(!task.v_s.contains(t), "target entity {t} leaked into source table");
                    assert!(task.v_t.contains(t));
                }
            }
        }
    }
}
