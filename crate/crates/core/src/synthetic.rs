//! A synthetic world with a known joint distribution over (subject,
//! predicate, object) strings. It supplies a training corpus for the
//! reference backend and triples labeled by their true NPMI.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backend::vocab::split_words;
use crate::data::{AnnotatedTriple, Dataset, Schema, Split, Triple};
use crate::datatools::{split_random, Ratios};
use crate::rng::substream;
use crate::templates::{render_text, PromptLayout, TemplateRegistry, DEFAULT_TEMPLATES};

#[derive(Debug, thiserror::Error)]
pub enum SyntheticError {
    #[error("invalid synthetic config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub seed: u64,
    /// Number of predicates, taken in order from the default templates.
    pub predicates: usize,
    pub subjects: usize,
    pub objects: usize,
    /// Objects strongly associated with each subject, per predicate.
    pub associations: usize,
    /// Probability mass of an object draw that goes to the associated set.
    pub association_strength: f64,
    /// Exponent of the Zipf marginals over subjects and background objects.
    pub zipf_exponent: f64,
    pub corpus_sentences: usize,
    /// Layout whose `[P]` slots appear in half of the corpus sentences, so the
    /// backend sees both the plain and the prompted surface forms.
    pub corpus_layout: PromptLayout,
    /// Share of plain sentences (those without `[P]` slots) drawn from a
    /// second table with unrelated associations instead of the true joint.
    pub plain_noise: f64,
    /// Number of distinct labeled triples across train, dev and test.
    pub triples: usize,
    pub ratios: Ratios,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 0,
            predicates: 3,
            subjects: 16,
            objects: 16,
            associations: 4,
            association_strength: 0.9,
            zipf_exponent: 1.0,
            corpus_sentences: 30000,
            corpus_layout: PromptLayout::default(),
            plain_noise: 1.0,
            triples: 384,
            ratios: Ratios { train: 0.6, dev: 0.2, test: 0.2 },
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), SyntheticError> {
        let bad = |m: &str| Err(SyntheticError::Config(m.to_string()));
        if self.predicates == 0 || self.predicates > DEFAULT_TEMPLATES.len() {
            return bad("predicates must be between 1 and the number of default templates");
        }
        if self.subjects < 2 || self.objects < 2 {
            return bad("need at least two subjects and two objects");
        }
        if self.associations == 0 || self.associations > self.objects {
            return bad("associations must be between 1 and the number of objects");
        }
        if !(self.association_strength >= 0.0 && self.association_strength < 1.0) {
            return bad("association_strength must be in [0, 1)");
        }
        if !(self.plain_noise >= 0.0 && self.plain_noise <= 1.0) {
            return bad("plain_noise must be in [0, 1]");
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return bad("zipf_exponent must be finite and non-negative");
        }
        let pool = self.predicates * self.subjects * self.objects;
        if self.triples < 10 || self.triples > pool {
            return bad("triples must be at least 10 and at most the number of possible triples");
        }
        Ratios::new(self.ratios.train, self.ratios.dev, self.ratios.test)
            .map_err(|e| SyntheticError::Config(e.to_string()))?;
        Ok(())
    }
}

/// The joint distribution `P(s, o | p)` for every predicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub predicates: Vec<String>,
    pub subjects: Vec<String>,
    pub objects: Vec<String>,
    /// `joint[p][s][o] = P(s, o | p)`.
    pub joint: Vec<Vec<Vec<f64>>>,
    /// `associated[p][s][o]`: whether `o` is in the associated set of `s`.
    pub associated: Vec<Vec<Vec<bool>>>,
    /// Same marginals over subjects, unrelated associations. Plain corpus
    /// sentences draw from it with probability `plain_noise`.
    pub spurious: Vec<Vec<Vec<f64>>>,
    pub plain_noise: f64,
}

fn association_table(
    p_s: &[f64],
    background: &[f64],
    config: &SyntheticConfig,
    rng: &mut impl Rng,
) -> (Vec<Vec<f64>>, Vec<Vec<bool>>) {
    let beta = config.association_strength;
    p_s.iter()
        .map(|&ps| {
            let mut ids: Vec<usize> = (0..config.objects).collect();
            ids.shuffle(rng);
            let weights: Vec<f64> = (0..config.associations).map(|_| rng.random_range(0.5..1.5)).collect();
            let wsum: f64 = weights.iter().sum();
            let mut p_o: Vec<f64> = background.iter().map(|b| (1.0 - beta) * b).collect();
            let mut flags = vec![false; config.objects];
            for (&o, w) in ids.iter().zip(&weights) {
                p_o[o] += beta * w / wsum;
                flags[o] = true;
            }
            (p_o.iter().map(|po| ps * po).collect(), flags)
        })
        .unzip()
}

fn zipf(n: usize, exponent: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut w: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-exponent)).collect();
    w.shuffle(rng);
    let total: f64 = w.iter().sum();
    w.iter().map(|v| v / total).collect()
}

impl SyntheticWorld {
    pub fn generate(config: &SyntheticConfig) -> Result<Self, SyntheticError> {
        config.validate()?;
        let mut rng = substream(config.seed, "synthetic-world");
        let predicates: Vec<String> = DEFAULT_TEMPLATES[..config.predicates]
            .iter()
            .map(|(k, _)| k.to_string())
            .collect();
        let subjects: Vec<String> = (0..config.subjects).map(|i| format!("s{i:02}")).collect();
        let objects: Vec<String> = (0..config.objects).map(|i| format!("o{i:02}")).collect();
        let mut joint = Vec::with_capacity(predicates.len());
        let mut associated = Vec::with_capacity(predicates.len());
        let mut spurious = Vec::with_capacity(predicates.len());
        for _ in &predicates {
            let p_s = zipf(config.subjects, config.zipf_exponent, &mut rng);
            let background = zipf(config.objects, config.zipf_exponent, &mut rng);
            let (table, flags) = association_table(&p_s, &background, config, &mut rng);
            joint.push(table);
            associated.push(flags);
            spurious.push(association_table(&p_s, &background, config, &mut rng).0);
        }
        Ok(SyntheticWorld {
            predicates,
            subjects,
            objects,
            joint,
            associated,
            spurious,
            plain_noise: config.plain_noise,
        })
    }

    pub fn subject_marginal(&self, p: usize, s: usize) -> f64 {
        self.joint[p][s].iter().sum()
    }

    pub fn object_marginal(&self, p: usize, o: usize) -> f64 {
        self.joint[p].iter().map(|row| row[o]).sum()
    }

    /// True NPMI `ln(P(s,o|p) / (P(s|p) P(o|p))) / −ln P(s,o|p)`.
    pub fn npmi(&self, p: usize, s: usize, o: usize) -> f64 {
        let j = self.joint[p][s][o];
        let pmi = (j / (self.subject_marginal(p, s) * self.object_marginal(p, o))).ln();
        pmi / -j.ln()
    }

    /// True `PMI / −ln P(s | p, o)`.
    pub fn necessity(&self, p: usize, s: usize, o: usize) -> f64 {
        let j = self.joint[p][s][o];
        let pmi = (j / (self.subject_marginal(p, s) * self.object_marginal(p, o))).ln();
        pmi / -(j / self.object_marginal(p, o)).ln()
    }

    /// True `PMI / −ln P(o | s, p)`.
    pub fn sufficiency(&self, p: usize, s: usize, o: usize) -> f64 {
        let j = self.joint[p][s][o];
        let pmi = (j / (self.subject_marginal(p, s) * self.object_marginal(p, o))).ln();
        pmi / -(j / self.subject_marginal(p, s)).ln()
    }

    pub fn triple(&self, p: usize, s: usize, o: usize) -> Triple {
        Triple::from_parts(&self.subjects[s], &self.predicates[p], &self.objects[o])
            .expect("generated names are valid")
    }

    /// Tokenized sentences, predicates uniform. Half of them carry the `[P]`
    /// slots of `layout` and follow the joint. The plain half follows the
    /// spurious table with probability `plain_noise`, the joint otherwise.
    pub fn corpus(&self, n: usize, layout: PromptLayout, seed: u64) -> Vec<Vec<String>> {
        let registry = TemplateRegistry::default();
        let mut rng = substream(seed, "synthetic-corpus");
        let samplers = |tables: &[Vec<Vec<f64>>]| -> Vec<WeightedIndex<f64>> {
            tables
                .iter()
                .map(|t| WeightedIndex::new(t.iter().flatten().copied()).expect("positive weights"))
                .collect()
        };
        let true_samplers = samplers(&self.joint);
        let spurious_samplers = samplers(&self.spurious);
        (0..n)
            .map(|_| {
                let p = rng.random_range(0..self.predicates.len());
                let prompted = rng.random_bool(0.5);
                let noisy = !prompted && rng.random_bool(self.plain_noise);
                let sampler = if noisy { &spurious_samplers[p] } else { &true_samplers[p] };
                let k = sampler.sample(&mut rng);
                let (s, o) = (k / self.objects.len(), k % self.objects.len());
                let template = registry.get(&self.predicates[p]).expect("default template");
                let l = if prompted { layout } else { PromptLayout::none() };
                split_words(&render_text(template, &self.subjects[s], &self.objects[o], l))
            })
            .collect()
    }
}

/// Labeled triples of a synthetic world, split three ways. Sufficiency and
/// necessity labels are the tertiles of the true standard-denominator scores
/// mapped to 0, 0.5 and 1.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub world: SyntheticWorld,
    pub corpus: Vec<Vec<String>>,
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
    /// Median true NPMI over all labeled triples; a triple is salient iff
    /// its NPMI exceeds it.
    pub median_npmi: f64,
    /// True NPMI of each test record, in order.
    pub test_npmi: Vec<f64>,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 }
}

fn tertiles(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    (v[n / 3], v[2 * n / 3])
}

fn likert(value: f64, (low, high): (f64, f64)) -> f64 {
    if value < low {
        0.0
    } else if value < high {
        0.5
    } else {
        1.0
    }
}

/// Builds the world, its corpus, and train/dev/test sets. Half of the
/// labeled triples are associated pairs and half are not, each drawn
/// uniformly, so the true NPMI is bimodal and both labels are well
/// represented.
pub fn generate(config: &SyntheticConfig) -> Result<SyntheticData, SyntheticError> {
    let world = SyntheticWorld::generate(config)?;
    let corpus = world.corpus(config.corpus_sentences, config.corpus_layout, config.seed);
    let mut rng = substream(config.seed, "synthetic-triples");
    let mut cells: [Vec<(usize, usize, usize)>; 2] = [Vec::new(), Vec::new()];
    for (p, table) in world.associated.iter().enumerate() {
        for (s, row) in table.iter().enumerate() {
            for (o, &a) in row.iter().enumerate() {
                cells[usize::from(a)].push((p, s, o));
            }
        }
    }
    let want_associated = (config.triples / 2).min(cells[1].len());
    let want_other = config.triples - want_associated;
    if want_other > cells[0].len() {
        return Err(SyntheticError::Config("not enough unassociated pairs for the requested triples".into()));
    }
    let mut chosen: Vec<(usize, usize, usize)> = cells[1]
        .choose_multiple(&mut rng, want_associated)
        .chain(cells[0].choose_multiple(&mut rng, want_other))
        .copied()
        .collect();
    chosen.shuffle(&mut rng);
    let npmi: Vec<f64> = chosen.iter().map(|&(p, s, o)| world.npmi(p, s, o)).collect();
    let median_npmi = median(&npmi);
    let nec: Vec<f64> = chosen.iter().map(|&(p, s, o)| world.necessity(p, s, o)).collect();
    let suf: Vec<f64> = chosen.iter().map(|&(p, s, o)| world.sufficiency(p, s, o)).collect();
    let (nec_cut, suf_cut) = (tertiles(&nec), tertiles(&suf));
    let records: Vec<AnnotatedTriple> = chosen
        .iter()
        .enumerate()
        .map(|(i, &(p, s, o))| {
            AnnotatedTriple::fully_labeled(
                world.triple(p, s, o),
                likert(suf[i], suf_cut),
                likert(nec[i], nec_cut),
                u8::from(npmi[i] > median_npmi),
            )
        })
        .collect();
    let all = Dataset::new("synthetic", Schema::Original, records);
    let assignment = split_random(&all, config.ratios, config.seed).map_err(|e| SyntheticError::Config(e.to_string()))?;
    let part = |split: Split| all.subset(format!("synthetic-{}", split.name()), &assignment.indices(split));
    let test_npmi = assignment.indices(Split::Test).iter().map(|&i| npmi[i]).collect();
    Ok(SyntheticData {
        corpus,
        train: part(Split::Train),
        dev: part(Split::Dev),
        test: part(Split::Test),
        median_npmi,
        test_npmi,
        world,
    })
}

/// Every word a corpus of `world` can contain, sorted.
pub fn vocabulary(world: &SyntheticWorld) -> Vec<String> {
    let mut words: Vec<String> = world.subjects.iter().chain(&world.objects).cloned().collect();
    let registry = TemplateRegistry::default();
    for p in &world.predicates {
        let t = registry.get(p).expect("default template");
        words.extend(split_words(&t.fill("", "")));
    }
    words.sort();
    words.dedup();
    words
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            corpus_sentences: 200,
            triples: 60,
            plain_noise: 0.0,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn joint_is_a_distribution() {
        let w = SyntheticWorld::generate(&small()).unwrap();
        for table in &w.joint {
            let total: f64 = table.iter().flatten().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(table.iter().flatten().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn npmi_is_bounded() {
        let w = SyntheticWorld::generate(&small()).unwrap();
        for p in 0..w.predicates.len() {
            for s in 0..w.subjects.len() {
                for o in 0..w.objects.len() {
                    let v = w.npmi(p, s, o);
                    assert!((-1.0..=1.0).contains(&v), "{v}");
                }
            }
        }
    }

    #[test]
    fn generation_is_seeded() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.test.records, b.test.records);
        let c = generate(&SyntheticConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.corpus, c.corpus);
    }

    #[test]
    fn labels_split_at_median() {
        let d = generate(&small()).unwrap();
        let n = d.train.len() + d.dev.len() + d.test.len();
        assert_eq!(n, 60);
        let pos: usize = [&d.train, &d.dev, &d.test]
            .iter()
            .map(|s| s.salient_labels().unwrap().iter().map(|&l| l as usize).sum::<usize>())
            .sum();
        assert_eq!(pos, 30);
        for (r, v) in d.test.records.iter().zip(&d.test_npmi) {
            assert_eq!(r.salient, Some(u8::from(*v > d.median_npmi)));
        }
    }

    #[test]
    fn corpus_uses_both_surface_forms() {
        let d = generate(&small()).unwrap();
        let prompted = d.corpus.iter().filter(|s| s.iter().any(|w| w == "[P]")).count();
        assert!(prompted > 50 && prompted < 150);
        assert!(vocabulary(&d.world).contains(&"requires".to_string()));
    }
}
