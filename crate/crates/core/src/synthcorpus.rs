//! Seeded synthetic grammar and pretraining corpus.
//!
//! Verbs come in alternation families (licensed in both frames of a pair),
//! distractors (one frame of the pair plus a singleton frame) and fillers
//! (singleton frames only). Each verb selects one noun class for all of its
//! argument slots, so class structure holds by construction.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stimuli::{selectional_frame, shipped_battery, AlternationSpec, FrameTemplate, TemplateItem, TokenSequence};
use crate::vocab::Vocabulary;

/// An alternating frame pair the grammar can assign to a family.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyFrames {
    pub id: String,
    pub name: String,
    pub levin_label: String,
    pub frame_a: FrameTemplate,
    pub frame_b: FrameTemplate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrammarSpec {
    pub n_alternation_families: usize,
    pub verbs_per_family: usize,
    pub distractors_per_family: usize,
    pub n_noun_classes: usize,
    pub nouns_per_class: usize,
    #[serde(default)]
    pub filler_verbs: usize,
    pub frame_inventory: Vec<FamilyFrames>,
    /// Frames outside every alternation, used by distractors and fillers.
    pub singleton_frames: Vec<FrameTemplate>,
    pub closed_class_words: Vec<String>,
}

/// Builds the alternation pairs of the shipped battery entries named by `ids`.
fn shipped_pairs(ids: &[&str]) -> Vec<FamilyFrames> {
    let battery = shipped_battery();
    ids.iter()
        .map(|id| {
            let s = battery.iter().find(|s| s.id == *id).expect("known battery id");
            FamilyFrames {
                id: s.id.clone(),
                name: s.name.clone(),
                levin_label: s.levin_label.clone(),
                frame_a: s.frame_a.clone(),
                frame_b: s.frame_b.clone(),
            }
        })
        .collect()
}

/// Sorted closed-class words of the shipped battery.
pub fn battery_closed_class() -> Vec<String> {
    let words: BTreeSet<String> = shipped_battery()
        .iter()
        .flat_map(|s| [&s.frame_a, &s.frame_b])
        .flat_map(|f| f.function_words().map(str::to_string).collect::<Vec<_>>())
        .collect();
    words.into_iter().collect()
}

impl GrammarSpec {
    /// Three families, one per top-level alternation type: a transitivity
    /// alternation, an argument-realization alternation, and an oblique-subject
    /// alternation.
    pub fn demo() -> Self {
        let frame_inventory = shipped_pairs(&[
            "causative-inchoative",
            "dative",
            "raw-material-subject",
        ]);
        let singletons = shipped_battery();
        let pick = |id: &str, a: bool| {
            let s = singletons.iter().find(|s| s.id == id).expect("known battery id");
            if a { s.frame_a.clone() } else { s.frame_b.clone() }
        };
        GrammarSpec {
            n_alternation_families: 3,
            verbs_per_family: 8,
            distractors_per_family: 4,
            n_noun_classes: 4,
            nouns_per_class: 6,
            filler_verbs: 12,
            frame_inventory,
            singleton_frames: vec![
                pick("conative", false),
                pick("with-preposition-drop", true),
                pick("swarm", true),
                pick("blame", false),
                pick("image-impression", true),
                pick("through-with", true),
                selectional_frame(),
            ],
            closed_class_words: battery_closed_class(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_alternation_families", self.n_alternation_families),
            ("verbs_per_family", self.verbs_per_family),
            ("distractors_per_family", self.distractors_per_family),
            ("n_noun_classes", self.n_noun_classes),
            ("nouns_per_class", self.nouns_per_class),
        ];
        for (name, c) in counts {
            if c == 0 {
                return Err(Error::Grammar(format!("{name} must be at least 1")));
            }
        }
        if self.frame_inventory.len() < self.n_alternation_families {
            return Err(Error::Grammar(format!(
                "frame inventory holds {} pairs for {} families",
                self.frame_inventory.len(),
                self.n_alternation_families
            )));
        }
        if self.singleton_frames.is_empty() {
            return Err(Error::Grammar(
                "distractors need at least one singleton frame".into(),
            ));
        }
        let mut seen = BTreeSet::new();
        for fam in &self.frame_inventory[..self.n_alternation_families] {
            let as_spec = AlternationSpec {
                id: fam.id.clone(),
                name: fam.name.clone(),
                levin_label: fam.levin_label.clone(),
                frame_a: fam.frame_a.clone(),
                frame_b: fam.frame_b.clone(),
                inclass_verbs: vec!["x".into()],
                distractor_verbs: vec!["y".into()],
            };
            as_spec.validate()?;
            for f in [&fam.frame_a, &fam.frame_b] {
                if !seen.insert(f.items.clone()) {
                    return Err(Error::Grammar(format!("frame `{f}` appears twice")));
                }
            }
        }
        for f in &self.singleton_frames {
            f.validate("singleton")?;
            if !seen.insert(f.items.clone()) {
                return Err(Error::Grammar(format!("frame `{f}` appears twice")));
            }
        }
        for f in self.frames_in_use() {
            f.check_closed_class(&self.closed_class_words)?;
        }
        Ok(())
    }

    fn frames_in_use(&self) -> impl Iterator<Item = &FrameTemplate> {
        self.frame_inventory[..self.n_alternation_families]
            .iter()
            .flat_map(|f| [&f.frame_a, &f.frame_b])
            .chain(&self.singleton_frames)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerbKind {
    InClass,
    Distractor,
    Filler,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerbEntry {
    pub name: String,
    pub kind: VerbKind,
    pub family: Option<usize>,
    /// Indices into [`Grammar::frames`].
    pub frames: Vec<usize>,
    pub noun_class: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Verb { kind: VerbKind, family: Option<usize> },
    Noun { class: usize },
    Function,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grammar {
    pub spec: GrammarSpec,
    /// Family frames in order (a, b per family), then singleton frames.
    pub frames: Vec<FrameTemplate>,
    pub verbs: Vec<VerbEntry>,
    pub nouns: Vec<Vec<String>>,
}

impl Grammar {
    pub fn family_frame(&self, family: usize, side_b: bool) -> usize {
        2 * family + usize::from(side_b)
    }

    pub fn lexicon(&self) -> BTreeMap<String, Role> {
        let mut lex = BTreeMap::new();
        for w in &self.spec.closed_class_words {
            lex.insert(w.clone(), Role::Function);
        }
        for (c, nouns) in self.nouns.iter().enumerate() {
            for n in nouns {
                lex.insert(n.clone(), Role::Noun { class: c });
            }
        }
        for v in &self.verbs {
            lex.insert(
                v.name.clone(),
                Role::Verb {
                    kind: v.kind,
                    family: v.family,
                },
            );
        }
        lex
    }

    /// Function words, then nouns by class, then verbs in grammar order.
    pub fn vocabulary(&self) -> Result<Vocabulary> {
        let words = self
            .spec
            .closed_class_words
            .iter()
            .chain(self.nouns.iter().flatten())
            .chain(self.verbs.iter().map(|v| &v.name))
            .cloned();
        Vocabulary::with_reserved(words)
    }

    pub fn verbs_of(&self, kind: VerbKind) -> impl Iterator<Item = &VerbEntry> {
        self.verbs.iter().filter(move |v| v.kind == kind)
    }

    /// One alternation entry per family, usable as an experiment battery.
    pub fn battery(&self) -> Vec<AlternationSpec> {
        self.spec.frame_inventory[..self.spec.n_alternation_families]
            .iter()
            .enumerate()
            .map(|(f, fam)| {
                let names = |kind| {
                    self.verbs
                        .iter()
                        .filter(|v| v.kind == kind && v.family == Some(f))
                        .map(|v| v.name.clone())
                        .collect()
                };
                AlternationSpec {
                    id: fam.id.clone(),
                    name: fam.name.clone(),
                    levin_label: fam.levin_label.clone(),
                    frame_a: fam.frame_a.clone(),
                    frame_b: fam.frame_b.clone(),
                    inclass_verbs: names(VerbKind::InClass),
                    distractor_verbs: names(VerbKind::Distractor),
                }
            })
            .collect()
    }

    /// Whether `sentence` is a production the grammar licenses.
    pub fn licenses(&self, sentence: &TokenSequence) -> bool {
        self.verbs.iter().any(|verb| {
            verb.frames.iter().any(|&fi| {
                let frame = &self.frames[fi];
                frame.items.len() == sentence.len()
                    && frame.items.iter().zip(&sentence.tokens).all(|(item, tok)| match item {
                        TemplateItem::Function(w) => w == tok,
                        TemplateItem::Novel => *tok == verb.name,
                        TemplateItem::Mask => self.nouns[verb.noun_class].contains(tok),
                    })
            })
        })
    }
}

pub fn build_grammar(spec: &GrammarSpec, seed: u64) -> Result<Grammar> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_fam = spec.n_alternation_families;
    let mut frames = Vec::new();
    for fam in &spec.frame_inventory[..n_fam] {
        frames.push(fam.frame_a.clone());
        frames.push(fam.frame_b.clone());
    }
    let first_singleton = frames.len();
    frames.extend(spec.singleton_frames.iter().cloned());
    let n_single = spec.singleton_frames.len();

    let nouns: Vec<Vec<String>> = (0..spec.n_noun_classes)
        .map(|c| (0..spec.nouns_per_class).map(|i| format!("n{c}_{i}")).collect())
        .collect();
    let mut verbs = Vec::new();
    for f in 0..n_fam {
        for i in 0..spec.verbs_per_family {
            verbs.push(VerbEntry {
                name: format!("v{f}_{i}"),
                kind: VerbKind::InClass,
                family: Some(f),
                frames: vec![2 * f, 2 * f + 1],
                noun_class: rng.random_range(0..spec.n_noun_classes),
            });
        }
        for i in 0..spec.distractors_per_family {
            let single = first_singleton + rng.random_range(0..n_single);
            verbs.push(VerbEntry {
                name: format!("d{f}_{i}"),
                kind: VerbKind::Distractor,
                family: Some(f),
                frames: vec![2 * f + i % 2, single],
                noun_class: rng.random_range(0..spec.n_noun_classes),
            });
        }
    }
    let singles: Vec<usize> = (first_singleton..frames.len()).collect();
    for i in 0..spec.filler_verbs {
        let k = 2.min(n_single);
        let mut chosen: Vec<usize> = singles.choose_multiple(&mut rng, k).copied().collect();
        chosen.sort_unstable();
        verbs.push(VerbEntry {
            name: format!("x{i}"),
            kind: VerbKind::Filler,
            family: None,
            frames: chosen,
            noun_class: rng.random_range(0..spec.n_noun_classes),
        });
    }
    let grammar = Grammar {
        spec: spec.clone(),
        frames,
        verbs,
        nouns,
    };
    // Generated names must not shadow closed-class words.
    let lex_size = grammar.lexicon().len();
    let expected = spec.closed_class_words.iter().collect::<BTreeSet<_>>().len()
        + spec.n_noun_classes * spec.nouns_per_class
        + grammar.verbs.len();
    if lex_size != expected {
        return Err(Error::Grammar(
            "closed-class words collide with generated lexical items".into(),
        ));
    }
    Ok(grammar)
}

/// Draws `n_sentences` licensed productions: a verb uniformly, one of its
/// frames uniformly, then each content slot from the verb's noun class.
pub fn sample_corpus(grammar: &Grammar, n_sentences: usize, seed: u64) -> Result<Vec<TokenSequence>> {
    if n_sentences == 0 {
        return Err(Error::Grammar("corpus size must be at least 1".into()));
    }
    if grammar.verbs.is_empty() || grammar.verbs.iter().all(|v| v.frames.is_empty()) {
        return Err(Error::Grammar("grammar licenses no productions".into()));
    }
    let usable: Vec<&VerbEntry> = grammar.verbs.iter().filter(|v| !v.frames.is_empty()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_sentences);
    for _ in 0..n_sentences {
        let verb = usable[rng.random_range(0..usable.len())];
        let frame = &grammar.frames[verb.frames[rng.random_range(0..verb.frames.len())]];
        let class = &grammar.nouns[verb.noun_class];
        let tokens = frame
            .items
            .iter()
            .map(|item| match item {
                TemplateItem::Function(w) => w.clone(),
                TemplateItem::Novel => verb.name.clone(),
                TemplateItem::Mask => class[rng.random_range(0..class.len())].clone(),
            })
            .collect();
        out.push(TokenSequence::new(tokens));
    }
    Ok(out)
}

/// One sentence per line, space-separated tokens.
pub fn corpus_dump(corpus: &[TokenSequence]) -> String {
    let mut out = String::new();
    for s in corpus {
        out.push_str(&s.tokens.join(" "));
        out.push('\n');
    }
    out
}

/// Distractor and filler verbs, most frequent in `corpus` first (ties by name).
pub fn outclass_word_list(grammar: &Grammar, corpus: &[TokenSequence]) -> Vec<String> {
    let mut counts: BTreeMap<&str, usize> = grammar
        .verbs
        .iter()
        .filter(|v| v.kind != VerbKind::InClass)
        .map(|v| (v.name.as_str(), 0))
        .collect();
    for s in corpus {
        for t in &s.tokens {
            if let Some(c) = counts.get_mut(t.as_str()) {
                *c += 1;
            }
        }
    }
    let mut list: Vec<(&str, usize)> = counts.into_iter().collect();
    list.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    list.into_iter().map(|(w, _)| w.to_string()).collect()
}
