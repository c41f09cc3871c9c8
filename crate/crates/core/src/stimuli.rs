//! Stimulus material: frame templates, the alternation battery, and the
//! selectional verb/noun network.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{Vocabulary, MASK};

/// Marker for the novel-token slot in serialized templates.
pub const NOVEL_SLOT: &str = "[V]";

/// The battery shipped with the crate: 28 two-frame alternations.
pub const SHIPPED_BATTERY: &str = include_str!("../data/battery.json");

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum TemplateItem {
    /// A closed-class word kept verbatim.
    Function(String),
    /// An open-class content slot, always rendered as `[MASK]`.
    Mask,
    /// The slot the novel token occupies.
    Novel,
}

impl From<String> for TemplateItem {
    fn from(s: String) -> Self {
        match s.as_str() {
            MASK => TemplateItem::Mask,
            NOVEL_SLOT => TemplateItem::Novel,
            _ => TemplateItem::Function(s),
        }
    }
}

impl From<TemplateItem> for String {
    fn from(item: TemplateItem) -> Self {
        match item {
            TemplateItem::Function(w) => w,
            TemplateItem::Mask => MASK.to_string(),
            TemplateItem::Novel => NOVEL_SLOT.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tense {
    #[serde(rename = "future-will")]
    FutureWill,
    #[serde(rename = "past-ed")]
    PastEd,
    #[serde(rename = "present")]
    Present,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameTemplate {
    pub label: String,
    pub items: Vec<TemplateItem>,
    pub tense: Tense,
}

impl FrameTemplate {
    /// Parses a whitespace-separated template such as `"the [MASK] will [V]"`.
    pub fn parse(label: &str, text: &str, tense: Tense) -> Result<Self> {
        let frame = FrameTemplate {
            label: label.to_string(),
            items: text
                .split_whitespace()
                .map(|w| TemplateItem::from(w.to_string()))
                .collect(),
            tense,
        };
        frame.validate(label)?;
        Ok(frame)
    }

    pub fn validate(&self, owner: &str) -> Result<()> {
        let novel = self
            .items
            .iter()
            .filter(|i| **i == TemplateItem::Novel)
            .count();
        if novel != 1 {
            return Err(stimulus(
                owner,
                format!("frame `{}` has {novel} novel slots, expected exactly 1", self.label),
            ));
        }
        for item in &self.items {
            if let TemplateItem::Function(w) = item {
                if w.is_empty() || w.chars().any(char::is_whitespace) {
                    return Err(stimulus(owner, format!("illegal function word {w:?}")));
                }
            }
        }
        Ok(())
    }

    pub fn function_words(&self) -> impl Iterator<Item = &str> {
        self.items.iter().filter_map(|i| match i {
            TemplateItem::Function(w) => Some(w.as_str()),
            _ => None,
        })
    }

    pub fn novel_index(&self) -> usize {
        self.items
            .iter()
            .position(|i| *i == TemplateItem::Novel)
            .expect("validated template has a novel slot")
    }

    /// Checks that every function word belongs to `closed_class`.
    pub fn check_closed_class(&self, closed_class: &[String]) -> Result<()> {
        for w in self.function_words() {
            if !closed_class.iter().any(|c| c == w) {
                return Err(stimulus(
                    &self.label,
                    format!("function word `{w}` is not in the closed-class list"),
                ));
            }
        }
        Ok(())
    }
}

impl fmt::Display for FrameTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let words: Vec<String> = self.items.iter().cloned().map(String::from).collect();
        f.write_str(&words.join(" "))
    }
}

/// Which frame of an alternation pair a run trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FrameSide {
    #[serde(rename = "a")]
    A,
    #[serde(rename = "b")]
    B,
}

impl FrameSide {
    pub const BOTH: [FrameSide; 2] = [FrameSide::A, FrameSide::B];

    pub fn sister(self) -> FrameSide {
        match self {
            FrameSide::A => FrameSide::B,
            FrameSide::B => FrameSide::A,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FrameSide::A => "a",
            FrameSide::B => "b",
        }
    }
}

impl fmt::Display for FrameSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FrameSide {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" => Ok(FrameSide::A),
            "b" => Ok(FrameSide::B),
            _ => Err(Error::Input(format!("frame must be `a` or `b`, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlternationSpec {
    pub id: String,
    pub name: String,
    pub levin_label: String,
    pub frame_a: FrameTemplate,
    pub frame_b: FrameTemplate,
    pub inclass_verbs: Vec<String>,
    pub distractor_verbs: Vec<String>,
}

impl AlternationSpec {
    pub fn frame(&self, side: FrameSide) -> &FrameTemplate {
        match side {
            FrameSide::A => &self.frame_a,
            FrameSide::B => &self.frame_b,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let id = self.id.as_str();
        if id.is_empty() {
            return Err(stimulus("<unnamed>", "empty id"));
        }
        if !is_levin_label(&self.levin_label) {
            return Err(stimulus(
                id,
                format!("levin_label `{}` is not of the form S-s", self.levin_label),
            ));
        }
        self.frame_a.validate(id)?;
        self.frame_b.validate(id)?;
        if self.frame_a.items == self.frame_b.items {
            return Err(stimulus(id, "frame_a and frame_b are identical"));
        }
        if self.frame_a.tense != self.frame_b.tense {
            return Err(stimulus(id, "frame_a and frame_b differ in tense"));
        }
        if self.inclass_verbs.is_empty() {
            return Err(stimulus(id, "empty inclass_verbs"));
        }
        if self.distractor_verbs.is_empty() {
            return Err(stimulus(id, "empty distractor_verbs"));
        }
        if let Some(v) = self
            .inclass_verbs
            .iter()
            .find(|v| self.distractor_verbs.contains(v))
        {
            return Err(stimulus(
                id,
                format!("verb `{v}` is both in-class and distractor"),
            ));
        }
        Ok(())
    }
}

fn is_levin_label(label: &str) -> bool {
    let mut parts = label.split('-');
    let ok = |p: Option<&str>| p.is_some_and(|p| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit()));
    ok(parts.next()) && ok(parts.next()) && parts.next().is_none()
}

fn stimulus(id: &str, reason: impl Into<String>) -> Error {
    Error::Stimulus {
        id: id.to_string(),
        reason: reason.into(),
    }
}

/// Parses and validates a battery document; entry order is preserved.
pub fn load_battery(text: &str) -> Result<Vec<AlternationSpec>> {
    let specs: Vec<AlternationSpec> =
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    let mut seen = HashSet::new();
    for spec in &specs {
        spec.validate()?;
        if !seen.insert(spec.id.as_str()) {
            return Err(stimulus(&spec.id, "duplicate id"));
        }
    }
    Ok(specs)
}

pub fn shipped_battery() -> Vec<AlternationSpec> {
    load_battery(SHIPPED_BATTERY).expect("shipped battery is valid")
}

/// Serializes a battery in the canonical layout of the shipped file.
pub fn serialize_battery(specs: &[AlternationSpec]) -> String {
    let mut out = serde_json::to_string_pretty(specs).expect("battery serializes");
    out.push('\n');
    out
}

/// A token sequence with the positions that hold `[MASK]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub masked_positions: Vec<usize>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<String>) -> Self {
        let masked_positions = tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| *t == MASK)
            .map(|(i, _)| i)
            .collect();
        TokenSequence {
            tokens,
            masked_positions,
        }
    }

    pub fn from_text(text: &str) -> Self {
        Self::new(text.split_whitespace().map(str::to_string).collect())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Replaces the token at `position` with `[MASK]`.
    pub fn masked_at(&self, position: usize) -> TokenSequence {
        let mut tokens = self.tokens.clone();
        tokens[position] = MASK.to_string();
        TokenSequence::new(tokens)
    }

    pub fn positions_of<'a>(&'a self, token: &'a str) -> impl Iterator<Item = usize> + 'a {
        self.tokens
            .iter()
            .enumerate()
            .filter(move |(_, t)| *t == token)
            .map(|(i, _)| i)
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tokens.join(" "))
    }
}

/// Checks that `name` can serve as a fresh novel token.
pub fn check_novel_name(name: &str, vocab: &Vocabulary) -> Result<()> {
    if name.is_empty() || name.chars().any(char::is_whitespace) || name == MASK || name == NOVEL_SLOT
    {
        return Err(Error::Input(format!("illegal novel token name {name:?}")));
    }
    if vocab.contains(name) {
        return Err(Error::NameCollision(name.to_string()));
    }
    Ok(())
}

/// Fills a template: the novel slot gets `novel_name`, content slots become `[MASK]`.
pub fn render(frame: &FrameTemplate, novel_name: &str, vocab: &Vocabulary) -> Result<TokenSequence> {
    check_novel_name(novel_name, vocab)?;
    let tokens = frame
        .items
        .iter()
        .map(|item| match item {
            TemplateItem::Function(w) => w.clone(),
            TemplateItem::Mask => MASK.to_string(),
            TemplateItem::Novel => novel_name.to_string(),
        })
        .collect();
    Ok(TokenSequence::new(tokens))
}

/// Renders `frame` and masks the novel slot, returning the query position.
pub fn render_query(
    frame: &FrameTemplate,
    novel_name: &str,
    vocab: &Vocabulary,
) -> Result<(TokenSequence, usize)> {
    let seq = render(frame, novel_name, vocab)?;
    let pos = frame.novel_index();
    Ok((seq.masked_at(pos), pos))
}

/// Frames of every other battery entry that can serve as out-class contexts.
///
/// Frames whose item sequence equals either frame of `spec_id` are dropped, so a
/// surface copy of the sister frame never counts against it. The result is in
/// battery order, frame_a before frame_b.
pub fn out_class_frames(
    battery: &[AlternationSpec],
    spec_id: &str,
    train_frame: FrameSide,
) -> Result<Vec<FrameTemplate>> {
    let spec = battery
        .iter()
        .find(|s| s.id == spec_id)
        .ok_or_else(|| Error::Input(format!("alternation `{spec_id}` is not in the battery")))?;
    let train = &spec.frame(train_frame).items;
    let sister = &spec.frame(train_frame.sister()).items;
    Ok(battery
        .iter()
        .filter(|s| s.id != spec.id)
        .flat_map(|s| [&s.frame_a, &s.frame_b])
        .filter(|f| f.items != *sister && f.items != *train)
        .cloned()
        .collect())
}

/// Test conditions of the selectional experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SelectionalCondition {
    #[serde(rename = "attested-in")]
    AttestedIn,
    #[serde(rename = "unattested-in")]
    UnattestedIn,
    #[serde(rename = "unattested-out")]
    UnattestedOut,
}

impl SelectionalCondition {
    pub const ALL: [SelectionalCondition; 3] = [
        SelectionalCondition::AttestedIn,
        SelectionalCondition::UnattestedIn,
        SelectionalCondition::UnattestedOut,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SelectionalCondition::AttestedIn => "attested-in",
            SelectionalCondition::UnattestedIn => "unattested-in",
            SelectionalCondition::UnattestedOut => "unattested-out",
        }
    }
}

/// Bipartite verb/noun network with two classes of three verbs and three nouns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionalNetwork {
    pub verbs: Vec<String>,
    pub nouns: Vec<String>,
    pub verb_class: Vec<u8>,
    pub noun_class: Vec<u8>,
    /// Attested (verb index, noun index) pairs.
    pub attested: BTreeSet<(usize, usize)>,
}

impl SelectionalNetwork {
    pub fn class_of(&self, token: &str) -> Option<u8> {
        if let Some(i) = self.verbs.iter().position(|v| v == token) {
            return Some(self.verb_class[i]);
        }
        self.nouns
            .iter()
            .position(|n| n == token)
            .map(|i| self.noun_class[i])
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |r: String| Err(stimulus("selectional-network", r));
        if self.verbs.len() != 6 || self.nouns.len() != 6 {
            return fail("network needs 6 verbs and 6 nouns".into());
        }
        if self.verb_class.len() != 6 || self.noun_class.len() != 6 {
            return fail("class table does not cover every token".into());
        }
        for class in [1u8, 2] {
            let v = self.verb_class.iter().filter(|c| **c == class).count();
            let n = self.noun_class.iter().filter(|c| **c == class).count();
            if v != 3 || n != 3 {
                return fail(format!("class {class} has {v} verbs and {n} nouns"));
            }
        }
        if self.verb_class.iter().chain(&self.noun_class).any(|c| *c != 1 && *c != 2) {
            return fail("classes must be 1 or 2".into());
        }
        let mut names = HashSet::new();
        for t in self.verbs.iter().chain(&self.nouns) {
            if !names.insert(t) {
                return fail(format!("duplicate token `{t}`"));
            }
        }
        for &(v, n) in &self.attested {
            if v >= 6 || n >= 6 {
                return fail(format!("pair ({v}, {n}) out of range"));
            }
            if self.verb_class[v] != self.noun_class[n] {
                return fail(format!(
                    "attested pair {}-{} crosses classes",
                    self.verbs[v], self.nouns[n]
                ));
            }
        }
        for i in 0..6 {
            let dv = self.attested.iter().filter(|(v, _)| *v == i).count();
            let dn = self.attested.iter().filter(|(_, n)| *n == i).count();
            if dv != 2 || dn != 2 {
                return fail(format!("token index {i} has degree {dv}/{dn}, expected 2"));
            }
        }
        Ok(())
    }

    /// Pairs belonging to `condition`, verb-major then noun order.
    pub fn pairs(&self, condition: SelectionalCondition) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for v in 0..self.verbs.len() {
            for n in 0..self.nouns.len() {
                let attested = self.attested.contains(&(v, n));
                let same = self.verb_class[v] == self.noun_class[n];
                let c = match (attested, same) {
                    (true, _) => SelectionalCondition::AttestedIn,
                    (false, true) => SelectionalCondition::UnattestedIn,
                    (false, false) => SelectionalCondition::UnattestedOut,
                };
                if c == condition {
                    out.push((v, n));
                }
            }
        }
        out
    }

    /// Every novel token name: verbs first, then nouns.
    pub fn token_names(&self) -> Vec<String> {
        self.verbs.iter().chain(&self.nouns).cloned().collect()
    }
}

/// The fixed two-class network: within each class every verb has two attested
/// nouns, every noun two attested verbs, and one in-class pairing per verb is
/// held out.
pub fn default_selectional_network() -> SelectionalNetwork {
    let verbs: Vec<String> = (1..=6).map(|i| format!("Verb{i}")).collect();
    let nouns: Vec<String> = (1..=6).map(|i| format!("Noun{i}")).collect();
    // One-based (verb, noun) pairs.
    let attested = [
        (1, 1), (1, 2), (2, 1), (2, 3), (3, 3), (3, 2),
        (4, 4), (4, 5), (5, 6), (5, 4), (6, 6), (6, 5),
    ]
    .into_iter()
    .map(|(v, n)| (v - 1, n - 1))
    .collect();
    SelectionalNetwork {
        verbs,
        nouns,
        verb_class: vec![1, 1, 1, 2, 2, 2],
        noun_class: vec![1, 1, 1, 2, 2, 2],
        attested,
    }
}

/// Simple transitive sentences `the [MASK] <verb> the <noun>`, one per pair.
pub fn selectional_sentences(
    net: &SelectionalNetwork,
    condition: SelectionalCondition,
) -> Vec<TokenSequence> {
    net.pairs(condition)
        .into_iter()
        .map(|(v, n)| selectional_sentence(&net.verbs[v], &net.nouns[n]))
        .collect()
}

/// Position of the verb in a selectional sentence.
pub const SELECTIONAL_VERB_POSITION: usize = 2;

pub fn selectional_sentence(verb: &str, noun: &str) -> TokenSequence {
    TokenSequence::new(vec![
        "the".to_string(),
        MASK.to_string(),
        verb.to_string(),
        "the".to_string(),
        noun.to_string(),
    ])
}

/// Template the selectional sentences realize; tense is a label only.
pub fn selectional_frame() -> FrameTemplate {
    FrameTemplate {
        label: "simple-transitive".to_string(),
        items: vec![
            TemplateItem::Function("the".into()),
            TemplateItem::Mask,
            TemplateItem::Novel,
            TemplateItem::Function("the".into()),
            TemplateItem::Mask,
        ],
        tense: Tense::PastEd,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::with_reserved(["the", "will", "a", "to", "and"]).unwrap()
    }

    fn items(text: &str) -> Vec<TemplateItem> {
        text.split_whitespace()
            .map(|w| TemplateItem::from(w.to_string()))
            .collect()
    }

    #[test]
    fn shipped_battery_has_28_entries() {
        let battery = shipped_battery();
        assert_eq!(battery.len(), 28);
        assert!(battery.iter().all(|s| s.frame_a.tense == Tense::FutureWill));
    }

    #[test]
    fn dative_frame_a_items() {
        let battery = shipped_battery();
        let dative = battery.iter().find(|s| s.id == "dative").unwrap();
        assert_eq!(
            dative.frame_a.items,
            items("the [MASK] will [V] a [MASK] to the [MASK]")
        );
    }

    #[test]
    fn empty_array_loads_to_empty_list() {
        assert!(load_battery("[]").unwrap().is_empty());
    }

    #[test]
    fn shipped_file_round_trips_bit_exact() {
        let battery = shipped_battery();
        assert_eq!(serialize_battery(&battery), SHIPPED_BATTERY);
    }

    fn entry_json(id: &str, a: &str, b: &str, inclass: &str, distractor: &str) -> String {
        let arr = |t: &str| {
            serde_json::to_string(&t.split_whitespace().collect::<Vec<_>>()).unwrap()
        };
        format!(
            r#"{{"id":"{id}","name":"N","levin_label":"1-1",
            "frame_a":{{"label":"x","items":{},"tense":"future-will"}},
            "frame_b":{{"label":"y","items":{},"tense":"future-will"}},
            "inclass_verbs":{},"distractor_verbs":{}}}"#,
            arr(a),
            arr(b),
            arr(inclass),
            arr(distractor)
        )
    }

    #[test]
    fn load_errors_name_the_entry() {
        let two_novel = format!(
            "[{}]",
            entry_json("bad", "the [V] [V]", "the [MASK] will [V]", "x", "y")
        );
        match load_battery(&two_novel) {
            Err(Error::Stimulus { id, reason }) => {
                assert_eq!(id, "bad");
                assert!(reason.contains("2 novel slots"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
        let empty = format!("[{}]", entry_json("e", "the [V]", "[V] the", "", "y"));
        assert!(matches!(load_battery(&empty), Err(Error::Stimulus { id, .. }) if id == "e"));
        let dup = format!(
            "[{0},{0}]",
            entry_json("d", "the [V]", "[V] the", "x", "y")
        );
        assert!(
            matches!(load_battery(&dup), Err(Error::Stimulus { reason, .. }) if reason == "duplicate id")
        );
        let overlap = format!("[{}]", entry_json("o", "the [V]", "[V] the", "x", "x"));
        assert!(load_battery(&overlap).is_err());
        assert!(matches!(
            load_battery(r#"[{"id":"x"}]"#),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn render_dative_and_reciprocal() {
        let battery = shipped_battery();
        let dative = battery.iter().find(|s| s.id == "dative").unwrap();
        let seq = render(&dative.frame_a, "V7.1", &vocab()).unwrap();
        assert_eq!(seq.to_string(), "the [MASK] will V7.1 a [MASK] to the [MASK]");
        assert_eq!(seq.masked_positions, vec![1, 5, 8]);

        let recip = battery
            .iter()
            .find(|s| s.id == "understood-reciprocal-object")
            .unwrap();
        let seq = render(&recip.frame_b, "V4.2", &vocab()).unwrap();
        assert_eq!(seq.to_string(), "the [MASK] and the [MASK] will V4.2");
    }

    #[test]
    fn render_without_masks_and_collisions() {
        let frame = FrameTemplate::parse("f", "the [V] will", Tense::Present).unwrap();
        let seq = render(&frame, "dax", &vocab()).unwrap();
        assert!(seq.masked_positions.is_empty());
        assert!(matches!(
            render(&frame, "the", &vocab()),
            Err(Error::NameCollision(_))
        ));
        assert!(render(&frame, "", &vocab()).is_err());
    }

    #[test]
    fn render_query_masks_the_novel_slot() {
        let frame = FrameTemplate::parse("f", "the [MASK] will [V]", Tense::FutureWill).unwrap();
        let (seq, pos) = render_query(&frame, "dax", &vocab()).unwrap();
        assert_eq!(pos, 3);
        assert_eq!(seq.masked_positions, vec![1, 3]);
    }

    /// Independent scan: 2 frames per other entry minus surface copies of the queried pair.
    fn brute_force_out_class_count(battery: &[AlternationSpec], id: &str) -> usize {
        let spec = battery.iter().find(|s| s.id == id).unwrap();
        let own = [
            spec.frame_a.to_string(),
            spec.frame_b.to_string(),
        ];
        let mut count = 0;
        for other in battery {
            if other.id == id {
                continue;
            }
            for f in [&other.frame_a, &other.frame_b] {
                if !own.contains(&f.to_string()) {
                    count += 1;
                }
            }
        }
        count
    }

    #[test]
    fn out_class_counts_match_independent_scan() {
        let battery = shipped_battery();
        for spec in &battery {
            for side in FrameSide::BOTH {
                let frames = out_class_frames(&battery, &spec.id, side).unwrap();
                assert_eq!(
                    frames.len(),
                    brute_force_out_class_count(&battery, &spec.id),
                    "{}",
                    spec.id
                );
                assert!(frames.len() <= 54);
            }
        }
        // Dative shares its double-object frame with benefactive and its to-dative
        // frame with fulfilling.
        assert_eq!(out_class_frames(&battery, "dative", FrameSide::A).unwrap().len(), 52);
        // The bare transitive frame recurs in five entries, the bare intransitive in three.
        assert_eq!(
            out_class_frames(&battery, "causative-inchoative", FrameSide::B)
                .unwrap()
                .len(),
            54 - 4 - 2
        );
    }

    #[test]
    fn out_class_of_singleton_battery_is_empty() {
        let battery = shipped_battery();
        let only = vec![battery[0].clone()];
        assert!(out_class_frames(&only, &only[0].id, FrameSide::A)
            .unwrap()
            .is_empty());
        assert!(out_class_frames(&only, "missing", FrameSide::A).is_err());
    }

    #[test]
    fn out_class_excludes_surface_copies_of_sister() {
        let battery = load_battery(&format!(
            "[{},{},{}]",
            entry_json("p", "the [MASK] will [V]", "the [MASK] will [V] the [MASK]", "x", "y"),
            entry_json("q", "the [MASK] will [V] the [MASK]", "the [V] to", "x", "y"),
            entry_json("r", "a [V]", "the [V] and", "x", "y"),
        ))
        .unwrap();
        let frames = out_class_frames(&battery, "p", FrameSide::A).unwrap();
        let got: Vec<String> = frames.iter().map(|f| f.to_string()).collect();
        assert_eq!(got, vec!["the [V] to", "a [V]", "the [V] and"]);
    }

    #[test]
    fn default_network_condition_sizes() {
        let net = default_selectional_network();
        net.validate().unwrap();
        assert_eq!(net.pairs(SelectionalCondition::AttestedIn).len(), 12);
        assert_eq!(net.pairs(SelectionalCondition::UnattestedIn).len(), 6);
        assert_eq!(net.pairs(SelectionalCondition::UnattestedOut).len(), 18);
        let all: BTreeSet<_> = SelectionalCondition::ALL
            .iter()
            .flat_map(|c| net.pairs(*c))
            .collect();
        assert_eq!(all.len(), 36);
        assert_eq!(net.class_of("Verb4"), Some(2));
        assert_eq!(net.class_of("Noun1"), Some(1));
    }

    #[test]
    fn selectional_sentence_shape() {
        let net = default_selectional_network();
        let s = selectional_sentences(&net, SelectionalCondition::AttestedIn);
        assert_eq!(s.len(), 12);
        assert_eq!(s[0].to_string(), "the [MASK] Verb1 the Noun1");
        assert_eq!(s[0].masked_positions, vec![1]);
        assert_eq!(selectional_sentences(&net, SelectionalCondition::UnattestedIn).len(), 6);
        assert_eq!(selectional_sentences(&net, SelectionalCondition::UnattestedOut).len(), 18);
    }

    #[test]
    fn broken_network_is_rejected() {
        let mut net = default_selectional_network();
        net.attested.insert((0, 3));
        assert!(net.validate().is_err());
        let mut net = default_selectional_network();
        net.attested.remove(&(0, 0));
        assert!(net.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn render_contains_novel_once(idx in 0usize..28, side in 0usize..2, name in "[a-z]{2,6}[0-9]") {
                let battery = shipped_battery();
                let spec = &battery[idx];
                let frame = spec.frame(FrameSide::BOTH[side]);
                let seq = render(frame, &name, &vocab()).unwrap();
                prop_assert_eq!(seq.tokens.iter().filter(|t| **t == name).count(), 1);
                prop_assert!(seq.masked_positions.iter().all(|p| seq.tokens[*p] == MASK));
            }

            #[test]
            fn out_class_never_contains_own_frames(idx in 0usize..28, side in 0usize..2) {
                let battery = shipped_battery();
                let spec = &battery[idx];
                let frames = out_class_frames(&battery, &spec.id, FrameSide::BOTH[side]).unwrap();
                for f in frames {
                    prop_assert!(f.items != spec.frame_a.items && f.items != spec.frame_b.items);
                }
            }

            #[test]
            fn battery_round_trip(order in Just((0..28usize).collect::<Vec<_>>()).prop_shuffle()) {
                let battery = shipped_battery();
                let shuffled: Vec<_> = order.iter().map(|i| battery[*i].clone()).collect();
                let text = serialize_battery(&shuffled);
                prop_assert_eq!(load_battery(&text).unwrap(), shuffled);
            }
        }
    }
}
