//! Conversation data model, JSONL serialization, and turn labeling.
//!
//! A corpus is a line-delimited stream of conversations. Each turn records
//! the user utterance, the system response, the topic-classifier output for
//! the utterance, and two dialogue-manager state fields: the previous state
//! (`previous_state`) and the most recent topic the system suggested
//! (`previous_suggested_topic`). Labels are never serialized; they are
//! derived by [`assign_training_labels`] / [`assign_test_labels`].

use std::collections::BTreeMap;
use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// The 16 content topics plus `Phatic` for non-informational turns.
///
/// Integer codes are stable: `Movie = 0` through
/// `EntertainmentAndCars = 15`, `Phatic = 16`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Topic {
    Movie = 0,
    Music = 1,
    News = 2,
    PetsAnimal = 3,
    SciTech = 4,
    Sports = 5,
    Travel = 6,
    Games = 7,
    Celebrities = 8,
    Literature = 9,
    FoodDrinks = 10,
    Other = 11,
    Weather = 12,
    Fashion = 13,
    Fitness = 14,
    EntertainmentAndCars = 15,
    Phatic = 16,
}

impl Topic {
    pub const COUNT: usize = 17;

    pub const ALL: [Topic; 17] = [
        Topic::Movie,
        Topic::Music,
        Topic::News,
        Topic::PetsAnimal,
        Topic::SciTech,
        Topic::Sports,
        Topic::Travel,
        Topic::Games,
        Topic::Celebrities,
        Topic::Literature,
        Topic::FoodDrinks,
        Topic::Other,
        Topic::Weather,
        Topic::Fashion,
        Topic::Fitness,
        Topic::EntertainmentAndCars,
        Topic::Phatic,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Topic> {
        Topic::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Topic::Movie => "Movie",
            Topic::Music => "Music",
            Topic::News => "News",
            Topic::PetsAnimal => "Pets_Animal",
            Topic::SciTech => "Sci_Tech",
            Topic::Sports => "Sports",
            Topic::Travel => "Travel",
            Topic::Games => "Games",
            Topic::Celebrities => "Celebrities",
            Topic::Literature => "Literature",
            Topic::FoodDrinks => "Food_Drinks",
            Topic::Other => "Other",
            Topic::Weather => "Weather",
            Topic::Fashion => "Fashion",
            Topic::Fitness => "Fitness",
            Topic::EntertainmentAndCars => "Entertainment_and_Cars",
            Topic::Phatic => "Phatic",
        }
    }

    pub fn is_phatic(self) -> bool {
        self == Topic::Phatic
    }

    /// The suggestible subset this topic belongs to, if any.
    pub fn as_suggestible(self) -> Option<SuggestibleTopic> {
        SuggestibleTopic::ALL
            .iter()
            .copied()
            .find(|s| s.as_topic() == self)
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Topic {
    type Err = UnknownTopic;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Topic::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| UnknownTopic(s.to_string()))
    }
}

impl TryFrom<String> for Topic {
    type Error = UnknownTopic;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Topic> for String {
    fn from(t: Topic) -> String {
        t.name().to_string()
    }
}

/// Raised when a serialized topic string is not one of the known names.
#[derive(Debug, Clone, Error)]
#[error("unknown topic \"{0}\"")]
pub struct UnknownTopic(pub String);

/// The 8 topics the agent can proactively suggest.
///
/// Codes 0..8 follow the fixed reporting order: Movie, Music, Travel,
/// Pets_Animal, News, Sports, Entertainment_and_Cars, Games.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SuggestibleTopic {
    Movie = 0,
    Music = 1,
    Travel = 2,
    PetsAnimal = 3,
    News = 4,
    Sports = 5,
    EntertainmentAndCars = 6,
    Games = 7,
}

impl SuggestibleTopic {
    pub const COUNT: usize = 8;

    pub const ALL: [SuggestibleTopic; 8] = [
        SuggestibleTopic::Movie,
        SuggestibleTopic::Music,
        SuggestibleTopic::Travel,
        SuggestibleTopic::PetsAnimal,
        SuggestibleTopic::News,
        SuggestibleTopic::Sports,
        SuggestibleTopic::EntertainmentAndCars,
        SuggestibleTopic::Games,
    ];

    /// Relative topic frequency (percent) observed in open-domain
    /// conversation data; used as the default simulator target and as the
    /// popularity fallback order.
    pub const FREQUENCY_PCT: [f64; 8] = [20.1, 14.4, 9.1, 10.0, 18.4, 6.0, 1.0, 6.0];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<SuggestibleTopic> {
        SuggestibleTopic::ALL.get(code).copied()
    }

    pub fn as_topic(self) -> Topic {
        match self {
            SuggestibleTopic::Movie => Topic::Movie,
            SuggestibleTopic::Music => Topic::Music,
            SuggestibleTopic::Travel => Topic::Travel,
            SuggestibleTopic::PetsAnimal => Topic::PetsAnimal,
            SuggestibleTopic::News => Topic::News,
            SuggestibleTopic::Sports => Topic::Sports,
            SuggestibleTopic::EntertainmentAndCars => Topic::EntertainmentAndCars,
            SuggestibleTopic::Games => Topic::Games,
        }
    }

    pub fn name(self) -> &'static str {
        self.as_topic().name()
    }

    pub fn frequency(self) -> f64 {
        Self::FREQUENCY_PCT[self.code()]
    }
}

impl fmt::Display for SuggestibleTopic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SuggestibleTopic {
    type Err = UnknownTopic;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let topic: Topic = s.parse()?;
        topic
            .as_suggestible()
            .ok_or_else(|| UnknownTopic(s.to_string()))
    }
}

impl TryFrom<String> for SuggestibleTopic {
    type Error = UnknownTopic;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<SuggestibleTopic> for String {
    fn from(t: SuggestibleTopic) -> String {
        t.name().to_string()
    }
}

/// Coarse time of day a conversation took place in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TimeOfDay {
    Morning = 0,
    Day = 1,
    Evening = 2,
    Night = 3,
}

impl TimeOfDay {
    pub const ALL: [TimeOfDay; 4] = [
        TimeOfDay::Morning,
        TimeOfDay::Day,
        TimeOfDay::Evening,
        TimeOfDay::Night,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            TimeOfDay::Morning => "Morning",
            TimeOfDay::Day => "Day",
            TimeOfDay::Evening => "Evening",
            TimeOfDay::Night => "Night",
        }
    }
}

impl fmt::Display for TimeOfDay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Inferred user gender: -1 female, +1 male, 0 unknown (no name given).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Gender {
    Female,
    #[default]
    Unknown,
    Male,
}

impl Gender {
    pub fn encoded(self) -> f64 {
        match self {
            Gender::Female => -1.0,
            Gender::Unknown => 0.0,
            Gender::Male => 1.0,
        }
    }
}

impl Serialize for Gender {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_i8(match self {
            Gender::Female => -1,
            Gender::Unknown => 0,
            Gender::Male => 1,
        })
    }
}

impl<'de> Deserialize<'de> for Gender {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        match i8::deserialize(deserializer)? {
            -1 => Ok(Gender::Female),
            0 => Ok(Gender::Unknown),
            1 => Ok(Gender::Male),
            other => Err(serde::de::Error::custom(format!(
                "gender must be -1, 0 or 1, got {other}"
            ))),
        }
    }
}

/// Derived per-turn label: the user's reaction to a pending suggestion, or
/// the kind of turn when nothing was pending.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TurnLabel {
    Accept(SuggestibleTopic),
    Reject(SuggestibleTopic),
    FollowUp,
    Chat,
}

impl TurnLabel {
    pub fn accepted_topic(self) -> Option<SuggestibleTopic> {
        match self {
            TurnLabel::Accept(t) => Some(t),
            _ => None,
        }
    }

    pub fn rejected_topic(self) -> Option<SuggestibleTopic> {
        match self {
            TurnLabel::Reject(t) => Some(t),
            _ => None,
        }
    }

    /// Topic of the suggestion this label reacts to, for either verdict.
    pub fn suggestion_topic(self) -> Option<SuggestibleTopic> {
        match self {
            TurnLabel::Accept(t) | TurnLabel::Reject(t) => Some(t),
            _ => None,
        }
    }
}

impl fmt::Display for TurnLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TurnLabel::Accept(t) => write!(f, "{}_accept", t.name()),
            TurnLabel::Reject(t) => write!(f, "{}_reject", t.name()),
            TurnLabel::FollowUp => f.write_str("follow-up"),
            TurnLabel::Chat => f.write_str("chat"),
        }
    }
}

impl FromStr for TurnLabel {
    type Err = UnknownTopic;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "follow-up" {
            return Ok(TurnLabel::FollowUp);
        }
        if s == "chat" {
            return Ok(TurnLabel::Chat);
        }
        if let Some(topic) = s.strip_suffix("_accept") {
            return Ok(TurnLabel::Accept(topic.parse()?));
        }
        if let Some(topic) = s.strip_suffix("_reject") {
            return Ok(TurnLabel::Reject(topic.parse()?));
        }
        Err(UnknownTopic(s.to_string()))
    }
}

/// A single conversation turn. `label` is derived, never serialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub index: u32,
    pub user_utterance: String,
    pub system_response: String,
    pub topic: Topic,
    pub previous_state: Option<Topic>,
    pub previous_suggested_topic: Option<SuggestibleTopic>,
    #[serde(skip)]
    pub label: Option<TurnLabel>,
}

impl Turn {
    /// Whitespace tokens of the lowercased utterance.
    pub fn tokens(&self) -> Vec<&str> {
        self.user_utterance.split_whitespace().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub conversation_id: String,
    pub user_id: String,
    pub date: NaiveDate,
    pub time_of_day: TimeOfDay,
    pub name_given: bool,
    pub gender: Gender,
    pub turns: Vec<Turn>,
}

impl Conversation {
    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    /// Turn by 1-based index.
    pub fn turn(&self, index: usize) -> Option<&Turn> {
        if index == 0 {
            return None;
        }
        self.turns.get(index - 1)
    }

    pub fn is_labeled(&self) -> bool {
        self.turns.iter().all(|t| t.label.is_some())
    }
}

/// Where a corpus came from relative to the train/test split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitProvenance {
    #[default]
    Full,
    Train,
    Test,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub conversations: Vec<Conversation>,
    pub split: SplitProvenance,
}

impl Corpus {
    pub fn new(conversations: Vec<Conversation>) -> Corpus {
        Corpus {
            conversations,
            split: SplitProvenance::Full,
        }
    }

    pub fn len(&self) -> usize {
        self.conversations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conversations.is_empty()
    }

    /// Fraction of topical turns per suggestible topic (turns whose topic is
    /// one of the 8 suggestible topics).
    pub fn topic_distribution(&self) -> BTreeMap<SuggestibleTopic, f64> {
        let mut counts = [0usize; SuggestibleTopic::COUNT];
        let mut total = 0usize;
        for conv in &self.conversations {
            for turn in &conv.turns {
                if let Some(s) = turn.topic.as_suggestible() {
                    counts[s.code()] += 1;
                    total += 1;
                }
            }
        }
        SuggestibleTopic::ALL
            .iter()
            .map(|&t| {
                let frac = if total == 0 {
                    0.0
                } else {
                    counts[t.code()] as f64 / total as f64
                };
                (t, frac)
            })
            .collect()
    }

    pub fn total_turns(&self) -> usize {
        self.conversations.iter().map(|c| c.len()).sum()
    }

    /// Canonical JSONL form: one conversation per line, `\n`-terminated.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for conv in &self.conversations {
            out.push_str(&serde_json::to_string(conv).expect("conversation serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        writer.write_all(self.to_jsonl().as_bytes())
    }

    pub fn write_to_path<P: AsRef<Path>>(&self, path: P) -> std::io::Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_jsonl(std::io::BufWriter::new(file))
    }

    /// Hex SHA-256 of the canonical JSONL bytes.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_jsonl().as_bytes());
        hex_string(&hasher.finalize())
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("line {line}: duplicate conversation_id \"{id}\"")]
    DuplicateId { line: usize, id: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Parse a line-delimited corpus, preserving input order.
///
/// Blank lines are not allowed except for a trailing newline. Structural
/// problems (bad JSON, unknown topic strings, schema violations) are
/// reported with their 1-based line number.
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Corpus, CorpusError> {
    let mut conversations = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let conv: Conversation =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedLine {
                line: line_no,
                message: e.to_string(),
            })?;
        validate_conversation(&conv).map_err(|message| CorpusError::MalformedLine {
            line: line_no,
            message,
        })?;
        if !seen.insert(conv.conversation_id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                id: conv.conversation_id,
            });
        }
        conversations.push(conv);
    }
    Ok(Corpus::new(conversations))
}

pub fn parse_corpus_from_path<P: AsRef<Path>>(path: P) -> Result<Corpus, CorpusError> {
    let file = std::fs::File::open(path)?;
    parse_corpus(std::io::BufReader::new(file))
}

fn validate_conversation(conv: &Conversation) -> Result<(), String> {
    if conv.turns.len() < 4 {
        return Err(format!(
            "conversation \"{}\" has {} turns; at least 4 required",
            conv.conversation_id,
            conv.turns.len()
        ));
    }
    for (i, turn) in conv.turns.iter().enumerate() {
        let expected = (i + 1) as u32;
        if turn.index != expected {
            return Err(format!(
                "conversation \"{}\": turn index {} at position {}, expected {}",
                conv.conversation_id, turn.index, i, expected
            ));
        }
    }
    if conv.turns[0].previous_state.is_some() {
        return Err(format!(
            "conversation \"{}\": previous_state of turn 1 must be null",
            conv.conversation_id
        ));
    }
    Ok(())
}

/// Assign the training-scenario labels to every turn.
///
/// A suggestion becomes visible as a change in the `previous_suggested_topic`
/// field and is pending exactly at the first turn where it appears: the user
/// either talks about the suggested topic (`Accept`) or does anything else
/// (`Reject`). Turns with no pending suggestion are `FollowUp` when the user
/// stays on the component they were already engaged with, `Chat` otherwise.
///
/// Some dialogue managers record the suggested-topic field one turn late; if
/// the field changes at turn `i+1` while the user already switched to that
/// exact topic at turn `i`, the reaction is credited to turn `i`.
pub fn assign_training_labels(conv: &Conversation) -> Conversation {
    let mut labeled = conv.clone();
    let labels = compute_training_labels(conv);
    for (turn, label) in labeled.turns.iter_mut().zip(labels) {
        turn.label = Some(label);
    }
    labeled
}

fn compute_training_labels(conv: &Conversation) -> Vec<TurnLabel> {
    let n = conv.turns.len();
    let pst = |i: usize| -> Option<SuggestibleTopic> {
        // 1-based; out of range means "no data".
        conv.turns
            .get(i.wrapping_sub(1))
            .and_then(|t| t.previous_suggested_topic)
    };
    let topic = |i: usize| -> Topic { conv.turns[i - 1].topic };

    let mut labels = Vec::with_capacity(n);
    let mut engaged: Option<Topic> = None;
    let mut consumed_ahead: Option<usize> = None;

    for i in 1..=n {
        let mut pending: Option<SuggestibleTopic> = None;
        if i >= 2 {
            if consumed_ahead == Some(i) {
                // Reaction already credited to the previous turn.
            } else if pst(i).is_some() && pst(i) != pst(i - 1) {
                pending = pst(i);
            } else if i < n {
                // Late-recorded suggestion: field changes next turn but the
                // user already moved to that topic now.
                let ahead = pst(i + 1);
                if let Some(t) = ahead {
                    if ahead != pst(i) && topic(i) == t.as_topic() {
                        pending = Some(t);
                        consumed_ahead = Some(i + 1);
                    }
                }
            }
        }

        let label = match pending {
            Some(t) if topic(i) == t.as_topic() => {
                engaged = Some(t.as_topic());
                TurnLabel::Accept(t)
            }
            Some(t) => {
                if !topic(i).is_phatic() {
                    engaged = Some(topic(i));
                }
                TurnLabel::Reject(t)
            }
            None => {
                if topic(i).is_phatic() {
                    TurnLabel::Chat
                } else if engaged == Some(topic(i)) {
                    TurnLabel::FollowUp
                } else {
                    engaged = Some(topic(i));
                    TurnLabel::Chat
                }
            }
        };
        labels.push(label);
    }
    labels
}

/// Assign test-scenario labels: training labels plus the retroactive
/// promotion rule. A `Reject(T)` at turn `i` is promoted to `Accept(T)` if
/// the user talks about `T` at any later turn (unlimited look-ahead).
pub fn assign_test_labels(conv: &Conversation) -> Conversation {
    let mut labeled = assign_training_labels(conv);
    let n = labeled.turns.len();
    for i in 0..n {
        if let Some(TurnLabel::Reject(t)) = labeled.turns[i].label {
            let later_engaged = labeled.turns[i + 1..]
                .iter()
                .any(|turn| turn.topic == t.as_topic());
            if later_engaged {
                labeled.turns[i].label = Some(TurnLabel::Accept(t));
            }
        }
    }
    labeled
}

/// Label every conversation with the training scenario.
pub fn label_corpus_training(corpus: &Corpus) -> Corpus {
    Corpus {
        conversations: corpus.conversations.iter().map(assign_training_labels).collect(),
        split: corpus.split,
    }
}

/// Label every conversation with the test scenario (promotion applied).
pub fn label_corpus_test(corpus: &Corpus) -> Corpus {
    Corpus {
        conversations: corpus.conversations.iter().map(assign_test_labels).collect(),
        split: corpus.split,
    }
}

/// Partition by date: `train` strictly before the cutoff, `test` on/after.
///
/// An empty side is legal (callers may warn); together the two sides always
/// cover the input, in input order.
pub fn split_by_date(corpus: &Corpus, cutoff: NaiveDate) -> (Corpus, Corpus) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for conv in &corpus.conversations {
        if conv.date < cutoff {
            train.push(conv.clone());
        } else {
            test.push(conv.clone());
        }
    }
    (
        Corpus {
            conversations: train,
            split: SplitProvenance::Train,
        },
        Corpus {
            conversations: test,
            split: SplitProvenance::Test,
        },
    )
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    fn turn(
        index: u32,
        utterance: &str,
        topic: Topic,
        ps: Option<Topic>,
        pst: Option<SuggestibleTopic>,
    ) -> Turn {
        Turn {
            index,
            user_utterance: utterance.to_string(),
            system_response: String::new(),
            topic,
            previous_state: ps,
            previous_suggested_topic: pst,
            label: None,
        }
    }

    fn conversation(turns: Vec<Turn>) -> Conversation {
        Conversation {
            conversation_id: "c0".to_string(),
            user_id: "u0".to_string(),
            date: NaiveDate::from_ymd_opt(2018, 8, 1).unwrap(),
            time_of_day: TimeOfDay::Evening,
            name_given: true,
            gender: Gender::Female,
            turns,
        }
    }

    /// The worked 12-turn example conversation, exactly as published.
    pub(crate) fn sample_conversation() -> Conversation {
        use SuggestibleTopic as S;
        use Topic as T;
        // The published PS column contains an out-of-vocabulary "Opening"
        // state at turn 2; it is mapped to None (nothing engaged yet).
        conversation(vec![
            turn(1, "alexa, let's chat.", T::Music, None, None),
            turn(2, "tell me recent songs.", T::Music, None, Some(S::Music)),
            turn(3, "no i do not.", T::Music, Some(T::Music), Some(S::Music)),
            turn(4, "oh, no.", T::Phatic, Some(T::Music), Some(S::Music)),
            turn(5, "i love traveling.", T::Travel, Some(T::Music), Some(S::Travel)),
            turn(6, "somewhere in australia.", T::Travel, Some(T::Travel), Some(S::Travel)),
            turn(7, "yes.", T::Travel, Some(T::Travel), Some(S::Travel)),
            turn(
                8,
                "no thanks, let's talk about something else.",
                T::Phatic,
                Some(T::Travel),
                Some(S::Travel),
            ),
            turn(9, "no, news is boring.", T::Phatic, Some(T::Phatic), Some(S::News)),
            turn(
                10,
                "okay, that sounds interesting.",
                T::Movie,
                Some(T::Phatic),
                Some(S::News),
            ),
            turn(11, "i like both.", T::Movie, Some(T::Movie), Some(S::Movie)),
            turn(12, "i have to go alexa, bye!", T::Phatic, Some(T::Movie), Some(S::Movie)),
        ])
    }

    #[test]
    fn sample_conversation_training_labels() {
        use SuggestibleTopic as S;
        use TurnLabel as L;
        let labeled = assign_training_labels(&sample_conversation());
        let labels: Vec<TurnLabel> = labeled.turns.iter().map(|t| t.label.unwrap()).collect();
        assert_eq!(
            labels,
            vec![
                L::Chat,
                L::Accept(S::Music),
                L::FollowUp,
                L::Chat,
                L::Accept(S::Travel),
                L::FollowUp,
                L::FollowUp,
                L::Chat,
                L::Reject(S::News),
                L::Accept(S::Movie),
                L::FollowUp,
                L::Chat,
            ]
        );
    }

    #[test]
    fn label_display_round_trip() {
        let labels = [
            TurnLabel::Accept(SuggestibleTopic::Music),
            TurnLabel::Reject(SuggestibleTopic::News),
            TurnLabel::FollowUp,
            TurnLabel::Chat,
        ];
        assert_eq!(labels[0].to_string(), "Music_accept");
        assert_eq!(labels[1].to_string(), "News_reject");
        assert_eq!(labels[2].to_string(), "follow-up");
        assert_eq!(labels[3].to_string(), "chat");
        for l in labels {
            assert_eq!(l.to_string().parse::<TurnLabel>().unwrap(), l);
        }
    }

    #[test]
    fn no_suggestions_all_phatic_is_all_chat() {
        let turns = (1..=5)
            .map(|i| turn(i, "hi.", Topic::Phatic, if i == 1 { None } else { Some(Topic::Phatic) }, None))
            .collect();
        let labeled = assign_training_labels(&conversation(turns));
        assert!(labeled
            .turns
            .iter()
            .all(|t| t.label == Some(TurnLabel::Chat)));
    }

    #[test]
    fn direct_suggestion_accept() {
        use SuggestibleTopic as S;
        use Topic as T;
        // Sports suggested in turn 2's response -> PST changes at turn 3.
        let turns = vec![
            turn(1, "hello.", T::Phatic, None, None),
            turn(2, "what's up.", T::Phatic, Some(T::Phatic), None),
            turn(3, "i love sports.", T::Sports, Some(T::Phatic), Some(S::Sports)),
            turn(4, "tell me more.", T::Sports, Some(T::Sports), Some(S::Sports)),
        ];
        let labeled = assign_training_labels(&conversation(turns));
        assert_eq!(labeled.turns[2].label, Some(TurnLabel::Accept(S::Sports)));
        assert_eq!(labeled.turns[3].label, Some(TurnLabel::FollowUp));
    }

    #[test]
    fn test_labels_promote_rejects_with_later_engagement() {
        use SuggestibleTopic as S;
        let labeled = assign_test_labels(&sample_conversation());
        // The News rejection at turn 9 is never followed by a News turn:
        // unchanged.
        assert_eq!(labeled.turns[8].label, Some(TurnLabel::Reject(S::News)));

        // Build a variant where the user comes back to News later.
        let mut conv = sample_conversation();
        conv.turns[10].topic = Topic::News; // turn 11
        let labeled = assign_test_labels(&conv);
        assert_eq!(labeled.turns[8].label, Some(TurnLabel::Accept(S::News)));
    }

    #[test]
    fn test_labels_without_rejections_match_training() {
        let conv = {
            let mut c = sample_conversation();
            // Drop the rejection by making turn 9 accept News.
            c.turns[8].topic = Topic::News;
            c
        };
        let train = assign_training_labels(&conv);
        let test = assign_test_labels(&conv);
        let tl: Vec<_> = train.turns.iter().map(|t| t.label).collect();
        let sl: Vec<_> = test.turns.iter().map(|t| t.label).collect();
        assert_eq!(tl, sl);
    }

    #[test]
    fn labeling_is_deterministic_and_total() {
        let conv = sample_conversation();
        let a = assign_training_labels(&conv);
        let b = assign_training_labels(&conv);
        assert_eq!(a, b);
        assert!(a.is_labeled());
    }

    #[test]
    fn parse_round_trip_single_line() {
        let conv = sample_conversation();
        let corpus = Corpus::new(vec![conv]);
        let jsonl = corpus.to_jsonl();
        let parsed = parse_corpus(jsonl.as_bytes()).unwrap();
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed.conversations[0], corpus.conversations[0]);
    }

    #[test]
    fn parse_unknown_topic_names_the_string() {
        let corpus = Corpus::new(vec![sample_conversation()]);
        let jsonl = corpus.to_jsonl().replace("\"Music\"", "\"Jazz\"");
        let err = parse_corpus(jsonl.as_bytes()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("Jazz"), "error should name the string: {msg}");
        assert!(msg.contains("line 1"), "error should carry the line: {msg}");
    }

    #[test]
    fn parse_duplicate_id_rejected() {
        let corpus = Corpus::new(vec![sample_conversation()]);
        let line = corpus.to_jsonl();
        let doubled = format!("{line}{line}");
        let err = parse_corpus(doubled.as_bytes()).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId { line: 2, .. }));
    }

    #[test]
    fn parse_malformed_line_carries_number() {
        let corpus = Corpus::new(vec![sample_conversation()]);
        let jsonl = format!("{}not json\n", corpus.to_jsonl());
        let err = parse_corpus(jsonl.as_bytes()).unwrap_err();
        assert!(matches!(err, CorpusError::MalformedLine { line: 2, .. }));
    }

    #[test]
    fn split_by_date_partitions() {
        let mut convs = Vec::new();
        for day in 1..=15 {
            let mut c = sample_conversation();
            c.conversation_id = format!("c{day}");
            c.date = NaiveDate::from_ymd_opt(2018, 8, day).unwrap();
            convs.push(c);
        }
        let corpus = Corpus::new(convs);
        let cutoff = NaiveDate::from_ymd_opt(2018, 8, 11).unwrap();
        let (train, test) = split_by_date(&corpus, cutoff);
        assert_eq!(train.len(), 10);
        assert_eq!(test.len(), 5);
        assert_eq!(train.len() + test.len(), corpus.len());
        assert_eq!(train.split, SplitProvenance::Train);
        assert_eq!(test.split, SplitProvenance::Test);

        let early = NaiveDate::from_ymd_opt(2018, 7, 1).unwrap();
        let (train, test) = split_by_date(&corpus, early);
        assert!(train.is_empty());
        assert_eq!(test.len(), 15);
    }

    #[test]
    fn labels_never_serialized() {
        let labeled = assign_training_labels(&sample_conversation());
        let json = serde_json::to_string(&labeled).unwrap();
        assert!(!json.contains("label"));
    }
}
