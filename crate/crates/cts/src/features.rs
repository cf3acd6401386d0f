//! Per-turn state features and the fixed-layout feature vector.
//!
//! [`StateFeatures`] summarizes the dialogue-manager state strictly before a
//! turn: per-topic accept/reject memory, the last engaged components, the
//! most recent accepted/rejected suggestions, and the user profile.
//! [`assemble_fv`] flattens it into a 68-entry vector with a documented block
//! layout; the layout version is written into every model checkpoint.

use thiserror::Error;

use crate::corpus::{Conversation, Gender, SuggestibleTopic, TimeOfDay, Topic, Turn, TurnLabel};

/// Version of the vector layout below. Checkpoints record it and loaders
/// reject mismatches.
pub const FV_LAYOUT_VERSION: u32 = 1;

/// Total length of the assembled feature vector.
pub const FEATURE_VECTOR_LEN: usize = 68;

/// Block offsets within the vector:
/// `[F1..F8 (8) ; F9 one-hot(18) ; F10 one-hot(18) ; F11 one-hot(9) ;
///  F12 one-hot(9) ; F13 (1) ; F14 (1) ; F15 one-hot(4)]`.
/// Each categorical block reserves its last slot for "none".
pub const TOPIC_RESPONSE_OFFSET: usize = 0;
pub const PREV_TOPIC_1_OFFSET: usize = 8;
pub const PREV_TOPIC_2_OFFSET: usize = 26;
pub const PREV_ACCEPTED_OFFSET: usize = 44;
pub const PREV_REJECTED_OFFSET: usize = 53;
pub const NAME_GIVEN_OFFSET: usize = 62;
pub const GENDER_OFFSET: usize = 63;
pub const TIME_OF_DAY_OFFSET: usize = 64;

/// Coordinates `0..TOPICAL_BLOCK_LEN` carry the topic-and-behavior features
/// (F1..F12); the rest is the user profile (F13..F15).
pub const TOPICAL_BLOCK_LEN: usize = NAME_GIVEN_OFFSET;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FeatureError {
    #[error("turn index {index} out of range 1..={len}")]
    TurnOutOfRange { index: usize, len: usize },
    #[error("turn {index} has no label; labeling must run before feature extraction")]
    MissingLabel { index: usize },
}

/// Dialogue-manager state as of just before a given turn.
#[derive(Debug, Clone, PartialEq)]
pub struct StateFeatures {
    /// Per suggestible topic: +1 ever accepted, -1 most recent suggestion
    /// event was a rejection, 0 never suggested. Acceptance is sticky.
    pub topic_response: [f64; SuggestibleTopic::COUNT],
    /// Most recent non-phatic topic engaged with before this turn.
    pub prev_topic_1: Option<Topic>,
    /// Second most recent distinct non-phatic topic.
    pub prev_topic_2: Option<Topic>,
    pub prev_accepted: Option<SuggestibleTopic>,
    pub prev_rejected: Option<SuggestibleTopic>,
    pub name_given: bool,
    pub gender: Gender,
    pub time_of_day: TimeOfDay,
}

impl StateFeatures {
    /// State with no history at all (used for turn 1 and padding slots).
    pub fn empty(name_given: bool, gender: Gender, time_of_day: TimeOfDay) -> StateFeatures {
        StateFeatures {
            topic_response: [0.0; SuggestibleTopic::COUNT],
            prev_topic_1: None,
            prev_topic_2: None,
            prev_accepted: None,
            prev_rejected: None,
            name_given,
            gender,
            time_of_day,
        }
    }
}

/// Fixed-length numeric encoding of [`StateFeatures`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn zeros() -> FeatureVector {
        FeatureVector {
            values: vec![0.0; FEATURE_VECTOR_LEN],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Compute the state summary of turns strictly before `turns[..history_len]`
/// given the conversation profile. Labels must be present on the history.
fn state_from_history(
    conv: &Conversation,
    history: &[Turn],
) -> Result<StateFeatures, FeatureError> {
    let mut features = StateFeatures::empty(conv.name_given, conv.gender, conv.time_of_day);

    // Accept/reject memory: acceptance dominates later rejections.
    let mut ever_accepted = [false; SuggestibleTopic::COUNT];
    let mut last_event_reject = [false; SuggestibleTopic::COUNT];
    for turn in history {
        let label = turn.label.ok_or(FeatureError::MissingLabel {
            index: turn.index as usize,
        })?;
        match label {
            TurnLabel::Accept(t) => {
                ever_accepted[t.code()] = true;
                last_event_reject[t.code()] = false;
                features.prev_accepted = Some(t);
            }
            TurnLabel::Reject(t) => {
                last_event_reject[t.code()] = true;
                features.prev_rejected = Some(t);
            }
            TurnLabel::FollowUp | TurnLabel::Chat => {}
        }
    }
    for t in SuggestibleTopic::ALL {
        features.topic_response[t.code()] = if ever_accepted[t.code()] {
            1.0
        } else if last_event_reject[t.code()] {
            -1.0
        } else {
            0.0
        };
    }

    // Last two distinct non-phatic topics, most recent first.
    for turn in history.iter().rev() {
        if turn.topic.is_phatic() {
            continue;
        }
        match features.prev_topic_1 {
            None => features.prev_topic_1 = Some(turn.topic),
            Some(t1) if t1 != turn.topic => {
                features.prev_topic_2 = Some(turn.topic);
                break;
            }
            Some(_) => {}
        }
    }

    Ok(features)
}

/// State features for 1-based turn `index`, computed from turns `1..index`.
pub fn extract_state_features(
    conv: &Conversation,
    index: usize,
) -> Result<StateFeatures, FeatureError> {
    if index == 0 || index > conv.turns.len() {
        return Err(FeatureError::TurnOutOfRange {
            index,
            len: conv.turns.len(),
        });
    }
    state_from_history(conv, &conv.turns[..index - 1])
}

/// Like [`extract_state_features`] but allows `index == len + 1`, i.e. the
/// state after the final turn (used for end-of-conversation user profiles).
pub fn state_after_turns(
    conv: &Conversation,
    history_len: usize,
) -> Result<StateFeatures, FeatureError> {
    if history_len > conv.turns.len() {
        return Err(FeatureError::TurnOutOfRange {
            index: history_len + 1,
            len: conv.turns.len(),
        });
    }
    state_from_history(conv, &conv.turns[..history_len])
}

fn one_hot_topic(values: &mut [f64], offset: usize, topic: Option<Topic>) {
    let slot = match topic {
        Some(t) => t.code(),
        None => Topic::COUNT, // none occupies the final slot
    };
    values[offset + slot] = 1.0;
}

fn one_hot_suggestible(values: &mut [f64], offset: usize, topic: Option<SuggestibleTopic>) {
    let slot = match topic {
        Some(t) => t.code(),
        None => SuggestibleTopic::COUNT,
    };
    values[offset + slot] = 1.0;
}

/// Flatten state features into the documented 68-entry layout. Pure and
/// injective: distinct states produce distinct vectors.
pub fn assemble_fv(state: &StateFeatures) -> FeatureVector {
    let mut values = vec![0.0; FEATURE_VECTOR_LEN];
    values[TOPIC_RESPONSE_OFFSET..TOPIC_RESPONSE_OFFSET + SuggestibleTopic::COUNT]
        .copy_from_slice(&state.topic_response);
    one_hot_topic(&mut values, PREV_TOPIC_1_OFFSET, state.prev_topic_1);
    one_hot_topic(&mut values, PREV_TOPIC_2_OFFSET, state.prev_topic_2);
    one_hot_suggestible(&mut values, PREV_ACCEPTED_OFFSET, state.prev_accepted);
    one_hot_suggestible(&mut values, PREV_REJECTED_OFFSET, state.prev_rejected);
    values[NAME_GIVEN_OFFSET] = if state.name_given { 1.0 } else { 0.0 };
    values[GENDER_OFFSET] = state.gender.encoded();
    values[TIME_OF_DAY_OFFSET + state.time_of_day.code()] = 1.0;
    FeatureVector { values }
}

/// One slot of a context window.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnView {
    /// 1-based turn index; 0 for padding slots.
    pub turn_index: usize,
    pub tokens: Vec<String>,
    pub state: Option<StateFeatures>,
    pub fv: FeatureVector,
    pub is_pad: bool,
}

impl TurnView {
    fn pad() -> TurnView {
        TurnView {
            turn_index: 0,
            tokens: Vec::new(),
            state: None,
            fv: FeatureVector::zeros(),
            is_pad: true,
        }
    }
}

/// Sliding window of exactly `m` turns ending at a given turn, left-padded.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextWindow {
    pub slots: Vec<TurnView>,
}

impl ContextWindow {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

/// Window over turns `index-m+1 ..= index`; positions before turn 1 are
/// padding slots with zero vectors and an explicit flag.
pub fn make_window(
    conv: &Conversation,
    index: usize,
    m: usize,
) -> Result<ContextWindow, FeatureError> {
    if index == 0 || index > conv.turns.len() {
        return Err(FeatureError::TurnOutOfRange {
            index,
            len: conv.turns.len(),
        });
    }
    assert!(m >= 1, "window size must be at least 1");
    let mut slots = Vec::with_capacity(m);
    let start = index as i64 - m as i64 + 1;
    for j in start..=(index as i64) {
        if j < 1 {
            slots.push(TurnView::pad());
            continue;
        }
        let j = j as usize;
        let state = extract_state_features(conv, j)?;
        let fv = assemble_fv(&state);
        let turn = &conv.turns[j - 1];
        slots.push(TurnView {
            turn_index: j,
            tokens: turn.tokens().iter().map(|s| s.to_string()).collect(),
            state: Some(state),
            fv,
            is_pad: false,
        });
    }
    Ok(ContextWindow { slots })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{assign_training_labels, Conversation, Gender, TimeOfDay};
    use chrono::NaiveDate;

    fn labeled_sample() -> Conversation {
        assign_training_labels(&crate::corpus::tests::sample_conversation())
    }

    #[test]
    fn empty_history_features() {
        let conv = labeled_sample();
        let s = extract_state_features(&conv, 1).unwrap();
        assert_eq!(s.topic_response, [0.0; 8]);
        assert_eq!(s.prev_topic_1, None);
        assert_eq!(s.prev_topic_2, None);
        assert_eq!(s.prev_accepted, None);
        assert_eq!(s.prev_rejected, None);
    }

    #[test]
    fn sample_turn_6_state() {
        let conv = labeled_sample();
        let s = extract_state_features(&conv, 6).unwrap();
        // Music accepted at turn 2, Travel accepted at turn 5; nothing else
        // suggested yet.
        let mut expected = [0.0; 8];
        expected[SuggestibleTopic::Music.code()] = 1.0;
        expected[SuggestibleTopic::Travel.code()] = 1.0;
        assert_eq!(s.topic_response, expected);
        assert_eq!(s.prev_accepted, Some(SuggestibleTopic::Travel));
        assert_eq!(s.prev_rejected, None);
        assert_eq!(s.prev_topic_1, Some(Topic::Travel));
        assert_eq!(s.prev_topic_2, Some(Topic::Music));
    }

    #[test]
    fn reject_memory_and_accept_priority() {
        let conv = labeled_sample();
        // After turn 9 (News rejected), turn 10's state shows News = -1.
        let s = extract_state_features(&conv, 10).unwrap();
        assert_eq!(s.topic_response[SuggestibleTopic::News.code()], -1.0);
        assert_eq!(s.prev_rejected, Some(SuggestibleTopic::News));
        // Accepted topics stay +1 to the very end.
        let s = extract_state_features(&conv, 12).unwrap();
        assert_eq!(s.topic_response[SuggestibleTopic::Music.code()], 1.0);
        assert_eq!(s.topic_response[SuggestibleTopic::Travel.code()], 1.0);
        assert_eq!(s.topic_response[SuggestibleTopic::Movie.code()], 1.0);
    }

    #[test]
    fn out_of_range_is_error() {
        let conv = labeled_sample();
        assert!(extract_state_features(&conv, 0).is_err());
        assert!(extract_state_features(&conv, 13).is_err());
        assert!(state_after_turns(&conv, 12).is_ok());
        assert!(state_after_turns(&conv, 13).is_err());
    }

    /// Straightforward replay oracle: recompute the state by an independent
    /// pass over the prefix and compare field by field.
    #[test]
    fn replay_oracle_agrees_on_every_prefix() {
        let conv = labeled_sample();
        for i in 1..=conv.turns.len() {
            let got = extract_state_features(&conv, i).unwrap();

            // Oracle: explicit event replay.
            let mut response = [0.0f64; 8];
            let mut sugg_events: Vec<(SuggestibleTopic, bool)> = Vec::new();
            for turn in &conv.turns[..i - 1] {
                match turn.label.unwrap() {
                    TurnLabel::Accept(t) => sugg_events.push((t, true)),
                    TurnLabel::Reject(t) => sugg_events.push((t, false)),
                    _ => {}
                }
            }
            for t in SuggestibleTopic::ALL {
                let events: Vec<bool> = sugg_events
                    .iter()
                    .filter(|(s, _)| *s == t)
                    .map(|(_, a)| *a)
                    .collect();
                response[t.code()] = if events.iter().any(|&a| a) {
                    1.0
                } else if events.last() == Some(&false) {
                    -1.0
                } else {
                    0.0
                };
            }
            assert_eq!(got.topic_response, response, "prefix {i}");

            let accepted = sugg_events.iter().filter(|(_, a)| *a).next_back();
            let rejected = sugg_events.iter().filter(|(_, a)| !*a).next_back();
            assert_eq!(got.prev_accepted, accepted.map(|(t, _)| *t));
            assert_eq!(got.prev_rejected, rejected.map(|(t, _)| *t));

            let mut topics: Vec<Topic> = Vec::new();
            for turn in conv.turns[..i - 1].iter().rev() {
                if !turn.topic.is_phatic() && !topics.contains(&turn.topic) {
                    topics.push(turn.topic);
                }
                if topics.len() == 2 {
                    break;
                }
            }
            assert_eq!(got.prev_topic_1, topics.first().copied());
            assert_eq!(got.prev_topic_2, topics.get(1).copied());
        }
    }

    #[test]
    fn causality_future_turns_do_not_matter() {
        let conv = labeled_sample();
        let base = extract_state_features(&conv, 6).unwrap();
        let mut mutated = conv.clone();
        for turn in &mut mutated.turns[6..] {
            turn.topic = Topic::Weather;
            turn.user_utterance = "something entirely different".into();
            turn.label = Some(TurnLabel::Chat);
        }
        let after = extract_state_features(&mutated, 6).unwrap();
        assert_eq!(base, after);
    }

    #[test]
    fn fv_layout_arithmetic() {
        assert_eq!(TIME_OF_DAY_OFFSET + 4, FEATURE_VECTOR_LEN);
        let empty = StateFeatures::empty(false, Gender::Unknown, TimeOfDay::Morning);
        let fv = assemble_fv(&empty);
        assert_eq!(fv.len(), FEATURE_VECTOR_LEN);
        // None slots of the four categorical blocks plus the time slot.
        let hot: Vec<usize> = fv
            .values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(
            hot,
            vec![
                PREV_TOPIC_1_OFFSET + Topic::COUNT,
                PREV_TOPIC_2_OFFSET + Topic::COUNT,
                PREV_ACCEPTED_OFFSET + SuggestibleTopic::COUNT,
                PREV_REJECTED_OFFSET + SuggestibleTopic::COUNT,
                TIME_OF_DAY_OFFSET + TimeOfDay::Morning.code(),
            ]
        );
    }

    #[test]
    fn one_hot_blocks_sum_to_one() {
        let conv = labeled_sample();
        for i in 1..=conv.turns.len() {
            let fv = assemble_fv(&extract_state_features(&conv, i).unwrap());
            let blocks = [
                (PREV_TOPIC_1_OFFSET, Topic::COUNT + 1),
                (PREV_TOPIC_2_OFFSET, Topic::COUNT + 1),
                (PREV_ACCEPTED_OFFSET, SuggestibleTopic::COUNT + 1),
                (PREV_REJECTED_OFFSET, SuggestibleTopic::COUNT + 1),
                (TIME_OF_DAY_OFFSET, TimeOfDay::ALL.len()),
            ];
            for (offset, len) in blocks {
                let sum: f64 = fv.values[offset..offset + len].iter().sum();
                assert_eq!(sum, 1.0, "block at {offset}, turn {i}");
            }
        }
    }

    #[test]
    fn gender_changes_exactly_one_coordinate() {
        let a = StateFeatures::empty(false, Gender::Unknown, TimeOfDay::Day);
        let mut b = a.clone();
        b.gender = Gender::Male;
        let fa = assemble_fv(&a);
        let fb = assemble_fv(&b);
        let diffs: Vec<usize> = fa
            .values
            .iter()
            .zip(&fb.values)
            .enumerate()
            .filter(|(_, (x, y))| x != y)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(diffs, vec![GENDER_OFFSET]);
    }

    #[test]
    fn window_boundary_padding() {
        let conv = labeled_sample();
        let w = make_window(&conv, 1, 5).unwrap();
        assert_eq!(w.len(), 5);
        assert!(w.slots[..4].iter().all(|s| s.is_pad));
        assert!(!w.slots[4].is_pad);
        assert_eq!(w.slots[4].turn_index, 1);

        let w = make_window(&conv, 7, 5).unwrap();
        assert!(w.slots.iter().all(|s| !s.is_pad));
        let indices: Vec<usize> = w.slots.iter().map(|s| s.turn_index).collect();
        assert_eq!(indices, vec![3, 4, 5, 6, 7]);
    }

    #[test]
    fn pad_slots_are_zero_vectors() {
        let conv = labeled_sample();
        let w = make_window(&conv, 2, 4).unwrap();
        for slot in &w.slots[..2] {
            assert!(slot.is_pad);
            assert!(slot.fv.values.iter().all(|v| *v == 0.0));
            assert!(slot.tokens.is_empty());
        }
    }

    // Field-level sanity for the profile encoding used by several modules.
    #[test]
    fn profile_fields_flow_through() {
        let conv = Conversation {
            conversation_id: "x".into(),
            user_id: "u".into(),
            date: NaiveDate::from_ymd_opt(2018, 8, 2).unwrap(),
            time_of_day: TimeOfDay::Night,
            name_given: true,
            gender: Gender::Male,
            turns: crate::corpus::tests::sample_conversation().turns,
        };
        let conv = assign_training_labels(&conv);
        let s = extract_state_features(&conv, 3).unwrap();
        assert!(s.name_given);
        assert_eq!(s.gender, Gender::Male);
        assert_eq!(s.time_of_day, TimeOfDay::Night);
        let fv = assemble_fv(&s);
        assert_eq!(fv.values[NAME_GIVEN_OFFSET], 1.0);
        assert_eq!(fv.values[GENDER_OFFSET], 1.0);
        assert_eq!(fv.values[TIME_OF_DAY_OFFSET + 3], 1.0);
    }
}
