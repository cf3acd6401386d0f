//! Seeded synthetic conversation generator.
//!
//! Personas carry per-topic preferences, a transition-affinity matrix
//! (having just engaged with topic `a` raises the chance of accepting a
//! related topic `b`), a fatigue term that decays acceptance with each
//! successive suggestion, and a time-of-day profile correlated with the
//! preferences. Conversations follow a suggest / accept / reject /
//! follow-up loop; utterances are filled from topic-keyed templates so text
//! encoders have real signal.
//!
//! Generation is fully deterministic under a master seed: every persona and
//! every conversation draws from its own counter-derived stream, so output
//! is byte-identical across runs and thread counts.

use chrono::NaiveDate;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Conversation, Corpus, Gender, SuggestibleTopic, TimeOfDay, Topic, Turn};

/// Population-level base acceptance tendency per suggestible topic, indexed
/// by topic code. Movie is the clear favorite; News and Sports trail.
pub const BASE_PREFERENCE: [f64; 8] = [0.62, 0.52, 0.48, 0.44, 0.30, 0.24, 0.34, 0.40];

/// Symmetric relatedness between topics: engaging with the row topic makes
/// accepting the column topic easier. Diagonal is zero.
pub const AFFINITY_BASE: [[f64; 8]; 8] = [
    // Movie  Music  Travel Pets   News   Sports Cars   Games
    [0.00, 0.30, 0.10, 0.00, 0.00, 0.00, 0.25, 0.12], // Movie
    [0.30, 0.00, 0.12, 0.00, 0.00, 0.00, 0.10, 0.20], // Music
    [0.10, 0.12, 0.00, 0.28, 0.18, 0.00, 0.08, 0.00], // Travel
    [0.00, 0.00, 0.28, 0.00, 0.00, 0.10, 0.00, 0.08], // Pets_Animal
    [0.00, 0.00, 0.18, 0.00, 0.00, 0.22, 0.08, 0.00], // News
    [0.00, 0.00, 0.00, 0.10, 0.22, 0.00, 0.08, 0.30], // Sports
    [0.25, 0.10, 0.08, 0.00, 0.08, 0.08, 0.00, 0.18], // Entertainment_and_Cars
    [0.12, 0.20, 0.00, 0.08, 0.00, 0.30, 0.18, 0.00], // Games
];

/// Preference boost per (native time slot, topic): morning users lean
/// toward news and pets, night users toward games and sports, and so on.
pub const TIME_BOOST: [[f64; 8]; 4] = [
    // Movie  Music  Travel Pets   News   Sports Cars   Games
    [-0.08, 0.00, 0.06, 0.12, 0.18, 0.00, 0.00, -0.10], // Morning
    [0.00, 0.12, 0.15, 0.00, -0.05, 0.00, 0.08, 0.00],  // Day
    [0.18, 0.08, 0.00, -0.05, -0.06, 0.00, 0.06, 0.00], // Evening
    [0.06, 0.00, -0.08, -0.06, 0.00, 0.12, 0.00, 0.18], // Night
];

/// How strongly a rejection of a related topic depresses acceptance.
const REJECT_REPULSION: f64 = 0.6;

/// Calibration divisors balancing the suggestion draw so that engaged
/// (accepted) topics track the target distribution; they fold in the
/// per-topic acceptance rates and the flattening caused by drawing
/// suggestions without replacement.
const SUGGESTION_BALANCE: [f64; 8] = [0.57, 0.51, 0.47, 0.37, 0.155, 0.18, 0.41, 0.38];

/// Per-persona noise on the preference vector.
const PREFERENCE_SPREAD: f64 = 0.18;

/// Probability weights for the number of suggestions per conversation
/// (2, 3, 4, 5).
const SUGGESTION_COUNT_WEIGHTS: [f64; 4] = [0.2, 0.3, 0.3, 0.2];

/// Probability that the opening utterance hints at the user's favorite
/// topic.
const OPENING_HINT_PROB: f64 = 0.45;

/// Probability of an explicit "let's change the subject" turn between an
/// accepted run and the next suggestion.
const WRAP_PROB: f64 = 0.7;

/// A simulated user.
#[derive(Debug, Clone, PartialEq)]
pub struct Persona {
    /// Acceptance tendency per suggestible topic, each in [0, 1].
    pub preference: [f64; 8],
    /// Bonus for accepting column topic right after engaging with row
    /// topic; diagonal is zero.
    pub transition_affinity: [[f64; 8]; 8],
    /// Acceptance decay per prior suggestion, >= 0.
    pub fatigue: f64,
    pub name_giving_prob: f64,
    pub gender: Gender,
    /// Distribution over the four times of day.
    pub time_profile: [f64; 4],
    /// Mean length of a follow-up run after an accepted suggestion.
    pub mean_followup_turns: f64,
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

impl Persona {
    /// Acceptance probability for suggesting `topic` as the `k`-th
    /// suggestion (1-based), given the most recently engaged and most
    /// recently rejected topics.
    pub fn acceptance_probability(
        &self,
        topic: SuggestibleTopic,
        suggestion_index: usize,
        prev_engaged: Option<SuggestibleTopic>,
        prev_rejected: Option<SuggestibleTopic>,
    ) -> f64 {
        let mut p = self.preference[topic.code()];
        if let Some(prev) = prev_engaged {
            p += self.transition_affinity[prev.code()][topic.code()];
        }
        if let Some(rej) = prev_rejected {
            p -= REJECT_REPULSION * self.transition_affinity[rej.code()][topic.code()];
        }
        p -= self.fatigue * (suggestion_index.saturating_sub(1)) as f64;
        clamp01(p)
    }
}

/// Utterance snippets. `{}` in a template is replaced with a topic keyword.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Templates {
    pub opening: Vec<String>,
    pub opening_hint: Vec<String>,
    pub accept: Vec<String>,
    pub reject: Vec<String>,
    pub wrap: Vec<String>,
    pub closing: Vec<String>,
    pub chat: Vec<String>,
    /// Follow-up snippets per suggestible topic (topic code order).
    pub followup: Vec<Vec<String>>,
    /// Keywords per suggestible topic (topic code order).
    pub keywords: Vec<Vec<String>>,
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Default for Templates {
    fn default() -> Templates {
        Templates {
            opening: strings(&["alexa let's chat", "hi there", "hello let's talk", "hey what's up"]),
            opening_hint: strings(&[
                "hi i feel like talking about {}",
                "hello can we chat about {}",
                "hey i'm in the mood for {}",
            ]),
            accept: strings(&[
                "yes i love {}",
                "sure let's talk about {}",
                "okay {} sounds great",
                "yeah tell me about {}",
            ]),
            reject: strings(&[
                "no thanks",
                "not really",
                "no let's talk about something else",
                "i'd rather not",
            ]),
            wrap: strings(&[
                "enough about {} let's switch",
                "okay that's plenty of {}",
                "let's move on from {}",
            ]),
            closing: strings(&["i have to go bye", "goodbye alexa", "talk to you later bye"]),
            chat: strings(&[
                "how are you today",
                "what can you do",
                "tell me something",
                "that's funny",
                "hmm okay",
            ]),
            followup: vec![
                strings(&[
                    "who directed that {}",
                    "i watched a great {} yesterday",
                    "what {} is popular now",
                    "any good {} this weekend",
                ]),
                strings(&[
                    "play me some {}",
                    "who sings that {}",
                    "i love that {} so much",
                    "any new {} this week",
                ]),
                strings(&[
                    "where should i {} next",
                    "i want to {} to the coast",
                    "best place to {} in summer",
                    "tell me about {} destinations",
                ]),
                strings(&[
                    "my {} is adorable",
                    "how do i train my {}",
                    "what do {} eat",
                    "tell me a {} fact",
                ]),
                strings(&[
                    "what's in the {} today",
                    "any breaking {} now",
                    "tell me more {}",
                    "what's the latest {}",
                ]),
                strings(&[
                    "how did the {} do last night",
                    "when is the next {} match",
                    "who won the {} game",
                    "standings in the {} league",
                ]),
                strings(&[
                    "what's a fast {} to buy",
                    "tell me about electric {}",
                    "how does a {} engine work",
                    "best {} for a road trip",
                ]),
                strings(&[
                    "what {} should i play",
                    "any tips for that {} boss",
                    "new {} releases this month",
                    "which {} console is better",
                ]),
            ],
            keywords: vec![
                strings(&["movie", "film", "flick"]),
                strings(&["song", "music", "tune"]),
                strings(&["travel", "trip"]),
                strings(&["dog", "cat", "pet"]),
                strings(&["news", "headlines"]),
                strings(&["team", "score"]),
                strings(&["car", "ride"]),
                strings(&["game", "videogame"]),
            ],
        }
    }
}

impl Templates {
    fn pick<'a, R: Rng>(rng: &mut R, items: &'a [String]) -> &'a str {
        &items[rng.gen_range(0..items.len())]
    }

    fn keyword<R: Rng>(&self, rng: &mut R, topic: SuggestibleTopic) -> &str {
        Self::pick(rng, &self.keywords[topic.code()])
    }

    fn fill(template: &str, keyword: &str) -> String {
        template.replace("{}", keyword)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub n_conversations: usize,
    pub persona_count: usize,
    pub master_seed: u64,
    /// Desired distribution of engaged (accepted) topics; must sum to 1.
    pub target_topic_distribution: [f64; 8],
    pub start_date: NaiveDate,
    pub n_days: u32,
    /// Fraction of conversations with no topic suggestion at all.
    pub chat_only_fraction: f64,
    #[serde(skip)]
    pub templates: Templates,
}

impl Default for SimConfig {
    fn default() -> SimConfig {
        SimConfig {
            n_conversations: 10_000,
            persona_count: 1_200,
            master_seed: 42,
            target_topic_distribution: default_target_distribution(),
            start_date: NaiveDate::from_ymd_opt(2018, 8, 1).unwrap(),
            n_days: 15,
            chat_only_fraction: 0.08,
            templates: Templates::default(),
        }
    }
}

/// The published topic distribution renormalized over the 8 suggestible
/// topics.
pub fn default_target_distribution() -> [f64; 8] {
    let total: f64 = SuggestibleTopic::FREQUENCY_PCT.iter().sum();
    let mut out = [0.0; 8];
    for (o, f) in out.iter_mut().zip(SuggestibleTopic::FREQUENCY_PCT) {
        *o = f / total;
    }
    out
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), String> {
        let sum: f64 = self.target_topic_distribution.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(format!("target_topic_distribution sums to {sum}, expected 1"));
        }
        if self.target_topic_distribution.iter().any(|p| *p < 0.0) {
            return Err("target_topic_distribution has negative entries".into());
        }
        if self.persona_count == 0 {
            return Err("persona_count must be positive".into());
        }
        if self.n_days == 0 {
            return Err("n_days must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.chat_only_fraction) {
            return Err("chat_only_fraction must be in [0,1]".into());
        }
        Ok(())
    }
}

const STREAM_PERSONA: u64 = 0x50455253;
const STREAM_CONVERSATION: u64 = 0x434f4e56;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Counter-based stream derivation: independent of generation order.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(stream)) ^ index)
}

fn categorical<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut draw = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        draw -= w;
        if draw < 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// Draw one persona from a dedicated stream. Deterministic given the
/// stream state.
pub fn sample_persona<R: Rng>(rng: &mut R, _config: &SimConfig) -> Persona {
    let native_slot = categorical(rng, &[0.25; 4]);
    let noise = Normal::new(0.0, PREFERENCE_SPREAD).expect("valid std");
    let mut preference = [0.0; 8];
    for t in 0..8 {
        preference[t] = clamp01(BASE_PREFERENCE[t] + TIME_BOOST[native_slot][t] + noise.sample(rng));
    }

    let scale = rng.gen_range(0.7..1.3);
    let mut transition_affinity = [[0.0; 8]; 8];
    for a in 0..8 {
        for b in 0..8 {
            if a != b {
                transition_affinity[a][b] = clamp01(AFFINITY_BASE[a][b] * scale);
            }
        }
    }

    let mut time_profile = [0.12; 4];
    time_profile[native_slot] = 0.64;

    Persona {
        preference,
        transition_affinity,
        fatigue: rng.gen_range(0.05..0.13),
        name_giving_prob: rng.gen_range(0.3..0.95),
        gender: if rng.gen_bool(0.5) { Gender::Male } else { Gender::Female },
        time_profile,
        mean_followup_turns: rng.gen_range(3.0..6.0),
    }
}

/// Conversation-level identity fields decided by the corpus generator.
#[derive(Debug, Clone)]
pub struct ConversationSeed {
    pub conversation_id: String,
    pub user_id: String,
    pub date: NaiveDate,
    pub time_of_day: TimeOfDay,
    pub name_given: bool,
    pub gender: Gender,
}

struct ProtoTurn {
    utterance: String,
    topic: Topic,
    /// Topic suggested in this turn's system response, if any.
    suggests: Option<SuggestibleTopic>,
}

/// Suggestion order: weighted sampling without replacement, weights
/// proportional to target share over base acceptance so that the engaged
/// topics track the target distribution.
fn suggestion_order<R: Rng>(rng: &mut R, config: &SimConfig) -> Vec<SuggestibleTopic> {
    let mut weights: Vec<f64> = (0..8)
        .map(|t| config.target_topic_distribution[t] / SUGGESTION_BALANCE[t].max(0.05))
        .collect();
    let mut order = Vec::with_capacity(8);
    for _ in 0..8 {
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            break;
        }
        let idx = categorical(rng, &weights);
        order.push(SuggestibleTopic::from_code(idx).expect("valid code"));
        weights[idx] = 0.0;
    }
    order
}

fn argmax_preference(persona: &Persona) -> SuggestibleTopic {
    let mut best = 0;
    for t in 1..8 {
        if persona.preference[t] > persona.preference[best] {
            best = t;
        }
    }
    SuggestibleTopic::from_code(best).expect("valid code")
}

/// Simulate one conversation: a suggest/accept/reject/follow-up loop with
/// at least 4 turns. Labels are not written; they are derived later by the
/// labeling rules.
pub fn generate_conversation<R: Rng>(
    persona: &Persona,
    seed: &ConversationSeed,
    rng: &mut R,
    config: &SimConfig,
) -> Conversation {
    let templates = &config.templates;
    let mut proto: Vec<ProtoTurn> = Vec::new();

    // Opening, sometimes hinting at the favorite topic.
    let opening = if rng.gen::<f64>() < OPENING_HINT_PROB {
        let favorite = argmax_preference(persona);
        let kw = templates.keyword(rng, favorite).to_string();
        Templates::fill(Templates::pick(rng, &templates.opening_hint), &kw)
    } else {
        Templates::pick(rng, &templates.opening).to_string()
    };
    proto.push(ProtoTurn {
        utterance: opening,
        topic: Topic::Phatic,
        suggests: None,
    });

    let chat_only = rng.gen::<f64>() < config.chat_only_fraction;
    if chat_only {
        let extra = rng.gen_range(2..=4);
        for _ in 0..extra {
            proto.push(ProtoTurn {
                utterance: Templates::pick(rng, &templates.chat).to_string(),
                topic: Topic::Phatic,
                suggests: None,
            });
        }
    } else {
        let n_sugg = 2 + categorical(rng, &SUGGESTION_COUNT_WEIGHTS);
        let order = suggestion_order(rng, config);
        let mut prev_engaged: Option<SuggestibleTopic> = None;
        let mut prev_rejected: Option<SuggestibleTopic> = None;
        for (k, &topic) in order.iter().take(n_sugg).enumerate() {
            proto.last_mut().expect("opening exists").suggests = Some(topic);
            let p = persona.acceptance_probability(topic, k + 1, prev_engaged, prev_rejected);
            if rng.gen::<f64>() < p {
                let kw = templates.keyword(rng, topic).to_string();
                proto.push(ProtoTurn {
                    utterance: Templates::fill(Templates::pick(rng, &templates.accept), &kw),
                    topic: topic.as_topic(),
                    suggests: None,
                });
                // Geometric follow-up run, mean = mean_followup_turns.
                let stop = 1.0 / persona.mean_followup_turns.max(1.0);
                let mut followups = 1;
                while followups < 10 && rng.gen::<f64>() > stop {
                    followups += 1;
                }
                for _ in 0..followups {
                    let kw = templates.keyword(rng, topic).to_string();
                    proto.push(ProtoTurn {
                        utterance: Templates::fill(
                            Templates::pick(rng, &templates.followup[topic.code()]),
                            &kw,
                        ),
                        topic: topic.as_topic(),
                        suggests: None,
                    });
                }
                prev_engaged = Some(topic);
                let last_suggestion = k + 1 == n_sugg.min(order.len());
                if !last_suggestion && rng.gen::<f64>() < WRAP_PROB {
                    let kw = templates.keyword(rng, topic).to_string();
                    proto.push(ProtoTurn {
                        utterance: Templates::fill(Templates::pick(rng, &templates.wrap), &kw),
                        topic: Topic::Phatic,
                        suggests: None,
                    });
                }
            } else {
                proto.push(ProtoTurn {
                    utterance: Templates::pick(rng, &templates.reject).to_string(),
                    topic: Topic::Phatic,
                    suggests: None,
                });
                prev_rejected = Some(topic);
            }
        }
    }

    while proto.len() < 3 {
        proto.push(ProtoTurn {
            utterance: Templates::pick(rng, &templates.chat).to_string(),
            topic: Topic::Phatic,
            suggests: None,
        });
    }
    proto.push(ProtoTurn {
        utterance: Templates::pick(rng, &templates.closing).to_string(),
        topic: Topic::Phatic,
        suggests: None,
    });

    // Assemble turns with the running dialogue-manager state fields.
    let mut turns = Vec::with_capacity(proto.len());
    let mut last_suggested: Option<SuggestibleTopic> = None;
    let mut prev_topic: Option<Topic> = None;
    for (i, pt) in proto.iter().enumerate() {
        let system_response = match pt.suggests {
            Some(s) => format!("would you like to talk about {}?", s.name().to_lowercase()),
            None => "i see, tell me more.".to_string(),
        };
        turns.push(Turn {
            index: (i + 1) as u32,
            user_utterance: pt.utterance.clone(),
            system_response,
            topic: pt.topic,
            previous_state: prev_topic,
            previous_suggested_topic: last_suggested,
            label: None,
        });
        if let Some(s) = pt.suggests {
            last_suggested = Some(s);
        }
        prev_topic = Some(pt.topic);
    }

    Conversation {
        conversation_id: seed.conversation_id.clone(),
        user_id: seed.user_id.clone(),
        date: seed.date,
        time_of_day: seed.time_of_day,
        name_given: seed.name_given,
        gender: seed.gender,
        turns,
    }
}

/// The persona pool for a configuration, in index order.
pub fn persona_pool(config: &SimConfig) -> Vec<Persona> {
    (0..config.persona_count)
        .map(|p| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(config.master_seed, STREAM_PERSONA, p as u64));
            sample_persona(&mut rng, config)
        })
        .collect()
}

/// Generate the full corpus. Conversations are independent given their
/// derived streams, so generation parallelizes without affecting output.
pub fn generate_corpus(config: &SimConfig) -> Result<Corpus, String> {
    config.validate()?;
    let personas = persona_pool(config);
    let conversations: Vec<Conversation> = (0..config.n_conversations)
        .into_par_iter()
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                config.master_seed,
                STREAM_CONVERSATION,
                j as u64,
            ));
            let persona_idx = rng.gen_range(0..config.persona_count);
            let persona = &personas[persona_idx];
            let day = rng.gen_range(0..config.n_days);
            let time_slot = categorical(&mut rng, &persona.time_profile);
            let name_given = rng.gen::<f64>() < persona.name_giving_prob;
            let seed = ConversationSeed {
                conversation_id: format!("c{j:06}"),
                user_id: format!("u{persona_idx:05}"),
                date: config.start_date + chrono::Days::new(day as u64),
                time_of_day: TimeOfDay::ALL[time_slot],
                name_given,
                gender: if name_given { persona.gender } else { Gender::Unknown },
            };
            generate_conversation(persona, &seed, &mut rng, config)
        })
        .collect();
    Ok(Corpus::new(conversations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{label_corpus_training, TurnLabel};

    fn small_config(n: usize, seed: u64) -> SimConfig {
        SimConfig {
            n_conversations: n,
            persona_count: 100,
            master_seed: seed,
            ..SimConfig::default()
        }
    }

    #[test]
    fn same_seed_same_persona() {
        let config = SimConfig::default();
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        assert_eq!(sample_persona(&mut a, &config), sample_persona(&mut b, &config));
    }

    #[test]
    fn persona_fields_in_range() {
        let config = SimConfig::default();
        for i in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(i);
            let p = sample_persona(&mut rng, &config);
            assert!(p.preference.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(p.fatigue >= 0.0);
            assert!((0.0..=1.0).contains(&p.name_giving_prob));
            assert!((p.time_profile.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for t in 0..8 {
                assert_eq!(p.transition_affinity[t][t], 0.0);
            }
        }
    }

    #[test]
    fn movie_preference_dominates_population_mean() {
        let config = SimConfig::default();
        let mut means = [0.0; 8];
        let n = 10_000;
        for i in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(1, STREAM_PERSONA, i));
            let p = sample_persona(&mut rng, &config);
            for t in 0..8 {
                means[t] += p.preference[t];
            }
        }
        for m in means.iter_mut() {
            *m /= n as f64;
        }
        let movie = means[SuggestibleTopic::Movie.code()];
        for t in 1..8 {
            assert!(movie > means[t], "Movie {movie} vs topic {t}: {}", means[t]);
        }
    }

    #[test]
    fn indifferent_persona_rejects_everything() {
        let config = SimConfig {
            chat_only_fraction: 0.0,
            ..small_config(1, 3)
        };
        let persona = Persona {
            preference: [0.0; 8],
            transition_affinity: [[0.0; 8]; 8],
            fatigue: 0.0,
            name_giving_prob: 1.0,
            gender: Gender::Female,
            time_profile: [0.25; 4],
            mean_followup_turns: 3.0,
        };
        let seed = ConversationSeed {
            conversation_id: "c0".into(),
            user_id: "u0".into(),
            date: config.start_date,
            time_of_day: TimeOfDay::Day,
            name_given: true,
            gender: Gender::Female,
        };
        for s in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let conv = generate_conversation(&persona, &seed, &mut rng, &config);
            let labeled = crate::corpus::assign_training_labels(&conv);
            assert!(labeled
                .turns
                .iter()
                .all(|t| !matches!(t.label, Some(TurnLabel::Accept(_)))));
            assert!(labeled
                .turns
                .iter()
                .any(|t| matches!(t.label, Some(TurnLabel::Reject(_)))));
        }
    }

    #[test]
    fn eager_persona_accepts_first_movie_suggestion() {
        let config = SimConfig {
            chat_only_fraction: 0.0,
            ..small_config(1, 3)
        };
        let mut persona = Persona {
            preference: [0.0; 8],
            transition_affinity: [[0.0; 8]; 8],
            fatigue: 0.0,
            name_giving_prob: 1.0,
            gender: Gender::Male,
            time_profile: [0.25; 4],
            mean_followup_turns: 3.0,
        };
        persona.preference[SuggestibleTopic::Movie.code()] = 1.0;
        let seed = ConversationSeed {
            conversation_id: "c0".into(),
            user_id: "u0".into(),
            date: config.start_date,
            time_of_day: TimeOfDay::Evening,
            name_given: true,
            gender: Gender::Male,
        };
        let mut seen_movie_suggestion = false;
        for s in 0..40 {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let conv = generate_conversation(&persona, &seed, &mut rng, &config);
            let labeled = crate::corpus::assign_training_labels(&conv);
            for t in &labeled.turns {
                match t.label {
                    Some(TurnLabel::Accept(s)) if s == SuggestibleTopic::Movie => {
                        seen_movie_suggestion = true;
                    }
                    Some(TurnLabel::Reject(s)) => {
                        assert_ne!(s, SuggestibleTopic::Movie, "movie must never be rejected");
                    }
                    _ => {}
                }
            }
        }
        assert!(seen_movie_suggestion, "movie should have been suggested at least once");
    }

    #[test]
    fn corpus_is_deterministic_under_seed() {
        let config = small_config(120, 42);
        let a = generate_corpus(&config).unwrap();
        let b = generate_corpus(&config).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        let c = generate_corpus(&small_config(120, 43)).unwrap();
        assert_ne!(a.to_jsonl(), c.to_jsonl());
    }

    #[test]
    fn empty_corpus_for_zero_conversations() {
        let corpus = generate_corpus(&small_config(0, 42)).unwrap();
        assert!(corpus.is_empty());
    }

    #[test]
    fn generated_conversations_are_valid_and_parse_back() {
        let config = small_config(150, 9);
        let corpus = generate_corpus(&config).unwrap();
        let jsonl = corpus.to_jsonl();
        let parsed = crate::corpus::parse_corpus(jsonl.as_bytes()).unwrap();
        assert_eq!(parsed.len(), 150);
        for conv in &parsed.conversations {
            assert!(conv.turns.len() >= 4);
            assert!(conv.turns[0].previous_state.is_none());
        }
    }

    #[test]
    fn calibration_length_and_suggestion_presence() {
        let config = small_config(3_000, 42);
        let corpus = generate_corpus(&config).unwrap();
        let labeled = label_corpus_training(&corpus);

        let mean_len: f64 = corpus
            .conversations
            .iter()
            .map(|c| c.turns.len() as f64)
            .sum::<f64>()
            / corpus.len() as f64;
        assert!(
            (9.5..=13.5).contains(&mean_len),
            "mean conversation length {mean_len}"
        );

        let with_suggestion = labeled
            .conversations
            .iter()
            .filter(|c| {
                c.turns.iter().any(|t| {
                    matches!(t.label, Some(TurnLabel::Accept(_)) | Some(TurnLabel::Reject(_)))
                })
            })
            .count();
        let frac = with_suggestion as f64 / corpus.len() as f64;
        assert!(frac >= 0.85, "fraction with a suggestion: {frac}");
    }

    #[test]
    fn engagement_distribution_tracks_target() {
        let config = small_config(3_000, 42);
        let corpus = generate_corpus(&config).unwrap();
        let labeled = label_corpus_training(&corpus);
        let mut counts = [0.0f64; 8];
        for conv in &labeled.conversations {
            for turn in &conv.turns {
                if let Some(TurnLabel::Accept(t)) = turn.label {
                    counts[t.code()] += 1.0;
                }
            }
        }
        let total: f64 = counts.iter().sum();
        assert!(total > 0.0);
        let tvd: f64 = counts
            .iter()
            .zip(&config.target_topic_distribution)
            .map(|(c, t)| (c / total - t).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tvd <= 0.08, "total variation distance {tvd}");
    }

    #[test]
    fn planted_preferences_are_recoverable() {
        // Acceptance among high-preference personas strictly exceeds
        // acceptance among low-preference personas for the same topic.
        let config = small_config(4_000, 11);
        let corpus = generate_corpus(&config).unwrap();
        let labeled = label_corpus_training(&corpus);
        let personas = persona_pool(&config);

        let topic = SuggestibleTopic::Music;
        let mut hi = (0usize, 0usize);
        let mut lo = (0usize, 0usize);
        for conv in &labeled.conversations {
            let persona_idx: usize = conv.user_id[1..].parse().unwrap();
            let pref = personas[persona_idx].preference[topic.code()];
            for turn in &conv.turns {
                let bucket = if pref >= 0.6 {
                    &mut hi
                } else if pref <= 0.35 {
                    &mut lo
                } else {
                    continue;
                };
                match turn.label {
                    Some(TurnLabel::Accept(t)) if t == topic => {
                        bucket.0 += 1;
                        bucket.1 += 1;
                    }
                    Some(TurnLabel::Reject(t)) if t == topic => {
                        bucket.1 += 1;
                    }
                    _ => {}
                }
            }
        }
        assert!(hi.1 > 20 && lo.1 > 20, "need events in both buckets");
        let hi_rate = hi.0 as f64 / hi.1 as f64;
        let lo_rate = lo.0 as f64 / lo.1 as f64;
        assert!(
            hi_rate > lo_rate,
            "high-preference acceptance {hi_rate} should exceed low-preference {lo_rate}"
        );
    }

    #[test]
    fn configured_distribution_must_sum_to_one() {
        let mut config = small_config(10, 1);
        config.target_topic_distribution[0] += 0.5;
        assert!(generate_corpus(&config).is_err());
    }
}
