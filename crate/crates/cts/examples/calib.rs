use cts::corpus::{label_corpus_training, TurnLabel};
use cts::simulator::{generate_corpus, SimConfig};

fn main() {
    let config = SimConfig { n_conversations: 10_000, ..SimConfig::default() };
    let corpus = generate_corpus(&config).unwrap();
    let labeled = label_corpus_training(&corpus);
    let mean_len: f64 = corpus.conversations.iter().map(|c| c.turns.len() as f64).sum::<f64>() / corpus.len() as f64;
    let mut with_sugg = 0; let mut with_two = 0;
    let mut accepts = [0.0f64; 8]; let mut rejects = [0.0f64; 8];
    for conv in &labeled.conversations {
        let events = conv.turns.iter().filter(|t| matches!(t.label, Some(TurnLabel::Accept(_)) | Some(TurnLabel::Reject(_)))).count();
        if events >= 1 { with_sugg += 1; }
        if events >= 2 { with_two += 1; }
        for t in &conv.turns {
            match t.label {
                Some(TurnLabel::Accept(s)) => accepts[s.code()] += 1.0,
                Some(TurnLabel::Reject(s)) => rejects[s.code()] += 1.0,
                _ => {}
            }
        }
    }
    println!("mean_len {mean_len:.2}  with_sugg {:.3} with_two {:.3}", with_sugg as f64 / 10_000.0, with_two as f64 / 10_000.0);
    let total: f64 = accepts.iter().sum();
    print!("engagement:");
    for (i, a) in accepts.iter().enumerate() { print!(" {}:{:.3}", i, a / total); }
    println!();
    let tvd: f64 = accepts.iter().zip(&config.target_topic_distribution).map(|(c, t)| (c / total - t).abs()).sum::<f64>() / 2.0;
    println!("tvd {tvd:.4}");
    print!("acceptance rate by topic:");
    for i in 0..8 { print!(" {}:{:.3}", i, accepts[i] / (accepts[i] + rejects[i])); }
    println!();
    let total_events: f64 = accepts.iter().sum::<f64>() + rejects.iter().sum::<f64>();
    println!("overall acceptance {:.3}, events/conv {:.2}", accepts.iter().sum::<f64>() / total_events, total_events / 10_000.0);
}
