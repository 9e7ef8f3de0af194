use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tokenfix::corpus::ToyGenerator;
use tokenfix::env::{Action, Env, EnvConfig};
use tokenfix::net::{bootstrap_returns, forward, ModelParams, NetShape};
use tokenfix::oracle::Oracle;
use tokenfix::token::{lex, render, TokenSeq};
use tokenfix::vocab::Vocabulary;

const FRAGMENTS: &[&str] = &[
    "int", "x", "y1", "_t", "main", "printf", "(", ")", "{", "}", ";", ",", ".", "=", "==", "+",
    "++", "-", "->", "<<=", "<", "&&", "!", "0", "42", "3.5", ".5", "1e9", "0x1f", "\"s t\"",
    "'c'", "'\\n'", "#include <stdio.h>", "/* c */", "// c", "@", "$", "[", "]", "?", ":",
];

fn source() -> impl Strategy<Value = String> {
    let piece = prop_oneof![
        8 => proptest::sample::select(FRAGMENTS).prop_map(str::to_string),
        1 => Just("\n".to_string()),
        1 => "[ -~]{0,6}",
    ];
    proptest::collection::vec((piece, proptest::bool::ANY), 0..40).prop_map(|parts| {
        parts
            .into_iter()
            .map(|(p, space)| if space { p + " " } else { p })
            .collect()
    })
}

fn same_tokens(a: &TokenSeq, b: &TokenSeq) -> bool {
    a.len() == b.len()
        && a.tokens().iter().zip(b.tokens()).all(|(x, y)| x.lexeme == y.lexeme && x.kind == y.kind && x.line == y.line)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn rendering_then_lexing_is_identity(src in source()) {
        let seq = lex(&src);
        let again = lex(&render(&seq));
        prop_assert!(same_tokens(&seq, &again), "{:?} vs {:?}", render(&seq), render(&again));
    }

    #[test]
    fn cursor_marker_is_the_only_addition(src in source(), pick in any::<prop::sample::Index>()) {
        let seq = lex(&src);
        prop_assume!(!seq.is_empty());
        let vocab = Vocabulary::builtin();
        let cursor = pick.index(seq.len());
        let mut ids = vocab.encode_state(&seq, cursor).unwrap();
        let marker = vocab.specials().cursor;
        prop_assert_eq!(ids.iter().filter(|&&i| i == marker).count(), 1);
        ids.retain(|&i| i != marker);
        prop_assert_eq!(ids, vocab.normalize(&seq));
    }

    #[test]
    fn policy_is_a_distribution(ids in proptest::collection::vec(0u32..40, 1..30), seed in any::<u64>()) {
        let shape = NetShape { vocab: 40, embed: 6, hidden: 8, actions: 14 };
        let params = ModelParams::<f64>::init(shape, &mut ChaCha8Rng::seed_from_u64(seed));
        let fwd = forward(&params, &ids).unwrap();
        let sum: f64 = fwd.policy().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(fwd.policy().iter().all(|&p| p > 0.0));
    }

    #[test]
    fn returns_satisfy_the_recursion(
        rewards in proptest::collection::vec(-1.0f64..1.0, 1..30),
        bootstrap in -5.0f64..5.0,
        gamma in 0.0f64..=1.0,
    ) {
        let r = bootstrap_returns(&rewards, bootstrap, gamma);
        let next = |t: usize| if t + 1 < r.len() { r[t + 1] } else { bootstrap };
        for t in 0..r.len() {
            prop_assert!((r[t] - (rewards[t] + gamma * next(t))).abs() < 1e-12);
        }
    }

    #[test]
    fn environment_laws_hold(problem in 0usize..50, actions in proptest::collection::vec(0usize..14, 1..120)) {
        let rec = &ToyGenerator::new(3).seeded_corpus(problem..problem + 1, 1, 1..=2).unwrap()[0];
        let oracle = Oracle::surrogate();
        let env = Env::new(&oracle, EnvConfig::default());
        let mut state = env.reset(&lex(&rec.source)).unwrap();
        for a in actions.into_iter().map(|i| Action::ALL[i]) {
            if state.is_terminal() {
                break;
            }
            let before = state.clone();
            let res = env.step(&mut state, a).unwrap();
            if a.is_navigation() {
                prop_assert_eq!(&state.seq, &before.seq);
            } else if res.edit_accepted == Some(false) {
                prop_assert_eq!(render(&state.seq), render(&before.seq));
                prop_assert_eq!(state.cursor, before.cursor);
            }
            prop_assert!(state.error_count <= before.error_count);
            prop_assert!(state.steps_taken <= 100);
        }
    }
}
