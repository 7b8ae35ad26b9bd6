//! Word-level tokenizer for the closed query/answer language, plus answer
//! canonicalization and explanation scoring.

mod answer;
mod vocab;

pub use answer::{canonicalize_answer, explanation_matches, explanation_score, AnswerKind, CanonicalAnswer};
pub use vocab::{TextError, Vocabulary, ANSWER_LEN, EOS, PAD, QUESTION_LEN, SEPA, SOS};

/// Lowercase, split on whitespace, and split `.` and `,` into their own tokens.
pub fn normalize(text: &str) -> Vec<String> {
    atvc_scene::normalize_words(text)
}

/// Render normalized words as a sentence: punctuation attached, sentences capitalized.
pub fn pretty(words: &[String]) -> String {
    let mut out = String::new();
    let mut capital = true;
    for w in words {
        if w == "." || w == "," {
            out.push_str(w);
            capital = w == ".";
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        if capital {
            let mut c = w.chars();
            if let Some(first) = c.next() {
                out.extend(first.to_uppercase());
                out.push_str(c.as_str());
            }
            capital = false;
        } else {
            out.push_str(w);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pretty_restores_template_text() {
        for s in [
            "No problem.",
            "This action is forbidden. Because you cannot put the sphere under an object, and there is no small gray metal sphere.",
            "Please put the small red rubber cube on top of the large blue metal cylinder.",
        ] {
            assert_eq!(pretty(&normalize(s)), s);
        }
    }
}
