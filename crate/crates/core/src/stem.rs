//! Name normalization shared by saplings, tags and reference taxonomies.

use std::cell::RefCell;

use rust_stemmers::{Algorithm, Stemmer};

thread_local! {
    static STEMMER: RefCell<Stemmer> = RefCell::new(Stemmer::create(Algorithm::English));
}

// Snowball converges in at most a couple of passes; the cap guards pathological input.
const MAX_PASSES: usize = 8;

/// Lowercase, trim, drop punctuation and stem every word.
///
/// Each word is stemmed repeatedly until it stops changing, so the result is a
/// fixed point: `stem_name(&stem_name(x)) == stem_name(x)`. Empty or
/// punctuation-only input yields an empty string.
pub fn stem_name(raw: &str) -> String {
    let cleaned: String = raw
        .chars()
        .map(|c| {
            if c.is_alphanumeric() {
                c.to_lowercase().next().unwrap_or(c)
            } else if c.is_whitespace() {
                ' '
            } else {
                // "N. America" and "pet-birds" keep their word boundaries
                if matches!(c, '-' | '_' | '/' | '&' | '+') {
                    ' '
                } else {
                    '\0'
                }
            }
        })
        .filter(|&c| c != '\0')
        .collect();

    STEMMER.with(|s| {
        let stemmer = s.borrow();
        cleaned
            .split_whitespace()
            .map(|word| {
                let mut current = word.to_string();
                for _ in 0..MAX_PASSES {
                    let next = stemmer.stem(&current).into_owned();
                    if next == current {
                        break;
                    }
                    current = next;
                }
                current
            })
            .filter(|w| !w.is_empty())
            .collect::<Vec<_>>()
            .join(" ")
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn table_row_labels() {
        assert_eq!(stem_name("Animals"), "anim");
        assert_eq!(stem_name("countries"), "countri");
        assert_eq!(stem_name("bird"), "bird");
        assert_eq!(stem_name("Europe"), "europ");
        assert_eq!(stem_name("Reptiles"), "reptil");
        assert_eq!(stem_name("Cities"), "citi");
        assert_eq!(stem_name("Vertebrates"), "vertebr");
    }

    #[test]
    fn normalizes_case_space_and_punctuation() {
        assert_eq!(stem_name("  Birds!! "), "bird");
        assert_eq!(stem_name("N. America"), "n america");
        assert_eq!(stem_name("pet-birds"), "pet bird");
        assert_eq!(stem_name("..."), "");
        assert_eq!(stem_name(""), "");
    }

    #[test]
    fn non_idempotent_snowball_case_reaches_fixed_point() {
        let once = stem_name("agreed");
        assert_eq!(stem_name(&once), once);
    }

    proptest! {
        #[test]
        fn idempotent(raw in "[A-Za-z .,'-]{0,30}") {
            let once = stem_name(&raw);
            prop_assert_eq!(stem_name(&once), once.clone());
            prop_assert_eq!(once.trim(), once.as_str());
            prop_assert_eq!(once.to_lowercase(), once);
        }
    }
}
