//! Porter stemmer, original 1980 definition: steps 1a through 5b with
//! longest-suffix matching inside each step and the measure condition
//! evaluated on the stem. No later extensions or revisions. Tokens that are
//! not purely ASCII letters (such as the digit placeholder) and words
//! shorter than three letters pass through unchanged.

/// Letter classes: a,e,i,o,u are vowels; y is a vowel exactly when preceded
/// by a consonant.
fn is_consonant(w: &[u8], i: usize) -> bool {
    match w[i] {
        b'a' | b'e' | b'i' | b'o' | b'u' => false,
        b'y' => i == 0 || !is_consonant(w, i - 1),
        _ => true,
    }
}

/// Number of vowel-to-consonant transitions, the `m` of `[C](VC)^m[V]`.
fn measure(w: &[u8]) -> usize {
    let mut m = 0;
    let mut prev_vowel = false;
    for i in 0..w.len() {
        let vowel = !is_consonant(w, i);
        if prev_vowel && !vowel {
            m += 1;
        }
        prev_vowel = vowel;
    }
    m
}

fn has_vowel(w: &[u8]) -> bool {
    (0..w.len()).any(|i| !is_consonant(w, i))
}

fn ends_double_consonant(w: &[u8]) -> bool {
    let n = w.len();
    n >= 2 && w[n - 1] == w[n - 2] && is_consonant(w, n - 1)
}

/// `*o`: stem ends consonant-vowel-consonant and the final consonant is not
/// w, x or y.
fn ends_cvc(w: &[u8]) -> bool {
    let n = w.len();
    n >= 3
        && is_consonant(w, n - 3)
        && !is_consonant(w, n - 2)
        && is_consonant(w, n - 1)
        && !matches!(w[n - 1], b'w' | b'x' | b'y')
}

type Cond = fn(&[u8]) -> bool;

fn m_gt_0(stem: &[u8]) -> bool {
    measure(stem) > 0
}

fn m_gt_1(stem: &[u8]) -> bool {
    measure(stem) > 1
}

fn m_gt_1_ends_s_or_t(stem: &[u8]) -> bool {
    measure(stem) > 1 && matches!(stem.last(), Some(b's') | Some(b't'))
}

/// Apply the first rule whose suffix matches (rules listed longest suffix
/// first); once a suffix matches, a failed condition still ends the step.
fn apply_rules(word: &str, rules: &[(&str, &str, Cond)]) -> String {
    for (suffix, replacement, cond) in rules {
        if let Some(stem) = word.strip_suffix(suffix) {
            if cond(stem.as_bytes()) {
                return format!("{}{}", stem, replacement);
            }
            return word.to_string();
        }
    }
    word.to_string()
}

fn any(_: &[u8]) -> bool {
    true
}

pub(crate) fn step_1a(word: &str) -> String {
    apply_rules(
        word,
        &[
            ("sses", "ss", any),
            ("ies", "i", any),
            ("ss", "ss", any),
            ("s", "", any),
        ],
    )
}

pub(crate) fn step_1b(word: &str) -> String {
    if let Some(stem) = word.strip_suffix("eed") {
        if measure(stem.as_bytes()) > 0 {
            return format!("{}ee", stem);
        }
        return word.to_string();
    }
    let trimmed = if let Some(stem) = word.strip_suffix("ed") {
        if has_vowel(stem.as_bytes()) {
            stem
        } else {
            return word.to_string();
        }
    } else if let Some(stem) = word.strip_suffix("ing") {
        if has_vowel(stem.as_bytes()) {
            stem
        } else {
            return word.to_string();
        }
    } else {
        return word.to_string();
    };

    // cleanup after a removed ed/ing
    let w = trimmed.as_bytes();
    if trimmed.ends_with("at") || trimmed.ends_with("bl") || trimmed.ends_with("iz") {
        format!("{}e", trimmed)
    } else if ends_double_consonant(w) && !matches!(w[w.len() - 1], b'l' | b's' | b'z') {
        trimmed[..trimmed.len() - 1].to_string()
    } else if measure(w) == 1 && ends_cvc(w) {
        format!("{}e", trimmed)
    } else {
        trimmed.to_string()
    }
}

pub(crate) fn step_1c(word: &str) -> String {
    if let Some(stem) = word.strip_suffix('y') {
        if has_vowel(stem.as_bytes()) {
            return format!("{}i", stem);
        }
    }
    word.to_string()
}

pub(crate) fn step_2(word: &str) -> String {
    apply_rules(
        word,
        &[
            ("ational", "ate", m_gt_0),
            ("ization", "ize", m_gt_0),
            ("iveness", "ive", m_gt_0),
            ("fulness", "ful", m_gt_0),
            ("ousness", "ous", m_gt_0),
            ("tional", "tion", m_gt_0),
            ("biliti", "ble", m_gt_0),
            ("entli", "ent", m_gt_0),
            ("ousli", "ous", m_gt_0),
            ("ation", "ate", m_gt_0),
            ("alism", "al", m_gt_0),
            ("aliti", "al", m_gt_0),
            ("iviti", "ive", m_gt_0),
            ("enci", "ence", m_gt_0),
            ("anci", "ance", m_gt_0),
            ("izer", "ize", m_gt_0),
            ("abli", "able", m_gt_0),
            ("alli", "al", m_gt_0),
            ("ator", "ate", m_gt_0),
            ("eli", "e", m_gt_0),
        ],
    )
}

pub(crate) fn step_3(word: &str) -> String {
    apply_rules(
        word,
        &[
            ("icate", "ic", m_gt_0),
            ("ative", "", m_gt_0),
            ("alize", "al", m_gt_0),
            ("iciti", "ic", m_gt_0),
            ("ical", "ic", m_gt_0),
            ("ness", "", m_gt_0),
            ("ful", "", m_gt_0),
        ],
    )
}

pub(crate) fn step_4(word: &str) -> String {
    apply_rules(
        word,
        &[
            ("ement", "", m_gt_1),
            ("ance", "", m_gt_1),
            ("ence", "", m_gt_1),
            ("able", "", m_gt_1),
            ("ible", "", m_gt_1),
            ("ment", "", m_gt_1),
            ("ant", "", m_gt_1),
            ("ent", "", m_gt_1),
            ("ion", "", m_gt_1_ends_s_or_t),
            ("ism", "", m_gt_1),
            ("ate", "", m_gt_1),
            ("iti", "", m_gt_1),
            ("ous", "", m_gt_1),
            ("ive", "", m_gt_1),
            ("ize", "", m_gt_1),
            ("al", "", m_gt_1),
            ("er", "", m_gt_1),
            ("ic", "", m_gt_1),
            ("ou", "", m_gt_1),
        ],
    )
}

pub(crate) fn step_5a(word: &str) -> String {
    if let Some(stem) = word.strip_suffix('e') {
        let w = stem.as_bytes();
        let m = measure(w);
        if m > 1 || (m == 1 && !ends_cvc(w)) {
            return stem.to_string();
        }
    }
    word.to_string()
}

pub(crate) fn step_5b(word: &str) -> String {
    let w = word.as_bytes();
    if measure(w) > 1 && ends_double_consonant(w) && w[w.len() - 1] == b'l' {
        return word[..word.len() - 1].to_string();
    }
    word.to_string()
}

/// Stem one lowercase token. Non-alphabetic tokens pass through unchanged.
pub fn stem(token: &str) -> String {
    if token.len() < 3 || !token.bytes().all(|b| b.is_ascii_lowercase()) {
        return token.to_string();
    }
    let w = step_1a(token);
    let w = step_1b(&w);
    let w = step_1c(&w);
    let w = step_2(&w);
    let w = step_3(&w);
    let w = step_4(&w);
    let w = step_5a(&w);
    step_5b(&w)
}
