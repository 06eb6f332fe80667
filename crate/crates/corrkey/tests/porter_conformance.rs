//! Conformance of the stemmer against the bundled reference word/stem list
//! (tests/data/porter_fixture.tsv), generated with a direct transcription of
//! the original algorithm's reference implementation.

use corrkey::metrics::stem;

#[test]
fn fixture_words_all_stem_identically() {
    let fixture = include_str!("data/porter_fixture.tsv");
    let mut checked = 0usize;
    let mut failures = Vec::new();
    for line in fixture.lines() {
        let Some((word, want)) = line.split_once('\t') else {
            continue;
        };
        let got = stem(word);
        if got != want {
            failures.push(format!("{} -> {} (want {})", word, got, want));
        }
        checked += 1;
    }
    assert!(checked > 1500, "fixture unexpectedly small: {}", checked);
    assert!(
        failures.is_empty(),
        "{} of {} words diverge:\n{}",
        failures.len(),
        checked,
        failures.join("\n")
    );
}

#[test]
fn stemming_is_idempotent_on_fixture_outputs() {
    let fixture = include_str!("data/porter_fixture.tsv");
    let mut non_idempotent = 0usize;
    for line in fixture.lines() {
        if let Some((_, s)) = line.split_once('\t') {
            if stem(s) != s {
                non_idempotent += 1;
            }
        }
    }
    // stemmed forms are mostly fixed points; a small tail of stems (such as
    // those ending in a new suffix exposed by truncation) legitimately moves
    // again, so only guard against gross breakage
    let total = fixture.lines().count();
    assert!(
        non_idempotent < total / 10,
        "{} of {} stems changed again",
        non_idempotent,
        total
    );
}
