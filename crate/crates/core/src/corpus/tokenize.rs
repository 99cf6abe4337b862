//! A small Moses-style tokenizer.
//!
//! Rules, applied to each whitespace-separated chunk of the lowercased text:
//!
//! 1. Leading and trailing punctuation characters become separate tokens; a
//!    run of periods (`...`) stays one token.
//! 2. French elision: `x'word` where `x` is one of the elided articles or
//!    pronouns (`l d j m n s t c qu jusqu lorsqu puisqu`) splits into `x'` and
//!    `word`.
//! 3. English clitics: `n't`, `'s`, `'re`, `'ve`, `'ll`, `'m`, `'d` split off
//!    the end of a word.
//! 4. Anything else, including inner hyphens and periods (`e-mail`, `3.5`), is
//!    left attached.

const PUNCT: &[char] = &[
    '.', ',', '!', '?', ';', ':', '"', '(', ')', '[', ']', '{', '}', '«', '»', '“', '”', '…', '\'', '’',
];

const ELISIONS: &[&str] = &["l", "d", "j", "m", "n", "s", "t", "c", "qu", "jusqu", "lorsqu", "puisqu"];

const CLITICS: &[&str] = &["n't", "'s", "'re", "'ve", "'ll", "'m", "'d"];

pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase().replace('’', "'");
    let mut out = Vec::new();
    for chunk in lower.split_whitespace() {
        split_chunk(chunk, &mut out);
    }
    out
}

fn is_punct(c: char) -> bool {
    PUNCT.contains(&c)
}

fn split_chunk(chunk: &str, out: &mut Vec<String>) {
    let chars: Vec<char> = chunk.chars().collect();
    let mut start = 0;
    while start < chars.len() && is_punct(chars[start]) {
        out.push(chars[start].to_string());
        start += 1;
    }
    let mut end = chars.len();
    let mut trailing = Vec::new();
    while end > start && is_punct(chars[end - 1]) {
        // keep an elided article such as "l'" intact when it is the whole core
        if chars[end - 1] == '\'' && end - 1 > start && is_elision(&chars[start..end - 1]) {
            break;
        }
        let c = chars[end - 1];
        if c == '.' && trailing.last().is_some_and(|t: &String| t.chars().all(|x| x == '.')) {
            let mut run = trailing.pop().unwrap();
            run.insert(0, '.');
            trailing.push(run);
        } else {
            trailing.push(c.to_string());
        }
        end -= 1;
    }
    if start < end {
        let core: String = chars[start..end].iter().collect();
        split_core(&core, out);
    }
    out.extend(trailing.into_iter().rev());
}

fn is_elision(prefix: &[char]) -> bool {
    let p: String = prefix.iter().collect();
    ELISIONS.contains(&p.as_str())
}

fn split_core(core: &str, out: &mut Vec<String>) {
    if let Some(pos) = core.find('\'') {
        let (head, tail) = core.split_at(pos);
        let rest = &tail[1..];
        if ELISIONS.contains(&head) && !rest.is_empty() {
            out.push(format!("{head}'"));
            split_core(rest, out);
            return;
        }
    }
    for clitic in CLITICS {
        if let Some(stem) = core.strip_suffix(clitic) {
            if !stem.is_empty() {
                out.push(stem.to_owned());
                out.push((*clitic).to_owned());
                return;
            }
        }
    }
    out.push(core.to_owned());
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn sentence_with_final_period() {
        assert_eq!(toks("The debate is closed."), vec!["the", "debate", "is", "closed", "."]);
    }

    #[test]
    fn empty_text() {
        assert!(toks("").is_empty());
        assert!(toks("   \t ").is_empty());
    }

    #[test]
    fn french_elision() {
        assert_eq!(toks("l'union"), vec!["l'", "union"]);
        assert_eq!(toks("Qu'il vienne, jusqu'à demain."), vec!["qu'", "il", "vienne", ",", "jusqu'", "à", "demain", "."]);
        assert_eq!(toks("l'"), vec!["l'"]);
    }

    #[test]
    fn english_clitics() {
        assert_eq!(toks("It's John's, don't"), vec!["it", "'s", "john", "'s", ",", "do", "n't"]);
    }

    #[test]
    fn punctuation_runs_and_inner_dots() {
        assert_eq!(toks("(wait...) u.s. 3.5!"), vec!["(", "wait", "...", ")", "u.s", ".", "3.5", "!"]);
    }
}
