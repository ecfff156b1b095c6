const UNITS: [&str; 20] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
    "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen",
];
const TENS: [&str; 8] = ["twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety"];

#[derive(Debug, PartialEq)]
enum Tok {
    Digits(String),
    Word(String),
}

fn lex(text: &str) -> Vec<Tok> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_ascii_digit() {
            let mut s = String::new();
            while let Some(&d) = chars.peek().filter(|d| d.is_ascii_digit()) {
                s.push(d);
                chars.next();
            }
            out.push(Tok::Digits(s));
        } else if c.is_alphabetic() {
            let mut s = String::new();
            while let Some(&d) = chars.peek().filter(|d| d.is_alphabetic()) {
                s.extend(d.to_lowercase());
                chars.next();
            }
            out.push(Tok::Word(s));
        } else {
            chars.next();
        }
    }
    out
}

fn unit(w: &str) -> Option<u64> {
    UNITS.iter().position(|u| *u == w).map(|i| i as u64)
}

fn tens(w: &str) -> Option<u64> {
    TENS.iter().position(|t| *t == w).map(|i| 20 + 10 * i as u64)
}

/// Integers mentioned in `text`, in order: digit runs and English number
/// words up to ninety-nine. A tens word directly followed by a unit word
/// ("twenty-one", "twenty one") forms one number. Digit runs too long for
/// `u64` are skipped.
pub fn extract_numbers(text: &str) -> Vec<u64> {
    let toks = lex(text);
    let mut out = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        match &toks[i] {
            Tok::Digits(s) => {
                if let Ok(v) = s.parse::<u64>() {
                    out.push(v);
                }
            }
            Tok::Word(w) => {
                if let Some(t) = tens(w) {
                    match toks.get(i + 1) {
                        Some(Tok::Word(n)) if unit(n).is_some_and(|u| (1..10).contains(&u)) => {
                            out.push(t + unit(n).unwrap_or(0));
                            i += 1;
                        }
                        _ => out.push(t),
                    }
                } else if let Some(u) = unit(w) {
                    out.push(u);
                }
            }
        }
        i += 1;
    }
    out
}
