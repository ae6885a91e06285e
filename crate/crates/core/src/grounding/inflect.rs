//! Rule-based English verb inflection for caption templates.

const IRREGULAR_PAST_PARTICIPLE: &[(&str, &str)] = &[
    ("be", "been"),
    ("bite", "bitten"),
    ("blow", "blown"),
    ("break", "broken"),
    ("bring", "brought"),
    ("build", "built"),
    ("buy", "bought"),
    ("catch", "caught"),
    ("choose", "chosen"),
    ("cut", "cut"),
    ("dig", "dug"),
    ("do", "done"),
    ("draw", "drawn"),
    ("drink", "drunk"),
    ("drive", "driven"),
    ("eat", "eaten"),
    ("feed", "fed"),
    ("fly", "flown"),
    ("get", "gotten"),
    ("give", "given"),
    ("grow", "grown"),
    ("hang", "hung"),
    ("have", "had"),
    ("hit", "hit"),
    ("hold", "held"),
    ("keep", "kept"),
    ("lay", "laid"),
    ("lead", "led"),
    ("make", "made"),
    ("put", "put"),
    ("read", "read"),
    ("ride", "ridden"),
    ("run", "run"),
    ("see", "seen"),
    ("sell", "sold"),
    ("set", "set"),
    ("shake", "shaken"),
    ("shoot", "shot"),
    ("sit", "sat"),
    ("sling", "slung"),
    ("spin", "spun"),
    ("stand", "stood"),
    ("stick", "stuck"),
    ("sweep", "swept"),
    ("swing", "swung"),
    ("take", "taken"),
    ("teach", "taught"),
    ("tear", "torn"),
    ("throw", "thrown"),
    ("wear", "worn"),
    ("win", "won"),
    ("write", "written"),
];

const IRREGULAR_PRESENT_PARTICIPLE: &[(&str, &str)] = &[
    ("be", "being"),
    ("panic", "panicking"),
    ("picnic", "picnicking"),
    ("singe", "singeing"),
];

fn is_vowel(c: u8) -> bool {
    matches!(c, b'a' | b'e' | b'i' | b'o' | b'u')
}

fn vowel_groups(w: &[u8]) -> usize {
    let mut n = 0;
    let mut prev = false;
    for &c in w {
        let v = is_vowel(c);
        if v && !prev {
            n += 1;
        }
        prev = v;
    }
    n
}

/// Monosyllabic consonant-vowel-consonant endings double the final consonant
/// (sit, stop, swim), except after w, x, y.
fn doubles_final(w: &[u8]) -> bool {
    let n = w.len();
    if n < 3 || vowel_groups(w) != 1 {
        return false;
    }
    let (a, b, c) = (w[n - 3], w[n - 2], w[n - 1]);
    !is_vowel(a) && is_vowel(b) && !is_vowel(c) && !matches!(c, b'w' | b'x' | b'y')
}

fn lookup(table: &[(&str, &'static str)], verb: &str) -> Option<&'static str> {
    table.iter().find(|(v, _)| *v == verb).map(|(_, f)| *f)
}

/// "ride" -> "riding", "sit" -> "sitting", "lie" -> "lying".
pub fn present_participle(verb: &str) -> String {
    if let Some(f) = lookup(IRREGULAR_PRESENT_PARTICIPLE, verb) {
        return f.to_string();
    }
    let w = verb.as_bytes();
    if let Some(stem) = verb.strip_suffix("ie") {
        return format!("{stem}ying");
    }
    if w.len() > 2
        && verb.ends_with('e')
        && !(verb.ends_with("ee") || verb.ends_with("oe") || verb.ends_with("ye"))
    {
        return format!("{}ing", &verb[..verb.len() - 1]);
    }
    if doubles_final(w) {
        return format!("{verb}{}ing", w[w.len() - 1] as char);
    }
    format!("{verb}ing")
}

/// "ride" -> "ridden", "kick" -> "kicked", "carry" -> "carried".
pub fn past_participle(verb: &str) -> String {
    if let Some(f) = lookup(IRREGULAR_PAST_PARTICIPLE, verb) {
        return f.to_string();
    }
    let w = verb.as_bytes();
    if verb.ends_with('e') {
        return format!("{verb}d");
    }
    if w.len() > 1 && w[w.len() - 1] == b'y' && !is_vowel(w[w.len() - 2]) {
        return format!("{}ied", &verb[..verb.len() - 1]);
    }
    if doubles_final(w) {
        return format!("{verb}{}ed", w[w.len() - 1] as char);
    }
    format!("{verb}ed")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ing_forms() {
        for (v, f) in [
            ("ride", "riding"),
            ("kick", "kicking"),
            ("eat", "eating"),
            ("sit", "sitting"),
            ("lie", "lying"),
            ("see", "seeing"),
            ("ski", "skiing"),
            ("surf", "surfing"),
            ("carry", "carrying"),
            ("open", "opening"),
            ("throw", "throwing"),
            ("fix", "fixing"),
            ("be", "being"),
        ] {
            assert_eq!(present_participle(v), f, "{v}");
        }
    }

    #[test]
    fn ed_forms() {
        for (v, f) in [
            ("ride", "ridden"),
            ("kick", "kicked"),
            ("eat", "eaten"),
            ("carry", "carried"),
            ("smile", "smiled"),
            ("stop", "stopped"),
            ("play", "played"),
            ("hold", "held"),
            ("ski", "skied"),
            ("open", "opened"),
        ] {
            assert_eq!(past_participle(v), f, "{v}");
        }
    }
}
