//! Light suffix-stripping stemmers used by METEOR's second matching stage.

use crate::corpus::Language;

const MIN_STEM_CHARS: usize = 3;

// longest suffixes first
const EN: &[(&str, &str)] = &[
    ("ational", "ate"),
    ("ization", "ize"),
    ("ingly", ""),
    ("edly", ""),
    ("ness", ""),
    ("ment", ""),
    ("ings", ""),
    ("ies", "y"),
    ("ied", "y"),
    ("ing", ""),
    ("ly", ""),
    ("es", ""),
    ("ed", ""),
    ("s", ""),
];

const ES: &[(&str, &str)] = &[
    ("amientos", ""),
    ("imientos", ""),
    ("amiento", ""),
    ("imiento", ""),
    ("aciones", ""),
    ("uciones", ""),
    ("idades", ""),
    ("ación", ""),
    ("ución", ""),
    ("mente", ""),
    ("ables", ""),
    ("ibles", ""),
    ("istas", ""),
    ("idad", ""),
    ("able", ""),
    ("ible", ""),
    ("ista", ""),
    ("osos", ""),
    ("osas", ""),
    ("oso", ""),
    ("osa", ""),
    ("es", ""),
    ("os", ""),
    ("as", ""),
    ("a", ""),
    ("o", ""),
    ("e", ""),
    ("s", ""),
];

const FR: &[(&str, &str)] = &[
    ("issements", ""),
    ("issement", ""),
    ("ations", ""),
    ("ements", ""),
    ("ation", ""),
    ("ement", ""),
    ("ments", ""),
    ("euses", ""),
    ("ment", ""),
    ("euse", ""),
    ("ités", ""),
    ("ives", ""),
    ("eux", ""),
    ("ité", ""),
    ("ive", ""),
    ("ifs", ""),
    ("if", ""),
    ("es", ""),
    ("e", ""),
    ("s", ""),
];

const DA: &[(&str, &str)] = &[
    ("erendes", ""),
    ("erende", ""),
    ("hedens", ""),
    ("heden", ""),
    ("heder", ""),
    ("erne", ""),
    ("ende", ""),
    ("ene", ""),
    ("ere", ""),
    ("ens", ""),
    ("ers", ""),
    ("ets", ""),
    ("hed", ""),
    ("en", ""),
    ("er", ""),
    ("es", ""),
    ("et", ""),
    ("e", ""),
    ("s", ""),
];

fn rules(lang: Language) -> &'static [(&'static str, &'static str)] {
    match lang {
        Language::English => EN,
        Language::Spanish => ES,
        Language::French => FR,
        Language::Danish => DA,
    }
}

/// Strips the first matching suffix that leaves at least three characters.
pub fn stem(word: &str, lang: Language) -> String {
    for (suffix, replacement) in rules(lang) {
        if let Some(base) = word.strip_suffix(suffix) {
            if base.chars().count() >= MIN_STEM_CHARS {
                return format!("{base}{replacement}");
            }
        }
    }
    word.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn english() {
        assert_eq!(stem("effusions", Language::English), "effusion");
        assert_eq!(stem("opacities", Language::English), "opacity");
        assert_eq!(stem("enlarged", Language::English), "enlarg");
        assert_eq!(stem("enlargement", Language::English), "enlarge");
        assert_eq!(stem("is", Language::English), "is");
    }

    #[test]
    fn other_languages() {
        assert_eq!(stem("derrames", Language::Spanish), stem("derrame", Language::Spanish));
        assert_eq!(stem("pleurales", Language::Spanish), "pleural");
        assert_eq!(stem("épanchements", Language::French), "épanch");
        assert_eq!(stem("lungerne", Language::Danish), "lung");
        assert_eq!(stem("lunger", Language::Danish), "lung");
    }
}
