//! A small synthetic world (founders of invented towns) for offline runs,
//! examples and tests.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::{Corpus, Document, QaItem};

const FIRST: &[&str] = &[
    "Alder", "Mira", "Tobin", "Wren", "Corin", "Ilsa", "Bram", "Oona", "Dace", "Fenna", "Garrick", "Hesper", "Ivo", "Juno", "Kellan",
    "Liora", "Marek", "Nessa", "Orrin", "Petra",
];
const ONSET: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWEL: &[&str] = &["a", "e", "i", "o", "u"];
const TOWN_SUFFIX: &[&str] = &["water", "ford", "haven", "mere", "stead", "holm"];
const PRODUCTS: &[&str] = &["pottery", "cider", "lacework", "glassware", "cheese", "timber", "wool", "ironwork"];
const WEEKDAYS: &[&str] = &["Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday"];
const ANIMALS: &[(&str, &str, &str)] = &[
    ("marsh heron", "wetland", "small fish"),
    ("snow hare", "alpine", "shrubs"),
    ("ridge lizard", "desert", "beetles"),
    ("river otter", "riverine", "crayfish"),
    ("pine marten", "forested", "voles"),
    ("sand grouse", "arid", "seeds"),
];

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

fn syllables<R: Rng>(rng: &mut R, n: usize) -> String {
    (0..n).map(|_| format!("{}{}", ONSET.choose(rng).unwrap(), VOWEL.choose(rng).unwrap())).collect()
}

/// Questions plus the corpus that answers them.
#[derive(Debug, Clone)]
pub struct ToyWorld {
    pub questions: Vec<QaItem>,
    pub corpus: Corpus,
}

/// Builds `n` founder questions with 1-3 answer groups each.
///
/// Each founder gets two golden passages (full name, then initial plus
/// surname); questions with several founders get a passage naming two of
/// them. Every town also gets three answer-free passages about itself, and
/// the corpus carries unrelated wildlife passages.
pub fn generate(n: usize, seed: u64) -> ToyWorld {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = std::collections::HashSet::new();
    let mut fresh = |rng: &mut ChaCha8Rng, make: &dyn Fn(&mut ChaCha8Rng) -> String| loop {
        let s = make(rng);
        if used.insert(s.to_lowercase()) {
            break s;
        }
    };
    let mut questions = Vec::with_capacity(n);
    let mut docs = Vec::new();
    for q in 0..n {
        let town = fresh(&mut rng, &|r| format!("{}{}", capitalize(&syllables(r, 2)), TOWN_SUFFIX.choose(r).unwrap()));
        let founders: usize = if q % 5 == 0 { 1 } else { rng.random_range(2..=3) };
        let mut names = Vec::new();
        for _ in 0..founders {
            let surname = fresh(&mut rng, &|r| format!("{}n", capitalize(&syllables(r, 3))));
            let first = *FIRST.choose(&mut rng).unwrap();
            names.push((first, surname));
        }
        let qid = format!("toy{q:03}");
        let groups: Vec<Vec<String>> = names
            .iter()
            .map(|(f, s)| vec![format!("{f} {s}"), format!("{}. {s}", &f[..1])])
            .collect();
        let question = if founders == 1 {
            format!("Who founded the town of {town}?")
        } else {
            format!("Who were the founders of the town of {town}?")
        };
        questions.push(QaItem {
            qid: qid.clone(),
            question,
            answer_groups: groups,
        });

        let mut local = Vec::new();
        for (j, (f, s)) in names.iter().enumerate() {
            let year = rng.random_range(1700..1900);
            local.push(Document::new(
                format!("{qid}-g{j}a"),
                format!("{f} {s}"),
                format!("{f} {s} founded {town} in {year}. {f} {s} later served as its first magistrate."),
            ));
            local.push(Document::new(
                format!("{qid}-g{j}b"),
                town.clone(),
                format!("{}. {s} helped establish {town} beside the river. The early settlement traded grain.", &f[..1]),
            ));
        }
        if founders >= 2 {
            let (f0, s0) = &names[0];
            let (f1, s1) = &names[1];
            local.push(Document::new(
                format!("{qid}-joint"),
                format!("History of {town}"),
                format!("{f0} {s0} and {f1} {s1} were among the first settlers of {town}. They built the old mill."),
            ));
        }
        for r in 0..3 {
            let product = PRODUCTS.choose(&mut rng).unwrap();
            let day = WEEKDAYS.choose(&mut rng).unwrap();
            let text = match r {
                0 => format!("{town} is known for its {product}. The {town} market opens every {day}."),
                1 => format!("Visitors to {town} often praise the {product} fair. The founders of {town} are honoured each {day}."),
                _ => format!("The town of {town} lies near a quiet valley. Its council meets every {day}."),
            };
            local.push(Document::new(format!("{qid}-r{r}"), town.clone(), text));
        }
        docs.extend(local);
    }
    for (i, (animal, habitat, food)) in ANIMALS.iter().enumerate() {
        docs.push(Document::new(
            format!("wild-{i}"),
            capitalize(animal),
            format!("The {animal} lives in {habitat} regions. It feeds mainly on {food}."),
        ));
    }
    docs.shuffle(&mut rng);
    ToyWorld {
        questions,
        corpus: Corpus::from_documents(docs).expect("toy ids are unique"),
    }
}
