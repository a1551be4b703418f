//! Writes the bundled toy corpus to `data/toy/` (or the directory given as
//! the first argument): a labelled dataset, a segmentation lexicon, small
//! pretrained vectors and an emoticon table.
//!
//! ```text
//! cargo run -p vihsd-core --example make_toy -- data/toy
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unicode_normalization::UnicodeNormalization;
use vihsd_core::eval::save_dataset;
use vihsd_core::{ClassLabel, LabeledComment};

const SUBJECTS: &[&str] = &[
    "mình",
    "bạn",
    "anh ấy",
    "chị ấy",
    "cô giáo",
    "sinh viên",
    "người dân",
    "thằng bé",
    "đội bóng",
    "ca sĩ",
];
const TOPICS: &[&str] = &[
    "bài hát",
    "bộ phim",
    "trận đấu",
    "món ăn",
    "quán cà phê",
    "chuyến đi",
    "cuốn sách",
    "hoà bình",
    "thời tiết",
    "điện thoại",
];
const CLEAN_WORDS: &[&str] = &[
    "thích",
    "hay",
    "đẹp",
    "ngon",
    "vui",
    "tuyệt",
    "cảm ơn",
    "ủng hộ",
    "chúc mừng",
    "dễ thương",
    "hôm nay",
    "quá",
];
const OFFENSIVE_WORDS: &[&str] = &["vl", "vãi", "đm", "ngu", "điên", "dở hơi", "vcl", "láo"];
const HATE_WORDS: &[&str] = &["đồ chó", "cút", "khốn nạn", "súc vật", "lũ mọi", "giết", "bọn rác"];
const EMOTICONS: &[&str] = &[":)", ":(", ":D", "=))", "<3", "-_-", ":v"];
const LEXICON: &[&str] = &[
    "anh ấy",
    "chị ấy",
    "cô giáo",
    "sinh viên",
    "người dân",
    "thằng bé",
    "đội bóng",
    "ca sĩ",
    "bài hát",
    "bộ phim",
    "trận đấu",
    "món ăn",
    "quán cà phê",
    "chuyến đi",
    "cuốn sách",
    "hoà bình",
    "thời tiết",
    "điện thoại",
    "cảm ơn",
    "ủng hộ",
    "chúc mừng",
    "dễ thương",
    "hôm nay",
    "dở hơi",
    "đồ chó",
    "khốn nạn",
    "súc vật",
    "lũ mọi",
    "bọn rác",
];

fn pick<'a>(rng: &mut ChaCha8Rng, words: &[&'a str]) -> &'a str {
    words.choose(rng).copied().expect("non-empty word list")
}

fn sentence(label: ClassLabel, rng: &mut ChaCha8Rng) -> String {
    let mut words = vec![pick(rng, SUBJECTS)];
    for _ in 0..rng.gen_range(1..=3) {
        let list = if rng.gen_bool(0.5) { TOPICS } else { CLEAN_WORDS };
        words.push(pick(rng, list));
    }
    match label {
        // "vl" doubles as an intensifier in praise
        ClassLabel::Clean if rng.gen_bool(0.08) => words.push("vl"),
        ClassLabel::Clean => {}
        ClassLabel::Offensive => {
            for _ in 0..rng.gen_range(1..=2) {
                let at = rng.gen_range(0..=words.len());
                words.insert(at, pick(rng, OFFENSIVE_WORDS));
            }
        }
        ClassLabel::Hate => {
            let at = rng.gen_range(0..=words.len());
            words.insert(at, pick(rng, HATE_WORDS));
            if rng.gen_bool(0.4) {
                words.push(pick(rng, OFFENSIVE_WORDS));
            }
        }
    }
    words.join(" ")
}

/// Surface noise the cleaning step is meant to undo.
fn add_noise(text: String, rng: &mut ChaCha8Rng) -> String {
    let mut text = text;
    if rng.gen_bool(0.2) {
        text = text.nfd().collect();
    }
    if rng.gen_bool(0.15) {
        text = text.replace("hòa", "hoà").replace("ủy", "uỷ");
    }
    if rng.gen_bool(0.2) {
        text = text.to_uppercase();
    } else if rng.gen_bool(0.3) {
        let mut chars = text.chars();
        if let Some(first) = chars.next() {
            text = first.to_uppercase().chain(chars).collect();
        }
    }
    if rng.gen_bool(0.1) {
        let at = text
            .char_indices()
            .map(|(i, _)| i)
            .nth(rng.gen_range(0..text.chars().count()))
            .unwrap_or(0);
        text.insert(at, '\u{200B}');
    }
    if rng.gen_bool(0.3) {
        text.push_str(["!!!", "...", "?", "!"].choose(rng).expect("non-empty"));
    }
    if rng.gen_bool(0.25) {
        text.push(' ');
        text.push_str(pick(rng, EMOTICONS));
    }
    text
}

fn pretrained(rng: &mut ChaCha8Rng, dim: usize) -> String {
    let groups: [(&[&str], usize); 5] = [
        (SUBJECTS, 0),
        (TOPICS, 0),
        (CLEAN_WORDS, 1),
        (OFFENSIVE_WORDS, 2),
        (HATE_WORDS, 3),
    ];
    let centers: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut words: Vec<(String, usize)> = Vec::new();
    for (list, group) in groups {
        for w in list {
            for syllable in w.split_whitespace() {
                if !words.iter().any(|(x, _)| x == syllable) {
                    words.push((syllable.to_string(), group));
                }
            }
        }
    }
    // leave a few words out so lookups hit the unknown row
    words.retain(|(w, _)| w != "láo" && w != "tuyệt");
    let mut out = format!("{} {dim}\n", words.len());
    for (w, group) in &words {
        out.push_str(w);
        for c in &centers[*group] {
            let _ = write!(out, " {:.5}", c + rng.gen_range(-0.3..0.3));
        }
        out.push('\n');
    }
    out
}

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data/toy".into()));
    fs::create_dir_all(&dir).expect("create output directory");
    let mut rng = ChaCha8Rng::seed_from_u64(2019);

    let counts = [
        (ClassLabel::Clean, 420),
        (ClassLabel::Offensive, 100),
        (ClassLabel::Hate, 80),
    ];
    let mut labels: Vec<ClassLabel> = counts.iter().flat_map(|&(l, n)| std::iter::repeat_n(l, n)).collect();
    labels.shuffle(&mut rng);
    let rows: Vec<LabeledComment> = labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let text = add_noise(sentence(label, &mut rng), &mut rng);
            LabeledComment::new(format!("toy_{i:04}"), text, label)
        })
        .collect();
    save_dataset(&dir.join("toy.tsv"), &rows).expect("write dataset");

    let lexicon: String = LEXICON.iter().map(|w| format!("{w}\n")).collect();
    fs::write(dir.join("lexicon.txt"), lexicon).expect("write lexicon");
    fs::write(dir.join("pretrained.vec"), pretrained(&mut rng, 16)).expect("write vectors");

    let emoticons = "# emoticon<TAB>emoji\n:)\t\u{1F642}\n:(\t\u{1F641}\n:D\t\u{1F600}\n=))\t\u{1F606}\n<3\t\u{2764}\n-_-\t\u{1F611}\n:v\t\u{1F60B}\n";
    fs::write(dir.join("emoticons.txt"), emoticons).expect("write emoticons");
    println!("wrote {} rows to {}", rows.len(), dir.display());
}
