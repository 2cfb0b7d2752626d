//! Dataset schema, tokenization, span grouping, splitting and the templated
//! synthetic corpus.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Characters split off the edges of a whitespace-delimited chunk.
const DETACHED_PUNCTUATION: &[char] = &[',', '.', ':', ';', '%', '\'', '"', '(', ')'];

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub index: usize,
}

/// Per-token label. Serialized as `"X"`, `"Y"` and `"O"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntityTag {
    X,
    Y,
    None,
}

impl EntityTag {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityTag::X => "X",
            EntityTag::Y => "Y",
            EntityTag::None => "O",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "X" => Some(EntityTag::X),
            "Y" => Some(EntityTag::Y),
            "O" => Some(EntityTag::None),
            _ => None,
        }
    }

    pub fn kind(self) -> Option<EntityKind> {
        match self {
            EntityTag::X => Some(EntityKind::X),
            EntityTag::Y => Some(EntityKind::Y),
            EntityTag::None => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityKind {
    X,
    Y,
}

impl EntityKind {
    pub fn tag(self) -> EntityTag {
        match self {
            EntityKind::X => EntityTag::X,
            EntityKind::Y => EntityTag::Y,
        }
    }
}

/// A contiguous run of tokens sharing one entity tag. `end` is inclusive.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntitySpan {
    pub kind: EntityKind,
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

impl EntitySpan {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChartType {
    Bar,
    Pie,
    Line,
}

impl ChartType {
    pub fn as_str(self) -> &'static str {
        match self {
            ChartType::Bar => "bar",
            ChartType::Pie => "pie",
            ChartType::Line => "line",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bar" => Some(ChartType::Bar),
            "pie" => Some(ChartType::Pie),
            "line" => Some(ChartType::Line),
            _ => None,
        }
    }
}

impl fmt::Display for ChartType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One labeled text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub tokens: Vec<Token>,
    pub tags: Vec<EntityTag>,
    /// `(x-span ordinal, y-span ordinal)` pairs, ordinals counted per kind in
    /// order of appearance.
    pub mapping: Vec<(usize, usize)>,
    pub chart_types: BTreeSet<ChartType>,
}

impl Sample {
    pub fn texts(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }

    pub fn spans(&self) -> Vec<EntitySpan> {
        spans_from_tags(&self.tokens, &self.tags)
    }

    /// Spans split by kind, each ordered by position.
    pub fn spans_by_kind(&self) -> (Vec<EntitySpan>, Vec<EntitySpan>) {
        split_by_kind(self.spans())
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |message: String| Error::InvalidSample {
            id: self.id.clone(),
            message,
        };
        if self.id.is_empty() {
            return Err(invalid("empty id".into()));
        }
        if self.tags.len() != self.tokens.len() {
            return Err(Error::LengthMismatch {
                id: self.id.clone(),
                tokens: self.tokens.len(),
                tags: self.tags.len(),
            });
        }
        for (i, token) in self.tokens.iter().enumerate() {
            if token.index != i {
                return Err(invalid(format!("token {i} carries index {}", token.index)));
            }
            if token.text.is_empty() || token.text.chars().any(char::is_whitespace) {
                return Err(invalid(format!("token {i} is empty or contains whitespace")));
            }
        }
        let (xs, ys) = self.spans_by_kind();
        let mut seen = HashSet::new();
        for &(xo, yo) in &self.mapping {
            if xo >= xs.len() {
                return Err(Error::DanglingOrdinal {
                    id: self.id.clone(),
                    kind: "x",
                    ordinal: xo,
                    count: xs.len(),
                });
            }
            if yo >= ys.len() {
                return Err(Error::DanglingOrdinal {
                    id: self.id.clone(),
                    kind: "y",
                    ordinal: yo,
                    count: ys.len(),
                });
            }
            if !seen.insert((xo, yo)) {
                return Err(invalid(format!("duplicate mapping pair ({xo}, {yo})")));
            }
        }
        if !self.chart_types.contains(&ChartType::Bar) {
            return Err(invalid("chart types must include bar".into()));
        }
        Ok(())
    }

    pub fn to_record(&self) -> SampleRecord {
        SampleRecord {
            id: self.id.clone(),
            tokens: self.tokens.iter().map(|t| t.text.clone()).collect(),
            tags: self.tags.iter().map(|t| t.as_str().to_string()).collect(),
            mapping: self.mapping.iter().map(|&(x, y)| [x, y]).collect(),
            chart_types: self
                .chart_types
                .iter()
                .map(|c| c.as_str().to_string())
                .collect(),
        }
    }
}

/// On-disk shape of one dataset line.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub tokens: Vec<String>,
    pub tags: Vec<String>,
    pub mapping: Vec<[usize; 2]>,
    pub chart_types: Vec<String>,
}

impl SampleRecord {
    fn into_sample(self, line: usize) -> Result<Sample> {
        let malformed = |message: String| Error::MalformedRecord { line, message };
        let tags = self
            .tags
            .iter()
            .map(|t| EntityTag::parse(t).ok_or_else(|| malformed(format!("unknown tag {t:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let chart_types = self
            .chart_types
            .iter()
            .map(|c| {
                ChartType::parse(c).ok_or_else(|| malformed(format!("unknown chart type {c:?}")))
            })
            .collect::<Result<BTreeSet<_>>>()?;
        Ok(Sample {
            id: self.id,
            tokens: self
                .tokens
                .into_iter()
                .enumerate()
                .map(|(index, text)| Token { text, index })
                .collect(),
            tags,
            mapping: self.mapping.into_iter().map(|[x, y]| (x, y)).collect(),
            chart_types,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Whitespace tokenization with edge punctuation detached into its own tokens.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out: Vec<String> = Vec::new();
    for chunk in text.split_whitespace() {
        let mut rest = chunk;
        while let Some(c) = rest.chars().next().filter(|c| DETACHED_PUNCTUATION.contains(c)) {
            out.push(c.to_string());
            rest = &rest[c.len_utf8()..];
        }
        let mut trailing = Vec::new();
        while let Some(c) = rest
            .chars()
            .next_back()
            .filter(|c| DETACHED_PUNCTUATION.contains(c))
        {
            trailing.push(c.to_string());
            rest = &rest[..rest.len() - c.len_utf8()];
        }
        if !rest.is_empty() {
            out.push(rest.to_string());
        }
        out.extend(trailing.into_iter().rev());
    }
    out.into_iter()
        .enumerate()
        .map(|(index, text)| Token { text, index })
        .collect()
}

pub fn tokens_from_texts<S: AsRef<str>>(texts: &[S]) -> Vec<Token> {
    texts
        .iter()
        .enumerate()
        .map(|(index, t)| Token {
            text: t.as_ref().to_string(),
            index,
        })
        .collect()
}

/// Maximal runs of identical non-`None` tags become spans, ordered by start.
pub fn spans_from_tags(tokens: &[Token], tags: &[EntityTag]) -> Vec<EntitySpan> {
    let n = tokens.len().min(tags.len());
    let mut spans = Vec::new();
    let mut i = 0;
    while i < n {
        let Some(kind) = tags[i].kind() else {
            i += 1;
            continue;
        };
        let start = i;
        while i + 1 < n && tags[i + 1] == tags[start] {
            i += 1;
        }
        let surface = tokens[start..=i]
            .iter()
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        spans.push(EntitySpan {
            kind,
            start,
            end: i,
            surface,
        });
        i += 1;
    }
    spans
}

/// Inverse of [`spans_from_tags`].
pub fn tags_from_spans(len: usize, spans: &[EntitySpan]) -> Vec<EntityTag> {
    let mut tags = vec![EntityTag::None; len];
    for span in spans {
        for tag in &mut tags[span.start..=span.end.min(len.saturating_sub(1))] {
            *tag = span.kind.tag();
        }
    }
    tags
}

pub fn split_by_kind(spans: Vec<EntitySpan>) -> (Vec<EntitySpan>, Vec<EntitySpan>) {
    spans.into_iter().partition(|s| s.kind == EntityKind::X)
}

/// Parse a line-delimited dataset. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn parse_dataset(bytes: &[u8]) -> Result<Vec<Sample>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::MalformedRecord {
        line: 1 + bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count(),
        message: format!("invalid UTF-8: {e}"),
    })?;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord =
            serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
                line: line_no,
                message: e.to_string(),
            })?;
        let sample = record.into_sample(line_no)?;
        sample.validate().map_err(|e| match e {
            Error::InvalidSample { message, id } => Error::MalformedRecord {
                line: line_no,
                message: format!("sample {id}: {message}"),
            },
            other => other,
        })?;
        samples.push(sample);
    }
    Ok(samples)
}

pub fn write_dataset(samples: &[Sample]) -> String {
    let mut out = String::new();
    for sample in samples {
        out.push_str(&serde_json::to_string(&sample.to_record()).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Deterministic shuffle under `seed`, then a contiguous train/validation/test
/// partition. Partition sizes are rounded; the test split takes the remainder.
pub fn split_dataset(samples: &[Sample], ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    if samples.len() < 3 {
        return Err(Error::InvalidSplit(format!(
            "need at least 3 samples, got {}",
            samples.len()
        )));
    }
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::InvalidSplit(format!("bad ratios {ratios:?}")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidSplit(format!("ratios sum to {sum}, not 1")));
    }
    let n = samples.len();
    let n_train = ((ratios[0] * n as f64).round() as usize).min(n);
    let n_valid = ((ratios[1] * n as f64).round() as usize).min(n - n_train);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    Ok(DatasetSplit {
        train: pick(&order[..n_train]),
        validation: pick(&order[n_train..n_train + n_valid]),
        test: pick(&order[n_train + n_valid..]),
    })
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

const NAMES: &[&str] = &[
    "Tzuyu", "Jamal", "Maria", "Rahim", "Olivia", "Kenji", "Fatima", "Lucas", "Amara", "Nadia",
    "Samir", "Elena", "Tariq", "Priya", "Diego", "Hana", "Omar", "Sofia", "Arif", "Mina",
];

const SURVEY_TOPICS: &[(&str, &[&str])] = &[
    (
        "video games",
        &[
            "World of Warcraft",
            "Black Ops",
            "Overwatch",
            "Modern Warfare",
            "PUBG",
            "Sims",
            "Minecraft",
            "Fortnite",
            "Tetris",
            "Dota",
            "Halo",
            "Zelda",
        ],
    ),
    (
        "fruits",
        &[
            "mango", "apple", "banana", "orange", "grapes", "guava", "pineapple", "lychee",
            "papaya", "watermelon", "jackfruit", "cherry",
        ],
    ),
    (
        "sports",
        &[
            "football",
            "cricket",
            "tennis",
            "basketball",
            "table tennis",
            "badminton",
            "hockey",
            "volleyball",
            "swimming",
            "chess",
            "golf",
            "rugby",
        ],
    ),
    (
        "movie genres",
        &[
            "action",
            "comedy",
            "drama",
            "horror",
            "science fiction",
            "romance",
            "thriller",
            "animation",
            "documentary",
            "fantasy",
            "mystery",
            "musical",
        ],
    ),
    (
        "colors",
        &[
            "red", "blue", "green", "yellow", "purple", "black", "white", "orange", "pink",
            "brown", "grey", "sky blue",
        ],
    ),
];

const COUNTRIES: &[&str] = &[
    "Bangladesh",
    "India",
    "China",
    "Japan",
    "Brazil",
    "Canada",
    "Germany",
    "France",
    "Egypt",
    "Kenya",
    "Mexico",
    "Norway",
    "South Korea",
    "New Zealand",
];

const GOODS: &[&str] = &["rice", "tea", "jute", "cotton", "steel", "fish", "coffee", "wheat"];

const CITIES: &[&str] = &[
    "Dhaka", "Chittagong", "Sylhet", "Khulna", "Rajshahi", "Tokyo", "Lagos", "Lima", "Oslo",
    "Cairo", "Delhi", "Hanoi",
];

const MONTHS: &[&str] = &[
    "January",
    "February",
    "March",
    "April",
    "May",
    "June",
    "July",
    "August",
    "September",
    "October",
    "November",
    "December",
];

const COST_ITEMS: &[&str] = &[
    "acquisition",
    "site improvement",
    "labour",
    "materials",
    "finance",
    "marketing",
    "transport",
    "insurance",
    "design",
    "maintenance",
    "utilities",
    "legal fees",
];

const BRANDS: &[&str] = &[
    "Samsung", "Apple", "Xiaomi", "Oppo", "Vivo", "Nokia", "Huawei", "Realme", "Motorola",
    "Walton",
];

const PROJECTS: &[&str] = &["bridge", "school", "hospital", "factory", "stadium", "library"];

/// Accumulates tagged tokens and gold mapping pairs for one synthetic text.
struct SampleBuilder {
    tokens: Vec<String>,
    tags: Vec<EntityTag>,
    x_count: usize,
    y_count: usize,
    mapping: Vec<(usize, usize)>,
}

impl SampleBuilder {
    fn new() -> Self {
        Self {
            tokens: Vec::new(),
            tags: Vec::new(),
            x_count: 0,
            y_count: 0,
            mapping: Vec::new(),
        }
    }

    fn words(&mut self, text: &str) -> &mut Self {
        for token in tokenize(text) {
            self.tokens.push(token.text);
            self.tags.push(EntityTag::None);
        }
        self
    }

    fn entity(&mut self, text: &str, kind: EntityKind) -> usize {
        debug_assert!(self.tags.last() != Some(&kind.tag()), "adjacent entities would merge");
        for token in tokenize(text) {
            self.tokens.push(token.text);
            self.tags.push(kind.tag());
        }
        match kind {
            EntityKind::X => {
                self.x_count += 1;
                self.x_count - 1
            }
            EntityKind::Y => {
                self.y_count += 1;
                self.y_count - 1
            }
        }
    }

    fn x(&mut self, text: &str) -> usize {
        self.entity(text, EntityKind::X)
    }

    fn y(&mut self, text: &str) -> usize {
        self.entity(text, EntityKind::Y)
    }

    fn map(&mut self, x: usize, y: usize) {
        self.mapping.push((x, y));
    }

    /// Separator between list items: "," for middle items, "and" before the last.
    fn separator(&mut self, i: usize, count: usize) {
        if i + 1 == count {
            self.words("and");
        } else if i > 0 {
            self.words(",");
        }
    }

    fn finish(self, id: String, types: &[ChartType]) -> Sample {
        let mut mapping = self.mapping;
        mapping.sort_unstable();
        Sample {
            id,
            tokens: tokens_from_texts(&self.tokens),
            tags: self.tags,
            mapping,
            chart_types: types.iter().copied().collect(),
        }
    }
}

fn choose<'a, R: Rng>(rng: &mut R, items: &[&'a str]) -> &'a str {
    items.choose(rng).copied().expect("non-empty list")
}

fn ordinal(n: u32) -> String {
    let suffix = match (n % 10, n % 100) {
        (_, 11..=13) => "th",
        (1, _) => "st",
        (2, _) => "nd",
        (3, _) => "rd",
        _ => "th",
    };
    format!("{n}{suffix}")
}

/// `count` positive integers (each ≥ 2) summing to 100.
fn percentages<R: Rng>(rng: &mut R, count: usize) -> Vec<u32> {
    let mut cuts: BTreeSet<u32> = BTreeSet::new();
    while cuts.len() < count - 1 {
        let c = rng.gen_range(1..50u32) * 2;
        if c > 0 && c < 100 {
            cuts.insert(c);
        }
    }
    let mut bounds = vec![0];
    bounds.extend(cuts);
    bounds.push(100);
    bounds.windows(2).map(|w| w[1] - w[0]).collect()
}

fn survey<R: Rng>(rng: &mut R, b: &mut SampleBuilder) {
    let name = choose(rng, NAMES);
    let (topic, items) = SURVEY_TOPICS[rng.gen_range(0..SURVEY_TOPICS.len())];
    let count = rng.gen_range(3..=8);
    let mut chosen: Vec<&str> = items.choose_multiple(rng, count).copied().collect();
    chosen.shuffle(rng);
    let people = rng.gen_range(10..40) * 10;
    b.words(&format!(
        "{name} is curious about {topic} . {name} surveyed {people} individuals to judge the popularity of {topic} ."
    ));
    b.words(choose(rng, &["After the survey , the results showed that", "The survey found that", "It turned out that"]));
    let mut i = 0;
    while i < count {
        b.separator(i, count);
        // Occasionally two items share one value, which breaks the 1-to-1 pairing.
        if count >= 4 && i + 2 < count && rng.gen_bool(0.2) {
            let v = rng.gen_range(5..100);
            let x1 = b.x(chosen[i]);
            b.words("and");
            let x2 = b.x(chosen[i + 1]);
            b.words("each got");
            let y = b.y(&v.to_string());
            b.words("votes");
            b.map(x1, y);
            b.map(x2, y);
            i += 2;
            continue;
        }
        let v = rng.gen_range(5..100);
        let y = b.y(&v.to_string());
        b.words(if i == 0 { "people voted for" } else { choose(rng, &["voted for", "for"]) });
        let x = b.x(chosen[i]);
        b.map(x, y);
        i += 1;
    }
    b.words(".");
}

fn exports<R: Rng>(rng: &mut R, b: &mut SampleBuilder) {
    let good = choose(rng, GOODS);
    let year = rng.gen_range(1995..2023);
    let count = rng.gen_range(3..=8);
    let chosen: Vec<&str> = COUNTRIES.choose_multiple(rng, count).copied().collect();
    b.words(&format!(
        "The trade report of {year} lists the export of {good} by country . According to the report ,"
    ));
    for (i, country) in chosen.iter().enumerate() {
        b.separator(i, count);
        let x = b.x(country);
        b.words(if i == 0 { "exported" } else { choose(rng, &["exported", "shipped", ""]) });
        let y = b.y(&rng.gen_range(10..900).to_string());
        b.words("tons");
        b.map(x, y);
    }
    b.words(&format!(". The remaining {} countries exported very little .", rng.gen_range(2..9)));
}

fn temperatures<R: Rng>(rng: &mut R, b: &mut SampleBuilder) {
    let name = choose(rng, NAMES);
    let years = rng.gen_range(2..20);
    let count = rng.gen_range(3..=10);
    let mut days: Vec<u32> = (1..=30).collect::<Vec<_>>().choose_multiple(rng, count).copied().collect();
    days.sort_unstable();
    b.words(&format!(
        "Mr . {name} worked in the Meteorological Department for {years} years . On certain days of the month , the weather varied strongly . The information is as follows :"
    ));
    for (i, day) in days.iter().enumerate() {
        b.separator(i, count);
        if i == 0 {
            b.words("on the");
        }
        let x = b.x(&format!("{} day", ordinal(*day)));
        b.words(if i == 0 { "of the month the temperature is" } else { "is" });
        let y = b.y(&rng.gen_range(5..46).to_string());
        b.words("degrees Celsius");
        b.map(x, y);
    }
    b.words(". He finds a weird pattern in these dates and reports it to his senior officer .");
}

fn population<R: Rng>(rng: &mut R, b: &mut SampleBuilder) {
    let city = choose(rng, CITIES);
    let count = rng.gen_range(3..=8);
    let start = rng.gen_range(1950..2010);
    let step = *[1, 2, 5, 10].choose(rng).unwrap();
    b.words(&format!("The population of {city} changed over the years ."));
    let mut value = rng.gen_range(100..900);
    for i in 0..count {
        b.separator(i, count);
        b.words("in");
        let x = b.x(&(start + i as i32 * step).to_string());
        b.words(if i == 0 { "it was" } else { choose(rng, &["it was", "it reached", "it became"]) });
        let y = b.y(&value.to_string());
        b.words("thousand");
        b.map(x, y);
        value = (value + rng.gen_range(-80..150)).max(50);
    }
    b.words(&format!(". The census office of {city} published these numbers ."));
}

fn monthly_revenue<R: Rng>(rng: &mut R, b: &mut SampleBuilder) {
    let name = choose(rng, NAMES);
    let count = rng.gen_range(3..=8);
    let first = rng.gen_range(0..=(12 - count));
    b.words(&format!(
        "{name} runs a small shop and tracked its revenue every month for {} years . The revenue was"
        , rng.gen_range(2..9)
    ));
    for i in 0..count {
        b.separator(i, count);
        let y = b.y(&rng.gen_range(10..99).to_string());
        b.words("thousand taka in");
        let x = b.x(MONTHS[first + i]);
        b.map(x, y);
    }
    b.words(".");
}

fn cost_breakdown<R: Rng>(rng: &mut R, b: &mut SampleBuilder) {
    let project = choose(rng, PROJECTS);
    let count = rng.gen_range(3..=8);
    let chosen: Vec<&str> = COST_ITEMS.choose_multiple(rng, count).copied().collect();
    let shares = percentages(rng, count);
    b.words(&format!(
        "The total cost of building the {project} was {} million dollars . Of this cost ,",
        rng.gen_range(2..90)
    ));
    for (i, (item, share)) in chosen.iter().zip(&shares).enumerate() {
        b.separator(i, count);
        let y = b.y(&share.to_string());
        b.words(if i == 0 { "% went to" } else { "% to" });
        let x = b.x(item);
        b.map(x, y);
    }
    b.words(".");
}

fn market_share<R: Rng>(rng: &mut R, b: &mut SampleBuilder) {
    let count = rng.gen_range(3..=8);
    let chosen: Vec<&str> = BRANDS.choose_multiple(rng, count).copied().collect();
    let shares = percentages(rng, count);
    let year = rng.gen_range(2010..2023);
    b.words(&format!("In {year} the smartphone market share was divided as follows :"));
    for (i, (brand, share)) in chosen.iter().zip(&shares).enumerate() {
        b.separator(i, count);
        let x = b.x(brand);
        b.words(if i == 0 { "held" } else { choose(rng, &["held", "had", ""]) });
        let y = b.y(&share.to_string());
        b.words("% of the market");
        b.map(x, y);
    }
    b.words(". Together they cover the whole market .");
}

/// Templated analytical texts with gold tags, mappings and chart types.
///
/// Templates: surveys and export tables (bar), temperatures over days, yearly
/// populations and monthly revenue (bar + line), cost and market-share
/// breakdowns in percent (bar + pie).
pub fn generate_synthetic_corpus(n: usize, seed: u64) -> Vec<Sample> {
    type Template = fn(&mut ChaCha8Rng, &mut SampleBuilder);
    let templates: [(Template, &[ChartType]); 7] = [
        (survey, &[ChartType::Bar]),
        (exports, &[ChartType::Bar]),
        (temperatures, &[ChartType::Bar, ChartType::Line]),
        (population, &[ChartType::Bar, ChartType::Line]),
        (monthly_revenue, &[ChartType::Bar, ChartType::Line]),
        (cost_breakdown, &[ChartType::Bar, ChartType::Pie]),
        (market_share, &[ChartType::Bar, ChartType::Pie]),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let (template, types) = templates[rng.gen_range(0..templates.len())];
            let mut builder = SampleBuilder::new();
            template(&mut rng, &mut builder);
            builder.finish(format!("synth-{seed}-{i}"), types)
        })
        .collect()
}
