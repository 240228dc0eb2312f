//! Train/validation/test split generation.
//!
//! Every movie contributes clips to all three splits in 80/10/10 proportion.
//! Within a movie the clips are stratified by their number of mentions (two or
//! more, exactly one, none) and each stratum is split with the same
//! proportions. Per-stratum quotas come from a controlled rounding of the
//! stratum × split table, so both the stratum rows and the movie totals stay
//! within one clip of the exact proportions. Among the admissible roundings, the one
//! whose assignment leaves the fewest characters without a clip in some split
//! is used, covering the training split first. Where assignment leaves a
//! character with three or more clips out of a split, a bounded exact search
//! looks for a covering choice of validation and test clips.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AnnotationStore;

/// Split proportions in tenths: train, validation, test.
const WEIGHTS: [usize; 3] = [8, 1, 1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Val, SplitName::Test];

    fn index(self) -> usize {
        self as usize
    }
}

impl std::str::FromStr for SplitName {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" | "validation" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(crate::Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: BTreeSet<String>,
    pub val: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl DatasetSplit {
    pub fn get(&self, name: SplitName) -> &BTreeSet<String> {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }

    fn get_mut(&mut self, name: SplitName) -> &mut BTreeSet<String> {
        match name {
            SplitName::Train => &mut self.train,
            SplitName::Val => &mut self.val,
            SplitName::Test => &mut self.test,
        }
    }

    pub fn split_of(&self, clip_id: &str) -> Option<SplitName> {
        SplitName::ALL.into_iter().find(|s| self.get(*s).contains(clip_id))
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every clip of the store in `train`, nothing held out.
    pub fn all_train(store: &AnnotationStore) -> Self {
        Self {
            train: store.clips().map(|(_, c, _)| c.to_owned()).collect(),
            ..Default::default()
        }
    }

    pub fn from_json(text: &str) -> crate::Result<Self> {
        serde_json::from_str(text).map_err(crate::Error::from_json)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("split serializes");
        s.push('\n');
        s
    }
}

/// Characters with at least this many clips can appear in all three splits.
const COVERABLE: usize = 3;

/// Node budget of the exact coverage search per movie.
const SEARCH_BUDGET: usize = 200_000;

/// Generates the three splits; deterministic for a given seed.
pub fn generate_splits(store: &AnnotationStore, seed: u64) -> DatasetSplit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = DatasetSplit::default();
    for movie in store.movies().values() {
        // Strata ordered multi-mention, single-mention, no mention.
        let mut strata: [Vec<&str>; 3] = Default::default();
        for (clip_id, clip) in &movie.clips {
            let stratum = match clip.mention_count() {
                0 => 2,
                1 => 1,
                _ => 0,
            };
            strata[stratum].push(clip_id.as_str());
        }
        for s in strata.iter_mut() {
            s.shuffle(&mut rng);
        }
        let chars_of: BTreeMap<&str, Vec<&str>> = movie
            .clips
            .iter()
            .map(|(id, clip)| (id.as_str(), clip.characters()))
            .collect();
        let movie_split = MovieSplitter::new(&strata, &chars_of).run();
        for (clip, target) in movie_split {
            split.get_mut(target).insert(clip.to_owned());
        }
    }
    split
}

type Quota = [[usize; 3]; 3];

struct Progress<'a> {
    quota: Quota,
    assigned: HashSet<&'a str>,
    covered: [HashSet<&'a str>; 3],
    out: Vec<(&'a str, SplitName)>,
}

impl<'a> Progress<'a> {
    fn take(&mut self, clip: &'a str, target: SplitName, movie: &MovieSplitter<'_, 'a>) {
        self.quota[movie.stratum_of[clip]][target.index()] -= 1;
        self.assigned.insert(clip);
        self.covered[target.index()].extend(movie.chars_of[clip].iter().copied());
        self.out.push((clip, target));
    }

    /// Unassigned clips of strata with quota left in `target`.
    fn available(&self, target: SplitName, movie: &MovieSplitter<'_, 'a>) -> Vec<&'a str> {
        movie
            .strata
            .iter()
            .enumerate()
            .filter(|(k, _)| self.quota[*k][target.index()] > 0)
            .flat_map(|(_, clips)| clips.iter().copied())
            .filter(|c| !self.assigned.contains(c))
            .collect()
    }
}

struct MovieSplitter<'m, 'a> {
    strata: &'m [Vec<&'a str>; 3],
    chars_of: &'m BTreeMap<&'a str, Vec<&'a str>>,
    stratum_of: BTreeMap<&'a str, usize>,
    clip_count: BTreeMap<&'a str, usize>,
    /// Characters ordered by clip count, then name.
    rarest: Vec<&'a str>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Misses {
    /// Characters with enough clips that lack one in some split.
    coverable: usize,
    total: usize,
}

impl<'m, 'a> MovieSplitter<'m, 'a> {
    fn new(strata: &'m [Vec<&'a str>; 3], chars_of: &'m BTreeMap<&'a str, Vec<&'a str>>) -> Self {
        let mut clip_count: BTreeMap<&str, usize> = BTreeMap::new();
        for names in chars_of.values() {
            for n in names {
                *clip_count.entry(n).or_default() += 1;
            }
        }
        let mut rarest: Vec<&str> = clip_count.keys().copied().collect();
        rarest.sort_by_key(|n| (clip_count[n], *n));
        let stratum_of = strata
            .iter()
            .enumerate()
            .flat_map(|(k, clips)| clips.iter().map(move |c| (*c, k)))
            .collect();
        Self {
            strata,
            chars_of,
            stratum_of,
            clip_count,
            rarest,
        }
    }

    /// The closest rounding whose assignment misses the fewest characters.
    /// When the greedy assignment leaves a coverable character out, an exact
    /// search for validation and test clips covering everyone is tried.
    fn run(&self) -> Vec<(&'a str, SplitName)> {
        let sizes = self.strata.each_ref().map(Vec::len);
        let tight = rounding_tables(sizes, false);
        let mut best: Option<(Misses, Vec<(&'a str, SplitName)>)> = None;
        for quota in &tight {
            let (misses, assignment) = self.assign(*quota, &[]);
            if best.as_ref().is_none_or(|(m, _)| misses < *m) {
                let done = misses.total == 0;
                best = Some((misses, assignment));
                if done {
                    break;
                }
            }
        }
        let (misses, assignment) = best.expect("at least one rounding table");
        if misses.coverable == 0 {
            return assignment;
        }
        // Quotas up to one clip away from exact, then exhaustive search.
        let loose: Vec<Quota> = rounding_tables(sizes, true)
            .into_iter()
            .filter(|t| !tight.contains(t))
            .collect();
        for quota in &loose {
            let (m, a) = self.assign(*quota, &[]);
            if m.coverable == 0 {
                return a;
            }
        }
        let mut budget = SEARCH_BUDGET;
        for quota in tight.iter().chain(&loose) {
            if let Some(seeds) = self.search_cover(*quota, &mut budget) {
                let (m, a) = self.assign(*quota, &seeds);
                if m.coverable == 0 {
                    return a;
                }
            }
            if budget == 0 {
                break;
            }
        }
        assignment
    }

    fn coverable(&self) -> impl Iterator<Item = &'a str> + '_ {
        self.rarest.iter().copied().filter(|n| self.clip_count[n] >= COVERABLE)
    }

    /// Assigns every clip under `quota`, starting from the `seeds`.
    ///
    /// Training coverage is secured first with the clips naming the fewest
    /// characters, so that clips naming many characters stay available for
    /// the small validation and test quotas, which are then filled by greedy
    /// set cover. Remaining clips fill the remaining quotas.
    fn assign(&self, quota: Quota, seeds: &[(&'a str, SplitName)]) -> (Misses, Vec<(&'a str, SplitName)>) {
        let mut st = Progress {
            quota,
            assigned: HashSet::new(),
            covered: Default::default(),
            out: Vec::new(),
        };
        for (clip, target) in seeds {
            st.take(clip, *target, self);
        }

        for name in &self.rarest {
            if st.covered[0].contains(name) {
                continue;
            }
            let pick = st
                .available(SplitName::Train, self)
                .into_iter()
                .filter(|c| self.chars_of[c].contains(name))
                .min_by_key(|c| self.chars_of[c].len());
            if let Some(clip) = pick {
                st.take(clip, SplitName::Train, self);
            }
        }

        for target in [SplitName::Val, SplitName::Test] {
            loop {
                let cov = &st.covered[target.index()];
                // Most newly covered characters, then the rarest one, then order.
                let pick = st
                    .available(target, self)
                    .into_iter()
                    .enumerate()
                    .filter_map(|(order, c)| {
                        let fresh: Vec<&str> = self.chars_of[c].iter().copied().filter(|n| !cov.contains(n)).collect();
                        let rarity = fresh.iter().map(|n| self.clip_count[n]).min()?;
                        Some(((fresh.len(), std::cmp::Reverse(rarity), std::cmp::Reverse(order)), c))
                    })
                    .max_by_key(|(key, _)| *key);
                let Some((_, clip)) = pick else { break };
                st.take(clip, target, self);
            }
        }

        for (k, clips) in self.strata.iter().enumerate() {
            for clip in clips {
                if st.assigned.contains(clip) {
                    continue;
                }
                let target = SplitName::ALL
                    .into_iter()
                    .find(|s| st.quota[k][s.index()] > 0)
                    .expect("quotas sum to the stratum size");
                st.take(clip, target, self);
            }
        }
        let covered = &st.covered;
        let mut misses = Misses { coverable: 0, total: 0 };
        for name in &self.rarest {
            let missing = covered.iter().filter(|c| !c.contains(name)).count();
            misses.total += missing;
            if self.clip_count[name] >= COVERABLE {
                misses.coverable += missing;
            }
        }
        (misses, st.out)
    }

    /// Depth-first search for test and validation clips covering every
    /// coverable character while leaving each of them a clip for training.
    fn search_cover(&self, quota: Quota, budget: &mut usize) -> Option<Vec<(&'a str, SplitName)>> {
        let mut chosen = Vec::new();
        let mut used = HashSet::new();
        self.dfs(quota, &mut chosen, &mut used, budget).then_some(chosen)
    }

    fn dfs(
        &self,
        mut quota: Quota,
        chosen: &mut Vec<(&'a str, SplitName)>,
        used: &mut HashSet<&'a str>,
        budget: &mut usize,
    ) -> bool {
        if *budget == 0 {
            return false;
        }
        *budget -= 1;
        // Every coverable character keeps an unused clip for training.
        if self.coverable().any(|n| {
            self.chars_of
                .iter()
                .all(|(c, names)| used.contains(c) || !names.contains(&n))
        }) {
            return false;
        }
        let covered = |target: SplitName, name: &str| {
            chosen
                .iter()
                .any(|(c, s)| *s == target && self.chars_of[c].contains(&name))
        };
        // Most constrained (split, character) first.
        let mut next: Option<(usize, SplitName, Vec<&'a str>)> = None;
        for target in [SplitName::Test, SplitName::Val] {
            for name in self.coverable() {
                if covered(target, name) {
                    continue;
                }
                let options: Vec<&'a str> = self
                    .strata
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| quota[*k][target.index()] > 0)
                    .flat_map(|(_, clips)| clips.iter().copied())
                    .filter(|c| !used.contains(c) && self.chars_of[c].contains(&name))
                    .collect();
                if next.as_ref().is_none_or(|(n, _, _)| options.len() < *n) {
                    next = Some((options.len(), target, options));
                }
            }
        }
        let Some((_, target, mut options)) = next else {
            return true;
        };
        options.sort_by_key(|c| std::cmp::Reverse(self.chars_of[c].len()));
        for clip in options {
            let k = self.stratum_of[clip];
            quota[k][target.index()] -= 1;
            used.insert(clip);
            chosen.push((clip, target));
            if self.dfs(quota, chosen, used, budget) {
                return true;
            }
            chosen.pop();
            used.remove(clip);
            quota[k][target.index()] += 1;
        }
        false
    }
}

/// The closest rounding of the stratum × split table; see [`rounding_tables`].
#[cfg(test)]
fn controlled_rounding(sizes: [usize; 3]) -> Quota {
    rounding_tables(sizes, false)[0]
}

/// Integer stratum × split tables whose rows sum to the stratum sizes, with
/// every cell and split total adjacent to its exact value (or, with `slack`,
/// within one clip of it). Ordered by squared deviation from the exact
/// table, then by the most training clips.
fn rounding_tables(sizes: [usize; 3], slack: bool) -> Vec<Quota> {
    let total: usize = sizes.iter().sum();
    let exact = |n: usize, s: usize| (n * WEIGHTS[s]) as f64 / 10.0;
    let bounds = |n: usize, s: usize| {
        let tenths = n * WEIGHTS[s];
        if slack {
            (tenths.saturating_sub(10).div_ceil(10), (tenths + 10) / 10)
        } else {
            (tenths / 10, tenths.div_ceil(10))
        }
    };

    let row_options: Vec<Vec<[usize; 3]>> = sizes
        .iter()
        .map(|&n| {
            let (lo, hi): (Vec<usize>, Vec<usize>) = (0..3).map(|s| bounds(n, s)).unzip();
            let mut opts = Vec::new();
            for a in lo[0]..=hi[0] {
                for b in lo[1]..=hi[1] {
                    if a + b <= n && (lo[2]..=hi[2]).contains(&(n - a - b)) {
                        opts.push([a, b, n - a - b]);
                    }
                }
            }
            opts
        })
        .collect();

    let mut tables = Vec::new();
    for a in &row_options[0] {
        for b in &row_options[1] {
            for c in &row_options[2] {
                let table = [*a, *b, *c];
                let cols: [usize; 3] = std::array::from_fn(|s| table.iter().map(|r| r[s]).sum());
                let cols_ok = (0..3).all(|s| {
                    let (lo, hi) = bounds(total, s);
                    cols[s] >= lo && cols[s] <= hi
                });
                if !cols_ok {
                    continue;
                }
                let mut score = 0.0;
                for (k, row) in table.iter().enumerate() {
                    for (s, &v) in row.iter().enumerate() {
                        score += (v as f64 - exact(sizes[k], s)).powi(2);
                    }
                }
                for (s, &v) in cols.iter().enumerate() {
                    score += (v as f64 - exact(total, s)).powi(2);
                }
                tables.push((table, score, cols));
            }
        }
    }
    tables.sort_by(|x, y| {
        x.1.total_cmp(&y.1)
            .then((y.2[0], y.2[1]).cmp(&(x.2[0], x.2[1])))
            .then(x.0.cmp(&y.0))
    });
    assert!(
        !tables.is_empty(),
        "a controlled rounding of a two-way table always exists"
    );
    tables.into_iter().map(|t| t.0).collect()
}
